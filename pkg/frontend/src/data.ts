/**
 * Loaders for the two file formats this package consumes:
 *
 *  - scenario JSON (single object): node roster, time grid, per-step
 *    visibility, delivery requirements, and the per-step link-degree cap;
 *  - evaluation corpus NDJSON: one labeled sample per line with the plan's
 *    contact triples, precomputed node features, and the exact normalized
 *    objective as the label.
 *
 * The loaders validate aggressively and report `path:line` in every error so
 * a bad corpus line is findable.
 */

import { readFileSync } from "node:fs";

import { zeros } from "./tensor.js";
import type { Matrix } from "./tensor.js";
import { adjacencySequence, checkContacts } from "./graph.js";
import type { ContactTriple } from "./graph.js";
import type { GraphSequence, Pair } from "./model.js";

export const SCENARIO_FORMAT_VERSION = 1;
export const FEATURE_DIM = 4;

export interface ScenarioInfo {
  nSatellites: number;
  nGroundStations: number;
  nNodes: number;
  stepCount: number;
  stepSeconds: number;
  degreeCap: number;
  /** (source satellite, destination node) readout pairs, in roster order. */
  pairs: Pair[];
  /** Per node: fraction of steps with at least one visible neighbor. */
  visibleFraction: Float64Array;
}

function fail(context: string, message: string): never {
  throw new Error(`${context}: ${message}`);
}

function asCount(value: unknown, context: string, what: string): number {
  if (typeof value !== "number" || !Number.isInteger(value) || value < 0) {
    fail(context, `${what} must be a non-negative integer`);
  }
  return value;
}

export function loadScenario(path: string): ScenarioInfo {
  const raw = readFileSync(path, "utf8");
  let payload: unknown;
  try {
    payload = JSON.parse(raw);
  } catch (err) {
    fail(path, `not valid JSON (${(err as Error).message})`);
  }
  if (typeof payload !== "object" || payload === null || Array.isArray(payload)) {
    fail(path, "top level must be an object");
  }
  const obj = payload as Record<string, unknown>;
  if (obj.version !== SCENARIO_FORMAT_VERSION) {
    fail(path, `unsupported scenario version ${JSON.stringify(obj.version)}`);
  }
  for (const key of ["nodes", "grid", "visibility", "requirements", "per_step_degree_cap"]) {
    if (!(key in obj)) fail(path, `missing field "${key}"`);
  }

  const nodes = obj.nodes as Record<string, unknown>;
  const nSatellites = asCount(nodes.satellites, path, "nodes.satellites");
  const nGroundStations = asCount(nodes.ground_stations, path, "nodes.ground_stations");
  const nNodes = nSatellites + nGroundStations;
  if (nSatellites < 1) fail(path, "scenario needs at least one satellite");

  const grid = obj.grid as Record<string, unknown>;
  const stepCount = asCount(grid.step_count, path, "grid.step_count");
  const stepSeconds = grid.step_seconds;
  if (typeof stepSeconds !== "number" || !(stepSeconds > 0)) {
    fail(path, "grid.step_seconds must be a positive number");
  }
  if (stepCount < 1) fail(path, "grid.step_count must be at least 1");

  const degreeCap = asCount(obj.per_step_degree_cap, path, "per_step_degree_cap");
  if (degreeCap < 1) fail(path, "per_step_degree_cap must be at least 1");

  const visibility = obj.visibility;
  if (!Array.isArray(visibility) || visibility.length !== stepCount) {
    fail(path, `visibility must be a list with one entry per step (${stepCount})`);
  }
  const visibleSteps = new Float64Array(nNodes);
  for (let t = 0; t < stepCount; t++) {
    const stepPairs = visibility[t];
    if (!Array.isArray(stepPairs)) fail(path, `visibility[${t}] must be a list of pairs`);
    const seen = new Uint8Array(nNodes);
    for (const pair of stepPairs) {
      if (!Array.isArray(pair) || pair.length !== 2) {
        fail(path, `visibility[${t}] entries must be [i, j] pairs`);
      }
      const i = asCount(pair[0], path, `visibility[${t}] node`);
      const j = asCount(pair[1], path, `visibility[${t}] node`);
      if (i >= nNodes || j >= nNodes) fail(path, `visibility[${t}] references node out of range`);
      seen[i] = 1;
      seen[j] = 1;
    }
    for (let v = 0; v < nNodes; v++) visibleSteps[v] += seen[v];
  }
  const visibleFraction = new Float64Array(nNodes);
  for (let v = 0; v < nNodes; v++) visibleFraction[v] = visibleSteps[v] / stepCount;

  const requirements = obj.requirements;
  if (!Array.isArray(requirements) || requirements.length !== nSatellites) {
    fail(path, `requirements must list targets for each of the ${nSatellites} satellites`);
  }
  const pairs: Pair[] = [];
  for (let sat = 0; sat < nSatellites; sat++) {
    const targets = requirements[sat];
    if (!Array.isArray(targets)) fail(path, `requirements[${sat}] must be a list`);
    for (const target of targets) {
      const d = asCount(target, path, `requirements[${sat}] target`);
      if (d >= nNodes) fail(path, `requirements[${sat}] target ${d} out of range`);
      pairs.push([sat, d]);
    }
  }
  if (pairs.length === 0) fail(path, "scenario has no requirement pairs to read out");

  return {
    nSatellites,
    nGroundStations,
    nNodes,
    stepCount,
    stepSeconds,
    degreeCap,
    pairs,
    visibleFraction,
  };
}

/**
 * Node features for an arbitrary plan over a known scenario, matching the
 * corpus convention exactly: [is_satellite, is_ground_station,
 * mean per-step link degree / cap, visible-step fraction]. Only the degree
 * column depends on the plan, so a server holding the scenario-constant
 * columns can rebuild the full matrix from contact triples alone.
 */
export function featuresFromContacts(info: ScenarioInfo, contacts: readonly ContactTriple[]): Matrix {
  const X = zeros(info.nNodes, FEATURE_DIM);
  const degreeSum = new Float64Array(info.nNodes);
  for (const [, i, j] of contacts) {
    degreeSum[i] += 1;
    degreeSum[j] += 1;
  }
  const denominator = info.stepCount * info.degreeCap;
  for (let v = 0; v < info.nNodes; v++) {
    X.data[v * FEATURE_DIM + 0] = v < info.nSatellites ? 1 : 0;
    X.data[v * FEATURE_DIM + 1] = v < info.nSatellites ? 0 : 1;
    X.data[v * FEATURE_DIM + 2] = degreeSum[v] / denominator;
    X.data[v * FEATURE_DIM + 3] = info.visibleFraction[v];
  }
  return X;
}

// ---------------------------------------------------------------------------
// Evaluation corpus
// ---------------------------------------------------------------------------

export interface CorpusRecord {
  contacts: ContactTriple[];
  features: Matrix;
  label: number;
  scenarioRef: string;
}

export function loadCorpus(path: string, nNodes: number, nSteps: number): CorpusRecord[] {
  const text = readFileSync(path, "utf8");
  const records: CorpusRecord[] = [];
  const lines = text.split("\n");
  for (let idx = 0; idx < lines.length; idx++) {
    const line = lines[idx].trim();
    if (line === "") continue;
    const context = `${path}:${idx + 1}`;
    let payload: unknown;
    try {
      payload = JSON.parse(line);
    } catch (err) {
      fail(context, `not valid JSON (${(err as Error).message})`);
    }
    if (typeof payload !== "object" || payload === null || Array.isArray(payload)) {
      fail(context, "record must be an object");
    }
    const obj = payload as Record<string, unknown>;
    for (const key of ["contacts", "node_features", "label", "scenario_ref"]) {
      if (!(key in obj)) fail(context, `missing field "${key}"`);
    }
    if (typeof obj.label !== "number" || !Number.isFinite(obj.label)) {
      fail(context, "label must be a finite number");
    }
    if (typeof obj.scenario_ref !== "string") fail(context, "scenario_ref must be a string");

    const rawContacts = obj.contacts;
    if (!Array.isArray(rawContacts)) fail(context, "contacts must be a list");
    const contacts: ContactTriple[] = [];
    for (const entry of rawContacts) {
      if (!Array.isArray(entry) || entry.length !== 3) {
        fail(context, "contacts entries must be [step, i, j] triples");
      }
      contacts.push([entry[0], entry[1], entry[2]]);
    }
    try {
      checkContacts(contacts, nNodes, nSteps);
    } catch (err) {
      fail(context, (err as Error).message);
    }

    const rawFeatures = obj.node_features;
    if (!Array.isArray(rawFeatures) || rawFeatures.length !== nNodes) {
      fail(context, `node_features must have one row per node (${nNodes})`);
    }
    const features = zeros(nNodes, FEATURE_DIM);
    for (let v = 0; v < nNodes; v++) {
      const row = rawFeatures[v];
      if (!Array.isArray(row) || row.length !== FEATURE_DIM) {
        fail(context, `node_features rows must have ${FEATURE_DIM} entries`);
      }
      for (let c = 0; c < FEATURE_DIM; c++) {
        const value = row[c];
        if (typeof value !== "number" || !Number.isFinite(value)) {
          fail(context, "node_features entries must be finite numbers");
        }
        features.data[v * FEATURE_DIM + c] = value;
      }
    }

    records.push({ contacts, features, label: obj.label, scenarioRef: obj.scenario_ref });
  }
  if (records.length === 0) fail(path, "corpus holds no records");
  return records;
}

/** Build the model input for one record, with the adjacency sequence prebuilt. */
export function toSequence(record: CorpusRecord, nNodes: number, nSteps: number): GraphSequence {
  return {
    nNodes,
    nSteps,
    adj: adjacencySequence(record.contacts, nNodes, nSteps),
    features: record.features,
  };
}
