/**
 * Checkpoint directory layout:
 *
 *   config.json   model hyperparameters plus everything the server needs to
 *                 rebuild inputs from contact triples alone: node roster
 *                 sizes, time grid, degree cap, readout pairs, and the
 *                 scenario-constant feature columns.
 *   weights.json  every trainable array as little-endian float64 bytes in
 *                 base64, keyed by parameter name.
 *
 * Both files are deterministic for given contents (no timestamps), so
 * retraining with the same seed reproduces the checkpoint byte for byte.
 */

import { mkdirSync, readFileSync, writeFileSync } from "node:fs";
import { join } from "node:path";

import { zeros } from "./tensor.js";
import { CELL_PARAMS } from "./model.js";
import type { ModelConfig, Pair, Variant, Weights } from "./model.js";
import type { ScenarioInfo } from "./data.js";
import { FEATURE_DIM } from "./data.js";

export const CHECKPOINT_FORMAT_VERSION = 1;

export interface Checkpoint {
  config: ModelConfig;
  scenario: ScenarioInfo;
  scenarioRef: string;
  weights: Weights;
}

function encode(array: Float64Array): string {
  return Buffer.from(array.buffer, array.byteOffset, array.byteLength).toString("base64");
}

function decode(b64: string, expectedLength: number, name: string): Float64Array {
  const bytes = Buffer.from(b64, "base64");
  if (bytes.length !== expectedLength * 8) {
    throw new Error(
      `checkpoint weight "${name}" holds ${bytes.length} bytes, expected ${expectedLength * 8}`,
    );
  }
  const out = new Float64Array(expectedLength);
  new Uint8Array(out.buffer).set(bytes);
  return out;
}

export function saveCheckpoint(
  dir: string,
  config: ModelConfig,
  scenario: ScenarioInfo,
  scenarioRef: string,
  weights: Weights,
): void {
  mkdirSync(dir, { recursive: true });
  const configPayload = {
    version: CHECKPOINT_FORMAT_VERSION,
    model: {
      gcn_layers: config.gcnLayers,
      hidden: config.hidden,
      fc_hidden: config.fcHidden,
      feature_dim: config.featureDim,
      variant: config.variant,
      rrelu_low: config.rreluLow,
      rrelu_high: config.rreluHigh,
      learning_rate: config.learningRate,
    },
    scenario: {
      ref: scenarioRef,
      satellites: scenario.nSatellites,
      ground_stations: scenario.nGroundStations,
      step_count: scenario.stepCount,
      step_seconds: scenario.stepSeconds,
      degree_cap: scenario.degreeCap,
      pairs: scenario.pairs.map((p) => [p[0], p[1]]),
      visible_fraction: Array.from(scenario.visibleFraction),
    },
  };
  writeFileSync(join(dir, "config.json"), JSON.stringify(configPayload, null, 2) + "\n");

  const blob: Record<string, string> = {};
  weights.conv.forEach((m, l) => {
    blob[`conv${l}`] = encode(m.data);
  });
  weights.cell.forEach((c, l) => {
    blob[`cell${l}`] = encode(c);
  });
  blob.fc1 = encode(weights.fc1.data);
  blob.b1 = encode(weights.b1);
  blob.fc2 = encode(weights.fc2.data);
  blob.b2 = encode(weights.b2);
  blob.fc3 = encode(weights.fc3.data);
  blob.b3 = encode(weights.b3);
  writeFileSync(join(dir, "weights.json"), JSON.stringify(blob, null, 2) + "\n");
}

function expectNumber(value: unknown, what: string): number {
  if (typeof value !== "number" || !Number.isFinite(value)) {
    throw new Error(`checkpoint config: ${what} must be a number`);
  }
  return value;
}

export function loadCheckpoint(dir: string): Checkpoint {
  const configPath = join(dir, "config.json");
  const payload = JSON.parse(readFileSync(configPath, "utf8")) as Record<string, unknown>;
  if (payload.version !== CHECKPOINT_FORMAT_VERSION) {
    throw new Error(`checkpoint config: unsupported version ${JSON.stringify(payload.version)}`);
  }
  const m = payload.model as Record<string, unknown>;
  const variant = m.variant;
  if (variant !== "O" && variant !== "H") {
    throw new Error(`checkpoint config: unknown variant ${JSON.stringify(variant)}`);
  }
  const config: ModelConfig = {
    gcnLayers: expectNumber(m.gcn_layers, "model.gcn_layers"),
    hidden: expectNumber(m.hidden, "model.hidden"),
    fcHidden: expectNumber(m.fc_hidden, "model.fc_hidden"),
    featureDim: expectNumber(m.feature_dim, "model.feature_dim"),
    variant: variant as Variant,
    rreluLow: expectNumber(m.rrelu_low, "model.rrelu_low"),
    rreluHigh: expectNumber(m.rrelu_high, "model.rrelu_high"),
    learningRate: expectNumber(m.learning_rate, "model.learning_rate"),
  };
  if (config.featureDim !== FEATURE_DIM) {
    throw new Error(
      `checkpoint config: feature_dim ${config.featureDim} unsupported (expected ${FEATURE_DIM})`,
    );
  }

  const s = payload.scenario as Record<string, unknown>;
  const nSatellites = expectNumber(s.satellites, "scenario.satellites");
  const nGroundStations = expectNumber(s.ground_stations, "scenario.ground_stations");
  const rawPairs = s.pairs;
  if (!Array.isArray(rawPairs) || rawPairs.length === 0) {
    throw new Error("checkpoint config: scenario.pairs must be a non-empty list");
  }
  const pairs: Pair[] = rawPairs.map((p) => {
    if (!Array.isArray(p) || p.length !== 2) {
      throw new Error("checkpoint config: scenario.pairs entries must be [source, destination]");
    }
    return [expectNumber(p[0], "pair source"), expectNumber(p[1], "pair destination")];
  });
  const rawFraction = s.visible_fraction;
  if (!Array.isArray(rawFraction) || rawFraction.length !== nSatellites + nGroundStations) {
    throw new Error("checkpoint config: scenario.visible_fraction must have one entry per node");
  }
  const scenario: ScenarioInfo = {
    nSatellites,
    nGroundStations,
    nNodes: nSatellites + nGroundStations,
    stepCount: expectNumber(s.step_count, "scenario.step_count"),
    stepSeconds: expectNumber(s.step_seconds, "scenario.step_seconds"),
    degreeCap: expectNumber(s.degree_cap, "scenario.degree_cap"),
    pairs,
    visibleFraction: Float64Array.from(rawFraction.map((v) => expectNumber(v, "visible_fraction"))),
  };

  const blob = JSON.parse(readFileSync(join(dir, "weights.json"), "utf8")) as Record<
    string,
    unknown
  >;
  const readArray = (name: string, length: number): Float64Array => {
    const b64 = blob[name];
    if (typeof b64 !== "string") throw new Error(`checkpoint weights: missing "${name}"`);
    return decode(b64, length, name);
  };

  const weights: Weights = {
    conv: [],
    cell: [],
    fc1: zeros(2 * config.hidden, config.fcHidden),
    b1: readArray("b1", config.fcHidden),
    fc2: zeros(config.fcHidden, config.fcHidden),
    b2: readArray("b2", config.fcHidden),
    fc3: zeros(config.fcHidden, 1),
    b3: readArray("b3", 1),
  };
  for (let l = 0; l < config.gcnLayers; l++) {
    const rows = l === 0 ? config.featureDim : config.hidden;
    const mtx = zeros(rows, config.hidden);
    mtx.data.set(readArray(`conv${l}`, rows * config.hidden));
    weights.conv.push(mtx);
    weights.cell.push(readArray(`cell${l}`, CELL_PARAMS[config.variant]));
  }
  weights.fc1.data.set(readArray("fc1", weights.fc1.data.length));
  weights.fc2.data.set(readArray("fc2", weights.fc2.data.length));
  weights.fc3.data.set(readArray("fc3", weights.fc3.data.length));

  const expected = new Set([
    ...weights.conv.map((_, l) => `conv${l}`),
    ...weights.cell.map((_, l) => `cell${l}`),
    "fc1",
    "b1",
    "fc2",
    "b2",
    "fc3",
    "b3",
  ]);
  for (const key of Object.keys(blob)) {
    if (!expected.has(key)) throw new Error(`checkpoint weights: unexpected entry "${key}"`);
  }

  return { config, scenario, scenarioRef: String(s.ref ?? ""), weights };
}
