import { mkdtempSync, readFileSync, rmSync, writeFileSync } from "node:fs";
import { join } from "node:path";
import { tmpdir } from "node:os";

import { afterAll, describe, expect, it } from "vitest";

import { parameterList } from "../src/model.js";
import { loadCheckpoint, saveCheckpoint } from "../src/checkpoint.js";
import type { ScenarioInfo } from "../src/data.js";
import { toyModel } from "./helpers.js";

const tempDirs: string[] = [];
afterAll(() => {
  for (const dir of tempDirs) rmSync(dir, { recursive: true, force: true });
});

function scratchDir(): string {
  const dir = mkdtempSync(join(tmpdir(), "surrogate-ckpt-"));
  tempDirs.push(dir);
  return dir;
}

function sampleScenario(): ScenarioInfo {
  return {
    nSatellites: 3,
    nGroundStations: 1,
    nNodes: 4,
    stepCount: 3,
    stepSeconds: 60,
    degreeCap: 2,
    pairs: [
      [0, 3],
      [1, 3],
      [2, 0],
    ],
    visibleFraction: Float64Array.from([1, 0.5, 0.25, 1]),
  };
}

describe("checkpoint round-trip", () => {
  it("restores config, scenario, and weights exactly", () => {
    for (const variant of ["O", "H"] as const) {
      const { cfg, weights } = toyModel(variant);
      const dir = scratchDir();
      saveCheckpoint(dir, cfg, sampleScenario(), "ref-abc", weights);
      const loaded = loadCheckpoint(dir);

      expect(loaded.config).toEqual(cfg);
      expect(loaded.scenarioRef).toBe("ref-abc");
      expect(loaded.scenario.nSatellites).toBe(3);
      expect(loaded.scenario.nGroundStations).toBe(1);
      expect(loaded.scenario.nNodes).toBe(4);
      expect(loaded.scenario.stepCount).toBe(3);
      expect(loaded.scenario.stepSeconds).toBe(60);
      expect(loaded.scenario.degreeCap).toBe(2);
      expect(loaded.scenario.pairs).toEqual(sampleScenario().pairs);
      expect(Array.from(loaded.scenario.visibleFraction)).toEqual([1, 0.5, 0.25, 1]);

      const before = parameterList(weights);
      const after = parameterList(loaded.weights);
      expect(after.map((p) => p.name)).toEqual(before.map((p) => p.name));
      for (let p = 0; p < before.length; p++) {
        expect(Array.from(after[p].array)).toEqual(Array.from(before[p].array));
      }
    }
  });

  it("writes byte-identical files for identical inputs", () => {
    const { cfg, weights } = toyModel("O");
    const dirA = scratchDir();
    const dirB = scratchDir();
    saveCheckpoint(dirA, cfg, sampleScenario(), "r", weights);
    saveCheckpoint(dirB, cfg, sampleScenario(), "r", weights);
    for (const name of ["config.json", "weights.json"]) {
      expect(readFileSync(join(dirA, name), "utf8")).toBe(readFileSync(join(dirB, name), "utf8"));
    }
  });
});

describe("checkpoint validation", () => {
  function savedDir(): string {
    const { cfg, weights } = toyModel("O");
    const dir = scratchDir();
    saveCheckpoint(dir, cfg, sampleScenario(), "r", weights);
    return dir;
  }

  it("rejects unknown format versions", () => {
    const dir = savedDir();
    const config = JSON.parse(readFileSync(join(dir, "config.json"), "utf8"));
    config.version = 99;
    writeFileSync(join(dir, "config.json"), JSON.stringify(config));
    expect(() => loadCheckpoint(dir)).toThrow(/version/);
  });

  it("rejects unknown variants", () => {
    const dir = savedDir();
    const config = JSON.parse(readFileSync(join(dir, "config.json"), "utf8"));
    config.model.variant = "X";
    writeFileSync(join(dir, "config.json"), JSON.stringify(config));
    expect(() => loadCheckpoint(dir)).toThrow(/variant/);
  });

  it("rejects missing and truncated weight arrays", () => {
    const missing = savedDir();
    const blob = JSON.parse(readFileSync(join(missing, "weights.json"), "utf8"));
    delete blob.fc2;
    writeFileSync(join(missing, "weights.json"), JSON.stringify(blob));
    expect(() => loadCheckpoint(missing)).toThrow(/fc2/);

    const truncated = savedDir();
    const blob2 = JSON.parse(readFileSync(join(truncated, "weights.json"), "utf8"));
    blob2.conv0 = Buffer.alloc(8).toString("base64");
    writeFileSync(join(truncated, "weights.json"), JSON.stringify(blob2));
    expect(() => loadCheckpoint(truncated)).toThrow(/conv0/);
  });

  it("rejects stray weight entries", () => {
    const dir = savedDir();
    const blob = JSON.parse(readFileSync(join(dir, "weights.json"), "utf8"));
    blob.extra = Buffer.alloc(8).toString("base64");
    writeFileSync(join(dir, "weights.json"), JSON.stringify(blob));
    expect(() => loadCheckpoint(dir)).toThrow(/unexpected/);
  });

  it("rejects a pair list that is missing or empty", () => {
    const dir = savedDir();
    const config = JSON.parse(readFileSync(join(dir, "config.json"), "utf8"));
    config.scenario.pairs = [];
    writeFileSync(join(dir, "config.json"), JSON.stringify(config));
    expect(() => loadCheckpoint(dir)).toThrow(/pairs/);
  });
});
