import { existsSync, mkdtempSync, readFileSync, rmSync } from "node:fs";
import { join } from "node:path";
import { tmpdir } from "node:os";

import { afterAll, describe, expect, it } from "vitest";

import { Rng, zeros } from "../src/tensor.js";
import { adjacencySequence } from "../src/graph.js";
import type { ContactTriple } from "../src/graph.js";
import { initWeights, parameterList } from "../src/model.js";
import type { ModelConfig } from "../src/model.js";
import {
  adamInit,
  adamStep,
  heldOutMetrics,
  holdoutSplit,
  rankWithTies,
  spearman,
  train,
} from "../src/train.js";
import type { Sample } from "../src/train.js";
import { toyModel } from "./helpers.js";

const tempDirs: string[] = [];
afterAll(() => {
  for (const dir of tempDirs) rmSync(dir, { recursive: true, force: true });
});

function scratchDir(): string {
  const dir = mkdtempSync(join(tmpdir(), "surrogate-train-"));
  tempDirs.push(dir);
  return dir;
}

describe("optimizer", () => {
  it("first step moves each weight by about -lr*sign(grad)", () => {
    const { weights } = toyModel("O");
    const before = parameterList(weights).map((p) => Float64Array.from(p.array));
    const grads = toyModel("O").weights; // same shapes, arbitrary content
    const gradList = parameterList(grads);
    for (const g of gradList) {
      for (let k = 0; k < g.array.length; k++) g.array[k] = k % 2 === 0 ? 1 : -1;
    }
    const state = adamInit(weights);
    adamStep(weights, grads, state, 0.1);
    const after = parameterList(weights);
    for (let p = 0; p < after.length; p++) {
      for (let k = 0; k < after[p].array.length; k++) {
        const moved = after[p].array[k] - before[p][k];
        const expected = k % 2 === 0 ? -0.1 : 0.1;
        expect(Math.abs(moved - expected)).toBeLessThan(1e-6);
      }
    }
    // Gradients are consumed.
    for (const g of parameterList(grads)) {
      for (const v of g.array) expect(v).toBe(0);
    }
    expect(state.step).toBe(1);
  });

  it("constant gradient keeps moving at -lr per step (bias correction)", () => {
    const { weights } = toyModel("O");
    const target = parameterList(weights)[0].array;
    const start = target[0];
    const grads = toyModel("O").weights;
    const state = adamInit(weights);
    for (let s = 0; s < 5; s++) {
      for (const g of parameterList(grads)) g.array.fill(1);
      adamStep(weights, grads, state, 0.01);
    }
    expect(Math.abs(target[0] - (start - 5 * 0.01))).toBeLessThan(1e-6);
  });
});

describe("rank statistics", () => {
  it("ranks ties by their average position", () => {
    expect(Array.from(rankWithTies([10, 20, 10]))).toEqual([1.5, 3, 1.5]);
    expect(Array.from(rankWithTies([5, 5, 5, 5]))).toEqual([2.5, 2.5, 2.5, 2.5]);
    expect(Array.from(rankWithTies([3, 1, 2]))).toEqual([3, 1, 2]);
  });

  it("matches hand-computed correlations", () => {
    expect(spearman([1, 2, 3], [10, 20, 30])).toBeCloseTo(1, 12);
    expect(spearman([1, 2, 3], [30, 20, 10])).toBeCloseTo(-1, 12);
    // Ranks a = [1, 2.5, 2.5, 4], b = [1, 3, 2, 4]:
    // cov = 4.5, var_a = 4.5, var_b = 5.
    expect(spearman([1, 2, 2, 4], [1, 3, 2, 4])).toBeCloseTo(4.5 / Math.sqrt(4.5 * 5), 12);
    // Ranks a = [1.5, 1.5, 3] vs b = [1, 3, 2] are uncorrelated.
    expect(spearman([1, 1, 2], [3, 5, 4])).toBeCloseTo(0, 12);
  });

  it("is zero for constant inputs and monotone-invariant", () => {
    expect(spearman([2, 2, 2], [1, 2, 3])).toBe(0);
    const a = [0.1, 0.7, 0.3, 0.9, 0.5];
    const b = a.map((x) => Math.exp(3 * x)); // strictly increasing transform
    expect(spearman(a, b)).toBeCloseTo(1, 12);
  });
});

describe("holdout split", () => {
  it("is deterministic, disjoint, and complete", () => {
    const s1 = holdoutSplit(50, 7);
    const s2 = holdoutSplit(50, 7);
    expect(s1).toEqual(s2);
    const all = [...s1.train, ...s1.val].sort((a, b) => a - b);
    expect(all).toEqual(Array.from({ length: 50 }, (_, i) => i));
    expect(s1.val).toHaveLength(10);
    const s3 = holdoutSplit(50, 8);
    expect(s3.val).not.toEqual(s1.val);
  });

  it("keeps at least one validation sample", () => {
    expect(holdoutSplit(2, 0).val).toHaveLength(1);
    expect(() => holdoutSplit(1, 0)).toThrow();
  });
});

describe("held-out metrics", () => {
  it("computes absolute error in both units and the label span", () => {
    const m = heldOutMetrics([0.5, 0.3], [0.4, 0.5], 90);
    expect(m.count).toBe(2);
    expect(m.maeNormalized).toBeCloseTo(0.15, 12);
    expect(m.maeMinutes).toBeCloseTo(13.5, 12);
    expect(m.labelMin).toBe(0.4);
    expect(m.labelMax).toBe(0.5);
  });
});

function syntheticSamples(count: number, nNodes: number, nSteps: number, seed: number): Sample[] {
  const rng = new Rng(seed);
  const samples: Sample[] = [];
  for (let s = 0; s < count; s++) {
    const contacts: ContactTriple[] = [];
    for (let t = 0; t < nSteps; t++) {
      for (let a = 0; a < nNodes; a++) {
        for (let b = a + 1; b < nNodes; b++) {
          if (rng.next() < 0.25) contacts.push([t, a, b]);
        }
      }
    }
    const features = zeros(nNodes, 4);
    for (let k = 0; k < features.data.length; k++) features.data[k] = rng.normal();
    samples.push({
      seq: { nNodes, nSteps, adj: adjacencySequence(contacts, nNodes, nSteps), features },
      label: 0.2 + 0.6 * rng.next(),
    });
  }
  return samples;
}

const OVERFIT_CFG: ModelConfig = {
  gcnLayers: 2,
  hidden: 16,
  fcHidden: 16,
  featureDim: 4,
  variant: "O",
  rreluLow: 0.125,
  rreluHigh: 1 / 3,
  learningRate: 3e-3,
};

describe("training loop", () => {
  it("overfits 20 samples to train L1 below 0.02", () => {
    const samples = syntheticSamples(25, 8, 6, 42);
    const result = train(samples, [[0, 5], [1, 6], [2, 7]], OVERFIT_CFG, 6, {
      epochs: 800,
      batchSize: 20,
      seed: 1,
      splitSeed: 2,
    });
    // 25 samples split 80/20: exactly 20 training samples.
    expect(result.trainLoss.length).toBe(result.epochsRun);
    expect(Math.min(...result.trainLoss)).toBeLessThan(0.02);
  });

  it("is reproducible for fixed seeds and writes the loss curve", () => {
    const samples = syntheticSamples(12, 6, 4, 9);
    const dir = scratchDir();
    const csv = join(dir, "loss.csv");
    const opts = { epochs: 4, batchSize: 4, seed: 3, splitSeed: 5, lossCsvPath: csv };
    const a = train(samples, [[0, 3], [1, 4]], OVERFIT_CFG, 4, opts);
    const b = train(samples, [[0, 3], [1, 4]], OVERFIT_CFG, 4, { ...opts, lossCsvPath: undefined });
    expect(a.trainLoss).toEqual(b.trainLoss);
    expect(a.valLoss).toEqual(b.valLoss);
    const aw = parameterList(a.weights);
    const bw = parameterList(b.weights);
    for (let p = 0; p < aw.length; p++) {
      expect(Array.from(aw[p].array)).toEqual(Array.from(bw[p].array));
    }
    expect(existsSync(csv)).toBe(true);
    const lines = readFileSync(csv, "utf8").trim().split("\n");
    expect(lines[0]).toBe("epoch,train_l1,val_l1");
    expect(lines).toHaveLength(5);
    for (const [i, line] of lines.slice(1).entries()) {
      const cells = line.split(",");
      expect(Number(cells[0])).toBe(i + 1);
      expect(Number.isFinite(Number(cells[1]))).toBe(true);
      expect(Number.isFinite(Number(cells[2]))).toBe(true);
    }
  });

  it("different training seeds give different weights", () => {
    const samples = syntheticSamples(12, 6, 4, 9);
    const opts = { epochs: 2, batchSize: 4, splitSeed: 5 };
    const a = train(samples, [[0, 3]], OVERFIT_CFG, 4, { ...opts, seed: 1 });
    const b = train(samples, [[0, 3]], OVERFIT_CFG, 4, { ...opts, seed: 2 });
    const aw = parameterList(a.weights);
    const bw = parameterList(b.weights);
    let differs = false;
    for (let p = 0; p < aw.length; p++) {
      if (!aw[p].array.every((v, k) => v === bw[p].array[k])) differs = true;
    }
    expect(differs).toBe(true);
  });

  it("respects the wall-clock budget", () => {
    const samples = syntheticSamples(12, 6, 4, 9);
    const result = train(samples, [[0, 3]], OVERFIT_CFG, 4, {
      epochs: 100000,
      batchSize: 4,
      seed: 1,
      splitSeed: 5,
      maxSeconds: 1,
    });
    expect(result.stoppedEarly).toBe(true);
    expect(result.epochsRun).toBeLessThan(100000);
    expect(result.metrics.count).toBeGreaterThan(0);
  });

  it("reports held-out metrics from eval-mode predictions", () => {
    const samples = syntheticSamples(15, 6, 4, 11);
    const result = train(samples, [[0, 3], [2, 5]], OVERFIT_CFG, 4, {
      epochs: 3,
      batchSize: 4,
      seed: 1,
      splitSeed: 5,
    });
    expect(result.metrics.count).toBe(3);
    expect(result.metrics.maeNormalized).toBeGreaterThan(0);
    expect(result.metrics.maeMinutes).toBeCloseTo(result.metrics.maeNormalized * 4, 12);
    expect(result.metrics.spearman).toBeGreaterThanOrEqual(-1);
    expect(result.metrics.spearman).toBeLessThanOrEqual(1);
    expect(result.metrics.labelMax).toBeGreaterThan(result.metrics.labelMin);
  });
});
