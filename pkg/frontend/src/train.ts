/**
 * Training loop: Adam over minibatched L1 loss, a seeded 80/20 holdout split,
 * per-epoch loss logging, and held-out regression metrics (absolute error in
 * normalized units and in minutes, plus rank correlation, since the model's
 * main consumer is an optimizer that only needs candidate ordering).
 */

import { appendFileSync, writeFileSync } from "node:fs";

import { Rng } from "./tensor.js";
import {
  backwardSample,
  forwardSample,
  initWeights,
  parameterList,
  zeroGrads,
} from "./model.js";
import type { GraphSequence, ModelConfig, Pair, Weights } from "./model.js";

export interface TrainOptions {
  epochs: number;
  batchSize: number;
  seed: number;
  splitSeed: number;
  maxSeconds?: number;
  lossCsvPath?: string;
  log?: (line: string) => void;
}

export interface HeldOutMetrics {
  count: number;
  maeNormalized: number;
  maeMinutes: number;
  spearman: number;
  labelMin: number;
  labelMax: number;
}

export interface TrainResult {
  weights: Weights;
  epochsRun: number;
  stoppedEarly: boolean;
  trainLoss: number[];
  valLoss: number[];
  metrics: HeldOutMetrics;
}

export interface Sample {
  seq: GraphSequence;
  label: number;
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

export interface AdamState {
  step: number;
  m: Float64Array[];
  v: Float64Array[];
}

export function adamInit(weights: Weights): AdamState {
  const params = parameterList(weights);
  return {
    step: 0,
    m: params.map((p) => new Float64Array(p.array.length)),
    v: params.map((p) => new Float64Array(p.array.length)),
  };
}

const BETA1 = 0.9;
const BETA2 = 0.999;
const EPSILON = 1e-8;

/** One Adam update from accumulated gradients; zeroes the gradients after. */
export function adamStep(
  weights: Weights,
  grads: Weights,
  state: AdamState,
  learningRate: number,
): void {
  state.step += 1;
  const correction1 = 1 - Math.pow(BETA1, state.step);
  const correction2 = 1 - Math.pow(BETA2, state.step);
  const params = parameterList(weights);
  const gradArrays = parameterList(grads);
  for (let p = 0; p < params.length; p++) {
    const theta = params[p].array;
    const g = gradArrays[p].array;
    const m = state.m[p];
    const v = state.v[p];
    for (let k = 0; k < theta.length; k++) {
      const gk = g[k];
      m[k] = BETA1 * m[k] + (1 - BETA1) * gk;
      v[k] = BETA2 * v[k] + (1 - BETA2) * gk * gk;
      const mHat = m[k] / correction1;
      const vHat = v[k] / correction2;
      theta[k] -= (learningRate * mHat) / (Math.sqrt(vHat) + EPSILON);
      g[k] = 0;
    }
  }
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

/** Ranks with ties averaged, 1-based. */
export function rankWithTies(values: readonly number[]): Float64Array {
  const n = values.length;
  const order = Array.from({ length: n }, (_, i) => i).sort((a, b) => values[a] - values[b]);
  const ranks = new Float64Array(n);
  let i = 0;
  while (i < n) {
    let j = i;
    while (j + 1 < n && values[order[j + 1]] === values[order[i]]) j++;
    const avg = (i + j) / 2 + 1;
    for (let k = i; k <= j; k++) ranks[order[k]] = avg;
    i = j + 1;
  }
  return ranks;
}

/** Rank correlation with tie-averaged ranks; 0 when either side is constant. */
export function spearman(a: readonly number[], b: readonly number[]): number {
  if (a.length !== b.length) throw new Error("spearman: length mismatch");
  if (a.length < 2) return 0;
  const ra = rankWithTies(a);
  const rb = rankWithTies(b);
  const n = a.length;
  let meanA = 0;
  let meanB = 0;
  for (let i = 0; i < n; i++) {
    meanA += ra[i];
    meanB += rb[i];
  }
  meanA /= n;
  meanB /= n;
  let cov = 0;
  let varA = 0;
  let varB = 0;
  for (let i = 0; i < n; i++) {
    const da = ra[i] - meanA;
    const db = rb[i] - meanB;
    cov += da * db;
    varA += da * da;
    varB += db * db;
  }
  if (varA === 0 || varB === 0) return 0;
  return cov / Math.sqrt(varA * varB);
}

export function heldOutMetrics(
  predictions: readonly number[],
  labels: readonly number[],
  horizonMinutes: number,
): HeldOutMetrics {
  if (predictions.length !== labels.length || predictions.length === 0) {
    throw new Error("metrics need matching non-empty prediction and label lists");
  }
  let mae = 0;
  let labelMin = Infinity;
  let labelMax = -Infinity;
  for (let i = 0; i < labels.length; i++) {
    mae += Math.abs(predictions[i] - labels[i]);
    labelMin = Math.min(labelMin, labels[i]);
    labelMax = Math.max(labelMax, labels[i]);
  }
  mae /= labels.length;
  return {
    count: labels.length,
    maeNormalized: mae,
    maeMinutes: mae * horizonMinutes,
    spearman: spearman(predictions, labels),
    labelMin,
    labelMax,
  };
}

// ---------------------------------------------------------------------------
// Split and loop
// ---------------------------------------------------------------------------

/** Deterministic 80/20 index split; validation gets at least one sample. */
export function holdoutSplit(count: number, splitSeed: number): { train: number[]; val: number[] } {
  if (count < 2) throw new Error("need at least two samples to split");
  const indices = Array.from({ length: count }, (_, i) => i);
  new Rng(splitSeed).shuffle(indices);
  const valCount = Math.max(1, Math.round(count * 0.2));
  return { train: indices.slice(valCount), val: indices.slice(0, valCount) };
}

function meanAbsError(
  samples: readonly Sample[],
  indices: readonly number[],
  weights: Weights,
  cfg: ModelConfig,
  pairs: readonly Pair[],
): number {
  let total = 0;
  for (const idx of indices) {
    const tape = forwardSample(samples[idx].seq, pairs, weights, cfg, "eval");
    total += Math.abs(tape.pred - samples[idx].label);
  }
  return total / indices.length;
}

export function train(
  samples: readonly Sample[],
  pairs: readonly Pair[],
  cfg: ModelConfig,
  horizonMinutes: number,
  options: TrainOptions,
): TrainResult {
  const log = options.log ?? (() => undefined);
  const startedAt = Date.now();
  const deadline =
    options.maxSeconds !== undefined ? startedAt + options.maxSeconds * 1000 : Infinity;

  const { train: trainIdx, val: valIdx } = holdoutSplit(samples.length, options.splitSeed);
  log(`split: ${trainIdx.length} train / ${valIdx.length} held out`);

  const rng = new Rng(options.seed);
  const weights = initWeights(cfg, rng);
  const grads = zeroGrads(weights);
  const adam = adamInit(weights);

  if (options.lossCsvPath) writeFileSync(options.lossCsvPath, "epoch,train_l1,val_l1\n");

  const trainLoss: number[] = [];
  const valLoss: number[] = [];
  let stoppedEarly = false;
  let epochsRun = 0;

  for (let epoch = 0; epoch < options.epochs; epoch++) {
    // Cosine decay to 10% of the initial rate over the planned epochs: the
    // late small steps are what let the optimizer settle into the fine
    // label structure instead of jittering around the mean fit.
    const progress = options.epochs > 1 ? epoch / (options.epochs - 1) : 0;
    const learningRate = cfg.learningRate * (0.1 + 0.45 * (1 + Math.cos(Math.PI * progress)));
    const order = [...trainIdx];
    rng.shuffle(order);
    let epochAbs = 0;
    let seen = 0;
    for (let start = 0; start < order.length; start += options.batchSize) {
      const batch = order.slice(start, start + options.batchSize);
      for (const idx of batch) {
        const sample = samples[idx];
        const tape = forwardSample(sample.seq, pairs, weights, cfg, "train", rng);
        const diff = tape.pred - sample.label;
        epochAbs += Math.abs(diff);
        // Squared-error loss drives the updates (its gradient fades as the
        // fit tightens); the reported losses stay mean-absolute.
        const upstream = (2 * diff) / batch.length;
        backwardSample(sample.seq, pairs, weights, cfg, tape, upstream, grads);
      }
      seen += batch.length;
      adamStep(weights, grads, adam, learningRate);
      if (Date.now() > deadline) {
        stoppedEarly = true;
        break;
      }
    }
    epochsRun = epoch + 1;
    const trainL1 = epochAbs / seen;
    const valL1 = meanAbsError(samples, valIdx, weights, cfg, pairs);
    trainLoss.push(trainL1);
    valLoss.push(valL1);
    if (options.lossCsvPath) {
      appendFileSync(options.lossCsvPath, `${epoch + 1},${trainL1},${valL1}\n`);
    }
    log(
      `epoch ${epoch + 1}/${options.epochs}: train_l1=${trainL1.toFixed(5)} ` +
        `val_l1=${valL1.toFixed(5)} elapsed=${((Date.now() - startedAt) / 1000).toFixed(1)}s`,
    );
    if (stoppedEarly) {
      log("wall-clock budget reached, stopping");
      break;
    }
  }

  const predictions: number[] = [];
  const labels: number[] = [];
  for (const idx of valIdx) {
    predictions.push(forwardSample(samples[idx].seq, pairs, weights, cfg, "eval").pred);
    labels.push(samples[idx].label);
  }
  const metrics = heldOutMetrics(predictions, labels, horizonMinutes);

  return { weights, epochsRun, stoppedEarly, trainLoss, valLoss, metrics };
}
