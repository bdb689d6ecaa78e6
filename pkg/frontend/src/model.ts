/**
 * Dynamic-graph neural network that regresses a contact plan's normalized
 * objective from its per-step graph sequence.
 *
 * Architecture, per time step t:
 *   H⁰_t = X            (node features; constant across steps here)
 *   Hˡ⁺¹_t = act(Â_t Hˡ_t Wˡ_t)       graph convolution, L layers
 * with the layer weights evolved across steps by a recurrent cell:
 *   variant O: Wˡ_t = LSTM(Wˡ_{t-1})            — weights are the state
 *   variant H: Wˡ_t = GRU(summary(Hˡ_t), Wˡ_{t-1}) — embeddings drive the update
 * Both cells act elementwise on the weight matrix with scalar (shared) gate
 * parameters, and neither runs at the first step, so the two variants agree
 * exactly on single-step sequences.
 *
 * Readout: for every required (source, destination) pair and every step,
 * concatenate the two final-layer node embeddings, pass them through a
 * two-hidden-layer fully connected head with a single output, and average
 * over all pairs and steps.
 *
 * The graph activation is a randomized leaky rectifier with negative-slope
 * bounds [low, high]: slopes are sampled per element during training and
 * fixed to the expectation (low+high)/2 during inference, so served
 * predictions are deterministic. The head uses plain rectifiers.
 *
 * Everything is double precision and hand-differentiated; `backwardSample`
 * is validated against central finite differences by the test suite.
 */

import {
  addBiasRow,
  axpy,
  clone,
  colSums,
  glorot,
  matmul,
  matmulInto,
  matmulTA,
  matmulTB,
  zeros,
} from "./tensor.js";
import type { Matrix, Rng } from "./tensor.js";
import { spmm, spmmInto } from "./graph.js";
import type { SparseStep } from "./graph.js";

export type Variant = "O" | "H";

export interface ModelConfig {
  gcnLayers: number;
  hidden: number;
  fcHidden: number;
  featureDim: number;
  variant: Variant;
  rreluLow: number;
  rreluHigh: number;
  learningRate: number;
}

export const DEFAULT_CONFIG: ModelConfig = {
  gcnLayers: 2,
  hidden: 64,
  fcHidden: 64,
  featureDim: 4,
  variant: "O",
  rreluLow: 1 / 8,
  rreluHigh: 1 / 3,
  learningRate: 1e-3,
};

/** Number of scalar gate parameters per layer for each cell kind. */
export const CELL_PARAMS: Record<Variant, number> = { O: 8, H: 9 };
// O: [aF,bF, aI,bI, aO,bO, aG,bG]  — forget/input/output/candidate gates
// H: [aZ,uZ,bZ, aR,uR,bR, aH,uH,bH] — update/reset/candidate gates

export interface Weights {
  conv: Matrix[]; // first-step convolution weights per layer
  cell: Float64Array[]; // per-layer scalar gate parameters
  fc1: Matrix;
  b1: Float64Array;
  fc2: Matrix;
  b2: Float64Array;
  fc3: Matrix;
  b3: Float64Array;
}

export interface GraphSequence {
  nNodes: number;
  nSteps: number;
  adj: SparseStep[];
  features: Matrix; // nNodes × featureDim, reused as X_t for every step
}

export type Pair = readonly [source: number, destination: number];

export function initWeights(cfg: ModelConfig, rng: Rng): Weights {
  const conv: Matrix[] = [];
  for (let l = 0; l < cfg.gcnLayers; l++) {
    conv.push(glorot(l === 0 ? cfg.featureDim : cfg.hidden, cfg.hidden, rng));
  }
  const cell: Float64Array[] = [];
  for (let l = 0; l < cfg.gcnLayers; l++) {
    if (cfg.variant === "O") {
      // Gentle gates biased to remember: forget/output open, input nearly shut.
      cell.push(Float64Array.from([0.1, 2.0, 0.1, -2.0, 0.1, 2.0, 0.1, 0.0]));
    } else {
      // Update gate nearly shut (slow drift), reset gate open.
      cell.push(Float64Array.from([0.1, 0.1, -2.0, 0.1, 0.1, 2.0, 0.1, 0.1, 0.0]));
    }
  }
  return {
    conv,
    cell,
    fc1: glorot(2 * cfg.hidden, cfg.fcHidden, rng),
    b1: new Float64Array(cfg.fcHidden),
    fc2: glorot(cfg.fcHidden, cfg.fcHidden, rng),
    b2: new Float64Array(cfg.fcHidden),
    fc3: glorot(cfg.fcHidden, 1, rng),
    b3: new Float64Array(1),
  };
}

/** Named flat views over every trainable array, in a stable order. */
export function parameterList(w: Weights): Array<{ name: string; array: Float64Array }> {
  const out: Array<{ name: string; array: Float64Array }> = [];
  w.conv.forEach((m, l) => out.push({ name: `conv${l}`, array: m.data }));
  w.cell.forEach((c, l) => out.push({ name: `cell${l}`, array: c }));
  out.push({ name: "fc1", array: w.fc1.data });
  out.push({ name: "b1", array: w.b1 });
  out.push({ name: "fc2", array: w.fc2.data });
  out.push({ name: "b2", array: w.b2 });
  out.push({ name: "fc3", array: w.fc3.data });
  out.push({ name: "b3", array: w.b3 });
  return out;
}

export function parameterCount(w: Weights): number {
  return parameterList(w).reduce((acc, p) => acc + p.array.length, 0);
}

/** A gradient container mirroring the weight shapes, zero-filled. */
export function zeroGrads(w: Weights): Weights {
  return {
    conv: w.conv.map((m) => zeros(m.rows, m.cols)),
    cell: w.cell.map((c) => new Float64Array(c.length)),
    fc1: zeros(w.fc1.rows, w.fc1.cols),
    b1: new Float64Array(w.b1.length),
    fc2: zeros(w.fc2.rows, w.fc2.cols),
    b2: new Float64Array(w.b2.length),
    fc3: zeros(w.fc3.rows, w.fc3.cols),
    b3: new Float64Array(w.b3.length),
  };
}

// ---------------------------------------------------------------------------
// Recurrent weight evolution
// ---------------------------------------------------------------------------

const sigmoid = (x: number): number => 1 / (1 + Math.exp(-x));
const CLAMP = 0.99;

interface CellTapeO {
  f: Float64Array;
  i: Float64Array;
  o: Float64Array;
  g: Float64Array;
  c: Float64Array;
  tanhC: Float64Array;
}

interface CellTapeH {
  z: Float64Array;
  r: Float64Array;
  hTilde: Float64Array;
  s: Float64Array; // the input summary, broadcast to the weight shape's rows
}

/** Initial LSTM cell state: the state whose output reproduces the base weights. */
function initialCellState(base: Matrix): Float64Array {
  const c = new Float64Array(base.data.length);
  for (let k = 0; k < c.length; k++) {
    const w = Math.max(-CLAMP, Math.min(CLAMP, base.data[k]));
    c[k] = Math.atanh(w);
  }
  return c;
}

function lstmStep(
  params: Float64Array,
  wPrev: Float64Array,
  cPrev: Float64Array,
  wOut: Float64Array,
  cOut: Float64Array,
  tape: CellTapeO | null,
): void {
  const [aF, bF, aI, bI, aO, bO, aG, bG] = params;
  for (let k = 0; k < wPrev.length; k++) {
    const w = wPrev[k];
    const f = sigmoid(aF * w + bF);
    const i = sigmoid(aI * w + bI);
    const o = sigmoid(aO * w + bO);
    const g = Math.tanh(aG * w + bG);
    const c = f * cPrev[k] + i * g;
    const tc = Math.tanh(c);
    wOut[k] = o * tc;
    cOut[k] = c;
    if (tape) {
      tape.f[k] = f;
      tape.i[k] = i;
      tape.o[k] = o;
      tape.g[k] = g;
      tape.c[k] = c;
      tape.tanhC[k] = tc;
    }
  }
}

/** Row-broadcast summary of the layer input: column means of H, one per input row. */
function inputSummary(hIn: Matrix, rows: number, cols: number, out: Float64Array): void {
  const n = hIn.rows;
  for (let p = 0; p < rows; p++) {
    let acc = 0;
    for (let v = 0; v < n; v++) acc += hIn.data[v * hIn.cols + p];
    const m = acc / n;
    const base = p * cols;
    for (let q = 0; q < cols; q++) out[base + q] = m;
  }
}

function gruStep(
  params: Float64Array,
  wPrev: Float64Array,
  s: Float64Array,
  wOut: Float64Array,
  tape: CellTapeH | null,
): void {
  const [aZ, uZ, bZ, aR, uR, bR, aH, uH, bH] = params;
  for (let k = 0; k < wPrev.length; k++) {
    const w = wPrev[k];
    const z = sigmoid(aZ * w + uZ * s[k] + bZ);
    const r = sigmoid(aR * w + uR * s[k] + bR);
    const h = Math.tanh(aH * (r * w) + uH * s[k] + bH);
    wOut[k] = (1 - z) * w + z * h;
    if (tape) {
      tape.z[k] = z;
      tape.r[k] = r;
      tape.hTilde[k] = h;
    }
  }
}

/**
 * Precompute the full weight trajectory for variant O, whose evolution does
 * not depend on the data. Serving computes this once per checkpoint.
 */
export function trajectoryO(w: Weights, cfg: ModelConfig, nSteps: number): Matrix[][] {
  if (cfg.variant !== "O") throw new Error("trajectoryO is only defined for variant O");
  const perLayer: Matrix[][] = [];
  for (let l = 0; l < cfg.gcnLayers; l++) {
    const traj: Matrix[] = [w.conv[l]];
    let c = initialCellState(w.conv[l]);
    for (let t = 1; t < nSteps; t++) {
      const prev = traj[t - 1];
      const next = zeros(prev.rows, prev.cols);
      const cNext = new Float64Array(c.length);
      lstmStep(w.cell[l], prev.data, c, next.data, cNext, null);
      traj.push(next);
      c = cNext;
    }
    perLayer.push(traj);
  }
  return perLayer;
}

// ---------------------------------------------------------------------------
// Forward pass
// ---------------------------------------------------------------------------

export type Mode = "train" | "eval";

interface StepTape {
  z: Matrix[]; // per layer: Â_t · H_in
  pre: Matrix[]; // per layer: z · W_t
  act: Matrix[]; // per layer: activated output
  slopes: Float64Array[]; // per layer: rectifier slope actually applied per element
  concat: Matrix;
  f1pre: Matrix;
  f1: Matrix;
  f2pre: Matrix;
  f2: Matrix;
  out: Float64Array;
}

export interface Tape {
  steps: StepTape[];
  trajectory: Matrix[][]; // [layer][step] weights used
  cellO: Array<Array<CellTapeO | null>>; // [layer][step], null at step 0
  cellH: Array<Array<CellTapeH | null>>;
  cellStateO: Float64Array[][]; // [layer][step] LSTM c state (step 0 = initial)
  pred: number;
}

function applyRectifier(
  pre: Matrix,
  mode: Mode,
  low: number,
  high: number,
  rng: Rng | undefined,
  slopesOut: Float64Array,
): Matrix {
  const act = zeros(pre.rows, pre.cols);
  const evalSlope = (low + high) / 2;
  for (let k = 0; k < pre.data.length; k++) {
    const x = pre.data[k];
    let s: number;
    if (x >= 0) {
      s = 1;
    } else if (mode === "eval" || !rng) {
      s = evalSlope;
    } else {
      s = low + (high - low) * rng.next();
    }
    slopesOut[k] = s;
    act.data[k] = s * x;
  }
  return act;
}

function gatherPairs(h: Matrix, pairs: readonly Pair[]): Matrix {
  const width = h.cols;
  const out = zeros(pairs.length, 2 * width);
  for (let p = 0; p < pairs.length; p++) {
    const [src, dst] = pairs[p];
    out.data.set(h.data.subarray(src * width, (src + 1) * width), p * 2 * width);
    out.data.set(h.data.subarray(dst * width, (dst + 1) * width), p * 2 * width + width);
  }
  return out;
}

/** Column of the input features holding the horizon-summed degree. */
const DEGREE_COLUMN = 2;

/**
 * Input conditioning. The degree column arrives as a whole-horizon sum
 * normalized by steps x cap, which for realistic budgets sits two orders of
 * magnitude below the other columns; multiplying by the step count
 * re-expresses it as mean per-step degree over the cap, an O(1) quantity.
 * Without this the one plan-dependent input column is numerically invisible
 * next to the constant ones and fitting stalls at the mean label.
 */
function conditionFeatures(seq: GraphSequence): Matrix {
  const x = clone(seq.features);
  if (x.cols > DEGREE_COLUMN) {
    for (let v = 0; v < x.rows; v++) x.data[v * x.cols + DEGREE_COLUMN] *= seq.nSteps;
  }
  return x;
}

/**
 * Full forward pass for one sample. `mode === "train"` samples rectifier
 * slopes from `rng` and records everything needed for `backwardSample`.
 */
export function forwardSample(
  seq: GraphSequence,
  pairs: readonly Pair[],
  w: Weights,
  cfg: ModelConfig,
  mode: Mode = "eval",
  rng?: Rng,
): Tape {
  const L = cfg.gcnLayers;
  const T = seq.nSteps;
  if (pairs.length === 0) throw new Error("readout needs at least one requirement pair");
  if (seq.features.rows !== seq.nNodes || seq.features.cols !== cfg.featureDim) {
    throw new Error(
      `feature matrix is ${seq.features.rows}x${seq.features.cols}, ` +
        `expected ${seq.nNodes}x${cfg.featureDim}`,
    );
  }
  if (seq.adj.length !== T) throw new Error(`adjacency sequence has ${seq.adj.length} steps, expected ${T}`);

  const trajectory: Matrix[][] = [];
  const cellStateO: Float64Array[][] = [];
  const cellO: Array<Array<CellTapeO | null>> = [];
  const cellH: Array<Array<CellTapeH | null>> = [];
  for (let l = 0; l < L; l++) {
    trajectory.push([w.conv[l]]);
    cellO.push([null]);
    cellH.push([null]);
    cellStateO.push(cfg.variant === "O" ? [initialCellState(w.conv[l])] : []);
  }

  const x = conditionFeatures(seq);
  const steps: StepTape[] = [];
  let total = 0;

  for (let t = 0; t < T; t++) {
    const zs: Matrix[] = [];
    const pres: Matrix[] = [];
    const acts: Matrix[] = [];
    const slopes: Float64Array[] = [];
    let hIn = x;
    for (let l = 0; l < L; l++) {
      // Evolve this layer's weights (the recurrence is inactive at the first step).
      if (t > 0) {
        const prev = trajectory[l][t - 1];
        const next = zeros(prev.rows, prev.cols);
        if (cfg.variant === "O") {
          const tape: CellTapeO = {
            f: new Float64Array(prev.data.length),
            i: new Float64Array(prev.data.length),
            o: new Float64Array(prev.data.length),
            g: new Float64Array(prev.data.length),
            c: new Float64Array(prev.data.length),
            tanhC: new Float64Array(prev.data.length),
          };
          const cNext = new Float64Array(prev.data.length);
          lstmStep(w.cell[l], prev.data, cellStateO[l][t - 1], next.data, cNext, tape);
          cellStateO[l].push(cNext);
          cellO[l].push(tape);
          cellH[l].push(null);
        } else {
          const s = new Float64Array(prev.data.length);
          inputSummary(hIn, prev.rows, prev.cols, s);
          const tape: CellTapeH = {
            z: new Float64Array(prev.data.length),
            r: new Float64Array(prev.data.length),
            hTilde: new Float64Array(prev.data.length),
            s,
          };
          gruStep(w.cell[l], prev.data, s, next.data, tape);
          cellH[l].push(tape);
          cellO[l].push(null);
        }
        trajectory[l].push(next);
      }
      const wT = trajectory[l][t];
      const z = spmm(seq.adj[t], hIn);
      const pre = matmul(z, wT);
      const slope = new Float64Array(pre.data.length);
      const act = applyRectifier(pre, mode, cfg.rreluLow, cfg.rreluHigh, rng, slope);
      zs.push(z);
      pres.push(pre);
      acts.push(act);
      slopes.push(slope);
      hIn = act;
    }

    const concat = gatherPairs(hIn, pairs);
    const f1pre = addBiasRow(matmul(concat, w.fc1), w.b1);
    const f1 = zeros(f1pre.rows, f1pre.cols);
    for (let k = 0; k < f1pre.data.length; k++) f1.data[k] = Math.max(0, f1pre.data[k]);
    const f2pre = addBiasRow(matmul(f1, w.fc2), w.b2);
    const f2 = zeros(f2pre.rows, f2pre.cols);
    for (let k = 0; k < f2pre.data.length; k++) f2.data[k] = Math.max(0, f2pre.data[k]);
    const outM = addBiasRow(matmul(f2, w.fc3), w.b3);
    const out = new Float64Array(pairs.length);
    for (let p = 0; p < pairs.length; p++) {
      out[p] = outM.data[p];
      total += outM.data[p];
    }

    steps.push({ z: zs, pre: pres, act: acts, slopes, concat, f1pre, f1, f2pre, f2, out });
  }

  return {
    steps,
    trajectory,
    cellO,
    cellH,
    cellStateO,
    pred: total / (pairs.length * T),
  };
}

// ---------------------------------------------------------------------------
// Backward pass
// ---------------------------------------------------------------------------

/**
 * Accumulate d(upstream·pred)/dθ into `grads`. Layer by layer from the top:
 * first the readout and per-step convolution gradients, then backpropagation
 * through time over that layer's recurrent cell (which, for variant H, also
 * feeds gradient back into the layer input through the summary).
 */
export function backwardSample(
  seq: GraphSequence,
  pairs: readonly Pair[],
  w: Weights,
  cfg: ModelConfig,
  tape: Tape,
  upstream: number,
  grads: Weights,
): void {
  const L = cfg.gcnLayers;
  const T = seq.nSteps;
  const h = cfg.hidden;
  const dOut = upstream / (pairs.length * T);

  // Gradient flowing into each step's top-layer activations.
  const dTop: Matrix[] = [];
  for (let t = 0; t < T; t++) dTop.push(zeros(seq.nNodes, h));

  for (let t = 0; t < T; t++) {
    const st = tape.steps[t];
    const p = pairs.length;
    const dOutM = zeros(p, 1);
    dOutM.data.fill(dOut);

    // FC head backward.
    axpy(1, matmulTA(st.f2, dOutM).data, grads.fc3.data);
    axpy(1, colSums(dOutM), grads.b3);
    const dF2 = matmulTB(dOutM, w.fc3);
    for (let k = 0; k < dF2.data.length; k++) if (st.f2pre.data[k] < 0) dF2.data[k] = 0;
    axpy(1, matmulTA(st.f1, dF2).data, grads.fc2.data);
    axpy(1, colSums(dF2), grads.b2);
    const dF1 = matmulTB(dF2, w.fc2);
    for (let k = 0; k < dF1.data.length; k++) if (st.f1pre.data[k] < 0) dF1.data[k] = 0;
    axpy(1, matmulTA(st.concat, dF1).data, grads.fc1.data);
    axpy(1, colSums(dF1), grads.b1);
    const dConcat = matmulTB(dF1, w.fc1);

    // Scatter pair gradients back onto node embeddings.
    const dH = dTop[t];
    for (let q = 0; q < p; q++) {
      const [src, dst] = pairs[q];
      for (let j = 0; j < h; j++) {
        dH.data[src * h + j] += dConcat.data[q * 2 * h + j];
        dH.data[dst * h + j] += dConcat.data[q * 2 * h + h + j];
      }
    }
  }

  for (let l = L - 1; l >= 0; l--) {
    const dIn: Matrix[] = []; // gradient into this layer's input, per step
    const dWConv: Matrix[] = []; // per-step convolution gradient w.r.t. Wˡ_t

    for (let t = 0; t < T; t++) {
      const st = tape.steps[t];
      const dAct = dTop[t];
      const pre = st.pre[l];
      const dPre = zeros(pre.rows, pre.cols);
      for (let k = 0; k < dPre.data.length; k++) dPre.data[k] = dAct.data[k] * st.slopes[l][k];
      dWConv.push(matmulTA(st.z[l], dPre));
      const dZ = matmulTB(dPre, tape.trajectory[l][t]);
      dIn.push(spmm(seq.adj[t], dZ)); // Â is symmetric, so it is its own transpose
    }

    // Backpropagation through time over the recurrent weight evolution.
    const wLen = w.conv[l].data.length;
    const dWRun = new Float64Array(wLen); // gradient into Wˡ_t flowing backward
    const dCRun = new Float64Array(wLen); // LSTM state gradient (variant O)
    const cp = w.cell[l];
    const gcell = grads.cell[l];

    for (let t = T - 1; t >= 1; t--) {
      const dWTotal = dWConv[t].data;
      for (let k = 0; k < wLen; k++) dWTotal[k] += dWRun[k];
      dWRun.fill(0);
      const wPrev = tape.trajectory[l][t - 1].data;

      if (cfg.variant === "O") {
        const ct = tape.cellO[l][t]!;
        const cPrev = tape.cellStateO[l][t - 1];
        const [aF, , aI, , aO, , aG] = cp;
        let dAF = 0, dBF = 0, dAI = 0, dBI = 0, dAO = 0, dBO = 0, dAG = 0, dBG = 0;
        for (let k = 0; k < wLen; k++) {
          const dwNew = dWTotal[k];
          const f = ct.f[k], i = ct.i[k], o = ct.o[k], g = ct.g[k], tc = ct.tanhC[k];
          const doGate = dwNew * tc;
          const dc = dCRun[k] + dwNew * o * (1 - tc * tc);
          const df = dc * cPrev[k];
          dCRun[k] = dc * f;
          const di = dc * g;
          const dg = dc * i;
          const dpf = df * f * (1 - f);
          const dpi = di * i * (1 - i);
          const dpo = doGate * o * (1 - o);
          const dpg = dg * (1 - g * g);
          const wv = wPrev[k];
          dAF += dpf * wv; dBF += dpf;
          dAI += dpi * wv; dBI += dpi;
          dAO += dpo * wv; dBO += dpo;
          dAG += dpg * wv; dBG += dpg;
          dWRun[k] += dpf * aF + dpi * aI + dpo * aO + dpg * aG;
        }
        gcell[0] += dAF; gcell[1] += dBF;
        gcell[2] += dAI; gcell[3] += dBI;
        gcell[4] += dAO; gcell[5] += dBO;
        gcell[6] += dAG; gcell[7] += dBG;
      } else {
        const ct = tape.cellH[l][t]!;
        const [aZ, uZ, , aR, uR, , aH, uH] = cp;
        let dAZ = 0, dUZ = 0, dBZ = 0, dAR = 0, dUR = 0, dBR = 0, dAH = 0, dUH = 0, dBH = 0;
        const rows = w.conv[l].rows;
        const cols = w.conv[l].cols;
        const dMean = new Float64Array(rows);
        for (let k = 0; k < wLen; k++) {
          const dwNew = dWTotal[k];
          const wv = wPrev[k];
          const z = ct.z[k], r = ct.r[k], ht = ct.hTilde[k], s = ct.s[k];
          const dz = dwNew * (ht - wv);
          const dh = dwNew * z;
          let dwPrev = dwNew * (1 - z);
          const dph = dh * (1 - ht * ht);
          dAH += dph * (r * wv); dUH += dph * s; dBH += dph;
          const dRW = dph * aH;
          const dr = dRW * wv;
          dwPrev += dRW * r;
          const dpr = dr * r * (1 - r);
          dAR += dpr * wv; dUR += dpr * s; dBR += dpr;
          dwPrev += dpr * aR;
          const dpz = dz * z * (1 - z);
          dAZ += dpz * wv; dUZ += dpz * s; dBZ += dpz;
          dwPrev += dpz * aZ;
          dWRun[k] += dwPrev;
          dMean[Math.floor(k / cols)] += dph * uH + dpr * uR + dpz * uZ;
        }
        gcell[0] += dAZ; gcell[1] += dUZ; gcell[2] += dBZ;
        gcell[3] += dAR; gcell[4] += dUR; gcell[5] += dBR;
        gcell[6] += dAH; gcell[7] += dUH; gcell[8] += dBH;
        // The summary is the column mean of this layer's input at step t.
        const n = seq.nNodes;
        const dInT = dIn[t];
        const inCols = dInT.cols;
        for (let p = 0; p < rows; p++) {
          const contribution = dMean[p] / n;
          for (let v = 0; v < n; v++) dInT.data[v * inCols + p] += contribution;
        }
      }
    }

    // Step 0 weights are the base parameters themselves.
    const dBase = dWConv[0].data;
    for (let k = 0; k < wLen; k++) dBase[k] += dWRun[k];
    if (cfg.variant === "O") {
      // The initial LSTM state is atanh(clamp(base)); fold its gradient in.
      const base = w.conv[l].data;
      for (let k = 0; k < wLen; k++) {
        if (Math.abs(base[k]) < CLAMP) dBase[k] += dCRun[k] / (1 - base[k] * base[k]);
      }
      dCRun.fill(0);
    }
    axpy(1, dBase, grads.conv[l].data);

    // The gradient into this layer's input drives the next layer down.
    for (let t = 0; t < T; t++) dTop[t] = dIn[t];
  }
}

// ---------------------------------------------------------------------------
// Fast inference path
// ---------------------------------------------------------------------------

export interface Predictor {
  (seq: GraphSequence): number;
}

/**
 * Build a reusable predictor with preallocated scratch buffers. For variant O
 * the weight trajectory is data-independent and computed once here, which is
 * what makes served evaluations cheap.
 */
export function makePredictor(
  w: Weights,
  cfg: ModelConfig,
  pairs: readonly Pair[],
  nNodes: number,
  nSteps: number,
): Predictor {
  const L = cfg.gcnLayers;
  const h = cfg.hidden;
  const f = cfg.fcHidden;
  const p = pairs.length;
  const evalSlope = (cfg.rreluLow + cfg.rreluHigh) / 2;
  const fixedTrajectory = cfg.variant === "O" ? trajectoryO(w, cfg, nSteps) : null;

  // Scratch reused across calls and steps.
  const zBuf: Matrix[] = [];
  const actBuf: Matrix[] = [];
  for (let l = 0; l < L; l++) {
    zBuf.push(zeros(nNodes, l === 0 ? cfg.featureDim : h));
    actBuf.push(zeros(nNodes, h));
  }
  const preBuf = zeros(nNodes, h);
  const concatBuf = zeros(p, 2 * h);
  const f1Buf = zeros(p, f);
  const f2Buf = zeros(p, f);
  const outBuf = zeros(p, 1);
  const xBuf = zeros(nNodes, cfg.featureDim);
  const gruW: Matrix[] = [];
  const gruS = new Float64Array(Math.max(...w.conv.map((m) => m.data.length)));
  for (let l = 0; l < L; l++) gruW.push(zeros(w.conv[l].rows, w.conv[l].cols));

  return (seq: GraphSequence): number => {
    if (seq.nNodes !== nNodes || seq.nSteps !== nSteps) {
      throw new Error(
        `sequence is ${seq.nNodes} nodes x ${seq.nSteps} steps, ` +
          `predictor expects ${nNodes}x${nSteps}`,
      );
    }
    // Same input conditioning as forwardSample, into a reused buffer.
    xBuf.data.set(seq.features.data);
    if (xBuf.cols > DEGREE_COLUMN) {
      for (let v = 0; v < xBuf.rows; v++) xBuf.data[v * xBuf.cols + DEGREE_COLUMN] *= nSteps;
    }
    let total = 0;
    for (let t = 0; t < nSteps; t++) {
      let hIn = xBuf;
      for (let l = 0; l < L; l++) {
        let wT: Matrix;
        if (fixedTrajectory) {
          wT = fixedTrajectory[l][t];
        } else if (t === 0) {
          gruW[l].data.set(w.conv[l].data);
          wT = gruW[l];
        } else {
          inputSummary(hIn, w.conv[l].rows, w.conv[l].cols, gruS);
          gruStep(w.cell[l], gruW[l].data, gruS, gruW[l].data, null);
          wT = gruW[l];
        }
        spmmInto(seq.adj[t], hIn, zBuf[l]);
        matmulInto(zBuf[l], wT, preBuf);
        const act = actBuf[l];
        for (let k = 0; k < preBuf.data.length; k++) {
          const x = preBuf.data[k];
          act.data[k] = x >= 0 ? x : evalSlope * x;
        }
        hIn = act;
      }
      for (let q = 0; q < p; q++) {
        const [src, dst] = pairs[q];
        concatBuf.data.set(hIn.data.subarray(src * h, (src + 1) * h), q * 2 * h);
        concatBuf.data.set(hIn.data.subarray(dst * h, (dst + 1) * h), q * 2 * h + h);
      }
      addBiasRow(matmulInto(concatBuf, w.fc1, f1Buf), w.b1);
      for (let k = 0; k < f1Buf.data.length; k++) f1Buf.data[k] = Math.max(0, f1Buf.data[k]);
      addBiasRow(matmulInto(f1Buf, w.fc2, f2Buf), w.b2);
      for (let k = 0; k < f2Buf.data.length; k++) f2Buf.data[k] = Math.max(0, f2Buf.data[k]);
      addBiasRow(matmulInto(f2Buf, w.fc3, outBuf), w.b3);
      for (let q = 0; q < p; q++) total += outBuf.data[q];
    }
    return total / (p * nSteps);
  };
}

/** Single-shot convenience wrapper over the tape-free predictor path. */
export function predict(
  seq: GraphSequence,
  pairs: readonly Pair[],
  w: Weights,
  cfg: ModelConfig,
): number {
  return forwardSample(seq, pairs, w, cfg, "eval").pred;
}
