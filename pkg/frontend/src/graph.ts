/**
 * Graph sequences: contact triples → per-step symmetrically normalized
 * adjacency matrices in compressed sparse row form.
 *
 * With A_t the symmetric contact adjacency of step t and I the identity,
 * each step uses Â_t = D̃^{-1/2} (A_t + I) D̃^{-1/2}, where D̃ is the degree
 * matrix of A_t + I. Â_t is symmetric, so it serves as its own transpose in
 * backpropagation.
 */

import type { Matrix } from "./tensor.js";

/** One step's sparse Â in CSR layout. */
export interface SparseStep {
  n: number;
  rowPtr: Int32Array;
  colIdx: Int32Array;
  values: Float64Array;
}

export type ContactTriple = [step: number, a: number, b: number];

/** Validate raw contact triples against a declared roster. */
export function checkContacts(
  contacts: readonly (readonly number[])[],
  nNodes: number,
  nSteps: number,
): ContactTriple[] {
  const out: ContactTriple[] = [];
  for (const entry of contacts) {
    if (!Array.isArray(entry) || entry.length !== 3) {
      throw new Error(`contact must be a [step, a, b] triple, got ${JSON.stringify(entry)}`);
    }
    const [t, a, b] = entry;
    for (const v of entry) {
      if (!Number.isInteger(v)) throw new Error(`contact fields must be integers, got ${v}`);
    }
    if (t < 0 || t >= nSteps) throw new Error(`contact step ${t} outside [0, ${nSteps})`);
    if (a < 0 || a >= nNodes || b < 0 || b >= nNodes) {
      throw new Error(`contact node outside [0, ${nNodes}): [${t},${a},${b}]`);
    }
    if (a === b) throw new Error(`self-contact at step ${t} on node ${a}`);
    out.push([t, a, b]);
  }
  return out;
}

/** Build the per-step normalized adjacency sequence for one plan. */
export function adjacencySequence(
  contacts: readonly ContactTriple[],
  nNodes: number,
  nSteps: number,
): SparseStep[] {
  const perStep: Array<Array<[number, number]>> = [];
  for (let t = 0; t < nSteps; t++) perStep.push([]);
  for (const [t, a, b] of contacts) perStep[t].push([a, b]);
  return perStep.map((edges) => normalizedStep(edges, nNodes));
}

/** Â for one step from its undirected edge list (duplicates collapse). */
export function normalizedStep(edges: ReadonlyArray<readonly [number, number]>, n: number): SparseStep {
  const neighbors: Array<Set<number>> = [];
  for (let i = 0; i < n; i++) neighbors.push(new Set<number>());
  for (const [a, b] of edges) {
    neighbors[a].add(b);
    neighbors[b].add(a);
  }
  const degree = new Float64Array(n);
  for (let i = 0; i < n; i++) degree[i] = neighbors[i].size + 1; // self-loop included

  let nnz = n;
  for (let i = 0; i < n; i++) nnz += neighbors[i].size;

  const rowPtr = new Int32Array(n + 1);
  const colIdx = new Int32Array(nnz);
  const values = new Float64Array(nnz);
  let k = 0;
  for (let i = 0; i < n; i++) {
    rowPtr[i] = k;
    const cols = [...neighbors[i], i].sort((x, y) => x - y);
    for (const j of cols) {
      colIdx[k] = j;
      values[k] = 1 / Math.sqrt(degree[i] * degree[j]);
      k++;
    }
  }
  rowPtr[n] = k;
  return { n, rowPtr, colIdx, values };
}

/** Sparse·dense product: out = Â·x (out must be preallocated, n×c). */
export function spmmInto(adj: SparseStep, x: Matrix, out: Matrix): Matrix {
  if (x.rows !== adj.n || out.rows !== adj.n || out.cols !== x.cols) {
    throw new Error("spmm shape mismatch");
  }
  const c = x.cols;
  const od = out.data, xd = x.data;
  od.fill(0);
  for (let i = 0; i < adj.n; i++) {
    const or_ = i * c;
    for (let k = adj.rowPtr[i]; k < adj.rowPtr[i + 1]; k++) {
      const v = adj.values[k];
      const xr = adj.colIdx[k] * c;
      for (let j = 0; j < c; j++) od[or_ + j] += v * xd[xr + j];
    }
  }
  return out;
}

export function spmm(adj: SparseStep, x: Matrix): Matrix {
  return spmmInto(adj, x, { rows: adj.n, cols: x.cols, data: new Float64Array(adj.n * x.cols) });
}
