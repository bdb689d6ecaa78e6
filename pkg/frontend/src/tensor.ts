/**
 * Minimal dense linear algebra on flat Float64Array storage.
 *
 * Everything the model needs and nothing more: row-major matrices, a few
 * matmul variants (plain, transposed-A, transposed-B), elementwise helpers,
 * and a seeded PRNG so training runs are reproducible. Double precision is
 * deliberate — the gradient checks compare analytic and finite-difference
 * derivatives at 1e-4 relative tolerance, which single precision cannot hold.
 */

export interface Matrix {
  rows: number;
  cols: number;
  data: Float64Array;
}

export function zeros(rows: number, cols: number): Matrix {
  return { rows, cols, data: new Float64Array(rows * cols) };
}

export function matFrom(rows: number, cols: number, values: ArrayLike<number>): Matrix {
  if (values.length !== rows * cols) {
    throw new Error(`expected ${rows * cols} values, got ${values.length}`);
  }
  return { rows, cols, data: Float64Array.from(values) };
}

export function clone(m: Matrix): Matrix {
  return { rows: m.rows, cols: m.cols, data: m.data.slice() };
}

function shapeCheck(ok: boolean, what: string): void {
  if (!ok) throw new Error(`matrix shape mismatch in ${what}`);
}

/** out = a·b, accumulating into a caller-provided matrix (overwritten). */
export function matmulInto(a: Matrix, b: Matrix, out: Matrix): Matrix {
  shapeCheck(a.cols === b.rows && out.rows === a.rows && out.cols === b.cols, "matmul");
  const m = a.rows, k = a.cols, n = b.cols;
  const ad = a.data, bd = b.data, od = out.data;
  od.fill(0);
  for (let i = 0; i < m; i++) {
    const ar = i * k;
    const or_ = i * n;
    for (let p = 0; p < k; p++) {
      const av = ad[ar + p];
      if (av === 0) continue;
      const br = p * n;
      let j = 0;
      const n4 = n - (n % 4);
      for (; j < n4; j += 4) {
        od[or_ + j] += av * bd[br + j];
        od[or_ + j + 1] += av * bd[br + j + 1];
        od[or_ + j + 2] += av * bd[br + j + 2];
        od[or_ + j + 3] += av * bd[br + j + 3];
      }
      for (; j < n; j++) od[or_ + j] += av * bd[br + j];
    }
  }
  return out;
}

export function matmul(a: Matrix, b: Matrix): Matrix {
  return matmulInto(a, b, zeros(a.rows, b.cols));
}

/** aᵀ·b — the weight-gradient kernel (a: m×k, b: m×n, result k×n). */
export function matmulTA(a: Matrix, b: Matrix): Matrix {
  shapeCheck(a.rows === b.rows, "matmulTA");
  const m = a.rows, k = a.cols, n = b.cols;
  const out = zeros(k, n);
  const ad = a.data, bd = b.data, od = out.data;
  for (let i = 0; i < m; i++) {
    const ar = i * k;
    const br = i * n;
    for (let p = 0; p < k; p++) {
      const av = ad[ar + p];
      if (av === 0) continue;
      const or_ = p * n;
      for (let j = 0; j < n; j++) od[or_ + j] += av * bd[br + j];
    }
  }
  return out;
}

/** a·bᵀ — the input-gradient kernel (a: m×n, b: k×n, result m×k). */
export function matmulTB(a: Matrix, b: Matrix): Matrix {
  shapeCheck(a.cols === b.cols, "matmulTB");
  const m = a.rows, n = a.cols, k = b.rows;
  const out = zeros(m, k);
  const ad = a.data, bd = b.data, od = out.data;
  for (let i = 0; i < m; i++) {
    const ar = i * n;
    const or_ = i * k;
    for (let q = 0; q < k; q++) {
      const br = q * n;
      let acc = 0;
      for (let j = 0; j < n; j++) acc += ad[ar + j] * bd[br + j];
      od[or_ + q] = acc;
    }
  }
  return out;
}

/** y += α·x over raw arrays (shapes assumed equal). */
export function axpy(alpha: number, x: Float64Array, y: Float64Array): void {
  for (let i = 0; i < x.length; i++) y[i] += alpha * x[i];
}

/** Broadcast-add a bias row to every row of m, in place. */
export function addBiasRow(m: Matrix, bias: Float64Array): Matrix {
  if (bias.length !== m.cols) throw new Error("bias width mismatch");
  const d = m.data;
  for (let i = 0; i < m.rows; i++) {
    const r = i * m.cols;
    for (let j = 0; j < m.cols; j++) d[r + j] += bias[j];
  }
  return m;
}

/** Column sums of m (used for bias gradients). */
export function colSums(m: Matrix): Float64Array {
  const out = new Float64Array(m.cols);
  const d = m.data;
  for (let i = 0; i < m.rows; i++) {
    const r = i * m.cols;
    for (let j = 0; j < m.cols; j++) out[j] += d[r + j];
  }
  return out;
}

/**
 * sfc32 PRNG seeded through splitmix32: fast, solid statistical quality for
 * this purpose, and fully deterministic for a given seed.
 */
export class Rng {
  private a: number;
  private b: number;
  private c: number;
  private d: number;
  private spare: number | null = null;

  constructor(seed: number) {
    let s = seed >>> 0;
    const mix = () => {
      s = (s + 0x9e3779b9) >>> 0;
      let z = s;
      z = Math.imul(z ^ (z >>> 16), 0x21f0aaad);
      z = Math.imul(z ^ (z >>> 15), 0x735a2d97);
      return (z ^ (z >>> 15)) >>> 0;
    };
    this.a = mix();
    this.b = mix();
    this.c = mix();
    this.d = mix();
    for (let i = 0; i < 12; i++) this.next();
  }

  /** Uniform in [0, 1). */
  next(): number {
    this.a >>>= 0; this.b >>>= 0; this.c >>>= 0; this.d >>>= 0;
    const t = (this.a + this.b) | 0;
    this.a = this.b ^ (this.b >>> 9);
    this.b = (this.c + (this.c << 3)) | 0;
    this.c = (this.c << 21) | (this.c >>> 11);
    this.d = (this.d + 1) | 0;
    const r = (t + this.d) | 0;
    this.c = (this.c + r) | 0;
    return (r >>> 0) / 4294967296;
  }

  /** Uniform integer in [0, bound). */
  int(bound: number): number {
    return Math.floor(this.next() * bound);
  }

  /** Standard normal via Box-Muller. */
  normal(): number {
    if (this.spare !== null) {
      const v = this.spare;
      this.spare = null;
      return v;
    }
    let u = 0;
    while (u === 0) u = this.next();
    const v = this.next();
    const r = Math.sqrt(-2 * Math.log(u));
    this.spare = r * Math.sin(2 * Math.PI * v);
    return r * Math.cos(2 * Math.PI * v);
  }

  /** Fisher-Yates shuffle, in place. */
  shuffle<T>(items: T[]): T[] {
    for (let i = items.length - 1; i > 0; i--) {
      const j = this.int(i + 1);
      const tmp = items[i];
      items[i] = items[j];
      items[j] = tmp;
    }
    return items;
  }
}

/** Glorot-uniform initialization for a fanIn×fanOut weight matrix. */
export function glorot(rows: number, cols: number, rng: Rng): Matrix {
  const limit = Math.sqrt(6 / (rows + cols));
  const out = zeros(rows, cols);
  for (let i = 0; i < out.data.length; i++) out.data[i] = (rng.next() * 2 - 1) * limit;
  return out;
}
