import { spawn } from "node:child_process";
import type { ChildProcessWithoutNullStreams } from "node:child_process";
import { join } from "node:path";
import { fileURLToPath } from "node:url";

import { Rng, zeros } from "../src/tensor.js";
import { adjacencySequence } from "../src/graph.js";
import type { ContactTriple } from "../src/graph.js";
import {
  backwardSample,
  forwardSample,
  initWeights,
  parameterList,
  zeroGrads,
} from "../src/model.js";
import type { GraphSequence, ModelConfig, Pair, Variant, Weights } from "../src/model.js";

export interface Toy {
  cfg: ModelConfig;
  weights: Weights;
  seq: GraphSequence;
  pairs: Pair[];
}

/** Small 4-node, 3-step instance with generic weights for derivative checks. */
export function toyModel(variant: Variant, seed = 7): Toy {
  const cfg: ModelConfig = {
    gcnLayers: 2,
    hidden: 5,
    fcHidden: 6,
    featureDim: 4,
    variant,
    rreluLow: 0.125,
    rreluHigh: 1 / 3,
    learningRate: 1e-3,
  };
  const rng = new Rng(seed);
  const weights = initWeights(cfg, rng);
  // Nudge the gate parameters off their gentle defaults so every derivative
  // path is exercised at a generic point.
  for (const c of weights.cell) {
    for (let k = 0; k < c.length; k++) c[k] += 0.3 * rng.normal();
  }
  const contacts: ContactTriple[] = [
    [0, 0, 1],
    [0, 2, 3],
    [1, 1, 2],
    [2, 0, 3],
    [2, 1, 2],
  ];
  const features = zeros(4, 4);
  for (let k = 0; k < features.data.length; k++) features.data[k] = rng.normal();
  const seq: GraphSequence = {
    nNodes: 4,
    nSteps: 3,
    adj: adjacencySequence(contacts, 4, 3),
    features,
  };
  return { cfg, weights, seq, pairs: [[0, 2], [1, 3]] };
}

export interface GradcheckResult {
  checked: number;
  worstRel: number;
  worstAt: string;
}

/**
 * Central finite differences against the analytic gradient on randomly chosen
 * parameters. Relative error uses a small absolute floor in the denominator
 * so that near-zero derivatives are compared at the precision finite
 * differences can actually deliver.
 */
export function gradcheck(toy: Toy, trials: number, seed = 99): GradcheckResult {
  const { cfg, weights, seq, pairs } = toy;
  const tape = forwardSample(seq, pairs, weights, cfg, "eval");
  const grads = zeroGrads(weights);
  backwardSample(seq, pairs, weights, cfg, tape, 1.0, grads);

  const params = parameterList(weights);
  const gradArrays = parameterList(grads);
  const rng = new Rng(seed);
  let worstRel = 0;
  let worstAt = "";
  for (let trial = 0; trial < trials; trial++) {
    const p = rng.int(params.length);
    const arr = params[p].array;
    const k = rng.int(arr.length);
    const theta = arr[k];
    const h = 1e-6 * Math.max(1, Math.abs(theta));
    arr[k] = theta + h;
    const fPlus = forwardSample(seq, pairs, weights, cfg, "eval").pred;
    arr[k] = theta - h;
    const fMinus = forwardSample(seq, pairs, weights, cfg, "eval").pred;
    arr[k] = theta;
    const numeric = (fPlus - fMinus) / (2 * h);
    const analytic = gradArrays[p].array[k];
    const rel =
      Math.abs(analytic - numeric) / Math.max(1e-5, Math.abs(analytic) + Math.abs(numeric));
    if (rel > worstRel) {
      worstRel = rel;
      worstAt = `${params[p].name}[${k}] analytic=${analytic} numeric=${numeric}`;
    }
  }
  return { checked: trials, worstRel, worstAt };
}

/** Print one acceptance verdict line to the real stdout. */
export function report(name: string, passed: boolean, detail: string): void {
  process.stdout.write(`[acceptance] ${name}: ${passed ? "PASS" : "FAIL"} (${detail})\n`);
}

export const FRONTEND_ROOT = fileURLToPath(new URL("..", import.meta.url));
export const CLI_PATH = join(FRONTEND_ROOT, "dist", "cli.js");
export const FIXTURES_DIR = join(FRONTEND_ROOT, "fixtures");

/**
 * Line-oriented client around a spawned CLI subprocess: buffers stdout into
 * complete lines and hands them out one at a time, in order.
 */
export class LineClient {
  private buffer = "";
  private lines: string[] = [];
  private waiters: Array<(line: string) => void> = [];
  readonly proc: ChildProcessWithoutNullStreams;
  readonly exited: Promise<number | null>;

  constructor(args: string[]) {
    this.proc = spawn(process.execPath, [CLI_PATH, ...args], { stdio: ["pipe", "pipe", "pipe"] });
    this.proc.stdout.setEncoding("utf8");
    this.proc.stdout.on("data", (chunk: string) => {
      this.buffer += chunk;
      let idx: number;
      while ((idx = this.buffer.indexOf("\n")) >= 0) {
        const line = this.buffer.slice(0, idx);
        this.buffer = this.buffer.slice(idx + 1);
        const waiter = this.waiters.shift();
        if (waiter) waiter(line);
        else this.lines.push(line);
      }
    });
    this.exited = new Promise((resolve) => {
      this.proc.on("exit", (code) => resolve(code));
    });
  }

  send(message: unknown): void {
    this.proc.stdin.write(JSON.stringify(message) + "\n");
  }

  sendRaw(line: string): void {
    this.proc.stdin.write(line + "\n");
  }

  nextLine(timeoutMs = 15000): Promise<string> {
    const queued = this.lines.shift();
    if (queued !== undefined) return Promise.resolve(queued);
    return new Promise((resolve, reject) => {
      const timer = setTimeout(
        () => reject(new Error("timed out waiting for a reply line")),
        timeoutMs,
      );
      this.waiters.push((line) => {
        clearTimeout(timer);
        resolve(line);
      });
    });
  }

  async next(timeoutMs = 15000): Promise<Record<string, unknown>> {
    return JSON.parse(await this.nextLine(timeoutMs));
  }

  kill(): void {
    this.proc.kill("SIGKILL");
  }
}
