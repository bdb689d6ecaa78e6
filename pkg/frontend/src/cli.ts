#!/usr/bin/env node
/**
 * Command-line entry point.
 *
 *   cpd-surrogate train --corpus data.ndjson --scenario scenario.json --out ckpt/
 *   cpd-surrogate serve --checkpoint ckpt/
 *
 * `train` fits the model on a labeled evaluation corpus and writes a
 * checkpoint directory; progress goes to stderr and a final metrics JSON
 * object to stdout. `serve` loads a checkpoint and speaks the line-delimited
 * JSON evaluation protocol on stdio until told to shut down.
 *
 * Exit codes: 0 success, 2 usage error, 3 unreadable or invalid input files.
 */

import { parseArgs } from "node:util";

import { DEFAULT_CONFIG } from "./model.js";
import type { ModelConfig, Variant } from "./model.js";
import { loadCorpus, loadScenario, toSequence } from "./data.js";
import { train } from "./train.js";
import type { Sample } from "./train.js";
import { loadCheckpoint, saveCheckpoint } from "./checkpoint.js";
import { serveStdio } from "./serve.js";

const USAGE = `usage:
  cpd-surrogate train --corpus <ndjson> --scenario <json> --out <dir>
                      [--variant O|H] [--layers N] [--hidden N] [--fc-hidden N]
                      [--lr X] [--epochs N] [--batch N] [--seed N]
                      [--split-seed N] [--max-seconds N] [--loss-csv <path>]
  cpd-surrogate serve --checkpoint <dir>
`;

class UsageError extends Error {}

function requireOption(value: string | undefined, name: string): string {
  if (value === undefined) throw new UsageError(`missing required option --${name}`);
  return value;
}

function toInt(value: string, name: string): number {
  const parsed = Number(value);
  if (!Number.isInteger(parsed)) throw new UsageError(`--${name} must be an integer`);
  return parsed;
}

function toNumber(value: string, name: string): number {
  const parsed = Number(value);
  if (!Number.isFinite(parsed)) throw new UsageError(`--${name} must be a number`);
  return parsed;
}

function runTrain(argv: string[]): number {
  const { values } = parseArgs({
    args: argv,
    options: {
      corpus: { type: "string" },
      scenario: { type: "string" },
      out: { type: "string" },
      variant: { type: "string" },
      layers: { type: "string" },
      hidden: { type: "string" },
      "fc-hidden": { type: "string" },
      lr: { type: "string" },
      epochs: { type: "string" },
      batch: { type: "string" },
      seed: { type: "string" },
      "split-seed": { type: "string" },
      "max-seconds": { type: "string" },
      "loss-csv": { type: "string" },
    },
  });

  const corpusPath = requireOption(values.corpus, "corpus");
  const scenarioPath = requireOption(values.scenario, "scenario");
  const outDir = requireOption(values.out, "out");

  const variant = values.variant ?? DEFAULT_CONFIG.variant;
  if (variant !== "O" && variant !== "H") {
    throw new UsageError(`--variant must be O or H, got ${JSON.stringify(values.variant)}`);
  }
  const cfg: ModelConfig = {
    ...DEFAULT_CONFIG,
    variant: variant as Variant,
    gcnLayers: values.layers ? toInt(values.layers, "layers") : DEFAULT_CONFIG.gcnLayers,
    hidden: values.hidden ? toInt(values.hidden, "hidden") : DEFAULT_CONFIG.hidden,
    fcHidden: values["fc-hidden"] ? toInt(values["fc-hidden"], "fc-hidden") : DEFAULT_CONFIG.fcHidden,
    learningRate: values.lr ? toNumber(values.lr, "lr") : DEFAULT_CONFIG.learningRate,
  };
  if (cfg.gcnLayers < 1 || cfg.hidden < 1 || cfg.fcHidden < 1) {
    throw new UsageError("--layers, --hidden, and --fc-hidden must be positive");
  }

  const epochs = values.epochs ? toInt(values.epochs, "epochs") : 60;
  const batchSize = values.batch ? toInt(values.batch, "batch") : 8;
  const seed = values.seed ? toInt(values.seed, "seed") : 0;
  const splitSeed = values["split-seed"] ? toInt(values["split-seed"], "split-seed") : 0;
  const maxSeconds = values["max-seconds"]
    ? toNumber(values["max-seconds"], "max-seconds")
    : undefined;
  if (epochs < 1 || batchSize < 1) throw new UsageError("--epochs and --batch must be positive");

  const startedAt = Date.now();
  const scenario = loadScenario(scenarioPath);
  const records = loadCorpus(corpusPath, scenario.nNodes, scenario.stepCount);
  const refs = new Set(records.map((r) => r.scenarioRef));
  if (refs.size > 1) {
    throw new Error(`corpus mixes records from ${refs.size} different scenarios`);
  }
  process.stderr.write(
    `loaded ${records.length} records over ${scenario.nNodes} nodes x ` +
      `${scenario.stepCount} steps (${scenario.pairs.length} readout pairs)\n`,
  );
  const samples: Sample[] = records.map((record) => ({
    seq: toSequence(record, scenario.nNodes, scenario.stepCount),
    label: record.label,
  }));

  const horizonMinutes = (scenario.stepCount * scenario.stepSeconds) / 60;
  const result = train(samples, scenario.pairs, cfg, horizonMinutes, {
    epochs,
    batchSize,
    seed,
    splitSeed,
    maxSeconds,
    lossCsvPath: values["loss-csv"],
    log: (line) => process.stderr.write(line + "\n"),
  });

  saveCheckpoint(outDir, cfg, scenario, records[0].scenarioRef, result.weights);
  process.stderr.write(`checkpoint written to ${outDir}\n`);

  const summary = {
    epochs_run: result.epochsRun,
    stopped_early: result.stoppedEarly,
    train_l1: result.trainLoss[result.trainLoss.length - 1] ?? null,
    val_l1: result.valLoss[result.valLoss.length - 1] ?? null,
    held_out: {
      count: result.metrics.count,
      mae_normalized: result.metrics.maeNormalized,
      mae_minutes: result.metrics.maeMinutes,
      spearman: result.metrics.spearman,
      label_min: result.metrics.labelMin,
      label_max: result.metrics.labelMax,
    },
    seconds: (Date.now() - startedAt) / 1000,
  };
  process.stdout.write(JSON.stringify(summary) + "\n");
  return 0;
}

function runServe(argv: string[]): number {
  const { values } = parseArgs({
    args: argv,
    options: { checkpoint: { type: "string" } },
  });
  const dir = requireOption(values.checkpoint, "checkpoint");
  const checkpoint = loadCheckpoint(dir);
  process.stderr.write(
    `serving ${checkpoint.config.variant}-variant model over ` +
      `${checkpoint.scenario.nNodes} nodes x ${checkpoint.scenario.stepCount} steps\n`,
  );
  serveStdio(checkpoint);
  return 0;
}

function main(): void {
  const [, , command, ...rest] = process.argv;
  try {
    if (command === "train") {
      process.exitCode = runTrain(rest);
    } else if (command === "serve") {
      process.exitCode = runServe(rest);
    } else if (command === "--help" || command === "-h" || command === "help") {
      process.stdout.write(USAGE);
      process.exitCode = 0;
    } else {
      process.stderr.write(USAGE);
      process.exitCode = 2;
    }
  } catch (err) {
    const code = (err as { code?: string }).code ?? "";
    if (err instanceof UsageError || code.startsWith("ERR_PARSE_ARGS")) {
      process.stderr.write(`error: ${(err as Error).message}\n${USAGE}`);
      process.exitCode = 2;
    } else {
      process.stderr.write(`error: ${(err as Error).message}\n`);
      process.exitCode = 3;
    }
  }
}

main();
