/**
 * Command-line entry.
 *
 * Train (the gateway contract):
 *   node dist/cli.js --train-file F --base-model L --out-dir D \
 *        --seq-len 512 --epochs 4 --lr 1e-5 --seed 0
 *
 * Evaluate held-out completion loss:
 *   node dist/cli.js --eval-file F --model M [--seq-len N]
 *   node dist/cli.js --eval-file F --base-model L --train-file F2 [--seq-len N]
 */

import { parseArgs } from "node:util";
import { SchemaError } from "./data.js";
import { evaluateHeldout } from "./evaluate.js";
import { train } from "./train.js";

function fail(message: string): never {
  process.stderr.write(`error: ${message}\n`);
  process.exit(1);
}

function requireNumber(value: string | undefined, flag: string): number {
  if (value === undefined) fail(`missing required flag ${flag}`);
  const parsed = Number(value);
  if (!Number.isFinite(parsed)) fail(`${flag} must be a number, got ${value}`);
  return parsed;
}

function main(): void {
  const { values } = parseArgs({
    options: {
      "train-file": { type: "string" },
      "base-model": { type: "string" },
      "out-dir": { type: "string" },
      "seq-len": { type: "string" },
      epochs: { type: "string" },
      lr: { type: "string" },
      seed: { type: "string" },
      "eval-file": { type: "string" },
      model: { type: "string" },
      "batch-size": { type: "string" },
      device: { type: "string" },
    },
  });

  if (values["eval-file"]) {
    const outcome = evaluateHeldout({
      evalFile: values["eval-file"],
      modelPath: values.model,
      baseModel: values["base-model"],
      trainFile: values["train-file"],
      seqLen: values["seq-len"] ? requireNumber(values["seq-len"], "--seq-len") : undefined,
      seed: values.seed ? requireNumber(values.seed, "--seed") : undefined,
    });
    process.stdout.write(JSON.stringify(outcome) + "\n");
    return;
  }

  if (!values["train-file"]) fail("missing required flag --train-file");
  if (!values["base-model"]) fail("missing required flag --base-model");
  if (!values["out-dir"]) fail("missing required flag --out-dir");
  const outcome = train({
    trainFile: values["train-file"],
    baseModel: values["base-model"],
    outDir: values["out-dir"],
    seqLen: requireNumber(values["seq-len"], "--seq-len"),
    epochs: requireNumber(values.epochs, "--epochs"),
    lr: requireNumber(values.lr, "--lr"),
    seed: requireNumber(values.seed, "--seed"),
    batchSize: values["batch-size"]
      ? requireNumber(values["batch-size"], "--batch-size")
      : undefined,
    device: values.device,
  });
  process.stderr.write(
    `trained round ${outcome.round}: loss ${outcome.metrics.train_loss_initial} -> ` +
      `${outcome.metrics.train_loss_final}\n`
  );
}

try {
  main();
} catch (err) {
  if (err instanceof SchemaError) {
    fail(`training file schema violation: ${err.message}`);
  }
  fail(err instanceof Error ? err.message : String(err));
}
