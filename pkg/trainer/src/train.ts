/** Training entry: consumes a prompt/completion file, writes model_ref.json + metrics.json. */

import * as path from "node:path";
import { Adam } from "./adam.js";
import { PackedExample, packExample, parseTrainingFile } from "./data.js";
import { isModelFile, loadModel, saveModel, writeJson } from "./io.js";
import { ModelConfig, TinyCausalLM } from "./model.js";
import { mulberry32, seedFromString, shuffleInPlace } from "./rng.js";
import { WordTokenizer } from "./tokenizer.js";

export interface TrainOptions {
  trainFile: string;
  baseModel: string;
  outDir: string;
  seqLen: number;
  epochs: number;
  lr: number;
  seed: number;
  batchSize?: number;
  device?: string;
}

export interface TrainOutcome {
  modelPath: string;
  metrics: Record<string, number | string>;
  round: number;
}

const DEFAULT_ARCH = {
  dModel: 64,
  nHeads: 2,
  nLayers: 2,
  adapterRank: 8,
  adapterScale: 16,
};

export function resolveBase(
  baseModel: string,
  seqLen: number,
  jobSeed: number,
  vocabTexts: () => string[]
): { model: TinyCausalLM; tokenizer: WordTokenizer; parentRound: number; baseSeed: number } {
  if (isModelFile(baseModel)) {
    const loaded = loadModel(baseModel);
    return {
      model: loaded.model,
      tokenizer: loaded.tokenizer,
      parentRound: loaded.round,
      baseSeed: loaded.baseSeed,
    };
  }
  const tokenizer = WordTokenizer.build(vocabTexts());
  const cfg: ModelConfig = {
    vocabSize: tokenizer.size,
    maxSeq: seqLen,
    ...DEFAULT_ARCH,
  };
  const baseSeed = seedFromString(baseModel);
  return {
    model: new TinyCausalLM(cfg, baseSeed, jobSeed >>> 0),
    tokenizer,
    parentRound: -1,
    baseSeed,
  };
}

export function meanLoss(model: TinyCausalLM, packed: PackedExample[]): number {
  return model.batchLoss(packed, false).loss;
}

export function train(options: TrainOptions): TrainOutcome {
  const started = Date.now();
  const device = options.device ?? "cpu";
  if (device !== "cpu") {
    throw new Error(`unsupported device ${device}; only cpu is available`);
  }
  if (options.epochs < 1 || options.seqLen < 1 || options.lr <= 0) {
    throw new Error("epochs and seq-len must be >= 1 and lr must be > 0");
  }
  const batchSize = options.batchSize ?? 8;

  const examples = parseTrainingFile(options.trainFile);
  const { model, tokenizer, parentRound, baseSeed } = resolveBase(
    options.baseModel,
    options.seqLen,
    options.seed,
    () => examples.flatMap((ex) => [ex.prompt, ex.completion])
  );
  const effSeqLen = Math.min(options.seqLen, model.cfg.maxSeq);

  const packed = examples.map((ex) => packExample(tokenizer, ex.prompt, ex.completion, effSeqLen));
  const maskedPromptTokens = packed.reduce((acc, p) => acc + p.promptTokens, 0);
  const targetTokens = packed.reduce((acc, p) => acc + p.completionTokens, 0);
  const truncatedExamples = packed.filter((p) => p.truncated).length;

  const lossInitial = meanLoss(model, packed);

  const optimizer = new Adam(model.params(), options.lr);
  const order = packed.map((_, i) => i);
  const rng = mulberry32((options.seed ^ 0x5bd1e995) >>> 0);
  for (let epoch = 0; epoch < options.epochs; epoch++) {
    shuffleInPlace(order, rng);
    for (let start = 0; start < order.length; start += batchSize) {
      const batch = order.slice(start, start + batchSize).map((i) => packed[i]);
      model.zeroGrads();
      model.batchLoss(batch, true);
      optimizer.step();
    }
  }

  const lossFinal = meanLoss(model, packed);
  const round = parentRound + 1;
  const modelPath = saveModel(
    model,
    tokenizer,
    baseSeed,
    round,
    path.join(options.outDir, "model.json")
  );

  const metrics: Record<string, number | string> = {
    train_loss_initial: lossInitial,
    train_loss_final: lossFinal,
    examples_seen: options.epochs * examples.length,
    wall_seconds: (Date.now() - started) / 1000,
    masked_prompt_tokens: maskedPromptTokens,
    target_tokens: targetTokens,
    batch_size: batchSize,
    truncated_examples: truncatedExamples,
    adapter_mode: "continued",
    device,
  };
  writeJson(path.join(options.outDir, "model_ref.json"), {
    locator: modelPath,
    parent: options.baseModel,
    round,
  });
  writeJson(path.join(options.outDir, "metrics.json"), metrics);
  return { modelPath, metrics, round };
}
