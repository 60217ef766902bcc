/** Held-out evaluation: mean completion-token loss, no updates. */

import { packExample, parseTrainingFile } from "./data.js";
import { isModelFile, loadModel } from "./io.js";
import { resolveBase } from "./train.js";

export interface EvalOptions {
  evalFile: string;
  modelPath?: string;
  baseModel?: string;
  /** Vocabulary source when evaluating an untrained base (no saved vocab yet). */
  trainFile?: string;
  seqLen?: number;
  seed?: number;
}

export interface EvalOutcome {
  mean_completion_loss: number;
  examples: number;
  target_tokens: number;
}

export function evaluateHeldout(options: EvalOptions): EvalOutcome {
  const seqLen = options.seqLen ?? 512;
  let model;
  let tokenizer;
  if (options.modelPath) {
    if (!isModelFile(options.modelPath)) {
      throw new Error(`model file not found: ${options.modelPath}`);
    }
    ({ model, tokenizer } = loadModel(options.modelPath));
  } else if (options.baseModel && options.trainFile) {
    const vocabExamples = parseTrainingFile(options.trainFile);
    ({ model, tokenizer } = resolveBase(options.baseModel, seqLen, options.seed ?? 0, () =>
      vocabExamples.flatMap((ex) => [ex.prompt, ex.completion])
    ));
  } else {
    throw new Error("evaluation needs --model, or --base-model together with --train-file");
  }

  const examples = parseTrainingFile(options.evalFile);
  const effSeqLen = Math.min(seqLen, model.cfg.maxSeq);
  const packed = examples.map((ex) => packExample(tokenizer, ex.prompt, ex.completion, effSeqLen));
  const { loss, maskedTokens } = model.batchLoss(packed, false);
  return {
    mean_completion_loss: loss,
    examples: examples.length,
    target_tokens: maskedTokens,
  };
}
