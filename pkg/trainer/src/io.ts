/** Model persistence and locator semantics.
 *
 * A base-model locator is either a path to a previously saved model (training
 * continues from its weights, adapters included) or an arbitrary identifier,
 * in which case the frozen base is randomly initialized from a seed derived
 * from the string. Saved files store the config, vocabulary, base seed, and
 * only the trainable parameters; frozen weights are regenerated from the seed
 * on load.
 */

import * as fs from "node:fs";
import * as path from "node:path";
import { ModelConfig, TinyCausalLM } from "./model.js";
import { WordTokenizer } from "./tokenizer.js";

const FORMAT = "citing-toy-lm/1";

export interface LoadedModel {
  model: TinyCausalLM;
  tokenizer: WordTokenizer;
  round: number;
  baseSeed: number;
}

export function isModelFile(locator: string): boolean {
  try {
    return fs.statSync(locator).isFile();
  } catch {
    return false;
  }
}

export function saveModel(
  model: TinyCausalLM,
  tokenizer: WordTokenizer,
  baseSeed: number,
  round: number,
  outPath: string
): string {
  const params: Record<string, number[]> = {};
  for (const param of model.params()) {
    params[param.name] = Array.from(param.values);
  }
  const payload = {
    format: FORMAT,
    config: model.cfg,
    vocab: tokenizer.vocab,
    baseSeed,
    round,
    params,
  };
  fs.mkdirSync(path.dirname(outPath), { recursive: true });
  fs.writeFileSync(outPath, JSON.stringify(payload));
  return path.resolve(outPath);
}

export function loadModel(modelPath: string): LoadedModel {
  const payload = JSON.parse(fs.readFileSync(modelPath, "utf-8"));
  if (payload.format !== FORMAT) {
    throw new Error(`${modelPath} is not a ${FORMAT} model file`);
  }
  const cfg = payload.config as ModelConfig;
  const tokenizer = new WordTokenizer(payload.vocab);
  // Adapter seed is irrelevant here: every trainable tensor is overwritten below.
  const model = new TinyCausalLM(cfg, payload.baseSeed, 0);
  for (const param of model.params()) {
    const stored = payload.params[param.name];
    if (!stored || stored.length !== param.values.length) {
      throw new Error(`model file is missing or misshapes parameter ${param.name}`);
    }
    param.values.set(stored);
  }
  return { model, tokenizer, round: payload.round, baseSeed: payload.baseSeed };
}

function sortKeys(value: unknown): unknown {
  if (Array.isArray(value)) return value.map(sortKeys);
  if (value && typeof value === "object") {
    const out: Record<string, unknown> = {};
    for (const key of Object.keys(value as object).sort()) {
      out[key] = sortKeys((value as Record<string, unknown>)[key]);
    }
    return out;
  }
  return value;
}

export function writeJson(filePath: string, obj: unknown): void {
  fs.mkdirSync(path.dirname(filePath), { recursive: true });
  fs.writeFileSync(filePath, JSON.stringify(sortKeys(obj), null, 2) + "\n");
}
