/** Training-file parsing and example packing with prompt-masked targets. */

import * as fs from "node:fs";
import { BOS, WordTokenizer } from "./tokenizer.js";

export interface RawExample {
  prompt: string;
  completion: string;
  recordId: string;
  round: number;
}

export class SchemaError extends Error {}

/** Parse the line-per-example {prompt, completion, meta} format, strictly. */
export function parseTrainingFile(path: string): RawExample[] {
  let text: string;
  try {
    text = fs.readFileSync(path, "utf-8");
  } catch (err) {
    throw new SchemaError(`cannot read training file ${path}: ${err}`);
  }
  const examples: RawExample[] = [];
  let round: number | null = null;
  const lines = text.split("\n");
  for (let i = 0; i < lines.length; i++) {
    const line = lines[i].trim();
    if (!line) continue;
    const lineNo = i + 1;
    let obj: unknown;
    try {
      obj = JSON.parse(line);
    } catch {
      throw new SchemaError(`line ${lineNo}: invalid JSON`);
    }
    const row = obj as Record<string, unknown>;
    if (typeof row.prompt !== "string" || row.prompt.length === 0) {
      throw new SchemaError(`line ${lineNo}: missing or empty prompt`);
    }
    if (typeof row.completion !== "string" || row.completion.length === 0) {
      throw new SchemaError(`line ${lineNo}: missing or empty completion`);
    }
    const meta = row.meta as Record<string, unknown> | undefined;
    if (!meta || typeof meta !== "object" || !("record_id" in meta) || !("round" in meta)) {
      throw new SchemaError(`line ${lineNo}: meta must carry record_id and round`);
    }
    const rowRound = Number(meta.round);
    if (round === null) {
      round = rowRound;
    } else if (rowRound !== round) {
      throw new SchemaError(`line ${lineNo}: mixed rounds (${rowRound} vs ${round})`);
    }
    examples.push({
      prompt: row.prompt,
      completion: row.completion,
      recordId: String(meta.record_id),
      round: rowRound,
    });
  }
  if (examples.length === 0) {
    throw new SchemaError("training file has no examples");
  }
  return examples;
}

export interface PackedExample {
  /** Model inputs: [bos, prompt..., completion...] minus the last token. */
  inputs: number[];
  /** Next-token targets aligned with inputs. */
  targets: number[];
  /** 1 where the target is a completion token (the only loss positions). */
  mask: number[];
  promptTokens: number;
  completionTokens: number;
  truncated: boolean;
}

/**
 * Tokenize and align one example.
 *
 * Sequences longer than seqLen are cut from the left of the prompt so the
 * template's trailing cue and the whole completion survive; only a
 * completion longer than the window itself gets tail-truncated.
 */
export function packExample(
  tokenizer: WordTokenizer,
  prompt: string,
  completion: string,
  seqLen: number
): PackedExample {
  let promptIds = tokenizer.encode(prompt);
  let completionIds = tokenizer.encode(completion);
  let truncated = false;
  if (completionIds.length > seqLen) {
    completionIds = completionIds.slice(0, seqLen);
    truncated = true;
  }
  const maxPrompt = seqLen - completionIds.length;
  if (promptIds.length > maxPrompt) {
    promptIds = promptIds.slice(promptIds.length - maxPrompt);
    truncated = true;
  }
  const tokens = [BOS, ...promptIds, ...completionIds];
  const inputs = tokens.slice(0, -1);
  const targets = tokens.slice(1);
  const mask = targets.map((_, p) => (p >= promptIds.length ? 1 : 0));
  return {
    inputs,
    targets,
    mask,
    promptTokens: promptIds.length,
    completionTokens: completionIds.length,
    truncated,
  };
}
