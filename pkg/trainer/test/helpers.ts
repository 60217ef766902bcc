/** Toy dataset: a fixed revision-style transform over a small closed vocabulary. */

import * as fs from "node:fs";
import * as path from "node:path";

const COLORS = ["crimson", "amber", "teal", "violet", "indigo", "coral", "olive", "maroon"];
const ANIMALS = ["otter", "falcon", "badger", "lynx", "heron", "marmot", "gecko", "bison"];

export function toyPrompt(item: number, color: string, animal: string): string {
  return (
    `Below is an instruction and its response . ` +
    `Instruction : describe item item${item} with its colour and animal . ` +
    `Response : the ${color} ${animal} entry . ` +
    `Criteria : entries must mention the colour and the animal clearly . ` +
    `The revised response is :`
  );
}

export function toyCompletion(color: string, animal: string): string {
  return `revised : the ${color} ${animal} entry is approved [ ok ]`;
}

export interface ToyFiles {
  trainFile: string;
  evalFile: string;
  trainCompletions: string[];
  evalCompletions: string[];
}

export function writeToyFiles(dir: string, trainCount = 50, evalCount = 14): ToyFiles {
  fs.mkdirSync(dir, { recursive: true });
  const trainRows: string[] = [];
  const trainCompletions: string[] = [];
  for (let i = 0; i < trainCount; i++) {
    const color = COLORS[i % COLORS.length];
    const animal = ANIMALS[Math.floor(i / COLORS.length) % ANIMALS.length];
    const completion = toyCompletion(color, animal);
    trainCompletions.push(completion);
    trainRows.push(
      JSON.stringify({
        prompt: toyPrompt(i, color, animal),
        completion,
        meta: { record_id: `toy${i}`, round: 1 },
      })
    );
  }
  const evalRows: string[] = [];
  const evalCompletions: string[] = [];
  for (let j = 0; j < evalCount; j++) {
    const i = trainCount + j;
    // stay inside the training vocabulary for completion tokens
    const color = COLORS[(i * 5 + 2) % COLORS.length];
    const animal = ANIMALS[(i * 3 + 1) % 7];
    const completion = toyCompletion(color, animal);
    evalCompletions.push(completion);
    evalRows.push(
      JSON.stringify({
        prompt: toyPrompt(i, color, animal),
        completion,
        meta: { record_id: `toy${i}`, round: 1 },
      })
    );
  }
  const trainFile = path.join(dir, "toy_train.jsonl");
  const evalFile = path.join(dir, "toy_eval.jsonl");
  fs.writeFileSync(trainFile, trainRows.join("\n") + "\n");
  fs.writeFileSync(evalFile, evalRows.join("\n") + "\n");
  return { trainFile, evalFile, trainCompletions, evalCompletions };
}

export function wordCount(text: string): number {
  return text.trim().split(/\s+/).length;
}
