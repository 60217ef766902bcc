import { describe, expect, it } from "vitest";
import { BOS, UNK, WordTokenizer } from "../src/tokenizer.js";
import { packExample } from "../src/data.js";

describe("word tokenizer", () => {
  it("builds a sorted vocabulary with specials first", () => {
    const tok = WordTokenizer.build(["b a", "c a"]);
    expect(tok.vocab.slice(0, 3)).toEqual(["<pad>", "<unk>", "<bos>"]);
    expect(tok.vocab.slice(3)).toEqual(["a", "b", "c"]);
  });

  it("encodes unseen words as unk", () => {
    const tok = WordTokenizer.build(["alpha beta"]);
    expect(tok.encode("alpha gamma")).toEqual([tok.encode("alpha")[0], UNK]);
  });

  it("is deterministic across construction order", () => {
    const a = WordTokenizer.build(["x y z"]);
    const b = WordTokenizer.build(["z", "y", "x"]);
    expect(a.vocab).toEqual(b.vocab);
  });
});

describe("example packing", () => {
  const tok = WordTokenizer.build(["p1 p2 p3 c1 c2"]);

  it("masks exactly the completion targets", () => {
    const packed = packExample(tok, "p1 p2 p3", "c1 c2", 32);
    expect(packed.inputs[0]).toBe(BOS);
    expect(packed.promptTokens).toBe(3);
    expect(packed.completionTokens).toBe(2);
    expect(packed.mask).toEqual([0, 0, 0, 1, 1]);
    // masked targets are precisely the completion token ids
    const maskedTargets = packed.targets.filter((_, i) => packed.mask[i] === 1);
    expect(maskedTargets).toEqual(tok.encode("c1 c2"));
  });

  it("left-truncates the prompt, never the completion", () => {
    const packed = packExample(tok, "p1 p2 p3", "c1 c2", 4);
    expect(packed.truncated).toBe(true);
    expect(packed.promptTokens).toBe(2);
    expect(packed.completionTokens).toBe(2);
    const maskedTargets = packed.targets.filter((_, i) => packed.mask[i] === 1);
    expect(maskedTargets).toEqual(tok.encode("c1 c2"));
    // the surviving prompt is its tail
    expect(packed.inputs.slice(1, 3)).toEqual(tok.encode("p2 p3"));
  });
});
