/** Word-level tokenizer: whitespace-split tokens over a fixed vocabulary. */

export const PAD = 0;
export const UNK = 1;
export const BOS = 2;
const SPECIALS = ["<pad>", "<unk>", "<bos>"];

export function splitWords(text: string): string[] {
  const trimmed = text.trim();
  return trimmed ? trimmed.split(/\s+/) : [];
}

export class WordTokenizer {
  readonly vocab: string[];
  private readonly index: Map<string, number>;

  constructor(vocab: string[]) {
    this.vocab = vocab;
    this.index = new Map(vocab.map((token, i) => [token, i]));
    for (let i = 0; i < SPECIALS.length; i++) {
      if (vocab[i] !== SPECIALS[i]) {
        throw new Error(`vocabulary must start with the special tokens ${SPECIALS.join(", ")}`);
      }
    }
  }

  /** Vocabulary = specials + sorted unique words seen in the given texts. */
  static build(texts: string[]): WordTokenizer {
    const words = new Set<string>();
    for (const text of texts) {
      for (const word of splitWords(text)) {
        words.add(word);
      }
    }
    return new WordTokenizer([...SPECIALS, ...[...words].sort()]);
  }

  get size(): number {
    return this.vocab.length;
  }

  encode(text: string): number[] {
    return splitWords(text).map((word) => this.index.get(word) ?? UNK);
  }
}
