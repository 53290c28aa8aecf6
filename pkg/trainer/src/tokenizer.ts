/**
 * Character-level vocabulary for the tiny policy model.
 *
 * Index 0 is the start-of-sequence state, index 1 the unknown character.
 * Characters are sorted so a vocabulary built from the same texts is always
 * identical, which keeps training runs reproducible.
 */

export const BOS = 0;
export const UNK = 1;

export class Vocab {
  readonly chars: string[];
  private readonly index: Map<string, number>;

  private constructor(chars: string[]) {
    this.chars = chars;
    this.index = new Map(chars.map((c, i) => [c, i]));
  }

  static build(texts: Iterable<string>): Vocab {
    const seen = new Set<string>();
    for (const text of texts) {
      for (const ch of text) {
        seen.add(ch);
      }
    }
    const chars = ["<bos>", "<unk>", ...[...seen].sort()];
    return new Vocab(chars);
  }

  static fromChars(chars: string[]): Vocab {
    if (chars[0] !== "<bos>" || chars[1] !== "<unk>") {
      throw new Error("vocabulary is missing its reserved entries");
    }
    return new Vocab(chars);
  }

  get size(): number {
    return this.chars.length;
  }

  encode(text: string): Int32Array {
    const ids = new Int32Array([...text].length);
    let i = 0;
    for (const ch of text) {
      ids[i++] = this.index.get(ch) ?? UNK;
    }
    return ids;
  }
}
