/**
 * Tiny trainable policy: a character bigram language model.
 *
 * Parameters are a dense V x V logit table; the probability of a sequence
 * is the product of softmax transitions from the previous character (BOS
 * for the first). Small enough to train in milliseconds, expressive enough
 * to separate clean rows from corrupted ones.
 */

import { BOS, Vocab } from "./tokenizer.js";

export class BigramPolicy {
  readonly vocab: Vocab;
  readonly logits: Float64Array;

  constructor(vocab: Vocab, logits?: Float64Array) {
    this.vocab = vocab;
    const size = vocab.size * vocab.size;
    if (logits !== undefined && logits.length !== size) {
      throw new Error(`logits length ${logits.length} != ${size}`);
    }
    this.logits = logits ?? new Float64Array(size);
  }

  clone(): BigramPolicy {
    return new BigramPolicy(this.vocab, Float64Array.from(this.logits));
  }

  /** Log-softmax over the next-character distribution for one state. */
  rowLogProbs(state: number): Float64Array {
    const v = this.vocab.size;
    const row = this.logits.subarray(state * v, (state + 1) * v);
    let max = -Infinity;
    for (let i = 0; i < v; i++) {
      if (row[i] > max) max = row[i];
    }
    let sum = 0;
    for (let i = 0; i < v; i++) {
      sum += Math.exp(row[i] - max);
    }
    const logZ = max + Math.log(sum);
    const out = new Float64Array(v);
    for (let i = 0; i < v; i++) {
      out[i] = row[i] - logZ;
    }
    return out;
  }

  sequenceLogProb(ids: Int32Array): number {
    let state = BOS;
    let total = 0;
    // Cache per-state rows; sequences revisit few distinct states.
    const cache = new Map<number, Float64Array>();
    for (const id of ids) {
      let row = cache.get(state);
      if (row === undefined) {
        row = this.rowLogProbs(state);
        cache.set(state, row);
      }
      total += row[id];
      state = id;
    }
    return total;
  }

  /**
   * Accumulate d(logP(ids))/d(logits) into `grad`, scaled by `sign`.
   *
   * For each visited state s: grad_row(s) += sign * (counts_s - N_s * p_s),
   * the exact softmax gradient aggregated over the sequence.
   */
  accumulateSequenceGrad(
    ids: Int32Array,
    sign: number,
    grad: Map<number, Float64Array>
  ): void {
    const v = this.vocab.size;
    const counts = new Map<number, Float64Array>();
    const visits = new Map<number, number>();
    let state = BOS;
    for (const id of ids) {
      let row = counts.get(state);
      if (row === undefined) {
        row = new Float64Array(v);
        counts.set(state, row);
      }
      row[id] += 1;
      visits.set(state, (visits.get(state) ?? 0) + 1);
      state = id;
    }
    for (const [s, countRow] of counts) {
      const logProbs = this.rowLogProbs(s);
      const n = visits.get(s)!;
      let gradRow = grad.get(s);
      if (gradRow === undefined) {
        gradRow = new Float64Array(v);
        grad.set(s, gradRow);
      }
      for (let i = 0; i < v; i++) {
        gradRow[i] += sign * (countRow[i] - n * Math.exp(logProbs[i]));
      }
    }
  }

  /** In-place gradient-descent step over the touched rows. */
  applyGrad(grad: Map<number, Float64Array>, scale: number): void {
    const v = this.vocab.size;
    for (const [s, gradRow] of grad) {
      const offset = s * v;
      for (let i = 0; i < v; i++) {
        this.logits[offset + i] += scale * gradRow[i];
      }
    }
  }

  toJSON(): { chars: string[]; logits: number[] } {
    return { chars: this.vocab.chars, logits: Array.from(this.logits) };
  }

  static fromJSON(payload: { chars: string[]; logits: number[] }): BigramPolicy {
    const vocab = Vocab.fromChars(payload.chars);
    return new BigramPolicy(vocab, Float64Array.from(payload.logits));
  }
}
