/**
 * Preference-pair data: loading the pipeline's pairs.jsonl and serializing
 * rows into the target sequences the policy scores.
 */

import { readFileSync } from "node:fs";

export interface RowPayload {
  conversation_id: string;
  metadata_version: number;
  cells: Record<string, unknown>;
  flags?: Record<string, { sem: boolean; struct: boolean }>;
}

export interface PreferencePair {
  conversationId: string;
  positive: RowPayload;
  negative: RowPayload;
  modes: string[];
  seed: number;
}

export function loadPairs(path: string): PreferencePair[] {
  const text = readFileSync(path, "utf-8");
  const pairs: PreferencePair[] = [];
  const lines = text.split("\n");
  for (let i = 0; i < lines.length; i++) {
    const line = lines[i].trim();
    if (!line) continue;
    let payload: any;
    try {
      payload = JSON.parse(line);
    } catch (err) {
      throw new Error(`pairs file line ${i + 1}: invalid JSON (${(err as Error).message})`);
    }
    for (const key of ["conversation_id", "positive", "negative"]) {
      if (!(key in payload)) {
        throw new Error(`pairs file line ${i + 1}: missing ${key}`);
      }
    }
    pairs.push({
      conversationId: String(payload.conversation_id),
      positive: payload.positive as RowPayload,
      negative: payload.negative as RowPayload,
      modes: Array.isArray(payload.modes) ? payload.modes.map(String) : [],
      seed: Number(payload.seed ?? 0),
    });
  }
  if (pairs.length === 0) {
    throw new Error(`pairs file is empty: ${path}`);
  }
  return pairs;
}

/** Canonical target sequence: the row cells as JSON with sorted keys. */
export function serializeRow(row: RowPayload): string {
  const sorted: Record<string, unknown> = {};
  for (const key of Object.keys(row.cells).sort()) {
    sorted[key] = row.cells[key] ?? null;
  }
  return JSON.stringify({ row: sorted });
}

/**
 * Conditioning prefix shared by both sides of a pair: the conversation id
 * and the schema columns. Identical for positive and negative, so it
 * cancels in the preference margin while still steering the model state.
 */
export function contextOf(pair: PreferencePair): string {
  const columns = Object.keys(pair.positive.cells).sort().join(",");
  return `ctx ${pair.conversationId} | cols ${columns}\n`;
}

export function targetSequence(pair: PreferencePair, side: "positive" | "negative"): string {
  return contextOf(pair) + serializeRow(pair[side]);
}

export interface SplitPairs {
  train: PreferencePair[];
  held: PreferencePair[];
}

/** Deterministic tail split; at least one pair stays in training. */
export function splitPairs(pairs: PreferencePair[], evalSplit: number): SplitPairs {
  if (!(evalSplit > 0 && evalSplit < 1)) {
    throw new RangeError(`evalSplit must be in (0, 1), got ${evalSplit}`);
  }
  const heldCount = Math.min(pairs.length - 1, Math.max(1, Math.round(pairs.length * evalSplit)));
  return {
    train: pairs.slice(0, pairs.length - heldCount),
    held: pairs.slice(pairs.length - heldCount),
  };
}
