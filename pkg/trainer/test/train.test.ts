import { mkdtempSync, readFileSync, writeFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";

import { describe, expect, it } from "vitest";

import { loadPairs, serializeRow, splitPairs, targetSequence } from "../src/data.js";
import { DEFAULT_CONFIG, loadCheckpoint, saveCheckpoint, train, validateConfig } from "../src/train.js";
import { writeSeparablePairs } from "./fixtures.js";

function config(pairsPath: string, overrides: Partial<Parameters<typeof train>[0]> = {}) {
  return { ...DEFAULT_CONFIG, pairsPath, steps: 120, learningRate: 0.5, ...overrides };
}

describe("data loading", () => {
  it("loads one pair per line and serializes rows with sorted keys", () => {
    const path = writeSeparablePairs(4);
    const pairs = loadPairs(path);
    expect(pairs).toHaveLength(4);
    const serialized = serializeRow(pairs[0].positive);
    const parsed = JSON.parse(serialized);
    expect(Object.keys(parsed.row)).toEqual([...Object.keys(parsed.row)].sort());
  });

  it("shares the conditioning prefix between both sides of a pair", () => {
    const pairs = loadPairs(writeSeparablePairs(2));
    const pos = targetSequence(pairs[0], "positive");
    const neg = targetSequence(pairs[0], "negative");
    const prefixEnd = pos.indexOf("\n") + 1;
    expect(pos.slice(0, prefixEnd)).toBe(neg.slice(0, prefixEnd));
    expect(pos.slice(0, prefixEnd)).toContain(pairs[0].conversationId);
  });

  it("splits deterministically with at least one training pair", () => {
    const pairs = loadPairs(writeSeparablePairs(10));
    const { train: trainPairs, held } = splitPairs(pairs, 0.2);
    expect(trainPairs.length).toBe(8);
    expect(held.length).toBe(2);
    expect(splitPairs(pairs, 0.2).held.map((p) => p.conversationId)).toEqual(
      held.map((p) => p.conversationId)
    );
  });
});

describe("config validation", () => {
  it("rejects non-positive beta", () => {
    expect(() => validateConfig(config("x", { beta: 0 }))).toThrow(/beta/);
    expect(() => validateConfig(config("x", { beta: -1 }))).toThrow(/beta/);
  });

  it("rejects a degenerate eval split", () => {
    expect(() => validateConfig(config("x", { evalSplit: 0 }))).toThrow(/evalSplit/);
    expect(() => validateConfig(config("x", { evalSplit: 1 }))).toThrow(/evalSplit/);
  });
});

describe("training", () => {
  it("drives smoothed loss down and separates held-out pairs", () => {
    const result = train(config(writeSeparablePairs(16)));
    expect(result.metrics.finalSmoothedLoss).toBeLessThan(
      result.metrics.initialSmoothedLoss
    );
    expect(result.metrics.heldOutAccuracy).toBeGreaterThan(0.5);
    expect(result.metrics.lossCurve).toHaveLength(120);
  });

  it("keeps the frozen reference bit-identical", () => {
    const result = train(config(writeSeparablePairs(8), { steps: 60 }));
    const untouched = Array.from(result.reference.logits).every((v) => v === 0);
    expect(untouched).toBe(true);
    expect(Array.from(result.policy.logits).some((v) => v !== 0)).toBe(true);
  });

  it("is deterministic for a fixed seed", () => {
    const path = writeSeparablePairs(8);
    const a = train(config(path, { steps: 40, seed: 11 }));
    const b = train(config(path, { steps: 40, seed: 11 }));
    expect(a.metrics).toEqual(b.metrics);
    expect(Array.from(a.policy.logits)).toEqual(Array.from(b.policy.logits));
  });

  it("rejects an empty pairs file", () => {
    const dir = mkdtempSync(join(tmpdir(), "trainer-empty-"));
    const path = join(dir, "pairs.jsonl");
    writeFileSync(path, "");
    expect(() => train(config(path))).toThrow(/empty/);
  });

  it("round-trips checkpoints and writes metrics", () => {
    const result = train(config(writeSeparablePairs(8), { steps: 30 }));
    const dir = mkdtempSync(join(tmpdir(), "trainer-ckpt-"));
    saveCheckpoint(dir, result);
    const checkpoint = loadCheckpoint(dir);
    expect(checkpoint.modelId).toBe(DEFAULT_CONFIG.modelId);
    expect(Array.from(checkpoint.policy.logits)).toEqual(
      Array.from(result.policy.logits)
    );
    const metrics = JSON.parse(readFileSync(join(dir, "train_metrics.json"), "utf-8"));
    expect(metrics.heldOutAccuracy).toBe(result.metrics.heldOutAccuracy);
    expect(metrics.loss_curve).toHaveLength(30);
  });

  it("fails clearly when the checkpoint is missing", () => {
    const dir = mkdtempSync(join(tmpdir(), "trainer-missing-"));
    expect(() => loadCheckpoint(dir)).toThrow(/missing checkpoint/);
  });
});
