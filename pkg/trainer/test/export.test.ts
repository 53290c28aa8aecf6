import { mkdtempSync, readFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";

import { describe, expect, it } from "vitest";

import { exportProvider } from "../src/exportProvider.js";
import { loadPairs } from "../src/data.js";
import { DEFAULT_CONFIG, saveCheckpoint, train } from "../src/train.js";
import { writeSeparablePairs } from "./fixtures.js";

function trainedCheckpoint(pairsPath: string): string {
  const result = train({
    ...DEFAULT_CONFIG,
    pairsPath,
    steps: 120,
    learningRate: 0.5,
  });
  const dir = mkdtempSync(join(tmpdir(), "trainer-export-ckpt-"));
  saveCheckpoint(dir, result);
  return dir;
}

describe("exportProvider", () => {
  it("writes a descriptor and one completion per conversation", () => {
    const pairsPath = writeSeparablePairs(12);
    const checkpoint = trainedCheckpoint(pairsPath);
    const outDir = mkdtempSync(join(tmpdir(), "trainer-export-out-"));

    const result = exportProvider(checkpoint, pairsPath, outDir);
    expect(result.nCompletions).toBe(12);

    const descriptor = JSON.parse(readFileSync(result.descriptorPath, "utf-8"));
    expect(descriptor.provider).toBe("file");
    expect(descriptor.lookup_binding).toBe("conversation_id");
    expect(descriptor.completions).toBe("completions.json");
    expect(descriptor.model_id).toBe(DEFAULT_CONFIG.modelId);

    const completions = JSON.parse(readFileSync(result.completionsPath, "utf-8"));
    const pairs = loadPairs(pairsPath);
    const ids = pairs.map((p) => p.conversationId);
    expect(Object.keys(completions.generate_row).sort()).toEqual([...ids].sort());
    for (const id of ids) {
      const payload = JSON.parse(completions.generate_row[id]);
      expect(payload).toHaveProperty("row");
      expect(typeof payload.row).toBe("object");
    }
  });

  it("prefers trained-positive rows on the separable set", () => {
    const pairsPath = writeSeparablePairs(12);
    const checkpoint = trainedCheckpoint(pairsPath);
    const outDir = mkdtempSync(join(tmpdir(), "trainer-export-wins-"));
    const result = exportProvider(checkpoint, pairsPath, outDir);
    expect(result.positiveWins / result.nCompletions).toBeGreaterThan(0.5);
  });

  it("fails clearly without a checkpoint", () => {
    const pairsPath = writeSeparablePairs(2);
    const missing = mkdtempSync(join(tmpdir(), "trainer-no-ckpt-"));
    const outDir = mkdtempSync(join(tmpdir(), "trainer-out-"));
    expect(() => exportProvider(missing, pairsPath, outDir)).toThrow(/missing checkpoint/);
  });
});
