import { mkdtempSync, writeFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";

/**
 * A separable preference set: positive rows hold clean lowercase values,
 * negative rows are corrupted with characters that never appear in any
 * positive, so a character-level policy can split them.
 */
export function writeSeparablePairs(count = 16): string {
  const dir = mkdtempSync(join(tmpdir(), "trainer-fixture-"));
  const path = join(dir, "pairs.jsonl");
  const topics = [
    "printer", "camera", "battery", "network", "monitor", "keyboard",
    "speaker", "display", "storage", "cooling", "firmware", "charger",
    "adapter", "headset", "trackpad", "antenna",
  ];
  const lines: string[] = [];
  for (let i = 0; i < count; i++) {
    const topic = topics[i % topics.length];
    const positive = {
      conversation_id: `conv${String(i).padStart(2, "0")}`,
      metadata_version: 1,
      cells: { topic, status: "resolved", detail: `${topic} works after restart` },
      flags: {
        topic: { sem: true, struct: true },
        status: { sem: true, struct: true },
        detail: { sem: true, struct: true },
      },
    };
    const negative = {
      ...positive,
      cells: {
        topic: `@@${topic.toUpperCase()}@@`,
        status: "###",
        detail: `!!${topic.toUpperCase()}!! ??`,
      },
    };
    lines.push(
      JSON.stringify({
        conversation_id: positive.conversation_id,
        positive,
        negative,
        modes: ["hallucinate"],
        seed: i,
      })
    );
  }
  writeFileSync(path, lines.join("\n") + "\n");
  return path;
}
