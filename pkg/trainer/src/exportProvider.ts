/**
 * Turn a trained checkpoint into a provider the pipeline can consume.
 *
 * For each conversation in the pairs file, the trained policy scores both
 * candidate rows (margin against the uniform prior implied by zero logits)
 * and the winner becomes that conversation's row-generation completion.
 * The descriptor follows the pipeline's file-provider contract: completions
 * keyed per template by the `conversation_id` binding.
 */

import { mkdirSync, writeFileSync } from "node:fs";
import { join } from "node:path";

import { loadPairs, serializeRow, targetSequence } from "./data.js";
import { BigramPolicy } from "./model.js";
import { loadCheckpoint } from "./train.js";

export interface ExportResult {
  descriptorPath: string;
  completionsPath: string;
  nCompletions: number;
  positiveWins: number;
}

export function exportProvider(
  checkpointDir: string,
  pairsPath: string,
  outDir: string
): ExportResult {
  const { modelId, policy } = loadCheckpoint(checkpointDir);
  const reference = new BigramPolicy(policy.vocab);
  const pairs = loadPairs(pairsPath);

  const completions: Record<string, string> = {};
  let positiveWins = 0;
  for (const pair of pairs) {
    const scoreOf = (side: "positive" | "negative") => {
      const ids = policy.vocab.encode(targetSequence(pair, side));
      return policy.sequenceLogProb(ids) - reference.sequenceLogProb(ids);
    };
    const chosen = scoreOf("positive") >= scoreOf("negative") ? "positive" : "negative";
    if (chosen === "positive") positiveWins += 1;
    completions[pair.conversationId] = serializeRow(pair[chosen]);
  }

  mkdirSync(outDir, { recursive: true });
  const completionsPath = join(outDir, "completions.json");
  writeFileSync(completionsPath, JSON.stringify({ generate_row: completions }, null, 2));

  const descriptorPath = join(outDir, "provider_descriptor.json");
  writeFileSync(
    descriptorPath,
    JSON.stringify(
      {
        provider: "file",
        model_id: modelId,
        lookup_binding: "conversation_id",
        completions: "completions.json",
      },
      null,
      2
    )
  );
  return {
    descriptorPath,
    completionsPath,
    nCompletions: Object.keys(completions).length,
    positiveWins,
  };
}
