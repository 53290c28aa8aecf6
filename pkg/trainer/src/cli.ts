/**
 * Trainer CLI.
 *
 *   node dist/cli.js train  --pairs pairs.jsonl --out ckpt/ [--steps N] [--lr X] [--beta B] [--eval-split F] [--seed S]
 *   node dist/cli.js export --checkpoint ckpt/ --pairs pairs.jsonl --out provider/
 */

import { DEFAULT_CONFIG, saveCheckpoint, train } from "./train.js";
import { exportProvider } from "./exportProvider.js";

function parseFlags(argv: string[]): Map<string, string> {
  const flags = new Map<string, string>();
  for (let i = 0; i < argv.length; i += 2) {
    const key = argv[i];
    const value = argv[i + 1];
    if (!key?.startsWith("--") || value === undefined) {
      throw new Error(`malformed flags near ${key ?? "<end>"}`);
    }
    flags.set(key.slice(2), value);
  }
  return flags;
}

function need(flags: Map<string, string>, name: string): string {
  const value = flags.get(name);
  if (value === undefined) {
    throw new Error(`missing required flag --${name}`);
  }
  return value;
}

function main(argv: string[]): number {
  const [command, ...rest] = argv;
  if (command === "train") {
    const flags = parseFlags(rest);
    const config = {
      ...DEFAULT_CONFIG,
      pairsPath: need(flags, "pairs"),
      steps: flags.has("steps") ? Number(flags.get("steps")) : DEFAULT_CONFIG.steps,
      learningRate: flags.has("lr") ? Number(flags.get("lr")) : DEFAULT_CONFIG.learningRate,
      beta: flags.has("beta") ? Number(flags.get("beta")) : DEFAULT_CONFIG.beta,
      evalSplit: flags.has("eval-split")
        ? Number(flags.get("eval-split"))
        : DEFAULT_CONFIG.evalSplit,
      seed: flags.has("seed") ? Number(flags.get("seed")) : DEFAULT_CONFIG.seed,
    };
    const outDir = need(flags, "out");
    const result = train(config);
    saveCheckpoint(outDir, result);
    const { lossCurve, ...summary } = result.metrics;
    console.log(JSON.stringify({ checkpoint: outDir, ...summary }, null, 2));
    return 0;
  }
  if (command === "export") {
    const flags = parseFlags(rest);
    const result = exportProvider(
      need(flags, "checkpoint"),
      need(flags, "pairs"),
      need(flags, "out")
    );
    console.log(JSON.stringify(result, null, 2));
    return 0;
  }
  console.error("usage: cli.js <train|export> --flags ...");
  return 2;
}

try {
  process.exit(main(process.argv.slice(2)));
} catch (err) {
  console.error(`error: ${(err as Error).message}`);
  process.exit(1);
}
