/**
 * Training loop: contrastive updates of the bigram policy against a frozen
 * reference copy, driven by preference pairs.
 */

import { mkdirSync, readFileSync, writeFileSync } from "node:fs";
import { join } from "node:path";

import { dpoLoss, dpoLossGradWrtMargin, dpoMargin, type LogProbPair } from "./dpoLoss.js";
import {
  loadPairs,
  splitPairs,
  targetSequence,
  type PreferencePair,
} from "./data.js";
import { BigramPolicy } from "./model.js";
import { Vocab } from "./tokenizer.js";

export interface TrainConfig {
  beta: number;
  learningRate: number;
  steps: number;
  modelId: string;
  pairsPath: string;
  evalSplit: number;
  seed: number;
}

export const DEFAULT_CONFIG: Omit<TrainConfig, "pairsPath"> = {
  beta: 0.1,
  learningRate: 0.5,
  steps: 200,
  modelId: "bigram-char-v1",
  evalSplit: 0.2,
  seed: 0,
};

export interface TrainMetrics {
  steps: number;
  trainPairs: number;
  heldPairs: number;
  initialSmoothedLoss: number;
  finalSmoothedLoss: number;
  heldOutAccuracy: number;
  lossCurve: number[];
}

export interface TrainResult {
  policy: BigramPolicy;
  reference: BigramPolicy;
  metrics: TrainMetrics;
  config: TrainConfig;
}

export function validateConfig(config: TrainConfig): void {
  if (!(config.beta > 0)) {
    throw new RangeError(`beta must be positive, got ${config.beta}`);
  }
  if (!(config.learningRate > 0)) {
    throw new RangeError(`learningRate must be positive, got ${config.learningRate}`);
  }
  if (!Number.isInteger(config.steps) || config.steps < 1) {
    throw new RangeError(`steps must be a positive integer, got ${config.steps}`);
  }
  if (!(config.evalSplit > 0 && config.evalSplit < 1)) {
    throw new RangeError(`evalSplit must be in (0, 1), got ${config.evalSplit}`);
  }
}

/** Deterministic 32-bit PRNG for shuffling the training order. */
function mulberry32(seed: number): () => number {
  let state = seed >>> 0;
  return () => {
    state = (state + 0x6d2b79f5) >>> 0;
    let t = state;
    t = Math.imul(t ^ (t >>> 15), t | 1);
    t ^= t + Math.imul(t ^ (t >>> 7), t | 61);
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}

function shuffled<T>(items: T[], rand: () => number): T[] {
  const out = items.slice();
  for (let i = out.length - 1; i > 0; i--) {
    const j = Math.floor(rand() * (i + 1));
    [out[i], out[j]] = [out[j], out[i]];
  }
  return out;
}

interface EncodedPair {
  pair: PreferencePair;
  positive: Int32Array;
  negative: Int32Array;
  refPos: number;
  refNeg: number;
}

function logProbPair(policy: BigramPolicy, encoded: EncodedPair): LogProbPair {
  return {
    posPolicy: policy.sequenceLogProb(encoded.positive),
    posRef: encoded.refPos,
    negPolicy: policy.sequenceLogProb(encoded.negative),
    negRef: encoded.refNeg,
  };
}

function smoothed(losses: number[], window: number, fromStart: boolean): number {
  const slice = fromStart ? losses.slice(0, window) : losses.slice(-window);
  return slice.reduce((a, b) => a + b, 0) / slice.length;
}

export function train(config: TrainConfig): TrainResult {
  validateConfig(config);
  const pairs = loadPairs(config.pairsPath);
  if (pairs.length < 2) {
    throw new Error(`need at least 2 pairs, got ${pairs.length}`);
  }
  const { train: trainPairs, held } = splitPairs(pairs, config.evalSplit);

  const texts: string[] = [];
  for (const pair of pairs) {
    texts.push(targetSequence(pair, "positive"), targetSequence(pair, "negative"));
  }
  const vocab = Vocab.build(texts);
  const policy = new BigramPolicy(vocab);
  const reference = policy.clone();

  const encode = (pair: PreferencePair): EncodedPair => {
    const positive = vocab.encode(targetSequence(pair, "positive"));
    const negative = vocab.encode(targetSequence(pair, "negative"));
    return {
      pair,
      positive,
      negative,
      refPos: reference.sequenceLogProb(positive),
      refNeg: reference.sequenceLogProb(negative),
    };
  };
  const encodedTrain = trainPairs.map(encode);
  const encodedHeld = held.map(encode);

  const rand = mulberry32(config.seed);
  let order = shuffled(encodedTrain, rand);
  let cursor = 0;

  const lossCurve: number[] = [];
  for (let step = 0; step < config.steps; step++) {
    if (cursor >= order.length) {
      order = shuffled(encodedTrain, rand);
      cursor = 0;
    }
    const sample = order[cursor++];
    const lp = logProbPair(policy, sample);
    const margin = dpoMargin(lp);
    lossCurve.push(dpoLoss(lp, config.beta));

    const grad = new Map<number, Float64Array>();
    policy.accumulateSequenceGrad(sample.positive, 1, grad);
    policy.accumulateSequenceGrad(sample.negative, -1, grad);
    const lossGrad = dpoLossGradWrtMargin(margin, config.beta);
    // Descend: theta -= lr * dLoss/dtheta, with dLoss/dtheta = lossGrad * dMargin/dtheta.
    policy.applyGrad(grad, -config.learningRate * lossGrad);
  }

  const window = Math.min(10, lossCurve.length);
  let heldCorrect = 0;
  for (const sample of encodedHeld) {
    if (dpoMargin(logProbPair(policy, sample)) > 0) {
      heldCorrect += 1;
    }
  }
  const metrics: TrainMetrics = {
    steps: config.steps,
    trainPairs: trainPairs.length,
    heldPairs: held.length,
    initialSmoothedLoss: smoothed(lossCurve, window, true),
    finalSmoothedLoss: smoothed(lossCurve, window, false),
    heldOutAccuracy: held.length ? heldCorrect / held.length : 0,
    lossCurve,
  };
  return { policy, reference, metrics, config };
}

export function saveCheckpoint(dir: string, result: TrainResult): void {
  mkdirSync(dir, { recursive: true });
  const checkpoint = {
    model_id: result.config.modelId,
    model: result.policy.toJSON(),
    config: {
      beta: result.config.beta,
      learning_rate: result.config.learningRate,
      steps: result.config.steps,
      eval_split: result.config.evalSplit,
      seed: result.config.seed,
      pairs_path: result.config.pairsPath,
    },
  };
  writeFileSync(join(dir, "checkpoint.json"), JSON.stringify(checkpoint));
  const { lossCurve, ...summary } = result.metrics;
  writeFileSync(
    join(dir, "train_metrics.json"),
    JSON.stringify({ ...summary, loss_curve: lossCurve }, null, 2)
  );
}

export interface Checkpoint {
  modelId: string;
  policy: BigramPolicy;
}

export function loadCheckpoint(dir: string): Checkpoint {
  let raw: string;
  try {
    raw = readFileSync(join(dir, "checkpoint.json"), "utf-8");
  } catch (err) {
    throw new Error(`missing checkpoint in ${dir}: ${(err as Error).message}`);
  }
  const payload = JSON.parse(raw);
  return {
    modelId: String(payload.model_id ?? "unknown"),
    policy: BigramPolicy.fromJSON(payload.model),
  };
}
