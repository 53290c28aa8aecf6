/**
 * Preference loss over policy/reference log-probabilities.
 *
 * The margin is the difference of log-ratios between the preferred and
 * rejected completions; the loss is -log sigmoid(beta * margin), so a zero
 * margin costs exactly ln 2 and the loss decreases monotonically as the
 * policy separates the pair.
 */

export interface LogProbPair {
  /** log-probability of the preferred completion under the policy */
  posPolicy: number;
  /** log-probability of the preferred completion under the frozen reference */
  posRef: number;
  /** log-probability of the rejected completion under the policy */
  negPolicy: number;
  /** log-probability of the rejected completion under the frozen reference */
  negRef: number;
}

export function sigmoid(x: number): number {
  if (x >= 0) {
    return 1 / (1 + Math.exp(-x));
  }
  const ex = Math.exp(x);
  return ex / (1 + ex);
}

/** Numerically stable log(sigmoid(x)). */
export function logSigmoid(x: number): number {
  if (x >= 0) {
    return -Math.log1p(Math.exp(-x));
  }
  return x - Math.log1p(Math.exp(x));
}

export function dpoMargin(lp: LogProbPair): number {
  return lp.posPolicy - lp.posRef - (lp.negPolicy - lp.negRef);
}

export function dpoLoss(lp: LogProbPair, beta: number): number {
  for (const [name, value] of Object.entries(lp)) {
    if (!Number.isFinite(value)) {
      throw new RangeError(`non-finite log-probability: ${name}=${value}`);
    }
  }
  if (!Number.isFinite(beta)) {
    throw new RangeError(`non-finite beta: ${beta}`);
  }
  return -logSigmoid(beta * dpoMargin(lp));
}

/** d(loss)/d(margin); the chain-rule hook for policy gradients. */
export function dpoLossGradWrtMargin(margin: number, beta: number): number {
  return -beta * sigmoid(-beta * margin);
}
