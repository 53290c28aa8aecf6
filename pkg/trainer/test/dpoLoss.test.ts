import { describe, expect, it } from "vitest";

import {
  dpoLoss,
  dpoLossGradWrtMargin,
  dpoMargin,
  logSigmoid,
  sigmoid,
  type LogProbPair,
} from "../src/dpoLoss.js";

function pairWithMargin(margin: number): LogProbPair {
  // Split the margin across the four terms to exercise the full formula.
  return {
    posPolicy: -1.0 + margin / 2,
    posRef: -1.0,
    negPolicy: -2.0 - margin / 2,
    negRef: -2.0,
  };
}

describe("dpoLoss", () => {
  it("costs exactly ln 2 at zero margin", () => {
    const lp: LogProbPair = { posPolicy: -3, posRef: -3, negPolicy: -5, negRef: -5 };
    expect(dpoMargin(lp)).toBe(0);
    expect(Math.abs(dpoLoss(lp, 0.1) - Math.log(2))).toBeLessThan(1e-9);
    expect(Math.abs(dpoLoss(lp, 2.5) - Math.log(2))).toBeLessThan(1e-9);
  });

  it("satisfies the beta-scaling identity on 100 random draws", () => {
    let state = 123456789;
    const rand = () => {
      state = (state * 1103515245 + 12345) % 2147483648;
      return state / 2147483648;
    };
    for (let i = 0; i < 100; i++) {
      const beta = 0.01 + rand() * 5;
      const margin = (rand() - 0.5) * 20;
      const scaled = dpoLoss(pairWithMargin(margin), beta);
      const unit = dpoLoss(pairWithMargin(beta * margin), 1.0);
      expect(Math.abs(scaled - unit)).toBeLessThan(1e-9);
    }
  });

  it("decreases strictly as the margin grows", () => {
    const margins = [-5, -1, 0, 1, 5, 20];
    const losses = margins.map((m) => dpoLoss(pairWithMargin(m), 1.0));
    for (let i = 1; i < losses.length; i++) {
      expect(losses[i]).toBeLessThan(losses[i - 1]);
    }
  });

  it("approaches zero for large positive margins", () => {
    expect(dpoLoss(pairWithMargin(80), 1.0)).toBeLessThan(1e-9);
  });

  it("rejects non-finite log-probabilities", () => {
    expect(() =>
      dpoLoss({ posPolicy: Number.NaN, posRef: 0, negPolicy: 0, negRef: 0 }, 1)
    ).toThrow(/non-finite/);
    expect(() =>
      dpoLoss({ posPolicy: -Infinity, posRef: 0, negPolicy: 0, negRef: 0 }, 1)
    ).toThrow(/non-finite/);
  });

  it("has a stable log-sigmoid on extreme inputs", () => {
    expect(logSigmoid(1000)).toBeCloseTo(0, 12);
    expect(logSigmoid(-1000)).toBeCloseTo(-1000, 6);
    expect(sigmoid(0)).toBeCloseTo(0.5, 12);
  });

  it("matches a finite-difference derivative of the loss", () => {
    const beta = 0.7;
    for (const margin of [-2.3, -0.1, 0.0, 0.4, 3.1]) {
      const eps = 1e-6;
      const up = dpoLoss(pairWithMargin(margin + eps), beta);
      const down = dpoLoss(pairWithMargin(margin - eps), beta);
      const numeric = (up - down) / (2 * eps);
      expect(Math.abs(dpoLossGradWrtMargin(margin, beta) - numeric)).toBeLessThan(1e-5);
    }
  });
});
