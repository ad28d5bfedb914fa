import { describe, expect, it } from "vitest";
import { readFileSync } from "node:fs";
import { fileURLToPath } from "node:url";
import { dirname, join } from "node:path";

import { SplitMix64 } from "../src/splitmix.js";
import { decodeTensor, encodeTensor } from "../src/tensor.js";
import {
  logits,
  queryLoss,
  seededParams,
} from "../src/stubModel.js";

const here = dirname(fileURLToPath(import.meta.url));
const fix = JSON.parse(readFileSync(join(here, "fixtures.json"), "utf-8"));

describe("SplitMix64", () => {
  it("matches the engine's u64 stream for seed 42", () => {
    const rng = new SplitMix64(42);
    const got = [0, 1, 2, 3].map(() => rng.nextU64().toString());
    expect(got).toEqual(fix.splitmix_seed42_u64);
  });

  it("matches the engine's uniform stream exactly", () => {
    const rng = new SplitMix64(42);
    const got = [0, 1, 2, 3].map(() => rng.uniform());
    expect(got).toEqual(fix.splitmix_seed42_uniform);
  });
});

describe("tensor codec", () => {
  it("round-trips random float32 tensors bit-exactly", () => {
    for (let trial = 0; trial < 20; trial++) {
      const shape = [1 + (trial % 3), 2 + (trial % 4), 3, 1];
      const n = shape.reduce((a, b) => a * b, 1);
      const values = new Float64Array(n);
      for (let i = 0; i < n; i++) values[i] = Math.fround(Math.random());
      const back = decodeTensor(encodeTensor({ shape, values }));
      expect(back.shape).toEqual(shape);
      expect(Array.from(back.values)).toEqual(Array.from(values));
    }
  });

  it("rejects payload/shape disagreement", () => {
    const wire = encodeTensor({ shape: [2, 2], values: new Float64Array(4) });
    wire.shape = [3, 3];
    expect(() => decodeTensor(wire)).toThrow(/payload/);
  });
});

describe("stub scorer parity", () => {
  it("reproduces engine logits bit-for-bit (seed 7)", () => {
    const params = seededParams(7);
    const view = decodeTensor(fix.view);
    const got = logits(params, view, fix.query, fix.prefix);
    expect(Array.from(got)).toEqual(fix.logits_seed7);
  });

  it("biased variant shifts hallucination tokens by exactly the boost", () => {
    const params = seededParams(7, true);
    const view = decodeTensor(fix.view);
    const got = logits(params, view, fix.query, fix.prefix);
    expect(Array.from(got)).toEqual(fix.logits_seed7_biased);
    const plain = logits(seededParams(7), view, fix.query, fix.prefix);
    for (let v = 0; v < got.length; v++) {
      const boost = params.hallucinationTokens.has(v) ? params.biasBoost : 0;
      expect(got[v] - plain[v]).toBe(boost);
    }
  });

  it("matches the engine's query loss closely", () => {
    const params = seededParams(7);
    const view = decodeTensor(fix.view);
    const got = queryLoss(params, view, fix.query);
    expect(Math.abs(got - fix.query_loss_seed7)).toBeLessThan(1e-12);
  });

  it("rejects out-of-vocab tokens", () => {
    const params = seededParams(7);
    const view = decodeTensor(fix.view);
    expect(() => logits(params, view, [99], [])).toThrow(/vocab/);
  });

  it("zero parameters give uniform logits", () => {
    const params = seededParams(0);
    const zero = (rows: number, cols: number) =>
      Array.from({ length: rows }, () => new Array(cols).fill(0));
    const zeroParams = {
      ...params,
      embed: zero(params.vocab, params.embedDim),
      wVis: zero(params.vocab, 16),
      wTok: zero(params.vocab, params.embedDim),
      b: new Array(params.vocab).fill(0),
      biasBoost: 0,
    };
    const view = decodeTensor(fix.view);
    const out = logits(zeroParams, view, [3], [1]);
    expect(Array.from(out)).toEqual(new Array(params.vocab).fill(0));
  });
});
