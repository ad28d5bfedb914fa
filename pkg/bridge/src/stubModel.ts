/**
 * Deterministic stub scorer replicating the engine's built-in surrogate:
 * region-pooled brightness features concatenated with bag-of-context
 * token embeddings through one linear layer, with an "evidence zone"
 * pool wired to the yes/no/probe tokens plus seeded uniform noise.
 *
 * Parameter draws and the logits forward follow the engine's documented
 * operation order exactly (sequential float64 accumulation, draws in
 * embed/wVis/wTok/b order), so logits agree bit-for-bit with the
 * in-process scorer for matched seeds.
 */

import { SplitMix64 } from "./splitmix.js";
import type { Tensor } from "./tensor.js";

export const VOCAB = 32;
export const EMBED_DIM = 16;
export const POOL_GRID: [number, number] = [4, 4];
export const ZONE_POOL_RC: [number, number] = [1, 1];
export const TOK_YES = 1;
export const TOK_NO = 2;
export const TOK_PROBE = 3;
const ANSWER_GAIN = 3.0;
const PROBE_GAIN = 2.0;
const PROBE_BIAS = -2.0;
export const DEFAULT_BOOST = 4.0;
const NOISE_EMBED = 0.5;
const NOISE_WVIS = 0.05;
const NOISE_WTOK = 0.2;
const NOISE_BIAS = 0.05;

export interface StubParams {
  vocab: number;
  embedDim: number;
  poolGrid: [number, number];
  embed: number[][];
  wVis: number[][];
  wTok: number[][];
  b: number[];
  biasBoost: number;
  hallucinationTokens: Set<number>;
}

export function seededParams(seed: number | bigint, biased = false): StubParams {
  const rng = new SplitMix64(seed);
  const p = POOL_GRID[0] * POOL_GRID[1];
  const draw2d = (rows: number, cols: number, scale: number): number[][] => {
    const out: number[][] = [];
    for (let v = 0; v < rows; v++) {
      const row: number[] = [];
      for (let j = 0; j < cols; j++) row.push(rng.uniformSigned(scale));
      out.push(row);
    }
    return out;
  };
  const embed = draw2d(VOCAB, EMBED_DIM, NOISE_EMBED);
  const wVis = draw2d(VOCAB, p, NOISE_WVIS);
  const wTok = draw2d(VOCAB, EMBED_DIM, NOISE_WTOK);
  const b: number[] = [];
  for (let v = 0; v < VOCAB; v++) b.push(rng.uniformSigned(NOISE_BIAS));

  const zone = ZONE_POOL_RC[0] * POOL_GRID[1] + ZONE_POOL_RC[1];
  wVis[TOK_YES][zone] += ANSWER_GAIN;
  b[TOK_YES] += -(ANSWER_GAIN * 0.5);
  wVis[TOK_NO][zone] += -ANSWER_GAIN;
  b[TOK_NO] += ANSWER_GAIN * 0.5;
  wVis[TOK_PROBE][zone] += -PROBE_GAIN;
  b[TOK_PROBE] += PROBE_BIAS;

  return {
    vocab: VOCAB,
    embedDim: EMBED_DIM,
    poolGrid: POOL_GRID,
    embed,
    wVis,
    wTok,
    b,
    biasBoost: biased ? DEFAULT_BOOST : 0.0,
    hallucinationTokens: new Set([TOK_YES]),
  };
}

function poolBounds(n: number, g: number): Array<[number, number]> {
  const out: Array<[number, number]> = [];
  for (let gi = 0; gi < g; gi++) {
    out.push([Math.floor((gi * n) / g), Math.floor(((gi + 1) * n) / g)]);
  }
  return out;
}

/** Sequential per-pool sums in (t, h, w, c) scan order, then divide. */
export function poolMeans(view: Tensor, grid: [number, number]): Float64Array {
  const [t, h, w, c] = view.shape;
  const [gh, gw] = grid;
  const rows = poolBounds(h, gh);
  const cols = poolBounds(w, gw);
  const vals = view.values;
  const out = new Float64Array(gh * gw);
  for (let gy = 0; gy < gh; gy++) {
    const [r0, r1] = rows[gy];
    for (let gx = 0; gx < gw; gx++) {
      const [c0, c1] = cols[gx];
      let acc = 0.0;
      for (let ti = 0; ti < t; ti++) {
        for (let hi = r0; hi < r1; hi++) {
          for (let wi = c0; wi < c1; wi++) {
            const base = ((ti * h + hi) * w + wi) * c;
            for (let ci = 0; ci < c; ci++) acc += vals[base + ci];
          }
        }
      }
      const count = t * (r1 - r0) * (c1 - c0) * c;
      out[gy * gw + gx] = acc / count;
    }
  }
  return out;
}

export function logitsFromPools(
  params: StubParams,
  pools: Float64Array,
  ctx: number[],
): Float64Array {
  const e = new Float64Array(params.embedDim);
  for (const tok of ctx) {
    const row = params.embed[tok];
    for (let j = 0; j < params.embedDim; j++) e[j] += row[j];
  }
  const out = new Float64Array(params.vocab);
  for (let v = 0; v < params.vocab; v++) {
    let acc = params.b[v];
    const wv = params.wVis[v];
    for (let p = 0; p < pools.length; p++) acc += wv[p] * pools[p];
    const wt = params.wTok[v];
    for (let j = 0; j < params.embedDim; j++) acc += wt[j] * e[j];
    if (params.hallucinationTokens.has(v)) acc += params.biasBoost;
    out[v] = acc;
  }
  return out;
}

export function logits(
  params: StubParams,
  view: Tensor,
  query: number[],
  prefix: number[],
): Float64Array {
  checkTokens(params, query);
  checkTokens(params, prefix);
  return logitsFromPools(params, poolMeans(view, params.poolGrid), [
    ...query,
    ...prefix,
  ]);
}

export function logSoftmax(logitsVec: Float64Array): Float64Array {
  let m = -Infinity;
  for (const v of logitsVec) m = Math.max(m, v);
  let sum = 0.0;
  for (const v of logitsVec) sum += Math.exp(v - m);
  const logZ = m + Math.log(sum);
  return logitsVec.map((v) => v - logZ) as Float64Array;
}

export function queryLossFromPools(
  params: StubParams,
  pools: Float64Array,
  query: number[],
): number {
  if (query.length === 0) throw new Error("query must be non-empty");
  let total = 0.0;
  for (let n = 0; n < query.length; n++) {
    const lg = logitsFromPools(params, pools, query.slice(0, n));
    total += -logSoftmax(lg)[query[n]];
  }
  return total / query.length;
}

export function queryLoss(
  params: StubParams,
  view: Tensor,
  query: number[],
): number {
  checkTokens(params, query);
  return queryLossFromPools(params, poolMeans(view, params.poolGrid), query);
}

function checkTokens(params: StubParams, ids: number[]): void {
  for (const i of ids) {
    if (!Number.isInteger(i) || i < 0 || i >= params.vocab) {
      throw new Error(`token ${i} outside vocab [0, ${params.vocab})`);
    }
  }
}
