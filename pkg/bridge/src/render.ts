/**
 * Counterfactual composition, re-implemented to the engine's contract so
 * strength gradients can be computed bridge-side: strength-scaled object
 * masks fused per pixel (max / confidence-normalized / average), a
 * constant-per-frame temporal mask, clamped sum into Z, then either an
 * occlusion blend toward a fill value or a literal additive clamp.
 */

import type { Tensor } from "./tensor.js";
import {
  StubParams,
  logitsFromPools,
  logSoftmax,
  poolMeans,
  queryLossFromPools,
} from "./stubModel.js";

export interface TrackPayload {
  confidence: number;
  /** frame index (as string) -> H x W mask */
  masks: Record<string, Tensor>;
}

export interface FramePolicy {
  mode: "trainable" | "subset" | "none" | "extract";
  subset: number[];
  keep_stride: number;
}

export interface GradPayload {
  base: Tensor;
  tracks: TrackPayload[];
  object_r: number[];
  frame_r: number[];
  fusion: "max" | "confnorm" | "avg";
  render: "blend" | "addclamp";
  fill: number;
  policy: FramePolicy;
  query: number[];
}

export function frameValue(
  policy: FramePolicy,
  frameR: number[],
  t: number,
): number {
  switch (policy.mode) {
    case "trainable":
      return frameR[t];
    case "subset":
      return policy.subset.includes(t) ? 1.0 : 0.0;
    case "extract":
      return t % policy.keep_stride === 0 ? 0.0 : 1.0;
    default:
      return 0.0;
  }
}

interface FrameUnion {
  mo: Float64Array; // fused object mask, H*W
  /** covering track indices (into the global track list) */
  covering: number[];
  /** per-pixel argmax slot into `covering` (max fusion), -1 if none */
  argmax: Int32Array;
  /** per-pixel confidence sum over covering tracks (confnorm) */
  confSum: Float64Array;
  /** per-pixel covering count (avg) */
  count: Float64Array;
}

function fuseFrame(
  g: GradPayload,
  t: number,
  hw: number,
): FrameUnion {
  const covering: number[] = [];
  for (let k = 0; k < g.tracks.length; k++) {
    if (g.tracks[k].masks[String(t)] !== undefined) covering.push(k);
  }
  const mo = new Float64Array(hw);
  const argmax = new Int32Array(hw).fill(-1);
  const confSum = new Float64Array(hw);
  const count = new Float64Array(hw);
  if (g.fusion === "max") {
    for (let slot = 0; slot < covering.length; slot++) {
      const k = covering[slot];
      const m = g.tracks[k].masks[String(t)].values;
      const r = g.object_r[k];
      for (let i = 0; i < hw; i++) {
        const cand = r * m[i];
        if (cand > mo[i] || (argmax[i] === -1 && m[i] > 0 && cand >= mo[i])) {
          mo[i] = cand;
          argmax[i] = slot;
        }
      }
    }
  } else {
    const num = new Float64Array(hw);
    for (const k of covering) {
      const m = g.tracks[k].masks[String(t)].values;
      const r = g.object_r[k];
      const c = g.tracks[k].confidence;
      for (let i = 0; i < hw; i++) {
        if (m[i] > 0) {
          if (g.fusion === "confnorm") {
            num[i] += c * (r * m[i]);
            confSum[i] += c;
          } else {
            num[i] += r * m[i];
            count[i] += 1.0;
          }
        }
      }
    }
    for (let i = 0; i < hw; i++) {
      const den = g.fusion === "confnorm" ? confSum[i] : count[i];
      if (den > 0) {
        mo[i] = Math.min(1.0, Math.max(0.0, num[i] / den));
      }
    }
  }
  return { mo, covering, argmax, confSum, count };
}

export interface Rendered {
  /** composed view, T*H*W*C float64 */
  view: Tensor;
  /** Z field per frame, T*(H*W) */
  z: Float64Array[];
  unions: FrameUnion[];
}

export function renderCounterfactual(g: GradPayload): Rendered {
  const [t, h, w, c] = g.base.shape;
  const hw = h * w;
  const out = new Float64Array(g.base.values.length);
  const zs: Float64Array[] = [];
  const unions: FrameUnion[] = [];
  for (let ti = 0; ti < t; ti++) {
    const union = fuseFrame(g, ti, hw);
    const fv = frameValue(g.policy, g.frame_r, ti);
    const z = new Float64Array(hw);
    for (let i = 0; i < hw; i++) {
      z[i] = Math.min(1.0, Math.max(0.0, fv + union.mo[i]));
    }
    for (let i = 0; i < hw; i++) {
      const zz = z[i];
      for (let ci = 0; ci < c; ci++) {
        const idx = (ti * hw + i) * c + ci;
        const v = g.base.values[idx];
        if (g.render === "blend") {
          out[idx] = v * (1.0 - zz) + g.fill * zz;
        } else {
          out[idx] = Math.min(1.0, Math.max(0.0, v + zz));
        }
      }
    }
    zs.push(z);
    unions.push(union);
  }
  return { view: { shape: [...g.base.shape], values: out }, z: zs, unions };
}

export interface GradResult {
  loss: number;
  objectGrad: number[];
  frameGrad: number[];
}

/**
 * Analytic d(mean query CE)/d(strengths) through the rendered view:
 * softmax gradients -> per-pool weights -> per-pixel dL/dZ (masked by the
 * clamp subgradient) -> per-fusion mask sensitivities.
 */
export function lossAndGrad(params: StubParams, g: GradPayload): GradResult {
  const [t, h, w, c] = g.base.shape;
  const hw = h * w;
  const [gh, gw] = params.poolGrid;
  const rendered = renderCounterfactual(g);
  const pools = poolMeans(rendered.view, params.poolGrid);

  if (g.query.length === 0) throw new Error("query must be non-empty");
  let loss = 0.0;
  const dlogit = new Float64Array(params.vocab);
  for (let n = 0; n < g.query.length; n++) {
    const lg = logitsFromPools(params, pools, g.query.slice(0, n));
    const ls = logSoftmax(lg);
    loss += -ls[g.query[n]];
    for (let v = 0; v < params.vocab; v++) {
      const p = Math.exp(ls[v]) - (v === g.query[n] ? 1.0 : 0.0);
      dlogit[v] += p / g.query.length;
    }
  }
  loss /= g.query.length;

  const nPools = gh * gw;
  const wPool = new Float64Array(nPools);
  for (let v = 0; v < params.vocab; v++) {
    const row = params.wVis[v];
    for (let p = 0; p < nPools; p++) wPool[p] += dlogit[v] * row[p];
  }
  const poolOf = new Int32Array(hw);
  const rowB = (n: number, gi: number) => Math.floor((gi * n) / gh);
  const colB = (n: number, gi: number) => Math.floor((gi * n) / gw);
  for (let gy = 0; gy < gh; gy++) {
    for (let gx = 0; gx < gw; gx++) {
      for (let hi = rowB(h, gy); hi < rowB(h, gy + 1); hi++) {
        for (let wi = colB(w, gx); wi < colB(w, gx + 1); wi++) {
          poolOf[hi * w + wi] = gy * gw + gx;
        }
      }
    }
  }
  const poolCount = new Float64Array(nPools);
  for (let i = 0; i < hw; i++) poolCount[poolOf[i]] += t * c;

  const objectGrad = new Array<number>(g.object_r.length).fill(0);
  const frameGrad = new Array<number>(g.frame_r.length).fill(0);
  for (let ti = 0; ti < t; ti++) {
    const union = rendered.unions[ti];
    const fv = frameValue(g.policy, g.frame_r, ti);
    for (let i = 0; i < hw; i++) {
      const sField = fv + union.mo[i];
      if (sField >= 1.0) continue; // clamp subgradient
      // dL/dZ at this pixel
      let dVdZ = 0.0;
      for (let ci = 0; ci < c; ci++) {
        const idx = (ti * hw + i) * c + ci;
        const v = g.base.values[idx];
        if (g.render === "blend") {
          dVdZ += g.fill - v;
        } else {
          const outV = v + rendered.z[ti][i];
          if (outV > 0.0 && outV < 1.0) dVdZ += 1.0;
        }
      }
      const dLdZ = (wPool[poolOf[i]] / poolCount[poolOf[i]]) * dVdZ;
      if (g.policy.mode === "trainable" && frameGrad.length > ti) {
        frameGrad[ti] += dLdZ;
      }
      if (g.fusion === "max") {
        const slot = union.argmax[i];
        if (slot >= 0) {
          const k = union.covering[slot];
          const m = g.tracks[k].masks[String(ti)].values[i];
          objectGrad[k] += dLdZ * m;
        }
      } else if (g.fusion === "confnorm") {
        if (union.confSum[i] > 0) {
          for (const k of union.covering) {
            const m = g.tracks[k].masks[String(ti)].values[i];
            if (m > 0) {
              objectGrad[k] +=
                (dLdZ * g.tracks[k].confidence * m) / union.confSum[i];
            }
          }
        }
      } else {
        if (union.count[i] > 0) {
          for (const k of union.covering) {
            const m = g.tracks[k].masks[String(ti)].values[i];
            if (m > 0) objectGrad[k] += (dLdZ * m) / union.count[i];
          }
        }
      }
    }
  }
  return { loss, objectGrad, frameGrad };
}

export function lossAtStrengths(params: StubParams, g: GradPayload): number {
  const rendered = renderCounterfactual(g);
  return queryLossFromPools(
    params,
    poolMeans(rendered.view, params.poolGrid),
    g.query,
  );
}
