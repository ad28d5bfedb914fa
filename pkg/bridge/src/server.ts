/**
 * Request dispatch for the newline-delimited JSON protocol.
 *
 * Requests:  {"id": int, "op": "caps"|"logits"|"query_loss"|"loss_grad", ...}
 * Responses: {"id": int, "ok": true, "result": {...}}
 *            {"id": int|null, "ok": false, "error": {"code", "message"}}
 *
 * Requests are served strictly in arrival order per connection; a
 * malformed line produces a bad_request error and the connection stays
 * open.
 */

import { decodeTensor, WireTensor } from "./tensor.js";
import {
  StubParams,
  VOCAB,
  logits,
  queryLoss,
} from "./stubModel.js";
import { GradPayload, lossAndGrad } from "./render.js";

export type ErrorCode = "bad_request" | "model_error" | "oom";

export interface ServerOptions {
  params: StubParams;
  maxFrames?: number;
}

function errorResponse(id: unknown, code: ErrorCode, message: string): string {
  return JSON.stringify({
    id: typeof id === "number" ? id : null,
    ok: false,
    error: { code, message },
  });
}

function okResponse(id: number, result: unknown): string {
  return JSON.stringify({ id, ok: true, result });
}

export function handleLine(line: string, opts: ServerOptions): string | null {
  const trimmed = line.trim();
  if (!trimmed) return null;
  let msg: Record<string, unknown>;
  try {
    msg = JSON.parse(trimmed);
  } catch {
    return errorResponse(null, "bad_request", "invalid JSON line");
  }
  const id = msg["id"];
  if (typeof id !== "number" || !Number.isInteger(id)) {
    return errorResponse(id, "bad_request", "missing integer id");
  }
  const op = msg["op"];
  try {
    switch (op) {
      case "caps":
        return okResponse(id, {
          vocab_size: opts.params.vocab,
          supports_analytic_grad: true,
          max_frames: opts.maxFrames ?? 1 << 16,
        });
      case "logits": {
        const view = decodeTensor(msg["view"] as WireTensor);
        const query = (msg["query"] as number[]) ?? [];
        const prefix = (msg["prefix"] as number[]) ?? [];
        const out = logits(opts.params, view, query, prefix);
        return okResponse(id, { logits: Array.from(out) });
      }
      case "query_loss": {
        const view = decodeTensor(msg["view"] as WireTensor);
        const query = (msg["query"] as number[]) ?? [];
        return okResponse(id, { loss: queryLoss(opts.params, view, query) });
      }
      case "loss_grad": {
        const payload = parseGradPayload(msg);
        const res = lossAndGrad(opts.params, payload);
        return okResponse(id, {
          loss: res.loss,
          object_r: res.objectGrad,
          frame_r: res.frameGrad,
        });
      }
      default:
        return errorResponse(id, "bad_request", `unknown op ${String(op)}`);
    }
  } catch (exc) {
    const message = exc instanceof Error ? exc.message : String(exc);
    const code: ErrorCode = /outside vocab|payload|non-empty|shape/.test(message)
      ? "bad_request"
      : "model_error";
    return errorResponse(id, code, message);
  }
}

function parseGradPayload(msg: Record<string, unknown>): GradPayload {
  const tracksRaw = (msg["tracks"] as Array<Record<string, unknown>>) ?? [];
  const tracks = tracksRaw.map((tr) => {
    const masks: Record<string, ReturnType<typeof decodeTensor>> = {};
    for (const [frame, wire] of Object.entries(
      tr["masks"] as Record<string, WireTensor>,
    )) {
      masks[frame] = decodeTensor(wire);
    }
    return { confidence: Number(tr["confidence"]), masks };
  });
  const policy = (msg["policy"] as GradPayload["policy"]) ?? {
    mode: "none",
    subset: [],
    keep_stride: 2,
  };
  return {
    base: decodeTensor(msg["base"] as WireTensor),
    tracks,
    object_r: (msg["object_r"] as number[]) ?? [],
    frame_r: (msg["frame_r"] as number[]) ?? [],
    fusion: (msg["fusion"] as GradPayload["fusion"]) ?? "max",
    render: (msg["render"] as GradPayload["render"]) ?? "blend",
    fill: (msg["fill"] as number) ?? 0.5,
    policy,
    query: (msg["query"] as number[]) ?? [],
  };
}
