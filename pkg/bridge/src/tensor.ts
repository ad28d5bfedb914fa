/**
 * Tensor codec for the wire protocol: {"shape": [...], "data": base64 of
 * little-endian float32, row-major, channel-fastest}.
 */

export interface WireTensor {
  shape: number[];
  data: string;
}

export interface Tensor {
  shape: number[];
  /** values widened to float64 (exact for float32 inputs) */
  values: Float64Array;
}

export function decodeTensor(obj: WireTensor): Tensor {
  const buf = Buffer.from(obj.data, "base64");
  const n = obj.shape.reduce((a, b) => a * b, 1);
  if (buf.length !== n * 4) {
    throw new Error(
      `tensor payload is ${buf.length} bytes but shape implies ${n * 4}`,
    );
  }
  const values = new Float64Array(n);
  for (let i = 0; i < n; i++) {
    values[i] = buf.readFloatLE(i * 4);
  }
  return { shape: [...obj.shape], values };
}

export function encodeTensor(t: Tensor): WireTensor {
  const n = t.values.length;
  const buf = Buffer.alloc(n * 4);
  for (let i = 0; i < n; i++) {
    buf.writeFloatLE(Math.fround(t.values[i]), i * 4);
  }
  return { shape: [...t.shape], data: buf.toString("base64") };
}
