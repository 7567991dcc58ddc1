/** Tinted RGBA overlay pixels for a decoded binary mask. */

export interface Rgba {
  r: number;
  g: number;
  b: number;
  a: number; // 0..255
}

export const MASK_TINT: Rgba = { r: 66, g: 133, b: 244, a: 140 };

export function maskToRgba(
  mask: Uint8Array,
  height: number,
  width: number,
  tint: Rgba = MASK_TINT
): Uint8ClampedArray<ArrayBuffer> {
  if (mask.length !== height * width) {
    throw new Error(`mask length ${mask.length} != ${height}x${width}`);
  }
  const out = new Uint8ClampedArray(new ArrayBuffer(height * width * 4));
  for (let i = 0; i < mask.length; i++) {
    if (mask[i] === 1) {
      out[i * 4] = tint.r;
      out[i * 4 + 1] = tint.g;
      out[i * 4 + 2] = tint.b;
      out[i * 4 + 3] = tint.a;
    }
  }
  return out;
}
