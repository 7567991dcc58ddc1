/**
 * Run-length decoding for masks coming off the segmentation endpoint.
 *
 * Runs are row-major and alternate starting with background, so a mask
 * whose first pixel is foreground arrives with a leading 0-length run.
 */

export function decodeRle(runs: number[], height: number, width: number): Uint8Array {
  const total = runs.reduce((a, b) => a + b, 0);
  if (total !== height * width) {
    throw new Error(`RLE covers ${total} pixels, expected ${height * width}`);
  }
  const out = new Uint8Array(height * width);
  let pos = 0;
  let value = 0;
  for (const run of runs) {
    if (run < 0) throw new Error("negative run length");
    if (value === 1) out.fill(1, pos, pos + run);
    pos += run;
    value = 1 - value;
  }
  return out;
}

export function maskArea(mask: Uint8Array): number {
  let area = 0;
  for (let i = 0; i < mask.length; i++) area += mask[i];
  return area;
}
