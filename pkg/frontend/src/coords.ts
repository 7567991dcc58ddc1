/**
 * Canvas <-> image coordinate mapping.
 *
 * The canvas shows the image scaled by `zoom` and shifted by a pan offset
 * (both in canvas pixels). Clicks arrive in canvas pixels and must land on
 * integer image pixels; rendering goes the other way. The two directions
 * are exact inverses up to the integer rounding of a pixel hit.
 */

export interface ViewTransform {
  zoom: number;
  panX: number;
  panY: number;
}

export interface ImageSize {
  height: number;
  width: number;
}

/** Canvas position of the center of image pixel (row, col). */
export function imageToCanvas(
  row: number,
  col: number,
  view: ViewTransform
): { x: number; y: number } {
  return {
    x: (col + 0.5) * view.zoom + view.panX,
    y: (row + 0.5) * view.zoom + view.panY,
  };
}

/** Image pixel under a canvas position, or null when outside the image. */
export function canvasToImage(
  x: number,
  y: number,
  view: ViewTransform,
  size: ImageSize
): { row: number; col: number } | null {
  const col = Math.floor((x - view.panX) / view.zoom);
  const row = Math.floor((y - view.panY) / view.zoom);
  if (row < 0 || col < 0 || row >= size.height || col >= size.width) return null;
  return { row, col };
}
