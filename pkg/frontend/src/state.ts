/**
 * Session state and its transitions.
 *
 * Pure reducer-style functions so the rules are unit-testable without a
 * DOM: points clear when the image changes, a mode switch keeps image and
 * class, manual submissions require at least one point.
 */

export type Mode = "manual" | "semi_automatic";

export interface Point {
  row: number;
  col: number;
}

export interface SegmentResult {
  maskRle: number[];
  maskHeight: number;
  maskWidth: number;
  pointsUsed: Point[];
  pointSource: string;
  similarityB64: string;
  modelVersion: string;
}

export interface SessionState {
  imageB64: string | null;
  imageHeight: number;
  imageWidth: number;
  selectedClass: string | null;
  points: Point[];
  mode: Mode;
  seed: number;
  lastResult: SegmentResult | null;
  overlayOpacity: number;
}

export function initialState(): SessionState {
  return {
    imageB64: null,
    imageHeight: 0,
    imageWidth: 0,
    selectedClass: null,
    points: [],
    mode: "manual",
    seed: 0,
    lastResult: null,
    overlayOpacity: 0.55,
  };
}

export function withImage(
  state: SessionState,
  imageB64: string,
  height: number,
  width: number
): SessionState {
  // new image invalidates clicks and the old overlay
  return { ...state, imageB64, imageHeight: height, imageWidth: width, points: [], lastResult: null };
}

export function withMode(state: SessionState, mode: Mode): SessionState {
  return { ...state, mode };
}

export function withClass(state: SessionState, selectedClass: string): SessionState {
  return { ...state, selectedClass };
}

export function addPoint(state: SessionState, point: Point): SessionState {
  if (
    point.row < 0 ||
    point.col < 0 ||
    point.row >= state.imageHeight ||
    point.col >= state.imageWidth
  ) {
    return state;
  }
  return { ...state, points: [...state.points, point] };
}

export function undoPoint(state: SessionState): SessionState {
  return { ...state, points: state.points.slice(0, -1) };
}

export function clearPoints(state: SessionState): SessionState {
  return { ...state, points: [] };
}

export function canSubmit(state: SessionState): boolean {
  if (!state.imageB64 || !state.selectedClass) return false;
  if (state.mode === "manual" && state.points.length === 0) return false;
  return true;
}

export interface SegmentRequestBody {
  image_b64: string;
  class_text: string;
  points: number[][] | null;
  mode: Mode;
  seed: number;
}

export function buildRequest(state: SessionState): SegmentRequestBody {
  if (!canSubmit(state)) {
    throw new Error("state is not submittable");
  }
  return {
    image_b64: state.imageB64 as string,
    class_text: state.selectedClass as string,
    points: state.mode === "manual" ? state.points.map((p) => [p.row, p.col]) : null,
    mode: state.mode,
    seed: state.seed,
  };
}
