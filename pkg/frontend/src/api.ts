/**
 * Typed client for the segmentation endpoint.
 *
 * One request in flight at a time: a newer submission aborts the pending
 * one. The fetch function is injectable for tests.
 */

import { SegmentRequestBody, SegmentResult } from "./state.js";

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export interface ClassInfo {
  classes: string[];
  template: string;
}

export class ApiError extends Error {
  constructor(
    public status: number,
    message: string,
    public body: unknown = null
  ) {
    super(message);
  }
}

export class SegmentClient {
  private pending: AbortController | null = null;

  constructor(
    private baseUrl: string,
    private fetchFn: FetchLike = (url, init) => fetch(url, init)
  ) {}

  async loadClasses(): Promise<ClassInfo> {
    const resp = await this.fetchFn(`${this.baseUrl}/classes`);
    if (!resp.ok) throw new ApiError(resp.status, `classes failed: ${resp.status}`);
    const body = await resp.json();
    return { classes: body.classes, template: body.template };
  }

  async health(): Promise<boolean> {
    try {
      const resp = await this.fetchFn(`${this.baseUrl}/health`);
      return resp.ok;
    } catch {
      return false;
    }
  }

  /** POST /segment; aborts any still-pending earlier call. */
  async segment(request: SegmentRequestBody): Promise<SegmentResult> {
    if (this.pending) this.pending.abort();
    const controller = new AbortController();
    this.pending = controller;
    try {
      const resp = await this.fetchFn(`${this.baseUrl}/segment`, {
        method: "POST",
        headers: { "Content-Type": "application/json" },
        body: JSON.stringify(request),
        signal: controller.signal,
      });
      const body = await resp.json();
      if (!resp.ok) {
        throw new ApiError(resp.status, body.error ?? `segment failed: ${resp.status}`, body);
      }
      return {
        maskRle: body.mask_rle,
        maskHeight: body.mask_height,
        maskWidth: body.mask_width,
        pointsUsed: body.points_used.map((p: number[]) => ({ row: p[0], col: p[1] })),
        pointSource: body.point_source,
        similarityB64: body.similarity_b64,
        modelVersion: body.model_version,
      };
    } finally {
      if (this.pending === controller) this.pending = null;
    }
  }
}
