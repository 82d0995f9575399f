/** Typed client for the threshold service HTTP API. */

export interface SlideSummary {
  slide_id: string;
  patient_id: string;
  site: string;
  disease: string;
  width_px: number;
  height_px: number;
  instance_count: number;
}

export interface SlideList {
  slides: SlideSummary[];
  warnings: string[];
}

export interface SlideDetail {
  slide_id: string;
  width_px: number;
  height_px: number;
  tile_size: number;
  max_level: number;
  channels: string[];
  stains: string[];
  thresholds: Record<string, number>;
  class_counts: Record<string, number>;
  instance_count: number;
}

export interface HistogramResponse {
  stain: string;
  bin_edges: number[];
  counts: number[];
  threshold: number | null;
  positive_count: number | null;
  instance_count: number;
}

export interface CommitResponse {
  thresholds: Record<string, number>;
  positive_counts: Record<string, number>;
  class_counts: Record<string, number>;
}

export class ApiError extends Error {
  constructor(public status: number, message: string) {
    super(message);
  }
}

type FetchFn = typeof fetch;

export class ApiClient {
  constructor(
    private base: string = "",
    private fetchFn: FetchFn = (...a) => fetch(...a),
  ) {}

  private async getJson<T>(path: string): Promise<T> {
    const r = await this.fetchFn(this.base + path);
    if (!r.ok) throw new ApiError(r.status, await r.text());
    return (await r.json()) as T;
  }

  listSlides(): Promise<SlideList> {
    return this.getJson("/api/slides");
  }

  slideDetail(slideId: string): Promise<SlideDetail> {
    return this.getJson(`/api/slides/${encodeURIComponent(slideId)}`);
  }

  histogram(slideId: string, stain: string, bins = 64): Promise<HistogramResponse> {
    const q = new URLSearchParams({ stain, bins: String(bins) });
    return this.getJson(`/api/slides/${encodeURIComponent(slideId)}/histogram?${q}`);
  }

  async putThresholds(
    slideId: string,
    body: Record<string, number>,
  ): Promise<CommitResponse> {
    const r = await this.fetchFn(
      `${this.base}/api/slides/${encodeURIComponent(slideId)}/thresholds`,
      {
        method: "PUT",
        headers: { "content-type": "application/json" },
        body: JSON.stringify(body),
      },
    );
    if (!r.ok) throw new ApiError(r.status, await r.text());
    return (await r.json()) as CommitResponse;
  }

  tileUrl(slideId: string, z: number, x: number, y: number, layer: string): string {
    const q = new URLSearchParams({ layer });
    return `${this.base}/api/slides/${encodeURIComponent(slideId)}/tiles/${z}/${x}/${y}?${q}`;
  }
}
