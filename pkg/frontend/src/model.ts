/** UI session state: threshold draft, committed distribution, projection. */

import {
  ApiClient,
  CommitResponse,
  HistogramResponse,
  SlideDetail,
} from "./api";

/**
 * Positive count projected from histogram bins for a draft threshold,
 * before any server round-trip.
 *
 * Counts every bin whose lower edge is >= the draft, matching the
 * server's inclusive (mean >= threshold) gate whenever bin mass sits on
 * lower edges. Draft below the first edge projects the full instance
 * count; draft above the last edge projects zero.
 */
export function projectPositiveCount(
  hist: Pick<HistogramResponse, "bin_edges" | "counts">,
  draft: number,
): number {
  let total = 0;
  for (let i = 0; i < hist.counts.length; i++) {
    if (hist.bin_edges[i] >= draft) total += hist.counts[i];
  }
  return total;
}

export interface CommitOutcome {
  sent: boolean;
  response?: CommitResponse;
  error?: string;
}

export class SessionModel {
  slideId: string | null = null;
  stain: string | null = null;
  detail: SlideDetail | null = null;
  histogram: HistogramResponse | null = null;

  /** Local draft; null until the user moves the marker. */
  draft: number | null = null;
  committedThreshold: number | null = null;
  /** Verbatim last server distribution. */
  classCounts: Record<string, number> | null = null;
  positiveCounts: Record<string, number> | null = null;
  lastError: string | null = null;

  private histogramSeq = 0;
  private commitInFlight = false;

  constructor(private api: ApiClient) {}

  async selectSlide(slideId: string): Promise<void> {
    this.slideId = slideId;
    this.detail = await this.api.slideDetail(slideId);
    this.classCounts = this.detail.class_counts;
    if (this.stain === null || !this.detail.stains.includes(this.stain)) {
      this.stain = this.detail.stains[0] ?? null;
    }
    await this.refreshHistogram();
  }

  async selectStain(stain: string): Promise<void> {
    this.stain = stain;
    this.draft = null;
    await this.refreshHistogram();
  }

  /** Stale responses (an older request resolving late) are discarded. */
  async refreshHistogram(bins = 64): Promise<void> {
    if (this.slideId === null || this.stain === null) return;
    const seq = ++this.histogramSeq;
    const h = await this.api.histogram(this.slideId, this.stain, bins);
    if (seq !== this.histogramSeq) return;
    this.histogram = h;
    this.committedThreshold = h.threshold;
  }

  setDraft(value: number): void {
    if (!Number.isFinite(value) || value < 0) {
      throw new Error("draft threshold must be finite and >= 0");
    }
    this.draft = value;
  }

  projectedPositives(): number | null {
    if (this.histogram === null) return null;
    const t = this.draft ?? this.committedThreshold;
    if (t === null) return null;
    return projectPositiveCount(this.histogram, t);
  }

  /**
   * PUT the draft. Suppressed when the draft equals the committed value
   * or another commit is in flight; a failed commit leaves the committed
   * value and distribution untouched and records the error.
   */
  async commit(): Promise<CommitOutcome> {
    if (
      this.slideId === null ||
      this.stain === null ||
      this.draft === null ||
      this.draft === this.committedThreshold ||
      this.commitInFlight
    ) {
      return { sent: false };
    }
    this.commitInFlight = true;
    try {
      const resp = await this.api.putThresholds(this.slideId, {
        [this.stain]: this.draft,
      });
      this.committedThreshold = resp.thresholds[this.stain];
      this.classCounts = resp.class_counts;
      this.positiveCounts = resp.positive_counts;
      this.lastError = null;
      await this.refreshHistogram(
        this.histogram ? this.histogram.counts.length : 64,
      );
      return { sent: true, response: resp };
    } catch (e) {
      this.lastError = e instanceof Error ? e.message : String(e);
      return { sent: true, error: this.lastError };
    } finally {
      this.commitInFlight = false;
    }
  }
}
