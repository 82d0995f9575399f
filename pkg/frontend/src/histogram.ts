/** Histogram drawing and threshold-marker arithmetic. */

import { HistogramResponse } from "./api";

/** Marker x position in pixels: linear map of value onto the bin range. */
export function markerX(
  value: number,
  edges: number[],
  plotWidth: number,
): number {
  const lo = edges[0];
  const hi = edges[edges.length - 1];
  if (hi === lo) return 0;
  const frac = (value - lo) / (hi - lo);
  return Math.min(Math.max(frac, 0), 1) * plotWidth;
}

/** Inverse of markerX: pixel offset back to a threshold value. */
export function valueAtX(x: number, edges: number[], plotWidth: number): number {
  const lo = edges[0];
  const hi = edges[edges.length - 1];
  const frac = Math.min(Math.max(x / plotWidth, 0), 1);
  return lo + frac * (hi - lo);
}

export function drawHistogram(
  canvas: HTMLCanvasElement,
  hist: HistogramResponse | null,
  draft: number | null,
  committed: number | null,
): void {
  const ctx = canvas.getContext("2d");
  if (!ctx) return;
  const { width, height } = canvas;
  ctx.clearRect(0, 0, width, height);
  if (!hist || hist.counts.length === 0) {
    ctx.fillStyle = "#888";
    ctx.fillText("no histogram", 8, 16);
    return;
  }
  const peak = Math.max(...hist.counts, 1);
  const barW = width / hist.counts.length;
  ctx.fillStyle = "#4a7fb5";
  hist.counts.forEach((c, i) => {
    const h = (c / peak) * (height - 4);
    ctx.fillRect(i * barW, height - h, Math.max(barW - 1, 1), h);
  });
  const line = (value: number, color: string) => {
    const x = markerX(value, hist.bin_edges, width);
    ctx.strokeStyle = color;
    ctx.beginPath();
    ctx.moveTo(x, 0);
    ctx.lineTo(x, height);
    ctx.stroke();
  };
  if (committed !== null) line(committed, "#999");
  if (draft !== null) line(draft, "#d62728");
}
