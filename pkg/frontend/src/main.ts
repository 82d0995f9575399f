/** App wiring: slide/stain pickers, histogram with draggable marker,
 * class-distribution panel, and the tiled overlay viewer. */

import { ApiClient } from "./api";
import { drawHistogram, valueAtX } from "./histogram";
import { CLASS_PALETTE, rgbHex } from "./legend";
import { SessionModel } from "./model";
import { clampViewport, visibleTiles, Viewport } from "./tiles";

const api = new ApiClient();
const model = new SessionModel(api);

const el = <T extends HTMLElement>(id: string) =>
  document.getElementById(id) as T;

const slideSelect = el<HTMLSelectElement>("slide-select");
const stainSelect = el<HTMLSelectElement>("stain-select");
const layerSelect = el<HTMLSelectElement>("layer-select");
const histCanvas = el<HTMLCanvasElement>("histogram");
const draftLabel = el<HTMLSpanElement>("draft-label");
const projectedLabel = el<HTMLSpanElement>("projected-label");
const commitBtn = el<HTMLButtonElement>("commit-btn");
const errorBox = el<HTMLDivElement>("error-box");
const countsBody = el<HTMLTableSectionElement>("counts-body");
const tileGrid = el<HTMLDivElement>("tile-grid");
const legendBox = el<HTMLDivElement>("legend");

let viewport: Viewport = { centerX: 0, centerY: 0, level: 0 };

function renderCounts(): void {
  countsBody.innerHTML = "";
  const counts = model.classCounts ?? {};
  for (const [name] of CLASS_PALETTE) {
    if (!(name in counts)) continue;
    const tr = document.createElement("tr");
    tr.innerHTML = `<td>${name}</td><td>${counts[name]}</td>`;
    countsBody.appendChild(tr);
  }
}

function renderLegend(): void {
  legendBox.innerHTML = "";
  for (const [name, rgb] of CLASS_PALETTE) {
    const row = document.createElement("div");
    row.className = "legend-row";
    row.innerHTML =
      `<span class="swatch" style="background:${rgbHex(rgb)}"></span>${name}`;
    legendBox.appendChild(row);
  }
}

function renderHistogram(): void {
  drawHistogram(histCanvas, model.histogram, model.draft, model.committedThreshold);
  const t = model.draft ?? model.committedThreshold;
  draftLabel.textContent = t === null ? "—" : t.toFixed(1);
  const p = model.projectedPositives();
  projectedLabel.textContent = p === null ? "—" : String(p);
}

function renderTiles(): void {
  tileGrid.innerHTML = "";
  const d = model.detail;
  if (!d || model.slideId === null) return;
  viewport = clampViewport(viewport, d.width_px, d.height_px, d.max_level);
  const layer =
    layerSelect.value === "positivity" && model.stain !== null
      ? `positivity:${model.stain}`
      : layerSelect.value === "channel" && model.stain !== null
        ? `channel:${model.stain}`
        : "class";
  const tiles = visibleTiles(
    viewport, tileGrid.clientWidth || 512, tileGrid.clientHeight || 512,
    d.tile_size, d.width_px, d.height_px,
  );
  for (const t of tiles) {
    const img = document.createElement("img");
    img.width = d.tile_size;
    img.height = d.tile_size;
    img.src = api.tileUrl(model.slideId, t.z, t.x, t.y, layer);
    // missing tiles: keep the placeholder background, never crash
    img.onerror = () => img.classList.add("tile-missing");
    tileGrid.appendChild(img);
  }
  tileGrid.style.gridTemplateColumns =
    `repeat(${new Set(tiles.map((t) => t.x)).size || 1}, ${d.tile_size}px)`;
}

function renderAll(): void {
  renderHistogram();
  renderCounts();
  renderTiles();
  errorBox.textContent = model.lastError ?? "";
}

async function loadSlide(slideId: string): Promise<void> {
  await model.selectSlide(slideId);
  const d = model.detail!;
  viewport = {
    centerX: d.width_px / 2,
    centerY: d.height_px / 2,
    level: d.max_level,
  };
  stainSelect.innerHTML = "";
  for (const s of d.stains) {
    const o = document.createElement("option");
    o.value = o.textContent = s;
    stainSelect.appendChild(o);
  }
  if (model.stain !== null) stainSelect.value = model.stain;
  renderAll();
}

histCanvas.addEventListener("pointerdown", (ev) => {
  const drag = (e: PointerEvent) => {
    if (!model.histogram) return;
    const rect = histCanvas.getBoundingClientRect();
    const v = valueAtX(e.clientX - rect.left, model.histogram.bin_edges, rect.width);
    model.setDraft(Math.max(0, v));
    renderHistogram();
  };
  drag(ev);
  const up = () => {
    window.removeEventListener("pointermove", drag);
    window.removeEventListener("pointerup", up);
  };
  window.addEventListener("pointermove", drag);
  window.addEventListener("pointerup", up);
});

commitBtn.addEventListener("click", async () => {
  await model.commit();
  renderAll();
});

slideSelect.addEventListener("change", () => void loadSlide(slideSelect.value));
stainSelect.addEventListener("change", async () => {
  await model.selectStain(stainSelect.value);
  renderAll();
});
layerSelect.addEventListener("change", renderTiles);

for (const [id, dx, dy, dz] of [
  ["pan-left", -128, 0, 0], ["pan-right", 128, 0, 0],
  ["pan-up", 0, -128, 0], ["pan-down", 0, 128, 0],
  ["zoom-in", 0, 0, -1], ["zoom-out", 0, 0, 1],
] as const) {
  el<HTMLButtonElement>(id).addEventListener("click", () => {
    const stride = 1 << viewport.level;
    viewport = {
      centerX: viewport.centerX + dx * stride,
      centerY: viewport.centerY + dy * stride,
      level: viewport.level + dz,
    };
    renderTiles();
  });
}

async function init(): Promise<void> {
  renderLegend();
  const list = await api.listSlides();
  slideSelect.innerHTML = "";
  for (const s of list.slides) {
    const o = document.createElement("option");
    o.value = o.textContent = s.slide_id;
    slideSelect.appendChild(o);
  }
  if (list.slides.length > 0) await loadSlide(list.slides[0].slide_id);
}

void init();
