"""HTTP service for interactive threshold tuning.

Exposes slide inventory, per-stain mean-intensity histograms, threshold
mutation with live recomputation of positivity and cascade classes, and
class/positivity/channel overlay tiles for the browser UI.

State per slide is an immutable snapshot swapped atomically under a
per-slide writer lock; readers always observe a complete snapshot.
"""

from __future__ import annotations

import io
import math
import threading
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from fastapi import FastAPI, HTTPException, Query, Response
from fastapi.staticfiles import StaticFiles
from PIL import Image

from .bundle import BundleError, SlideBundle, read_bundle
from .cascade import (
    CellClass,
    RuleProgram,
    load_default_program,
    run_cascade,
)
from .palette import CLASS_PALETTE, NEGATIVE_COLOR, POSITIVE_COLOR
from .stats import (
    InstanceStatsTable,
    PositivityMatrix,
    StatsError,
    ThresholdSet,
    apply_thresholds,
    compute_stats,
)

TILE_SIZE = 256
THRESHOLDS_FILE = "thresholds.json"


@dataclass(frozen=True)
class SlideSnapshot:
    """One coherent view of a slide's gating state."""

    bundle: SlideBundle
    stats: InstanceStatsTable
    thresholds: ThresholdSet
    positivity: PositivityMatrix
    outcome_by_id: dict  # instance id -> outcome value string
    class_counts: dict


class SessionState:
    def __init__(self, root: Path, program: RuleProgram | None = None):
        self.root = Path(root)
        self.program = program or load_default_program()
        self.warnings: list[str] = []
        self._snapshots: dict[str, SlideSnapshot] = {}
        self._locks: dict[str, threading.Lock] = {}
        self._bundles: dict[str, SlideBundle] = {}
        self._scan()

    def _scan(self) -> None:
        for path in sorted(self.root.iterdir()) if self.root.exists() else []:
            if not (path / "manifest.json").exists():
                continue
            try:
                bundle = read_bundle(path)
            except BundleError as e:
                self.warnings.append(f"{path.name}: {e}")
                continue
            sid = bundle.manifest.slide_id
            self._bundles[sid] = bundle
            # re-entrant: update_thresholds reads the current snapshot
            # while already holding the writer lock
            self._locks[sid] = threading.RLock()

    def slide_ids(self) -> list[str]:
        return sorted(self._bundles)

    def snapshot(self, slide_id: str) -> SlideSnapshot:
        if slide_id not in self._bundles:
            raise KeyError(slide_id)
        snap = self._snapshots.get(slide_id)
        if snap is None:
            with self._locks[slide_id]:
                snap = self._snapshots.get(slide_id)
                if snap is None:
                    snap = self._build(slide_id, None)
                    self._snapshots[slide_id] = snap
        return snap

    def _threshold_path(self, slide_id: str) -> Path:
        return self._bundles[slide_id].path / THRESHOLDS_FILE

    def _build(self, slide_id: str, thresholds: ThresholdSet | None) -> SlideSnapshot:
        bundle = self._bundles[slide_id]
        prev = self._snapshots.get(slide_id)
        stats = prev.stats if prev else compute_stats(bundle)
        if thresholds is None:
            tpath = self._threshold_path(slide_id)
            if tpath.exists():
                thresholds = ThresholdSet.from_json(tpath)
            else:
                thresholds = ThresholdSet({s: 0.0 for s in bundle.manifest.channels})
        pm = apply_thresholds(stats, thresholds)
        assignment = run_cascade(self.program, pm)
        outcome_by_id = {
            int(i): o.value
            for i, o in zip(assignment.instance_ids, assignment.outcomes)
        }
        return SlideSnapshot(
            bundle=bundle,
            stats=stats,
            thresholds=thresholds,
            positivity=pm,
            outcome_by_id=outcome_by_id,
            class_counts=assignment.class_counts(),
        )

    def update_thresholds(self, slide_id: str, partial: dict) -> SlideSnapshot:
        if slide_id not in self._bundles:
            raise KeyError(slide_id)
        with self._locks[slide_id]:
            current = self.snapshot(slide_id)
            merged = dict(current.thresholds.values)
            for stain, value in partial.items():
                if stain not in current.stats.channels:
                    raise ValueError(f"unknown stain {stain!r}")
                value = float(value)
                if not math.isfinite(value) or value < 0:
                    raise ValueError(f"threshold for {stain!r} must be finite and >= 0")
                merged[stain] = value
            ts = ThresholdSet(merged, provenance=current.thresholds.provenance)
            ts.to_json(self._threshold_path(slide_id))
            snap = self._build(slide_id, ts)
            self._snapshots[slide_id] = snap  # atomic swap
        return snap


# ---------------------------------------------------------------------------
# tile rendering


def max_level(width: int, height: int) -> int:
    return max(0, math.ceil(math.log2(max(max(width, height) / TILE_SIZE, 1))))


def _level_view(full: np.ndarray, z: int) -> np.ndarray:
    step = 1 << z
    return full[::step, ::step]


def render_tile(snap: SlideSnapshot, layer: str, z: int, x: int, y: int) -> bytes:
    m = snap.bundle.manifest
    if z < 0 or z > max_level(m.width_px, m.height_px):
        raise ValueError(f"level {z} outside pyramid")
    if layer.startswith("channel:"):
        name = layer.split(":", 1)[1]
        full = snap.bundle.channel(name)  # raises BundleError on bad name
        view = _level_view(full, z)
        tile = _cut(view, x, y)
        gray = (tile.astype(np.float64) * (255.0 / m.intensity_max)).astype(np.uint8)
        rgba = np.dstack([gray, gray, gray, np.full_like(gray, 255)])
    elif layer.startswith("positivity:") or layer == "class":
        imap = _cut(_level_view(snap.bundle.instance_map(), z), x, y)
        rgba = np.zeros((TILE_SIZE, TILE_SIZE, 4), dtype=np.uint8)
        ids = np.unique(imap[imap != 0])
        if layer == "class":
            lookup = {
                i: CLASS_PALETTE[snap.outcome_by_id[int(i)]] for i in ids.tolist()
            }
        else:
            stain = layer.split(":", 1)[1]
            col = snap.positivity.column(stain)
            pos = {
                int(i)
                for i, v in zip(snap.positivity.instance_ids, col)
                if v
            }
            lookup = {
                i: (POSITIVE_COLOR if i in pos else NEGATIVE_COLOR)
                for i in ids.tolist()
            }
        for iid, color in lookup.items():
            mask = imap == iid
            rgba[mask] = (*color, 255)
    else:
        raise ValueError(f"unknown layer {layer!r}")
    buf = io.BytesIO()
    Image.fromarray(rgba, "RGBA").save(buf, format="PNG")
    return buf.getvalue()


def _cut(view: np.ndarray, x: int, y: int) -> np.ndarray:
    lh, lw = view.shape
    x0, y0 = x * TILE_SIZE, y * TILE_SIZE
    if x < 0 or y < 0 or x0 >= lw or y0 >= lh:
        raise ValueError(f"tile ({x}, {y}) outside level bounds {lw}x{lh}")
    out = np.zeros((TILE_SIZE, TILE_SIZE), dtype=view.dtype)
    sub = view[y0 : y0 + TILE_SIZE, x0 : x0 + TILE_SIZE]
    out[: sub.shape[0], : sub.shape[1]] = sub
    return out


# ---------------------------------------------------------------------------
# app


def create_app(
    root, program: RuleProgram | None = None, static_dir: Path | None = None
) -> FastAPI:
    state = SessionState(Path(root), program)
    app = FastAPI(title="cytogate threshold service")
    app.state.session = state

    def _snap(slide_id: str) -> SlideSnapshot:
        try:
            return state.snapshot(slide_id)
        except KeyError:
            raise HTTPException(404, f"unknown slide {slide_id!r}")

    @app.get("/api/slides")
    def list_slides():
        slides = []
        for sid in state.slide_ids():
            snap = state.snapshot(sid)
            m = snap.bundle.manifest
            slides.append({
                "slide_id": sid,
                "patient_id": m.patient_id,
                "site": m.site,
                "disease": m.disease,
                "width_px": m.width_px,
                "height_px": m.height_px,
                "instance_count": len(snap.stats),
            })
        return {"slides": slides, "warnings": state.warnings}

    @app.get("/api/slides/{slide_id}")
    def slide_detail(slide_id: str):
        snap = _snap(slide_id)
        m = snap.bundle.manifest
        return {
            "slide_id": slide_id,
            "width_px": m.width_px,
            "height_px": m.height_px,
            "tile_size": TILE_SIZE,
            "max_level": max_level(m.width_px, m.height_px),
            "channels": list(m.channels),
            "stains": list(snap.thresholds.values),
            "thresholds": snap.thresholds.values,
            "class_counts": snap.class_counts,
            "instance_count": len(snap.stats),
        }

    @app.get("/api/slides/{slide_id}/histogram")
    def histogram(
        slide_id: str,
        stain: str,
        bins: int = Query(default=64, ge=1, le=1024),
    ):
        snap = _snap(slide_id)
        if stain not in snap.stats.channels:
            raise HTTPException(404, f"unknown stain {stain!r}")
        means = snap.stats.means_for(stain)
        lo, hi = float(means.min()), float(means.max())
        if hi == lo:
            hi = lo + 1.0
        counts, edges = np.histogram(means, bins=bins, range=(lo, hi))
        threshold = snap.thresholds.values.get(stain)
        positive = int((means >= threshold).sum()) if threshold is not None else None
        return {
            "stain": stain,
            "bin_edges": edges.tolist(),
            "counts": counts.tolist(),
            "threshold": threshold,
            "positive_count": positive,
            "instance_count": len(means),
        }

    @app.put("/api/slides/{slide_id}/thresholds")
    def put_thresholds(slide_id: str, body: dict):
        try:
            snap = state.update_thresholds(slide_id, body)
        except KeyError:
            raise HTTPException(404, f"unknown slide {slide_id!r}")
        except (ValueError, TypeError) as e:
            raise HTTPException(422, str(e))
        positive_counts = {
            s: snap.positivity.positive_count(s) for s in snap.positivity.stains
        }
        return {
            "thresholds": snap.thresholds.values,
            "positive_counts": positive_counts,
            "class_counts": snap.class_counts,
        }

    @app.get("/api/slides/{slide_id}/tiles/{z}/{x}/{y}")
    def tile(slide_id: str, z: int, x: int, y: int, layer: str = "class"):
        snap = _snap(slide_id)
        try:
            png = render_tile(snap, layer, z, x, y)
        except (ValueError, BundleError, StatsError) as e:
            raise HTTPException(400, str(e))
        return Response(content=png, media_type="image/png")

    if static_dir is not None and Path(static_dir).exists():
        app.mount("/", StaticFiles(directory=static_dir, html=True), name="ui")
    return app
