"""Patch extraction at 0.5 um/px: resampling, normalization, balanced sampling.

Patches are 41x41xC, centered on the instance centroid after resampling,
min-max normalized per patch to [0, 1]. The export format is a contiguous
little-endian float32 blob plus a CSV manifest, so any training framework
can consume it.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .bundle import SlideBundle
from .cascade import CellClass, LabelAssignment, NUCLEUS_CELL_CLASSES
from .stats import InstanceStatsTable

PATCH_SIDE = 41
TARGET_MPP = 0.5
CUBIC_A = -0.5  # Catmull-Rom


class PatchError(Exception):
    pass


# ---------------------------------------------------------------------------
# separable bicubic resampling


def _cubic_kernel(t: np.ndarray) -> np.ndarray:
    """Keys cubic kernel with a = -0.5; t is |distance| in source pixels."""
    a = CUBIC_A
    t = np.abs(t)
    out = np.zeros_like(t)
    near = t < 1
    far = (t >= 1) & (t < 2)
    tn = t[near]
    out[near] = ((a + 2) * tn - (a + 3)) * tn * tn + 1
    tf = t[far]
    out[far] = (((tf - 5) * tf + 8) * tf - 4) * a
    return out


def _axis_weights(n_src: int, n_dst: int):
    """Tap indices (n_dst, 4) and weights (n_dst, 4) for one axis."""
    scale = n_src / n_dst
    centers = (np.arange(n_dst) + 0.5) * scale - 0.5
    base = np.floor(centers).astype(np.int64)
    frac = centers - base
    offsets = np.array([-1, 0, 1, 2])
    taps = base[:, None] + offsets[None, :]
    weights = _cubic_kernel(frac[:, None] - offsets[None, :])
    taps = np.clip(taps, 0, n_src - 1)  # edge replication
    return taps, weights


def resample_bicubic(raster: np.ndarray, src_mpp: float, dst_mpp: float) -> np.ndarray:
    """Separable Catmull-Rom resampling between pixel pitches.

    Output extent is round(extent * src_mpp / dst_mpp); values are clamped
    to the input range after interpolation.
    """
    if src_mpp <= 0 or dst_mpp <= 0:
        raise PatchError("pixel pitches must be positive")
    h, w = raster.shape[:2]
    factor = src_mpp / dst_mpp
    out_h = int(round(h * factor))
    out_w = int(round(w * factor))
    if out_h == 0 or out_w == 0:
        raise PatchError(f"degenerate output size {out_w}x{out_h}")
    if src_mpp == dst_mpp:
        return raster.copy()

    data = raster.astype(np.float64)
    ty, wy = _axis_weights(h, out_h)
    tx, wx = _axis_weights(w, out_w)
    # rows then columns; the kernel is separable so order is irrelevant
    tmp = np.einsum("ok,okw...->ow...", wy, data[ty])
    out = np.einsum("ok,hok...->ho...", wx, tmp[:, tx])
    lo, hi = float(data.min()), float(data.max())
    np.clip(out, lo, hi, out=out)
    if np.issubdtype(raster.dtype, np.integer):
        out = np.rint(out)
    return out.astype(raster.dtype)


def _round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


# ---------------------------------------------------------------------------
# patches


@dataclass
class Patch:
    pixels: np.ndarray          # (41, 41, C) float in [0, 1]
    instance_id: int
    outcome: CellClass
    slide_id: str
    center_um: tuple[float, float]


def normalize_patch(raw: np.ndarray) -> np.ndarray:
    """Min-max normalize one patch to [0, 1]; constant patches map to zeros."""
    lo = float(raw.min())
    hi = float(raw.max())
    if hi == lo:
        return np.zeros_like(raw, dtype=np.float64)
    return (raw.astype(np.float64) - lo) / (hi - lo)


def extract_patch_from_resampled(
    resampled: np.ndarray,
    centroid_src_px: tuple[float, float],
    src_mpp: float,
    outcome: CellClass,
    instance_id: int,
    slide_id: str,
    dst_mpp: float = TARGET_MPP,
) -> Patch:
    """Cut a 41x41 window around a source-resolution centroid.

    The centroid is mapped into the resampled grid and rounded half-up;
    out-of-image pixels are filled by edge replication.
    """
    h, w = resampled.shape[:2]
    cx, cy = centroid_src_px
    factor = src_mpp / dst_mpp
    sx = _round_half_up(cx * factor)
    sy = _round_half_up(cy * factor)
    if not (0 <= sx < w and 0 <= sy < h):
        raise PatchError(
            f"centroid ({cx}, {cy}) maps outside the resampled image"
        )
    half = PATCH_SIDE // 2
    ys = np.clip(np.arange(sy - half, sy + half + 1), 0, h - 1)
    xs = np.clip(np.arange(sx - half, sx + half + 1), 0, w - 1)
    raw = resampled[np.ix_(ys, xs)]
    if raw.ndim == 2:
        raw = raw[:, :, None]
    return Patch(
        pixels=normalize_patch(raw),
        instance_id=instance_id,
        outcome=outcome,
        slide_id=slide_id,
        center_um=(cx * src_mpp, cy * src_mpp),
    )


def extract_patch(
    bundle: SlideBundle,
    centroid_px: tuple[float, float],
    outcome: CellClass,
    instance_id: int,
    channels: list[str] | None = None,
) -> Patch:
    """Resample the bundle's channels to 0.5 um/px and cut one patch."""
    stack = resampled_stack(bundle, channels)
    return extract_patch_from_resampled(
        stack, centroid_px, bundle.manifest.microns_per_pixel,
        outcome, instance_id, bundle.manifest.slide_id,
    )


def resampled_stack(bundle: SlideBundle, channels: list[str] | None = None) -> np.ndarray:
    """(H', W', C) stack of all channels resampled to 0.5 um/px."""
    names = list(channels) if channels is not None else list(bundle.manifest.channels)
    planes = [
        resample_bicubic(bundle.channel(c), bundle.manifest.microns_per_pixel, TARGET_MPP)
        for c in names
    ]
    return np.stack(planes, axis=-1)


# ---------------------------------------------------------------------------
# dataset export


@dataclass
class DatasetManifest:
    records: list[dict]   # index, slide_id, instance_id, class, cx_um, cy_um
    n_channels: int
    microns_per_pixel: float = TARGET_MPP

    def class_counts(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for r in self.records:
            counts[r["class"]] = counts.get(r["class"], 0) + 1
        return counts

    def indices_by_class(self) -> dict[str, list[int]]:
        by: dict[str, list[int]] = {}
        for r in self.records:
            by.setdefault(r["class"], []).append(r["index"])
        return by

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["index", "slide_id", "instance_id", "class", "cx_um", "cy_um"])
            for r in self.records:
                w.writerow([r["index"], r["slide_id"], r["instance_id"],
                            r["class"], r["cx_um"], r["cy_um"]])

    @classmethod
    def from_csv(cls, path, n_channels: int) -> "DatasetManifest":
        with open(path, newline="") as f:
            rows = list(csv.DictReader(f))
        records = [
            {
                "index": int(r["index"]),
                "slide_id": r["slide_id"],
                "instance_id": int(r["instance_id"]),
                "class": r["class"],
                "cx_um": float(r["cx_um"]),
                "cy_um": float(r["cy_um"]),
            }
            for r in rows
        ]
        return cls(records, n_channels)


class PatchDataset:
    """Float32 patch blob + manifest, memory-mapped for reading."""

    def __init__(self, blob_path: Path, manifest: DatasetManifest):
        self.manifest = manifest
        c = manifest.n_channels
        self.patches = np.memmap(
            blob_path, dtype="<f4", mode="r",
        ).reshape(-1, PATCH_SIDE, PATCH_SIDE, c)
        if len(self.patches) != len(manifest.records):
            raise PatchError("blob length does not match manifest")

    def __len__(self) -> int:
        return len(self.manifest.records)

    def patch(self, index: int) -> np.ndarray:
        return np.asarray(self.patches[index], dtype=np.float64)

    def label(self, index: int) -> str:
        return self.manifest.records[index]["class"]


def build_dataset(
    bundles: list[SlideBundle],
    stats_tables: list[InstanceStatsTable],
    assignments: list[LabelAssignment],
    out_dir,
    channels: list[str] | None = None,
) -> PatchDataset:
    """Extract one patch per labeled (non-sentinel) instance across slides."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    blob_path = out_dir / "patches.f32"
    records: list[dict] = []
    n_channels = None
    with open(blob_path, "wb") as blob:
        for bundle, stats, assign in zip(bundles, stats_tables, assignments):
            stack = resampled_stack(bundle, channels)
            if n_channels is None:
                n_channels = stack.shape[-1]
            id_to_row = {int(i): r for r, i in enumerate(stats.instance_ids)}
            for iid, outcome in zip(assign.instance_ids, assign.outcomes):
                if outcome.is_sentinel:
                    continue
                row = id_to_row[int(iid)]
                cx, cy = stats.centroid[row]
                p = extract_patch_from_resampled(
                    stack, (cx, cy), bundle.manifest.microns_per_pixel,
                    outcome, int(iid), bundle.manifest.slide_id,
                )
                blob.write(p.pixels.astype("<f4").tobytes())
                records.append({
                    "index": len(records),
                    "slide_id": p.slide_id,
                    "instance_id": p.instance_id,
                    "class": outcome.value,
                    "cx_um": p.center_um[0],
                    "cy_um": p.center_um[1],
                })
    manifest = DatasetManifest(records, n_channels or 0)
    manifest.to_csv(out_dir / "manifest.csv")
    return PatchDataset(blob_path, manifest)


def open_dataset(path) -> PatchDataset:
    path = Path(path)
    with open(path / "patches.f32", "rb") as f:
        f.seek(0, 2)
        nbytes = f.tell()
    with open(path / "manifest.csv", newline="") as f:
        n_records = sum(1 for _ in f) - 1
    if n_records <= 0:
        raise PatchError("empty dataset manifest")
    n_channels = nbytes // (4 * PATCH_SIDE * PATCH_SIDE * n_records)
    manifest = DatasetManifest.from_csv(path / "manifest.csv", n_channels)
    return PatchDataset(path / "patches.f32", manifest)


# ---------------------------------------------------------------------------
# class-balanced sampling


def balanced_sampler(manifest: DatasetManifest, seed: int, n: int):
    """Yield n patch indices: class uniform, then instance uniform in class.

    Draws are with replacement and deterministic for a given seed. Classes
    with zero patches are skipped with a warning.
    """
    if not manifest.records:
        raise PatchError("empty manifest")
    by_class = manifest.indices_by_class()
    available = [c.value for c in NUCLEUS_CELL_CLASSES if c.value in by_class]
    missing = [c.value for c in NUCLEUS_CELL_CLASSES if c.value not in by_class]
    if missing:
        warnings.warn(f"classes with no patches excluded from sampling: {missing}")
    if not available:
        raise PatchError("no nucleus/cell class has any patch")
    pools = [np.array(by_class[c], dtype=np.int64) for c in available]
    rng = np.random.default_rng(seed)
    for _ in range(n):
        pool = pools[rng.integers(len(pools))]
        yield int(pool[rng.integers(len(pool))])
