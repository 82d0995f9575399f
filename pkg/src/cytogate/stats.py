"""Per-instance geometry and mean stain intensity, plus threshold gating.

Statistics stream over tiles; partial sums are held in 64-bit integers and
divided exactly once at the end, so the result is identical for any tile
size and any tile visit order.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .bundle import BundleError, SlideBundle

DEFAULT_TILE = 1024


class StatsError(Exception):
    pass


@dataclass
class InstanceStatsTable:
    """Rows keyed by instance id: area, centroid, per-channel mean."""

    instance_ids: np.ndarray          # (N,) uint32, sorted, nonzero
    area_px: np.ndarray               # (N,) int64
    centroid: np.ndarray              # (N, 2) float64, (x, y)
    channels: list[str]
    mean_intensity: np.ndarray        # (N, C) float64

    def __len__(self) -> int:
        return len(self.instance_ids)

    def channel_index(self, name: str) -> int:
        try:
            return self.channels.index(name)
        except ValueError:
            raise StatsError(f"no stats column for stain {name!r}") from None

    def means_for(self, name: str) -> np.ndarray:
        return self.mean_intensity[:, self.channel_index(name)]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(
                ["instance_id", "area_px", "centroid_x", "centroid_y"] + self.channels
            )
            for i, iid in enumerate(self.instance_ids):
                w.writerow(
                    [int(iid), int(self.area_px[i]),
                     repr(float(self.centroid[i, 0])), repr(float(self.centroid[i, 1]))]
                    + [repr(float(v)) for v in self.mean_intensity[i]]
                )

    @classmethod
    def from_csv(cls, path) -> "InstanceStatsTable":
        with open(path, newline="") as f:
            rows = list(csv.reader(f))
        header, body = rows[0], rows[1:]
        channels = header[4:]
        ids = np.array([int(r[0]) for r in body], dtype=np.uint32)
        area = np.array([int(r[1]) for r in body], dtype=np.int64)
        cent = np.array([[float(r[2]), float(r[3])] for r in body], dtype=np.float64)
        cent = cent.reshape(len(body), 2)
        means = np.array([[float(v) for v in r[4:]] for r in body], dtype=np.float64)
        means = means.reshape(len(body), len(channels))
        return cls(ids, area, cent, channels, means)


@dataclass
class ThresholdSet:
    """Per-stain gating thresholds for one slide."""

    values: dict[str, float]
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        for stain, v in self.values.items():
            v = float(v)
            if not np.isfinite(v) or v < 0:
                raise StatsError(f"threshold for {stain!r} must be finite and >= 0")
            self.values[stain] = v

    def to_json(self, path) -> None:
        doc = dict(self.values)
        doc["_meta"] = self.provenance
        Path(path).write_text(json.dumps(doc, indent=2))

    @classmethod
    def from_json(cls, path) -> "ThresholdSet":
        doc = json.loads(Path(path).read_text())
        meta = doc.pop("_meta", {})
        return cls(values=doc, provenance=meta)


@dataclass
class PositivityMatrix:
    """Instance x stain boolean calls after thresholding."""

    instance_ids: np.ndarray       # (N,) uint32
    stains: list[str]
    calls: np.ndarray              # (N, S) bool

    def column(self, stain: str) -> np.ndarray:
        try:
            return self.calls[:, self.stains.index(stain)]
        except ValueError:
            raise StatsError(f"no positivity column for stain {stain!r}") from None

    def positive_count(self, stain: str) -> int:
        return int(self.column(stain).sum())

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["instance_id"] + self.stains)
            for i, iid in enumerate(self.instance_ids):
                w.writerow([int(iid)] + [int(v) for v in self.calls[i]])

    @classmethod
    def from_csv(cls, path) -> "PositivityMatrix":
        with open(path, newline="") as f:
            rows = list(csv.reader(f))
        stains = rows[0][1:]
        ids = np.array([int(r[0]) for r in rows[1:]], dtype=np.uint32)
        calls = np.array(
            [[bool(int(v)) for v in r[1:]] for r in rows[1:]], dtype=bool
        ).reshape(len(ids), len(stains))
        return cls(ids, stains, calls)


def compute_stats(
    bundle: SlideBundle, channels: list[str] | None = None, tile_size: int = DEFAULT_TILE
) -> InstanceStatsTable:
    """Stream tiles and aggregate per-instance area, centroid, channel means."""
    m = bundle.manifest
    if channels is None:
        channels = list(m.channels)
    for c in channels:
        if c not in m.channel_files:
            raise BundleError(f"unknown channel {c!r}")
    bundle.instance_map()  # fail early if absent

    max_id = 0
    for req in bundle.iter_tiles(tile_size):
        t = bundle.read_instance_tile(req)
        if t.size:
            max_id = max(max_id, int(t.max()))
    n_bins = max_id + 1

    area = np.zeros(n_bins, dtype=np.int64)
    sum_x = np.zeros(n_bins, dtype=np.int64)
    sum_y = np.zeros(n_bins, dtype=np.int64)
    sum_int = np.zeros((n_bins, len(channels)), dtype=np.int64)

    for req in bundle.iter_tiles(tile_size):
        ids = bundle.read_instance_tile(req).ravel()
        if not ids.any():
            continue
        th, tw = req.height, req.width
        ys, xs = np.divmod(np.arange(th * tw, dtype=np.int64), tw)
        xs += req.x
        ys += req.y
        # bincount weight sums are exact here: per-tile totals stay far
        # below 2**53, and the running totals are int64.
        area += np.bincount(ids, minlength=n_bins).astype(np.int64)
        sum_x += np.bincount(ids, weights=xs, minlength=n_bins).astype(np.int64)
        sum_y += np.bincount(ids, weights=ys, minlength=n_bins).astype(np.int64)
        for ci, name in enumerate(channels):
            vals = bundle.read_tile(name, req).ravel().astype(np.int64)
            sum_int[:, ci] += np.bincount(ids, weights=vals, minlength=n_bins).astype(
                np.int64
            )

    present = np.flatnonzero(area)
    present = present[present != 0]
    a = area[present].astype(np.float64)
    centroid = np.stack([sum_x[present] / a, sum_y[present] / a], axis=1)
    means = sum_int[present] / a[:, None]
    return InstanceStatsTable(
        instance_ids=present.astype(np.uint32),
        area_px=area[present],
        centroid=centroid,
        channels=list(channels),
        mean_intensity=means,
    )


def apply_thresholds(stats: InstanceStatsTable, th: ThresholdSet) -> PositivityMatrix:
    """Gate each instance per stain: positive iff mean intensity >= threshold.

    The inclusive boundary makes a displayed threshold exactly the first
    positive value.
    """
    stains = list(th.values)
    calls = np.zeros((len(stats), len(stains)), dtype=bool)
    for si, stain in enumerate(stains):
        calls[:, si] = stats.means_for(stain) >= th.values[stain]
    return PositivityMatrix(stats.instance_ids.copy(), stains, calls)
