"""Slide-bundle on-disk format: manifest + channel rasters + instance map.

A bundle is a directory containing ``manifest.json``, one grayscale PNG per
channel (8- or 16-bit per the manifest), and a headerless little-endian
uint32 raw file for the instance map (row-major, dimensions from the
manifest; raw because instance ids can exceed 65535).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

SITES = ("ascending_colon", "terminal_ileum", "other")
DISEASES = ("normal", "diseased")

MANIFEST_NAME = "manifest.json"


class BundleError(Exception):
    """Malformed or inconsistent slide bundle."""


@dataclass(frozen=True)
class SlideManifest:
    slide_id: str
    patient_id: str
    site: str
    disease: str
    width_px: int
    height_px: int
    microns_per_pixel: float
    bit_depth: int
    channels: tuple[str, ...]
    instance_map: str = "instance_map.u32"
    channel_files: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if self.site not in SITES:
            raise BundleError(f"unknown site {self.site!r}")
        if self.disease not in DISEASES:
            raise BundleError(f"unknown disease {self.disease!r}")
        if self.width_px <= 0 or self.height_px <= 0:
            raise BundleError("width_px/height_px must be positive")
        if self.microns_per_pixel <= 0:
            raise BundleError("microns_per_pixel must be positive")
        if self.bit_depth not in (8, 16):
            raise BundleError(f"unknown bit depth {self.bit_depth}")
        if len(set(self.channels)) != len(self.channels):
            raise BundleError("channel names must be unique")
        if not self.channel_files:
            object.__setattr__(
                self, "channel_files", {c: f"{c}.png" for c in self.channels}
            )

    @property
    def intensity_max(self) -> int:
        return (1 << self.bit_depth) - 1

    @property
    def dtype(self):
        return np.uint8 if self.bit_depth == 8 else np.uint16

    def to_dict(self) -> dict:
        return {
            "slide_id": self.slide_id,
            "patient_id": self.patient_id,
            "site": self.site,
            "disease": self.disease,
            "width_px": self.width_px,
            "height_px": self.height_px,
            "microns_per_pixel": self.microns_per_pixel,
            "bit_depth": self.bit_depth,
            "channels": list(self.channels),
            "instance_map": self.instance_map,
            "channel_files": dict(self.channel_files),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SlideManifest":
        try:
            return cls(
                slide_id=d["slide_id"],
                patient_id=d["patient_id"],
                site=d["site"],
                disease=d["disease"],
                width_px=int(d["width_px"]),
                height_px=int(d["height_px"]),
                microns_per_pixel=float(d["microns_per_pixel"]),
                bit_depth=int(d["bit_depth"]),
                channels=tuple(d["channels"]),
                instance_map=d.get("instance_map", "instance_map.u32"),
                channel_files=dict(d.get("channel_files", {})),
            )
        except KeyError as e:
            raise BundleError(f"manifest missing key {e.args[0]!r}") from e


@dataclass(frozen=True)
class TileRequest:
    x: int
    y: int
    width: int
    height: int


class SlideBundle:
    """Read handle over a bundle directory.

    Channel rasters load lazily on first access and are cached; the
    instance map is memory-mapped. Immutable after open, so handles are
    safe to share across concurrent readers.
    """

    def __init__(self, path: Path, manifest: SlideManifest):
        self.path = Path(path)
        self.manifest = manifest
        self._channel_cache: dict[str, np.ndarray] = {}
        self._instance_map: np.ndarray | None = None

    # -- raster access -------------------------------------------------

    def channel(self, name: str) -> np.ndarray:
        if name not in self.manifest.channel_files:
            raise BundleError(f"unknown channel {name!r}")
        if name not in self._channel_cache:
            arr = _read_png(self.path / self.manifest.channel_files[name])
            h, w = arr.shape
            if (w, h) != (self.manifest.width_px, self.manifest.height_px):
                raise BundleError(
                    f"channel {name!r} is {w}x{h}, manifest says "
                    f"{self.manifest.width_px}x{self.manifest.height_px}"
                )
            self._channel_cache[name] = arr.astype(self.manifest.dtype)
        return self._channel_cache[name]

    def instance_map(self) -> np.ndarray:
        if self._instance_map is None:
            path = self.path / self.manifest.instance_map
            if not path.exists():
                raise BundleError(f"instance map file missing: {path}")
            m = self.manifest
            expected = m.width_px * m.height_px * 4
            if path.stat().st_size != expected:
                raise BundleError(
                    f"instance map is {path.stat().st_size} bytes, "
                    f"expected {expected}"
                )
            self._instance_map = np.memmap(
                path, dtype="<u4", mode="r", shape=(m.height_px, m.width_px)
            )
        return self._instance_map

    # -- tiles ---------------------------------------------------------

    def read_tile(self, channel: str, req: TileRequest) -> np.ndarray:
        return _cut_tile(self.channel(channel), req, self.manifest.dtype)

    def read_instance_tile(self, req: TileRequest) -> np.ndarray:
        return _cut_tile(self.instance_map(), req, np.uint32)

    def iter_tiles(self, tile_size: int):
        """Yield TileRequests covering the image in a regular grid."""
        m = self.manifest
        for y in range(0, m.height_px, tile_size):
            for x in range(0, m.width_px, tile_size):
                yield TileRequest(
                    x, y, min(tile_size, m.width_px - x), min(tile_size, m.height_px - y)
                )

    # -- derived rasters -----------------------------------------------

    def merge_channels_sum(self, channels: list[str]) -> np.ndarray:
        """Per-pixel sum of channels, clamped to the bundle's bit-depth max.

        Accumulates at 64-bit width; clamping (not wraparound) keeps the
        result usable as a segmentation input.
        """
        if not channels:
            raise BundleError("merge_channels_sum: empty channel list")
        acc = np.zeros(
            (self.manifest.height_px, self.manifest.width_px), dtype=np.int64
        )
        for name in channels:
            acc += self.channel(name).astype(np.int64)
        np.clip(acc, 0, self.manifest.intensity_max, out=acc)
        return acc.astype(self.manifest.dtype)


def _cut_tile(raster: np.ndarray, req: TileRequest, dtype) -> np.ndarray:
    h, w = raster.shape
    if req.width <= 0 or req.height <= 0:
        raise BundleError("tile must have positive size")
    if req.x >= w or req.y >= h or req.x + req.width <= 0 or req.y + req.height <= 0:
        raise BundleError("tile is fully outside image bounds")
    out = np.zeros((req.height, req.width), dtype=dtype)
    x0, y0 = max(req.x, 0), max(req.y, 0)
    x1, y1 = min(req.x + req.width, w), min(req.y + req.height, h)
    out[y0 - req.y : y1 - req.y, x0 - req.x : x1 - req.x] = raster[y0:y1, x0:x1]
    return out


def _read_png(path: Path) -> np.ndarray:
    if not path.exists():
        raise BundleError(f"raster file missing: {path}")
    with Image.open(path) as im:
        arr = np.asarray(im)
    if arr.ndim != 2:
        raise BundleError(f"{path.name}: expected single-channel raster")
    return arr


def read_bundle(path) -> SlideBundle:
    """Open a bundle directory; rasters are not loaded until accessed."""
    path = Path(path)
    mpath = path / MANIFEST_NAME
    if not mpath.exists():
        raise BundleError(f"no {MANIFEST_NAME} in {path}")
    try:
        raw = json.loads(mpath.read_text())
    except json.JSONDecodeError as e:
        raise BundleError(f"corrupt manifest: {e}") from e
    return SlideBundle(path, SlideManifest.from_dict(raw))


def write_bundle(
    path,
    manifest: SlideManifest,
    channels: dict[str, np.ndarray],
    instance_map: np.ndarray,
) -> SlideBundle:
    """Write a whole bundle to a directory (single-writer, whole-bundle)."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    m = manifest
    if set(channels) != set(m.channels):
        raise BundleError("channel dict does not match manifest channel list")
    for name in m.channels:
        arr = np.ascontiguousarray(channels[name], dtype=m.dtype)
        if arr.shape != (m.height_px, m.width_px):
            raise BundleError(f"channel {name!r} shape mismatch")
        Image.fromarray(arr).save(path / m.channel_files[name])
    imap = np.ascontiguousarray(instance_map, dtype="<u4")
    if imap.shape != (m.height_px, m.width_px):
        raise BundleError("instance map shape mismatch")
    (path / m.instance_map).write_bytes(imap.tobytes())
    (path / MANIFEST_NAME).write_text(json.dumps(m.to_dict(), indent=2))
    return SlideBundle(path, m)
