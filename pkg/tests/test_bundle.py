import json

import numpy as np
import pytest

from cytogate.bundle import (
    BundleError,
    SlideManifest,
    TileRequest,
    read_bundle,
    write_bundle,
)
from conftest import make_manifest, make_random_bundle


def test_read_bundle_echoes_manifest(small_bundle):
    assert small_bundle.manifest.width_px == 64
    assert small_bundle.manifest.height_px == 64
    assert len(small_bundle.manifest.channels) == 3


def test_dimension_mismatch_rejected(tmp_path, rng):
    bundle, chans, imap = make_random_bundle(tmp_path / "b", rng)
    # rewrite one raster at the wrong size
    from PIL import Image

    bad = np.zeros((32, 32), dtype=np.uint16)
    Image.fromarray(bad).save(tmp_path / "b" / "Muc2.png")
    reopened = read_bundle(tmp_path / "b")
    with pytest.raises(BundleError, match="32x32"):
        reopened.channel("Muc2")


def test_extra_channels_ignorable(tmp_path, rng):
    names = tuple(f"ch{i}" for i in range(27))
    bundle, _, _ = make_random_bundle(tmp_path / "b", rng, channels=names)
    reopened = read_bundle(tmp_path / "b")
    assert len(reopened.manifest.channels) == 27
    # touching only a 17-channel subset loads fine
    for c in names[:17]:
        reopened.channel(c)


def test_missing_manifest(tmp_path):
    with pytest.raises(BundleError, match="manifest"):
        read_bundle(tmp_path)


def test_corrupt_manifest(tmp_path):
    (tmp_path / "manifest.json").write_text("{not json")
    with pytest.raises(BundleError, match="corrupt"):
        read_bundle(tmp_path)


def test_unknown_bit_depth_rejected():
    with pytest.raises(BundleError, match="bit depth"):
        make_manifest(bit_depth=12)


def test_duplicate_channels_rejected():
    with pytest.raises(BundleError, match="unique"):
        make_manifest(channels=("A", "A"))


def test_round_trip_bit_identical(tmp_path, rng):
    bundle, chans, imap = make_random_bundle(tmp_path / "orig", rng)
    reread = read_bundle(tmp_path / "orig")
    out = write_bundle(
        tmp_path / "copy",
        reread.manifest,
        {c: reread.channel(c) for c in reread.manifest.channels},
        np.asarray(reread.instance_map()),
    )
    again = read_bundle(tmp_path / "copy")
    for c in reread.manifest.channels:
        np.testing.assert_array_equal(again.channel(c), chans[c])
    np.testing.assert_array_equal(np.asarray(again.instance_map()), imap)


class TestReadTile:
    def test_constant_channel(self, tmp_path):
        m = make_manifest(channels=("A",))
        arr = np.full((64, 64), 37, dtype=np.uint16)
        b = write_bundle(tmp_path / "b", m, {"A": arr}, np.zeros((64, 64), np.uint32))
        tile = b.read_tile("A", TileRequest(10, 10, 16, 16))
        assert (tile == 37).all()

    def test_boundary_tile_zero_filled(self, tmp_path):
        m = make_manifest(channels=("A",))
        arr = np.full((64, 64), 5, dtype=np.uint16)
        b = write_bundle(tmp_path / "b", m, {"A": arr}, np.zeros((64, 64), np.uint32))
        tile = b.read_tile("A", TileRequest(-8, 0, 16, 16))
        assert (tile[:, :8] == 0).all()
        assert (tile[:, 8:] == 5).all()

    def test_checkerboard_identity(self, tmp_path):
        m = make_manifest(channels=("A",))
        arr = np.indices((64, 64)).sum(axis=0).astype(np.uint16) % 2 * 100
        b = write_bundle(tmp_path / "b", m, {"A": arr}, np.zeros((64, 64), np.uint32))
        tile = b.read_tile("A", TileRequest(0, 0, 2, 2))
        np.testing.assert_array_equal(tile, arr[:2, :2])

    def test_unknown_channel(self, small_bundle):
        with pytest.raises(BundleError, match="unknown channel"):
            small_bundle.read_tile("nope", TileRequest(0, 0, 8, 8))

    def test_fully_outside(self, small_bundle):
        with pytest.raises(BundleError, match="outside"):
            small_bundle.read_tile("DAPI", TileRequest(100, 100, 8, 8))

    def test_tiling_reconstructs_raster(self, tmp_path, rng):
        bundle, chans, _ = make_random_bundle(tmp_path / "b", rng)
        for ts in (7, 16, 64):
            rebuilt = np.zeros((64, 64), dtype=np.uint16)
            for req in bundle.iter_tiles(ts):
                rebuilt[req.y : req.y + req.height, req.x : req.x + req.width] = (
                    bundle.read_tile("CD45", req)
                )
            np.testing.assert_array_equal(rebuilt, chans["CD45"])


class TestMergeChannels:
    def make(self, tmp_path, a, b, bit_depth=16):
        m = make_manifest(channels=("A", "B"), bit_depth=bit_depth)
        dtype = np.uint8 if bit_depth == 8 else np.uint16
        return write_bundle(
            tmp_path / "m",
            m,
            {"A": np.full((64, 64), a, dtype), "B": np.full((64, 64), b, dtype)},
            np.zeros((64, 64), np.uint32),
        )

    def test_simple_sum(self, tmp_path):
        b = self.make(tmp_path, 100, 50)
        assert b.merge_channels_sum(["A", "B"])[0, 0] == 150

    def test_clamped_at_bit_depth(self, tmp_path):
        b = self.make(tmp_path, 65000, 60000)
        assert b.merge_channels_sum(["A", "B"])[0, 0] == 65535

    def test_single_channel_identity(self, tmp_path):
        b = self.make(tmp_path, 123, 7)
        np.testing.assert_array_equal(b.merge_channels_sum(["A"]), b.channel("A"))

    def test_commutative(self, tmp_path, rng):
        bundle, _, _ = make_random_bundle(tmp_path / "b", rng)
        ab = bundle.merge_channels_sum(["DAPI", "Muc2"])
        ba = bundle.merge_channels_sum(["Muc2", "DAPI"])
        np.testing.assert_array_equal(ab, ba)

    def test_empty_list_rejected(self, small_bundle):
        with pytest.raises(BundleError, match="empty"):
            small_bundle.merge_channels_sum([])
