import numpy as np
import pytest

from cytogate.bundle import SlideManifest, write_bundle


def make_manifest(slide_id="s1", patient_id="p1", site="ascending_colon",
                  disease="normal", width=64, height=64, mpp=0.32,
                  bit_depth=16, channels=("DAPI", "Muc2", "CD45")):
    return SlideManifest(
        slide_id=slide_id,
        patient_id=patient_id,
        site=site,
        disease=disease,
        width_px=width,
        height_px=height,
        microns_per_pixel=mpp,
        bit_depth=bit_depth,
        channels=tuple(channels),
    )


def make_random_bundle(path, rng, n_instances=3, width=64, height=64,
                       channels=("DAPI", "Muc2", "CD45"), **kwargs):
    """A bundle with square instances dropped at random positions."""
    manifest = make_manifest(width=width, height=height, channels=channels, **kwargs)
    chans = {
        c: rng.integers(0, manifest.intensity_max + 1, size=(height, width)).astype(
            manifest.dtype
        )
        for c in channels
    }
    imap = np.zeros((height, width), dtype=np.uint32)
    for iid in range(1, n_instances + 1):
        size = int(rng.integers(2, 6))
        x = int(rng.integers(0, width - size))
        y = int(rng.integers(0, height - size))
        imap[y : y + size, x : x + size] = iid
    bundle = write_bundle(path, manifest, chans, imap)
    return bundle, chans, imap


def make_stain_bundle(path, positives_by_instance, width=64, height=64,
                      hot=1000, slide_id="s1", patient_id="p1",
                      site="ascending_colon", disease="normal"):
    """Bundle with all 17 stain channels and 4x4 square instances.

    positives_by_instance: {instance id: set of stains that should read hot}.
    Instances are laid out on an 8-px grid; stain pixels are `hot` inside
    the instance, 0 elsewhere, so a threshold between 0 and `hot` gates
    them cleanly.
    """
    from cytogate.cascade import STAINS

    manifest = make_manifest(
        slide_id=slide_id, patient_id=patient_id, site=site, disease=disease,
        width=width, height=height, channels=STAINS,
    )
    chans = {c: np.zeros((height, width), dtype=np.uint16) for c in STAINS}
    imap = np.zeros((height, width), dtype=np.uint32)
    per_row = width // 8
    for iid, stains in positives_by_instance.items():
        r, c = divmod(iid - 1, per_row)
        y, x = r * 8 + 2, c * 8 + 2
        imap[y : y + 4, x : x + 4] = iid
        for s in stains:
            chans[s][y : y + 4, x : x + 4] = hot
    return write_bundle(path, manifest, chans, imap)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_bundle(tmp_path, rng):
    bundle, chans, imap = make_random_bundle(tmp_path / "b1", rng)
    return bundle
