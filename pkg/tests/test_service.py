import numpy as np
import pytest
from fastapi.testclient import TestClient

from cytogate.cascade import STAINS, load_default_program, run_cascade
from cytogate.palette import CLASS_PALETTE
from cytogate.service import create_app, max_level
from cytogate.stats import ThresholdSet, apply_thresholds, compute_stats
from cytogate.bundle import read_bundle
from conftest import make_random_bundle, make_stain_bundle

FIXTURE_INSTANCES = {
    1: {"Muc2"},              # goblet once gated
    2: {"NaKATPase"},         # enterocyte
    3: {"CD45", "CD4"},       # helper T
    4: set(),                 # excluded (all negative)
}


@pytest.fixture
def data_root(tmp_path):
    root = tmp_path / "root"
    root.mkdir()
    make_stain_bundle(root / "s1", FIXTURE_INSTANCES, slide_id="s1")
    make_stain_bundle(root / "s2", {1: {"Vimentin"}}, slide_id="s2",
                      patient_id="p2", site="terminal_ileum", disease="diseased")
    return root


@pytest.fixture
def client(data_root):
    return TestClient(create_app(data_root))


def gate_all(client, value=500.0):
    body = {s: value for s in STAINS}
    r = client.put("/api/slides/s1/thresholds", json=body)
    assert r.status_code == 200
    return r.json()


class TestSlides:
    def test_two_fixtures_listed(self, client):
        r = client.get("/api/slides").json()
        assert [s["slide_id"] for s in r["slides"]] == ["s1", "s2"]
        assert r["slides"][0]["instance_count"] == 4
        assert r["warnings"] == []

    def test_empty_root(self, tmp_path):
        (tmp_path / "empty").mkdir()
        c = TestClient(create_app(tmp_path / "empty"))
        assert c.get("/api/slides").json()["slides"] == []

    def test_corrupt_bundle_excluded_with_warning(self, data_root):
        bad = data_root / "bad"
        bad.mkdir()
        (bad / "manifest.json").write_text("{broken")
        c = TestClient(create_app(data_root))
        r = c.get("/api/slides").json()
        assert [s["slide_id"] for s in r["slides"]] == ["s1", "s2"]
        assert any("bad" in w for w in r["warnings"])


class TestHistogram:
    def test_fixture_bins(self, tmp_path):
        # 3 instances with means 10, 20, 30 on one stain
        root = tmp_path / "r"
        root.mkdir()
        make_stain_bundle(root / "s", {1: {"Muc2"}, 2: {"Muc2"}, 3: {"Muc2"}},
                          slide_id="s", hot=1)
        b = read_bundle(root / "s")
        # overwrite Muc2 so the three instances have means 10/20/30
        from cytogate.bundle import write_bundle

        chans = {c: np.array(b.channel(c)) for c in b.manifest.channels}
        imap = np.array(b.instance_map())
        for iid, v in ((1, 10), (2, 20), (3, 30)):
            chans["Muc2"][imap == iid] = v
        write_bundle(root / "s", b.manifest, chans, imap)
        c = TestClient(create_app(root))
        r = c.get("/api/slides/s/histogram", params={"stain": "Muc2", "bins": 2}).json()
        assert r["bin_edges"] == [10.0, 20.0, 30.0]
        assert r["counts"] == [1, 2]
        c.put("/api/slides/s/thresholds", json={"Muc2": 15.0})
        r = c.get("/api/slides/s/histogram", params={"stain": "Muc2", "bins": 2}).json()
        assert r["positive_count"] == 2

    def test_single_bin(self, client):
        r = client.get("/api/slides/s1/histogram",
                       params={"stain": "Muc2", "bins": 1}).json()
        assert sum(r["counts"]) == r["instance_count"] == 4
        assert r["counts"] == [4]

    def test_unknown_stain_404(self, client):
        assert client.get("/api/slides/s1/histogram",
                          params={"stain": "nope"}).status_code == 404

    def test_bad_bins_422(self, client):
        assert client.get("/api/slides/s1/histogram",
                          params={"stain": "Muc2", "bins": 5000}).status_code == 422


class TestThresholds:
    def test_threshold_below_all_means_all_positive(self, client):
        gate_all(client)
        r = client.put("/api/slides/s1/thresholds", json={"Muc2": 0.0}).json()
        assert r["positive_counts"]["Muc2"] == 4

    def test_goblet_appears_in_distribution(self, client):
        r = gate_all(client)
        assert r["class_counts"]["goblet"] == 1
        assert r["class_counts"]["enterocyte"] == 1
        assert r["class_counts"]["helper_t"] == 1
        assert r["class_counts"]["excluded"] == 1

    def test_last_write_wins(self, client):
        gate_all(client)
        client.put("/api/slides/s1/thresholds", json={"Muc2": 100.0})
        client.put("/api/slides/s1/thresholds", json={"Muc2": 900.0})
        r = client.get("/api/slides/s1").json()
        assert r["thresholds"]["Muc2"] == 900.0

    def test_invalid_stain_422(self, client):
        assert client.put("/api/slides/s1/thresholds",
                          json={"Ghost": 1.0}).status_code == 422

    def test_non_finite_422(self, client):
        r = client.put("/api/slides/s1/thresholds",
                       content='{"Muc2": Infinity}',
                       headers={"content-type": "application/json"})
        assert r.status_code == 422

    def test_persisted_thresholds_reusable_by_batch_gate(self, client, data_root):
        gate_all(client)
        ts = ThresholdSet.from_json(data_root / "s1" / "thresholds.json")
        assert ts.values["Muc2"] == 500.0

    def test_cache_coherence_with_offline_run(self, client, data_root, rng):
        program = load_default_program()
        for _ in range(10):
            stain = STAINS[rng.integers(len(STAINS))]
            value = float(rng.uniform(0, 1200))
            served = client.put(
                "/api/slides/s1/thresholds", json={stain: value}
            ).json()["class_counts"]
            bundle = read_bundle(data_root / "s1")
            stats = compute_stats(bundle)
            ts = ThresholdSet.from_json(data_root / "s1" / "thresholds.json")
            offline = run_cascade(program, apply_thresholds(stats, ts)).class_counts()
            assert served == offline


class TestTiles:
    def test_background_only_tile_transparent(self, client):
        import io
        from PIL import Image

        gate_all(client)
        r = client.get("/api/slides/s1/tiles/0/0/0", params={"layer": "class"})
        assert r.status_code == 200
        arr = np.asarray(Image.open(io.BytesIO(r.content)))
        # instance-free pixels are fully transparent
        assert (arr[0, 0] == [0, 0, 0, 0]).all()

    def test_goblet_pixels_use_palette_color(self, client):
        import io
        from PIL import Image

        gate_all(client)
        r = client.get("/api/slides/s1/tiles/0/0/0", params={"layer": "class"})
        arr = np.asarray(Image.open(io.BytesIO(r.content)))
        # instance 1 occupies rows 2-5, cols 2-5
        assert tuple(arr[3, 3][:3]) == CLASS_PALETTE["goblet"]
        assert arr[3, 3][3] == 255

    def test_positivity_layer_green_vs_gray(self, client):
        import io
        from PIL import Image

        gate_all(client)
        r = client.get("/api/slides/s1/tiles/0/0/0",
                       params={"layer": "positivity:Muc2"})
        arr = np.asarray(Image.open(io.BytesIO(r.content)))
        assert tuple(arr[3, 3][:3]) == (0, 200, 0)      # instance 1: Muc2+
        assert tuple(arr[3, 11][:3]) == (128, 128, 128)  # instance 2: Muc2-

    def test_pyramid_parent_is_strided_child(self, tmp_path):
        root = tmp_path / "r"
        root.mkdir()
        make_stain_bundle(root / "big", {1: {"Muc2"}}, width=512, height=512,
                          slide_id="big")
        c = TestClient(create_app(root))
        import io
        from PIL import Image

        child = np.asarray(Image.open(io.BytesIO(
            c.get("/api/slides/big/tiles/0/0/0",
                  params={"layer": "channel:Muc2"}).content)))
        parent = np.asarray(Image.open(io.BytesIO(
            c.get("/api/slides/big/tiles/1/0/0",
                  params={"layer": "channel:Muc2"}).content)))
        np.testing.assert_array_equal(parent[:128, :128], child[::2, ::2])

    def test_bad_layer_400(self, client):
        assert client.get("/api/slides/s1/tiles/0/0/0",
                          params={"layer": "bogus"}).status_code == 400

    def test_out_of_range_coords_400(self, client):
        assert client.get("/api/slides/s1/tiles/0/9/9",
                          params={"layer": "class"}).status_code == 400


def test_max_level():
    assert max_level(256, 256) == 0
    assert max_level(257, 100) == 1
    assert max_level(1024, 1024) == 2
