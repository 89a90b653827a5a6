import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from gancircle import data as D
from gancircle.resample import interpolation_matrix, upsample2

from oracles import lanczos_kernel


def _write_manifest(tmp_path, n=3, size=40, domain="Y"):
    entries = []
    rng = np.random.default_rng(0)
    for i in range(n):
        name = f"s{i}.png"
        D.write_slice(tmp_path / name, D.ImageSlice(rng.random((size, size)), slice_id=f"s{i}"))
        entries.append(D.ManifestEntry(name, domain, f"p{i}"))
    D.write_manifest(D.DatasetManifest(entries), tmp_path / "m.txt")
    return tmp_path / "m.txt"


def test_manifest_load_in_order(tmp_path):
    slices = D.load_slices(_write_manifest(tmp_path))
    assert [s.slice_id for s in slices] == ["s0", "s1", "s2"]
    assert all(s.domain == "Y" for s in slices)


def test_manifest_missing_path(tmp_path):
    m = _write_manifest(tmp_path)
    (tmp_path / "s1.png").unlink()
    with pytest.raises(FileNotFoundError, match="s1.png"):
        D.load_slices(m)


def test_manifest_duplicate_pairing(tmp_path):
    (tmp_path / "m.txt").write_text("#version 1\na.png\tY\tp\nb.png\tY\tp\n")
    with pytest.raises(D.ManifestError, match="twice"):
        D.read_manifest(tmp_path / "m.txt")


def test_manifest_bad_version_and_fields(tmp_path):
    (tmp_path / "m.txt").write_text("#version 2\n")
    with pytest.raises(D.ManifestError, match="version"):
        D.read_manifest(tmp_path / "m.txt")
    (tmp_path / "m.txt").write_text("#version 1\na.png\tY\n")
    with pytest.raises(D.ManifestError, match="3 tab-separated"):
        D.read_manifest(tmp_path / "m.txt")


def test_manifest_round_trip(tmp_path):
    m = D.DatasetManifest([D.ManifestEntry("a.png", "Y", None), D.ManifestEntry("b.raw", "X", "k")],
                          header={"source": "unit"})
    D.write_manifest(m, tmp_path / "m.txt")
    back = D.read_manifest(tmp_path / "m.txt")
    assert back.entries == m.entries and back.header == m.header


def test_slice_too_small(tmp_path):
    with pytest.raises(D.ManifestError, match="minimum size"):
        D.load_slices(_write_manifest(tmp_path, size=16))


def test_hu_window_map():
    lo, hi = -1000.0, 400.0
    assert D.hu_to_unit(lo, (lo, hi)) == 0.0
    assert D.hu_to_unit(hi, (lo, hi)) == 1.0
    assert D.hu_to_unit((lo + hi) / 2, (lo, hi)) == 0.5
    assert D.hu_to_unit(hi + 500, (lo, hi)) == 1.0
    with pytest.raises(ValueError):
        D.hu_to_unit(0.0, (5.0, 5.0))


@settings(max_examples=50)
@given(arrays(np.uint16, (4, 5), elements=st.integers(0, 4095)))
def test_stored_values_round_trip(stored):
    back = D.encode_slice(D.decode_slice(stored, D.DEFAULT_HU_WINDOW), D.DEFAULT_HU_WINDOW)
    np.testing.assert_array_equal(back, stored)


@pytest.mark.parametrize("suffix", [".png", ".raw"])
def test_slice_file_round_trip(tmp_path, suffix):
    sl = D.ImageSlice(np.random.default_rng(1).random((6, 9)), spacing=(0.5, 0.7), slice_id="a")
    D.write_slice(tmp_path / f"a{suffix}", sl)
    back = D.read_slice(tmp_path / f"a{suffix}")
    assert back.spacing == (0.5, 0.7)
    assert np.abs(back.pixels - sl.pixels).max() <= 0.5 / 4095 + 1e-12


def test_raw_needs_sidecar(tmp_path):
    np.zeros(4, dtype="<u2").tofile(tmp_path / "a.raw")
    with pytest.raises(D.ManifestError, match="sidecar"):
        D.read_stored(tmp_path / "a.raw")


def test_simulate_constant_and_blocks():
    spec = D.DegradationSpec(noise_sigma=0.0)
    out = D.simulate_lr(D.ImageSlice(np.full((8, 6), 0.3)), spec)
    assert out.shape == (4, 3)
    np.testing.assert_allclose(out.pixels, 0.3, rtol=0, atol=1e-15)
    blocks = np.random.default_rng(2).random((3, 4))
    tiled = np.kron(blocks, np.ones((2, 2)))
    np.testing.assert_array_equal(D.simulate_lr(D.ImageSlice(tiled), spec).pixels, blocks)


def test_simulate_deterministic_and_seeded():
    hr = D.ImageSlice(np.random.default_rng(3).random((16, 16)), slice_id="z")
    a = D.simulate_lr(hr, D.DegradationSpec(seed=4)).pixels
    b = D.simulate_lr(hr, D.DegradationSpec(seed=4)).pixels
    c = D.simulate_lr(hr, D.DegradationSpec(seed=5)).pixels
    assert a.tobytes() == b.tobytes()
    assert a.tobytes() != c.tobytes()
    assert a.min() >= 0.0 and a.max() <= 1.0


def test_simulate_rejects_odd_or_bad_spec():
    with pytest.raises(ValueError):
        D.DegradationSpec(noise_sigma=-1)
    with pytest.raises(ValueError):
        D.DegradationSpec(noise_kind="speckle")


def test_nearest_duplicates():
    img = np.arange(6.0).reshape(2, 3)
    np.testing.assert_array_equal(upsample2(img, "nearest"), np.kron(img, np.ones((2, 2))))


@pytest.mark.parametrize("method", ["bilinear", "bicubic", "lanczos"])
def test_constant_preserved(method):
    np.testing.assert_allclose(upsample2(np.full((7, 5), 0.42), method), 0.42, atol=1e-14)


def test_bilinear_reproduces_ramp():
    n = 9
    ramp = 0.3 * np.arange(n)[:, None] + 0.1 * np.arange(n)[None, :] + 2.0
    up = upsample2(ramp, "bilinear")
    src = (np.arange(2 * n) + 0.5) / 2 - 0.5
    expected = 0.3 * src[:, None] + 0.1 * src[None, :] + 2.0
    # border outputs extrapolate past the first/last sample and are clamped
    np.testing.assert_allclose(up[1:-1, 1:-1], expected[1:-1, 1:-1], atol=1e-12)


def test_lanczos_impulse_footprint():
    n = 21
    m = interpolation_matrix(n, "lanczos")
    c = n // 2
    col = m[:, c]
    for i in range(8, 2 * n - 8):
        src = (i + 0.5) / 2 - 0.5
        taps = [lanczos_kernel(src - j) for j in range(int(np.floor(src)) - 2, int(np.floor(src)) + 4)]
        expected = lanczos_kernel(src - c) / sum(taps)
        assert col[i] == pytest.approx(expected, abs=1e-13)


def test_patch_geometry():
    hr = D.ImageSlice(np.random.default_rng(0).random((96, 80)), slice_id="h")
    lr = D.simulate_lr(hr, D.DegradationSpec())
    pairs = D.extract_patches(hr, lr, "supervised", 5, seed=1)
    for p in pairs:
        assert p.hr.shape == (64, 64) and p.lr.shape == (32, 32)
        r, c = p.center[0] - 32, p.center[1] - 32
        np.testing.assert_array_equal(p.hr, hr.pixels[r:r + 64, c:c + 64])
        np.testing.assert_array_equal(p.lr, lr.pixels[r // 2:r // 2 + 32, c // 2:c // 2 + 32])
    same = D.extract_patches(hr, D.upsample_to_match(lr), "same-size", 3, seed=1)
    assert all(p.hr.shape == p.lr.shape == (64, 64) for p in same)
    assert D.extract_patches(hr, lr, "supervised", 0, seed=1) == []
    with pytest.raises(ValueError):
        D.extract_patches(hr, hr, "supervised", 1, seed=1)


def _pairs(n):
    return [D.PatchPair(np.full((2, 2), i), np.full((4, 4), i), (0, 0), True, source=str(i)) for i in range(n)]


def test_split_semi_sizes():
    paired, pools = D.split_semi(_pairs(10), 1.0, 0)
    assert len(paired) == 10 and len(pools) == 0
    paired, pools = D.split_semi(_pairs(10), 0.0, 0)
    assert paired == [] and len(pools.x) == len(pools.y) == 10
    paired, pools = D.split_semi(_pairs(100), 0.5, 0)
    assert len(paired) == 50 and len(pools.x) == 50


@given(st.integers(0, 60), st.floats(0, 1))
def test_split_semi_partition(n, f):
    paired, pools = D.split_semi(_pairs(n), f, 3)
    ids = sorted(int(p.source) for p in paired) + sorted(int(p.source) for p in pools.x)
    assert sorted(ids) == list(range(n))
    assert sorted(p.source for p in pools.x) == sorted(p.source for p in pools.y)


def test_batch_counts_and_determinism():
    s = D.make_batches(_pairs(128), None, 64, "supervised", 0)
    assert s.batches_per_epoch() == 2
    a, b = s.epoch(3), D.make_batches(_pairs(128), None, 64, "supervised", 0).epoch(3)
    assert [x.x_index for x in a] == [x.x_index for x in b]
    assert [x.x_index for x in s.epoch(4)] != [x.x_index for x in a]


def test_semi_batches_alternate():
    paired, pools = D.split_semi(_pairs(40), 0.5, 0)
    kinds = [b.kind for b in D.make_batches(paired, pools, 4, "semi", 0).epoch(0)]
    assert kinds == ["paired", "unpaired"] * 5


def test_semi_without_pools_is_paired_only():
    s = D.make_batches(_pairs(12), D.UnpairedSet(), 4, "semi", 0)
    sup = D.make_batches(_pairs(12), None, 4, "supervised", 0)
    assert [b.x_index for b in s.epoch(0)] == [b.x_index for b in sup.epoch(0)]


def test_stream_validation():
    with pytest.raises(ValueError):
        D.make_batches([], None, 4, "supervised", 0)
    with pytest.raises(ValueError):
        D.make_batches([], D.UnpairedSet(), 4, "unsupervised", 0)
