import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from PIL import Image
from scipy import ndimage

from ungap.data import (
    _unit_noise,
    GeneratorConfig,
    augment,
    boundary_from_mask,
    derive_seed,
    generate_scene,
    load_dataset,
    read_grid,
    renoise,
    scenes_to_records,
    write_dataset,
    write_grid,
)
from ungap.errors import InvalidConfigError, InvalidInputError


def brute_boundary(mask, width):
    """Per-pixel neighborhood check: inside the dilation but not the erosion."""
    h, w = mask.shape
    out = np.zeros_like(mask)
    for i in range(h):
        for j in range(w):
            hood = [
                mask[y, x] if 0 <= y < h and 0 <= x < w else 0
                for y in range(i - width, i + width + 1)
                for x in range(j - width, j + width + 1)
            ]
            dilated = any(hood)
            eroded = all(hood)
            out[i, j] = int(dilated and not eroded)
    return out


class TestGenerator:
    def test_deterministic(self):
        a, b = generate_scene(11), generate_scene(11)
        assert a.image.tobytes() == b.image.tobytes()
        assert a.mask.tobytes() == b.mask.tobytes()
        assert a.noise_sigma.tobytes() == b.noise_sigma.tobytes()

    def test_different_seeds_differ(self):
        assert not np.array_equal(generate_scene(1).image, generate_scene(2).image)

    def test_noiseless(self):
        sc = generate_scene(3, GeneratorConfig(sigma_range=(0.0, 0.0)))
        assert np.all(sc.noise_sigma == 0)
        assert np.array_equal(sc.image, sc.clean)

    def test_coverage_seed7(self):
        cov = generate_scene(7).mask.mean()
        assert 0.005 <= cov <= 0.15

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_invariants(self, seed):
        sc = generate_scene(seed)
        assert sc.image.shape == (64, 64, 3) and sc.image.dtype == np.float32
        assert 0.0 <= sc.image.min() and sc.image.max() <= 1.0
        assert set(np.unique(sc.mask)) <= {0, 1}
        assert 0.005 <= sc.mask.mean() <= 0.15
        assert set(np.unique(sc.noise_sigma)) <= {0.0, np.float32(0.15)}
        # cracks darker than the ring of background around them, before noise
        ring = ndimage.binary_dilation(sc.mask, iterations=3) & ~sc.mask.astype(bool)
        lum = sc.clean.mean(axis=2)
        assert lum[sc.mask == 1].mean() < lum[ring].mean()

    def test_noise_matches_sigma(self):
        sc = generate_scene(5, GeneratorConfig(size=96, noise_corr=0.0))
        noisy = (sc.noise_sigma > 0) & (sc.mask == 0)
        assert noisy.sum() >= 32 * 32
        resid = (sc.image - sc.clean)[..., 0][noisy]
        assert abs(resid.std() / 0.15 - 1) < 0.15
        clean = (sc.noise_sigma == 0)
        assert np.all(sc.image[clean] == sc.clean[clean])

    @pytest.mark.parametrize("corr", [0.0, 1.0, 3.0])
    def test_unit_noise_variance(self, corr):
        rng = np.random.default_rng(0)
        draws = np.stack([_unit_noise(rng, 64, corr) for _ in range(200)])
        assert abs(draws.std() - 1) < 0.03 and abs(draws.mean()) < 0.03

    def test_renoise_fresh_realization(self):
        rec = scenes_to_records([generate_scene(5)])[0]
        a, b = renoise(rec, 1), renoise(rec, 2)
        assert not np.array_equal(a, b)
        clean = rec.noise_sigma == 0
        assert np.array_equal(a[clean], rec.clean[clean])

    @pytest.mark.parametrize(
        "kw",
        [
            {"width_range": (0, 3)},
            {"width_range": (2, 7)},
            {"sigma_range": (0.2, 0.1)},
            {"crack_count": (3, 1)},
            {"noise_regions": -1},
        ],
    )
    def test_invalid_config(self, kw):
        with pytest.raises(InvalidConfigError):
            GeneratorConfig(**kw)

    def test_derive_seed_stable(self):
        assert derive_seed(0, 1) == derive_seed(0, 1)
        assert derive_seed(0, 1) != derive_seed(1, 0)


class TestBoundary:
    def test_empty(self):
        assert boundary_from_mask(np.zeros((8, 8), np.uint8)).sum() == 0

    def test_full_frame(self):
        b = boundary_from_mask(np.ones((10, 10), np.uint8), width=1)
        assert b[1:-1, 1:-1].sum() == 0
        assert b[0].all() and b[-1].all() and b[:, 0].all() and b[:, -1].all()

    def test_square_brute_force(self):
        m = np.zeros((16, 16), np.uint8)
        m[5:11, 5:11] = 1
        np.testing.assert_array_equal(boundary_from_mask(m, width=1), brute_boundary(m, 1))

    def test_non_binary(self):
        with pytest.raises(InvalidInputError):
            boundary_from_mask(np.full((4, 4), 2))

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**31 - 1), st.integers(1, 3))
    def test_properties(self, seed, width):
        rng = np.random.default_rng(seed)
        m = (ndimage.gaussian_filter(rng.random((20, 20)), 2) > 0.5).astype(np.uint8)
        b = boundary_from_mask(m, width).astype(bool)
        np.testing.assert_array_equal(b, brute_boundary(m, width).astype(bool))
        dil = ndimage.binary_dilation(m, np.ones((2 * width + 1,) * 2))
        assert not (b & ~dil).any()
        if 0 < m.sum() < m.size:
            assert (b & m.astype(bool)).any() and (b & ~m.astype(bool)).any()


class TestAugment:
    def test_rotation_identity(self):
        sc = generate_scene(2)
        img, msk = augment(sc.image, sc.mask, seed=0, train_size=64, choice="rotate", max_angle=0.0)
        assert np.array_equal(img, sc.image) and np.array_equal(msk, sc.mask)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**31 - 1), st.sampled_from([32, 48, 64, 80]))
    def test_binary_and_size(self, seed, size):
        sc = generate_scene(4)
        img, msk = augment(sc.image, sc.mask, seed, size)
        assert img.shape == (size, size, 3) and msk.shape == (size, size)
        assert set(np.unique(msk)) <= {0, 1}
        assert 0 <= img.min() and img.max() <= 1

    def test_deterministic(self):
        sc = generate_scene(4)
        a = augment(sc.image, sc.mask, 123, 48)
        b = augment(sc.image, sc.mask, 123, 48)
        assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])

    @pytest.mark.parametrize("choice", ["brightness_contrast", "blur"])
    def test_photometric_keeps_mask(self, choice):
        sc = generate_scene(4)
        _, msk = augment(sc.image, sc.mask, 9, 64, choice=choice)
        assert np.array_equal(msk, sc.mask)

    def test_all_three_drawn(self):
        sc = generate_scene(4)
        kinds = set()
        for seed in range(40):
            img, msk = augment(sc.image, sc.mask, seed, 64)
            if not np.array_equal(msk, sc.mask):
                kinds.add("rotate")
            elif img.mean() != pytest.approx(sc.image.mean(), abs=1e-3):
                kinds.add("brightness_contrast")
            else:
                kinds.add("blur")
        assert kinds == {"rotate", "brightness_contrast", "blur"}

    def test_unknown_choice(self):
        sc = generate_scene(4)
        with pytest.raises(InvalidConfigError):
            augment(sc.image, sc.mask, 0, 64, choice="flip")


def _png(path, arr):
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(arr).save(path)


class TestDatasetIO:
    def test_empty(self, tmp_path):
        (tmp_path / "images").mkdir()
        (tmp_path / "masks").mkdir()
        assert load_dataset(tmp_path) == []

    def test_missing_dirs(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_dataset(tmp_path)

    def test_three_pairs_sorted(self, tmp_path):
        for name in ("c", "a", "b"):
            _png(tmp_path / "images" / f"{name}.png", np.zeros((8, 8, 3), np.uint8))
            _png(tmp_path / "masks" / f"{name}.png", np.full((8, 8), 200, np.uint8))
        recs = load_dataset(tmp_path)
        assert [r.name for r in recs] == ["a", "b", "c"]
        assert recs[0].mask.dtype == np.uint8 and recs[0].mask.max() == 1

    def test_binarize_threshold(self, tmp_path):
        m = np.array([[0, 126, 127, 255]], np.uint8)
        _png(tmp_path / "images" / "x.png", np.zeros((1, 4, 3), np.uint8))
        _png(tmp_path / "masks" / "x.png", m)
        assert load_dataset(tmp_path)[0].mask.tolist() == [[0, 0, 1, 1]]

    def test_size_mismatch_names_both(self, tmp_path):
        _png(tmp_path / "images" / "x.png", np.zeros((8, 8, 3), np.uint8))
        _png(tmp_path / "masks" / "x.png", np.zeros((6, 8), np.uint8))
        with pytest.raises(InvalidInputError) as err:
            load_dataset(tmp_path)
        assert "images/x.png" in str(err.value) and "masks/x.png" in str(err.value)

    def test_orphan(self, tmp_path):
        _png(tmp_path / "images" / "x.png", np.zeros((8, 8, 3), np.uint8))
        _png(tmp_path / "images" / "y.png", np.zeros((8, 8, 3), np.uint8))
        _png(tmp_path / "masks" / "x.png", np.zeros((8, 8), np.uint8))
        with pytest.raises(InvalidInputError, match="y.png"):
            load_dataset(tmp_path)

    def test_synthetic_round_trip(self, tmp_path):
        scenes = [generate_scene(s) for s in (1, 2)]
        write_dataset(tmp_path, scenes)
        recs = load_dataset(tmp_path)
        assert len(recs) == 2
        np.testing.assert_array_equal(recs[0].mask, scenes[0].mask)
        np.testing.assert_array_equal(recs[0].noise_sigma, scenes[0].noise_sigma)
        np.testing.assert_array_equal(recs[1].boundary, boundary_from_mask(scenes[1].mask))
        assert np.abs(recs[0].image - scenes[0].image).max() <= 0.5 / 255 + 1e-6

    def test_grid_round_trip(self, tmp_path):
        g = np.random.default_rng(0).random((5, 7)).astype(np.float32)
        write_grid(tmp_path / "g.f32", g)
        assert read_grid(tmp_path / "g.f32").tobytes() == g.tobytes()
