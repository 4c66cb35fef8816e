import math
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy.stats import chisquare, multivariate_normal, norm

from geocond import autodiff as ad
from geocond.autodiff import Tensor
from geocond.data import (CONDITIONING_CONFIGS, TOY_MIXTURE_1D, TOY_MIXTURE_2D, Dataset,
                          GaussianMixture, builtin_observations, format_observations,
                          load_dataset, load_observations, mixture_bin_masses,
                          mixture_log_density, mixture_sample, parse_observation_lines,
                          pgm_bytes, reference_image, sample_patches, save_dataset,
                          synth_channels, write_pgm)
from geocond.errors import ConfigError, DomainError, FormatError, ShapeError, UsageError


# ------------------------------------------------------------ synthetic data
def test_synth_values_are_binary():
    ds = synth_channels(20, 64, 64, seed=3)
    assert set(np.unique(ds.images)) <= {-1.0, 1.0}
    assert ds.images.dtype == np.float32


def test_synth_channel_fraction_calibrated():
    frac = synth_channels(100, 64, 64, seed=0).channel_fraction()
    assert 0.1 <= frac <= 0.5


def test_synth_is_seed_deterministic():
    a = synth_channels(5, 32, 48, seed=11).images
    b = synth_channels(5, 32, 48, seed=11).images
    c = synth_channels(5, 32, 48, seed=12).images
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)


def test_synth_rejects_small_grids():
    with pytest.raises(UsageError):
        synth_channels(1, 8, 64, seed=0)


def test_channels_span_the_width():
    # every column of every image carries some channel pixel or the walk left the grid
    ds = synth_channels(10, 64, 64, seed=5)
    assert np.mean((ds.images > 0).any(axis=1)) > 0.9


def test_reference_image_is_large_and_binary():
    ref = reference_image()
    assert ref.shape == (256, 256)
    assert set(np.unique(ref)) <= {-1.0, 1.0}
    np.testing.assert_array_equal(ref, reference_image())


# --------------------------------------------------------------- GEOD files
def test_geod_round_trip_and_size(tmp_path):
    ds = synth_channels(7, 16, 24, seed=1)
    path = tmp_path / "d.geod"
    save_dataset(ds, path)
    raw = path.read_bytes()
    assert len(raw) == 20 + 4 * 7 * 16 * 24
    assert raw[:4] == b"GEOD"
    assert struct.unpack("<IIII", raw[4:20]) == (1, 7, 16, 24)
    back = load_dataset(path)
    assert back.images.tobytes() == ds.images.tobytes()
    save_dataset(back, tmp_path / "e.geod")
    assert (tmp_path / "e.geod").read_bytes() == raw


def test_geod_errors_name_offsets(tmp_path):
    ds = Dataset(np.zeros((2, 4, 4), np.float32))
    path = tmp_path / "d.geod"
    save_dataset(ds, path)
    raw = bytearray(path.read_bytes())
    path.write_bytes(b"GEOX" + raw[4:])
    with pytest.raises(FormatError, match="offset 0"):
        load_dataset(path)
    path.write_bytes(raw[:-3])
    with pytest.raises(FormatError, match="truncated"):
        load_dataset(path)
    bad = raw.copy()
    bad[20 + 4 * 5:20 + 4 * 6] = struct.pack("<f", 1.5)
    path.write_bytes(bytes(bad))
    with pytest.raises(FormatError, match=f"offset {20 + 4 * 5}"):
        load_dataset(path)
    path.write_bytes(raw[:10])
    with pytest.raises(FormatError):
        load_dataset(path)


def test_dataset_rejects_out_of_range():
    with pytest.raises(DomainError):
        Dataset(np.full((1, 2, 2), 2.0))


@settings(max_examples=25, deadline=None)
@given(arrays(np.float32, st.tuples(st.integers(1, 3), st.integers(1, 5), st.integers(1, 5)),
              elements=st.floats(-1, 1, width=32)))
def test_geod_round_trip_property(tmp_path_factory, images):
    path = tmp_path_factory.mktemp("geod") / "x.geod"
    save_dataset(Dataset(images), path)
    assert load_dataset(path).images.tobytes() == images.tobytes()


# ------------------------------------------------------------------ patches
def _position_image(h, w):
    return ((np.arange(h * w).reshape(h, w) / (h * w)) * 2 - 1).astype(np.float32)


def test_full_size_patch_equals_reference():
    ref = reference_image(64, seed=3)
    ds = sample_patches(ref, 4, (64, 64), seed=0)
    for p in ds.images:
        np.testing.assert_array_equal(p, ref)


def test_patches_inside_and_uniform():
    h = w = 96
    ref = _position_image(h, w)
    ds = sample_patches(ref, 1000, (32, 32), seed=4)
    codes = np.rint((ds.images[:, 0, 0] + 1) / 2 * h * w).astype(int)
    rows, cols = codes // w, codes % w
    assert rows.max() <= h - 32 and cols.max() <= w - 32
    for k, (r, c) in enumerate(zip(rows[:20], cols[:20])):
        np.testing.assert_array_equal(ds.images[k], ref[r:r + 32, c:c + 32])
    quad = (rows > (h - 32) / 2).astype(int) * 2 + (cols > (w - 32) / 2)
    assert chisquare(np.bincount(quad, minlength=4)).pvalue > 0.01


def test_patch_larger_than_reference():
    with pytest.raises(ShapeError):
        sample_patches(np.zeros((10, 10)), 1, (11, 5), seed=0)


# ---------------------------------------------------------- Gaussian mixtures
def direct_mixture_density(x, gm):
    total = 0.0
    for w, mu, cov in zip(gm.weights, gm.means, gm.covariances):
        total += w * multivariate_normal(mu, cov).pdf(x)
    return math.log(total)


def test_standard_normal_at_zero():
    gm = GaussianMixture([1.0], [[0.0]], [[[1.0]]])
    val = mixture_log_density(Tensor(np.zeros((1, 1))), gm).item()
    assert val == pytest.approx(-0.5 * math.log(2 * math.pi), abs=1e-12)


def test_toy_1d_mixture_against_direct_sum():
    xs = np.linspace(-5, 9, 57)[:, None]
    got = mixture_log_density(Tensor(xs), TOY_MIXTURE_1D).numpy()
    want = [math.log(sum(norm.pdf(x, m, s) for m, s in ((-1, 1), (2, 2), (6, 0.5))) / 3)
            for x in xs[:, 0]]
    np.testing.assert_allclose(got, want, rtol=0, atol=1e-10)
    at6 = [norm.pdf(6, m, s) / 3 for m, s in ((-1, 1), (2, 2), (6, 0.5))]
    assert np.argmax(at6) == 2


def test_toy_2d_mixture_against_direct_sum():
    xs = np.random.default_rng(0).uniform(-3, 4, (40, 2))
    got = mixture_log_density(Tensor(xs), TOY_MIXTURE_2D).numpy()
    want = [direct_mixture_density(x, TOY_MIXTURE_2D) for x in xs]
    np.testing.assert_allclose(got, want, atol=1e-10)


@pytest.mark.parametrize("seed", range(5))
def test_mixture_log_density_gradient(gradcheck, seed):
    xs = np.random.default_rng(seed).uniform(-3, 3, (6, 2))
    err = gradcheck(lambda x: mixture_log_density(x, TOY_MIXTURE_2D), xs)
    assert err < 1e-5


def test_singular_covariance_rejected():
    with pytest.raises(DomainError):
        GaussianMixture([1.0], [[0.0, 0.0]], [[[1.0, 1.0], [1.0, 1.0]]])
    with pytest.raises(DomainError):
        GaussianMixture([0.5, 0.6], [[0.0], [1.0]], [[[1.0]], [[1.0]]])


def test_degenerate_weights_sample_one_component():
    gm = GaussianMixture([1.0, 0.0, 0.0], [[-10.0], [0.0], [10.0]], [[[0.01]], [[1.0]], [[1.0]]])
    x = mixture_sample(gm, 500, seed=0)
    assert np.all(np.abs(x + 10) < 1)
    assert np.isfinite(mixture_log_density(Tensor(x), gm).numpy()).all()


def test_sample_mean_clt_bound():
    gm = TOY_MIXTURE_1D
    n = 100_000
    x = mixture_sample(gm, n, seed=1)[:, 0]
    mean = gm.mean[0]
    second = sum(w * (s ** 2 + m ** 2) for w, m, s in zip(gm.weights, gm.means[:, 0], (1, 2, 0.5)))
    sd = math.sqrt(second - mean ** 2)
    assert abs(x.mean() - mean) < 3 * sd / math.sqrt(n)


def test_mixture_sample_deterministic():
    np.testing.assert_array_equal(mixture_sample(TOY_MIXTURE_2D, 10, 3),
                                  mixture_sample(TOY_MIXTURE_2D, 10, 3))


def test_bin_masses_sum_to_one_over_wide_range():
    masses = mixture_bin_masses(TOY_MIXTURE_1D, np.linspace(-30, 30, 61))
    assert masses.sum() == pytest.approx(1.0, abs=1e-12)


# --------------------------------------------------------------------- PGM
def test_pgm_encoding(tmp_path):
    img = np.array([[-1.0, 0.0, 1.0]] * 2)
    raw = pgm_bytes(img)
    assert raw.startswith(b"P5\n3 2\n255\n")
    assert list(raw[-3:]) == [0, 128, 255]
    write_pgm(np.zeros((64, 64)), tmp_path / "x.pgm")
    assert (tmp_path / "x.pgm").read_bytes()[:13] == b"P5\n64 64\n255\n"


def test_pgm_rejects_out_of_range():
    with pytest.raises(UsageError):
        pgm_bytes(np.array([[1.01]]))


# ------------------------------------------------------------- observations
def test_example_a_file_parses(tmp_path):
    path = tmp_path / "a.txt"
    path.write_text("# Example A\n12 12 0\n12 25 0\n12 38 1\n" +
                    format_observations(CONDITIONING_CONFIGS["A"][3:]))
    obs = load_observations(path)
    assert len(obs) == 16
    assert obs.points[:3] == [(12, 12, -1.0), (12, 25, -1.0), (12, 38, 1.0)]


@pytest.mark.parametrize("name,count", [("A", 16), ("B", 16), ("C", 16), ("D", 20), ("E", 22),
                                        ("F", 13), ("G", 49), ("H", 49), ("I", 49)])
def test_builtin_configs(name, count):
    obs = builtin_observations(name)
    assert len(obs) == count
    assert obs.rows.max() < 64 and obs.cols.max() < 64


def test_config_d_e_f_are_all_channel():
    for name in "DEF":
        assert np.all(builtin_observations(name).values == 1)


def test_parse_errors_name_lines(tmp_path):
    with pytest.raises(ConfigError, match="line 2"):
        parse_observation_lines("1 2 1\n1 2\n")
    with pytest.raises(ConfigError, match="line 1"):
        parse_observation_lines("1 2 3\n")
    with pytest.raises(ConfigError, match="line 3"):
        parse_observation_lines("1 2 1\n\nx 2 1\n")
    path = tmp_path / "o.txt"
    path.write_text("1 1 1\n# comment\n64 3 0\n")
    with pytest.raises(ConfigError, match="line 3"):
        load_observations(path)


def test_unknown_builtin_config():
    with pytest.raises(ConfigError):
        builtin_observations("Z")


def test_observation_format_round_trip():
    triples = CONDITIONING_CONFIGS["H"]
    parsed = parse_observation_lines(format_observations(triples))
    assert [(i, j, v) for _, i, j, v in parsed] == triples
