import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy.linalg import orthogonal_procrustes

from geocond.assess import (AnodiReport, PatternHistogram, anodi_scores, augment, binarize_clean, blur,
                            discriminator_histogram, discriminator_scores, downsample, histograms,
                            js_divergence, label_components, latent_interpolation, memorization_check,
                            otsu_threshold, pattern_histogram, raw_stress, remove_small_objects,
                            resolution_label, score_histogram, smacof_mds, write_embedding_csv)
from geocond.autodiff import Tensor
from geocond.data import reference_image, sample_patches, synth_channels
from geocond.errors import DomainError, ShapeError, UsageError
from geocond.layers import DiscriminatorNet, GeneratorNet, init_parameters
from oracles import flood_fill_count, naive_patterns, otsu_brute_force

LOG2 = math.log(2)


# -------------------------------------------------------------------- Otsu
def test_otsu_two_groups():
    t = otsu_threshold([0, 0, 0, 1, 1, 1])
    assert 0 < t < 1


def test_otsu_degenerate():
    with pytest.raises(DomainError):
        otsu_threshold([0.3] * 5)
    with pytest.raises(DomainError):
        otsu_threshold([])


@pytest.mark.parametrize("seed", range(10))
def test_otsu_matches_exhaustive_search(seed):
    r = np.random.default_rng(seed)
    v = np.concatenate([r.normal(-1, 0.3, 200), r.normal(0.5 + seed / 10, 0.5, 100)])
    assert otsu_threshold(v) == otsu_brute_force(v)[0]


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, st.integers(2, 60), elements=st.floats(-1, 1)).filter(lambda a: np.ptp(a) > 1e-6))
def test_otsu_score_is_maximal(v):
    t = otsu_threshold(v)
    _, scores = otsu_brute_force(v)
    cands = np.linspace(v.min(), v.max(), 257)[1:]
    k = int(np.argmin(np.abs(cands - t)))
    assert scores[k] >= scores.max() * (1 - 1e-9)


def test_otsu_on_tanh_like_images():
    img = np.tanh(3 * np.random.default_rng(0).standard_normal((32, 32)))
    assert -1 < otsu_threshold(img) < 1


# ------------------------------------------------------------ binarization
def test_isolated_pixel_removed():
    img = -np.ones((16, 16))
    img[8:, :] = 1
    img[3, 3] = 1
    out = binarize_clean(img)
    assert out[3, 3] == -1
    assert np.all(out[8:] == 1) and out.dtype == np.float32


def test_single_background_pixel_removed():
    img = np.ones((16, 16))
    img[5, 5] = -1
    np.testing.assert_array_equal(binarize_clean(img), 1.0)


def test_constant_image_binarizes_by_sign():
    np.testing.assert_array_equal(binarize_clean(np.full((8, 8), -0.2)), -1.0)


@pytest.mark.parametrize("seed", range(10))
def test_component_count_matches_flood_fill(seed):
    mask = np.random.default_rng(seed).random((16, 16)) < 0.45
    assert label_components(mask)[1] == flood_fill_count(mask)


def test_only_small_components_flip():
    mask = np.random.default_rng(1).random((32, 32)) < 0.5
    once = remove_small_objects(mask)
    assert np.any(once != mask)
    for phase in (True, False):
        lab, _ = label_components(mask == phase)
        sizes = np.bincount(lab.ravel())
        flipped = (once != mask) & (mask == phase)
        assert np.all(sizes[lab[flipped]] < 8)


def test_binarize_bad_shape():
    with pytest.raises(ShapeError):
        binarize_clean(np.zeros((2, 4, 4)))


# -------------------------------------------------------------- downsample
def test_downsample_block_mean():
    img = np.arange(16, dtype=np.float64).reshape(4, 4)
    np.testing.assert_allclose(downsample(img, 2), [[2.5, 4.5], [10.5, 12.5]])
    np.testing.assert_array_equal(downsample(img, 1), img)
    with pytest.raises(ShapeError):
        downsample(img, 3)


# ------------------------------------------------------- pattern histograms
def test_uniform_image_single_pattern():
    h = pattern_histogram(np.ones((10, 12)), 4)
    assert h.as_dict() == {2 ** 16 - 1: 7 * 9}


def test_window_total_8x8():
    assert pattern_histogram(np.random.default_rng(0).choice([-1, 1], (8, 8)), 4).total == 25


@pytest.mark.parametrize("seed", range(5))
def test_pattern_histogram_naive_oracle(seed):
    b = np.random.default_rng(seed).choice([-1.0, 1.0], (12, 12))
    for w in (1, 2, 3, 4):
        assert pattern_histogram(b, w).as_dict() == naive_patterns(b, w)


@settings(max_examples=30, deadline=None)
@given(st.integers(4, 20), st.integers(4, 20), st.integers(1, 4), st.integers(0, 10 ** 6))
def test_pattern_total(h, w, win, seed):
    b = np.random.default_rng(seed).choice([-1, 1], (h, w))
    assert pattern_histogram(b, win).total == (h - win + 1) * (w - win + 1)


def test_pattern_window_too_large():
    with pytest.raises(ShapeError):
        pattern_histogram(np.ones((3, 8)), 4)


# ---------------------------------------------------------------- JS
def random_hist(r, n_codes=30):
    codes = np.unique(r.integers(0, 60, n_codes)).astype(np.uint64)
    return PatternHistogram(4, codes, r.integers(1, 50, codes.size))


def test_js_identical_and_disjoint():
    p = PatternHistogram(4, np.array([1, 2], np.uint64), np.array([3, 5]))
    q = PatternHistogram(4, np.array([7], np.uint64), np.array([2]))
    assert js_divergence(p, p) < 1e-12
    assert js_divergence(p, q) == pytest.approx(LOG2, abs=1e-12)


def test_js_zero_for_proportional_counts():
    p = PatternHistogram(4, np.array([1, 2], np.uint64), np.array([3, 5]))
    q = PatternHistogram(4, np.array([1, 2], np.uint64), np.array([6, 10]))
    assert js_divergence(p, q) < 1e-12


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 10 ** 6))
def test_js_bounds_and_symmetry(seed):
    r = np.random.default_rng(seed)
    p, q = random_hist(r), random_hist(r)
    a, b = js_divergence(p, q), js_divergence(q, p)
    assert 0 <= a <= LOG2
    assert a == pytest.approx(b, abs=1e-12)


def test_js_empty_histogram():
    empty = PatternHistogram(4, np.zeros(0, np.uint64), np.zeros(0, np.int64))
    with pytest.raises(UsageError):
        js_divergence(empty, empty)


# ------------------------------------------------------------------- ANODI
def test_anodi_identical_to_reference():
    ref = synth_channels(1, 64, 64, seed=0).images[0]
    rep = anodi_scores(np.stack([ref] * 3), ref, resolutions=(1, 2))
    for f in (1, 2):
        row = rep.get("generated", f)
        assert row.inconsistency < 1e-12 and row.diversity < 1e-12


def test_anodi_disjoint_pair_has_max_diversity():
    a = np.ones((16, 16))
    b = -np.ones((16, 16))
    rep = anodi_scores(np.stack([a, b]), a, resolutions=(1,))
    assert rep.get("generated").diversity == pytest.approx(LOG2, abs=1e-12)


def test_reference_patches_beat_noise():
    ref = reference_image(256, seed=5)
    patches = sample_patches(ref, 10, (64, 64), seed=1).images
    noise = np.random.default_rng(0).uniform(-1, 1, (10, 64, 64))
    rep = anodi_scores({"patches": patches, "noise": noise}, ref, resolutions=(1,))
    assert rep.get("patches").inconsistency < rep.get("noise").inconsistency


def test_anodi_permutation_invariance():
    ref = synth_channels(1, 32, 32, seed=0).images[0]
    imgs = synth_channels(5, 32, 32, seed=1).images
    a = anodi_scores(imgs, ref, resolutions=(1, 2))
    b = anodi_scores(imgs[[3, 0, 4, 1, 2]], ref, resolutions=(1, 2))
    for ra, rb in zip(a.rows, b.rows):
        assert ra.inconsistency == pytest.approx(rb.inconsistency, abs=1e-12)
        assert ra.diversity == pytest.approx(rb.diversity, abs=1e-12)


def test_anodi_csv(tmp_path):
    ref = synth_channels(1, 32, 32, seed=0).images[0]
    rep = anodi_scores({"gan": synth_channels(3, 32, 32, seed=1).images}, ref, resolutions=(1, 2, 4))
    rep.to_csv(tmp_path / "a.csv")
    lines = (tmp_path / "a.csv").read_text().splitlines()
    assert lines[0] == "method,resolution,inconsistency,diversity"
    assert [l.split(",")[1] for l in lines[1:]] == ["x1", "x1/2", "x1/4"]
    assert resolution_label(8) == "x1/8"


def test_anodi_needs_two_realizations():
    ref = np.ones((16, 16))
    with pytest.raises(UsageError):
        anodi_scores(ref[None], ref, resolutions=(1,))


def test_histograms_accepts_tensors():
    imgs = Tensor(synth_channels(2, 16, 16, seed=0).images[:, None])
    assert len(histograms(imgs, 2)) == 2


# ------------------------------------------------------------------ SMACOF
def pairwise(x):
    return np.sqrt(((x[:, None] - x[None]) ** 2).sum(-1))


def aligned_error(x, y):
    xc, yc = x - x.mean(0), y - y.mean(0)
    rot, _ = orthogonal_procrustes(xc, yc)
    return float(np.abs(xc @ rot - yc).max())


def test_smacof_collinear():
    d = pairwise(np.array([[0.0], [1.0], [2.0]]))
    emb = smacof_mds(d, max_iters=1000, tol=1e-12)
    np.testing.assert_allclose(pairwise(emb.points), d, atol=1e-3)


def test_smacof_zero_matrix():
    emb = smacof_mds(np.zeros((5, 5)), max_iters=1000, tol=1e-12)
    assert emb.stress < 1e-20
    assert np.abs(emb.points - emb.points[0]).max() < 1e-9


@pytest.mark.parametrize("seed", range(5))
def test_smacof_planted_recovery(seed):
    x = np.random.default_rng(seed).standard_normal((10, 2))
    emb = smacof_mds(pairwise(x), max_iters=3000, tol=1e-14, seed=seed, n_init=8)
    assert aligned_error(emb.points, x) < 1e-2


@pytest.mark.parametrize("seed", range(5))
def test_smacof_stress_non_increasing(seed):
    d = pairwise(np.random.default_rng(seed).standard_normal((12, 5)))
    emb = smacof_mds(d, max_iters=300, tol=0.0, seed=seed)
    h = np.array(emb.history)
    assert np.all(np.diff(h) <= 1e-12 * h[0])
    assert emb.stress == pytest.approx(raw_stress(d, emb.points))
    assert emb.points.shape == (12, 2) and emb.stress >= 0


def test_smacof_bad_input():
    with pytest.raises(UsageError):
        smacof_mds(np.array([[0.0, 1.0], [2.0, 0.0]]))
    with pytest.raises(UsageError):
        smacof_mds(-np.ones((2, 2)) + np.eye(2))


def test_embedding_csv(tmp_path):
    emb = smacof_mds(pairwise(np.eye(3)))
    write_embedding_csv(tmp_path / "e.csv", emb.rows("gan"))
    lines = (tmp_path / "e.csv").read_text().splitlines()
    assert lines[0] == "method,index,x,y" and len(lines) == 4


# ------------------------------------------------- discriminator histograms
class ConstantD:
    mode = "standard"
    training = False

    def __call__(self, x):
        return Tensor(np.full(len(x.data), 0.3, np.float32))

    def train(self, flag=True):
        self.training = flag

    def eval(self):
        self.training = False

    def parameters(self):
        return []


def test_constant_discriminator_single_bin():
    hist = discriminator_histogram(ConstantD(), np.zeros((7, 16, 16)))["generated"]
    assert np.count_nonzero(hist.counts) == 1 and hist.counts.sum() == 7
    assert hist.mean == pytest.approx(0.3) and hist.var < 1e-12


def test_histogram_counts_sum(tmp_path):
    D = DiscriminatorNet(2, 16, "standard")
    init_parameters(D, 0, std=0.5)
    imgs = np.random.default_rng(0).uniform(-1, 1, (13, 16, 16))
    hist = discriminator_histogram(D, {"a": imgs, "b": imgs[:4]})
    assert hist["a"].counts.sum() == 13 and hist["b"].counts.sum() == 4
    hist["a"].to_csv(tmp_path / "h.csv")
    lines = (tmp_path / "h.csv").read_text().splitlines()
    assert lines[0] == "bin_lo,bin_hi,count" and len(lines) == 21


def test_wgan_critic_rejected():
    with pytest.raises(UsageError):
        discriminator_histogram(DiscriminatorNet(2, 16, "wgan"), np.zeros((2, 16, 16)))
    with pytest.raises(UsageError):
        score_histogram([1.5])


def test_trained_discriminator_prefers_training_images():
    from geocond.data import Dataset
    from geocond.gan import GanConfig, train_gan
    ds = Dataset(synth_channels(16, 16, 16, seed=2).images)
    _, D, _ = train_gan(ds, GanConfig(mode="standard", width=4, max_iters=60, n_critic=1, seed=0))
    noise = np.random.default_rng(0).uniform(-1, 1, (16, 16, 16))
    assert discriminator_scores(D, ds.images).mean() >= discriminator_scores(D, noise).mean()


# ------------------------------------------------------------ memorization
def test_augmentation_count():
    variants, names = augment(np.zeros((8, 8)))
    assert len(variants) == 36 and len(set(names)) == 36
    assert names[0] == "flip=none,rot=+0,shear=+0"


def test_blur_kernel_is_5x5():
    img = np.zeros((11, 11))
    img[5, 5] = 1
    out = blur(img, 1.0)
    assert np.count_nonzero(out > 0) == 25
    assert out.sum() == pytest.approx(1.0)


def test_self_match():
    data = synth_channels(5, 32, 32, seed=0).images
    rep = memorization_check(data[[3]], data)
    assert rep.distances[0] < 1e-5 and rep.dataset_index[0] == 3
    assert rep.variant[0] == "flip=none,rot=+0,shear=+0"


def test_flip_match(tmp_path):
    data = synth_channels(5, 32, 32, seed=0).images
    rep = memorization_check(data[2][:, ::-1][None], data, chunk=2)
    assert rep.distances[0] < 1e-5 and rep.dataset_index[0] == 2
    assert rep.variant[0].startswith("flip=h,")
    rep.to_csv(tmp_path / "m.csv")
    assert (tmp_path / "m.csv").read_text().startswith("realization,distance,dataset_index,variant")


# ---------------------------------------------------------- interpolation
@pytest.fixture(scope="module")
def gen():
    G = GeneratorNet(nz=6, width=2, image_size=16)
    init_parameters(G, 0, std=0.3)
    return G


def test_interpolation_endpoints_and_midpoint(gen):
    from geocond.gan import generate
    za, zb = np.ones(6), -np.arange(6.0)
    seq = latent_interpolation(gen, za, zb, 3)
    np.testing.assert_array_equal(seq[0], generate(gen, za[None])[0])
    np.testing.assert_array_equal(seq[2], generate(gen, zb[None])[0])
    np.testing.assert_allclose(seq[1], generate(gen, ((za + zb) / 2)[None])[0], atol=1e-6)
    with pytest.raises(UsageError):
        latent_interpolation(gen, za, zb, 1)


def test_interpolation_steps_bounded_by_lipschitz_proxy(gen):
    za, zb = np.random.default_rng(0).standard_normal((2, 6))
    fine = latent_interpolation(gen, za, zb, 401).reshape(401, -1).astype(np.float64)
    dz = np.linalg.norm(za - zb)
    lip = (np.linalg.norm(np.diff(fine, axis=0), axis=1) / (dz / 400)).max()
    coarse = latent_interpolation(gen, za, zb, 11).reshape(11, -1).astype(np.float64)
    steps = np.linalg.norm(np.diff(coarse, axis=0), axis=1)
    assert steps.max() <= lip * dz / 10 * (1 + 1e-4)
