import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from geocond import autodiff as ad
from geocond.autodiff import Tensor
from geocond.data import Dataset, synth_channels
from geocond.errors import ConfigError, DomainError, UsageError
from geocond.gan import (GanConfig, _logit_losses, build_networks, gan_losses, generate,
                         sample_unconditional, train_gan)
from geocond.layers import GeneratorNet, init_parameters

scores = arrays(np.float64, st.integers(1, 20), elements=st.floats(-5, 5))


def tiny(**kw):
    base = dict(width=2, batch_size=4, max_iters=3, n_critic=2)
    base.update(kw)
    return GanConfig(**base)


@pytest.fixture(scope="module")
def toy16():
    return Dataset(synth_channels(4, 16, 16, seed=3).images)


# ------------------------------------------------------------------ losses
def test_coin_toss_discriminator():
    d, g = gan_losses(np.full(8, 0.5), np.full(8, 0.5), "standard")
    assert d.item() == pytest.approx(math.log(4), abs=1e-6)
    assert g.item() == pytest.approx(math.log(0.5), abs=1e-6)


def test_wgan_hand_example():
    d, g = gan_losses([1.0, 1.0], [0.0, 0.0], "wgan")
    assert d.item() == -1.0
    assert g.item() == 0.0


@settings(max_examples=50, deadline=None)
@given(scores)
def test_wgan_identical_distributions_zero(s):
    d, _ = gan_losses(s, s[::-1].copy(), "wgan")
    assert abs(d.item()) < 1e-12


@settings(max_examples=50, deadline=None)
@given(scores, scores)
def test_wgan_antisymmetry(a, b):
    d1, _ = gan_losses(a, b, "wgan")
    d2, _ = gan_losses(b, a, "wgan")
    assert d1.item() == pytest.approx(-d2.item(), abs=1e-12)


@pytest.mark.parametrize("bad", [0.0, 1.0, 1.5, -0.1])
def test_standard_scores_out_of_range(bad):
    with pytest.raises(DomainError):
        gan_losses([0.5, bad], [0.5], "standard")


def test_unknown_mode():
    with pytest.raises(UsageError):
        gan_losses([0.5], [0.5], "hinge")


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, 6, elements=st.floats(-8, 8)), arrays(np.float64, 6, elements=st.floats(-8, 8)))
def test_logit_form_matches_probability_form(lr, lf):
    sig = lambda x: 1 / (1 + np.exp(-x))
    d_p, g_p = gan_losses(sig(lr), sig(lf), "standard")
    d_l, g_l = _logit_losses(Tensor(lr), Tensor(lf), "standard")
    assert d_l.item() == pytest.approx(d_p.item(), rel=1e-9, abs=1e-9)
    assert g_l.item() == pytest.approx(g_p.item(), rel=1e-9, abs=1e-9)


def test_loss_gradients(gradcheck):
    r = np.random.default_rng(0)
    real, fake = r.uniform(0.1, 0.9, 5), r.uniform(0.1, 0.9, 5)
    for mode in ("standard", "wgan"):
        assert gradcheck(lambda a, b: gan_losses(a, b, mode)[0], real, fake, h=1e-5) < 1e-6
        assert gradcheck(lambda b: gan_losses(real, b, mode)[1], fake, h=1e-5) < 1e-6


# ------------------------------------------------------------------ config
@pytest.mark.parametrize("kw", [dict(mode="hinge"), dict(batch_size=1), dict(n_critic=0),
                                dict(clip=0.0), dict(lr=0.0), dict(max_iters=-1)])
def test_config_validation(kw):
    with pytest.raises(ConfigError):
        GanConfig(**kw)


def test_default_hyperparameters():
    c = GanConfig()
    assert (c.mode, c.batch_size, c.n_critic, c.clip, c.lr, c.nz) == ("wgan", 32, 5, 0.01, 1e-4, 30)


# ---------------------------------------------------------------- training
def test_zero_iterations_is_initialization(toy16):
    cfg = tiny(max_iters=0)
    G, D, trace = train_gan(toy16, cfg)
    G0, D0 = build_networks(cfg, 16)
    assert len(trace) == 0
    for net, ref in ((G, G0), (D, D0)):
        for k, v in ref.state_dict().items():
            np.testing.assert_array_equal(v, net.state_dict()[k])


@pytest.mark.parametrize("mode", ["wgan", "standard"])
def test_bit_identical_reruns(toy16, mode, tmp_path):
    from geocond.layers import save_network
    paths = []
    for run in range(2):
        G, D, trace = train_gan(toy16, tiny(mode=mode, seed=7))
        p = tmp_path / f"g{run}.ckpt"
        save_network(G, p)
        paths.append(p)
    assert paths[0].read_bytes() == paths[1].read_bytes()


def test_update_counts_and_clipping(toy16):
    G, D, trace = train_gan(toy16, tiny(max_iters=4, n_critic=3))
    assert trace.d_updates == 12 and trace.g_updates == 4 and len(trace) == 4
    for p in D.parameters():
        assert np.abs(p.data).max() <= 0.01 + 1e-9


def test_seeds_change_the_result(toy16):
    a = train_gan(toy16, tiny(seed=1))[0].state_dict()
    b = train_gan(toy16, tiny(seed=2))[0].state_dict()
    assert any(not np.array_equal(a[k], b[k]) for k in a)


def test_empty_and_non_square_datasets():
    with pytest.raises(UsageError):
        train_gan(Dataset(np.zeros((0, 16, 16), np.float32)), tiny())
    with pytest.raises(UsageError):
        train_gan(Dataset(np.zeros((2, 16, 32), np.float32)), tiny())


def test_progress_and_checkpoints(toy16, tmp_path):
    seen = []
    train_gan(toy16, tiny(max_iters=4, checkpoint_every=2, out_dir=str(tmp_path)),
              progress=lambda it, d, g: seen.append(it))
    assert seen == [0, 1, 2, 3]
    assert sorted(p.name for p in tmp_path.iterdir()) == [
        "discriminator_000002.ckpt", "discriminator_000004.ckpt",
        "generator_000002.ckpt", "generator_000004.ckpt"]


def test_trace_csv(toy16, tmp_path):
    _, _, trace = train_gan(toy16, tiny())
    trace.to_csv(tmp_path / "t.csv")
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "iter,d_loss,g_loss" and len(lines) == 4
    assert float(lines[1].split(",")[1]) == trace.d_loss[0]


def test_critic_loss_trend_on_two_images():
    # the critic starts near zero output, peaks within ~70 iterations, then
    # the generator closes the gap; fit the trend after that warm-up
    ds = Dataset(synth_channels(2, 16, 16, 3).images)
    _, _, trace = train_gan(ds, GanConfig(max_iters=200, width=4, seed=0))
    d = np.abs(np.array(trace.d_loss))
    assert np.argmax(d) < 100
    assert np.polyfit(np.arange(100, 200), d[100:], 1)[0] < 0


# ---------------------------------------------------------------- sampling
def fresh_generator():
    G = GeneratorNet(nz=30, width=2, image_size=16)
    init_parameters(G, 0)
    return G


def test_sample_count_zero():
    assert sample_unconditional(fresh_generator(), 0, 1).shape == (0, 1, 16, 16)


def test_same_seed_same_batch():
    G = fresh_generator()
    np.testing.assert_array_equal(sample_unconditional(G, 5, 3).numpy(),
                                  sample_unconditional(G, 5, 3).numpy())
    assert not np.array_equal(sample_unconditional(G, 5, 3).numpy(),
                              sample_unconditional(G, 5, 4).numpy())


def test_untrained_samples_in_range():
    x = sample_unconditional(fresh_generator(), 100, 0).numpy()
    assert x.shape == (100, 1, 16, 16)
    assert np.all(np.abs(x) <= 1) and np.isfinite(x.mean())


def test_generate_does_not_record_or_change_mode():
    G = fresh_generator()
    G.train()
    out = generate(G, np.zeros((2, 30)))
    assert isinstance(out, np.ndarray) and G.training
