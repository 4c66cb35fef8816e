"""Unconditional generator training: standard (sigmoid) GAN and weight-clipped WGAN."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .data import Dataset
from .errors import ConfigError, DomainError, TrainingDivergedError, UsageError
from .layers import DiscriminatorNet, GeneratorNet, frozen, init_parameters, save_network
from .optim import Adam, clip_weights
from .seeding import int_seed, rng

MODES = ("standard", "wgan")


@dataclass
class GanConfig:
    mode: str = "wgan"
    batch_size: int = 32
    n_critic: int = 5
    clip: float = 0.01
    lr: float = 1e-4
    beta1: float = 0.5
    beta2: float = 0.999
    max_iters: int = 5000
    seed: int = 0
    nz: int = 30
    width: int = 64
    init_std: float = 0.02
    checkpoint_every: int = 1000
    out_dir: str | None = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.batch_size < 2:
            raise ConfigError("batch_size must be at least 2")
        if self.n_critic < 1:
            raise ConfigError("n_critic must be at least 1")
        if self.mode == "wgan" and self.clip <= 0:
            raise ConfigError("clip must be positive in wgan mode")
        if self.lr <= 0 or self.max_iters < 0 or self.nz < 1 or self.width < 1:
            raise ConfigError("lr, max_iters, nz and width must be positive (max_iters may be 0)")


@dataclass
class LossTrace:
    iters: list = field(default_factory=list)
    d_loss: list = field(default_factory=list)
    g_loss: list = field(default_factory=list)
    d_updates: int = 0
    g_updates: int = 0

    def append(self, it: int, d: float, g: float) -> None:
        self.iters.append(it)
        self.d_loss.append(d)
        self.g_loss.append(g)

    def __len__(self):
        return len(self.iters)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["iter", "d_loss", "g_loss"])
            for row in zip(self.iters, self.d_loss, self.g_loss):
                w.writerow([row[0], repr(float(row[1])), repr(float(row[2]))])


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def gan_losses(real_scores, fake_scores, mode: str = "wgan"):
    """Discriminator and generator losses from per-sample scores.

    Standard mode expects probabilities in (0, 1); the generator loss is the
    minimax form mean log(1 - D(fake)). WGAN mode expects raw critic scores.
    """
    real, fake = _as_tensor(real_scores), _as_tensor(fake_scores)
    if mode == "standard":
        for s in (real, fake):
            if not np.all((s.data > 0) & (s.data < 1)):
                raise DomainError("standard-mode scores must lie strictly inside (0, 1)")
        log_fake_c = ad.log(1.0 - fake)
        d_loss = -(ad.mean(ad.log(real)) + ad.mean(log_fake_c))
        return d_loss, ad.mean(log_fake_c)
    if mode == "wgan":
        return -(ad.mean(real) - ad.mean(fake)), -ad.mean(fake)
    raise UsageError(f"unknown GAN mode {mode!r}")


def _logit_losses(real_logits: Tensor | None, fake_logits: Tensor, mode: str):
    """Same objectives as :func:`gan_losses`, evaluated stably from logits."""
    if mode == "wgan":
        g = -ad.mean(fake_logits)
        d = None if real_logits is None else ad.mean(fake_logits) - ad.mean(real_logits)
        return d, g
    # log D(y) = -softplus(-l), log(1 - D(y)) = -softplus(l)
    g = -ad.mean(ad.softplus(fake_logits))
    d = None
    if real_logits is not None:
        d = ad.mean(ad.softplus(-real_logits)) + ad.mean(ad.softplus(fake_logits))
    return d, g


def build_networks(config: GanConfig, image_size: int):
    G = GeneratorNet(config.nz, config.width, image_size)
    D = DiscriminatorNet(config.width, image_size, config.mode)
    init_parameters(G, int_seed(config.seed, "init.generator"), config.init_std)
    init_parameters(D, int_seed(config.seed, "init.discriminator"), config.init_std)
    return G, D


def train_gan(dataset: Dataset, config: GanConfig, progress=None):
    """Alternate ``n_critic`` critic updates with one generator update.

    Returns ``(G, D, trace)``. ``progress`` is called as ``progress(it, d, g)``
    after every iteration when given.
    """
    if len(dataset) == 0:
        raise UsageError("cannot train on an empty dataset")
    if dataset.height != dataset.width:
        raise UsageError(f"training images must be square, got {dataset.height}×{dataset.width}")
    G, D = build_networks(config, dataset.height)
    G.train()
    D.train()
    opt_g = Adam(G.parameters(), config.lr, (config.beta1, config.beta2))
    opt_d = Adam(D.parameters(), config.lr, (config.beta1, config.beta2))
    data_rng = rng(config.seed, "data")
    z_rng = rng(config.seed, "latent")
    images = dataset.images[:, None]
    n, m = len(dataset), config.batch_size
    trace = LossTrace()
    out_dir = Path(config.out_dir) if config.out_dir else None

    def latent() -> Tensor:
        return Tensor(z_rng.standard_normal((m, config.nz)).astype(np.float32))

    for it in range(config.max_iters):
        for _ in range(config.n_critic):
            real = Tensor(images[data_rng.integers(0, n, size=m)])
            with ad.no_grad():
                fake = G(latent())
            opt_d.zero_grad()
            if config.mode == "wgan":
                # no batch norm in the critic, so one joint pass is equivalent
                both = D.logits(Tensor(np.concatenate([real.data, fake.data])))
                real_l, fake_l = ad.take(both, np.arange(m)), ad.take(both, np.arange(m, 2 * m))
            else:
                real_l, fake_l = D.logits(real), D.logits(fake)
            d_loss, _ = _logit_losses(real_l, fake_l, config.mode)
            ad.backward(d_loss)
            opt_d.step()
            if config.mode == "wgan":
                clip_weights(D.parameters(), config.clip)
            trace.d_updates += 1
        opt_g.zero_grad()
        with frozen(D):
            _, g_loss = _logit_losses(None, D.logits(G(latent())), config.mode)
            ad.backward(g_loss)
        opt_g.step()
        trace.g_updates += 1
        d_val, g_val = d_loss.item(), g_loss.item()
        if not (np.isfinite(d_val) and np.isfinite(g_val)):
            raise TrainingDivergedError(f"non-finite GAN loss at iteration {it}")
        trace.append(it, d_val, g_val)
        if progress is not None:
            progress(it, d_val, g_val)
        if out_dir is not None and config.checkpoint_every and (it + 1) % config.checkpoint_every == 0:
            out_dir.mkdir(parents=True, exist_ok=True)
            save_network(G, out_dir / f"generator_{it + 1:06d}.ckpt")
            save_network(D, out_dir / f"discriminator_{it + 1:06d}.ckpt")
    return G, D, trace


def generate(G: GeneratorNet, z: np.ndarray) -> np.ndarray:
    """Eval-mode forward pass without recording; returns (B, 1, H, W)."""
    was_training = G.training
    G.eval()
    try:
        with ad.no_grad():
            return G(Tensor(np.asarray(z, dtype=np.float32))).numpy()
    finally:
        G.train(was_training)


def sample_unconditional(G: GeneratorNet, count: int, seed: int) -> Tensor:
    if count < 0:
        raise UsageError("count must be nonnegative")
    if count == 0:
        return Tensor(np.zeros((0, 1, G.image_size, G.image_size), np.float32))
    z = rng(seed, "latent").standard_normal((count, G.nz)).astype(np.float32)
    return Tensor(generate(G, z))
