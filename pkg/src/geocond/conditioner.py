"""Conditioning a trained generator on point observations.

The posterior over latent vectors is exp(-L(z)) with
L(z) = ||G(z)_obs - d_obs||² + λ||z||². An inference network I maps source
draws w to latents and is trained by minimizing E[L(I(w))] - H[I(w)], with
the entropy H estimated from k-th nearest-neighbour distances.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import digamma, gammaln

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, TrainingDivergedError, UsageError
from .layers import (DiscriminatorNet, GeneratorNet, InferenceNet, evaluating, frozen,
                     init_parameters)
from .optim import Adam
from .seeding import int_seed, rng

DISTANCE_FLOOR = 1e-12


# ------------------------------------------------------------ observations
@dataclass
class Observations:
    rows: np.ndarray
    cols: np.ndarray
    values: np.ndarray  # +1 channel, -1 background
    grid: tuple[int, int] = (64, 64)

    def __post_init__(self):
        self.rows = np.asarray(self.rows, dtype=np.intp).reshape(-1)
        self.cols = np.asarray(self.cols, dtype=np.intp).reshape(-1)
        self.values = np.asarray(self.values, dtype=np.float32).reshape(-1)
        self.grid = tuple(int(g) for g in self.grid)
        if not len(self.rows) == len(self.cols) == len(self.values):
            raise UsageError("rows, cols and values must have equal length")
        h, w = self.grid
        bad = np.flatnonzero((self.rows < 0) | (self.rows >= h) | (self.cols < 0) | (self.cols >= w))
        if bad.size:
            k = bad[0]
            raise UsageError(f"observation ({self.rows[k]}, {self.cols[k]}) outside the {h}×{w} grid")
        if not np.all(np.isin(self.values, (-1.0, 1.0))):
            raise UsageError("observation values must be -1 or +1")
        flat = self.flat_index
        if len(np.unique(flat)) != len(flat):
            raise UsageError("duplicate observation location")

    @classmethod
    def from_points(cls, points, grid=(64, 64)) -> "Observations":
        pts = list(points)
        if not pts:
            return cls(np.zeros(0), np.zeros(0), np.zeros(0), grid)
        r, c, v = zip(*pts)
        return cls(r, c, v, grid)

    @classmethod
    def from_binary(cls, triples, grid=(64, 64)) -> "Observations":
        """Build from ``(i, j, val)`` with val 1 = channel, 0 = background."""
        return cls.from_points([(i, j, 1.0 if v else -1.0) for i, j, v in triples], grid)

    @property
    def flat_index(self) -> np.ndarray:
        return self.rows * self.grid[1] + self.cols

    @property
    def points(self) -> list[tuple[int, int, float]]:
        return [(int(r), int(c), float(v)) for r, c, v in zip(self.rows, self.cols, self.values)]

    def __len__(self):
        return len(self.rows)

    def honored_fraction(self, images: np.ndarray) -> np.ndarray:
        """Fraction of observations matched by the sign of each image in a batch."""
        images = np.asarray(images).reshape(-1, self.grid[0] * self.grid[1])
        if len(self) == 0:
            return np.ones(images.shape[0])
        picked = np.where(images[:, self.flat_index] > 0, 1.0, -1.0)
        return (picked == self.values).mean(axis=1)


@dataclass
class PosteriorSpec:
    generator: GeneratorNet
    observations: Observations
    lam: float = 0.1

    def __post_init__(self):
        if self.lam < 0:
            raise UsageError("lambda must be nonnegative")
        size = self.generator.image_size
        if self.observations.grid != (size, size):
            raise UsageError(f"observations on a {self.observations.grid} grid but the "
                             f"generator emits {size}×{size} images")

    def __call__(self, z: Tensor) -> Tensor:
        return neg_log_posterior(z, self)


def observation_misfit(images: Tensor, obs: Observations) -> Tensor:
    """Per-sample Σ_obs (image[r, c] - v)² for a (B, ...) image batch."""
    b = images.shape[0]
    flat = ad.reshape(images, (b, -1))
    if flat.shape[1] != obs.grid[0] * obs.grid[1]:
        raise UsageError(f"images of shape {images.shape} do not match grid {obs.grid}")
    picked = ad.take(flat, obs.flat_index, axis=1)
    diff = picked - Tensor(np.broadcast_to(obs.values.astype(flat.dtype), picked.shape).copy())
    return ad.sum(ad.square(diff), axis=1)


def neg_log_posterior(z: Tensor, spec: PosteriorSpec) -> Tensor:
    """L(z) per sample; the generator runs in eval mode."""
    if z.ndim != 2 or z.shape[1] != spec.generator.nz:
        raise UsageError(f"expected (B, {spec.generator.nz}) latents, got {z.shape}")
    prior = ad.sum(ad.square(z), axis=1) * spec.lam
    if len(spec.observations) == 0:
        return prior
    with evaluating(spec.generator):
        images = spec.generator(z)
    return observation_misfit(images, spec.observations) + prior


# --------------------------------------------------- k-NN entropy estimation
def kth_nn_indices(points: np.ndarray, k: int, chunk: int = 128):
    """Index of and distance to each point's k-th nearest other point.

    Ties are broken by the lower index. Distances are computed in float64
    from explicit differences, one row block at a time.
    """
    p = np.asarray(points, dtype=np.float64)
    m = p.shape[0]
    if p.ndim != 2:
        raise UsageError(f"expected an (M, d) point set, got shape {p.shape}")
    if m < 2:
        raise UsageError("k-NN distances need at least 2 points")
    if not 1 <= k <= m - 1:
        raise UsageError(f"k must lie in [1, {m - 1}], got {k}")
    idx = np.empty(m, dtype=np.intp)
    dist = np.empty(m, dtype=np.float64)
    for lo in range(0, m, chunk):
        hi = min(lo + chunk, m)
        diff = p[lo:hi, None, :] - p[None, :, :]
        d = np.sqrt(np.sum(diff * diff, axis=2))
        d[np.arange(hi - lo), np.arange(lo, hi)] = np.inf
        order = np.argsort(d, axis=1, kind="stable")
        idx[lo:hi] = order[:, k - 1]
        dist[lo:hi] = d[np.arange(hi - lo), idx[lo:hi]]
    return idx, dist


def kth_nn_distances(points: Tensor, k: int, floor: float = 0.0) -> Tensor:
    """ρ_i = distance from point i to its k-th nearest other point.

    Differentiable with the neighbour assignment frozen; the gradient reaches
    both endpoints of every pair. Distances below ``floor`` are raised to it
    and pass no gradient.
    """
    points = points if isinstance(points, Tensor) else Tensor(np.asarray(points, np.float64))
    nbr, rho = kth_nn_indices(points.data, k)
    floored = rho < floor if floor > 0 else np.zeros(rho.shape, bool)
    rho = np.where(floored, floor, rho)
    out = rho.astype(points.dtype)

    def bw(g):
        p = points.data.astype(np.float64)
        coef = np.where(floored, 0.0, np.asarray(g, np.float64) / rho)
        contrib = coef[:, None] * (p - p[nbr])
        grad = contrib.copy()
        np.add.at(grad, nbr, -contrib)
        return (grad.astype(points.dtype),)

    return ad._result(out, (points,), bw, "kth_nn")


def entropy_constant(m: int, k: int, d: int) -> float:
    """log V_d + ψ(M) - ψ(k) with V_d the volume of the unit d-ball."""
    log_vd = 0.5 * d * math.log(math.pi) - float(gammaln(0.5 * d + 1))
    return log_vd + float(digamma(m)) - float(digamma(k))


@dataclass
class ZeroDistanceCounter:
    """Counts distances that had to be floored in the entropy estimate."""
    events: int = 0

    def reset(self) -> None:
        self.events = 0


zero_distances = ZeroDistanceCounter()


def default_k(m: int) -> int:
    return max(1, int(math.isqrt(m)))


def entropy_estimate(points: Tensor, k: int | None = None) -> Tensor:
    """Kozachenko–Leonenko differential entropy estimate (nats), as a scalar Tensor."""
    points = points if isinstance(points, Tensor) else Tensor(np.asarray(points, np.float64))
    if points.ndim != 2:
        raise UsageError(f"expected an (M, d) point set, got shape {points.shape}")
    m, d = points.shape
    if m < 2:
        raise UsageError("entropy estimate needs at least 2 points")
    k = default_k(m) if k is None else k
    rho = kth_nn_distances(points, k, floor=DISTANCE_FLOOR)
    n_floor = int(np.sum(rho.data <= DISTANCE_FLOOR))
    if n_floor:
        zero_distances.events += n_floor
    return ad.mean(ad.log(rho)) * float(d) + entropy_constant(m, k, d)


def _density_fn(target):
    return target if callable(target) else (lambda z: neg_log_posterior(z, target))


def kl_terms(w_batch: Tensor, I: InferenceNet, target, k: int | None = None,
             entropy_weight: float = 1.0):
    """(objective, mean loss, entropy) for one batch of source draws."""
    z = I(w_batch)
    mean_loss = ad.mean(_density_fn(target)(z))
    ent = entropy_estimate(z, k)
    return mean_loss - ent * entropy_weight, mean_loss, ent


def kl_objective(w_batch: Tensor, I: InferenceNet, target, k: int | None = None) -> Tensor:
    """Mean negative log-posterior over I(w) minus its entropy estimate."""
    return kl_terms(w_batch, I, target, k)[0]


# --------------------------------------------------------- Algorithm 1 loop
@dataclass
class SamplerConfig:
    batch_size: int = 64
    k: int | None = None
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    max_iters: int = 10000
    seed: int = 0
    n_w: int = 30
    n_z: int = 30
    hidden: int = 512
    depth: int = 5
    init_std: float = 0.02
    entropy_weight: float = 1.0
    early_stop_window: int = 500
    early_stop_tol: float = 1e-3

    def __post_init__(self):
        if self.k is None:
            self.k = default_k(self.batch_size)
        if self.batch_size < 2 or not 1 <= self.k < self.batch_size:
            raise ConfigError(f"need 1 <= k < batch_size, got k={self.k}, batch_size={self.batch_size}")
        if self.lr <= 0 or self.max_iters < 0:
            raise ConfigError("lr must be positive and max_iters nonnegative")
        if min(self.n_w, self.n_z, self.hidden) < 1 or self.depth < 0:
            raise ConfigError("network sizes must be positive")


@dataclass
class SamplerTrace:
    iters: list = field(default_factory=list)
    objective: list = field(default_factory=list)
    mean_loss: list = field(default_factory=list)
    entropy: list = field(default_factory=list)
    stopped_early: bool = False

    def __len__(self):
        return len(self.iters)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["iter", "objective", "mean_loss", "entropy"])
            for row in zip(self.iters, self.objective, self.mean_loss, self.entropy):
                w.writerow([row[0]] + [repr(float(v)) for v in row[1:]])


def build_inference_net(config: SamplerConfig) -> InferenceNet:
    net = InferenceNet(config.n_w, config.n_z, config.hidden, config.depth)
    init_parameters(net, int_seed(config.seed, "init.inference"), config.init_std)
    return net


def _plateaued(values: list, window: int, tol: float) -> bool:
    if window <= 0 or len(values) < 2 * window or len(values) % window:
        return False
    recent = float(np.mean(values[-window:]))
    before = float(np.mean(values[-2 * window:-window]))
    return abs(recent - before) <= tol * max(abs(before), 1e-12)


def train_sampler(neg_log_density, config: SamplerConfig, frozen_nets=(), progress=None,
                  init: InferenceNet | None = None):
    """Train an inference network so that I(w), w ~ N(0, I), follows exp(-L).

    ``neg_log_density`` maps a (B, n_z) Tensor to per-sample losses (or is a
    :class:`PosteriorSpec`). Parameters of ``frozen_nets`` receive no
    gradient work. ``init`` continues training a copy of an existing network
    (with fresh optimizer state) instead of a seeded new one. Returns
    ``(I, trace)``.
    """
    target = _density_fn(neg_log_density)
    if isinstance(neg_log_density, PosteriorSpec):
        frozen_nets = tuple(frozen_nets) + (neg_log_density.generator,)
    if init is None:
        I = build_inference_net(config)
    else:
        if (init.n_in, init.n_out) != (config.n_w, config.n_z):
            raise UsageError(f"init network maps {init.n_in}->{init.n_out}, config wants "
                             f"{config.n_w}->{config.n_z}")
        I = InferenceNet(init.n_in, init.n_out, init.hidden, init.depth)
        I.load_state_dict(init.state_dict())
    opt = Adam(I.parameters(), config.lr, (config.beta1, config.beta2))
    source = rng(config.seed, "source")
    trace = SamplerTrace()
    with frozen(*frozen_nets):
        for it in range(config.max_iters):
            w = Tensor(source.standard_normal((config.batch_size, config.n_w)).astype(np.float32))
            obj, mean_loss, ent = kl_terms(w, I, target, config.k, config.entropy_weight)
            o = obj.item()
            if not np.isfinite(o):
                raise TrainingDivergedError(
                    f"objective became {o} at iteration {it} "
                    f"(mean loss {mean_loss.item()}, entropy {ent.item()})")
            opt.zero_grad()
            ad.backward(obj)
            opt.step()
            trace.iters.append(it)
            trace.objective.append(o)
            trace.mean_loss.append(mean_loss.item())
            trace.entropy.append(ent.item())
            if progress is not None:
                progress(it, o, trace.mean_loss[-1], trace.entropy[-1])
            if _plateaued(trace.objective, config.early_stop_window, config.early_stop_tol):
                trace.stopped_early = True
                break
    return I, trace


def sample_latents(I: InferenceNet, count: int, seed: int) -> np.ndarray:
    w = rng(seed, "source").standard_normal((count, I.n_in)).astype(np.float32)
    with ad.no_grad():
        return I(Tensor(w)).numpy()


def sample_conditional(G: GeneratorNet, I: InferenceNet, count: int, seed: int) -> Tensor:
    """Images G(I(w)) for ``count`` fresh source draws."""
    if count < 0:
        raise UsageError("count must be nonnegative")
    if count == 0:
        return Tensor(np.zeros((0, 1, G.image_size, G.image_size), np.float32))
    z = sample_latents(I, count, seed)
    with ad.no_grad(), evaluating(G):
        return Tensor(G(Tensor(z)).numpy())


# ------------------------------------------- optimization-based conditioning
@dataclass
class ConditionalFit:
    z: np.ndarray
    loss: float
    initial_loss: float


def perceptual_loss(z: Tensor, spec: PosteriorSpec, D: DiscriminatorNet) -> Tensor:
    """||G(z)_obs - d_obs||² + λ log(1 - D(G(z))) per sample."""
    if D.mode != "standard":
        raise UsageError("perceptual loss needs a sigmoid (standard-mode) discriminator")
    with evaluating(spec.generator, D):
        images = spec.generator(z)
        logits = D.logits(images)
    prior = -ad.softplus(logits) * spec.lam  # log(1 - sigmoid(l)) = -softplus(l)
    if len(spec.observations) == 0:
        return prior
    return observation_misfit(images, spec.observations) + prior


def optimize_conditional(spec: PosteriorSpec, n_restarts: int = 8, inner_iters: int = 500,
                         seed: int = 0, loss_kind: str = "gaussian_prior",
                         discriminator: DiscriminatorNet | None = None,
                         lr: float = 0.02) -> list[ConditionalFit]:
    """Local minimization of the conditioning loss from several random starts.

    Restarts are optimized jointly as one batch; each keeps its own best
    iterate, so the returned loss never exceeds the starting loss.
    """
    if loss_kind == "gaussian_prior":
        def loss_fn(z):
            return neg_log_posterior(z, spec)
        nets = (spec.generator,)
    elif loss_kind == "perceptual":
        if discriminator is None:
            raise UsageError("perceptual loss needs a discriminator")
        if discriminator.mode != "standard":
            raise UsageError("perceptual loss needs a sigmoid (standard-mode) discriminator")

        def loss_fn(z):
            return perceptual_loss(z, spec, discriminator)
        nets = (spec.generator, discriminator)
    else:
        raise UsageError(f"unknown loss kind {loss_kind!r}")
    if n_restarts < 1 or inner_iters < 0:
        raise UsageError("need at least one restart and a nonnegative iteration count")

    z = Tensor(rng(seed, "restarts").standard_normal((n_restarts, spec.generator.nz)),
               requires_grad=True, dtype=np.float32)
    opt = Adam([z], lr)
    best_z = z.data.copy()
    best = np.full(n_restarts, np.inf)
    initial = None
    with frozen(*nets):
        for step in range(inner_iters + 1):
            losses = loss_fn(z)
            vals = losses.numpy().astype(np.float64)
            if initial is None:
                initial = vals.copy()
            better = vals < best
            best[better] = vals[better]
            best_z[better] = z.data[better]
            if step == inner_iters:
                break
            opt.zero_grad()
            ad.backward(ad.sum(losses))
            opt.step()
    return [ConditionalFit(best_z[i].copy(), float(best[i]), float(initial[i]))
            for i in range(n_restarts)]
