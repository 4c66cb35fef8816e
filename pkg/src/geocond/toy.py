"""Neural samplers for Gaussian-mixture targets, a sanity check of the sampler training."""
from __future__ import annotations

import numpy as np

from .conditioner import SamplerConfig, sample_latents, train_sampler
from .data import TOY_MIXTURE_1D, TOY_MIXTURE_2D, GaussianMixture, mixture_bin_masses, mixture_log_density
from .errors import UsageError

CASES = {"1d": TOY_MIXTURE_1D, "2d": TOY_MIXTURE_2D}
DEFAULT_POINTS = {"1d": 1000, "2d": 4000}


def mixture_for(case: str) -> GaussianMixture:
    try:
        return CASES[case]
    except KeyError as exc:
        raise UsageError(f"unknown toy case {case!r}; expected one of {sorted(CASES)}") from exc


def histogram_range(gm: GaussianMixture, width: float = 4.0) -> tuple[float, float]:
    """[min(μ - 4σ), max(μ + 4σ)] over the components of a 1-D mixture."""
    mu, sd = gm.means[:, 0], gm.chol[:, 0, 0]
    return float((mu - width * sd).min()), float((mu + width * sd).max())


def histogram_js(samples: np.ndarray, gm: GaussianMixture, bins: int = 50):
    """JS divergence between a sample histogram and the exact bin masses.

    Both distributions are renormalized over the histogram range. Returns
    ``(js, edges, counts, masses)``.
    """
    x = np.asarray(samples, dtype=np.float64).reshape(-1)
    edges = np.linspace(*histogram_range(gm), bins + 1)
    counts, _ = np.histogram(x, edges)
    masses = mixture_bin_masses(gm, edges)
    if counts.sum() == 0:
        return float(np.log(2)), edges, counts, masses
    p = counts / counts.sum()
    q = masses / masses.sum()
    s = p + q
    a, b = p > 0, q > 0
    js = 0.5 * (np.sum(p[a] * np.log(2 * p[a] / s[a])) + np.sum(q[b] * np.log(2 * q[b] / s[b])))
    return float(js), edges, counts, masses


def assignment_fractions(samples: np.ndarray, gm: GaussianMixture) -> np.ndarray:
    """Fraction of samples whose nearest component mean is each component."""
    x = np.asarray(samples, dtype=np.float64).reshape(-1, gm.dim)
    d = ((x[:, None, :] - gm.means[None]) ** 2).sum(-1)
    return np.bincount(d.argmin(1), minlength=len(gm.weights)) / len(x)


def train_toy(case: str, config: SamplerConfig):
    gm = mixture_for(case)
    if config.n_w != gm.dim or config.n_z != gm.dim:
        raise UsageError(f"the {case} case needs n_w = n_z = {gm.dim}")
    return train_sampler(lambda z: -mixture_log_density(z, gm), config)


def toy_config(case: str, **overrides) -> SamplerConfig:
    d = mixture_for(case).dim
    kw = dict(n_w=d, n_z=d, max_iters=1000, early_stop_window=0)
    kw.update(overrides)
    return SamplerConfig(**kw)


def toy_samples(I, count: int, seed: int) -> np.ndarray:
    return sample_latents(I, count, seed).astype(np.float64)
