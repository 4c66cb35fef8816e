"""Datasets, synthetic channel images, Gaussian-mixture targets and file formats.

Facies coding throughout: channel = +1, background = -1.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, DomainError, FormatError, ShapeError, UsageError

GEOD_MAGIC = b"GEOD"
GEOD_VERSION = 1
GEOD_HEADER = 20
REFERENCE_SEED = 20190618
REFERENCE_SIZE = 256


@dataclass
class Dataset:
    images: np.ndarray  # (N, H, W) float32 in [-1, 1]

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float32)
        if self.images.ndim != 3:
            raise ShapeError(f"dataset images must be N×H×W, got {self.images.shape}")
        if self.images.size and (self.images.min() < -1 or self.images.max() > 1):
            raise DomainError("dataset values must lie in [-1, 1]")

    def __len__(self):
        return self.images.shape[0]

    @property
    def height(self) -> int:
        return self.images.shape[1]

    @property
    def width(self) -> int:
        return self.images.shape[2]

    def channel_fraction(self) -> float:
        return float((self.images > 0).mean())


# ----------------------------------------------------------- synthetic data
@dataclass(frozen=True)
class ChannelParams:
    """Random-walk channel generator settings.

    ``channels_per_64`` is the inclusive range of channel counts for a 64-row
    image and scales linearly with height.
    """

    channels_per_64: tuple[int, int] = (2, 4)
    thickness: tuple[int, int] = (3, 5)
    persistence: float = 0.85


def _draw_channel_image(rng: np.random.Generator, h: int, w: int, p: ChannelParams) -> np.ndarray:
    img = np.full((h, w), -1.0, dtype=np.float32)
    lo, hi = (max(1, round(c * h / 64)) for c in p.channels_per_64)
    for _ in range(int(rng.integers(lo, hi + 1))):
        row = rng.uniform(0, h)
        thick = int(rng.integers(p.thickness[0], p.thickness[1] + 1))
        step = int(rng.integers(-1, 2))
        for col in range(w):
            top = int(math.floor(row - thick / 2))
            img[max(top, 0):max(min(top + thick, h), 0), col] = 1.0
            if rng.random() >= p.persistence:
                step = int(rng.integers(-1, 2))
            if not 0 <= row + step < h:
                step = -step
            row += step
    return img


def synth_channels(n: int, height: int, width: int, seed: int,
                   params: ChannelParams = ChannelParams()) -> Dataset:
    """Binary images with 2–4 (per 64 rows) horizontally meandering channels."""
    if height < 16 or width < 16:
        raise UsageError(f"synthetic images need H, W >= 16, got {height}×{width}")
    rng = np.random.default_rng(seed)
    images = np.stack([_draw_channel_image(rng, height, width, params) for _ in range(n)])
    return Dataset(images.reshape(n, height, width))


def reference_image(size: int = REFERENCE_SIZE, seed: int = REFERENCE_SEED) -> np.ndarray:
    """Large exemplar image whose statistics the training set shares."""
    return synth_channels(1, size, size, seed).images[0]


def sample_patches(reference: np.ndarray, count: int, patch: tuple[int, int], seed: int) -> Dataset:
    reference = np.asarray(reference, dtype=np.float32)
    ph, pw = patch
    h, w = reference.shape
    if ph > h or pw > w:
        raise ShapeError(f"patch {ph}×{pw} larger than reference {h}×{w}")
    rng = np.random.default_rng(seed)
    rows = rng.integers(0, h - ph + 1, size=count)
    cols = rng.integers(0, w - pw + 1, size=count)
    out = np.empty((count, ph, pw), dtype=np.float32)
    for k, (r, c) in enumerate(zip(rows, cols)):
        out[k] = reference[r:r + ph, c:c + pw]
    return Dataset(out)


# ---------------------------------------------------------------- GEOD files
def save_dataset(ds: Dataset, path) -> None:
    n, h, w = ds.images.shape
    header = GEOD_MAGIC + struct.pack("<IIII", GEOD_VERSION, n, h, w)
    Path(path).write_bytes(header + np.ascontiguousarray(ds.images, dtype="<f4").tobytes())


def load_dataset(path) -> Dataset:
    buf = Path(path).read_bytes()
    if len(buf) < GEOD_HEADER:
        raise FormatError("truncated dataset header", len(buf))
    if buf[:4] != GEOD_MAGIC:
        raise FormatError("bad dataset magic", 0)
    version, n, h, w = struct.unpack("<IIII", buf[4:GEOD_HEADER])
    if version != GEOD_VERSION:
        raise FormatError(f"unsupported dataset version {version}", 4)
    expected = GEOD_HEADER + 4 * n * h * w
    if len(buf) < expected:
        raise FormatError(f"truncated dataset: expected {expected} bytes, found {len(buf)}", len(buf))
    if len(buf) > expected:
        raise FormatError("trailing bytes after dataset payload", expected)
    data = np.frombuffer(buf, dtype="<f4", offset=GEOD_HEADER).astype(np.float32)
    bad = np.flatnonzero(~((data >= -1) & (data <= 1)))
    if bad.size:
        raise FormatError(f"value {data[bad[0]]} outside [-1, 1]", GEOD_HEADER + 4 * int(bad[0]))
    return Dataset(data.reshape(n, h, w))


# ---------------------------------------------------------------- PGM output
def pgm_bytes(image: np.ndarray) -> bytes:
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2:
        raise ShapeError(f"PGM output needs a 2-D image, got {image.shape}")
    if not np.all((image >= -1) & (image <= 1)):
        raise UsageError("PGM values must lie in [-1, 1]")
    pix = np.minimum(np.floor((image + 1) * 127.5 + 0.5), 255).astype(np.uint8)
    h, w = image.shape
    return f"P5\n{w} {h}\n255\n".encode("ascii") + pix.tobytes()


def write_pgm(image: np.ndarray, path) -> None:
    Path(path).write_bytes(pgm_bytes(image))


# ----------------------------------------------------------- Gaussian mixtures
@dataclass
class GaussianMixture:
    weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray
    chol: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.means = np.atleast_2d(np.asarray(self.means, dtype=np.float64))
        k, d = self.means.shape
        self.covariances = np.asarray(self.covariances, dtype=np.float64).reshape(k, d, d)
        if self.weights.shape != (k,):
            raise ShapeError(f"{k} components but weights of shape {self.weights.shape}")
        if np.any(self.weights < 0) or not np.isclose(self.weights.sum(), 1.0):
            raise DomainError("mixture weights must be nonnegative and sum to 1")
        if not np.allclose(self.covariances, self.covariances.transpose(0, 2, 1)):
            raise DomainError("covariances must be symmetric")
        try:
            self.chol = np.linalg.cholesky(self.covariances)
        except np.linalg.LinAlgError as exc:
            raise DomainError("covariance is not positive definite") from exc

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    @property
    def mean(self) -> np.ndarray:
        return self.weights @ self.means


TOY_MIXTURE_1D = GaussianMixture(
    weights=[1 / 3, 1 / 3, 1 / 3],
    means=[[-1.0], [2.0], [6.0]],
    covariances=[[[1.0]], [[4.0]], [[0.25]]],
)

TOY_MIXTURE_2D = GaussianMixture(
    weights=[1 / 3, 1 / 3, 1 / 3],
    means=[[-1.0, -1.0], [1.0, 2.0], [2.0, -1.0]],
    covariances=[[[1.0, -0.5], [-0.5, 1.0]],
                 [[1.5, 0.6], [0.6, 0.8]],
                 [[1.0, 0.0], [0.0, 1.0]]],
)


def mixture_log_density(x, gm: GaussianMixture) -> Tensor:
    """Differentiable log Σ_k w_k N(x; μ_k, Σ_k) for a (B, d) batch."""
    x = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))
    if x.ndim != 2 or x.shape[1] != gm.dim:
        raise ShapeError(f"expected (B, {gm.dim}) points, got {x.shape}")
    dt = x.dtype
    d = gm.dim
    terms = []
    for w, mu, L in zip(gm.weights, gm.means, gm.chol):
        if w == 0:
            continue
        linv_t = np.linalg.inv(L).T
        y = ad.matmul(x - Tensor(mu.astype(dt)), Tensor(linv_t.astype(dt)))
        quad = ad.sum(ad.square(y), axis=1)
        const = math.log(w) - 0.5 * d * math.log(2 * math.pi) - float(np.log(np.diag(L)).sum())
        terms.append(quad * -0.5 + const)
    return ad.logsumexp(ad.stack(terms, axis=1), axis=1)


def mixture_sample(gm: GaussianMixture, count: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    comp = rng.choice(len(gm.weights), size=count, p=gm.weights)
    eps = rng.standard_normal((count, gm.dim))
    return gm.means[comp] + np.einsum("nij,nj->ni", gm.chol[comp], eps)


def mixture_bin_masses(gm: GaussianMixture, edges: np.ndarray) -> np.ndarray:
    """Exact probability mass of a 1-D mixture in each histogram bin."""
    from scipy.stats import norm

    if gm.dim != 1:
        raise UsageError("bin masses are defined for 1-D mixtures only")
    edges = np.asarray(edges, dtype=np.float64)
    cdf = np.zeros_like(edges)
    for w, mu, L in zip(gm.weights, gm.means[:, 0], gm.chol[:, 0, 0]):
        cdf += w * norm.cdf(edges, loc=mu, scale=L)
    return np.diff(cdf)


# ----------------------------------------------- conditioning configurations
def _grid_config(rows: list[str]) -> list[tuple[int, int, int]]:
    coords = [8, 16, 24, 32, 40, 48, 56]
    return [(i, j, int(v)) for i, row in zip(coords, rows) for j, v in zip(coords, row.split())]


CONDITIONING_CONFIGS: dict[str, list[tuple[int, int, int]]] = {
    "A": [(12, 12, 0), (12, 25, 0), (12, 38, 1), (12, 51, 1), (25, 12, 1), (25, 25, 0),
          (25, 38, 0), (25, 51, 0), (38, 12, 0), (38, 25, 1), (38, 38, 1), (38, 51, 1),
          (51, 12, 0), (51, 25, 0), (51, 38, 0), (51, 51, 1)],
    "B": [(12, 12, 1), (25, 12, 0), (38, 12, 0), (51, 12, 1), (12, 25, 0), (25, 25, 1),
          (38, 25, 1), (51, 25, 0), (12, 38, 0), (25, 38, 1), (38, 38, 1), (51, 38, 0),
          (12, 51, 1), (25, 51, 0), (38, 51, 0), (51, 51, 1)],
    "C": [(12, 12, 1), (25, 12, 0), (38, 12, 0), (51, 12, 0), (12, 25, 0), (25, 25, 1),
          (38, 25, 0), (51, 25, 0), (12, 38, 0), (25, 38, 0), (38, 38, 1), (51, 38, 0),
          (12, 51, 0), (25, 51, 0), (38, 51, 0), (51, 51, 1)],
    "D": [(i, j, 1) for i, j in [
        (0, 50), (10, 50), (20, 50), (30, 50), (40, 50), (50, 50), (60, 50),
        (0, 15), (10, 21), (20, 26), (30, 32), (40, 37), (50, 43), (60, 48),
        (10, 15), (20, 15), (30, 15), (40, 15), (50, 15), (60, 15)]],
    "E": [(i, j, 1) for i, j in [
        (0, 20), (5, 22), (10, 23), (15, 25), (20, 26), (30, 30), (40, 33), (45, 34),
        (50, 36), (55, 37), (60, 39), (60, 20), (55, 22), (50, 23), (45, 25), (40, 26),
        (35, 30), (20, 33), (15, 34), (10, 36), (5, 37), (0, 39)]],
    "F": [(i, j, 1) for i, j in [
        (33, 44), (28, 42), (24, 40), (18, 35), (16, 30), (20, 23), (27, 20), (32, 19),
        (39, 21), (45, 24), (48, 32), (43, 37), (36, 40)]],
    "G": _grid_config(["0 0 0 0 0 0 0", "1 1 1 1 1 1 1", "0 0 0 0 0 0 1", "0 0 0 0 0 0 0",
                       "0 0 0 0 0 0 0", "1 0 0 0 0 0 1", "1 1 0 0 1 1 0"]),
    "H": _grid_config(["0 0 0 1 1 1 1", "0 0 0 0 1 0 1", "0 1 1 1 0 0 0", "1 0 0 0 0 0 0",
                       "0 0 0 1 1 0 0", "1 1 1 0 0 1 0", "0 0 0 1 1 0 1"]),
    "I": _grid_config(["0 1 0 0 0 1 1", "0 1 0 0 0 0 1", "0 1 0 0 0 0 0", "0 1 0 0 0 0 0",
                       "0 1 0 0 0 0 1", "0 1 0 0 0 0 1", "0 1 1 0 0 1 0"]),
}


def format_observations(triples) -> str:
    return "".join(f"{i} {j} {v}\n" for i, j, v in triples)


def parse_observation_lines(text: str) -> list[tuple[int, int, int, int]]:
    """Parse ``i j val`` lines (val in {0, 1}, ``#`` comments allowed).

    Returns ``(line_number, i, j, val)`` tuples so callers can report the
    offending line when a later check fails.
    """
    out = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 3:
            raise ConfigError(f"line {lineno}: expected 'i j val', got {raw!r}")
        try:
            i, j, v = (int(p) for p in parts)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: non-integer field in {raw!r}") from exc
        if v not in (0, 1):
            raise ConfigError(f"line {lineno}: val must be 0 or 1, got {v}")
        out.append((lineno, i, j, v))
    return out


def load_observations(path, grid: tuple[int, int] = (64, 64)):
    from .conditioner import Observations

    entries = parse_observation_lines(Path(path).read_text())
    h, w = grid
    for lineno, i, j, _ in entries:
        if not (0 <= i < h and 0 <= j < w):
            raise ConfigError(f"line {lineno}: observation ({i}, {j}) outside the {h}×{w} grid")
    return Observations.from_binary([(i, j, v) for _, i, j, v in entries], grid)


def builtin_observations(name: str, grid: tuple[int, int] = (64, 64)):
    from .conditioner import Observations

    try:
        triples = CONDITIONING_CONFIGS[name.upper()]
    except KeyError as exc:
        raise ConfigError(f"unknown conditioning configuration {name!r}") from exc
    return Observations.from_binary(triples, grid)
