"""Quality assessment of generated realizations.

Binarization with Otsu's threshold and small-object cleanup, multipoint
pattern histograms, ANODI inconsistency/diversity scores, SMACOF embeddings,
discriminator-score histograms, a nearest-neighbour memorization check and
latent-space interpolation.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .autodiff import Tensor
from .errors import DomainError, ShapeError, UsageError

LOG2 = math.log(2.0)
OTSU_BINS = 256
MIN_OBJECT_SIZE = 8
DEFAULT_RESOLUTIONS = (1, 2, 4, 8)


def _array(x) -> np.ndarray:
    return x.numpy() if isinstance(x, Tensor) else np.asarray(x)


# ------------------------------------------------------------ binarization
def otsu_threshold(values, bins: int = OTSU_BINS) -> float:
    """Threshold t maximizing the between-class variance; class 1 is ``v >= t``.

    Candidates are the 256 upper bin edges of a histogram spanning the value
    range, so the last candidate isolates the maximum. Ties go to the lowest
    threshold.
    """
    v = np.sort(_array(values).astype(np.float64).ravel())
    if v.size == 0:
        raise DomainError("Otsu threshold of an empty set")
    lo, hi = float(v[0]), float(v[-1])
    if lo == hi:
        raise DomainError("Otsu threshold needs at least two distinct values")
    cand = np.linspace(lo, hi, bins + 1)[1:]
    n0 = np.searchsorted(v, cand, side="left")
    prefix = np.concatenate([[0.0], np.cumsum(v)])
    s0 = prefix[n0]
    n1 = v.size - n0
    s1 = prefix[-1] - s0
    n0 = n0.astype(np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        score = n0 * n1 * (s0 / n0 - s1 / n1) ** 2
    score = np.where((n0 > 0) & (n1 > 0), score, 0.0)
    best = score.max()
    k = int(np.flatnonzero(score >= best * (1 - 1e-12))[0])
    return float(cand[k])


def label_components(binary) -> tuple[np.ndarray, int]:
    """4-connected labelling of the True pixels."""
    return ndimage.label(np.asarray(binary, dtype=bool))


def remove_small_objects(binary, min_size: int = MIN_OBJECT_SIZE) -> np.ndarray:
    """Flip 4-connected components (of either phase) smaller than ``min_size``."""
    b = np.asarray(binary, dtype=bool).copy()
    for phase in (True, False):
        labels, n = label_components(b == phase)
        if n == 0:
            continue
        sizes = np.bincount(labels.ravel())
        small = np.flatnonzero(sizes < min_size)
        small = small[small > 0]
        if small.size:
            b[np.isin(labels, small)] = not phase
    return b


def binarize_clean(image, min_size: int = MIN_OBJECT_SIZE) -> np.ndarray:
    """Otsu-binarize a 2-D image to ±1 and remove small objects."""
    img = _array(image).astype(np.float64)
    if img.ndim == 3 and img.shape[0] == 1:
        img = img[0]
    if img.ndim != 2:
        raise ShapeError(f"binarize_clean expects an H×W image, got {img.shape}")
    if img.min() == img.max():
        b = np.full(img.shape, img.flat[0] > 0)
    else:
        b = img >= otsu_threshold(img)
    b = remove_small_objects(b, min_size)
    return np.where(b, 1.0, -1.0).astype(np.float32)


def downsample(image, factor: int) -> np.ndarray:
    """Block-average pooling over the last two axes."""
    img = _array(image)
    if factor < 1:
        raise ShapeError(f"downsampling factor must be positive, got {factor}")
    h, w = img.shape[-2:]
    if h % factor or w % factor:
        raise ShapeError(f"image {h}×{w} not divisible by factor {factor}")
    if factor == 1:
        return img.copy()
    lead = img.shape[:-2]
    blocks = img.reshape(lead + (h // factor, factor, w // factor, factor))
    return blocks.mean(axis=(-3, -1), dtype=np.float64).astype(img.dtype)


# ------------------------------------------------------ pattern histograms
@dataclass
class PatternHistogram:
    window: int
    codes: np.ndarray   # sorted unique pattern codes
    counts: np.ndarray  # matching counts (all >= 1)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def as_dict(self) -> dict[int, int]:
        return {int(c): int(n) for c, n in zip(self.codes, self.counts)}


def pattern_histogram(binary, w: int = 4) -> PatternHistogram:
    """Count every overlapping w×w window (stride 1).

    The code of a window reads its pixels row-major with the first pixel as
    the most significant bit; channel (positive) pixels are 1.
    """
    b = _array(binary)
    if b.ndim != 2:
        raise ShapeError(f"pattern histogram expects an H×W image, got {b.shape}")
    if w < 1 or w > 8:
        raise ShapeError(f"window size must be in [1, 8], got {w}")
    h, wd = b.shape
    if w > min(h, wd):
        raise ShapeError(f"window {w} larger than image {h}×{wd}")
    bits = (b > 0).astype(np.uint64)
    oh, ow = h - w + 1, wd - w + 1
    code = np.zeros((oh, ow), dtype=np.uint64)
    for a in range(w):
        for c in range(w):
            code = (code << np.uint64(1)) | bits[a:a + oh, c:c + ow]
    codes, counts = np.unique(code, return_counts=True)
    return PatternHistogram(w, codes, counts.astype(np.int64))


def js_divergence(p: PatternHistogram, q: PatternHistogram) -> float:
    """Jensen–Shannon divergence in nats, within [0, log 2]."""
    if p.total <= 0 or q.total <= 0:
        raise UsageError("JS divergence of an empty histogram")
    keys = np.union1d(p.codes, q.codes)
    pp = np.zeros(keys.size)
    qq = np.zeros(keys.size)
    pp[np.searchsorted(keys, p.codes)] = p.counts / p.total
    qq[np.searchsorted(keys, q.codes)] = q.counts / q.total
    s = pp + qq
    a = pp > 0
    b = qq > 0
    js = 0.5 * (np.sum(pp[a] * np.log(2 * pp[a] / s[a])) + np.sum(qq[b] * np.log(2 * qq[b] / s[b])))
    return float(min(max(js, 0.0), LOG2))


def js_matrix(hists) -> np.ndarray:
    n = len(hists)
    out = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            out[i, j] = out[j, i] = js_divergence(hists[i], hists[j])
    return out


# ---------------------------------------------------------------- ANODI
def histograms(images, factor: int = 1, w: int = 4) -> list[PatternHistogram]:
    """Downsample, binarize_clean, then pattern-count each image."""
    imgs = _array(images)
    imgs = imgs.reshape((-1,) + imgs.shape[-2:])
    small = downsample(imgs, factor)
    return [pattern_histogram(binarize_clean(im), w) for im in small]


def resolution_label(factor: int) -> str:
    return "x1" if factor == 1 else f"x1/{factor}"


@dataclass
class AnodiRow:
    method: str
    resolution: int
    inconsistency: float
    diversity: float


@dataclass
class AnodiReport:
    rows: list[AnodiRow] = field(default_factory=list)

    def get(self, method: str, resolution: int = 1) -> AnodiRow:
        for r in self.rows:
            if r.method == method and r.resolution == resolution:
                return r
        raise KeyError((method, resolution))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["method", "resolution", "inconsistency", "diversity"])
            for r in self.rows:
                w.writerow([r.method, resolution_label(r.resolution),
                            repr(float(r.inconsistency)), repr(float(r.diversity))])


def anodi_scores(realizations, reference, resolutions=DEFAULT_RESOLUTIONS, w: int = 4) -> AnodiReport:
    """Inconsistency (mean JS to the reference) and diversity (mean pairwise JS).

    ``realizations`` is either one image stack or a mapping from method name
    to image stack.
    """
    sets = realizations if isinstance(realizations, dict) else {"generated": realizations}
    ref = _array(reference)
    ref = ref.reshape(ref.shape[-2:])
    report = AnodiReport()
    for factor in resolutions:
        ref_hist = histograms(ref, factor, w)[0]
        for name, imgs in sets.items():
            hs = histograms(imgs, factor, w)
            if len(hs) < 2:
                raise UsageError("ANODI scores need at least 2 realizations")
            incons = float(np.mean([js_divergence(h, ref_hist) for h in hs]))
            m = js_matrix(hs)
            div = float(m[np.triu_indices(len(hs), 1)].mean())
            report.rows.append(AnodiRow(name, factor, incons, div))
    return report


# ---------------------------------------------------------------- SMACOF
@dataclass
class Embedding2D:
    points: np.ndarray
    stress: float
    n_iter: int
    history: list[float] = field(default_factory=list)

    def rows(self, method: str):
        return [(method, i, float(x), float(y)) for i, (x, y) in enumerate(self.points[:, :2])]


def write_embedding_csv(path, embeddings: dict[str, np.ndarray] | list) -> None:
    """Rows ``method,index,x,y``; accepts a list of ``(method, index, x, y)``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["method", "index", "x", "y"])
        for method, i, x, y in embeddings:
            w.writerow([method, i, repr(float(x)), repr(float(y))])


def raw_stress(dist: np.ndarray, x: np.ndarray) -> float:
    iu = np.triu_indices(dist.shape[0], 1)
    e = np.sqrt(((x[:, None, :] - x[None, :, :]) ** 2).sum(-1))
    return float(((dist[iu] - e[iu]) ** 2).sum())


def _guttman(dist: np.ndarray, x: np.ndarray) -> np.ndarray:
    n = dist.shape[0]
    e = np.sqrt(((x[:, None, :] - x[None, :, :]) ** 2).sum(-1))
    with np.errstate(divide="ignore", invalid="ignore"):
        b = np.where(e > 0, -dist / e, 0.0)
    np.fill_diagonal(b, 0.0)
    np.fill_diagonal(b, -b.sum(axis=1))
    return b @ x / n


def _smacof_run(d: np.ndarray, x: np.ndarray, max_iters: int, tol: float) -> Embedding2D:
    stress = raw_stress(d, x)
    floor = 1e-28 * max(float((d * d).sum()), 1.0)
    history = [stress]
    it = 0
    while it < max_iters and stress > floor:
        x = _guttman(d, x)
        it += 1
        new = raw_stress(d, x)
        history.append(new)
        converged = stress - new < tol * stress
        stress = new
        if converged:
            break
    return Embedding2D(x, stress, it, history)


def smacof_mds(dist, dim: int = 2, max_iters: int = 300, tol: float = 1e-3, seed: int = 0,
               init: np.ndarray | None = None, n_init: int = 1) -> Embedding2D:
    """Metric MDS by stress majorization with unit weights.

    With ``n_init > 1`` several seeded random starts are run and the lowest
    final stress wins.
    """
    d = np.asarray(dist, dtype=np.float64)
    if d.ndim != 2 or d.shape[0] != d.shape[1]:
        raise UsageError(f"distance matrix must be square, got {d.shape}")
    if not np.allclose(d, d.T, rtol=0, atol=1e-12) or np.any(d < 0) or np.any(np.diag(d) != 0):
        raise UsageError("distance matrix must be symmetric, nonnegative, with zero diagonal")
    n = d.shape[0]
    if init is not None:
        return _smacof_run(d, np.asarray(init, dtype=np.float64).copy(), max_iters, tol)
    gen = np.random.default_rng(seed)
    best = None
    for _ in range(max(1, n_init)):
        run = _smacof_run(d, gen.standard_normal((n, dim)), max_iters, tol)
        if best is None or run.stress < best.stress:
            best = run
    return best


# --------------------------------------------------- discriminator scores
@dataclass
class ScoreHistogram:
    edges: np.ndarray
    counts: np.ndarray
    mean: float
    var: float

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["bin_lo", "bin_hi", "count"])
            for lo, hi, c in zip(self.edges[:-1], self.edges[1:], self.counts):
                w.writerow([repr(float(lo)), repr(float(hi)), int(c)])


def score_histogram(scores, bins: int = 20) -> ScoreHistogram:
    s = np.asarray(scores, dtype=np.float64).ravel()
    if np.any((s < 0) | (s > 1)):
        raise UsageError("discriminator scores must lie in [0, 1]")
    counts, edges = np.histogram(s, bins=bins, range=(0.0, 1.0))
    mean = float(s.mean()) if s.size else float("nan")
    var = float(s.var()) if s.size else float("nan")
    return ScoreHistogram(edges, counts, mean, var)


def discriminator_scores(D, images, batch: int = 64) -> np.ndarray:
    from . import autodiff as ad
    from .layers import evaluating

    imgs = _array(images).astype(np.float32)
    imgs = imgs.reshape((-1, 1) + imgs.shape[-2:])
    out = []
    with ad.no_grad(), evaluating(D):
        for lo in range(0, len(imgs), batch):
            out.append(D(Tensor(imgs[lo:lo + batch])).numpy())
    return np.concatenate(out) if out else np.zeros(0, np.float32)


def discriminator_histogram(D, realizations, bins: int = 20) -> dict[str, ScoreHistogram]:
    """Histogram of sigmoid discriminator scores for each realization set."""
    if getattr(D, "mode", None) != "standard":
        raise UsageError("discriminator histograms need a sigmoid (standard-mode) discriminator")
    sets = realizations if isinstance(realizations, dict) else {"generated": realizations}
    return {name: score_histogram(discriminator_scores(D, imgs), bins) for name, imgs in sets.items()}


# ----------------------------------------------------- memorization check
FLIPS = ("none", "h", "v", "hv")
ANGLES = (0.0, 10.0, -10.0)


def _affine(img: np.ndarray, rot_deg: float, shear_deg: float) -> np.ndarray:
    if rot_deg == 0 and shear_deg == 0:
        return img.copy()
    r = math.radians(rot_deg)
    rot = np.array([[math.cos(r), -math.sin(r)], [math.sin(r), math.cos(r)]])
    shear = np.array([[1.0, 0.0], [math.tan(math.radians(shear_deg)), 1.0]])
    m = rot @ shear
    center = (np.array(img.shape) - 1) / 2.0
    inv = np.linalg.inv(m)
    offset = center - inv @ center
    return ndimage.affine_transform(img, inv, offset=offset, order=1, mode="reflect")


def augment(image) -> tuple[np.ndarray, list[str]]:
    """The image plus its 35 flip / rotation / shear variants (identity first)."""
    img = _array(image).astype(np.float64)
    out, names = [], []
    for flip in FLIPS:
        f = img
        if "h" in flip:
            f = f[:, ::-1]
        if "v" in flip:
            f = f[::-1, :]
        for rot in ANGLES:
            for sh in ANGLES:
                out.append(_affine(np.ascontiguousarray(f), rot, sh))
                names.append(f"flip={flip},rot={rot:+g},shear={sh:+g}")
    return np.stack(out), names


def blur(images, sigma: float = 1.0) -> np.ndarray:
    """Gaussian blur over the last two axes with a 5×5 kernel."""
    imgs = _array(images).astype(np.float64)
    if sigma <= 0:
        return imgs.copy()
    sig = (0,) * (imgs.ndim - 2) + (sigma, sigma)
    return ndimage.gaussian_filter(imgs, sig, mode="reflect", truncate=2.0 / sigma)


@dataclass
class MemorizationReport:
    distances: np.ndarray
    dataset_index: np.ndarray
    variant: list[str]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["realization", "distance", "dataset_index", "variant"])
            for i, (d, j, v) in enumerate(zip(self.distances, self.dataset_index, self.variant)):
                w.writerow([i, repr(float(d)), int(j), v])


def memorization_check(realizations, dataset, blur_sigma: float = 1.0, chunk: int = 32) -> MemorizationReport:
    """Nearest augmented training image (blurred Euclidean distance) per realization."""
    real = _array(realizations)
    real = real.reshape((-1,) + real.shape[-2:])
    data = _array(dataset)
    data = data.reshape((-1,) + data.shape[-2:])
    if len(data) == 0:
        raise UsageError("memorization check needs a nonempty dataset")
    r = blur(real, blur_sigma).reshape(len(real), -1)
    r2 = (r * r).sum(1)
    best = np.full(len(real), np.inf)
    best_idx = np.zeros(len(real), np.int64)
    best_var = np.zeros(len(real), np.int64)
    names = None
    for lo in range(0, len(data), chunk):
        aug = []
        for img in data[lo:lo + chunk]:
            a, names = augment(img)
            aug.append(a)
        a = blur(np.concatenate(aug), blur_sigma).reshape(-1, r.shape[1])
        d2 = r2[:, None] + (a * a).sum(1)[None, :] - 2 * r @ a.T
        d = np.sqrt(np.maximum(d2, 0))
        j = d.argmin(1)
        # the expansion loses digits near zero; recompute the winners directly
        dj = np.sqrt(((r - a[j]) ** 2).sum(1))
        upd = dj < best
        best[upd] = dj[upd]
        n_var = len(names)
        best_idx[upd] = lo + j[upd] // n_var
        best_var[upd] = j[upd] % n_var
    return MemorizationReport(best, best_idx, [names[v] for v in best_var])


# ------------------------------------------------------ latent interpolation
def latent_interpolation(G, z_a, z_b, steps: int) -> np.ndarray:
    """G applied along the straight line from z_a to z_b; returns (steps, 1, H, W)."""
    from .gan import generate

    if steps < 2:
        raise UsageError("interpolation needs at least 2 steps")
    za = np.asarray(z_a, dtype=np.float64).reshape(-1)
    zb = np.asarray(z_b, dtype=np.float64).reshape(-1)
    t = np.linspace(0.0, 1.0, steps)[:, None]
    return generate(G, (1 - t) * za + t * zb)
