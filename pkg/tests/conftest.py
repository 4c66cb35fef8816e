import numpy as np
import pytest

from geocond import autodiff as ad
from geocond.autodiff import Tensor

H = 1e-3
RTOL = 1e-4


def numeric_grad(f, arrays, h=H):
    """Central differences of the scalar f(*arrays) w.r.t. every entry."""
    grads = []
    for a in arrays:
        g = np.zeros_like(a)
        it = np.nditer(a, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            old = a[i]
            a[i] = old + h
            up = f(*arrays)
            a[i] = old - h
            down = f(*arrays)
            a[i] = old
            g[i] = (up - down) / (2 * h)
        grads.append(g)
    return grads


def rel_err(a, b):
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-12))


def check_grad(fn, *arrays, seed=0, h=H):
    """Max relative error between autodiff and finite-difference gradients.

    ``fn`` maps Tensors to a Tensor; the output is contracted with a fixed
    random projection so every output entry contributes.
    """
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    probe = fn(*[Tensor(a) for a in arrays])
    proj = np.asarray(np.random.default_rng(seed + 999).standard_normal(probe.shape))

    def scalar(*xs):
        with ad.no_grad():
            return float(np.sum(fn(*[Tensor(x) for x in xs]).data * proj))

    leaves = [Tensor(a, requires_grad=True) for a in arrays]
    out = fn(*leaves)
    ad.backward(ad.sum(out * Tensor(proj)))
    numeric = numeric_grad(scalar, arrays, h)
    return max(rel_err(l.grad, n) for l, n in zip(leaves, numeric))


@pytest.fixture
def gradcheck():
    return check_grad


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def verdict(request, capsys):
    """Print and record one PASS/FAIL line per acceptance criterion."""
    def record(number, ok, detail):
        line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        with capsys.disabled():
            print("\n" + line)
        request.config.stash.setdefault(ACCEPTANCE, []).append(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda l: int(l.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
