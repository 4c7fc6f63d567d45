import numpy as np
import pytest
from hypothesis import settings

from lfmdepth import tensor as T

settings.register_profile("repo", max_examples=40, deadline=None)
settings.load_profile("repo")


def finite_difference(fn, param: T.Tensor, index, step: float = 1e-5) -> float:
    """Central difference of the scalar ``fn()`` with respect to one entry of ``param``."""
    orig = param.data[index]
    param.data[index] = orig + step
    with T.no_grad():
        up = fn().item()
    param.data[index] = orig - step
    with T.no_grad():
        down = fn().item()
    param.data[index] = orig
    return (up - down) / (2 * step)


def gradcheck(fn, params, rng, samples: int = 6, step: float = 1e-5, rtol: float = 1e-4,
              atol: float = 1e-8):
    """Compare analytic gradients with central differences at sampled entries."""
    for p in params:
        p.grad = None
    loss = fn()
    T.backward(loss)
    for p in params:
        flat = rng.choice(p.data.size, size=min(samples, p.data.size), replace=False)
        for f in flat:
            idx = np.unravel_index(f, p.shape)
            num = finite_difference(fn, p, idx, step)
            ana = 0.0 if p.grad is None else float(p.grad[idx])
            assert abs(ana - num) <= atol + rtol * max(abs(num), abs(ana)), \
                f"{p.name or p.shape}{idx}: analytic {ana} vs numeric {num}"


def leaf(rng, shape, scale=1.0, name=None, positive=False):
    a = rng.standard_normal(shape) * scale
    if positive:
        a = np.abs(a) + 0.5
    return T.Tensor(a.astype(np.float64), requires_grad=True, name=name)


def weighted_sum(out: T.Tensor, rng) -> T.Tensor:
    """Generic scalar of an output: sum(out * fixed random weights)."""
    w = T.Tensor(rng.standard_normal(out.shape))
    return T.tsum(out * w)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
