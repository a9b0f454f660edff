from __future__ import annotations

import numpy as np
import pytest

from coldpac.nnet import ArchSpec, FlatParams, forward_raw, init_params


def fd_gradient(fn, w: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Central finite differences of a scalar function of a flat vector."""
    g = np.empty_like(w)
    for j in range(w.size):
        e = np.zeros_like(w)
        e[j] = step
        g[j] = (fn(w + e) - fn(w - e)) / (2 * step)
    return g


def fd_output_jacobian(arch: ArchSpec, w: np.ndarray, x: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """(K, d) Jacobian of raw outputs at a single input, by central differences."""
    cols = []
    for j in range(w.size):
        e = np.zeros_like(w)
        e[j] = step
        cols.append((forward_raw(arch, w + e, x)[0] - forward_raw(arch, w - e, x)[0]) / (2 * step))
    return np.stack(cols, axis=1)


def random_arch(rng: np.random.Generator, head: str | None = None, max_width: int = 8) -> ArchSpec:
    n_hidden = int(rng.integers(0, 3))
    widths = [int(rng.integers(1, max_width + 1))]
    widths += [int(rng.integers(1, max_width + 1)) for _ in range(n_hidden)]
    head = head or ("softmax" if rng.random() < 0.5 else "identity")
    widths.append(int(rng.integers(2, 4)) if head == "softmax" else 1)
    return ArchSpec(tuple(widths), output_head=head)


def random_params(arch: ArchSpec, rng: np.random.Generator) -> FlatParams:
    return init_params(arch, rng, "gaussian", 0.7)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES: list[str] = []


def record_criterion(number: int, passed: bool, detail: str, seconds: float) -> bool:
    line = f"criterion {number}: {'PASS' if passed else 'FAIL'}  ({seconds:.2f} s)  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
