"""Finite-difference validation of analytic gradients.

Used both by the test suite and by the ``verify gradcheck`` CLI command.
The checker rebuilds the computation from plain arrays for each probe, so
the numeric estimate never touches the code path that produced the
analytic gradient.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .diffcore import Tensor


def numeric_gradients(
    f: Callable[[Sequence[np.ndarray]], float],
    arrays: Sequence[np.ndarray],
    h: float = 1e-5,
) -> list[np.ndarray]:
    """Central-difference gradient of a scalar function of several arrays."""
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    grads = []
    for k, a in enumerate(arrays):
        g = np.zeros_like(a)
        flat, gflat = a.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = f(arrays)
            flat[i] = orig - h
            fm = f(arrays)
            flat[i] = orig
            gflat[i] = (fp - fm) / (2.0 * h)
        grads.append(g)
    return grads


def max_relative_error(
    analytic: Sequence[np.ndarray], numeric: Sequence[np.ndarray]
) -> float:
    """max |a - n| / max(1, |n|) over every gradient element."""
    worst = 0.0
    for a, n in zip(analytic, numeric):
        denom = np.maximum(1.0, np.abs(n))
        worst = max(worst, float(np.max(np.abs(a - n) / denom)))
    return worst


def check_gradients(
    build: Callable[[Sequence[Tensor]], Tensor],
    arrays: Sequence[np.ndarray],
    h: float = 1e-5,
) -> float:
    """Compare tape gradients of ``build`` against finite differences.

    ``build`` maps a list of Tensors to a scalar Tensor.  Returns the max
    relative error across all inputs.
    """
    leaves = [Tensor(np.array(a, dtype=np.float64), requires_grad=True) for a in arrays]
    loss = build(leaves)
    if loss.size != 1:
        raise ValueError("gradient check requires a scalar loss")
    loss.backward()
    analytic = [
        leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data)
        for leaf in leaves
    ]

    def forward_only(arrs: Sequence[np.ndarray]) -> float:
        return float(build([Tensor(a) for a in arrs]).data)

    numeric = numeric_gradients(forward_only, arrays, h=h)
    return max_relative_error(analytic, numeric)
