"""Shared test utilities: finite-difference gradient checking."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from tsadkit.tensor import Tape, Tensor


def numeric_grad(build_loss: Callable[[], Tensor], param: Tensor,
                 eps: float = 1e-6) -> np.ndarray:
    """Central finite differences of a scalar loss w.r.t. one tensor.

    `build_loss` must be a deterministic closure re-running the forward
    pass from current parameter values.
    """
    grad = np.zeros_like(param.data)
    flat = param.data.ravel()
    gflat = grad.ravel()
    for i in range(flat.size):
        orig = flat[i]
        step = eps * max(1.0, abs(orig))
        flat[i] = orig + step
        hi = float(build_loss().data)
        flat[i] = orig - step
        lo = float(build_loss().data)
        flat[i] = orig
        gflat[i] = (hi - lo) / (2.0 * step)
    return grad


def tape_grads(build_loss: Callable[[], Tensor],
               params: Sequence[Tensor]) -> list[np.ndarray]:
    """Gradients of the loss for every parameter via one backward pass."""
    for p in params:
        p.zero_grad()
    with Tape() as tape:
        loss = build_loss()
    tape.backward(loss, params=list(params))
    return [p.grad.copy() for p in params]


def assert_grads_close(build_loss: Callable[[], Tensor],
                       params: Sequence[Tensor], rtol: float = 1e-6,
                       atol: float = 1e-8, eps: float = 1e-6) -> None:
    """Exhaustive finite-difference check of every coordinate."""
    analytic = tape_grads(build_loss, params)
    for p, got in zip(params, analytic):
        want = numeric_grad(build_loss, p, eps=eps)
        np.testing.assert_allclose(got, want, rtol=rtol, atol=atol)


def sampled_grad_errors(build_loss: Callable[[], Tensor],
                        params: Sequence[Tensor], rng: np.random.Generator,
                        n_coords: int = 4, eps: float = 1e-5) -> float:
    """Worst relative error over sampled coordinates of every parameter.

    Relative error uses max(|analytic|, |numeric|, 1e-4) as the scale so
    near-zero gradients compare absolutely.
    """
    analytic = tape_grads(build_loss, params)
    worst = 0.0
    for p, got in zip(params, analytic):
        flat = p.data.ravel()
        gflat = got.ravel()
        k = min(n_coords, flat.size)
        idxs = rng.choice(flat.size, size=k, replace=False)
        for i in idxs:
            orig = flat[i]
            step = eps * max(1.0, abs(orig))
            flat[i] = orig + step
            hi = float(build_loss().data)
            flat[i] = orig - step
            lo = float(build_loss().data)
            flat[i] = orig
            num = (hi - lo) / (2.0 * step)
            scale = max(abs(num), abs(gflat[i]), 1e-4)
            worst = max(worst, abs(gflat[i] - num) / scale)
    return worst
