"""Central finite-difference gradient checks.

The oracle only ever evaluates the forward function on plain arrays, so it
shares no code with the backward pass it checks.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tape, Tensor


def relative_error(a, b, floor: float = 1e-10) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    scale = max(np.max(np.abs(a)), np.max(np.abs(b)), floor)
    return float(np.max(np.abs(a - b)) / scale)


def numeric_grad(f: Callable[[], float], x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central differences of ``f`` w.r.t. every entry of ``x`` (mutated in place)."""
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        up = f()
        flat[i] = old - h
        down = f()
        flat[i] = old
        gflat[i] = (up - down) / (2.0 * h)
    return g


def autodiff_grads(loss_fn: Callable[[], Tensor], params: Sequence[Tensor]) -> list[np.ndarray]:
    for p in params:
        p.grad = None
    with Tape() as tape:
        loss = loss_fn()
    tape.backward(loss)
    return [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]


def check_gradients(
    loss_fn: Callable[[], Tensor], params: Sequence[Tensor], h: float = 1e-5
) -> float:
    """Largest relative error between autodiff and finite differences, over all params."""
    analytic = autodiff_grads(loss_fn, params)
    worst = 0.0
    for p, ga in zip(params, analytic):
        gn = numeric_grad(lambda: loss_fn().item(), p.data, h)
        worst = max(worst, relative_error(ga, gn))
    return worst


def check_directional(
    loss_fn: Callable[[], Tensor],
    params: Sequence[Tensor],
    rng: np.random.Generator,
    n_directions: int = 1,
    h: float = 1e-5,
) -> float:
    """Compare ``grad . v`` with a central difference along random unit directions ``v``.

    Cheap enough for networks with thousands of parameters.
    """
    analytic = autodiff_grads(loss_fn, params)
    worst = 0.0
    for _ in range(n_directions):
        dirs = [rng.standard_normal(p.shape) for p in params]
        norm = np.sqrt(sum(float(np.sum(d * d)) for d in dirs))
        dirs = [d / norm for d in dirs]
        predicted = sum(float(np.sum(g * d)) for g, d in zip(analytic, dirs))
        saved = [p.data.copy() for p in params]
        for p, d, s in zip(params, dirs, saved):
            p.data = s + h * d
        up = loss_fn().item()
        for p, d, s in zip(params, dirs, saved):
            p.data = s - h * d
        down = loss_fn().item()
        for p, s in zip(params, saved):
            p.data = s
        measured = (up - down) / (2.0 * h)
        scale = max(abs(predicted), abs(measured), 1e-8)
        worst = max(worst, abs(predicted - measured) / scale)
    return worst
