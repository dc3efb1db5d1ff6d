"""Mixture-of-experts training losses for the Gaussian-mixture latent.

Each example picks its best primitive ``j`` (smallest KL from the primitive
to the complement posterior). ``j`` is a constant for differentiation. The
mixing weights learn from the frequency loss ``|onehot(j) - alpha|^2``; only
primitive ``j`` receives the KL loss.

All functions accept a single mixture (means ``(k, d)``) or a batch (means
``(N, k, d)``, targets ``(N, d)``); batch losses are batch means.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .distributions import DiagGaussian, kl_diag_gaussian
from .tensor import ShapeError, Tensor


def _values(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


@dataclass(frozen=True)
class BestPrimitive:
    index: np.ndarray  # (N,) ints; 0-d for a single mixture
    kls: np.ndarray  # (N, k) or (k,)

    @property
    def k(self) -> int:
        return self.kls.shape[-1]


def best_primitive(m, target: DiagGaussian) -> BestPrimitive:
    """Arg-min over primitives of ``KL(primitive_i || target)``; ties go to the lowest index."""
    means, log_vars = _values(m.means), _values(m.log_vars)
    tm, tl = _values(target.mean), _values(target.log_var)
    if means.shape[-1] != tm.shape[-1] or means.shape[:-2] != tm.shape[:-1]:
        raise ShapeError(f"best_primitive: mixture {means.shape} does not fit target {tm.shape}")
    kls = kl_diag_gaussian(
        DiagGaussian(means, log_vars), DiagGaussian(tm[..., None, :], tl[..., None, :])
    )
    kls = np.asarray(kls)
    return BestPrimitive(index=np.argmin(kls, axis=-1), kls=kls)


def one_hot(index, k: int) -> np.ndarray:
    index = np.asarray(index)
    return (np.arange(k) == index[..., None]).astype(np.float64)


def frequency_loss(alpha: Tensor, best: BestPrimitive) -> Tensor:
    """Squared distance between ``alpha`` and the one-hot best-primitive indicator."""
    v = Tensor(one_hot(best.index, best.k))
    if v.shape != alpha.shape:
        raise ShapeError(f"frequency_loss: alpha {alpha.shape} vs indicator {v.shape}")
    per_row = T.sum(T.square(T.sub(v, alpha)), axis=-1)
    return per_row if alpha.data.ndim == 1 else T.mean(per_row)


def selected_component(m, best: BestPrimitive) -> DiagGaussian:
    """Primitive ``best.index`` as a (differentiable) Gaussian, per batch row."""
    means, log_vars = T.as_tensor(m.means), T.as_tensor(m.log_vars)
    if means.data.ndim == 2:
        j = int(best.index)
        d = means.shape[1]
        return DiagGaussian(
            T.reshape(T.slice_axis(means, j, j + 1, axis=0), (d,)),
            T.reshape(T.slice_axis(log_vars, j, j + 1, axis=0), (d,)),
        )
    return DiagGaussian(T.take_rows(means, best.index), T.take_rows(log_vars, best.index))


def bm_loss(m, best: BestPrimitive, target: DiagGaussian) -> Tensor:
    """``KL(primitive_j || target)``; gradients reach both the mixture and the target."""
    comp = selected_component(m, best)
    if comp.dim != target.dim:
        raise ShapeError(f"bm_loss: primitive dim {comp.dim} vs target dim {target.dim}")
    kl = kl_diag_gaussian(comp, target)
    return T.mean(kl)


def gmm_loss(m, best: BestPrimitive, target: DiagGaussian, alpha: Tensor):
    """``(L_F + L_BM, L_F, L_BM)``."""
    lf = frequency_loss(alpha, best)
    lbm = bm_loss(m, best, target)
    return T.add(lf, lbm), lf, lbm


def dominance(alpha) -> np.ndarray | float:
    """Largest mixing weight, per row."""
    a = _values(alpha)
    out = a.max(axis=-1)
    return float(out) if np.ndim(out) == 0 else out


def simulate_frequency_fixed_point(
    p, steps: int = 10_000, lr: float = 0.05, batch: int = 16, rng: np.random.Generator | None = None
) -> np.ndarray:
    """Gradient descent on the mean frequency loss with best indices drawn i.i.d. from ``p``.

    Returns the final mixing weights; their fixed point is ``p``.
    """
    p = np.asarray(p, dtype=np.float64)
    rng = rng if rng is not None else np.random.default_rng(0)
    k = p.size
    logits = Tensor(np.zeros(k), requires_grad=True)
    for _ in range(steps):
        idx = rng.choice(k, size=batch, p=p)
        best = BestPrimitive(index=idx, kls=np.zeros((batch, k)))
        with T.Tape() as tape:
            alpha = T.softmax(T.reshape(T.concat([logits] * batch), (batch, k)))
            loss = frequency_loss(alpha, best)
        logits.grad = None
        tape.backward(loss)
        logits.data = logits.data - lr * logits.grad
    return T.softmax(Tensor(logits.data)).data
