"""Diagonal Gaussians, categoricals and Gaussian mixtures.

Randomness always comes from an explicitly passed ``numpy.random.Generator``
built on PCG64 (see :func:`make_rng`); normals use numpy's ziggurat sampler
and categorical draws use the inverse CDF over the stored order. There is
no module-level random state.

Parameters may be plain arrays or :class:`~gmmfill.tensor.Tensor` objects;
with tensors the closed-form KL and reparameterized samples are
differentiable. Leading axes are treated as batch axes.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

from . import tensor as T
from .tensor import ShapeError, Tensor

ArrayOrTensor = Union[np.ndarray, Tensor]

LOG_2PI = float(np.log(2.0 * np.pi))


def make_rng(seed) -> np.random.Generator:
    """PCG64 generator from an int seed or a sequence of ints (for derived streams)."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))


def _values(x: ArrayOrTensor) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


@dataclass(frozen=True)
class DiagGaussian:
    mean: ArrayOrTensor
    log_var: ArrayOrTensor

    def __post_init__(self):
        m, lv = _values(self.mean), _values(self.log_var)
        if m.shape != lv.shape or m.ndim == 0 or m.shape[-1] < 1:
            raise ShapeError(f"DiagGaussian: mean {m.shape} and log_var {lv.shape} must match, d >= 1")

    @property
    def dim(self) -> int:
        return _values(self.mean).shape[-1]

    @property
    def var(self) -> np.ndarray:
        return np.exp(_values(self.log_var))

    def detach(self) -> "DiagGaussian":
        return DiagGaussian(_values(self.mean).copy(), _values(self.log_var).copy())


@dataclass(frozen=True)
class Categorical:
    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=np.float64)
        object.__setattr__(self, "probs", p)
        if p.ndim != 1 or p.size < 1:
            raise ShapeError(f"Categorical: need a non-empty vector, got shape {p.shape}")
        if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
            raise ValueError(f"Categorical: probabilities must be >= 0 and sum to 1, got {p}")

    @property
    def k(self) -> int:
        return self.probs.size


@dataclass(frozen=True)
class GaussianMixture:
    """``sum_i weights[i] * N(means[i], diag(exp(log_vars[i])))``."""

    weights: Categorical
    means: ArrayOrTensor  # (k, d)
    log_vars: ArrayOrTensor  # (k, d)

    def __post_init__(self):
        m, lv = _values(self.means), _values(self.log_vars)
        if m.ndim != 2 or m.shape != lv.shape:
            raise ShapeError(f"GaussianMixture: means {m.shape} / log_vars {lv.shape} must be (k, d)")
        if m.shape[0] != self.weights.k:
            raise ShapeError(f"GaussianMixture: {self.weights.k} weights for {m.shape[0]} components")

    @property
    def k(self) -> int:
        return self.weights.k

    @property
    def dim(self) -> int:
        return _values(self.means).shape[1]

    def component(self, i: int) -> DiagGaussian:
        if isinstance(self.means, Tensor):
            return DiagGaussian(
                T.reshape(T.slice_axis(self.means, i, i + 1, axis=0), (self.dim,)),
                T.reshape(T.slice_axis(self.log_vars, i, i + 1, axis=0), (self.dim,)),
            )
        return DiagGaussian(_values(self.means)[i], _values(self.log_vars)[i])

    @property
    def components(self) -> list[DiagGaussian]:
        return [self.component(i) for i in range(self.k)]

    @classmethod
    def from_components(cls, weights, components: list[DiagGaussian]) -> "GaussianMixture":
        return cls(
            Categorical(weights),
            np.stack([_values(c.mean) for c in components]),
            np.stack([_values(c.log_var) for c in components]),
        )


# ---------------------------------------------------------------------------
# sampling


def sample_gaussian(g: DiagGaussian, rng: np.random.Generator):
    """Reparameterized draw: returns ``(mean + exp(log_var / 2) * noise, noise)``."""
    noise = rng.standard_normal(_values(g.mean).shape)
    return reparameterize(g, noise), noise


def reparameterize(g: DiagGaussian, noise: np.ndarray):
    if isinstance(g.mean, Tensor) or isinstance(g.log_var, Tensor):
        std = T.exp(T.mul(T.as_tensor(g.log_var), 0.5))
        return T.add(T.as_tensor(g.mean), T.mul(std, Tensor(noise)))
    return _values(g.mean) + np.exp(0.5 * _values(g.log_var)) * noise


def sample_categorical(c: Categorical, rng: np.random.Generator) -> int:
    u = rng.random()
    cdf = np.cumsum(c.probs)
    idx = int(np.searchsorted(cdf, u, side="right"))
    if idx >= c.k:  # u beyond a cdf that rounds below 1
        idx = int(np.flatnonzero(c.probs > 0)[-1])
    return idx


def sample_gmm(m: GaussianMixture, rng: np.random.Generator):
    i = sample_categorical(m.weights, rng)
    x, _ = sample_gaussian(m.component(i), rng)
    return i, x


# ---------------------------------------------------------------------------
# densities and divergences


def _check_same_dim(p: DiagGaussian, q: DiagGaussian) -> None:
    if p.dim != q.dim:
        raise ShapeError(f"dimension mismatch: {p.dim} vs {q.dim}")


def log_prob(g: DiagGaussian, x) -> float:
    m, lv = _values(g.mean), _values(g.log_var)
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1:] != m.shape[-1:]:
        raise ShapeError(f"log_prob: point of dim {x.shape[-1:]} for a Gaussian of dim {m.shape[-1]}")
    return -0.5 * np.sum(LOG_2PI + lv + (x - m) ** 2 * np.exp(-lv), axis=-1)


def kl_diag_gaussian(p: DiagGaussian, q: DiagGaussian):
    """Closed-form ``KL(p || q)`` summed over the last axis.

    Returns a float for array inputs and a differentiable Tensor when any
    parameter is a Tensor.
    """
    _check_same_dim(p, q)
    if not any(isinstance(v, Tensor) for v in (p.mean, p.log_var, q.mean, q.log_var)):
        mp, lp, mq, lq = (_values(v) for v in (p.mean, p.log_var, q.mean, q.log_var))
        terms = lq - lp - 1.0 + np.exp(lp - lq) + (mp - mq) ** 2 * np.exp(-lq)
        out = 0.5 * np.sum(terms, axis=-1)
        return float(out) if np.ndim(out) == 0 else out
    mp, lp, mq, lq = (T.as_tensor(v) for v in (p.mean, p.log_var, q.mean, q.log_var))
    diff = T.sub(mp, mq)
    inv_q = T.exp(T.mul(lq, -1.0))
    terms = T.add(
        T.sub(T.sub(lq, lp), 1.0),
        T.add(T.exp(T.sub(lp, lq)), T.mul(T.square(diff), inv_q)),
    )
    return T.mul(T.sum(terms, axis=-1), 0.5)


def kl_monte_carlo(p: DiagGaussian, q: DiagGaussian, n: int, rng: np.random.Generator):
    """Monte-Carlo ``KL(p || q)``: ``(estimate, standard error)`` from ``n`` draws of ``p``."""
    _check_same_dim(p, q)
    if n < 1000:
        raise ValueError("kl_monte_carlo needs n >= 1000")
    mp, lp = _values(p.mean), _values(p.log_var)
    x = mp + np.exp(0.5 * lp) * rng.standard_normal((n, mp.size))
    ratio = log_prob(p, x) - log_prob(q, x)
    return float(ratio.mean()), float(ratio.std(ddof=1) / np.sqrt(n))


# ---------------------------------------------------------------------------
# discrete model of the completion graph, used as an exact oracle


def _xlogy_ratio(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Elementwise ``a * log(a / b)`` with ``0 log 0 = 0`` and ``+inf`` off p's support."""
    out = np.zeros(np.broadcast(a, b).shape)
    a, b = np.broadcast_to(a, out.shape), np.broadcast_to(b, out.shape)
    pos = a > 0
    with np.errstate(divide="ignore"):
        out[pos] = a[pos] * (np.log(a[pos]) - np.log(b[pos]))
    return out


def _expect(w: np.ndarray, v: np.ndarray) -> float:
    # zero-weight cells contribute nothing even where v is infinite
    return float(np.sum(np.where(w > 0, w * v, 0.0)))


def _kl_discrete(a: np.ndarray, b: np.ndarray, axis=-1) -> np.ndarray:
    return _xlogy_ratio(a, b).sum(axis=axis)


@dataclass(frozen=True)
class DiscretePgm:
    """Finite-alphabet version of the completion graph.

    Variational side ``q(I_o | z_m, z_c) q_theta(z_c | z_m) q_psi(z_m | I_m)``;
    model side ``p(I_o | I_m, I_c) p(z_c | I_c) p(z_m | I_m)``. Tables are
    indexed ``[condition..., outcome]``; ``im`` and ``ic`` pick the observed
    partial images.
    """

    q_zm: np.ndarray  # [I_m, z_m]
    q_zc: np.ndarray  # [z_m, z_c]  (theta)
    q_io: np.ndarray  # [z_m, z_c, I_o]
    p_io: np.ndarray  # [I_m, I_c, I_o]
    p_zc: np.ndarray  # [I_c, z_c]
    p_zm: np.ndarray  # [I_m, z_m]
    im: int = 0
    ic: int = 0

    def __post_init__(self):
        for name in ("q_zm", "q_zc", "q_io", "p_io", "p_zc", "p_zm"):
            t = getattr(self, name)
            if np.any(t < 0) or np.any(np.abs(t.sum(axis=-1) - 1.0) > 1e-12):
                raise ValueError(f"DiscretePgm: rows of {name} must be distributions")

    @classmethod
    def random(cls, rng: np.random.Generator, sizes=None, strictly_positive=True) -> "DiscretePgm":
        """Random tables; ``sizes`` maps ``io, im, ic, zm, zc`` to alphabet sizes."""
        s = {k: int(rng.integers(2, 4)) for k in ("io", "im", "ic", "zm", "zc")}
        s.update(sizes or {})

        def table(*shape):
            t = rng.uniform(0.05, 1.0, shape) if strictly_positive else rng.uniform(0.0, 1.0, shape)
            return t / t.sum(axis=-1, keepdims=True)

        return cls(
            q_zm=table(s["im"], s["zm"]),
            q_zc=table(s["zm"], s["zc"]),
            q_io=table(s["zm"], s["zc"], s["io"]),
            p_io=table(s["im"], s["ic"], s["io"]),
            p_zc=table(s["ic"], s["zc"]),
            p_zm=table(s["im"], s["zm"]),
            im=int(rng.integers(s["im"])),
            ic=int(rng.integers(s["ic"])),
        )

    def q_joint(self) -> np.ndarray:
        """``q(I_o, z_m, z_c | I_m)`` as an array ``[z_m, z_c, I_o]``."""
        return self.q_zm[self.im][:, None, None] * self.q_zc[:, :, None] * self.q_io

    def p_joint(self) -> np.ndarray:
        return (
            self.p_zm[self.im][:, None, None]
            * self.p_zc[self.ic][None, :, None]
            * self.p_io[self.im, self.ic][None, None, :]
        )

    def terms(self) -> tuple[float, float, float]:
        """Brute-force generation, mixture and masked-posterior terms."""
        q_zm = self.q_zm[self.im]
        q_pair = q_zm[:, None] * self.q_zc
        term_a = _expect(q_pair, _kl_discrete(self.q_io, self.p_io[self.im, self.ic][None, None, :]))
        term_b = _expect(q_zm, _kl_discrete(self.q_zc, self.p_zc[self.ic][None, :]))
        term_c = float(_kl_discrete(q_zm, self.p_zm[self.im]))
        return term_a, term_b, term_c


def verify_decomposition(pgm: DiscretePgm) -> tuple[float, float]:
    """``(lhs, rhs)``: the joint KL by full summation, and the sum of the three terms."""
    lhs = float(_xlogy_ratio(pgm.q_joint(), pgm.p_joint()).sum())
    return lhs, float(sum(pgm.terms()))
