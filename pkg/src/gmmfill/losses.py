"""Generator and discriminator objectives.

Images are batches ``(N, C, H, W)``. Every L1 term is a per-pixel mean so loss
magnitudes do not depend on resolution. Discriminators are passed as
callables mapping an image batch to ``(N,)`` scores; each loss stacks its
inputs and calls the discriminator once.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .distributions import DiagGaussian, kl_diag_gaussian
from .tensor import ShapeError, Tensor

Disc = Callable[[Tensor], Tensor]


def visible(x, mask) -> Tensor:
    """Keep visible pixels (``mask`` marks missing ones); mask broadcasts over channels."""
    x = T.as_tensor(x)
    m = mask.data if isinstance(mask, Tensor) else np.asarray(mask, dtype=np.float64)
    keep = np.broadcast_to(1.0 - m, x.shape)
    return T.mul(x, Tensor(np.ascontiguousarray(keep)))


def mean_l1(a, b) -> Tensor:
    a, b = T.as_tensor(a), T.as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"mean_l1: {a.shape} vs {b.shape}")
    return T.mean(T.abs(T.sub(a, b)))


def reconstruction_loss(out, target, out_best_visible, masked_target) -> Tensor:
    """``mean|out - target| + mean|out_best_visible - masked_target|``."""
    return T.add(mean_l1(out, target), mean_l1(out_best_visible, masked_target))


def _scores(disc: Disc, images: Sequence) -> list[Tensor]:
    images = [T.as_tensor(x) for x in images]
    n = images[0].shape[0]
    for x in images[1:]:
        if x.shape != images[0].shape:
            raise ShapeError(f"discriminator inputs differ in shape: {x.shape} vs {images[0].shape}")
    s = disc(T.concat(images, axis=0))
    return [T.slice_axis(s, i * n, (i + 1) * n, axis=0) for i in range(len(images))]


def adversarial_gen_loss(disc: Disc, out, out_best, target) -> Tensor:
    """LSGAN generator side: ``mean(D(out) - 1)^2 + mean(D(out_best) - D(target))^2``.

    Pass a discriminator whose parameters do not require gradients.
    """
    s_out, s_best, s_real = _scores(disc, [out, out_best, target])
    return T.add(T.mean(T.square(T.sub(s_out, 1.0))), T.mean(T.square(T.sub(s_best, s_real))))


def discriminator_loss(disc: Disc, real, fakes: Sequence) -> Tensor:
    """``mean(D(real) - 1)^2 + 0.5 * sum over fakes of mean D(fake)^2``; fakes are detached here."""
    fakes = [Tensor(T.as_tensor(f).data) for f in fakes]
    scores = _scores(disc, [real, *fakes])
    total = T.mean(T.square(T.sub(scores[0], 1.0)))
    for s in scores[1:]:
        total = T.add(total, T.mul(T.mean(T.square(s)), 0.5))
    return total


def kl_to_standard_normal(q: DiagGaussian) -> Tensor:
    mean = T.as_tensor(q.mean)
    zeros = Tensor(np.zeros(mean.shape))
    return kl_diag_gaussian(q, DiagGaussian(zeros, zeros))


def elbo_loss(q_zm: DiagGaussian, recon_visible, masked_target, kl_weight: float = 1.0) -> Tensor:
    """Negative ELBO: ``mean|recon_visible - masked_target| + kl_weight * KL(q || N(0, I))``.

    The KL is summed over latent dimensions and averaged over the batch.
    """
    rec = mean_l1(recon_visible, masked_target)
    kl = T.mean(kl_to_standard_normal(q_zm))
    return T.add(rec, T.mul(kl, kl_weight))


@dataclass(frozen=True)
class LossReport:
    l_r: float
    l_a: float
    l_c: float
    l_elbo: float
    l_gmm: float
    l_f: float
    l_bm: float
    l_final: float
    l_disc: float
    best_index: list[int]
    dominance: float

    def to_json(self, **extra) -> str:
        return json.dumps({**extra, **asdict(self)})

    def non_finite_term(self) -> str | None:
        for name in ("l_r", "l_a", "l_c", "l_elbo", "l_gmm", "l_f", "l_bm", "l_final", "l_disc"):
            if not np.isfinite(getattr(self, name)):
                return name
        return None


@dataclass
class GeneratorLosses:
    """Differentiable pieces of the generator objective for one batch."""

    l_r: Tensor
    l_a: Tensor
    l_c: Tensor
    l_elbo: Tensor
    l_gmm: Tensor
    l_f: Tensor
    l_bm: Tensor
    l_final: Tensor


def final_loss(l_r, l_a, l_elbo, l_gmm, l_f, l_bm, lambda_a: float) -> GeneratorLosses:
    """``l_c = l_r + lambda_a * l_a`` and ``l_final = l_gmm + l_elbo + l_c``."""
    l_r, l_a = T.as_tensor(l_r), T.as_tensor(l_a)
    l_c = T.add(l_r, T.mul(l_a, lambda_a))
    total = T.add(T.add(T.as_tensor(l_gmm), T.as_tensor(l_elbo)), l_c)
    return GeneratorLosses(l_r, l_a, l_c, T.as_tensor(l_elbo), T.as_tensor(l_gmm), T.as_tensor(l_f), T.as_tensor(l_bm), total)


def make_report(g: GeneratorLosses, l_disc: float, best_index, dominance: float) -> LossReport:
    return LossReport(
        l_r=g.l_r.item(),
        l_a=g.l_a.item(),
        l_c=g.l_c.item(),
        l_elbo=g.l_elbo.item(),
        l_gmm=g.l_gmm.item(),
        l_f=g.l_f.item(),
        l_bm=g.l_bm.item(),
        l_final=g.l_final.item(),
        l_disc=float(l_disc),
        best_index=[int(j) for j in np.atleast_1d(best_index)],
        dominance=float(dominance),
    )
