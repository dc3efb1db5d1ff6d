"""Standalone mathematical oracle suites.

Each suite returns a list of :class:`Check` results. They use only seeded
randomness, so a given seed always checks the same instances.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import tensor as T
from .config import TrainConfig
from .distributions import DiagGaussian, DiscretePgm, kl_diag_gaussian, kl_monte_carlo, make_rng, verify_decomposition
from .gradcheck import check_directional, check_gradients
from .losses import (
    adversarial_gen_loss,
    discriminator_loss,
    elbo_loss,
    final_loss,
    reconstruction_loss,
    visible,
)
from .model import discriminate, encode_masked, init_params
from .moe import BestPrimitive, best_primitive, bm_loss, frequency_loss, gmm_loss, simulate_frequency_fixed_point
from .tensor import Tensor

GRAD_TOL = 1e-4


@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.name}: {self.detail} ({self.seconds:.1f}s)"


def _timed(name: str, fn: Callable[[], tuple[bool, str]]) -> Check:
    t0 = time.perf_counter()
    ok, detail = fn()
    return Check(name, bool(ok), detail, time.perf_counter() - t0)


def _random_gauss(rng, d):
    return DiagGaussian(rng.normal(0, 1.5, d), rng.uniform(-1.5, 1.5, d))


# ---------------------------------------------------------------------------
# kl


def kl_suite(seed: int = 0, pairs: int = 100, n_mc: int = 200_000, kl_fn=kl_diag_gaussian) -> list[Check]:
    rng = make_rng([seed, 101])
    instances = []
    for _ in range(pairs):
        d = int(rng.integers(1, 9))
        instances.append((_random_gauss(rng, d), _random_gauss(rng, d)))

    def vs_mc():
        worst = 0.0
        for p, q in instances:
            est, se = kl_monte_carlo(p, q, n_mc, rng)
            worst = max(worst, abs(kl_fn(p, q) - est) / se)
        return worst <= 5.0, f"max |closed - MC| = {worst:.2f} standard errors over {pairs} pairs (limit 5)"

    def self_zero():
        worst = max(abs(kl_fn(p, p)) for p, _ in instances)
        return worst <= 1e-12, f"max |KL(p||p)| = {worst:.1e} (limit 1e-12)"

    def nonneg():
        low = min(min(kl_fn(p, q), kl_fn(q, p)) for p, q in instances)
        return low >= 0.0, f"min KL = {low:.3e}"

    return [
        _timed("kl: closed form vs Monte Carlo", vs_mc),
        _timed("kl: self-divergence is zero", self_zero),
        _timed("kl: non-negative", nonneg),
    ]


# ---------------------------------------------------------------------------
# decomposition


def decomposition_suite(seed: int = 0, models: int = 50) -> list[Check]:
    def run():
        rng = make_rng([seed, 102])
        worst = 0.0
        for _ in range(models):
            lhs, rhs = verify_decomposition(DiscretePgm.random(rng))
            worst = max(worst, abs(lhs - rhs))
        return worst <= 1e-10, f"max |lhs - (a+b+c)| = {worst:.2e} over {models} models (limit 1e-10)"

    return [_timed("decomposition: three-term identity", run)]


# ---------------------------------------------------------------------------
# frequency


def frequency_suite(seed: int = 0, steps: int = 10_000) -> list[Check]:
    out = []
    for p in ([0.7, 0.3], [0.25, 0.25, 0.25, 0.25]):

        def run(p=p):
            alpha = simulate_frequency_fixed_point(p, steps=steps, lr=0.05, batch=16, rng=make_rng([seed, 103, len(p)]))
            gap = float(np.max(np.abs(alpha - np.asarray(p))))
            return gap <= 0.02, f"alpha={np.round(alpha, 4).tolist()} max gap {gap:.4f} (limit 0.02)"

        out.append(_timed(f"frequency: fixed point at p={p}", run))
    return out


# ---------------------------------------------------------------------------
# gradients


def _tiny_config() -> TrainConfig:
    return TrainConfig(k=3, d=4, batch=2, height=8, width=8, channels=1)


def _param(rng, *shape, scale=1.0):
    return Tensor(rng.normal(0, scale, shape), requires_grad=True)


def _loss_cases(rng) -> dict[str, tuple[Callable[[], Tensor], list[Tensor]]]:
    """One fresh random instance of every loss, as ``name -> (loss_fn, params)``."""
    cases = {}
    n, img = 2, (2, 1, 4, 4)
    mask = (rng.random((n, 1, 4, 4)) < 0.4).astype(float)

    k, d = int(rng.integers(2, 5)), int(rng.integers(1, 5))
    logits = _param(rng, k)
    idx = np.array(int(rng.integers(k)))
    cases["frequency"] = (lambda: frequency_loss(T.softmax(logits), BestPrimitive(idx, np.zeros(k))), [logits])

    means, lvs = _param(rng, n, k, d), _param(rng, n, k, d, scale=0.5)
    tm, tl = _param(rng, n, d), _param(rng, n, d, scale=0.5)
    mix = type("Mix", (), {"means": means, "log_vars": lvs})
    best = best_primitive(mix, DiagGaussian(tm, tl))
    cases["back-propagate-max"] = (lambda: bm_loss(mix, best, DiagGaussian(tm, tl)), [means, lvs, tm, tl])
    blog = _param(rng, n, k)
    cases["mixture"] = (
        lambda: gmm_loss(mix, best, DiagGaussian(tm, tl), T.softmax(blog))[0],
        [blog, means, lvs, tm, tl],
    )
    pm, pl, qm, ql = _param(rng, d), _param(rng, d, scale=0.5), _param(rng, d), _param(rng, d, scale=0.5)
    cases["kl"] = (lambda: kl_diag_gaussian(DiagGaussian(pm, pl), DiagGaussian(qm, ql)), [pm, pl, qm, ql])

    out, target = Tensor(rng.random(img), requires_grad=True), rng.random(img)
    best_out = Tensor(rng.random(img), requires_grad=True)
    masked = (1 - mask) * target
    cases["reconstruction"] = (
        lambda: reconstruction_loss(out, target, visible(best_out, mask), masked),
        [out, best_out],
    )

    dw = _param(rng, 1, 16, scale=0.3)

    def disc(x, w=dw):
        return T.reshape(T.linear(T.reshape(x, (x.shape[0], 16)), w), (x.shape[0],))

    frozen_w = Tensor(dw.data)
    cases["adversarial (generator)"] = (
        lambda: adversarial_gen_loss(lambda x: disc(x, frozen_w), out, best_out, target),
        [out, best_out],
    )
    cases["discriminator"] = (lambda: discriminator_loss(disc, target, [out.data, best_out.data]), [dw])

    qm2, ql2 = _param(rng, n, d), _param(rng, n, d, scale=0.5)
    recon = Tensor(rng.random(img), requires_grad=True)
    kw = float(rng.uniform(0.01, 1.0))
    cases["elbo"] = (lambda: elbo_loss(DiagGaussian(qm2, ql2), visible(recon, mask), masked, kw), [qm2, ql2, recon])

    la, lr_, lg, le = _param(rng, 1), _param(rng, 1), _param(rng, 1), _param(rng, 1)
    cases["final (sum)"] = (lambda: final_loss(lr_, la, le, lg, lg, lg, 0.05).l_final, [la, lr_, lg, le])
    return cases


def _model_case(rng, seed: int):
    """Generator and discriminator objectives of a tiny model.

    The mixture losses see z_m as a constant, so the masked encoder is
    checked against the objective without them.
    """
    from .train import generator_forward

    cfg = _tiny_config()
    params = init_params(cfg, rng)
    images = rng.random((2, 1, 8, 8))
    masks = np.zeros((2, 1, 8, 8))
    masks[:, :, 2:6, 2:6] = 1.0
    gen = [t for n, t in params.tensors.items() if not n.startswith(("disc.", "enc_m."))]
    enc_m = params.group("enc_m")
    disc = params.discriminator()

    def gen_loss():
        return generator_forward(params, images, masks, cfg, make_rng([seed, 7]))[0].l_final

    z_m = encode_masked(params, (1 - masks) * images, masks)
    z_m = z_m.mean.data + np.exp(0.5 * z_m.log_var.data) * make_rng([seed, 7]).standard_normal(z_m.mean.shape)

    def enc_m_loss():
        g = generator_forward(params, images, masks, cfg, make_rng([seed, 7]), head_input=z_m)[0]
        return T.add(g.l_elbo, g.l_c)

    fakes = [rng.random((2, 1, 8, 8)), rng.random((2, 1, 8, 8))]

    def disc_loss():
        return discriminator_loss(lambda x: discriminate(params, x), images, fakes)

    return (gen_loss, gen), (enc_m_loss, enc_m), (disc_loss, disc)


def gradient_suite(seed: int = 0, points: int = 100, model_points: int = 20) -> list[Check]:
    rng = make_rng([seed, 104])
    worst: dict[str, float] = {}
    t0 = time.perf_counter()
    for _ in range(points):
        for name, (fn, params) in _loss_cases(rng).items():
            worst[name] = max(worst.get(name, 0.0), check_gradients(fn, params))
    elapsed = time.perf_counter() - t0
    checks = [
        Check(f"gradients: {name} loss", err <= GRAD_TOL, f"max rel err {err:.2e} over {points} points", elapsed / len(worst))
        for name, err in worst.items()
    ]
    t0 = time.perf_counter()
    names = ("full generator objective", "generator objective (masked encoder)", "full discriminator objective")
    errs = [0.0, 0.0, 0.0]
    for _ in range(model_points):
        for i, (fn, ps) in enumerate(_model_case(rng, seed)):
            errs[i] = max(errs[i], check_directional(fn, ps, rng, n_directions=2))
    elapsed = time.perf_counter() - t0
    for name, err in zip(names, errs):
        checks.append(Check(f"gradients: {name}", err <= GRAD_TOL, f"max rel err {err:.2e} (directional)", elapsed / 3))
    return checks


SUITES = {
    "kl": kl_suite,
    "decomposition": decomposition_suite,
    "frequency": frequency_suite,
    "gradients": gradient_suite,
}


def run_suites(names: list[str], seed: int = 0) -> list[Check]:
    out = []
    for name in names:
        out.extend(SUITES[name](seed=seed))
    return out
