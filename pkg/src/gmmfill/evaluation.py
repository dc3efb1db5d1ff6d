"""Test-split evaluation: reconstructions, sampled completions and the report."""

from __future__ import annotations

import numpy as np

from . import metrics as M
from .data import Corpus
from .distributions import make_rng
from .infer import complete, reconstruct
from .model import ModelParams


def evaluate(params: ModelParams, corpus: Corpus, n_samples: int, seed: int = 0, limit: int | None = None) -> M.EvalReport:
    """Score the test split. Input ``i`` draws its samples from stream ``(seed, i)``."""
    idx = corpus.indices("test")
    if limit is not None:
        idx = idx[:limit]
    psnrs, ssims, maes, matched, divs, covs, doms, alphas = [], [], [], [], [], [], [], []
    pinned = True
    for start in range(0, len(idx), 64):
        chunk = idx[start : start + 64]
        recon = reconstruct(params, corpus.images[chunk], corpus.masks[chunk])
        for r, i in zip(recon, chunk):
            psnrs.append(M.psnr(r, corpus.images[i]))
            ssims.append(M.ssim(r, corpus.images[i]))
            maes.append(M.mae(r, corpus.images[i]))
    for i in idx:
        sample = corpus.sample(int(i))
        cs = complete(params, sample.masked, sample.mask.grid, n_samples, make_rng([seed, int(i)]))
        keep = sample.mask.grid == 0
        for out in cs.outputs:
            pinned &= bool(np.array_equal(np.broadcast_to(keep, out.shape) * out, np.broadcast_to(keep, out.shape) * sample.masked))
        if n_samples >= 1:
            cov, _ = M.mode_coverage(cs.outputs, sample, corpus.spec)
            covs.append(cov)
            matched.append(M.mode_matched_mae(cs.outputs, sample, corpus.spec))
        if n_samples >= 2:
            divs.append(M.diversity(cs.outputs, sample.mask.grid))
        doms.append(cs.dominance)
        alphas.append(cs.alpha)
    mean_alpha = np.mean(alphas, axis=0) if alphas else np.zeros(params.config.k)
    return M.EvalReport(
        n_inputs=int(len(idx)),
        n_samples=int(n_samples),
        psnr=M.Stat.of(psnrs),
        ssim=M.Stat.of(ssims),
        mae=M.Stat.of(maes),
        mode_matched_mae=M.Stat.of(matched),
        diversity=M.Stat.of(divs),
        mode_coverage=M.Stat.of(covs),
        alpha_error=M.alpha_error(mean_alpha, corpus.spec.mode_probs),
        mean_alpha=[float(a) for a in mean_alpha],
        dominance=M.Stat.of(doms),
        dominance_histogram=M.dominance_histogram(doms),
        visible_pinned=pinned,
    )
