"""Image quality, diversity and mode-recovery metrics.

Images are float arrays in [0, 1] with matching shapes, ``(C, H, W)`` or
``(H, W)``; masks are ``(1, H, W)`` with 1 marking the missing region.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from itertools import combinations

import numpy as np

from .config import CorpusSpec
from .data import ImageSample, mode_variants
from .tensor import ShapeError

PSNR_CAP = 100.0
SSIM_WINDOW = 8
SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2
COVERAGE_TAU = 0.15


def _pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def mae(a, b) -> float:
    a, b = _pair(a, b)
    return float(np.mean(np.abs(a - b)))


def psnr(a, b) -> float:
    """Peak signal-to-noise ratio on unit range, in dB, capped at 100."""
    a, b = _pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * np.log10(1.0 / mse))


def ssim(a, b) -> float:
    """Mean SSIM over all 8x8 windows (stride 1, uniform weights, population moments)."""
    a, b = _pair(a, b)
    if a.ndim == 2:
        a, b = a[None], b[None]
    if a.shape[-1] < SSIM_WINDOW or a.shape[-2] < SSIM_WINDOW:
        raise ShapeError(f"ssim: image {a.shape} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")
    win = (SSIM_WINDOW, SSIM_WINDOW)
    wa = np.lib.stride_tricks.sliding_window_view(a, win, axis=(-2, -1))
    wb = np.lib.stride_tricks.sliding_window_view(b, win, axis=(-2, -1))
    mu_a, mu_b = wa.mean(axis=(-2, -1)), wb.mean(axis=(-2, -1))
    var_a = (wa * wa).mean(axis=(-2, -1)) - mu_a**2
    var_b = (wb * wb).mean(axis=(-2, -1)) - mu_b**2
    cov = (wa * wb).mean(axis=(-2, -1)) - mu_a * mu_b
    num = (2 * mu_a * mu_b + SSIM_C1) * (2 * cov + SSIM_C2)
    den = (mu_a**2 + mu_b**2 + SSIM_C1) * (var_a + var_b + SSIM_C2)
    return float(np.mean(num / den))


def masked_l1(a, b, mask) -> float:
    """Mean absolute difference over the missing pixels (all channels)."""
    a, b = _pair(a, b)
    sel = np.broadcast_to(np.asarray(mask) == 1, a.shape)
    if not sel.any():
        return 0.0
    return float(np.abs(a - b)[sel].mean())


def diversity(outputs, mask) -> float:
    """Mean masked L1 over all unordered pairs of outputs."""
    outputs = list(outputs)
    if len(outputs) < 2:
        raise ValueError("diversity needs at least two outputs")
    return float(np.mean([masked_l1(x, y, mask) for x, y in combinations(outputs, 2)]))


def assign_modes(outputs, variants: np.ndarray, mask, tau: float = COVERAGE_TAU) -> list[int | None]:
    """Nearest ground-truth variant per output by masked L1, or None if all are farther than ``tau``."""
    assigned = []
    for out in outputs:
        d = [masked_l1(out, v, mask) for v in variants]
        j = int(np.argmin(d))
        assigned.append(j if d[j] <= tau else None)
    return assigned


def mode_coverage(outputs, sample: ImageSample, spec: CorpusSpec, tau: float = COVERAGE_TAU):
    """``(fraction of modes recovered, assigned mode per output)``."""
    variants = mode_variants(spec, sample.context_seed, sample.mask)
    assigned = assign_modes(outputs, variants, sample.mask.grid, tau)
    found = {a for a in assigned if a is not None}
    return len(found) / spec.modes, assigned


def mode_matched_mae(outputs, sample: ImageSample, spec: CorpusSpec) -> float:
    """Masked MAE against the ground truth, averaged over outputs whose nearest variant is the true mode.

    Falls back to the single closest output when none lands on the true mode.
    """
    variants = mode_variants(spec, sample.context_seed, sample.mask)
    grid = sample.mask.grid
    nearest = [int(np.argmin([masked_l1(o, v, grid) for v in variants])) for o in outputs]
    errs = np.array([masked_l1(o, sample.image, grid) for o in outputs])
    hits = [e for e, j in zip(errs, nearest) if j == sample.mode_label]
    return float(np.mean(hits)) if hits else float(errs.min())


def alpha_error(mean_alpha, mode_probs) -> float:
    """L-infinity gap between mean mixing weights and true mode probabilities.

    Primitive order is arbitrary, so both vectors are sorted (zero-padded to equal length).
    """
    a, p = np.sort(np.asarray(mean_alpha, float))[::-1], np.sort(np.asarray(mode_probs, float))[::-1]
    n = max(a.size, p.size)
    a, p = np.pad(a, (0, n - a.size)), np.pad(p, (0, n - p.size))
    return float(np.max(np.abs(a - p)))


# ---------------------------------------------------------------------------
# report


@dataclass(frozen=True)
class Stat:
    mean: float
    std: float

    @classmethod
    def of(cls, values) -> "Stat":
        v = np.asarray(values, dtype=np.float64)
        if v.size == 0:
            return cls(float("nan"), float("nan"))
        return cls(float(v.mean()), float(v.std()))


@dataclass(frozen=True)
class EvalReport:
    n_inputs: int
    n_samples: int
    psnr: Stat
    ssim: Stat
    mae: Stat
    mode_matched_mae: Stat
    diversity: Stat
    mode_coverage: Stat
    alpha_error: float
    mean_alpha: list[float]
    dominance: Stat
    dominance_histogram: list[int]
    visible_pinned: bool

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=1, sort_keys=True) + "\n"

    def to_table(self) -> str:
        rows = [
            ("inputs", f"{self.n_inputs}"),
            ("samples/input", f"{self.n_samples}"),
        ]
        for name in ("psnr", "ssim", "mae", "mode_matched_mae", "diversity", "mode_coverage", "dominance"):
            s = getattr(self, name)
            rows.append((name, f"{s.mean:.4f} +/- {s.std:.4f}"))
        rows.append(("alpha_error", f"{self.alpha_error:.4f}"))
        rows.append(("mean_alpha", " ".join(f"{a:.3f}" for a in self.mean_alpha)))
        rows.append(("dominance_hist", " ".join(str(c) for c in self.dominance_histogram)))
        rows.append(("visible_pinned", str(self.visible_pinned)))
        width = max(len(r[0]) for r in rows)
        return "\n".join(f"{k.ljust(width)}  {v}" for k, v in rows) + "\n"


def dominance_histogram(values, bins: int = 10) -> list[int]:
    counts, _ = np.histogram(np.asarray(values, float), bins=bins, range=(0.0, 1.0))
    return [int(c) for c in counts]
