"""Sampling completions from a trained model.

The masked-image latent is the posterior mean; each output draws a primitive
and a latent from it, decodes, and pastes the visible input pixels back on
top, so the visible region of every output equals the input exactly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import write_image
from .distributions import Categorical, sample_categorical
from .model import ModelParams, decode, encode_masked, gmm_head
from .tensor import ShapeError, Tensor


@dataclass
class CompletionSet:
    masked_input: np.ndarray  # (C, H, W)
    mask: np.ndarray  # (1, H, W)
    primitives: list[int]
    latents: np.ndarray  # (n, d)
    outputs: np.ndarray  # (n, C, H, W), composited
    alpha: np.ndarray  # (k,)

    @property
    def dominance(self) -> float:
        return float(self.alpha.max())

    def __len__(self) -> int:
        return len(self.primitives)


def composite(masked_input: np.ndarray, mask: np.ndarray, raw: np.ndarray) -> np.ndarray:
    return (1.0 - mask) * masked_input + mask * raw


def _prepare(params: ModelParams, masked_input, mask):
    cfg = params.config
    x = np.asarray(masked_input, dtype=np.float64)
    m = np.asarray(mask, dtype=np.float64)
    if x.shape != (cfg.channels, cfg.height, cfg.width) or m.shape != (1, cfg.height, cfg.width):
        raise ShapeError(
            f"input {x.shape} / mask {m.shape} do not match the model's "
            f"{(cfg.channels, cfg.height, cfg.width)}"
        )
    # hidden pixels never reach the encoder
    x = (1.0 - m) * x
    q = encode_masked(params, x[None], m[None])
    z_m = q.mean.data
    mix = gmm_head(params, z_m)
    return x, m, z_m, mix


def _finish(params, x, m, z_m, mix, primitives: list[int], noise: np.ndarray) -> CompletionSet:
    alpha = mix.alpha.data[0]
    k, d = params.config.k, params.config.d
    n = len(primitives)
    if n == 0:
        empty = np.zeros((0, *x.shape))
        return CompletionSet(x, m, [], np.zeros((0, d)), empty, alpha)
    idx = np.asarray(primitives)
    means, log_vars = mix.means.data[0][idx], mix.log_vars.data[0][idx]
    z = means + np.exp(0.5 * log_vars) * noise
    raw = decode(params, Tensor(np.repeat(z_m, n, axis=0)), Tensor(z)).data
    return CompletionSet(x, m, [int(i) for i in idx], z, composite(x, m, raw), alpha)


def complete(params: ModelParams, masked_input, mask, n_samples: int, rng: np.random.Generator) -> CompletionSet:
    """``n_samples`` completions, each from a primitive drawn from the mixing weights."""
    x, m, z_m, mix = _prepare(params, masked_input, mask)
    weights = Categorical(mix.alpha.data[0] / mix.alpha.data[0].sum())
    primitives, noise = [], []
    for _ in range(n_samples):
        primitives.append(sample_categorical(weights, rng))
        noise.append(rng.standard_normal(params.config.d))
    return _finish(params, x, m, z_m, mix, primitives, np.array(noise).reshape(n_samples, params.config.d))


def complete_per_primitive(
    params: ModelParams, masked_input, mask, per_primitive: int, rng: np.random.Generator
) -> CompletionSet:
    """``per_primitive`` completions from every primitive, in index order."""
    x, m, z_m, mix = _prepare(params, masked_input, mask)
    k, d = params.config.k, params.config.d
    primitives = [i for i in range(k) for _ in range(per_primitive)]
    noise = rng.standard_normal((len(primitives), d))
    return _finish(params, x, m, z_m, mix, primitives, noise)


def reconstruct(params: ModelParams, images: np.ndarray, masks: np.ndarray) -> np.ndarray:
    """Raw decoder output from both posterior means, for a batch of full images."""
    from .model import encode_complement

    masked = (1.0 - masks) * images
    q_m = encode_masked(params, masked, masks)
    q_c = encode_complement(params, masks * images, masks)
    return decode(params, Tensor(q_m.mean.data), Tensor(q_c.mean.data)).data


def output_name(stem: str, sample: int, primitive: int) -> str:
    return f"{stem}.s{sample:03d}.p{primitive}.pgm"


def write_completion_set(cs: CompletionSet, out_dir: str | Path, stem: str, seed: int | None = None) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for s, (p, img) in enumerate(zip(cs.primitives, cs.outputs)):
        path = out_dir / output_name(stem, s, p)
        write_image(path, img)
        paths.append(path)
    sidecar = {
        "alpha": [float(a) for a in cs.alpha],
        "dominance": cs.dominance,
        "seed": seed,
        "outputs": [{"file": p.name, "primitive": i} for p, i in zip(paths, cs.primitives)],
    }
    (out_dir / f"{stem}.json").write_text(json.dumps(sidecar, indent=1) + "\n")
    return paths
