"""The networks: two encoders, the mixture head, the decoder and the discriminator.

All stacks are deliberately tiny. Images are batches ``(N, C, H, W)`` with
values in [0, 1]; masks are ``(N, 1, H, W)`` with 1 marking missing pixels.

Layer layout (defaults C=1, 32x32, d=16, k=4):

* encoders: concat(image, mask) -> conv3x3/2 (16) -> conv3x3/2 (32) ->
  global average pool -> dense heads for mean and log-variance
* mixture head: z_m -> dense (64) -> dense to k logits, k*d means, k*d log-variances
* decoder: concat(z_m, z) -> dense to 32 x H/4 x W/4 -> [upsample x2, conv3x3] x2 -> conv1x1 -> sigmoid
* discriminator: conv3x3/2 x3 (16, 32, 32) -> dense to one score

Leaky-ReLU slope 0.2 throughout; log-variances are clipped to [-10, 10].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .config import TrainConfig
from .distributions import DiagGaussian
from .tensor import Tensor

SLOPE = 0.2
LOGVAR_MIN, LOGVAR_MAX = -10.0, 10.0
# initial log-variances: the complement posterior and the primitives start sharp
LOGVAR_BIAS = {"enc_m": -2.0, "enc_c": -6.0, "head": -6.0}
# the primitives start almost on top of each other, so each can claim a mode as the modes separate
HEAD_OUT_GAIN = 0.01
HEAD_HIDDEN = 64
ENC_CHANNELS = (16, 32)
DEC_CHANNELS = (32, 8, 8)
DISC_CHANNELS = (16, 32, 32)

GENERATOR_GROUPS = ("enc_m", "enc_c", "head", "dec")


class InputError(ValueError):
    pass


def param_shapes(cfg: TrainConfig) -> dict[str, tuple[int, ...]]:
    """Name -> shape for every parameter, in a fixed order."""
    c, d, k = cfg.channels, cfg.d, cfg.k
    h4, w4 = cfg.height // 4, cfg.width // 4
    h8, w8 = cfg.height // 8, cfg.width // 8
    e1, e2 = ENC_CHANNELS
    g0, g1, g2 = DEC_CHANNELS
    q1, q2, q3 = DISC_CHANNELS
    shapes: dict[str, tuple[int, ...]] = {}
    for enc in ("enc_m", "enc_c"):
        shapes.update(
            {
                f"{enc}.conv1.w": (e1, c + 1, 3, 3),
                f"{enc}.conv1.b": (e1,),
                f"{enc}.conv2.w": (e2, e1, 3, 3),
                f"{enc}.conv2.b": (e2,),
                f"{enc}.mean.w": (d, e2),
                f"{enc}.mean.b": (d,),
                f"{enc}.logvar.w": (d, e2),
                f"{enc}.logvar.b": (d,),
            }
        )
    shapes.update(
        {
            "head.fc1.w": (HEAD_HIDDEN, d),
            "head.fc1.b": (HEAD_HIDDEN,),
            "head.logits.w": (k, HEAD_HIDDEN),
            "head.logits.b": (k,),
            "head.mean.w": (k * d, HEAD_HIDDEN),
            "head.mean.b": (k * d,),
            "head.logvar.w": (k * d, HEAD_HIDDEN),
            "head.logvar.b": (k * d,),
            "dec.fc.w": (g0 * h4 * w4, 2 * d),
            "dec.fc.b": (g0 * h4 * w4,),
            "dec.conv1.w": (g1, g0, 3, 3),
            "dec.conv1.b": (g1,),
            "dec.conv2.w": (g2, g1, 3, 3),
            "dec.conv2.b": (g2,),
            "dec.out.w": (c, g2, 1, 1),
            "dec.out.b": (c,),
            "disc.conv1.w": (q1, c, 3, 3),
            "disc.conv1.b": (q1,),
            "disc.conv2.w": (q2, q1, 3, 3),
            "disc.conv2.b": (q2,),
            "disc.conv3.w": (q3, q2, 3, 3),
            "disc.conv3.b": (q3,),
            "disc.fc.w": (1, q3 * h8 * w8),
            "disc.fc.b": (1,),
        }
    )
    return shapes


@dataclass
class ModelParams:
    config: TrainConfig
    tensors: dict[str, Tensor]

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def group(self, *prefixes: str) -> list[Tensor]:
        return [t for n, t in self.tensors.items() if n.split(".")[0] in prefixes]

    def generator(self) -> list[Tensor]:
        return self.group(*GENERATOR_GROUPS)

    def discriminator(self) -> list[Tensor]:
        return self.group("disc")

    def frozen(self, *prefixes: str) -> "ModelParams":
        """Copy whose tensors in ``prefixes`` do not require gradients."""
        out = dict(self.tensors)
        for n, t in self.tensors.items():
            if n.split(".")[0] in prefixes:
                out[n] = Tensor(t.data, name=n)
        return ModelParams(self.config, out)

    def zero_grad(self) -> None:
        for t in self.tensors.values():
            t.grad = None

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(t.data)) for t in self.tensors.values())


def init_params(cfg: TrainConfig, rng: np.random.Generator) -> ModelParams:
    """He-uniform weights and zero biases, except the log-variance biases
    (:data:`LOGVAR_BIAS`) and the primitive outputs (scaled by :data:`HEAD_OUT_GAIN`).
    All values are float32-representable.
    """
    tensors = {}
    for name, shape in param_shapes(cfg).items():
        prefix = name.split(".")[0]
        if name.endswith(".b"):
            value = np.full(shape, LOGVAR_BIAS[prefix] if ".logvar." in name else 0.0)
        else:
            fan_in = int(np.prod(shape[1:]))
            bound = np.sqrt(6.0 / fan_in)
            if name in ("head.mean.w", "head.logvar.w"):
                bound *= HEAD_OUT_GAIN
            value = rng.uniform(-bound, bound, shape)
        # start on the float32 grid so checkpoints are exact
        value = value.astype(np.float32).astype(np.float64)
        tensors[name] = Tensor(value, requires_grad=True, name=name)
    return ModelParams(cfg, tensors)


# ---------------------------------------------------------------------------
# forward passes


def _check_inputs(image: np.ndarray, mask: np.ndarray) -> None:
    if not np.all(np.isfinite(image)):
        raise InputError("image contains NaN or Inf")
    if not np.all((mask == 0) | (mask == 1)):
        raise InputError("mask must be binary")
    if image.ndim != 4 or mask.ndim != 4 or mask.shape[1] != 1 or image.shape[2:] != mask.shape[2:]:
        raise InputError(f"image {image.shape} / mask {mask.shape} must be (N, C, H, W) / (N, 1, H, W)")


def _encode(params: ModelParams, prefix: str, image, mask) -> DiagGaussian:
    img = T.as_tensor(image)
    msk = T.as_tensor(mask)
    _check_inputs(img.data, msk.data)
    x = T.concat([img, msk], axis=1)
    x = T.leaky_relu(T.conv2d(x, params[f"{prefix}.conv1.w"], params[f"{prefix}.conv1.b"], 2, 1), SLOPE)
    x = T.leaky_relu(T.conv2d(x, params[f"{prefix}.conv2.w"], params[f"{prefix}.conv2.b"], 2, 1), SLOPE)
    h = T.global_avg_pool(x)
    mean = T.linear(h, params[f"{prefix}.mean.w"], params[f"{prefix}.mean.b"])
    log_var = T.clip(
        T.linear(h, params[f"{prefix}.logvar.w"], params[f"{prefix}.logvar.b"]), LOGVAR_MIN, LOGVAR_MAX
    )
    return DiagGaussian(mean, log_var)


def encode_masked(params: ModelParams, masked_image, mask) -> DiagGaussian:
    """Posterior over z_m from the visible pixels. ``mask`` marks missing pixels."""
    return _encode(params, "enc_m", masked_image, mask)


def encode_complement(params: ModelParams, complement_image, mask) -> DiagGaussian:
    """Posterior over z_c from the missing pixels; the mask channel is ``1 - mask``."""
    m = mask.data if isinstance(mask, Tensor) else np.asarray(mask, dtype=np.float64)
    return _encode(params, "enc_c", complement_image, 1.0 - m)


@dataclass
class MixtureOutput:
    """Per-example Gaussian mixtures: alpha (N, k), means and log_vars (N, k, d)."""

    alpha: Tensor
    means: Tensor
    log_vars: Tensor

    @property
    def k(self) -> int:
        return self.alpha.shape[-1]

    def mixture(self, row: int):
        from .distributions import Categorical, GaussianMixture

        a = self.alpha.data[row]
        return GaussianMixture(Categorical(a / a.sum()), self.means.data[row].copy(), self.log_vars.data[row].copy())


def gmm_head(params: ModelParams, z_m) -> MixtureOutput:
    z = T.as_tensor(z_m)
    k, d = params.config.k, params.config.d
    n = z.shape[0]
    h = T.leaky_relu(T.linear(z, params["head.fc1.w"], params["head.fc1.b"]), SLOPE)
    alpha = T.softmax(T.linear(h, params["head.logits.w"], params["head.logits.b"]))
    means = T.reshape(T.linear(h, params["head.mean.w"], params["head.mean.b"]), (n, k, d))
    log_vars = T.clip(
        T.reshape(T.linear(h, params["head.logvar.w"], params["head.logvar.b"]), (n, k, d)),
        LOGVAR_MIN,
        LOGVAR_MAX,
    )
    return MixtureOutput(alpha, means, log_vars)


def decode(params: ModelParams, z_m, z) -> Tensor:
    cfg = params.config
    n = T.as_tensor(z_m).shape[0]
    g0 = DEC_CHANNELS[0]
    x = T.concat([T.as_tensor(z_m), T.as_tensor(z)], axis=1)
    x = T.leaky_relu(T.linear(x, params["dec.fc.w"], params["dec.fc.b"]), SLOPE)
    x = T.reshape(x, (n, g0, cfg.height // 4, cfg.width // 4))
    x = T.leaky_relu(T.conv2d(T.upsample2(x), params["dec.conv1.w"], params["dec.conv1.b"], 1, 1), SLOPE)
    x = T.leaky_relu(T.conv2d(T.upsample2(x), params["dec.conv2.w"], params["dec.conv2.b"], 1, 1), SLOPE)
    return T.sigmoid(T.conv2d(x, params["dec.out.w"], params["dec.out.b"], 1, 0))


def discriminate(params: ModelParams, image) -> Tensor:
    """One unbounded realness score per image, shape (N,)."""
    x = T.as_tensor(image)
    n = x.shape[0]
    for i in (1, 2, 3):
        x = T.leaky_relu(T.conv2d(x, params[f"disc.conv{i}.w"], params[f"disc.conv{i}.b"], 2, 1), SLOPE)
    x = T.reshape(x, (n, -1))
    return T.reshape(T.linear(x, params["disc.fc.w"], params["disc.fc.b"]), (n,))
