"""Training loop, Adam and checkpoint files.

Parameters and Adam moments are kept on the float32 grid (math is float64,
results are rounded after every update). Checkpoints store float32, so a run
resumed from a checkpoint continues bit-for-bit like an uninterrupted one.

Checkpoint layout (all integers little-endian)::

    8 bytes   magic  b"GMMFCKPT"
    4 bytes   format version (uint32)
    8 bytes   header length (uint64)
    n bytes   JSON header: config, step, rng state, adam step, tensor table
    ...       float32 payloads, in tensor-table order
    8 bytes   blake2b-64 digest of everything above
"""

from __future__ import annotations

import hashlib
import json
import logging
import struct
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .config import TrainConfig, train_config_from_dict
from .data import Corpus
from .distributions import make_rng, reparameterize
from .losses import (
    LossReport,
    adversarial_gen_loss,
    discriminator_loss,
    elbo_loss,
    final_loss,
    make_report,
    reconstruction_loss,
    visible,
)
from .model import (
    ModelParams,
    decode,
    discriminate,
    encode_complement,
    encode_masked,
    gmm_head,
    init_params,
    param_shapes,
)
from .moe import BestPrimitive, best_primitive, dominance, gmm_loss, selected_component
from .tensor import ShapeError, Tape, Tensor

log = logging.getLogger(__name__)

MAGIC = b"GMMFCKPT"
VERSION = 1
BETA1, BETA2, EPS = 0.9, 0.999, 1e-8


class CheckpointError(Exception):
    pass


class BadMagicError(CheckpointError):
    pass


class BadVersionError(CheckpointError):
    pass


class DigestError(CheckpointError):
    pass


class NonFiniteLossError(ArithmeticError):
    def __init__(self, term: str, step: int):
        super().__init__(f"non-finite {term} at step {step}")
        self.term = term
        self.step = step


def to_f32_grid(x: np.ndarray) -> np.ndarray:
    return x.astype(np.float32).astype(np.float64)


# ---------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def zeros_like(cls, params: ModelParams) -> "AdamState":
        return cls(
            {n: np.zeros_like(p.data) for n, p in params.tensors.items()},
            {n: np.zeros_like(p.data) for n, p in params.tensors.items()},
        )


def adam_update(param: np.ndarray, grad: np.ndarray, m: np.ndarray, v: np.ndarray, t: int, lr: float):
    """One bias-corrected Adam step at (1-based) step ``t``; returns ``(param, m, v)``."""
    if not (param.shape == grad.shape == m.shape == v.shape):
        raise ShapeError(f"adam_update: param {param.shape}, grad {grad.shape}, moments {m.shape}/{v.shape}")
    m = BETA1 * m + (1.0 - BETA1) * grad
    v = BETA2 * v + (1.0 - BETA2) * grad * grad
    m_hat = m / (1.0 - BETA1**t)
    v_hat = v / (1.0 - BETA2**t)
    return param - lr * m_hat / (np.sqrt(v_hat) + EPS), m, v


def adam_step(params: ModelParams, names: list[str], opt: AdamState, lr: float, t: int) -> None:
    for n in names:
        p = params.tensors[n]
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        new, m, v = adam_update(p.data, g, opt.m[n], opt.v[n], t, lr)
        p.data, opt.m[n], opt.v[n] = to_f32_grid(new), to_f32_grid(m), to_f32_grid(v)


# ---------------------------------------------------------------------------
# one step


def generator_forward(params: ModelParams, images: np.ndarray, masks: np.ndarray, cfg: TrainConfig, rng, head_input=None):
    """All generator losses for one batch; call inside a tape.

    ``head_input`` replaces the sampled z_m fed to the mixture head; gradient
    checks use it to hold that (non-differentiated) path fixed.
    Returns ``(losses, best, alpha, fakes)``; ``fakes`` are the images the
    discriminator is trained against.
    """
    n = images.shape[0]
    masked = (1.0 - masks) * images
    complement = masks * images
    q_zm = encode_masked(params, masked, masks)
    q_zc = encode_complement(params, complement, masks)
    z_m = reparameterize(q_zm, rng.standard_normal((n, cfg.d)))
    # the mixture losses train the head but stop at its input; through z_m they
    # only scramble the masked encoder's context code
    mix = gmm_head(params, z_m.data if head_input is None else head_input)
    best = best_primitive(mix, q_zc)
    _, l_f, l_bm = gmm_loss(mix, best, q_zc, mix.alpha)
    l_gmm = T.add(l_f, T.mul(l_bm, cfg.kl_scale))
    z_c = reparameterize(q_zc, rng.standard_normal((n, cfg.d)))
    if cfg.decode_all_primitives:
        # every primitive is decoded; the visible and adversarial terms average over them
        picks = [BestPrimitive(np.full(n, i), best.kls) for i in range(cfg.k)]
    else:
        picks = [best]
    z_prim = [reparameterize(selected_component(mix, b), rng.standard_normal((n, cfg.d))) for b in picks]
    reps = len(picks)

    # one decoder pass for all latent pairings
    zeros = Tensor(np.zeros((n, cfg.d)))
    dec = decode(params, T.concat([z_m] * (reps + 2), axis=0), T.concat([z_c, *z_prim, zeros], axis=0))
    fake = T.slice_axis(dec, 0, n, axis=0)
    fake_prim = T.slice_axis(dec, n, (reps + 1) * n, axis=0)
    recon_m = T.slice_axis(dec, (reps + 1) * n, (reps + 2) * n, axis=0)

    frozen = params.frozen("disc")
    tile = lambda a: np.concatenate([a] * reps, axis=0)
    l_r = reconstruction_loss(fake, images, visible(fake_prim, tile(masks)), tile(masked))
    fake_rep = fake if reps == 1 else T.concat([fake] * reps, axis=0)
    l_a = adversarial_gen_loss(lambda x: discriminate(frozen, x), fake_rep, fake_prim, tile(images))
    l_elbo = elbo_loss(q_zm, visible(recon_m, masks), masked, cfg.elbo_kl_weight * cfg.kl_scale)
    losses = final_loss(l_r, l_a, l_elbo, l_gmm, l_f, l_bm, cfg.lambda_a)
    fakes = [fake] + [T.slice_axis(fake_prim, i * n, (i + 1) * n, axis=0) for i in range(reps)]
    return losses, best, mix.alpha, fakes


def train_step(
    params: ModelParams, opt: AdamState, images: np.ndarray, masks: np.ndarray, cfg: TrainConfig, rng, step: int = 0
) -> LossReport:
    gen_names = [n for n in params.tensors if not n.startswith("disc.")]
    disc_names = [n for n in params.tensors if n.startswith("disc.")]
    params.zero_grad()

    with Tape() as tape:
        g, best, alpha, fakes = generator_forward(params, images, masks, cfg, rng)
    for name in ("l_r", "l_a", "l_elbo", "l_gmm", "l_final"):
        if not np.isfinite(getattr(g, name).item()):
            raise NonFiniteLossError(name, step)
    tape.backward(g.l_final)
    assert all(params[n].grad is None for n in disc_names), "generator loss reached the discriminator"

    with Tape() as dtape:
        l_disc = discriminator_loss(lambda x: discriminate(params, x), images, fakes)
    if not np.isfinite(l_disc.item()):
        raise NonFiniteLossError("l_disc", step)
    gen_grads = {n: params[n].grad for n in gen_names}
    dtape.backward(l_disc)
    assert all(params[n].grad is gen_grads[n] for n in gen_names), "discriminator loss reached the generator"

    opt.t += 1
    adam_step(params, gen_names, opt, cfg.learning_rate, opt.t)
    adam_step(params, disc_names, opt, cfg.learning_rate, opt.t)
    params.zero_grad()
    # a blown-up update would only surface as an opaque error on the next forward pass
    bad = [n for n, t in params.tensors.items() if not np.all(np.isfinite(t.data))]
    if bad:
        raise NonFiniteLossError(f"update of {bad[0]}", step)
    return make_report(g, l_disc.item(), best.index, float(np.mean(dominance(alpha.data))))


# ---------------------------------------------------------------------------
# checkpoints


@dataclass
class Checkpoint:
    config: TrainConfig
    params: ModelParams
    opt: AdamState
    step: int
    rng_state: dict = field(default_factory=dict)


def _tensor_table(ck: Checkpoint):
    for n, p in ck.params.tensors.items():
        yield "param", n, p.data
    for n, a in ck.opt.m.items():
        yield "adam_m", n, a
    for n, a in ck.opt.v.items():
        yield "adam_v", n, a


def save_checkpoint(path: str | Path, ck: Checkpoint) -> None:
    table, payload, offset = [], [], 0
    for group, name, arr in _tensor_table(ck):
        raw = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        table.append({"group": group, "name": name, "shape": list(arr.shape), "offset": offset})
        payload.append(raw)
        offset += len(raw)
    header = {
        "config": asdict(ck.config),
        "step": ck.step,
        "adam_t": ck.opt.t,
        "rng_state": ck.rng_state,
        "tensors": table,
        "payload_bytes": offset,
    }
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    body = MAGIC + struct.pack("<IQ", VERSION, len(hbytes)) + hbytes + b"".join(payload)
    digest = hashlib.blake2b(body, digest_size=8).digest()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(body + digest)
    tmp.replace(path)


def load_checkpoint(path: str | Path, expect: TrainConfig | None = None) -> Checkpoint:
    """Read a checkpoint; with ``expect``, every tensor must have the shape that config implies."""
    buf = Path(path).read_bytes()
    if len(buf) < 28 or buf[:8] != MAGIC:
        raise BadMagicError(f"{path}: not a checkpoint (bad magic)")
    version, hlen = struct.unpack("<IQ", buf[8:20])
    if version != VERSION:
        raise BadVersionError(f"{path}: format version {version}, expected {VERSION}")
    body, digest = buf[:-8], buf[-8:]
    if hashlib.blake2b(body, digest_size=8).digest() != digest:
        raise DigestError(f"{path}: digest mismatch, file is corrupt")
    header = json.loads(body[20 : 20 + hlen].decode("utf-8"))
    payload = body[20 + hlen :]
    cfg = train_config_from_dict(header["config"])
    shapes = param_shapes(expect if expect is not None else cfg)
    arrays: dict[str, dict[str, np.ndarray]] = {"param": {}, "adam_m": {}, "adam_v": {}}
    for e in header["tensors"]:
        shape = tuple(e["shape"])
        want = shapes.get(e["name"])
        if want is None:
            raise ShapeError(f"unexpected tensor {e['name']!r} in checkpoint")
        if shape != want:
            raise ShapeError(f"tensor {e['name']!r}: checkpoint shape {shape}, config expects {want}")
        count = int(np.prod(shape))
        a = np.frombuffer(payload, dtype="<f4", count=count, offset=e["offset"]).astype(np.float64)
        arrays[e["group"]][e["name"]] = a.reshape(shape)
    missing = sorted(set(shapes) - set(arrays["param"]))
    if missing:
        raise ShapeError(f"checkpoint lacks tensors: {', '.join(missing)}")
    params = ModelParams(
        cfg, {n: Tensor(arrays["param"][n], requires_grad=True, name=n) for n in shapes}
    )
    opt = AdamState(
        {n: arrays["adam_m"].get(n, np.zeros(shapes[n])) for n in shapes},
        {n: arrays["adam_v"].get(n, np.zeros(shapes[n])) for n in shapes},
        int(header["adam_t"]),
    )
    return Checkpoint(cfg, params, opt, int(header["step"]), header["rng_state"])


# ---------------------------------------------------------------------------
# orchestration


def batch_indices(cfg: TrainConfig, n_train: int, step: int) -> np.ndarray:
    """Indices for ``step``: epochs are seeded permutations, trailing partial batches dropped."""
    if n_train < 1:
        raise ValueError("empty training split")
    per_epoch = max(1, n_train // cfg.batch)
    epoch, pos = divmod(step, per_epoch)
    perm = make_rng([cfg.seed, 1, epoch]).permutation(n_train)
    if n_train < cfg.batch:
        return perm
    return perm[pos * cfg.batch : (pos + 1) * cfg.batch]


def new_checkpoint(cfg: TrainConfig) -> Checkpoint:
    params = init_params(cfg, make_rng([cfg.seed, 0]))
    rng = make_rng([cfg.seed, 2])
    return Checkpoint(cfg, params, AdamState.zeros_like(params), 0, rng.bit_generator.state)


def run_training(
    cfg: TrainConfig,
    corpus: Corpus,
    checkpoint_path: str | Path,
    log_path: str | Path | None = None,
    resume: Checkpoint | None = None,
    stop_at: int | None = None,
) -> Checkpoint:
    """Train to ``cfg.steps`` (or ``stop_at``), logging and checkpointing on the configured cadence."""
    spec = corpus.spec
    if (spec.channels, spec.height, spec.width) != (cfg.channels, cfg.height, cfg.width):
        raise ShapeError(
            f"corpus images {(spec.channels, spec.height, spec.width)} do not match config "
            f"{(cfg.channels, cfg.height, cfg.width)}"
        )
    ck = resume if resume is not None else new_checkpoint(cfg)
    rng = np.random.Generator(np.random.PCG64())
    rng.bit_generator.state = ck.rng_state
    train_idx = corpus.indices("train")
    end = cfg.steps if stop_at is None else min(stop_at, cfg.steps)
    logf = None
    if log_path is not None:
        Path(log_path).parent.mkdir(parents=True, exist_ok=True)
        logf = open(log_path, "a" if resume is not None else "w")
    t0 = time.perf_counter()
    try:
        while ck.step < end:
            idx = train_idx[batch_indices(cfg, len(train_idx), ck.step)]
            report = train_step(ck.params, ck.opt, corpus.images[idx], corpus.masks[idx], cfg, rng, ck.step)
            ck.step += 1
            if logf is not None and (ck.step % cfg.log_every == 0 or ck.step == end):
                logf.write(report.to_json(step=ck.step, wall=round(time.perf_counter() - t0, 3)) + "\n")
                logf.flush()
            if cfg.checkpoint_every and ck.step % cfg.checkpoint_every == 0 and ck.step < end:
                ck.rng_state = rng.bit_generator.state
                save_checkpoint(checkpoint_path, ck)
    finally:
        if logf is not None:
            logf.close()
    ck.rng_state = rng.bit_generator.state
    save_checkpoint(checkpoint_path, ck)
    return ck
