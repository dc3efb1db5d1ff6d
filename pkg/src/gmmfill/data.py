"""Synthetic multimodal completion corpus, masks and netpbm image I/O.

Every sample is a smooth context (gradient plus a border frame) with one of
``modes`` oriented sinusoidal gratings pasted into the missing region. The
context depends only on ``context_seed``, so all modes of one context share
their visible pixels bit-for-bit and the mode cannot be read off the input.

Masks are ``(1, H, W)`` float arrays with 1 marking *missing* pixels.
Pixel values are snapped to the 8-bit grid at generation time, so writing a
corpus to PGM and reading it back is lossless.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .config import ConfigError, CorpusSpec
from .distributions import Categorical, make_rng, sample_categorical

log = logging.getLogger(__name__)

GRATING_PERIOD = 8.0
GRATING_AMPLITUDE = 0.15
FRAME_WIDTH = 2
RANDOM_MASK_TRIES = 1000
RANDOM_MASK_RANGE = (0.2, 0.5)
MANIFEST = "manifest.json"


class FormatError(ValueError):
    """Malformed netpbm file; ``offset`` is the byte position of the problem."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class ManifestError(ValueError):
    pass


# ---------------------------------------------------------------------------
# masks


@dataclass(frozen=True)
class Mask:
    grid: np.ndarray  # (1, H, W), 1 = missing
    kind: str
    params: dict = field(default_factory=dict)

    @property
    def fraction(self) -> float:
        return float(self.grid.mean())

    def to_json(self) -> dict:
        return {"kind": self.kind, **self.params}


def center_mask(h: int, w: int, fraction: float) -> Mask:
    """Centered square covering about ``fraction`` of the image, side rounded to even."""
    if not 0 < fraction <= 0.9:
        raise ConfigError(f"mask fraction {fraction} outside (0, 0.9]")
    side = 2 * int(round(np.sqrt(fraction * h * w) / 2))
    side = max(2, min(side, h - h % 2, w - w % 2))
    top, left = (h - side) // 2, (w - side) // 2
    grid = np.zeros((1, h, w))
    grid[0, top : top + side, left : left + side] = 1.0
    return Mask(grid, "center", {"fraction": fraction})


def _rect_grid(h: int, w: int, rects) -> np.ndarray:
    grid = np.zeros((1, h, w))
    for top, left, rh, rw in rects:
        grid[0, top : top + rh, left : left + rw] = 1.0
    return grid


def random_mask(h: int, w: int, rng: np.random.Generator) -> Mask:
    """Union of 1-4 random rectangles, resampled until 20-50% of pixels are missing."""
    lo, hi = RANDOM_MASK_RANGE
    for _ in range(RANDOM_MASK_TRIES):
        n = int(rng.integers(1, 5))
        rects = []
        for _ in range(n):
            rh = int(rng.integers(h // 4, 3 * h // 4 + 1))
            rw = int(rng.integers(w // 4, 3 * w // 4 + 1))
            rects.append((int(rng.integers(0, h - rh + 1)), int(rng.integers(0, w - rw + 1)), rh, rw))
        grid = _rect_grid(h, w, rects)
        if lo <= grid.mean() <= hi:
            return Mask(grid, "random", {"rects": [list(r) for r in rects]})
    log.warning("random_mask: no valid mask after %d tries, using a center mask", RANDOM_MASK_TRIES)
    return center_mask(h, w, 0.3)


def mask_from_json(h: int, w: int, doc: dict) -> Mask:
    kind = doc.get("kind")
    if kind == "center":
        return center_mask(h, w, float(doc["fraction"]))
    if kind == "random":
        rects = [tuple(int(v) for v in r) for r in doc["rects"]]
        return Mask(_rect_grid(h, w, rects), "random", {"rects": [list(r) for r in rects]})
    raise ManifestError(f"unknown mask kind {kind!r}")


# ---------------------------------------------------------------------------
# samples


@dataclass(frozen=True)
class ImageSample:
    image: np.ndarray  # I_o, (C, H, W)
    mask: Mask
    mode_label: int
    context_seed: int

    @property
    def masked(self) -> np.ndarray:
        return (1.0 - self.mask.grid) * self.image

    @property
    def complement(self) -> np.ndarray:
        return self.mask.grid * self.image


def split(sample: ImageSample) -> tuple[np.ndarray, np.ndarray]:
    """``(I_m, I_c)``; they sum back to the original exactly."""
    return sample.masked, sample.complement


def quantize(x: np.ndarray) -> np.ndarray:
    return np.round(np.clip(x, 0.0, 1.0) * 255.0) / 255.0


def render_context(context_seed: int, h: int, w: int, c: int) -> np.ndarray:
    rng = make_rng(context_seed)
    yy, xx = np.meshgrid(np.linspace(-0.5, 0.5, h), np.linspace(-0.5, 0.5, w), indexing="ij")
    out = np.empty((c, h, w))
    for ch in range(c):
        base, gx, gy = rng.uniform(0.3, 0.7), rng.uniform(-0.4, 0.4), rng.uniform(-0.4, 0.4)
        out[ch] = base + gx * xx + gy * yy
    frame = rng.uniform(0.0, 1.0, c)
    border = np.zeros((h, w), dtype=bool)
    border[:FRAME_WIDTH, :] = border[-FRAME_WIDTH:, :] = True
    border[:, :FRAME_WIDTH] = border[:, -FRAME_WIDTH:] = True
    out[:, border] = frame[:, None]
    return out


def render_texture(mode: int, modes: int, h: int, w: int, c: int) -> np.ndarray:
    """Grating number ``mode`` of ``modes``.

    Orientations are evenly spread over 180 degrees and mean levels over
    [0.2, 0.8], so each variant differs in both pattern and brightness.
    """
    theta = np.pi * mode / modes
    level = 0.2 + 0.6 * mode / (modes - 1)
    yy, xx = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    phase = 2.0 * np.pi * (xx * np.cos(theta) + yy * np.sin(theta)) / GRATING_PERIOD
    return np.broadcast_to(level + GRATING_AMPLITUDE * np.sin(phase), (c, h, w)).copy()


def compose(context: np.ndarray, texture: np.ndarray, mask: Mask) -> np.ndarray:
    return quantize((1.0 - mask.grid) * context + mask.grid * texture)


def mode_variants(spec: CorpusSpec, context_seed: int, mask: Mask) -> np.ndarray:
    """All ``modes`` ground-truth completions of one context, ``(modes, C, H, W)``."""
    ctx = render_context(context_seed, spec.height, spec.width, spec.channels)
    return np.stack(
        [
            compose(ctx, render_texture(m, spec.modes, spec.height, spec.width, spec.channels), mask)
            for m in range(spec.modes)
        ]
    )


def gen_sample(spec: CorpusSpec, index: int) -> ImageSample:
    if not 0 <= index < spec.n_train + spec.n_test:
        raise IndexError(f"sample {index} outside corpus of {spec.n_train + spec.n_test}")
    rng = make_rng([spec.seed, index])
    context_seed = int(rng.integers(2**31))
    mode = sample_categorical(Categorical(np.asarray(spec.mode_probs)), rng)
    if spec.mask_policy == "center":
        mask = center_mask(spec.height, spec.width, spec.mask_fraction)
    else:
        mask = random_mask(spec.height, spec.width, rng)
    ctx = render_context(context_seed, spec.height, spec.width, spec.channels)
    tex = render_texture(mode, spec.modes, spec.height, spec.width, spec.channels)
    return ImageSample(compose(ctx, tex, mask), mask, mode, context_seed)


# ---------------------------------------------------------------------------
# netpbm


def write_image(path: str | Path, image: np.ndarray) -> None:
    """8-bit binary PGM for ``(1, H, W)`` or ``(H, W)``, PPM for ``(3, H, W)``."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 2:
        img = img[None]
    if img.ndim != 3 or img.shape[0] not in (1, 3):
        raise ValueError(f"write_image: expected (1|3, H, W), got {img.shape}")
    c, h, w = img.shape
    payload = np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
    magic = b"P5" if c == 1 else b"P6"
    header = magic + f"\n{w} {h}\n255\n".encode("ascii")
    Path(path).write_bytes(header + payload.transpose(1, 2, 0).tobytes())


def _read_token(buf: bytes, pos: int) -> tuple[bytes, int]:
    n = len(buf)
    while pos < n:
        if buf[pos : pos + 1] == b"#":
            while pos < n and buf[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif buf[pos : pos + 1].isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < n and not buf[pos : pos + 1].isspace() and buf[pos : pos + 1] != b"#":
        pos += 1
    if start == pos:
        raise FormatError("truncated header", start)
    return buf[start:pos], pos


def decode_netpbm(buf: bytes) -> np.ndarray:
    magic = buf[:2]
    if magic not in (b"P5", b"P6"):
        raise FormatError(f"unsupported magic {magic!r}", 0)
    c = 1 if magic == b"P5" else 3
    pos = 2
    values = []
    for _ in range(3):
        start = pos
        tok, pos = _read_token(buf, pos)
        if not tok.isdigit():
            raise FormatError(f"expected an integer, got {tok!r}", start)
        values.append((int(tok), pos - len(tok)))
    (w, _), (h, _), (maxval, maxval_at) = values
    if maxval != 255:
        raise FormatError(f"maxval {maxval} unsupported, only 255", maxval_at)
    if w < 1 or h < 1:
        raise FormatError(f"bad size {w}x{h}", values[0][1])
    if pos >= len(buf) or not buf[pos : pos + 1].isspace():
        raise FormatError("missing whitespace after maxval", pos)
    pos += 1
    need = w * h * c
    if len(buf) - pos < need:
        raise FormatError(f"truncated payload: need {need} bytes, have {len(buf) - pos}", len(buf))
    data = np.frombuffer(buf, dtype=np.uint8, count=need, offset=pos)
    return data.reshape(h, w, c).transpose(2, 0, 1).astype(np.float64) / 255.0


def read_image(path: str | Path) -> np.ndarray:
    """Inverse of :func:`write_image`; returns ``(C, H, W)`` in [0, 1]."""
    return decode_netpbm(Path(path).read_bytes())


# ---------------------------------------------------------------------------
# corpus on disk


@dataclass
class Corpus:
    spec: CorpusSpec
    images: np.ndarray  # (N, C, H, W)
    masks: np.ndarray  # (N, 1, H, W)
    mode_labels: np.ndarray
    context_seeds: np.ndarray
    mask_docs: list[dict]
    files: list[str]

    def __len__(self) -> int:
        return self.images.shape[0]

    def indices(self, part: str) -> np.ndarray:
        n_train = self.spec.n_train
        if part == "train":
            return np.arange(n_train)
        if part == "test":
            return np.arange(n_train, len(self))
        raise ValueError(f"unknown split {part!r}")

    def sample(self, i: int) -> ImageSample:
        s = self.spec
        mask = mask_from_json(s.height, s.width, self.mask_docs[i])
        return ImageSample(self.images[i], mask, int(self.mode_labels[i]), int(self.context_seeds[i]))


def sample_name(index: int, n_train: int) -> str:
    part = "train" if index < n_train else "test"
    return f"{part}_{index:05d}.pgm"


def build_corpus(spec: CorpusSpec) -> Corpus:
    n = spec.n_train + spec.n_test
    samples = [gen_sample(spec, i) for i in range(n)]
    shape = (spec.channels, spec.height, spec.width)
    return Corpus(
        spec=spec,
        images=np.stack([s.image for s in samples]) if n else np.zeros((0, *shape)),
        masks=np.stack([s.mask.grid for s in samples]) if n else np.zeros((0, 1, *shape[1:])),
        mode_labels=np.array([s.mode_label for s in samples], dtype=np.int64),
        context_seeds=np.array([s.context_seed for s in samples], dtype=np.int64),
        mask_docs=[s.mask.to_json() for s in samples],
        files=[sample_name(i, spec.n_train) for i in range(n)],
    )


def write_corpus(spec: CorpusSpec, out: str | Path, force: bool = False) -> Corpus:
    out = Path(out)
    if out.exists() and any(out.iterdir()) and not force:
        raise FileExistsError(f"{out} is not empty (use --force to overwrite)")
    out.mkdir(parents=True, exist_ok=True)
    corpus = build_corpus(spec)
    entries = []
    for i, name in enumerate(corpus.files):
        write_image(out / name, corpus.images[i])
        entries.append(
            {
                "file": name,
                "mode_label": int(corpus.mode_labels[i]),
                "context_seed": int(corpus.context_seeds[i]),
                "mask": corpus.mask_docs[i],
            }
        )
    doc = {"spec": asdict(spec), "samples": entries}
    (out / MANIFEST).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
    return corpus


def load_corpus(root: str | Path) -> Corpus:
    from .config import corpus_spec_from_dict

    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"data directory {root} does not exist")
    try:
        doc = json.loads((root / MANIFEST).read_text())
        spec = corpus_spec_from_dict(doc["spec"])
        entries = doc["samples"]
    except FileNotFoundError as exc:
        raise ManifestError(f"{root / MANIFEST} is missing") from exc
    except (json.JSONDecodeError, KeyError, TypeError, ConfigError) as exc:
        raise ManifestError(f"corrupt manifest {root / MANIFEST}: {exc}") from exc
    if len(entries) != spec.n_train + spec.n_test:
        raise ManifestError(f"manifest lists {len(entries)} samples, spec says {spec.n_train + spec.n_test}")
    images, masks, docs, files = [], [], [], []
    shape = (spec.channels, spec.height, spec.width)
    try:
        for e in entries:
            img = read_image(root / e["file"])
            if img.shape != shape:
                raise ManifestError(f"{e['file']}: shape {img.shape}, expected {shape}")
            mask = mask_from_json(spec.height, spec.width, e["mask"])
            images.append(img)
            masks.append(mask.grid)
            docs.append(e["mask"])
            files.append(e["file"])
        labels = np.array([int(e["mode_label"]) for e in entries], dtype=np.int64)
        seeds = np.array([int(e["context_seed"]) for e in entries], dtype=np.int64)
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, (ManifestError, FormatError)):
            raise
        raise ManifestError(f"corrupt manifest entry: {exc}") from exc
    return Corpus(
        spec=spec,
        images=np.stack(images) if images else np.zeros((0, *shape)),
        masks=np.stack(masks) if masks else np.zeros((0, 1, *shape[1:])),
        mode_labels=labels,
        context_seeds=seeds,
        mask_docs=docs,
        files=files,
    )
