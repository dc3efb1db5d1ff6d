"""Command-line entry point: ``gmmfill <subcommand> ...``.

Exit codes: 0 on success, 1 on a runtime failure, 2 on a usage or config error.
"""

from __future__ import annotations

import argparse
import csv
import json
import secrets
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig, load_config
from .data import FormatError, ManifestError, Mask, center_mask, load_corpus, mask_from_json, random_mask, read_image, write_corpus
from .distributions import make_rng
from .tensor import NumericError, ShapeError
from .train import CheckpointError, NonFiniteLossError, load_checkpoint, run_training

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _seed(args) -> int:
    if args.seed is None:
        args.seed = secrets.randbits(32)
        print(f"seed: {args.seed}")
    return args.seed


def _corpus(path: str):
    if not Path(path).is_dir():
        raise UsageError(f"data directory not found: {path}")
    return load_corpus(path)


def _checkpoint(path: str):
    if not Path(path).is_file():
        raise UsageError(f"checkpoint not found: {path}")
    return load_checkpoint(path)


# ---------------------------------------------------------------------------
# subcommands


def cmd_config(args) -> int:
    cfg = load_config(args.config) if args.config else RunConfig()
    print(json.dumps(cfg.to_dict(), indent=1, sort_keys=True))
    return EXIT_OK


def cmd_gen_data(args) -> int:
    cfg = load_config(args.config)
    out = args.out or cfg.paths.data
    corpus = write_corpus(cfg.corpus, out, force=args.force)
    print(f"wrote {len(corpus)} samples to {out}")
    return EXIT_OK


TRAIN_FLAGS = {
    "steps": int,
    "learning_rate": float,
    "batch": int,
    "k": int,
    "d": int,
    "lambda_a": float,
    "log_every": int,
    "checkpoint_every": int,
}


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    overrides = {name: getattr(args, name) for name in TRAIN_FLAGS if getattr(args, name) is not None}
    overrides["seed"] = _seed(args)
    try:
        train_cfg = replace(cfg.train, **overrides)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    corpus = _corpus(args.data or cfg.paths.data)
    out = args.out or cfg.paths.checkpoint
    resume = None
    if args.resume:
        resume = load_checkpoint(out, expect=train_cfg)
    Path(out).parent.mkdir(parents=True, exist_ok=True)
    ck = run_training(train_cfg, corpus, out, args.log or cfg.paths.log, resume=resume)
    print(f"trained {ck.step} steps -> {out}")
    return EXIT_OK


def parse_mask(text: str, h: int, w: int):
    kind, _, arg = text.partition(":")
    try:
        if kind == "center":
            return center_mask(h, w, float(arg) if arg else 0.25)
        if kind == "random":
            return random_mask(h, w, make_rng(int(arg)))
        if kind == "file":
            path = Path(arg)
            if path.suffix == ".json":
                return mask_from_json(h, w, json.loads(path.read_text()))
            grid = read_image(path)
            return Mask((grid[:1] >= 0.5).astype(np.float64), "file", {"path": arg})
    except (ValueError, OSError) as exc:
        raise UsageError(f"bad --mask {text!r}: {exc}") from exc
    raise UsageError(f"bad --mask {text!r}: expected center:F, random:SEED or file:PATH")


def cmd_complete(args) -> int:
    from .infer import complete, complete_per_primitive, write_completion_set

    ck = _checkpoint(args.ckpt)
    cfg = ck.config
    image = read_image(args.image)
    mask = parse_mask(args.mask, cfg.height, cfg.width)
    rng = make_rng(_seed(args))
    masked = (1.0 - mask.grid) * image
    if args.per_primitive is not None:
        cs = complete_per_primitive(ck.params, masked, mask.grid, args.per_primitive, rng)
    else:
        cs = complete(ck.params, masked, mask.grid, args.n, rng)
    paths = write_completion_set(cs, args.out, Path(args.image).stem, seed=args.seed)
    print(f"wrote {len(paths)} completions to {args.out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .evaluation import evaluate

    ck = _checkpoint(args.ckpt)
    corpus = _corpus(args.data)
    report = evaluate(ck.params, corpus, args.n, seed=_seed(args), limit=args.limit)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(report.to_json())
    print(report.to_table(), end="")
    return EXIT_OK


def cmd_verify(args) -> int:
    from .verify import SUITES, run_suites

    names = list(SUITES) if args.suite == "all" else [args.suite]
    checks = run_suites(names, seed=args.seed if args.seed is not None else 0)
    for c in checks:
        print(c.line())
    failed = [c for c in checks if not c.passed]
    print(f"{len(checks) - len(failed)}/{len(checks)} checks passed")
    return EXIT_RUNTIME if failed else EXIT_OK


def cmd_dump_latents(args) -> int:
    from .infer import complete

    ck = _checkpoint(args.ckpt)
    corpus = _corpus(args.data)
    seed = _seed(args)
    d = ck.config.d
    idx = corpus.indices("test")
    if args.limit is not None:
        idx = idx[: args.limit]
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sample", "primitive", *(f"z{j}" for j in range(d))])
        for i in idx:
            s = corpus.sample(int(i))
            cs = complete(ck.params, s.masked, s.mask.grid, args.n, make_rng([seed, int(i)]))
            for p, z in zip(cs.primitives, cs.latents):
                writer.writerow([int(i), p, *(repr(float(v)) for v in z)])
    print(f"wrote {len(idx) * args.n} latents to {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="gmmfill", description="Pluralistic image completion with a Gaussian-mixture latent.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    c = sub.add_parser("config", help="print the effective run config")
    c.add_argument("--defaults", action="store_true", help="print built-in defaults")
    c.add_argument("--config")
    c.set_defaults(fn=cmd_config)

    g = sub.add_parser("gen-data", help="write the synthetic corpus")
    g.add_argument("--config")
    g.add_argument("--out")
    g.add_argument("--force", action="store_true", help="overwrite a non-empty directory")
    g.set_defaults(fn=cmd_gen_data)

    t = sub.add_parser("train", help="train a model")
    t.add_argument("--config")
    t.add_argument("--data")
    t.add_argument("--out", help="checkpoint path")
    t.add_argument("--log", help="JSON-lines loss log")
    t.add_argument("--seed", type=int)
    t.add_argument("--resume", action="store_true", help="continue from the checkpoint at --out")
    for name, typ in TRAIN_FLAGS.items():
        t.add_argument("--" + name.replace("_", "-"), dest=name, type=typ)
    t.set_defaults(fn=cmd_train)

    k = sub.add_parser("complete", help="sample completions for one image")
    k.add_argument("--ckpt", required=True)
    k.add_argument("--image", required=True)
    k.add_argument("--mask", default="center:0.25", help="center:F | random:SEED | file:PATH")
    k.add_argument("--n", type=int, default=6)
    k.add_argument("--per-primitive", type=int, dest="per_primitive")
    k.add_argument("--out", required=True)
    k.add_argument("--seed", type=int)
    k.set_defaults(fn=cmd_complete)

    e = sub.add_parser("eval", help="evaluate on the test split")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--n", type=int, default=32)
    e.add_argument("--out")
    e.add_argument("--seed", type=int)
    e.add_argument("--limit", type=int, help="only the first N test inputs")
    e.set_defaults(fn=cmd_eval)

    v = sub.add_parser("verify", help="run the mathematical oracle suites")
    v.add_argument("--suite", choices=["kl", "decomposition", "frequency", "gradients", "all"], default="all")
    v.add_argument("--seed", type=int)
    v.set_defaults(fn=cmd_verify)

    dl = sub.add_parser("dump-latents", help="export sampled latents as CSV")
    dl.add_argument("--ckpt", required=True)
    dl.add_argument("--data", required=True)
    dl.add_argument("--out", required=True)
    dl.add_argument("--n", type=int, default=8)
    dl.add_argument("--seed", type=int)
    dl.add_argument("--limit", type=int)
    dl.set_defaults(fn=cmd_dump_latents)
    return p


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if getattr(args, "n", 0) is not None and getattr(args, "n", 0) < 0:
            raise UsageError("--n must be >= 0")
        return args.fn(args)
    except (UsageError, ConfigError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NonFiniteLossError, NumericError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (CheckpointError, ManifestError, FormatError, ShapeError, FileExistsError, FileNotFoundError, OSError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
