"""Command-line front end: train / encode / eval / synth / topics.

Configuration is a flat key=value file with dotted sections (model.K=32,
adam.rho=1e-3); command-line flags override file values. Keys are checked
against a closed schema so a typo fails fast instead of training with a
default. All failures exit nonzero with a single "error: ..." line.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from bbsc import datasets, metrics, pursuit, trainer
from bbsc.backend import BACKEND


class ConfigError(ValueError):
    pass


def _parse_bool(raw: str) -> bool:
    lowered = raw.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got '{raw}'")


def _parse_hidden(raw: str) -> tuple[int, ...]:
    raw = raw.strip()
    if not raw:
        return ()
    return tuple(int(p) for p in raw.split(","))


# key -> parser; the closed schema for config files
SCHEMA = {
    "model.likelihood": str,
    "model.K": int,
    "model.hidden": _parse_hidden,
    "model.T": int,
    "gauss.sigma2": float,
    "gauss.c": float,
    "poisson.a": float,
    "poisson.b": float,
    "bp.alpha": float,
    "bp.gamma": float,
    "bp.t0": float,
    "bp.kappa": float,
    "adam.rho": float,
    "adam.beta1": float,
    "adam.beta2": float,
    "adam.eps": float,
    "train.batch_size": int,
    "train.epochs": int,
    "train.seed": int,
    "train.eval_every": int,
    "train.workers": int,
    "train.max_active": int,
    "train.early_stop": _parse_bool,
    "train.timing": _parse_bool,
    "train.heldout_prior": _parse_bool,
    "train.heldout_fraction": float,
    "data.path": str,
    "data.format": str,
    "data.labels": str,
    "data.vocab": str,
    "data.binarize": _parse_bool,
    "data.threshold": float,
    "data.scale_max": float,
    "data.scale_seed": int,
    "synth.n": int,
    "synth.d": int,
    "synth.w": int,
    "synth.doc_scale": float,
    "synth.hidden": _parse_hidden,
    "out.checkpoint": str,
    "out.metrics": str,
    "out.codes": str,
}


def load_config(path: str) -> dict:
    values: dict = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value")
            key, raw = (part.strip() for part in line.split("=", 1))
            if key not in SCHEMA:
                raise ConfigError(f"{path}:{lineno}: unknown config key '{key}'")
            try:
                values[key] = SCHEMA[key](raw)
            except ConfigError:
                raise
            except ValueError as exc:
                raise ConfigError(f"{path}:{lineno}: bad value for {key}: {exc}") from exc
    return values


def build_train_config(cfg: dict, args) -> trainer.TrainConfig:
    if args.seed is not None:
        cfg["train.seed"] = args.seed
    if args.workers is not None:
        cfg["train.workers"] = args.workers
    if "train.seed" not in cfg:
        raise ConfigError("a seed is mandatory: set train.seed or pass --seed")
    if "model.likelihood" not in cfg or "model.K" not in cfg:
        raise ConfigError("model.likelihood and model.K are required")
    out_dir = getattr(args, "out", None)
    ckpt = cfg.get("out.checkpoint", "")
    mets = cfg.get("out.metrics", "")
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        ckpt = os.path.join(out_dir, "checkpoint.bbpc")
        mets = os.path.join(out_dir, "metrics.csv")
    return trainer.TrainConfig(
        likelihood=cfg["model.likelihood"],
        k=cfg["model.K"],
        seed=cfg["train.seed"],
        hidden=cfg.get("model.hidden", (32,)),
        epochs=cfg.get("train.epochs", 10),
        batch_size=cfg.get("train.batch_size", 100),
        bp_alpha=cfg.get("bp.alpha", 1.0),
        bp_gamma=cfg.get("bp.gamma", 0.0),
        bp_t0=cfg.get("bp.t0", 1.0),
        bp_kappa=cfg.get("bp.kappa", 0.7),
        sigma2=cfg.get("gauss.sigma2", 0.1),
        c=cfg.get("gauss.c", 1.0),
        poiss_a=cfg.get("poisson.a", 1.0),
        poiss_b=cfg.get("poisson.b", 1.0),
        topics=cfg.get("model.T", 0),
        rho=cfg.get("adam.rho", 1e-3),
        adam_beta1=cfg.get("adam.beta1", 0.9),
        adam_beta2=cfg.get("adam.beta2", 0.999),
        adam_eps=cfg.get("adam.eps", 1e-8),
        eval_every=cfg.get("train.eval_every", 1),
        workers=cfg.get("train.workers", 1),
        max_active=cfg.get("train.max_active", 0),
        early_stop=cfg.get("train.early_stop", False),
        record_timing=cfg.get("train.timing", True),
        heldout_prior=cfg.get("train.heldout_prior", True),
        checkpoint_path=ckpt,
        metrics_path=mets,
    )


def _infer_format(path: str) -> str:
    base = path.lower()
    if base.endswith((".idx", "-ubyte", "-ubyte.gz", ".idx.gz")):
        return "idx"
    if base.endswith((".bow", ".counts")):
        return "bow"
    return "csv"


def load_dataset(path: str, fmt: str | None = None, labels: str | None = None,
                 vocab: str | None = None, cfg: dict | None = None):
    cfg = cfg or {}
    fmt = fmt or cfg.get("data.format") or _infer_format(path)
    if fmt == "idx":
        ds = datasets.read_idx(path, labels or cfg.get("data.labels") or None)
    elif fmt == "bow":
        return datasets.read_bow(path, vocab or cfg.get("data.vocab") or None)
    elif fmt == "csv":
        ds = datasets.load_dense_csv(path)
    else:
        raise ConfigError(f"unknown data format '{fmt}'")
    if cfg.get("data.scale_max", 0.0) > 0.0:
        seed = cfg.get("data.scale_seed", cfg.get("train.seed", 0))
        ds = datasets.scale_corrupt(ds, cfg["data.scale_max"], seed)
    if cfg.get("data.binarize", False):
        ds = datasets.binarize(ds, cfg.get("data.threshold", 0.5))
    return ds


def _split_heldout(X: np.ndarray, fraction: float, seed: int):
    if fraction <= 0.0:
        return X, None
    rng = np.random.default_rng(seed + 1)
    perm = rng.permutation(X.shape[0])
    n_held = max(1, int(round(fraction * X.shape[0])))
    return X[perm[n_held:]], X[perm[:n_held]]


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    tc = build_train_config(cfg, args)
    if "data.path" not in cfg:
        raise ConfigError("data.path is required for training")
    ds = load_dataset(cfg["data.path"], cfg=cfg)
    X = trainer.data_matrix(ds)
    train_X, heldout = _split_heldout(X, cfg.get("train.heldout_fraction", 0.1), tc.seed)
    echo = {k: v for k, v in cfg.items() if not k.startswith("out.")}
    state, _ = trainer.train(tc, train_X, heldout, config_echo=echo)
    target = heldout if heldout is not None else train_X
    report = trainer.evaluate(state, target)
    print(f"trained {tc.likelihood} K={tc.k} epochs={state.epoch} backend={BACKEND} "
          f"{report.metric}={report.value:.6g} sparsity={report.sparsity:.4f}")
    return 0


def cmd_encode(args) -> int:
    state = trainer.load_state(args.checkpoint)
    ds = load_dataset(args.data, fmt=args.format, vocab=args.vocab)
    workers = args.workers if args.workers is not None else 1
    results = trainer.encode_dataset(state, ds, workers=workers)
    datasets.save_codes_csv(pursuit.codes_matrix(results), args.out)
    print(f"encoded {len(results)} data points -> {args.out}")
    return 0


def cmd_eval(args) -> int:
    state = trainer.load_state(args.checkpoint)
    ds = load_dataset(args.data, fmt=args.format, vocab=args.vocab)
    report = trainer.evaluate(state, ds)
    if args.csv:
        print(metrics.CSV_HEADER)
        print(report.csv_row())
    else:
        print(f"{report.metric} {report.value:.10g}")
        print(f"sparsity {report.sparsity:.10g}")
        print(f"n {report.n}")
    return 0


def cmd_synth(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg["train.seed"] = args.seed
    if "train.seed" not in cfg:
        raise ConfigError("a seed is mandatory: set train.seed or pass --seed")
    if "model.likelihood" not in cfg or "model.K" not in cfg or "synth.n" not in cfg:
        raise ConfigError("model.likelihood, model.K, and synth.n are required")
    spec = datasets.SyntheticSpec(
        likelihood=cfg["model.likelihood"],
        n=cfg["synth.n"],
        k=cfg["model.K"],
        d=cfg.get("synth.d", 0),
        w=cfg.get("synth.w", 0),
        t=cfg.get("model.T", 0),
        hidden=cfg.get("synth.hidden", (16,)),
        alpha=cfg.get("bp.alpha", 1.0),
        gamma_mass=cfg.get("bp.gamma", 0.0),
        sigma2=cfg.get("gauss.sigma2", 0.1),
        c=cfg.get("gauss.c", 1.0),
        a=cfg.get("poisson.a", 1.0),
        b=cfg.get("poisson.b", 1.0),
        doc_scale=cfg.get("synth.doc_scale", 50.0),
        seed=cfg["train.seed"],
    )
    result = datasets.generate_synthetic(spec)
    os.makedirs(args.out, exist_ok=True)
    if isinstance(result.dataset, datasets.CountDataset):
        datasets.save_bow(result.dataset, os.path.join(args.out, "data.bow"))
        data_file = "data.bow"
    else:
        datasets.save_dense_csv(result.dataset, os.path.join(args.out, "data.csv"))
        data_file = "data.csv"
    datasets.save_codes_csv(result.codes, os.path.join(args.out, "codes.csv"))
    print(f"wrote {spec.n} samples to {os.path.join(args.out, data_file)} "
          f"(+ codes.csv ground truth)")
    return 0


def cmd_topics(args) -> int:
    state = trainer.load_state(args.checkpoint)
    if state.poiss_cfg is None:
        raise ConfigError("topics requires a checkpoint trained with the poisson variant")
    with open(args.vocab, "r", encoding="utf-8") as fh:
        vocab = [line.rstrip("\n") for line in fh if line.strip()]
    report = metrics.topic_report(state.codes.astype(np.float64), state.poiss_cfg.beta,
                                  state.net, vocab)
    text = "\n".join(report.to_csv_rows()) if args.csv else report.to_text()
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    else:
        print(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bbsc",
        description="Beta-Bernoulli process sparse coding with deep decoders")
    sub = parser.add_subparsers(dest="command", required=True)

    def shared(p, out_help):
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--workers", type=int, default=None, help="encoding parallelism")
        p.add_argument("--csv", action="store_true", help="machine-readable CSV output")
        p.add_argument("--out", default=None, help=out_help)

    p = sub.add_parser("train", help="run the training loop")
    p.add_argument("--config", required=True, help="key=value config file")
    shared(p, "output directory for checkpoint + metrics")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("encode", help="encode data with a trained checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--format", default=None, choices=("idx", "csv", "bow"))
    p.add_argument("--vocab", default=None)
    shared(p, "codes CSV path")
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--format", default=None, choices=("idx", "csv", "bow"))
    p.add_argument("--vocab", default=None)
    shared(p, "unused")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("synth", help="sample a dataset from the generative model")
    p.add_argument("--config", required=True)
    shared(p, "output directory")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("topics", help="report topic groups from a poisson checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--vocab", required=True)
    shared(p, "report output path (default stdout)")
    p.set_defaults(func=cmd_topics)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "encode" and args.out is None:
        print("error: encode requires --out", file=sys.stderr)
        return 2
    if args.command == "synth" and args.out is None:
        print("error: synth requires --out", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except BrokenPipeError:
        return 1
    except Exception as exc:  # noqa: BLE001 - the CLI boundary reports, never raises
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
