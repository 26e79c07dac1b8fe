"""Command line entry point: ``piwad {train,explain,synth,gan-check,eval,ablate}``.

Every command writes its outputs plus a ``manifest.json`` under ``--out``.
``piwad <command> --replay path/to/manifest.json [--out dir]`` reruns a
recorded command with the recorded arguments.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric abort.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import warnings

import numpy as np

from . import checkpoint, effects, synth, training, wgan
from .data import DataError, FeatureTable, load_dataset

EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 2, 3, 4
log = logging.getLogger("piwad")


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# helpers


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _dump_json(path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _resolve_config(args) -> training.TrainConfig:
    """Built-in defaults, overlaid by ``--config``, overlaid by explicit flags."""
    base = training.TrainConfig().to_dict()
    if getattr(args, "config", None):
        try:
            with open(args.config) as fh:
                user = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from None
        for key, val in user.items():
            if key not in base:
                raise ConfigError(f"unknown config key {key!r}")
            if isinstance(base[key], dict):
                unknown = set(val) - set(base[key])
                if unknown:
                    raise ConfigError(f"unknown {key} config keys {sorted(unknown)}")
                base[key].update(val)
            else:
                base[key] = val
    flags = {
        "epochs": "epochs",
        "batch_size": "batch_size",
        "epsilon": "epsilon",
        "min_epochs": "min_epochs",
        "lr": "lr",
    }
    for attr, key in flags.items():
        val = getattr(args, attr, None)
        if val is not None:
            base[key] = val
    if getattr(args, "gan_iterations", None) is not None:
        base["gan"]["iterations"] = args.gan_iterations
    if getattr(args, "gamma", None) is not None:
        base["model"]["gamma"] = args.gamma
    base["seed"] = args.seed
    try:
        cfg = training.TrainConfig.from_dict(base)
        if getattr(args, "ablate", None):
            cfg = training.ablation_config(cfg, args.ablate)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    return cfg


def _load(args, need_target=True) -> FeatureTable:
    if need_target and not args.target:
        raise ConfigError("--target is required")
    table = load_dataset(args.data, args.target, args.embeddings)
    return table


def _write_manifest(args, cfg, inputs, outputs) -> None:
    recorded = {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "replay")}
    doc = {
        "command": args.command,
        "args": recorded,
        "seed": args.seed,
        "config": None if cfg is None else cfg.to_dict(),
        "inputs": {p: _sha256(p) for p in inputs if p},
        "outputs": sorted(outputs),
    }
    _dump_json(os.path.join(args.out, "manifest.json"), doc)


def _out(args, name) -> str:
    return os.path.join(args.out, name)


# ---------------------------------------------------------------------------
# commands


def cmd_train(args) -> int:
    cfg = _resolve_config(args)
    table = _load(args)
    outputs = ["model.json", "losses.csv"]
    if args.with_gan:
        gan = wgan.train_wgan(table, cfg.gan, seed=cfg.seed)
        checkpoint.save_gan(_out(args, "gan.json"), gan)
        wgan.write_trace(_out(args, "gan_losses.csv"), gan)
        outputs += ["gan.json", "gan_losses.csv"]
    tr, va, _ = training.split_indices(table.n, cfg.seed)
    res = training.train(cfg, table.subset(tr), table.subset(va))
    res.model.fingerprint = checkpoint.fingerprint(cfg.to_dict())
    res.model.meta = {"epochs": len(res.history), "stopped_early": res.stopped_early}
    checkpoint.save_model(_out(args, "model.json"), res.model)
    training.write_history(_out(args, "losses.csv"), res.history)
    _write_manifest(args, cfg, [args.data, args.embeddings], outputs)
    return 0


def cmd_explain(args) -> int:
    model_path = args.model or _out(args, "model.json")
    gan_path = args.gan or _out(args, "gan.json")
    if not os.path.exists(model_path):
        raise DataError(f"predictor checkpoint {model_path} not found; run `piwad train` first")
    if not os.path.exists(gan_path):
        raise DataError(
            f"generator checkpoint {gan_path} not found; run `piwad train --with-gan` or pass --gan"
        )
    args.model, args.gan = model_path, gan_path  # recorded so a replay finds the same checkpoints
    model = checkpoint.load_model(model_path)
    gan = checkpoint.load_gan(gan_path, expect_names=model.names)
    if args.feature:
        unknown = [f for f in args.feature if f not in model.names]
        if unknown:
            raise ConfigError(f"unknown features {unknown}; model has {model.names}")
        feats = [model.names.index(f) for f in args.feature]
    else:
        feats = list(range(model.m))
    rep = effects.effect_report(model, gan, feats, k=args.k, grid_points=args.grid, seed=args.seed)
    if args.normalize:
        rep = _normalized(rep)
    effects.write_effects_json(_out(args, "effects.json"), rep)
    effects.write_effects_csv(_out(args, "effects.csv"), rep)
    effects.write_curves_csv(_out(args, "curves.csv"), rep)
    _write_manifest(args, None, [model_path, gan_path], ["effects.json", "effects.csv", "curves.csv"])
    return 0


def _normalized(rep: effects.EffectSet) -> effects.EffectSet:
    """Divide every effect by the largest absolute grid-mean total effect."""
    scale = max((abs(r.total_grid_mean) for r in rep.reports), default=0.0)
    if scale == 0:
        return rep
    for r in rep.reports:
        r.effect = [e / scale for e in r.effect]
        r.stderr = [s / scale for s in r.stderr]
        r.total_grid_mean /= scale
        r.total_grid_mean_se /= scale
        r.total_eq12 /= scale
        r.main_effect /= scale
    return rep


def cmd_synth(args) -> int:
    if args.spec:
        with open(args.spec) as fh:
            spec = synth.SynthSpec.from_json(fh.read())
    else:
        try:
            spec = synth.SynthSpec(
                family=args.family,
                n=args.n,
                m=args.m,
                coefficients=args.coefficients or [],
                intercept=args.intercept,
                interaction=args.interaction,
                noise=args.noise,
                seed=args.seed,
            )
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None
    table, _ = synth.gen_synthetic(spec)
    table.to_csv(_out(args, "data.csv"))
    with open(_out(args, "synth_spec.json"), "w") as fh:
        fh.write(spec.to_json() + "\n")
    _write_manifest(args, None, [args.spec], ["data.csv", "synth_spec.json"])
    return 0


def cmd_gan_check(args) -> int:
    real = load_dataset(args.real, args.target)
    inputs = [args.real]
    if args.synthetic:
        syn = load_dataset(args.synthetic, args.target if args.target else None)
        inputs.append(args.synthetic)
    elif args.gan:
        gan = checkpoint.load_gan(args.gan, expect_names=real.names)
        syn = wgan.sample_synthetic(gan, args.n_syn, np.random.default_rng([args.seed, 20]))
        inputs.append(args.gan)
    else:
        raise ConfigError("gan-check needs --synthetic or --gan")
    if syn.names != real.names:
        syn = FeatureTable(real.names, syn.X[:, [syn.names.index(c) for c in real.names]]) if set(real.names) <= set(syn.names) else syn
    if syn.m != real.m:
        raise DataError(f"real data has {real.m} features, synthetic has {syn.m}")
    try:
        report = wgan.fidelity_audit(real, syn, args.components)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    _dump_json(_out(args, "fidelity.json"), report.to_dict())
    report.write_csv(_out(args, "fidelity.csv"))
    _write_manifest(args, None, inputs, ["fidelity.json", "fidelity.csv"])
    log.info("fidelity audit %s", "passed" if report.passed else "failed")
    return 0


def cmd_eval(args) -> int:
    cfg = _resolve_config(args)
    table = _load(args)
    if args.folds:
        cv = training.cross_validate(cfg, table, args.folds)
        doc = {"folds": [m.as_dict() for m in cv.folds], "mean": cv.mean.as_dict(), "std": cv.std.as_dict()}
        rows = [(f"fold-{i + 1}", m) for i, m in enumerate(cv.folds)] + [("mean", cv.mean), ("std", cv.std)]
        training.write_metric_table(_out(args, "cv.csv"), rows, first="fold")
        outputs = ["metrics.json", "cv.csv"]
    else:
        m, _ = training.evaluate_split(cfg, table)
        doc = {"test": m.as_dict()}
        outputs = ["metrics.json"]
    _dump_json(_out(args, "metrics.json"), doc)
    _write_manifest(args, cfg, [args.data, args.embeddings], outputs)
    return 0


def cmd_ablate(args) -> int:
    cfg = _resolve_config(args)
    table = _load(args)
    variants = args.variants or list(training.ABLATIONS)
    rows = []
    for v in variants:
        vcfg = training.ablation_config(cfg, v) if v in training.ABLATIONS else None
        if vcfg is None:
            raise ConfigError(f"unknown ablation {v!r}")
        if args.folds:
            m = training.cross_validate(vcfg, table, args.folds).mean
        else:
            m, _ = training.evaluate_split(vcfg, table)
        rows.append((v, m))
    training.write_metric_table(_out(args, "ablation.csv"), rows)
    _write_manifest(args, cfg, [args.data, args.embeddings], ["ablation.csv"])
    return 0


# ---------------------------------------------------------------------------
# parser


def _common(p, data=True):
    p.add_argument("--out", help="output directory (created if missing)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", help="JSON file with TrainConfig overrides")
    p.add_argument("--replay", help="re-run the command recorded in a manifest.json")
    if data:
        p.add_argument("--data", help="dataset CSV with a header row")
        p.add_argument("--target", help="name of the target column")
        p.add_argument("--embeddings", help="per-row embedding CSV aligned with --data")


def _training_flags(p):
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--epsilon", type=float, help="early-stopping tolerance on the validation loss change")
    p.add_argument("--min-epochs", dest="min_epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--gamma", type=int, help="interval count per feature")
    p.add_argument("--ablate", choices=sorted(training.ABLATIONS), help="train an ablation variant")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="piwad", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train the predictor (and optionally the generator first)")
    _common(p)
    _training_flags(p)
    p.add_argument("--with-gan", dest="with_gan", action="store_true")
    p.add_argument("--gan-iterations", dest="gan_iterations", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("explain", help="total and main effects from trained checkpoints")
    _common(p, data=False)
    p.add_argument("--model", help="predictor checkpoint (default OUT/model.json)")
    p.add_argument("--gan", help="generator checkpoint (default OUT/gan.json)")
    p.add_argument("--feature", action="append", help="feature name; repeat for several (default all)")
    p.add_argument("--grid", type=int, default=21)
    p.add_argument("--k", type=int, default=512, help="Monte-Carlo rows per grid point")
    p.add_argument("--normalize", action="store_true", help="rescale effects to max |total| = 1")
    p.set_defaults(func=cmd_explain)

    p = sub.add_parser("synth", help="write a synthetic dataset and its spec")
    _common(p, data=False)
    p.add_argument("--family", default="linear", choices=synth.FAMILIES)
    p.add_argument("--spec", help="SynthSpec JSON (overrides the other synth flags)")
    p.add_argument("--n", type=int, default=2000)
    p.add_argument("--m", type=int, default=2)
    p.add_argument("--coefficients", type=float, nargs="*")
    p.add_argument("--intercept", type=float, default=10.0)
    p.add_argument("--interaction", type=float, default=1.0)
    p.add_argument("--noise", type=float, default=0.0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("gan-check", help="PCA fidelity audit of synthetic against real rows")
    _common(p, data=False)
    p.add_argument("--real", required=False)
    p.add_argument("--synthetic")
    p.add_argument("--gan", help="generator checkpoint to sample from instead of --synthetic")
    p.add_argument("--n-syn", dest="n_syn", type=int, default=10000)
    p.add_argument("--target", help="target column to drop from the real data")
    p.add_argument("--components", type=int, default=10)
    p.set_defaults(func=cmd_gan_check)

    p = sub.add_parser("eval", help="test-split metrics or k-fold cross validation")
    _common(p)
    _training_flags(p)
    p.add_argument("--folds", type=int, default=0, help="k for cross validation (0: one 80/10/10 split)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="metrics for every ablation variant")
    _common(p)
    _training_flags(p)
    p.add_argument("--folds", type=int, default=0)
    p.add_argument("--variants", nargs="*", help="subset of variants (default all)")
    p.set_defaults(func=cmd_ablate)
    return parser


def _replay(parser, args):
    with open(args.replay) as fh:
        doc = json.load(fh)
    if doc.get("command") != args.command:
        raise ConfigError(f"manifest records {doc.get('command')!r}, not {args.command!r}")
    out = args.out
    ns = argparse.Namespace(**doc["args"])
    ns.command, ns.func, ns.replay = args.command, args.func, None
    ns.verbose = args.verbose
    if out:
        ns.out = out
    return ns


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        if args.replay:
            args = _replay(parser, args)
        required = {"train": ["data"], "eval": ["data"], "ablate": ["data"], "gan-check": ["real"]}
        missing = [f"--{r}" for r in required.get(args.command, []) if not getattr(args, r, None)]
        if not args.out:
            missing.append("--out")
        if missing:
            parser.print_usage(sys.stderr)
            raise ConfigError(f"missing required arguments: {' '.join(missing)}")
        if args.command in ("train", "eval", "ablate") and not args.target:
            parser.print_usage(sys.stderr)
            raise ConfigError("--target is required")
        os.makedirs(args.out, exist_ok=True)
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            return args.func(args)
    except ConfigError as exc:
        print(f"piwad: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, checkpoint.CheckpointError, FileNotFoundError, OSError) as exc:
        print(f"piwad: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (training.NumericError, FloatingPointError) as exc:
        print(f"piwad: numeric abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:  # remaining shape/size problems trace back to the input data
        print(f"piwad: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
