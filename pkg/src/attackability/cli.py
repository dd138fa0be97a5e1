"""Command-line front end.

Subcommands: gen-data, train, attack, sae, evaluate, sweep. Every option can
also come from ``--config FILE`` (JSON or TOML); flags given on the command
line win over the file. The output directory is ``--out`` unless the
``ATTACKABILITY_OUTPUT_DIR`` environment variable is set.

Exit codes: 0 success, 2 bad configuration or input, 3 numerical failure.
"""

import argparse
import os
import sys

import numpy as np

from . import __version__
from .attacks import (BudgetSpec, exact_attackability, greedy_attack_batch, write_outcomes_jsonl)
from .data import SynthSpec, generate, load_csv, save_csv
from .errors import ConvergenceError, TrainingDivergedError
from .metrics import f1_scores
from .models import decision_signs, load_model, save_model
from .sae import sae_scores
from .sweep import (COLUMNS, SCHEMA_VERSION, init_model, run_sweep, sweep_correlation,
                    write_json, write_rows_csv)
from .training import REGULARIZERS, TrainSpec, load_config, train

ENV_OUTPUT_DIR = "ATTACKABILITY_OUTPUT_DIR"
EXIT_CONFIG = 2
EXIT_NUMERIC = 3


class ConfigError(Exception):
    pass


def _floats(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _names(text):
    return [v.strip() for v in text.split(",") if v.strip()]


def _add_synth(p):
    p.add_argument("--n", type=int, default=2000)
    p.add_argument("--d", type=int, default=20)
    p.add_argument("--m", type=int, default=6)
    p.add_argument("--rho", type=float, default=0.9)
    p.add_argument("--margin", type=float, default=0.1)
    p.add_argument("--noise", type=float, default=0.05, dest="label_noise")


def _add_train(p):
    p.add_argument("--model", choices=("linear", "mlp"), default="linear")
    p.add_argument("--hidden", type=int, default=16)
    p.add_argument("--regularizer", choices=REGULARIZERS, default="none")
    p.add_argument("--lam", type=float, default=0.0)
    p.add_argument("--alpha", type=float, default=0.01)
    p.add_argument("--epochs", type=int, default=60)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--lr", type=float, default=0.05, dest="learning_rate")
    p.add_argument("--lr-decay", type=float, default=0.0)
    p.add_argument("--momentum", type=float, default=0.0)
    p.add_argument("--patience", type=int, default=None)


def build_parser():
    parser = argparse.ArgumentParser(prog="attackability", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON or TOML file with option values")
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("gen-data", help="generate a synthetic correlated-label dataset")
    common(p)
    _add_synth(p)
    p.add_argument("--name", default="data")

    p = sub.add_parser("train", help="train a classifier on a dataset CSV")
    common(p)
    p.add_argument("--data", required=True)
    _add_train(p)

    for name, text in (("attack", "run the greedy (or exact) budgeted attack"),
                       ("sae", "score instances with the soft attackability estimator"),
                       ("evaluate", "F1 report on clean and attacked inputs")):
        p = sub.add_parser(name, help=text)
        common(p)
        p.add_argument("--data", required=True)
        p.add_argument("--model-file", required=name != "evaluate")
        p.add_argument("--split", default="test")
        if name in ("attack", "evaluate"):
            p.add_argument("--epsilon", type=float, default=None if name == "evaluate" else 1.0)
        if name == "attack":
            p.add_argument("--method", choices=("greedy", "exact"), default="greedy")
        if name == "evaluate":
            p.add_argument("--predictions", help="CSV of predicted labels (header l0,...) instead of a model")

    p = sub.add_parser("sweep", help="train and score a grid of regularization settings")
    common(p)
    p.add_argument("--data", help="dataset CSV; synthesized from the generator options when omitted")
    _add_synth(p)
    _add_train(p)
    p.add_argument("--grid", type=_floats, default=None, help="comma-separated lam values")
    p.add_argument("--regimes", type=_names, default=None,
                   help="comma-separated regularizers, each run at --lam")
    p.add_argument("--epsilon", type=float, default=1.0)
    return parser


_CONFIG_ALIASES = {"lambda": "lam", "batchSize": "batch_size", "learningRate": "learning_rate",
                   "lr": "learning_rate", "lrDecay": "lr_decay", "labelNoise": "label_noise",
                   "noise": "label_noise", "modelFile": "model_file"}


def _flatten(cfg):
    out = {}
    for k, v in cfg.items():
        if isinstance(v, dict):
            out.update(_flatten(v))
        else:
            out[_CONFIG_ALIASES.get(k, k).replace("-", "_")] = v
    return out


def parse_args(argv):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        try:
            cfg = _flatten(load_config(args.config))
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from None
        sub = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest for a in sub._actions}
        unknown = sorted(set(cfg) - known)
        if unknown:
            raise ConfigError(f"unknown config keys for {args.command}: {', '.join(unknown)}")
        if "grid" in cfg and isinstance(cfg["grid"], list):
            cfg["grid"] = [float(v) for v in cfg["grid"]]
        if "regimes" in cfg and isinstance(cfg["regimes"], str):
            cfg["regimes"] = _names(cfg["regimes"])
        sub.set_defaults(**cfg)
        args = parser.parse_args(argv)
    args.out = os.environ.get(ENV_OUTPUT_DIR) or args.out
    return args


def _synth_spec(args):
    return SynthSpec(n=args.n, d=args.d, m=args.m, rho=args.rho, margin=args.margin,
                     label_noise=args.label_noise, seed=args.seed)


def _train_spec(args):
    return TrainSpec(regularizer=args.regularizer, lam=args.lam, alpha=args.alpha, epochs=args.epochs,
                     batch_size=args.batch_size, learning_rate=args.learning_rate,
                     lr_decay=args.lr_decay, momentum=args.momentum, seed=args.seed,
                     patience=args.patience)


def _path(args, name):
    os.makedirs(args.out, exist_ok=True)
    return os.path.join(args.out, name)


def _require(path, what):
    if not path or not os.path.exists(path):
        raise ConfigError(f"{what} not found: {path}")
    return path


def _split(dataset, name):
    if name not in dataset.splits:
        raise ConfigError(f"dataset has no split {name!r}")
    return dataset.split(name)


def cmd_gen_data(args):
    dataset, _ = generate(_synth_spec(args))
    path = _path(args, args.name + ".csv")
    save_csv(dataset, path)
    sizes = {k: len(v) for k, v in dataset.splits.items()}
    print(f"wrote {path}: n={dataset.n} d={dataset.d} m={dataset.m} rho={args.rho} splits={sizes}")


def cmd_train(args):
    dataset = load_csv(_require(args.data, "dataset"))
    spec = _train_spec(args)
    model0 = init_model(args.model, dataset.d, dataset.m, args.seed, args.hidden)
    model, trace = train(dataset, model0, spec)
    save_model(model, _path(args, "model.json"))
    trace.to_csv(_path(args, "trace.csv"))
    write_json({"schema_version": SCHEMA_VERSION, "spec": spec.to_dict(), "model": args.model,
                "bestEpoch": trace.best_epoch, "epochsRun": len(trace.records)},
               _path(args, "trace.meta.json"))
    last = trace.records[-1]
    print(f"trained {args.model}/{spec.regularizer} for {len(trace.records)} epochs; "
          f"best epoch {trace.best_epoch}, val micro-F1 {last['valMicroF1']:.4f}")


def _load_pair(args):
    dataset = load_csv(_require(args.data, "dataset"))
    model = load_model(_require(args.model_file, "model file"))
    if model.n_features != dataset.d or model.n_labels != dataset.m:
        raise ConfigError("model and dataset dimensions differ")
    return dataset, model


def cmd_attack(args):
    dataset, model = _load_pair(args)
    X, Y = _split(dataset, args.split)
    budget = BudgetSpec(args.epsilon, clip=dataset.clip_box)
    counts, R, F = greedy_attack_batch(model, X, Y, budget)
    records = []
    exact = []
    for i in range(len(X)):
        rec = {"index": int(dataset.splits[args.split][i]), "ca": int(counts[i]),
               "flipped": np.flatnonzero(F[i]).tolist(), "rnorm": float(np.linalg.norm(R[i])),
               "r": R[i].tolist()}
        if args.method == "exact":
            k, _ = exact_attackability(model, X[i], Y[i], budget)
            rec["cStar"] = int(k)
            exact.append(k)
        records.append(rec)
    write_outcomes_jsonl(_path(args, "attacks.jsonl"), records)
    summary = {"schema_version": SCHEMA_VERSION, "epsilon": args.epsilon, "split": args.split,
               "n": len(X), "caMean": float(np.mean(counts)) if len(X) else 0.0}
    if args.method == "exact":
        summary["cStarMean"] = float(np.mean(exact)) if exact else 0.0
    write_json(summary, _path(args, "attack_summary.json"))
    print(f"Ca mean {summary['caMean']:.4f}" +
          (f", C* mean {summary['cStarMean']:.4f}" if "cStarMean" in summary else ""))


def cmd_sae(args):
    dataset, model = _load_pair(args)
    X, _ = _split(dataset, args.split)
    phi, masks = sae_scores(model, X)
    rows = [{"index": int(i), "phi": float(p), "subset": " ".join(map(str, np.flatnonzero(mk)))}
            for i, p, mk in zip(dataset.splits[args.split], phi, masks)]
    write_rows_csv(rows, _path(args, "sae.csv"), columns=("index", "phi", "subset"))
    summary = {"schema_version": SCHEMA_VERSION, "split": args.split, "n": len(X),
               "saeMean": float(np.mean(phi)) if len(X) else 0.0}
    write_json(summary, _path(args, "sae.meta.json"))
    print(f"SAE mean {summary['saeMean']:.6g}")


def _read_predictions(path, m):
    ds = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if ds.shape[1] != m:
        raise ConfigError(f"predictions have {ds.shape[1]} columns, expected {m}")
    return ds


def cmd_evaluate(args):
    dataset = load_csv(_require(args.data, "dataset"))
    X, Y = _split(dataset, args.split)
    report = {"schema_version": SCHEMA_VERSION, "split": args.split}
    if args.predictions:
        pred = _read_predictions(_require(args.predictions, "predictions"), dataset.m)
        if len(pred) != len(Y):
            raise ConfigError("predictions and split sizes differ")
        report["clean"] = f1_scores(pred, Y).to_dict()
    else:
        if not args.model_file:
            raise ConfigError("evaluate needs --model-file or --predictions")
        _, model = _load_pair(args)
        report["clean"] = f1_scores(decision_signs(model.scores(X)), Y).to_dict()
        if args.epsilon is not None:
            _, R, _ = greedy_attack_batch(model, X, Y, BudgetSpec(args.epsilon, clip=dataset.clip_box))
            report["epsilon"] = args.epsilon
            report["attacked"] = f1_scores(decision_signs(model.scores(X + R)), Y).to_dict()
    write_json(report, _path(args, "eval.json"))
    line = f"clean micro-F1 {report['clean']['micro_f1']:.4f}"
    if "attacked" in report:
        line += f", attacked micro-F1 {report['attacked']['micro_f1']:.4f}"
    print(line)


def sweep_settings(args):
    if args.grid is not None and args.regimes is not None:
        raise ConfigError("give either --grid or --regimes, not both")
    if args.regimes is not None:
        bad = [r for r in args.regimes if r not in REGULARIZERS]
        if bad:
            raise ConfigError(f"unknown regularizers: {bad}")
        return [(r, args.lam if r != "none" else 0.0) for r in args.regimes]
    grid = args.grid if args.grid is not None else [args.lam]
    return [(args.regularizer, lam) for lam in grid]


def cmd_sweep(args):
    settings = sweep_settings(args)
    if not settings:
        raise ConfigError("sweep grid is empty")
    if args.data:
        dataset = load_csv(_require(args.data, "dataset"))
    else:
        dataset, _ = generate(_synth_spec(args))
    partial = _path(args, "sweep.partial.csv")
    try:
        rows = run_sweep(dataset, settings, _train_spec(args), args.epsilon, args.model, args.hidden,
                         on_row=lambda rs: write_rows_csv(rs, partial))
    except (ConvergenceError, TrainingDivergedError, FloatingPointError) as exc:
        raise RuntimeError(f"sweep aborted ({exc}); partial results in {partial}") from exc
    write_rows_csv(rows, _path(args, "sweep.csv"))
    os.remove(partial)
    corr = sweep_correlation(rows)
    write_json({"schema_version": SCHEMA_VERSION, "columns": list(COLUMNS), "epsilon": args.epsilon,
                "settings": [r["setting"] for r in rows],
                "spearmanSaeCa": corr}, _path(args, "sweep.meta.json"))
    for r in rows:
        print(f"{r['setting']:>18}  align {r['phiAlign']:.3f}  SAE {r['saeMean']:.4g}  Ca {r['caMean']:.3f}"
              f"  clean {r['cleanMicroF1']:.3f}  attacked {r['attackedMicroF1']:.3f}")
    if corr["error"]:
        print(f"Spearman(SAE, Ca): {corr['error']}")
    else:
        print(f"Spearman(SAE, Ca) = {corr['rho']:.3f} (p ~ {corr['pValue']:.3g})")


COMMANDS = {"gen-data": cmd_gen_data, "train": cmd_train, "attack": cmd_attack, "sae": cmd_sae,
            "evaluate": cmd_evaluate, "sweep": cmd_sweep}


def main(argv=None):
    try:
        args = parse_args(argv)
        COMMANDS[args.command](args)
    except SystemExit as exc:  # argparse usage errors already exit with 2
        return exc.code if isinstance(exc.code, int) else EXIT_CONFIG
    except (ConvergenceError, TrainingDivergedError, RuntimeError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, ValueError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
