"""Grid experiments: train one model per setting and score it clean and under attack."""

import csv
import json
from dataclasses import replace

import numpy as np

from .attacks import BudgetSpec, greedy_attack_batch
from .metrics import f1_scores, phi_align, spearman
from .models import decision_signs, init_linear, init_mlp
from .numerics import derive_seed, make_rng
from .sae import sae_scores
from .training import train

SCHEMA_VERSION = 1
COLUMNS = ("setting", "regularizer", "lam", "phiAlign", "saeMean", "caMean",
           "cleanMicroF1", "cleanMacroF1", "attackedMicroF1", "attackedMacroF1")


def init_model(kind, d, m, seed, hidden=16):
    rng = make_rng(derive_seed(seed, 1))
    if kind == "linear":
        return init_linear(d, m, rng)
    if kind == "mlp":
        return init_mlp(d, hidden, m, rng)
    raise ValueError(f"unknown model kind {kind!r}")


def evaluate_model(model, X, Y, epsilon, clip=None):
    """Alignment, SAE mean, greedy attack count and clean/attacked F1 on (X, Y)."""
    clean = f1_scores(decision_signs(model.scores(X)), Y)
    counts, R, _ = greedy_attack_batch(model, X, Y, BudgetSpec(epsilon, clip=clip))
    attacked = f1_scores(decision_signs(model.scores(X + R)), Y)
    phi, _ = sae_scores(model, X)
    return {
        "phiAlign": phi_align(model.output_weights),
        "saeMean": float(np.mean(phi)),
        "caMean": float(np.mean(counts)),
        "cleanMicroF1": clean.micro_f1,
        "cleanMacroF1": clean.macro_f1,
        "attackedMicroF1": attacked.micro_f1,
        "attackedMacroF1": attacked.macro_f1,
    }


def setting_name(regularizer, lam):
    return f"{regularizer}:{lam:g}"


def run_point(dataset, regularizer, lam, base_spec, epsilon, model_kind="linear", hidden=16,
              split="test"):
    spec = replace(base_spec, regularizer=regularizer, lam=float(lam))
    model0 = init_model(model_kind, dataset.d, dataset.m, base_spec.seed, hidden)
    model, trace = train(dataset, model0, spec)
    X, Y = dataset.split(split)
    row = {"setting": setting_name(regularizer, lam), "regularizer": regularizer, "lam": float(lam)}
    row.update(evaluate_model(model, X, Y, epsilon, dataset.clip_box))
    return row, model, trace


def run_sweep(dataset, settings, base_spec, epsilon, model_kind="linear", hidden=16, split="test",
              on_row=None):
    """One row per (regularizer, lam) setting, in the order given."""
    if not settings:
        raise ValueError("sweep grid is empty")
    rows = []
    for regularizer, lam in settings:
        row, _, _ = run_point(dataset, regularizer, lam, base_spec, epsilon, model_kind, hidden, split)
        rows.append(row)
        if on_row is not None:
            on_row(rows)
    return rows


def sweep_correlation(rows, x="saeMean", y="caMean"):
    """Spearman correlation between two columns, or an error note."""
    try:
        rho, p = spearman([r[x] for r in rows], [r[y] for r in rows])
    except ValueError as exc:
        return {"x": x, "y": y, "rho": None, "pValue": None, "error": str(exc)}
    return {"x": x, "y": y, "rho": rho, "pValue": p, "error": None}


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_rows_csv(rows, path, columns=COLUMNS):
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(columns)
        for r in rows:
            wr.writerow([_fmt(r[c]) for c in columns])


def write_json(obj, path):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True, allow_nan=False)
        fh.write("\n")


def tune_regime(dataset, regularizer, grid, base_spec, epsilon, model_kind="linear", hidden=16,
                min_clean_ratio=0.95):
    """Pick lam from ``grid`` by validation attacked Micro-F1.

    Candidates whose clean validation Micro-F1 falls below ``min_clean_ratio``
    times the unregularized model's are discarded, so a penalty cannot win by
    collapsing the classifier. Ties go to the smaller lam. Returns
    ``(lam, val_row, test_row)``; lam is None when no candidate qualifies.
    """
    ref, _, _ = run_point(dataset, "none", 0.0, base_spec, epsilon, model_kind, hidden, split="val")
    floor = min_clean_ratio * ref["cleanMicroF1"]
    best = None
    for lam in sorted(grid):
        val_row, model, _ = run_point(dataset, regularizer, lam, base_spec, epsilon, model_kind, hidden,
                                      split="val")
        if val_row["cleanMicroF1"] < floor:
            continue
        if best is None or val_row["attackedMicroF1"] > best[1]["attackedMicroF1"]:
            best = (lam, val_row, model)
    if best is None:
        return None, None, None
    X, Y = dataset.split("test")
    test_row = {"setting": setting_name(regularizer, best[0]), "regularizer": regularizer,
                "lam": float(best[0])}
    test_row.update(evaluate_model(best[2], X, Y, epsilon, dataset.clip_box))
    return best[0], best[1], test_row

