"""Evaluation statistics: F1 scores, Spearman correlation, hyperplane alignment."""

import json
import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.stats import rankdata
from scipy.stats import t as student_t

from .numerics import as_matrix

SCHEMA_VERSION = 1


@dataclass
class EvalReport:
    micro_f1: float
    macro_f1: float
    per_label_f1: list
    support: list

    def to_dict(self):
        return {"schema_version": SCHEMA_VERSION, **asdict(self)}

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1, sort_keys=True)
            fh.write("\n")


def _f1(tp, fp, fn):
    denom = 2 * tp + fp + fn
    return float(2 * tp / denom) if denom > 0 else 0.0


def f1_scores(pred, truth):
    """Micro and macro F1 for {-1, +1} label matrices, +1 being the positive class.

    Labels with no true and no predicted positives score 0.
    """
    pred = np.atleast_2d(np.asarray(pred))
    truth = np.atleast_2d(np.asarray(truth))
    if pred.shape != truth.shape:
        raise ValueError(f"shape mismatch: pred {pred.shape} vs truth {truth.shape}")
    for name, arr in (("pred", pred), ("truth", truth)):
        if not np.all(np.abs(arr) == 1):
            raise ValueError(f"{name} entries must be -1 or +1")
    p, t = pred > 0, truth > 0
    tp = np.sum(p & t, axis=0)
    fp = np.sum(p & ~t, axis=0)
    fn = np.sum(~p & t, axis=0)
    per_label = [_f1(a, b, c) for a, b, c in zip(tp, fp, fn)]
    return EvalReport(
        micro_f1=_f1(tp.sum(), fp.sum(), fn.sum()),
        macro_f1=float(np.mean(per_label)),
        per_label_f1=per_label,
        support=t.sum(axis=0).astype(int).tolist(),
    )


def spearman(a, b):
    """Spearman rank correlation with average ranks for ties.

    The p-value uses the Student-t approximation with n - 2 degrees of
    freedom, so it is approximate for small samples.
    """
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    if a.shape != b.shape:
        raise ValueError("inputs must have equal lengths")
    if a.size < 3:
        raise ValueError(f"insufficient points: need at least 3, got {a.size}")
    ra, rb = rankdata(a) - (a.size + 1) / 2.0, rankdata(b) - (b.size + 1) / 2.0
    saa, sbb = float(np.dot(ra, ra)), float(np.dot(rb, rb))
    if saa == 0 or sbb == 0:
        raise ValueError("undefined correlation: constant input")
    # one square root keeps identical rankings at exactly +-1
    rho = float(np.dot(ra, rb)) / math.sqrt(saa * sbb)
    rho = min(1.0, max(-1.0, rho))
    dof = a.size - 2
    if abs(rho) == 1.0:
        return rho, 0.0
    tstat = rho * math.sqrt(dof / (1.0 - rho * rho))
    return rho, float(2.0 * student_t.sf(abs(tstat), dof))


def phi_align(W):
    """Mean absolute cosine over all ordered row pairs, diagonal included."""
    W = as_matrix(W, "W")
    norms = np.linalg.norm(W, axis=1)
    if np.any(norms == 0):
        raise ValueError("phi_align is undefined for zero weight rows")
    U = W / norms[:, None]
    C = np.clip(np.abs(U @ U.T), 0.0, 1.0)
    return float(C.sum() / W.shape[0] ** 2)
