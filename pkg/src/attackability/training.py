"""Hinge-loss multi-label training with optional robustness penalties.

Regimes (``TrainSpec.regularizer``):

    none       plain hinge loss
    l2         1/2 * sum of squared parameters, applied as an implicit
               weight-decay step so that huge weights stay stable
    nuclear    trace norm of the output weights, applied as a singular
               value thresholding step after every update
    armPrimal  mean over instances of max_S ||sum_{j in S} y_j w_j||
    armSingle  mean over instances of sum_k ||grad h_k|| / max(exp(y_k h_k), alpha)
    armSae     mean over instances of the greedy subset score built from
               margin-weighted transfer vectors

The subset maximizations are differentiated with the maximizing subset held
fixed (Danskin). All penalties are averaged over the batch, like the loss.
"""

import csv
import json
import math
import os
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .errors import TrainingDivergedError
from .metrics import f1_scores
from .models import decision_signs, hinge_margin_grad
from .numerics import make_rng, svd
from .sae import DEFAULT_ALPHA, c_wz_batch, greedy_select, reg_weights

try:  # Python < 3.11
    import tomllib
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib

REGULARIZERS = ("none", "l2", "nuclear", "armPrimal", "armSingle", "armSae")
TRACE_COLUMNS = ("epoch", "trainLoss", "regValue", "valMicroF1")


@dataclass(frozen=True)
class TrainSpec:
    regularizer: str = "none"
    lam: float = 0.0
    alpha: float = DEFAULT_ALPHA
    epochs: int = 100
    batch_size: int = 32
    learning_rate: float = 0.1
    lr_decay: float = 0.0  # lr_t = learning_rate / (1 + lr_decay * t), t = epoch index from 0
    momentum: float = 0.0
    seed: int = 0
    patience: int = None

    def __post_init__(self):
        if self.regularizer not in REGULARIZERS:
            raise ValueError(f"unknown regularizer {self.regularizer!r}; choose from {REGULARIZERS}")
        if not (math.isfinite(self.lam) and self.lam >= 0):
            raise ValueError("lam must be finite and non-negative")
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be at least 1")
        if not self.learning_rate > 0 or self.lr_decay < 0 or not 0 <= self.momentum < 1:
            raise ValueError("invalid learning-rate schedule or momentum")
        if self.patience is not None and self.patience < 1:
            raise ValueError("patience must be positive when given")

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        aliases = {"lambda": "lam", "batchSize": "batch_size", "learningRate": "learning_rate",
                   "lrDecay": "lr_decay"}
        out = {}
        for k, v in d.items():
            k = aliases.get(k, k)
            if k not in known:
                raise ValueError(f"unknown TrainSpec field {k!r}")
            out[k] = v
        return cls(**out)

    def to_dict(self):
        return asdict(self)


def load_config(path):
    """Parse a JSON or TOML file (by extension) into a dict."""
    if path.endswith(".toml"):
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    with open(path) as fh:
        return json.load(fh)


def load_train_spec(path):
    cfg = load_config(path)
    return TrainSpec.from_dict(cfg.get("train", cfg))


@dataclass
class TrainTrace:
    records: list = field(default_factory=list)
    model: object = None
    best_epoch: int = 0

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(TRACE_COLUMNS)
            for rec in self.records:
                wr.writerow([rec["epoch"]] + [repr(float(rec[k])) for k in TRACE_COLUMNS[1:]])


def hinge_loss(model, X, Y):
    """Mean over instances of sum_j max(0, 1 - y_j h_j(x))."""
    Y = np.atleast_2d(np.asarray(Y, dtype=np.float64))
    if not np.all(np.abs(Y) == 1):
        raise ValueError("labels must be -1 or +1")
    H = model.scores(X)
    return float(np.maximum(0.0, 1.0 - Y * H).sum(axis=1).mean())


def _zeros_like(model):
    return {k: np.zeros_like(v) for k, v in model.params().items()}


def _margin_weight_slope(H, Y, alpha):
    """d/dh of min(exp(-y h), 1/alpha); zero where the alpha clamp is active."""
    with np.errstate(over="ignore"):
        e = np.exp(-Y * H)
    return np.where(e < 1.0 / alpha, -Y * e, 0.0)


def regularizer_value_and_grad(model, X, Y, spec):
    """Unweighted penalty value and its parameter gradients on a batch."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    Y = np.atleast_2d(np.asarray(Y, dtype=np.float64))
    n = X.shape[0]
    kind = spec.regularizer
    grads = _zeros_like(model)

    if kind == "none":
        return 0.0, grads

    if kind == "l2":
        p = model.params()
        return 0.5 * float(sum(np.sum(v * v) for v in p.values())), {k: v.copy() for k, v in p.items()}

    name = model.output_weight_name
    W = model.output_weights

    if kind == "nuclear":
        u, s, v = svd(W)
        k = int(np.sum(s > 0))
        grads[name] = u[:, :k] @ v[:, :k].T
        return float(s.sum()), grads

    if kind == "armPrimal":
        vals, masks = c_wz_batch(W, Y)
        B = np.where(masks, Y, 0.0)
        V = B @ W
        nrm = np.linalg.norm(V, axis=1, keepdims=True)
        U = np.divide(V, nrm, out=np.zeros_like(V), where=nrm > 0)
        grads[name] = B.T @ U / n
        return float(vals.mean()), grads

    H = model.scores(X)
    J = model.input_jacobian(X)
    e = reg_weights(H, Y, spec.alpha)
    de = _margin_weight_slope(H, Y, spec.alpha)

    if kind == "armSingle":
        jn = np.sqrt(np.einsum("nkd,nkd->nk", J, J))
        value = float((jn * e).sum(axis=1).mean())
        scale = np.divide(e, jn, out=np.zeros_like(e), where=jn > 0)
        dJ = scale[:, :, None] * J / n
        dH = jn * de / n
        return value, model.backprop(X, dH, dJ)

    if kind == "armSae":
        coef = -Y * e  # a_j = coef_j * grad h_j
        masks = greedy_select(coef[:, :, None] * J)
        beta = np.where(masks, coef, 0.0)
        v = np.einsum("nj,njd->nd", beta, J)
        phi = np.linalg.norm(v, axis=1)
        u = np.divide(v, phi[:, None], out=np.zeros_like(v), where=phi[:, None] > 0)
        dJ = beta[:, :, None] * u[:, None, :] / n
        dbeta = np.einsum("njd,nd->nj", J, u)
        dH = np.where(masks, dbeta * (-Y * de), 0.0) / n
        return float(phi.mean()), model.backprop(X, dH, dJ)

    raise ValueError(f"unknown regularizer {kind!r}")


def singular_value_threshold(W, tau):
    u, s, v = svd(W)
    return (u * np.maximum(s - tau, 0.0)) @ v.T


def _check_finite(params, records):
    for k, v in params.items():
        if not np.all(np.isfinite(v)):
            raise TrainingDivergedError(f"parameter {k} became non-finite", records)


def train(dataset, model_init, spec, progress=None):
    """Minibatch SGD on hinge loss plus ``lam`` times the chosen penalty.

    Returns ``(model, trace)`` where ``model`` is the snapshot with the best
    validation Micro-F1 (latest epoch on ties). ``progress`` is an optional
    callable receiving each epoch record.
    """
    rng = make_rng(spec.seed)
    Xtr, Ytr = dataset.split("train")
    Xva, Yva = dataset.split("val")
    if len(Xtr) == 0 or len(Xva) == 0:
        raise ValueError("dataset needs non-empty train and val splits")

    model = model_init
    params = {k: np.array(v, dtype=np.float64) for k, v in model.params().items()}
    vel = {k: np.zeros_like(v) for k, v in params.items()}
    out_name = model.output_weight_name
    lam = spec.lam
    penalized = lam > 0 and spec.regularizer != "none"
    records = []
    best_f1, best_model, best_epoch, stale = -1.0, model, 0, 0

    for epoch in range(1, spec.epochs + 1):
        lr = spec.learning_rate / (1.0 + spec.lr_decay * (epoch - 1))
        order = rng.permutation(len(Xtr))
        for start in range(0, len(order), spec.batch_size):
            idx = order[start:start + spec.batch_size]
            Xb, Yb = Xtr[idx], Ytr[idx]
            dH = hinge_margin_grad(model.scores(Xb), Yb) / len(idx)
            g = model.backprop(Xb, dH)
            if penalized and spec.regularizer not in ("l2", "nuclear"):
                _, rg = regularizer_value_and_grad(model, Xb, Yb, spec)
                for k in g:
                    g[k] = g[k] + lam * rg[k]
            with np.errstate(over="ignore", invalid="ignore"):  # caught by _check_finite
                for k in params:
                    vel[k] = spec.momentum * vel[k] - lr * g[k]
                    params[k] = params[k] + vel[k]
            if penalized and spec.regularizer == "l2":
                # exact proximal step for lam/2 ||theta||^2
                for k in params:
                    params[k] = params[k] / (1.0 + lr * lam)
            elif penalized and spec.regularizer == "nuclear":
                params[out_name] = singular_value_threshold(params[out_name], lam * lr)
            _check_finite(params, records)
            model = model.with_params({k: v.copy() for k, v in params.items()})

        loss = hinge_loss(model, Xtr, Ytr)
        reg = lam * regularizer_value_and_grad(model, Xtr, Ytr, spec)[0] if penalized else 0.0
        if not (math.isfinite(loss) and math.isfinite(reg)):
            raise TrainingDivergedError(f"loss became non-finite at epoch {epoch}", records)
        val_f1 = f1_scores(decision_signs(model.scores(Xva)), Yva).micro_f1
        rec = {"epoch": epoch, "trainLoss": loss, "regValue": reg, "valMicroF1": val_f1}
        records.append(rec)
        if progress is not None:
            progress(rec)
        if val_f1 >= best_f1:
            best_f1, best_model, best_epoch, stale = val_f1, model, epoch, 0
        else:
            stale += 1
            if spec.patience is not None and stale >= spec.patience:
                break

    return best_model, TrainTrace(records=records, model=best_model, best_epoch=best_epoch)


def save_trace(trace, path):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    trace.to_csv(path)
