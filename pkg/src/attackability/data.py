"""Synthetic correlated-label datasets, CSV storage and train/val/test splits."""

import csv
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .metrics import f1_scores
from .numerics import make_rng

SCHEMA_VERSION = 1
SPLIT_FRACTIONS = (0.5, 0.3, 0.2)


@dataclass(eq=False)
class Dataset:
    X: np.ndarray
    Y: np.ndarray
    splits: dict
    clip_box: tuple = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.Y = np.asarray(self.Y, dtype=np.float64)
        if self.X.ndim != 2 or self.Y.ndim != 2 or len(self.X) != len(self.Y):
            raise ValueError("X and Y must be 2-d with the same number of rows")
        if not np.all(np.isfinite(self.X)):
            raise ValueError("X has non-finite entries")
        if not np.all(np.abs(self.Y) == 1):
            raise ValueError("labels must be -1 or +1")
        seen = set()
        for name, idx in self.splits.items():
            idx = [int(i) for i in idx]
            if any(i < 0 or i >= len(self.X) for i in idx):
                raise ValueError(f"split {name!r} has out-of-range indices")
            if seen.intersection(idx):
                raise ValueError(f"split {name!r} overlaps another split")
            seen.update(idx)
            self.splits[name] = np.asarray(idx, dtype=np.int64)

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def d(self):
        return self.X.shape[1]

    @property
    def m(self):
        return self.Y.shape[1]

    def split(self, name):
        idx = self.splits[name]
        return self.X[idx], self.Y[idx]


@dataclass(frozen=True)
class SynthSpec:
    n: int = 1000
    d: int = 20
    m: int = 6
    rho: float = 0.9
    margin: float = 0.1
    label_noise: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.n < 1 or self.d < 1 or self.m < 1:
            raise ValueError("n, d and m must be positive")
        if not 0.0 <= self.rho <= 1.0:
            raise ValueError(f"rho must lie in [0, 1], got {self.rho}")
        if not self.margin > 0:
            raise ValueError("margin must be positive")
        if not 0.0 <= self.label_noise < 0.5:
            raise ValueError("label_noise must lie in [0, 0.5)")


def make_splits(n, rng, fractions=SPLIT_FRACTIONS):
    order = rng.permutation(n)
    n_train = int(round(fractions[0] * n))
    n_val = int(round(fractions[1] * n))
    return {
        "train": np.sort(order[:n_train]),
        "val": np.sort(order[n_train:n_train + n_val]),
        "test": np.sort(order[n_train + n_val:]),
    }


def label_directions(d, m, rho, rng):
    """m unit vectors whose pairwise cosine is rho.

    Built as sqrt(rho) * shared + sqrt(1 - rho) * own, with the shared and
    per-label parts orthonormal when d allows it. With too few dimensions
    the per-label parts are only orthogonal to the shared one, so the
    cosines are rho only on average.
    """
    if rho == 0.0 and m > d:
        raise ValueError(f"cannot orthogonalize {m} label directions in {d} dimensions")
    if rho == 1.0:
        u = rng.normal(size=d)
        return np.tile(u / np.linalg.norm(u), (m, 1))
    if rho == 0.0:
        q, _ = np.linalg.qr(rng.normal(size=(d, m)))
        return q.T.copy()
    if m + 1 <= d:
        q, _ = np.linalg.qr(rng.normal(size=(d, m + 1)))
        shared, own = q[:, 0], q[:, 1:].T
    else:
        shared = rng.normal(size=d)
        shared /= np.linalg.norm(shared)
        own = rng.normal(size=(m, d))
        own -= np.outer(own @ shared, shared)
        own /= np.linalg.norm(own, axis=1, keepdims=True)
    return math.sqrt(rho) * shared + math.sqrt(1.0 - rho) * own


def generate(spec):
    """Draw a dataset whose labels are noisy signs of ground-truth projections.

    Returns ``(dataset, W_true)``. Instances within ``margin`` of any
    ground-truth boundary are rejected and redrawn.
    """
    rng = make_rng(spec.seed)
    W = label_directions(spec.d, spec.m, spec.rho, rng)
    rows = []
    count = 0
    while count < spec.n:
        block = rng.normal(size=(max(64, 2 * (spec.n - count)), spec.d))
        ok = np.all(np.abs(block @ W.T) >= spec.margin, axis=1)
        rows.append(block[ok][: spec.n - count])
        count += len(rows[-1])
    X = np.vstack(rows)
    H = X @ W.T
    Y_clean = np.where(H > 0, 1.0, -1.0)

    # the generating directions must reproduce the clean labels exactly
    if np.any(np.abs(H) < spec.margin) or f1_scores(np.sign(H), Y_clean).micro_f1 != 1.0:
        raise RuntimeError("generated dataset failed the ground-truth consistency gate")

    flips = rng.uniform(size=Y_clean.shape) < spec.label_noise
    Y = np.where(flips, -Y_clean, Y_clean)
    splits = make_splits(spec.n, rng)
    meta = {"n": spec.n, "d": spec.d, "m": spec.m, "seed": spec.seed, "rho": spec.rho,
            "margin": spec.margin, "label_noise": spec.label_noise}
    return Dataset(X, Y, splits, None, meta), W


def standardize(dataset):
    """Center and scale features with statistics from the train split only.

    Returns ``(new_dataset, mean, std)``; constant features keep unit scale.
    """
    Xtr, _ = dataset.split("train")
    mean = Xtr.mean(axis=0)
    std = Xtr.std(axis=0)
    std = np.where(std > 0, std, 1.0)
    splits = {k: v.copy() for k, v in dataset.splits.items()}
    out = Dataset((dataset.X - mean) / std, dataset.Y.copy(), splits, None, dict(dataset.meta))
    return out, mean, std


def _sidecar_path(path):
    root, _ = os.path.splitext(path)
    return root + ".meta.json"


def save_csv(dataset, path):
    """Write features with 17 significant digits (exact round trip) plus a JSON sidecar."""
    header = [f"f{i}" for i in range(dataset.d)] + [f"l{j}" for j in range(dataset.m)]
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(header)
        for x, y in zip(dataset.X, dataset.Y):
            wr.writerow([format(v, ".17g") for v in x] + [str(int(v)) for v in y])
    side = {
        "schema_version": SCHEMA_VERSION,
        "n": dataset.n, "d": dataset.d, "m": dataset.m,
        "seed": dataset.meta.get("seed"), "rho": dataset.meta.get("rho"),
        "clipBox": None if dataset.clip_box is None else list(dataset.clip_box),
        "meta": dataset.meta,
        "splits": {k: v.tolist() for k, v in dataset.splits.items()},
    }
    with open(_sidecar_path(path), "w") as fh:
        json.dump(side, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _parse_header(header):
    d = sum(1 for h in header if h.startswith("f"))
    expected = [f"f{i}" for i in range(d)] + [f"l{j}" for j in range(len(header) - d)]
    if not header or header != expected or d == len(header) or d == 0:
        raise ValueError("missing header: expected f0,...,f{d-1},l0,...,l{m-1}")
    return d, len(header) - d


def load_csv(path, split_seed=0):
    """Read a dataset CSV; splits come from the sidecar when present."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ValueError("missing header: file is empty")
        d, m = _parse_header([h.strip() for h in header])
        X, Y = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != d + m:
                raise ValueError(f"line {lineno}: expected {d + m} fields, got {len(row)}")
            try:
                vals = [float(v) for v in row]
            except ValueError as exc:
                raise ValueError(f"line {lineno}: {exc}") from None
            labels = vals[d:]
            if any(v not in (-1.0, 1.0) for v in labels):
                raise ValueError(f"line {lineno}: label value outside {{-1, 1}}: {row[d:]}")
            if not all(math.isfinite(v) for v in vals[:d]):
                raise ValueError(f"line {lineno}: non-finite feature value")
            X.append(vals[:d])
            Y.append(labels)
    if not X:
        raise ValueError("dataset has no rows")
    X = np.array(X, dtype=np.float64)
    Y = np.array(Y, dtype=np.float64)
    side_path = _sidecar_path(path)
    clip, meta = None, {}
    if os.path.exists(side_path):
        with open(side_path) as fh:
            side = json.load(fh)
        splits = {k: np.asarray(v, dtype=np.int64) for k, v in side["splits"].items()}
        clip = None if side.get("clipBox") is None else tuple(side["clipBox"])
        meta = side.get("meta", {})
    else:
        splits = make_splits(len(X), make_rng(split_seed))
    return Dataset(X, Y, splits, clip, meta)
