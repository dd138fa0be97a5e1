"""Multi-label scoring models with analytic input and parameter gradients.

Two model families are supported:

* ``LinearModel``: ``h(x) = W x + b``
* ``MlpModel``: ``h(x) = W2 tanh(W1 x + b1) + b2``

Both expose batched scores, the input Jacobian (one gradient row per label)
and ``backprop``, which pulls derivatives taken with respect to the scores
*and* the input Jacobian back onto the parameters. The Jacobian pull-back is
what the transferability regularizers need, since they penalize functions of
the input gradients themselves.
"""

import json
from dataclasses import dataclass

import numpy as np

from .numerics import as_matrix, as_vector

SCHEMA_VERSION = 1


def _finite(arr, name):
    arr = np.array(arr, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} has non-finite entries")
    return arr


@dataclass(frozen=True, eq=False)
class Prediction:
    scores: np.ndarray
    signs: np.ndarray


def decision_signs(scores):
    """+1 where the score is strictly positive, -1 otherwise (ties go to -1)."""
    return np.where(np.asarray(scores) > 0, 1, -1).astype(np.int64)


@dataclass(frozen=True, eq=False)
class LinearModel:
    W: np.ndarray
    b: np.ndarray

    kind = "linear"
    param_names = ("W", "b")

    def __post_init__(self):
        W = _finite(as_matrix(self.W, "W"), "W")
        b = _finite(np.zeros(W.shape[0]) if self.b is None else self.b, "b").reshape(-1)
        if b.shape != (W.shape[0],):
            raise ValueError(f"bias shape {b.shape} does not match {W.shape[0]} labels")
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "b", b)

    @property
    def n_labels(self):
        return self.W.shape[0]

    @property
    def n_features(self):
        return self.W.shape[1]

    @property
    def output_weights(self):
        return self.W

    @property
    def output_weight_name(self):
        return "W"

    def params(self):
        return {"W": self.W, "b": self.b}

    def with_params(self, params):
        return LinearModel(params["W"], params["b"])

    def scores(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        return X @ self.W.T + self.b

    def input_jacobian(self, X):
        X = np.atleast_2d(X)
        return np.broadcast_to(self.W, (X.shape[0],) + self.W.shape)

    def backprop(self, X, dH, dJ=None):
        """Parameter gradients of a scalar given dL/dh (n, m) and dL/dJ (n, m, d)."""
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        gW = dH.T @ X
        if dJ is not None:
            gW = gW + dJ.sum(axis=0)
        return {"W": gW, "b": dH.sum(axis=0)}


@dataclass(frozen=True, eq=False)
class MlpModel:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    activation: str = "tanh"

    kind = "mlp"
    param_names = ("W1", "b1", "W2", "b2")

    def __post_init__(self):
        if self.activation != "tanh":
            raise ValueError(f"unsupported activation {self.activation!r}")
        W1 = _finite(as_matrix(self.W1, "W1"), "W1")
        W2 = _finite(as_matrix(self.W2, "W2"), "W2")
        b1 = _finite(self.b1, "b1").reshape(-1)
        b2 = _finite(self.b2, "b2").reshape(-1)
        if W2.shape[1] != W1.shape[0]:
            raise ValueError(f"W2 has {W2.shape[1]} columns, hidden width is {W1.shape[0]}")
        if b1.shape != (W1.shape[0],) or b2.shape != (W2.shape[0],):
            raise ValueError("bias shapes do not match layer widths")
        for name, val in (("W1", W1), ("b1", b1), ("W2", W2), ("b2", b2)):
            object.__setattr__(self, name, val)

    @property
    def n_labels(self):
        return self.W2.shape[0]

    @property
    def n_features(self):
        return self.W1.shape[1]

    @property
    def n_hidden(self):
        return self.W1.shape[0]

    @property
    def output_weights(self):
        return self.W2

    @property
    def output_weight_name(self):
        return "W2"

    def params(self):
        return {"W1": self.W1, "b1": self.b1, "W2": self.W2, "b2": self.b2}

    def with_params(self, params):
        return MlpModel(params["W1"], params["b1"], params["W2"], params["b2"])

    def hidden(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        return np.tanh(X @ self.W1.T + self.b1)

    def scores(self, X):
        return self.hidden(X) @ self.W2.T + self.b2

    def input_jacobian(self, X):
        t = self.hidden(X)
        s = 1.0 - t * t
        # J[n, j, a] = sum_i W2[j, i] s[n, i] W1[i, a]
        return np.einsum("ji,ni,ia->nja", self.W2, s, self.W1, optimize=True)

    def backprop(self, X, dH, dJ=None):
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        t = self.hidden(X)
        s = 1.0 - t * t
        gW2 = dH.T @ t
        dz = (dH @ self.W2) * s
        gW1 = np.zeros_like(self.W1)
        if dJ is not None:
            P = np.einsum("nja,ia->nji", dJ, self.W1, optimize=True)
            gW2 = gW2 + np.einsum("nji,ni->ji", P, s, optimize=True)
            gW1 = gW1 + np.einsum("nja,ji,ni->ia", dJ, self.W2, s, optimize=True)
            ds = np.einsum("nji,ji->ni", P, self.W2, optimize=True)
            dz = dz + ds * (-2.0 * t * s)
        gW1 = gW1 + dz.T @ X
        return {"W1": gW1, "b1": dz.sum(axis=0), "W2": gW2, "b2": dH.sum(axis=0)}


def init_linear(n_features, n_labels, rng, scale=0.01):
    return LinearModel(rng.normal(0.0, scale, size=(n_labels, n_features)), np.zeros(n_labels))


def init_mlp(n_features, n_hidden, n_labels, rng, scale=None):
    s1 = 1.0 / np.sqrt(n_features) if scale is None else scale
    s2 = 1.0 / np.sqrt(n_hidden) if scale is None else scale
    return MlpModel(
        rng.normal(0.0, s1, size=(n_hidden, n_features)),
        np.zeros(n_hidden),
        rng.normal(0.0, s2, size=(n_labels, n_hidden)),
        np.zeros(n_labels),
    )


def _check_x(model, x):
    x = as_vector(x, "x")
    if x.shape[0] != model.n_features:
        raise ValueError(f"dimension mismatch: model expects {model.n_features} features, got {x.shape[0]}")
    return x


def forward(model, x):
    """Scores and decision signs for a single instance."""
    x = _check_x(model, x)
    scores = model.scores(x[None, :])[0]
    return Prediction(scores=scores, signs=decision_signs(scores))


def input_gradient(model, x, j):
    """Gradient of label ``j``'s score with respect to the input."""
    x = _check_x(model, x)
    if not 0 <= j < model.n_labels:
        raise IndexError(f"label index {j} out of range for {model.n_labels} labels")
    return np.array(model.input_jacobian(x[None, :])[0, j])


def hinge_margin_grad(scores, Y):
    """dL/dh of the summed hinge loss; the kink (margin exactly 1) takes subgradient 0."""
    return np.where(Y * scores < 1.0, -Y, 0.0).astype(np.float64)


def param_gradients(model, x, y, loss="hinge"):
    """Parameter subgradients of sum_j max(0, 1 - y_j h_j(x)) for one instance."""
    if loss != "hinge":
        raise ValueError(f"unsupported loss {loss!r}")
    x = _check_x(model, x)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if y.shape != (model.n_labels,):
        raise ValueError(f"dimension mismatch: expected {model.n_labels} labels, got {y.shape[0]}")
    if not np.all(np.abs(y) == 1):
        raise ValueError("labels must be in {-1, +1}")
    h = model.scores(x[None, :])
    return model.backprop(x[None, :], hinge_margin_grad(h, y[None, :]))


def model_to_dict(model):
    params = model.params()
    dims = {"d": model.n_features, "m": model.n_labels}
    if model.kind == "mlp":
        dims["k"] = model.n_hidden
    return {
        "schema_version": SCHEMA_VERSION,
        "kind": model.kind,
        "dims": dims,
        "weights": {name: params[name].tolist() for name in model.param_names},
    }


def model_from_dict(doc):
    version = doc.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ValueError(f"model file schema_version {version!r} is not supported (expected {SCHEMA_VERSION})")
    w = doc["weights"]
    kind = doc.get("kind")
    if kind == "linear":
        model = LinearModel(np.array(w["W"], dtype=np.float64), np.array(w["b"], dtype=np.float64))
    elif kind == "mlp":
        model = MlpModel(*(np.array(w[k], dtype=np.float64) for k in MlpModel.param_names))
    else:
        raise ValueError(f"unknown model kind {kind!r}")
    dims = doc.get("dims", {})
    if dims.get("d") != model.n_features or dims.get("m") != model.n_labels:
        raise ValueError("model dims do not match weight shapes")
    return model


def save_model(model, path):
    with open(path, "w") as fh:
        json.dump(model_to_dict(model), fh, indent=1)
        fh.write("\n")


def load_model(path):
    with open(path) as fh:
        return model_from_dict(json.load(fh))
