"""Soft attackability estimation.

For an instance ``x`` every label contributes a *transfer vector*

    a_j = -grad h_j(x) / h_j(x)                      (raw score form)
    a_j = -y_j grad h_j(x) / max(exp(y_j h_j(x)), alpha)   (regularizer form)

and the attackability score is the largest Euclidean norm reachable by summing
a subset of them, ``phi = max_S || sum_{j in S} a_j ||_2``. That subset maximum
equals the maximum over unit directions ``r`` of ``sum_j max(r . a_j, 0)``.

Subset sums are always accumulated label by label in index order (see
``_masked_sums``), so the same subset yields bit-identical ``phi`` whichever
solver found it.

Only the Euclidean case (p = q = 2) is implemented.

Note on labels: the raw form ignores ``y`` (it measures how easily the current
decisions flip), while the regularizer form multiplies by ``y_j``; the two are
kept separate on purpose.
"""

from dataclasses import dataclass

import numpy as np

from .errors import EnumerationCapError
from .numerics import as_matrix, as_vector

ETA = 1e-6
DEFAULT_ALPHA = 0.01
BRUTE_FORCE_CAP = 20


@dataclass(frozen=True, eq=False)
class TransferVectors:
    a: np.ndarray
    denom: np.ndarray
    kind: str = "raw"


@dataclass(frozen=True, eq=False)
class SaeScore:
    phi: float
    subset: tuple
    per_label_terms: np.ndarray


def clamp_scores(h, eta=ETA):
    """Push |h| up to eta keeping the decision side (0 counts as negative)."""
    h = np.asarray(h, dtype=np.float64)
    return np.where(np.abs(h) >= eta, h, np.where(h > 0, eta, -eta))


def raw_denominators(h, clamp=False, eta=ETA):
    h = np.asarray(h, dtype=np.float64)
    if np.any(np.abs(h) < eta):
        if not clamp:
            bad = np.flatnonzero(np.abs(h) < eta).tolist()
            raise ValueError(f"near-boundary score: |h_j| < {eta:g} for labels {bad}")
        h = clamp_scores(h, eta)
    return h


def reg_weights(h, y, alpha=DEFAULT_ALPHA):
    """1 / max(exp(y h), alpha), computed without overflow."""
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    with np.errstate(over="ignore"):
        return np.minimum(np.exp(-y * h), 1.0 / alpha)


def batch_transfer_vectors(model, X, Y=None, alpha=None, clamp=True, eta=ETA):
    """Stacked transfer vectors, shape (n, m, d).

    With ``Y`` and ``alpha`` given the regularizer form is produced, otherwise
    the raw form with (optionally clamped) score denominators.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    H = model.scores(X)
    J = model.input_jacobian(X)
    if Y is None or alpha is None:
        denom = raw_denominators(H, clamp=clamp, eta=eta)
        return -J / denom[:, :, None], denom
    Y = np.atleast_2d(np.asarray(Y, dtype=np.float64))
    w = reg_weights(H, Y, alpha)
    with np.errstate(divide="ignore"):
        denom = 1.0 / w
    return -(Y * w)[:, :, None] * J, denom


def transfer_vectors(model, x, y=None, alpha=None, clamp=False, eta=ETA):
    x = as_vector(x, "x")
    A, denom = batch_transfer_vectors(model, x[None, :], None if y is None else np.asarray(y)[None, :],
                                      alpha, clamp=clamp, eta=eta)
    kind = "raw" if (y is None or alpha is None) else "reg"
    return TransferVectors(a=np.array(A[0]), denom=denom[0], kind=kind)


def directional_attackability(model, x, rdir, y=None, alpha=None, clamp=False):
    """Soft attackability of ``x`` along the unit direction ``rdir``.

    Sums, over labels, the positive part of the first-order fraction of the
    decision margin that a unit step along ``rdir`` removes.
    """
    rdir = as_vector(rdir, "rdir")
    if abs(np.linalg.norm(rdir) - 1.0) > 1e-9:
        raise ValueError("rdir must have unit L2 norm")
    tv = transfer_vectors(model, x, y=y, alpha=alpha, clamp=clamp)
    return float(np.sum(np.maximum(tv.a @ rdir, 0.0)))


def _masked_sums(masks, a):
    """Row-wise sums of the selected vectors, accumulated in label order."""
    masks = np.asarray(masks, dtype=bool)
    out = np.zeros((masks.shape[0], a.shape[1]))
    for j in range(a.shape[0]):
        out += np.where(masks[:, j, None], a[j], 0.0)
    return out


def _row_norms(v):
    acc = np.zeros(v.shape[0])
    for t in range(v.shape[1]):
        acc += v[:, t] * v[:, t]
    return np.sqrt(acc)


def _as_vectors(vectors):
    a = vectors.a if isinstance(vectors, TransferVectors) else vectors
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] < 1:
        raise ValueError(f"expected an (m, d) array of transfer vectors, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("transfer vectors must be finite")
    return a


def _score_from_mask(a, mask):
    s = _masked_sums(mask[None, :], a)
    phi = float(_row_norms(s)[0])
    terms = np.zeros(a.shape[0])
    if phi > 0:
        terms[mask] = a[mask] @ (s[0] / phi)
    return SaeScore(phi=phi, subset=tuple(np.flatnonzero(mask).tolist()), per_label_terms=terms)


def greedy_select(A):
    """Greedy subset selection for a stack of instances.

    ``A`` has shape (n, m, d). Starting from the empty set, each round adds
    the unselected label whose vector gives the largest norm of the running
    sum, lowest index on ties; an instance stops as soon as the best addition
    fails to strictly increase the norm. Returns a boolean (n, m) mask.
    """
    A = np.asarray(A, dtype=np.float64)
    n, m, _ = A.shape
    chosen = np.zeros((n, m), dtype=bool)
    cur = np.zeros((n, A.shape[2]))
    best = np.zeros(n)
    active = np.ones(n, dtype=bool)
    rows = np.arange(n)
    for _ in range(m):
        if not active.any():
            break
        cand = cur[:, None, :] + A
        nrm = np.sqrt(np.einsum("nmd,nmd->nm", cand, cand))
        nrm[chosen] = -np.inf
        j = np.argmax(nrm, axis=1)
        cb = nrm[rows, j]
        take = active & (cb > best)
        chosen[rows[take], j[take]] = True
        cur[take] = cand[rows[take], j[take]]
        best[take] = cb[take]
        active = take
    return chosen


def sae_greedy(vectors, q=2):
    if q != 2:
        raise ValueError("only the Euclidean dual norm (q=2) is supported")
    a = _as_vectors(vectors)
    mask = greedy_select(a[None, :, :])[0]
    return _score_from_mask(a, mask)


def _all_masks(m, start, stop):
    codes = np.arange(start, stop, dtype=np.int64)
    return ((codes[:, None] >> np.arange(m)) & 1).astype(bool)


def sae_bruteforce(vectors, max_labels=BRUTE_FORCE_CAP):
    """Exact subset maximum by enumerating all 2^m label subsets.

    Ties (after exact recomputation) go to the lexicographically smallest
    sorted index tuple, so an all-zero instance yields the empty subset.
    """
    a = _as_vectors(vectors)
    m = a.shape[0]
    if m > max_labels:
        raise EnumerationCapError(f"enumeration cap: {m} labels exceeds the limit of {max_labels}")
    total = 1 << m
    chunk = 1 << 16
    approx = np.empty(total)
    for start in range(0, total, chunk):
        masks = _all_masks(m, start, min(total, start + chunk))
        sums = masks.astype(np.float64) @ a
        approx[start:start + len(masks)] = np.sqrt(np.einsum("kd,kd->k", sums, sums))
    top = approx.max()
    if top == 0.0:
        return _score_from_mask(a, np.zeros(m, dtype=bool))
    codes = np.flatnonzero(approx >= top * (1.0 - 1e-9))
    masks = ((codes[:, None] >> np.arange(m)) & 1).astype(bool)
    exact = _row_norms(_masked_sums(masks, a))
    winners = masks[exact == exact.max()]
    best = min(winners, key=lambda mk: tuple(np.flatnonzero(mk)))
    return _score_from_mask(a, best)


def sae_score(model, x, clamp=True):
    """Raw attackability score of ``x`` (greedy subset search)."""
    return sae_greedy(transfer_vectors(model, x, clamp=clamp))


def sae_scores(model, X, clamp=True):
    """Greedy raw scores for every row of ``X``; returns (phi, masks)."""
    A, _ = batch_transfer_vectors(model, X, clamp=clamp)
    masks = greedy_select(A)
    phi = np.array([_row_norms(_masked_sums(masks[i:i + 1], A[i]))[0] for i in range(len(masks))])
    return phi, masks


def sae_regularizer_value(model, x, y, alpha=DEFAULT_ALPHA):
    """Margin-weighted score used as the training penalty, greedy solved."""
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    return sae_greedy(transfer_vectors(model, x, y=y, alpha=alpha))


def c_wz(W, y, max_exact=BRUTE_FORCE_CAP):
    """max_S || sum_{j in S} y_j w_j ||_2 over label subsets S.

    Exact enumeration up to ``max_exact`` labels, greedy beyond.
    Returns ``(value, subset)``.
    """
    W = as_matrix(W, "W")
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if y.shape != (W.shape[0],):
        raise ValueError(f"expected {W.shape[0]} labels, got {y.shape[0]}")
    vecs = y[:, None] * W
    score = sae_bruteforce(vecs, max_exact) if W.shape[0] <= max_exact else sae_greedy(vecs)
    return score.phi, score.subset


def c_wz_batch(W, Y, max_exact=BRUTE_FORCE_CAP):
    """C_{W,z} for every label row of ``Y``; returns (values (n,), masks (n, m))."""
    Y = np.atleast_2d(np.asarray(Y, dtype=np.float64))
    uniq, inverse = np.unique(Y, axis=0, return_inverse=True)
    inverse = np.asarray(inverse).reshape(-1)
    vals = np.empty(len(uniq))
    masks = np.zeros(uniq.shape, dtype=bool)
    for u, yrow in enumerate(uniq):
        value, subset = c_wz(W, yrow, max_exact)
        vals[u] = value
        masks[u, list(subset)] = True
    return vals[inverse], masks[inverse]
