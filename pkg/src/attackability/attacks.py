"""Evasion attacks and attackability counts for multi-label models.

The attacker wants one perturbation ``r`` with ``||r||_2 <= epsilon`` that
flips as many label decisions as possible. For a linear model and a fixed
target set ``T`` the cheapest such ``r`` is a small QP:

    min ||r||  s.t.  y_j h_j(x + r) <= -delta  (j in T)
                     y_j h_j(x + r) >= +delta  (j not in T)

Labels the model already gets wrong at ``x`` are left unconstrained and are
never counted: attackability counts decisions the perturbation turns from
correct to wrong, so a zero budget always yields zero.

``exact_attackability`` enumerates target sets, ``greedy_attackability`` grows
one label at a time, and ``pgd_attack`` handles non-linear models.
"""

import json
import math
from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .errors import EnumerationCapError
from .models import LinearModel, decision_signs, forward
from .numerics import as_vector, make_rng
from .qp import INFEASIBLE, OPTIMAL, min_norm_batch
from .sae import c_wz_batch

DELTA = 1e-6
EXACT_CAP = 12
SCHEMA_VERSION = 1


@dataclass(frozen=True)
class BudgetSpec:
    epsilon: float
    p: int = 2
    clip: tuple = None

    def __post_init__(self):
        if not math.isfinite(self.epsilon) or self.epsilon < 0:
            raise ValueError(f"epsilon must be finite and non-negative, got {self.epsilon}")
        if self.p != 2:
            raise ValueError("only L2 attack budgets are supported")
        if self.clip is not None:
            lo, hi = self.clip
            if not lo < hi:
                raise ValueError(f"clip box needs lo < hi, got {self.clip}")


@dataclass(frozen=True, eq=False)
class AttackOutcome:
    r: np.ndarray
    flipped: tuple
    rnorm: float
    feasible: bool
    method: str


def _labels(y, m):
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if y.shape != (m,) or not np.all(np.abs(y) == 1):
        raise ValueError(f"labels must be a length-{m} vector in {{-1, +1}}")
    return y


def _systems(model, X, Y, masks, delta, clip=None, free=None):
    """Constraint stacks (G, c) for instance rows X/Y and target masks.

    ``X``, ``Y``, ``masks`` and ``free`` are aligned along the first axis.
    Labels marked ``free`` (already misclassified) get an inert zero row.
    """
    W = model.W
    H = model.scores(X)
    marg = Y * H
    rows = Y[:, :, None] * W[None, :, :]
    sgn = np.where(masks, 1.0, -1.0)
    G = sgn[:, :, None] * rows
    c = np.where(masks, -delta - marg, marg - delta)
    if free is not None:
        G = np.where(free[:, :, None], 0.0, G)
        c = np.where(free, 1.0, c)
    if clip is not None:
        lo, hi = clip
        d = W.shape[1]
        eye = np.broadcast_to(np.eye(d), (len(X), d, d))
        G = np.concatenate([G, -eye, eye], axis=1)
        c = np.concatenate([c, X - lo, hi - X], axis=1)
    return G, c


def misclassified(model, X, Y):
    """Labels whose current decision already disagrees with ``Y``."""
    return decision_signs(model.scores(np.atleast_2d(X))) != np.atleast_2d(Y)


def _lower_bound(G, c):
    """Largest single-constraint distance: a cheap lower bound on ||r*||."""
    n = np.sqrt(np.einsum("kpd,kpd->kp", G, G))
    with np.errstate(divide="ignore", invalid="ignore"):
        need = np.where(n > 0, -c / n, np.where(c < 0, np.inf, 0.0))
    return np.maximum(need.max(axis=1), 0.0)


def _require_linear(model):
    if not isinstance(model, LinearModel):
        raise TypeError("this operation needs a LinearModel")


def min_norm_flip(model, x, y, T, delta=DELTA, clip=None):
    """Smallest L2 perturbation flipping exactly the labels in ``T``."""
    _require_linear(model)
    x = as_vector(x, "x")
    m = model.n_labels
    y = _labels(y, m)
    T = tuple(sorted(set(int(j) for j in T)))
    if not T:
        raise ValueError("target set T must be non-empty")
    if T[0] < 0 or T[-1] >= m:
        raise IndexError(f"target labels {T} out of range for {m} labels")
    mask = np.zeros((1, m), dtype=bool)
    mask[0, list(T)] = True
    G, c = _systems(model, x[None, :], y[None, :], mask, delta, clip)
    res = min_norm_batch(G, c)
    feasible = bool(res.status[0] != INFEASIBLE)
    r = res.r[0] if feasible else np.zeros_like(x)
    return AttackOutcome(r=r, flipped=T, rnorm=float(np.linalg.norm(r)), feasible=feasible, method="exact-qp")


def exact_attackability(model, x, y, budget, delta=DELTA):
    """Exact count of labels one budget-bounded perturbation can flip.

    Target sets (drawn from the correctly classified labels) are tried from
    largest to smallest; the first size with a feasible in-budget solution
    wins. Among equal sizes the smallest norm wins, then the
    lexicographically first set. Returns ``(count, witness)``.
    """
    _require_linear(model)
    x = as_vector(x, "x")
    m = model.n_labels
    if m > EXACT_CAP:
        raise EnumerationCapError(f"enumeration cap: exact attackability supports at most {EXACT_CAP} labels, got {m}")
    y = _labels(y, m)
    eps = budget.epsilon
    free = misclassified(model, x, y)[0]
    pool = np.flatnonzero(~free).tolist()
    for k in range(len(pool), -1, -1):
        combos = list(combinations(pool, k))
        masks = np.zeros((len(combos), m), dtype=bool)
        for i, T in enumerate(combos):
            masks[i, list(T)] = True
        Xk = np.broadcast_to(x, (len(combos), x.size))
        Yk = np.broadcast_to(y, (len(combos), m))
        Fk = np.broadcast_to(free, (len(combos), m))
        G, c = _systems(model, Xk, Yk, masks, delta, budget.clip, Fk)
        keep = np.flatnonzero(_lower_bound(G, c) <= eps)
        if keep.size == 0:
            continue
        res = min_norm_batch(G[keep], c[keep], budget=eps)
        rn = res.rnorm
        fits = (res.status == OPTIMAL) & (rn <= eps)
        if not fits.any():
            continue
        cand = np.flatnonzero(fits)
        best = cand[np.argmin(rn[cand])]
        r = res.r[best]
        return k, AttackOutcome(r=r, flipped=combos[keep[best]], rnorm=float(rn[best]),
                                feasible=True, method="exact-qp")
    return 0, AttackOutcome(r=np.zeros_like(x), flipped=(), rnorm=0.0, feasible=False, method="exact-qp")


def greedy_attack_batch(model, X, Y, budget, delta=DELTA, steps=100, step_size=None):
    """Greedy budgeted attack on every row of ``X``.

    Linear models: each round tries adding every remaining correctly
    classified label to the target set, solves the flip QP (target
    constraints only, other labels may flip along) for all candidates at once
    and keeps the cheapest in-budget candidate. Other models use
    ``pgd_attack`` for the candidate solves.

    The count is the number of initially correct labels whose decision is
    wrong at ``x + r``, which can exceed the target set when boundaries are
    aligned. Returns ``(counts, R, flipped_masks)``.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    Y = np.atleast_2d(np.asarray(Y, dtype=np.float64))
    if not isinstance(model, LinearModel):
        return _greedy_pgd_batch(model, X, Y, budget, steps, step_size)
    n, m = Y.shape
    eps = budget.epsilon
    T = np.zeros((n, m), dtype=bool)
    R = np.zeros_like(X)
    free = misclassified(model, X, Y)

    active = np.ones(n, dtype=bool)
    for _ in range(m):
        inst, lab = np.nonzero(active[:, None] & ~T & ~free)
        if inst.size == 0:
            break
        masks = T[inst].copy()
        masks[np.arange(inst.size), lab] = True
        G, c = _systems(model, X[inst], Y[inst], masks, delta, budget.clip, ~masks)
        rn = np.full(inst.size, np.inf)
        rs = np.zeros((inst.size, X.shape[1]))
        keep = np.flatnonzero(_lower_bound(G, c) <= eps)
        if keep.size:
            res = min_norm_batch(G[keep], c[keep], budget=eps)
            fit = (res.status == OPTIMAL) & (res.rnorm <= eps)
            rn[keep[fit]] = res.rnorm[fit]
            rs[keep] = res.r
        moved = np.zeros(n, dtype=bool)
        # candidates come ordered by (instance, label): first minimum = lowest label
        for i in np.unique(inst):
            sel = np.flatnonzero(inst == i)
            best = sel[np.argmin(rn[sel])]
            if np.isfinite(rn[best]):
                T[i, lab[best]] = True
                R[i] = rs[best]
                moved[i] = True
        active &= moved
        if not active.any():
            break
    F = misclassified(model, X + R, Y) & ~free
    return F.sum(axis=1), R, F


def greedy_attackability(model, x, y, budget, delta=DELTA, steps=100, step_size=None):
    """Greedy lower estimate of the attackability count; ``(count, outcome)``."""
    x = as_vector(x, "x")
    y = _labels(y, model.n_labels)
    counts, R, T = greedy_attack_batch(model, x[None, :], y[None, :], budget, delta, steps, step_size)
    method = "greedy" if isinstance(model, LinearModel) else "pgd"
    r = R[0]
    return int(counts[0]), AttackOutcome(r=r, flipped=tuple(np.flatnonzero(T[0]).tolist()),
                                         rnorm=float(np.linalg.norm(r)), feasible=True, method=method)


def _project(x, r, eps, clip):
    nr = np.linalg.norm(r)
    if nr > eps:
        r = r * (eps / nr)
    if clip is not None:
        r = np.clip(x + r, clip[0], clip[1]) - x
    return r


def pgd_attack(model, x, y, T, budget, steps=100, step_size=None, seed=0, random_start=False):
    """L2 projected gradient attack pushing every label in ``T`` across its boundary.

    Descends ``sum_{j in T} y_j h_j(x + r)`` with normalized gradient steps,
    projecting onto the budget ball (and clip box) after each step. Stops at
    the first step where all target margins are <= 0 and then bisects back
    along the last step to the boundary crossing.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    x = as_vector(x, "x")
    m = model.n_labels
    y = _labels(y, m)
    T = tuple(sorted(set(int(j) for j in T)))
    idx = list(T)
    eps = budget.epsilon
    step = 2.5 * eps / steps if step_size is None else step_size

    def feasible(r):
        return bool(np.all(y[idx] * model.scores((x + r)[None, :])[0, idx] <= 0))

    def outcome(r, ok):
        return AttackOutcome(r=r, flipped=T, rnorm=float(np.linalg.norm(r)), feasible=ok, method="pgd")

    r = np.zeros_like(x)
    if random_start and eps > 0:
        rng = make_rng(seed)
        u = rng.normal(size=x.size)
        r = _project(x, u / np.linalg.norm(u) * eps * rng.uniform() ** (1.0 / x.size), eps, budget.clip)
    if feasible(r):
        return outcome(r, True)
    if eps == 0:
        return outcome(np.zeros_like(x), False)
    for _ in range(steps):
        J = model.input_jacobian((x + r)[None, :])[0]
        g = y[idx] @ J[idx]
        gn = np.linalg.norm(g)
        if gn == 0:
            break
        r_new = _project(x, r - step * g / gn, eps, budget.clip)
        if feasible(r_new):
            lo, hi = 0.0, 1.0
            for _ in range(50):
                mid = 0.5 * (lo + hi)
                if feasible(r + mid * (r_new - r)):
                    hi = mid
                else:
                    lo = mid
            return outcome(r + hi * (r_new - r), True)
        r = r_new
    return outcome(r, False)


def _greedy_pgd_batch(model, X, Y, budget, steps, step_size):
    n, m = Y.shape
    counts = np.zeros(n, dtype=np.int64)
    R = np.zeros_like(X)
    F = np.zeros((n, m), dtype=bool)
    for i in range(n):
        x, y = X[i], Y[i]
        wrong = decision_signs(model.scores(x[None, :])[0]) != y
        pool = np.flatnonzero(~wrong).tolist()
        T = set()
        r = np.zeros_like(x)
        while len(T) < len(pool):
            best = None
            for j in pool:
                if j in T:
                    continue
                out = pgd_attack(model, x, y, T | {j}, budget, steps=steps, step_size=step_size)
                if out.feasible and (best is None or out.rnorm < best[1].rnorm):
                    best = (j, out)
            if best is None:
                break
            T.add(best[0])
            r = best[1].r
        R[i] = r
        F[i] = (decision_signs(model.scores((x + r)[None, :])[0]) != y) & ~wrong
        counts[i] = int(F[i].sum())
    return counts, R, F


def verify_outcome(model, x, y, outcome, exact=True):
    """Re-check an outcome's sign pattern with a fresh forward pass."""
    if not outcome.feasible:
        return True
    pred = forward(model, np.asarray(x) + outcome.r)
    marg = np.asarray(y) * pred.scores
    inside = np.zeros(model.n_labels, dtype=bool)
    inside[list(outcome.flipped)] = True
    if np.any(marg[inside] > 0):
        return False
    return not exact or bool(np.all(marg[~inside] > 0))


def hinge_per_instance(model, X, Y):
    return np.maximum(0.0, 1.0 - Y * model.scores(X)).sum(axis=1)


def adversarial_risk_report(model, X, Y, epsilon):
    """Clean hinge risk, a per-label worst-case upper estimate, and the
    clean-risk-plus-transferability bound ``clean + eps * mean_i C_{W, z_i}``."""
    _require_linear(model)
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    Y = np.atleast_2d(np.asarray(Y, dtype=np.float64))
    clean = float(hinge_per_instance(model, X, Y).mean())
    wn = np.linalg.norm(model.W, axis=1)
    worst = float(np.maximum(0.0, 1.0 - Y * model.scores(X) + epsilon * wn).sum(axis=1).mean())
    cvals, _ = c_wz_batch(model.W, Y)
    return {
        "cleanRisk": clean,
        "worstCaseRiskUB": worst,
        "transferBound": clean + epsilon * float(cvals.mean()),
    }


def write_outcomes_jsonl(path, records):
    """One JSON object per line: index, count key, rnorm, flipped labels."""
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps({"schema_version": SCHEMA_VERSION, **rec}, sort_keys=True) + "\n")


def read_outcomes_jsonl(path):
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]
