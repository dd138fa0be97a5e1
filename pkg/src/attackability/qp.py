"""Minimum-norm point of a polyhedron by dual coordinate ascent (Hildreth).

Solves, for a stack of K independent problems,

    minimize ||r||_2   subject to   G_k r <= c_k

through the dual ``max_{lam >= 0} -1/2 lam' Q lam - c' lam`` with
``Q = G G'`` and ``r = -G' lam``. Rows are normalized to unit length first,
so the dual variables and residuals are measured in input-space distance.

Extras on top of the textbook sweep:

* every few sweeps the current active set is solved exactly (finite
  termination once the active set is right);
* with a budget, any dual value above ``budget**2 / 2`` certifies that the
  optimum lies outside the budget ball and the problem is retired early;
* when the constraint rows are linearly dependent the system may be
  infeasible, which dual ascent can only reveal by very slow divergence.
  Those problems get an explicit LP feasibility check instead.
* degenerate problems where the sweeps stall are finished by the
  Lawson-Hanson reduction of least-distance programming to a
  nonnegative least-squares problem (solved by BVLS).
"""

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog, lsq_linear

from .errors import ConvergenceError

OPTIMAL = 0
OVER_BUDGET = 1
INFEASIBLE = 2


@dataclass(frozen=True, eq=False)
class QPResult:
    r: np.ndarray
    status: np.ndarray
    residual: np.ndarray

    @property
    def rnorm(self):
        return np.linalg.norm(self.r, axis=-1)


def _kkt_residual(Q, ch, lam):
    slack = -(np.einsum("kij,kj->ki", Q, lam) + ch)  # G r - c
    viol = np.maximum(slack, 0.0).max(axis=1)
    comp = np.abs(lam * slack).max(axis=1)
    return np.maximum(viol, comp)


def _lp_feasible(G, c):
    res = linprog(np.zeros(G.shape[1]), A_ub=G, b_ub=c, bounds=[(None, None)] * G.shape[1], method="highs")
    return res.status != 2


def _ldp(Gh, ch):
    """Min-norm r with Gh r <= ch via nonnegative least squares; returns (r, lam) or None if infeasible."""
    p, d = Gh.shape
    E = np.vstack([-Gh.T, -ch[None, :]])
    f = np.zeros(d + 1)
    f[-1] = 1.0
    u = lsq_linear(E, f, bounds=(0.0, np.inf), method="bvls", tol=1e-14).x
    res = E @ u - f
    if abs(res[-1]) < 1e-12:
        return None
    r = -res[:d] / res[-1]
    return r, u / (-res[-1])


def min_norm_batch(G, c, budget=None, tol=1e-10, max_sweeps=2000, polish_every=4):
    """Batched minimum-norm solve; see module docstring.

    Returns a ``QPResult`` whose ``status`` is OPTIMAL, OVER_BUDGET or
    INFEASIBLE per problem. ``r`` is only meaningful for OPTIMAL entries.
    Raises ``ConvergenceError`` when some problem is still unresolved after
    ``max_sweeps`` sweeps.
    """
    G = np.asarray(G, dtype=np.float64)
    c = np.asarray(c, dtype=np.float64)
    K, p, d = G.shape
    norms = np.sqrt(np.einsum("kpd,kpd->kp", G, G))
    zero = norms == 0.0
    status = np.full(K, OPTIMAL)
    status[np.any(zero & (c < 0), axis=1)] = INFEASIBLE

    safe = np.where(zero, 1.0, norms)
    Gh = G / safe[:, :, None]
    ch = np.where(zero, 1.0, c / safe)
    Q = np.einsum("kpd,kqd->kpq", Gh, Gh)
    diag = np.arange(p)
    Q[:, diag, diag] = 1.0

    nonzero_rows = (~zero).sum(axis=1)
    ranks = np.linalg.matrix_rank(Gh) if p > 1 else nonzero_rows
    for k in np.flatnonzero((np.asarray(ranks) < nonzero_rows) & (status == OPTIMAL)):
        rows = ~zero[k]
        if not _lp_feasible(Gh[k, rows], ch[k, rows]):
            status[k] = INFEASIBLE

    lam = np.zeros((K, p))
    residual = np.full(K, np.inf)
    residual[status == INFEASIBLE] = 0.0
    live = np.flatnonzero(status == OPTIMAL)
    half_budget = None if budget is None else 0.5 * float(budget) ** 2 * (1.0 + 1e-12)

    sweeps = 0
    while live.size:
        Ql, cl, ll = Q[live], ch[live], lam[live]
        for _ in range(polish_every):
            for i in range(p):
                g = np.einsum("kj,kj->k", Ql[:, i, :], ll) + cl[:, i]
                ll[:, i] = np.maximum(0.0, ll[:, i] - g)
        sweeps += polish_every

        # exact solve on the current active set
        act = ll > 0
        M = np.where(act[:, :, None] & act[:, None, :], Ql, np.eye(p))
        rhs = np.where(act, -cl, 0.0)
        cand = np.einsum("kij,kj->ki", np.linalg.pinv(M), rhs)
        cand = np.where(act, cand, 0.0)
        res_cd = _kkt_residual(Ql, cl, ll)
        res_pol = _kkt_residual(Ql, cl, cand)
        use = np.all(cand >= 0, axis=1) & (res_pol < res_cd)
        ll[use] = cand[use]
        res = np.where(use, res_pol, res_cd)

        lam[live] = ll
        residual[live] = res
        done = res <= tol
        if half_budget is not None:
            dual = -0.5 * np.einsum("ki,kij,kj->k", ll, Ql, ll) - np.einsum("ki,ki->k", cl, ll)
            over = (~done) & (dual > half_budget)
            status[live[over]] = OVER_BUDGET
            done = done | over
        live = live[~done]
        if live.size and sweeps >= max_sweeps:
            live = _finish_stalled(live, Gh, ch, Q, lam, status, residual, budget, tol)

    r = -np.einsum("kpd,kp->kd", Gh, lam)
    r[status == INFEASIBLE] = 0.0
    return QPResult(r=r, status=status, residual=residual)


def _finish_stalled(live, Gh, ch, Q, lam, status, residual, budget, tol):
    for k in live:
        out = _ldp(Gh[k], ch[k])
        if out is None:
            status[k] = INFEASIBLE
            residual[k] = 0.0
            continue
        r, lam[k] = out
        # badly conditioned systems give huge multipliers, so judge relative to scale
        slack = Gh[k] @ r - ch[k]
        scale = 1.0 + np.linalg.norm(r)
        res = max(slack.max(), np.abs(lam[k] * slack).max() / (1.0 + lam[k].max())) / scale
        if res > max(tol, 1e-8):
            raise ConvergenceError("minimum-norm QP did not converge", res)
        residual[k] = res
        if budget is not None and np.linalg.norm(r) > budget:
            status[k] = OVER_BUDGET
    return live[:0]
