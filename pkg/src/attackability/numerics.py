"""Dense linear-algebra helpers: norms, cosine, one-sided Jacobi SVD, seeded RNG.

All arrays are float64. The random generator is numpy's PCG64 bit generator,
which produces identical streams for identical seeds on every platform.
"""

import math

import numpy as np

from .errors import ConvergenceError

_EPS = np.finfo(np.float64).eps


def as_vector(v, name="vector"):
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1:
        raise ValueError(f"{name} must be 1-d, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValueError(f"{name} has non-finite entries")
    return v


def as_matrix(a, name="matrix"):
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.size == 0:
        raise ValueError(f"{name} must be a non-empty 2-d array, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} has non-finite entries")
    return a


def norm(v, p=2):
    """L1, L2 or L-infinity norm of a vector."""
    v = as_vector(v)
    if p == 1:
        return float(np.sum(np.abs(v)))
    if p == 2:
        # scale first so huge/tiny entries do not overflow the squares
        scale = np.max(np.abs(v)) if v.size else 0.0
        if scale == 0.0:
            return 0.0
        w = v / scale
        return float(scale * math.sqrt(float(np.dot(w, w))))
    if p == math.inf:
        return float(np.max(np.abs(v))) if v.size else 0.0
    raise ValueError(f"unsupported norm order: {p!r}")


def cosine(u, v):
    u = as_vector(u, "u")
    v = as_vector(v, "v")
    if u.shape != v.shape:
        raise ValueError(f"shape mismatch {u.shape} vs {v.shape}")
    nu, nv = norm(u), norm(v)
    if nu == 0.0 or nv == 0.0:
        raise ValueError("undefined cosine for zero-norm input")
    c = float(np.dot(u / nu, v / nv))
    return min(1.0, max(-1.0, c))


def _round_robin(n):
    """Pairings for a round-robin tournament over n (even) players."""
    players = list(range(n))
    rounds = []
    for _ in range(n - 1):
        half = n // 2
        rounds.append((np.array(players[:half]), np.array(players[half:][::-1])))
        players = [players[0]] + [players[-1]] + players[1:-1]
    return rounds


def svd(a, max_sweeps=80):
    """Thin SVD by one-sided (Hestenes) Jacobi rotations.

    Returns ``(U, s, V)`` with ``a == U @ np.diag(s) @ V.T``, singular values
    in descending order and orthonormal columns in U (m x k) and V (n x k),
    k = min(m, n). Disjoint column pairs are rotated together, one
    round-robin round at a time.
    """
    a = as_matrix(a)
    m, n = a.shape
    if m < n:
        v, s, u = svd(a.T, max_sweeps=max_sweeps)
        return u, s, v

    work = a.copy()
    vmat = np.eye(n)
    npad = n + (n % 2)
    if npad != n:
        work = np.hstack([work, np.zeros((m, 1))])
        vmat = np.pad(vmat, ((0, 1), (0, 1)))
    rounds = _round_robin(npad) if npad > 1 else []
    tol = _EPS * max(m, 1)
    # columns at rounding-noise level carry no direction worth orthogonalizing
    floor = (_EPS * float(np.sqrt(np.sum(a * a)))) ** 2

    off = 0.0
    for _ in range(max_sweeps):
        off = 0.0
        rotated = False
        for p, q in rounds:
            up, uq = work[:, p], work[:, q]
            alpha = np.einsum("ij,ij->j", up, up)
            beta = np.einsum("ij,ij->j", uq, uq)
            gamma = np.einsum("ij,ij->j", up, uq)
            denom = np.sqrt(alpha * beta)
            live = (alpha > floor) & (beta > floor)
            with np.errstate(divide="ignore", invalid="ignore"):
                rel = np.where(live, np.abs(gamma) / denom, 0.0)
            off = max(off, float(rel.max(initial=0.0)))
            act = rel > tol
            if not act.any():
                continue
            rotated = True
            g = np.where(act, gamma, 1.0)
            zeta = (beta - alpha) / (2.0 * g)
            sgn = np.where(zeta >= 0, 1.0, -1.0)
            t = sgn / (np.abs(zeta) + np.hypot(1.0, zeta))
            c = 1.0 / np.hypot(1.0, t)
            s_ = c * t
            c = np.where(act, c, 1.0)
            s_ = np.where(act, s_, 0.0)
            new_p = c * up - s_ * uq
            new_q = s_ * up + c * uq
            work[:, p], work[:, q] = new_p, new_q
            vp, vq = vmat[:, p], vmat[:, q]
            vmat[:, p], vmat[:, q] = c * vp - s_ * vq, s_ * vp + c * vq
        if not rotated:
            break
    else:
        raise ConvergenceError("Jacobi SVD did not converge", off)

    work = work[:, :n]
    vmat = vmat[:n, :n]
    sv = np.sqrt(np.einsum("ij,ij->j", work, work))
    order = np.argsort(-sv, kind="stable")
    sv, work, vmat = sv[order], work[:, order], vmat[:, order]

    smax = sv[0] if n else 0.0
    keep = sv > smax * n * _EPS * 8 if smax > 0 else np.zeros(n, dtype=bool)
    u = np.zeros((m, n))
    u[:, keep] = work[:, keep] / sv[keep]
    r = int(keep.sum())
    if r < n:
        # rank-deficient: complete U with an orthonormal basis of the complement
        basis, _ = np.linalg.qr(np.hstack([u[:, :r], np.eye(m)]))
        u[:, r:] = basis[:, r:n]
    return u, sv, vmat


def make_rng(seed):
    """PCG64-backed generator; equal seeds give identical streams everywhere."""
    return np.random.Generator(np.random.PCG64(int(seed)))


def derive_seed(seed, index):
    """Deterministic child seed for item ``index`` under a global ``seed``."""
    ss = np.random.SeedSequence([int(seed), int(index)])
    return int(ss.generate_state(1, dtype=np.uint64)[0])
