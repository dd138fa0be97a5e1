import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from attackability.errors import EnumerationCapError
from attackability.models import LinearModel
from attackability.sae import (TransferVectors, c_wz, directional_attackability, reg_weights,
                               sae_bruteforce, sae_greedy, sae_regularizer_value, sae_score,
                               transfer_vectors)

from conftest import random_linear


def subset_max_oracle(a):
    """Plain itertools enumeration of every label subset."""
    best = 0.0
    for r in range(1, len(a) + 1):
        for S in itertools.combinations(range(len(a)), r):
            s = np.zeros(a.shape[1])
            for j in S:
                s = s + a[j]
            best = max(best, math.sqrt(sum(t * t for t in s)))
    return best


class TestDirectional:
    def test_identity_example(self):
        model = LinearModel(np.eye(2), np.zeros(2))
        r = -np.ones(2) / math.sqrt(2)
        assert abs(directional_attackability(model, [1.0, 1.0], r) - math.sqrt(2)) < 1e-12

    def test_orthogonal_direction(self):
        model = LinearModel(np.array([[1.0, 0.0, 0.0], [2.0, 0.0, 0.0]]), np.zeros(2))
        assert directional_attackability(model, [1.0, 1.0, 1.0], [0.0, 0.0, 1.0]) == 0.0

    def test_matches_regrouped_sum(self, rng):
        for _ in range(100):
            model = random_linear(rng, d=6, m=5)
            x = rng.normal(size=6)
            r = rng.normal(size=6)
            r /= np.linalg.norm(r)
            h = model.scores(x)[0]
            # group the labels pushed toward their boundary and add their terms
            S = [j for j in range(5) if -(r @ model.W[j]) / h[j] > 0]
            regrouped = sum(-(r @ model.W[j]) / h[j] for j in S)
            assert abs(directional_attackability(model, x, r) - regrouped) <= 1e-10 * max(1, abs(regrouped))

    def test_near_boundary_score(self):
        model = LinearModel(np.eye(2), np.zeros(2))
        with pytest.raises(ValueError, match="near-boundary score"):
            directional_attackability(model, [0.0, 1.0], [1.0, 0.0])
        # a zero score sits on the negative side and clamps to -1e-6
        assert directional_attackability(model, [0.0, 1.0], [1.0, 0.0], clamp=True) == pytest.approx(1e6)

    def test_requires_unit_direction(self):
        with pytest.raises(ValueError, match="unit"):
            directional_attackability(LinearModel(np.eye(2), np.zeros(2)), [1.0, 1.0], [1.0, 1.0])


class TestGreedy:
    def test_single_label(self):
        s = sae_greedy(np.array([[-1.0, 0.0]]))
        assert s.phi == 1.0 and s.subset == (0,)

    def test_orthogonal_pair_combines(self):
        s = sae_greedy(np.eye(2))
        assert s.subset == (0, 1) and abs(s.phi - math.sqrt(2)) < 1e-15

    def test_zero_vectors_give_empty_subset(self):
        s = sae_greedy(np.zeros((3, 2)))
        assert s.phi == 0.0 and s.subset == ()

    def test_never_exceeds_bruteforce(self, rng):
        for t in range(200):
            m = int(rng.integers(1, 11))
            a = rng.normal(size=(m, 4))
            if t % 4 == 0:
                a = np.abs(a)  # nonnegative pairwise inner products
            g, b = sae_greedy(a), sae_bruteforce(a)
            assert g.phi <= b.phi + 1e-12
            if np.all(a @ a.T >= 0):
                assert abs(g.phi - b.phi) <= 1e-12 * b.phi

    def test_lower_and_upper_bounds(self, rng):
        for _ in range(200):
            a = rng.normal(size=(int(rng.integers(1, 9)), 3))
            norms = np.linalg.norm(a, axis=1)
            g, b = sae_greedy(a), sae_bruteforce(a)
            assert g.phi >= norms.max() - 1e-12
            assert b.phi <= norms.sum() + 1e-12

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 2**31 - 1), st.floats(1e-3, 1e3))
    def test_scale_covariance(self, seed, c):
        a = np.random.default_rng(seed).normal(size=(6, 3))
        for solve in (sae_greedy, sae_bruteforce):
            s0, s1 = solve(a), solve(c * a)
            assert s0.subset == s1.subset
            assert abs(s1.phi - c * s0.phi) <= 1e-10 * c * s0.phi

    def test_accepts_transfer_vectors(self):
        tv = TransferVectors(a=np.eye(2), denom=np.ones(2))
        assert sae_greedy(tv).subset == (0, 1)

    def test_rejects_other_norms(self):
        with pytest.raises(ValueError):
            sae_greedy(np.eye(2), q=1)


class TestBruteforce:
    def test_all_zero(self):
        s = sae_bruteforce(np.zeros((4, 3)))
        assert s.phi == 0.0 and s.subset == ()

    def test_opposing_vectors(self):
        s = sae_bruteforce(np.array([[1.0, 0.0], [-1.0, 0.0]]))
        assert s.phi == 1.0 and s.subset == (0,)

    def test_matches_itertools_enumeration(self, rng):
        for _ in range(50):
            a = rng.normal(size=(int(rng.integers(1, 9)), 3))
            assert abs(sae_bruteforce(a).phi - subset_max_oracle(a)) <= 1e-12

    def test_dual_direction_characterization(self, rng):
        a = rng.normal(size=(8, 5))
        best = sae_bruteforce(a)
        dirs = rng.normal(size=(10_000, 5))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        sampled = np.maximum(dirs @ a.T, 0.0).sum(axis=1)
        assert sampled.max() <= best.phi + 1e-12
        s = a[list(best.subset)].sum(axis=0)
        r = s / np.linalg.norm(s)
        assert np.maximum(a @ r, 0.0).sum() >= best.phi - 1e-9

    def test_enumeration_cap(self):
        with pytest.raises(EnumerationCapError, match="enumeration cap"):
            sae_bruteforce(np.ones((21, 2)))


class TestRegularizerForm:
    def test_confident_instance_is_barely_penalized(self):
        model = LinearModel(np.eye(2), np.zeros(2))
        s = sae_regularizer_value(model, [30.0, -30.0], [1.0, -1.0])
        assert s.phi < 1e-12

    def test_denominators(self):
        assert abs(1.0 / reg_weights(-1.0, 1.0, 0.01) - 0.367879) < 1e-6
        assert 1.0 / reg_weights(-10.0, 1.0, 0.01) == pytest.approx(0.01, rel=1e-12)
        model = LinearModel(np.array([[-1.0]]), np.zeros(1))
        tv = transfer_vectors(model, [1.0], y=[1.0], alpha=0.01)
        assert tv.kind == "reg" and abs(tv.denom[0] - math.exp(-1)) < 1e-15

    def test_alpha_must_be_positive(self):
        with pytest.raises(ValueError):
            sae_regularizer_value(LinearModel(np.eye(1), np.zeros(1)), [1.0], [1.0], alpha=0.0)

    def test_raw_score_clamps_zero_scores(self):
        model = LinearModel(np.eye(2), np.zeros(2))
        s = sae_score(model, [0.0, 1.0])
        assert math.isfinite(s.phi) and s.phi >= 1e6


class TestCwz:
    def test_aligned_rows(self):
        assert c_wz(np.array([[1.0, 0.0], [1.0, 0.0]]), [1, 1])[0] == 2.0

    def test_orthonormal_rows(self):
        assert abs(c_wz(np.eye(2), [1, 1])[0] - math.sqrt(2)) < 1e-15

    def test_shares_the_subset_oracle(self, rng):
        for _ in range(50):
            W = rng.normal(size=(6, 4))
            y = np.where(rng.normal(size=6) > 0, 1.0, -1.0)
            value, subset = c_wz(W, y)
            b = sae_bruteforce(y[:, None] * W)
            assert value == b.phi and subset == b.subset

    def test_bounded_by_row_norm_sum(self, rng):
        for _ in range(200):
            W = rng.normal(size=(int(rng.integers(1, 8)), 3))
            y = np.where(rng.normal(size=len(W)) > 0, 1.0, -1.0)
            assert c_wz(W, y)[0] <= np.linalg.norm(W, axis=1).sum() + 1e-12
