"""Triplet objective: per-triplet loss/gradients, mining, batch assembly."""

import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spdhash.errors import DomainError, ShapeError
from spdhash.objective import (
    IMAGE,
    VIDEO,
    ObjectiveConfig,
    batch_objective,
    mine_triplets,
    triplet_grads,
    triplet_loss,
)


def random_batch(seed, n=8, K=4, classes=3):
    rng = np.random.default_rng(seed)
    codes = rng.uniform(0.05, 0.95, (n, K))
    labels = rng.integers(0, classes, n)
    mods = [IMAGE if rng.random() < 0.5 else VIDEO for _ in range(n)]
    return codes, labels, mods


class TestTripletLoss:
    def test_satisfied_margin_is_zero(self):
        bu = np.array([0.5, 0.5])
        bw = np.array([0.5 + np.sqrt(2.5), 0.5 + np.sqrt(2.5)])
        assert triplet_loss(bu, bu, bw, 2.0) == 0.0

    def test_all_equal_gives_margin(self):
        b = np.array([0.3, 0.7, 0.2])
        assert triplet_loss(b, b, b, 2.0) == 2.0

    def test_hand_value(self):
        got = triplet_loss([0.9, 0.1], [0.8, 0.2], [0.2, 0.8], 2.0)
        assert abs(got - 1.04) < 1e-12

    def test_length_mismatch(self):
        with pytest.raises(ShapeError):
            triplet_loss([0.5], [0.5, 0.5], [0.5], 1.0)


class TestTripletGrads:
    def test_inactive_gives_exact_zeros(self):
        bu = np.array([0.5, 0.5])
        bw = bu + 10.0
        gu, gv, gw = triplet_grads(bu, bu, bw, 0.1)
        assert np.all(gu == 0.0) and np.all(gv == 0.0) and np.all(gw == 0.0)

    def test_plateau_all_equal(self):
        # loss equals alpha yet every gradient vanishes identically
        b = np.array([0.4, 0.6])
        gu, gv, gw = triplet_grads(b, b, b, 2.0)
        assert np.all(gu == 0.0) and np.all(gv == 0.0) and np.all(gw == 0.0)
        assert triplet_loss(b, b, b, 2.0) == 2.0

    def test_matches_finite_differences_when_active(self):
        rng = np.random.default_rng(0)
        h = 1e-7
        for _ in range(10):
            bu, bv, bw = rng.uniform(0.1, 0.9, (3, 5))
            alpha = 3.0  # large margin keeps the hinge active
            assert triplet_loss(bu, bv, bw, alpha) > 1e-3
            grads = triplet_grads(bu, bv, bw, alpha)
            for which, g in enumerate(grads):
                codes = [bu.copy(), bv.copy(), bw.copy()]
                for k in range(5):
                    codes[which][k] += h
                    hi = triplet_loss(*codes, alpha)
                    codes[which][k] -= 2 * h
                    lo = triplet_loss(*codes, alpha)
                    codes[which][k] += h
                    numeric = (hi - lo) / (2 * h)
                    assert abs(g[k] - numeric) < 1e-6


def _near_hinge_kink(codes, labels, mods, alpha, tol):
    """True when any triplet's hinge argument lies within tol of zero."""
    B = np.asarray(codes)
    mined = mine_triplets(labels, mods)
    for term in ("er", "e", "r"):
        rows = mined.family(term)
        if rows.shape[0] == 0:
            continue
        U, V, W = rows[:, 0], rows[:, 1], rows[:, 2]
        margin = (
            alpha
            + np.sum((B[U] - B[V]) ** 2, axis=1)
            - np.sum((B[U] - B[W]) ** 2, axis=1)
        )
        if np.any(np.abs(margin) < tol):
            return True
    return False


def brute_force_triplets(labels, mods):
    """Reference enumeration by raw triple loops."""
    n = len(labels)
    out = {"er": set(), "e": set(), "r": set()}
    for u, v, w in itertools.product(range(n), repeat=3):
        if u == v or labels[u] != labels[v] or labels[u] == labels[w]:
            continue
        if mods[u] == mods[v] == mods[w]:
            if mods[u] == IMAGE:
                out["e"].add((u, v, w))
            else:
                out["r"].add((u, v, w))
        elif mods[v] == mods[w] != mods[u]:
            out["er"].add((u, v, w))
    return out


class TestMineTriplets:
    def test_two_classes_one_pair_each(self):
        labels = [0, 0, 1, 1]
        mods = [IMAGE, VIDEO, IMAGE, VIDEO]
        m = mine_triplets(labels, mods)
        assert (m.n_er, m.n_e, m.n_r) == (4, 0, 0)

    def test_two_classes_two_images_each(self):
        m = mine_triplets([0, 0, 1, 1], [IMAGE] * 4)
        assert (m.n_er, m.n_e, m.n_r) == (0, 8, 0)

    def test_single_class_all_empty(self):
        m = mine_triplets([3, 3, 3], [IMAGE, VIDEO, IMAGE])
        assert (m.n_er, m.n_e, m.n_r) == (0, 0, 0)

    def test_triplet_records_expose_constraints(self):
        codes, labels, mods = random_batch(5, n=10)
        m = mine_triplets(labels, mods)
        seen = 0
        for t in m.iter_triplets():
            seen += 1
            assert labels[t.u] == labels[t.v]
            assert labels[t.u] != labels[t.w]
            if t.term == "e":
                assert mods[t.u] == mods[t.v] == mods[t.w] == IMAGE
            elif t.term == "r":
                assert mods[t.u] == mods[t.v] == mods[t.w] == VIDEO
            else:
                assert mods[t.v] == mods[t.w] != mods[t.u]
        assert seen == m.n_er + m.n_e + m.n_r

    def test_unknown_modality_rejected(self):
        with pytest.raises(DomainError):
            mine_triplets([0, 1], [IMAGE, "audio"])

    @settings(max_examples=40, deadline=None)
    @given(seed=st.integers(0, 10_000), n=st.integers(2, 9))
    def test_property_matches_brute_force(self, seed, n):
        rng = np.random.default_rng(seed)
        labels = rng.integers(0, 3, n)
        mods = [IMAGE if rng.random() < 0.5 else VIDEO for _ in range(n)]
        mined = mine_triplets(labels, mods)
        want = brute_force_triplets(labels, mods)
        for term in ("er", "e", "r"):
            got = {tuple(row) for row in mined.family(term)}
            assert got == want[term]


class TestBatchObjective:
    def test_lambda_zero_leaves_only_inter_term(self):
        codes, labels, mods = random_batch(1)
        cfg = ObjectiveConfig(alpha=0.5, lambda1=0.0, lambda2=0.0, K=4)
        res = batch_objective(codes, labels, mods, cfg)
        assert res.J == res.J_er

    def test_identical_codes_plateau(self):
        codes, labels, mods = random_batch(2)
        codes = np.tile(codes[0], (codes.shape[0], 1))
        cfg = ObjectiveConfig(alpha=2.0, lambda1=1.0, lambda2=1.0, K=4)
        res = batch_objective(codes, labels, mods, cfg)
        want = 2.0 * (1.0 + (res.n_e > 0) + (res.n_r > 0))
        assert abs(res.J - want) < 1e-12
        assert np.all(res.grads == 0.0)

    def test_gradients_match_finite_differences(self):
        codes, labels, mods = random_batch(3)
        cfg = ObjectiveConfig(alpha=0.5, lambda1=0.7, lambda2=1.3, K=4)
        res = batch_objective(codes, labels, mods, cfg)
        h = 1e-6
        for i in range(codes.shape[0]):
            for k in range(codes.shape[1]):
                hi, lo = codes.copy(), codes.copy()
                hi[i, k] += h
                lo[i, k] -= h
                numeric = (
                    batch_objective(hi, labels, mods, cfg).J
                    - batch_objective(lo, labels, mods, cfg).J
                ) / (2 * h)
                assert abs(res.grads[i, k] - numeric) < 1e-5

    def test_permutation_invariance(self):
        codes, labels, mods = random_batch(4)
        cfg = ObjectiveConfig(alpha=0.5, lambda1=1.0, lambda2=1.0, K=4)
        res = batch_objective(codes, labels, mods, cfg)
        perm = np.random.default_rng(11).permutation(codes.shape[0])
        res_p = batch_objective(
            codes[perm], labels[perm], [mods[i] for i in perm], cfg
        )
        assert abs(res.J - res_p.J) < 1e-12
        assert np.abs(res_p.grads - res.grads[perm]).max() < 1e-12

    def test_nonnegative_and_zero_iff_satisfied(self):
        codes, labels, mods = random_batch(6)
        cfg = ObjectiveConfig(alpha=0.5, lambda1=1.0, lambda2=1.0, K=4)
        assert batch_objective(codes, labels, mods, cfg).J >= 0.0
        # two tight clusters far apart satisfy every triplet at alpha=0.01
        far = codes.copy()
        far[labels == labels[0]] = 0.99
        far[labels != labels[0]] = 0.01
        labs = (labels == labels[0]).astype(int)
        res = batch_objective(far, labs, mods, ObjectiveConfig(0.01, 1.0, 1.0, 4))
        assert res.J == 0.0
        assert res.active_er == res.active_e == res.active_r == 0.0

    def test_lambda_scaling(self):
        codes, labels, mods = random_batch(7)
        base = batch_objective(
            codes, labels, mods, ObjectiveConfig(0.5, 1.0, 1.0, 4)
        )
        scaled = batch_objective(
            codes, labels, mods, ObjectiveConfig(0.5, 3.0, 3.0, 4)
        )
        intra = base.J - base.J_er
        assert abs((scaled.J - scaled.J_er) - 3.0 * intra) < 1e-12
        assert scaled.J_er == base.J_er

    def test_config_validation(self):
        with pytest.raises(DomainError):
            ObjectiveConfig(alpha=0.0, lambda1=1.0, lambda2=1.0, K=4)
        with pytest.raises(DomainError):
            ObjectiveConfig(alpha=1.0, lambda1=-0.1, lambda2=1.0, K=4)

    def test_width_mismatch_rejected(self):
        codes, labels, mods = random_batch(8)
        with pytest.raises(ShapeError):
            batch_objective(codes, labels, mods, ObjectiveConfig(0.5, 1.0, 1.0, 7))

    @settings(max_examples=25, deadline=None)
    @given(seed=st.integers(0, 10_000))
    def test_property_gradient_agreement(self, seed):
        codes, labels, mods = random_batch(seed, n=6, K=3)
        cfg = ObjectiveConfig(alpha=0.5, lambda1=1.0, lambda2=1.0, K=3)
        if _near_hinge_kink(codes, labels, mods, cfg.alpha, 1e-4):
            return  # FD probes are invalid within h of a hinge kink
        res = batch_objective(codes, labels, mods, cfg)
        assert res.J >= 0.0
        h = 1e-6
        rng = np.random.default_rng(seed)
        i = int(rng.integers(codes.shape[0]))
        k = int(rng.integers(codes.shape[1]))
        hi, lo = codes.copy(), codes.copy()
        hi[i, k] += h
        lo[i, k] -= h
        numeric = (
            batch_objective(hi, labels, mods, cfg).J
            - batch_objective(lo, labels, mods, cfg).J
        ) / (2 * h)
        assert abs(res.grads[i, k] - numeric) < 1e-5
