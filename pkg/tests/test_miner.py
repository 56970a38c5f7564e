import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lamb import dataset, latentcorr, miner, threshold
from lamb.latentcorr import StandardizedMatrix
from lamb.miner import CoherentSetResult, by_reject, dedup, mine_all, neighborhood, search, step

from conftest import TOY_Q


def u_matrix(u, labels=None):
    u = np.asarray(u, dtype=float)
    labels = labels or tuple(f"v{j+1}" for j in range(u.shape[1]))
    return StandardizedMatrix(u=u, col_labels=tuple(labels))


def planted_blocks(rng, n, d, blocks):
    """U matrix whose listed column groups are identical columns."""
    u = rng.standard_normal((n, d))
    for block in blocks:
        base = rng.standard_normal(n)
        for j in block:
            u[:, j] = base
    return u_matrix(u)


def brute_force_by(pvals, q):
    d = len(pvals)
    c_d = sum(1.0 / i for i in range(1, d + 1))
    best_k = 0
    for size in range(1, d + 1):
        for subset in itertools.combinations(range(d), size):
            if all(pvals[i] <= size * q / (d * c_d) for i in subset):
                best_k = max(best_k, size)
    if best_k == 0:
        return frozenset()
    cut = sorted(pvals)[best_k - 1]
    return frozenset(i for i, p in enumerate(pvals) if p <= cut)


class TestByReject:
    def test_hand_worked_example(self):
        # d=4, q=0.05: c(4)=25/12, per-rank cutoffs k*0.006; the two
        # smallest p-values clear their ranks, 0.2 does not.
        got = by_reject([0.001, 0.01, 0.2, 0.9], 0.05)
        assert got == {0, 1}

    def test_all_ones_rejects_nothing(self):
        assert by_reject([1.0] * 5, 0.05) == frozenset()

    def test_all_zeros_rejects_everything(self):
        assert by_reject([0.0] * 5, 0.05) == frozenset(range(5))

    def test_matches_brute_force_on_random_vectors(self):
        rng = np.random.default_rng(15)
        for case in range(1000):
            d = int(rng.integers(1, 11))
            if case % 5 == 0:  # exercise ties
                p = rng.choice([0.0005, 0.005, 0.05, 0.5, 1.0], size=d)
            else:
                p = rng.random(d)
            q = float(rng.uniform(0.01, 0.9))
            assert by_reject(p, q) == brute_force_by(list(p), q), (p, q)

    @given(
        st.lists(st.floats(0, 1), min_size=1, max_size=12),
        st.floats(0.01, 0.5),
        st.floats(0.01, 0.49),
    )
    @settings(max_examples=200, deadline=None)
    def test_monotone_in_q(self, pvals, q1, dq):
        assert by_reject(pvals, q1) <= by_reject(pvals, min(q1 + dq, 0.99))

    def test_invalid_inputs(self):
        with pytest.raises(ValueError):
            by_reject([0.5], 0.0)
        with pytest.raises(ValueError):
            by_reject([1.5], 0.05)
        with pytest.raises(ValueError):
            by_reject([], 0.05)


class TestStep:
    def test_planted_block_recovered_from_one_member(self):
        rng = np.random.default_rng(16)
        block = set(range(5))
        hits = 0
        for _ in range(100):
            sm = planted_blocks(rng, 200, 30, [block])
            hits += step(sm, {0}, 0.05) == block
        assert hits >= 95

    def test_noise_seed_dies(self):
        rng = np.random.default_rng(17)
        empty = 0
        for _ in range(200):
            sm = u_matrix(rng.standard_normal((100, 20)))
            empty += step(sm, {3}, 0.05) == frozenset()
        assert empty >= 0.93 * 200

    def test_anticorrelated_column_excluded(self):
        rng = np.random.default_rng(18)
        n, d = 300, 6
        shared = rng.standard_normal(n)
        u = 0.8 * shared[:, None] + 0.6 * rng.standard_normal((n, d))
        u[:, 5] = -0.8 * shared + 0.6 * rng.standard_normal(n)
        nxt = step(u_matrix(u), set(range(6)), 0.05)
        assert 5 not in nxt
        assert nxt >= {0, 1, 2, 3}

    def test_empty_current_set_rejected(self):
        with pytest.raises(ValueError):
            step(u_matrix([[1.0]]), set(), 0.05)


class TestSearch:
    def test_planted_block_fixed_point(self):
        rng = np.random.default_rng(19)
        sm = planted_blocks(rng, 200, 30, [set(range(5))])
        out = search(sm, 2, q=0.05)
        assert out.reason == "fixed_point"
        assert out.terminal == set(range(5))
        assert out.trajectory[-1] == out.trajectory[-2]

    def test_noise_search_empty(self):
        rng = np.random.default_rng(20)
        empty = 0
        for _ in range(100):
            sm = u_matrix(rng.standard_normal((100, 20)))
            empty += search(sm, 0, q=0.05).reason == "empty"
        assert empty >= 95

    def test_zero_iteration_budget(self):
        sm = u_matrix(np.ones((3, 4)))
        out = search(sm, 1, q=0.05, max_iter=0)
        assert out.reason == "max_iter"
        assert out.trajectory == (frozenset({1}),)
        assert out.iterations == 0

    def test_cycle_detection_via_injected_transitions(self):
        a0 = frozenset({0})
        a1 = frozenset({1, 2})
        a2 = frozenset({3, 4})
        cache = {a0: a1, a1: a2, a2: a1}
        out = search(u_matrix(np.ones((2, 5))), 0, q=0.05, _cache=cache)
        assert out.reason == "cycle"
        assert out.terminal == a1
        assert out.trajectory == (a0, a1, a2, a1)

    def test_invalid_seed(self):
        with pytest.raises(ValueError):
            search(u_matrix(np.ones((2, 3))), 7, q=0.05)


class TestMineAll:
    def test_toy_finds_the_latent_pair_only(self, toy):
        fit = threshold.fit_empirical(toy)
        u = latentcorr.standardize(toy, fit.theta_hat)
        results = mine_all(u, q=TOY_Q)
        assert [set(r.labels) for r in results] == [{"item01", "item02"}]
        assert results[0].reason == "fixed_point"
        assert results[0].seeds_reaching == 2  # reached from both members

    def test_two_disjoint_blocks_both_recovered(self):
        rng = np.random.default_rng(21)
        blocks = [set(range(4)), set(range(10, 16))]
        sm = planted_blocks(rng, 250, 30, blocks)
        results = mine_all(sm, q=0.05)
        members = [r.members for r in results]
        assert frozenset(blocks[0]) in members
        assert frozenset(blocks[1]) in members

    def test_noise_yields_nothing(self):
        rng = np.random.default_rng(22)
        sm = u_matrix(rng.standard_normal((150, 15)))
        assert mine_all(sm, q=0.01) == []

    def test_fixed_points_verify_post_hoc(self):
        rng = np.random.default_rng(23)
        sm = planted_blocks(rng, 200, 25, [set(range(5)), set(range(8, 12))])
        for res in mine_all(sm, q=0.05):
            if res.reason == "fixed_point":
                assert step(sm, res.members, 0.05) == res.members

    def test_deterministic_and_thread_invariant(self):
        rng = np.random.default_rng(24)
        sm = planted_blocks(rng, 150, 20, [set(range(4))])
        serial = mine_all(sm, q=0.05, threads=1)
        again = mine_all(sm, q=0.05, threads=1)
        threaded = mine_all(sm, q=0.05, threads=4)
        assert serial == again == threaded

    def test_member_pvalues_cover_members(self):
        rng = np.random.default_rng(25)
        sm = planted_blocks(rng, 150, 12, [set(range(3))])
        for res in mine_all(sm, q=0.05):
            assert set(res.member_pvalues) == set(res.members)
            assert all(0 <= p <= 1 for p in res.member_pvalues.values())

    def test_full_pipeline_recovers_latent_groups(self):
        # End to end on model data: two latent factor groups among noise
        # variables, heterogeneous propensities, estimated thresholds.
        rng = np.random.default_rng(30)
        n, d = 2000, 60
        blocks = [set(range(0, 6)), set(range(20, 25))]
        z = rng.standard_normal((n, d))
        for block in blocks:
            w = rng.standard_normal(n)
            for j in block:
                z[:, j] = np.sqrt(0.6) * w + np.sqrt(0.4) * z[:, j]
        alpha = rng.uniform(0.05, 0.6, d)
        tau = rng.exponential(1.0, n)
        theta_true = -np.expm1(-np.outer(tau, alpha))
        from scipy.special import ndtri

        x = (z <= ndtri(np.clip(theta_true, 1e-12, 1 - 1e-12))).astype(int)
        ds, _ = dataset.filter_degenerate(dataset.from_dense(x))
        fit = threshold.fit_empirical(ds)
        u = latentcorr.standardize(ds, fit.theta_hat)
        mined = [set(r.labels) for r in mine_all(u, q=0.05)]
        for block in blocks:
            labels = {f"v{j + 1}" for j in block}
            assert any(len(labels & s) >= len(labels) - 1 and len(s - labels) <= 1
                       for s in mined), (labels, mined)


class TestNeighborhood:
    def test_block_target_pulls_in_block(self):
        rng = np.random.default_rng(26)
        block = set(range(5))
        sm = planted_blocks(rng, 200, 30, [block])
        nb = neighborhood(sm, {0, 1}, q=0.05)
        assert nb.neighbors >= block - {0, 1}
        assert nb.target == {0, 1}

    def test_noise_target_has_no_neighbors(self):
        rng = np.random.default_rng(27)
        sm = u_matrix(rng.standard_normal((150, 20)))
        assert neighborhood(sm, {4}, q=0.01).neighbors == frozenset()

    def test_vanishing_level_rejects_nothing(self):
        rng = np.random.default_rng(28)
        sm = u_matrix(rng.standard_normal((100, 10)))
        assert neighborhood(sm, {0, 1}, q=1e-12).neighbors == frozenset()

    def test_target_members_not_forced_in(self):
        rng = np.random.default_rng(29)
        sm = u_matrix(rng.standard_normal((100, 10)))
        nb = neighborhood(sm, {2}, q=0.3)
        assert 2 not in nb.neighbors  # the self test is p = 1 by convention


def result(members, reached=1):
    members = frozenset(members)
    return CoherentSetResult(
        members=members,
        member_pvalues={j: 0.01 for j in members},
        seeds_reaching=reached,
        labels=tuple(f"v{j+1}" for j in sorted(members)),
        reason="fixed_point",
    )


class TestDedup:
    def test_identical_sets_merge(self):
        merged = dedup([result({1, 2}, 3), result({1, 2}, 2)], 1.0)
        assert len(merged) == 1
        assert merged[0].seeds_reaching == 5

    def test_disjoint_sets_unchanged(self):
        results = [result({1, 2}, 2), result({3, 4}, 1)]
        assert [r.members for r in dedup(results, 0.5)] == [r.members for r in results]

    def test_jaccard_arithmetic(self):
        a = result(set(range(1, 11)), 5)  # {1..10}
        b = result(set(range(1, 10)) | {11}, 2)  # {1..9, 11}, overlap 9/11
        merged = dedup([a, b], 0.8)
        assert len(merged) == 1
        assert merged[0].members == a.members  # most-reached representative
        assert merged[0].seeds_reaching == 7
        assert len(dedup([a, b], 0.9)) == 2

    def test_threshold_validated(self):
        with pytest.raises(ValueError):
            dedup([], 0.0)
