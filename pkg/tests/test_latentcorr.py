import math

import numpy as np
import pytest
from scipy.stats import kstest

from lamb import latentcorr
from lamb.dataset import from_dense
from lamb.latentcorr import (
    StandardizedMatrix,
    avg_psi,
    normal_sf,
    pairwise_psi,
    psi_matrix,
    pvalue,
    sigma_hat,
    standardize,
    sweep,
)


def u_matrix(u, labels=None):
    u = np.asarray(u, dtype=float)
    labels = labels or tuple(f"v{j+1}" for j in range(u.shape[1]))
    return StandardizedMatrix(u=u, col_labels=tuple(labels))


def simulate_u(rng, n, d, rho=0.0):
    """U values under the model with known thresholds (optionally a
    correlation-rho pair of leading columns; rho may be negative)."""
    z = rng.standard_normal((n, d))
    if rho:
        w = rng.standard_normal(n)
        root = math.sqrt(abs(rho))
        mix = math.sqrt(1 - abs(rho))
        z[:, 0] = root * w + mix * z[:, 0]
        z[:, 1] = math.copysign(root, rho) * w + mix * z[:, 1]
    alpha = rng.uniform(0.1, 1.0, d)
    tau = rng.gamma(3.0, 1.0 / 4.0, n)  # keeps 1/theta moments finite
    theta = -np.expm1(-np.outer(tau, alpha))
    from scipy.special import ndtri

    x = (z <= ndtri(theta)).astype(float)
    return (x - theta) / np.sqrt(theta * (1 - theta)), theta, x


def naive_avg_psi(u, j, a):
    rest = sorted(set(a) - {j})
    n = u.shape[0]
    total = 0.0
    for i in range(n):
        ubar = sum(u[i, k] for k in rest) / len(rest)
        total += u[i, j] * ubar
    return total / n


def naive_sigma(u, j, a):
    rest = sorted(set(a) - {j})
    n = u.shape[0]
    total = 0.0
    for i in range(n):
        ubar = sum(u[i, k] for k in rest) / len(rest)
        total += u[i, j] ** 2 * ubar**2
    return math.sqrt(total / n)


class TestStandardize:
    def test_two_point_values(self):
        ds = from_dense([[1, 0]])
        sm = standardize(ds, np.array([[0.5, 0.5]]))
        assert sm.u.tolist() == [[1.0, -1.0]]

    def test_asymmetric_threshold(self):
        ds = from_dense([[1]])
        sm = standardize(ds, np.array([[0.2]]))
        assert sm.u[0, 0] == pytest.approx(2.0)

    def test_exactly_two_values_per_column(self):
        rng = np.random.default_rng(0)
        u, theta, x = simulate_u(rng, 50, 4)
        for j in range(4):
            on = np.sqrt((1 - theta[:, j]) / theta[:, j])
            off = -np.sqrt(theta[:, j] / (1 - theta[:, j]))
            np.testing.assert_allclose(u[:, j], np.where(x[:, j] > 0, on, off))

    def test_known_theta_moments(self):
        rng = np.random.default_rng(1)
        n, d = 400, 30
        u, _, _ = simulate_u(rng, n, d)
        tol = 4.0 / math.sqrt(n * d)
        assert abs(u.mean()) < tol
        assert abs((u**2).mean() - 1.0) < tol

    def test_shape_mismatch_rejected(self):
        ds = from_dense([[1, 0]])
        with pytest.raises(ValueError, match="shape"):
            standardize(ds, np.full((2, 2), 0.5))

    def test_boundary_theta_rejected(self):
        ds = from_dense([[1, 0]])
        with pytest.raises(ValueError, match="strictly inside"):
            standardize(ds, np.array([[0.0, 0.5]]))


class TestPairwisePsi:
    def test_identical_columns(self):
        sm = u_matrix([[1, 1], [-1, -1]])
        assert pairwise_psi(sm, 0, 1) == 1.0

    def test_antisymmetric_columns(self):
        sm = u_matrix([[1, -1], [-1, 1]])
        assert pairwise_psi(sm, 0, 1) == -1.0

    def test_self_pair_rejected(self):
        with pytest.raises(ValueError):
            pairwise_psi(u_matrix([[1.0, 1.0]]), 1, 1)

    def test_symmetry_exact(self):
        rng = np.random.default_rng(2)
        sm = u_matrix(rng.standard_normal((20, 5)))
        for j in range(5):
            for k in range(j + 1, 5):
                assert pairwise_psi(sm, j, k) == pairwise_psi(sm, k, j)

    def test_threshold_induced_dependence_removed(self):
        # Shared two-point thresholds (eps / 1-eps) correlate the raw
        # binaries strongly, but the standardized estimate stays near 0
        # when the latent draws are independent.
        rng = np.random.default_rng(3)
        n, eps = 100_000, 0.1
        theta = np.where(rng.random(n) < 0.5, eps, 1 - eps)[:, None] * np.ones((1, 2))
        z = rng.standard_normal((n, 2))
        from scipy.special import ndtri

        x = (z <= ndtri(theta)).astype(float)
        raw_cov = np.cov(x[:, 0], x[:, 1])[0, 1]
        assert raw_cov == pytest.approx(0.25 - eps * (1 - eps), abs=5e-3)
        u = (x - theta) / np.sqrt(theta * (1 - theta))
        assert abs(pairwise_psi(u_matrix(u), 0, 1)) < 0.02


class TestSetStatistics:
    def test_singleton_reduces_to_pairwise(self):
        rng = np.random.default_rng(4)
        sm = u_matrix(rng.standard_normal((30, 4)))
        assert avg_psi(sm, 0, {2}) == pytest.approx(pairwise_psi(sm, 0, 2), abs=1e-15)

    def test_identical_set_columns(self):
        rng = np.random.default_rng(5)
        col = rng.standard_normal(25)
        sm = u_matrix(np.column_stack([col, col, col]))
        assert avg_psi(sm, 0, {0, 1, 2}) == pytest.approx(float(np.mean(col**2)))

    def test_matches_naive_double_loop(self):
        rng = np.random.default_rng(6)
        u = rng.standard_normal((20, 15))
        sm = u_matrix(u)
        for j, a in ((0, {1, 2, 3}), (4, {4, 7, 9}), (14, set(range(14)))):
            assert avg_psi(sm, j, a) == pytest.approx(naive_avg_psi(u, j, a), abs=1e-12)
            assert sigma_hat(sm, j, a) == pytest.approx(naive_sigma(u, j, a), abs=1e-12)

    def test_sigma_unit_for_signed_ones(self):
        sm = u_matrix([[1, -1], [-1, 1], [1, 1]])
        assert sigma_hat(sm, 0, {1}) == 1.0

    def test_sigma_nonnegative(self):
        rng = np.random.default_rng(7)
        sm = u_matrix(rng.standard_normal((10, 6)))
        assert all(sigma_hat(sm, j, {0, 1, 2, 3}) >= 0 for j in range(6))

    def test_set_must_leave_something(self):
        sm = u_matrix([[1.0, 1.0]])
        with pytest.raises(ValueError):
            avg_psi(sm, 0, {0})
        with pytest.raises(ValueError):
            avg_psi(sm, 0, set())


class TestPvalue:
    def test_zero_statistic_gives_half(self):
        sm = u_matrix([[1, 1], [1, -1], [-1, 1], [-1, -1]])
        t = pvalue(sm, 0, {1})
        assert t.psi_hat == 0.0
        assert t.pvalue == 0.5

    def test_normal_quantile(self):
        assert normal_sf(1.6449) == pytest.approx(0.05, abs=1e-4)
        assert normal_sf(0.0) == 0.5

    def test_degenerate_variance_conventions(self):
        sm = u_matrix([[1.0, 0.0], [-1.0, 0.0]])
        t = pvalue(sm, 0, {1})  # Ubar identically zero
        assert t.sigma_hat == 0.0 and t.psi_hat == 0.0
        assert t.pvalue == 1.0 and t.z == -np.inf

    def test_null_pvalues_near_uniform_quick(self):
        # Fast version of the calibration check (the full 2000-replicate
        # run lives in the acceptance suite).
        rng = np.random.default_rng(8)
        zs = []
        for _ in range(400):
            u, _, _ = simulate_u(rng, 300, 11)
            sm = u_matrix(u)
            t = pvalue(sm, 0, set(range(1, 11)))
            zs.append(t.z)
        assert kstest(zs, "norm").statistic < 0.1

    def test_signal_detected(self):
        rng = np.random.default_rng(9)
        u, _, _ = simulate_u(rng, 2000, 5, rho=0.6)
        t = pvalue(u_matrix(u), 0, {1})
        assert t.pvalue < 1e-6


class TestSweep:
    def test_matches_per_j_loop(self):
        rng = np.random.default_rng(10)
        u, _, _ = simulate_u(rng, 40, 9)
        sm = u_matrix(u)
        for a in ({0}, {0, 3}, {2, 5, 8}, set(range(9))):
            psi, sig, z, p = sweep(sm, a)
            for j in range(9):
                if a == {j}:
                    assert p[j] == 1.0 and psi[j] == 0.0
                    continue
                t = pvalue(sm, j, a)
                assert psi[j] == pytest.approx(t.psi_hat, abs=1e-12)
                assert sig[j] == pytest.approx(t.sigma_hat, abs=1e-12)
                assert p[j] == pytest.approx(t.pvalue, abs=1e-12)

    def test_empty_set_rejected(self):
        with pytest.raises(ValueError):
            sweep(u_matrix([[1.0]]), set())


class TestDistributionalProperties:
    def test_soft_boundedness(self):
        # With n >= 1000 the sample statistic rarely leaves [-1.1, 1.1].
        rng = np.random.default_rng(11)
        u, _, _ = simulate_u(rng, 1000, 25)
        sm = u_matrix(u)
        count = total = 0
        for j in range(25):
            for trial in range(8):
                a = set(rng.choice(25, size=rng.integers(2, 10), replace=False)) - {j}
                if not a:
                    continue
                total += 1
                count += abs(avg_psi(sm, j, a)) > 1.1
        assert count / total < 0.01

    def test_sign_consistency_quick(self):
        rng = np.random.default_rng(12)
        hits = {0.5: 0, -0.5: 0}
        reps = 30
        for s in hits:
            for _ in range(reps):
                u, _, _ = simulate_u(rng, 2000, 2, rho=s)
                hits[s] += (pairwise_psi(u_matrix(u), 0, 1) > 0) == (s > 0)
        assert hits[0.5] == reps and hits[-0.5] == reps

    def test_fourth_moment_bound(self):
        rng = np.random.default_rng(13)
        u, theta, _ = simulate_u(rng, 4000, 6)
        bound = (1.0 / (theta * (1 - theta))).mean(axis=0)
        m4 = (u**4).mean(axis=0)
        se = (u**8).std(axis=0) / math.sqrt(4000)
        assert np.all(m4 <= bound + 3 * se)


class TestPsiMatrix:
    def test_off_diagonal_matches_pairwise(self):
        rng = np.random.default_rng(14)
        sm = u_matrix(rng.standard_normal((15, 4)))
        mat = psi_matrix(sm)
        np.testing.assert_allclose(mat, mat.T, atol=1e-14)
        for j in range(4):
            for k in range(4):
                if j != k:
                    assert mat[j, k] == pytest.approx(pairwise_psi(sm, j, k), abs=1e-14)
            assert mat[j, j] == pytest.approx(float(np.mean(sm.u[:, j] ** 2)))
