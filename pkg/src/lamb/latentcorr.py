"""Sample latent correlation, its variance estimate, and approximate p-values.

The standardized residual of each cell is
``U_ij = (X_ij - theta_ij) / sqrt(theta_ij (1 - theta_ij))``.
The sample latent correlation between variable j and a set A averages
``U_ij`` against the set mean of ``U`` over ``A \\ {j}`` (the self term is
always excluded: it is a deterministic positive bias).  Under the null of
no latent association, ``sqrt(n) * psi_hat / sigma_hat`` is approximately
standard normal, giving the one-sided p-value ``1 - Phi(z)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np
from scipy.special import erfc

from .dataset import BinaryDataset


@dataclass(frozen=True)
class StandardizedMatrix:
    """Standardized residuals U (n x d) with the column labels they test."""

    u: np.ndarray
    col_labels: tuple[str, ...]

    @property
    def n(self) -> int:
        return self.u.shape[0]

    @property
    def d(self) -> int:
        return self.u.shape[1]


@dataclass(frozen=True)
class TestStatistic:
    """One test of variable ``j`` against set ``members``.

    ``pvalue == 1 - Phi(z)`` always; a zero variance estimate maps to
    z = -inf (no evidence, p = 1) or z = +inf (degenerate evidence,
    p = 0) according to the sign of ``psi_hat``.
    """

    psi_hat: float
    sigma_hat: float
    z: float
    pvalue: float
    j: int
    members: frozenset[int]


def normal_sf(z: float | np.ndarray) -> float | np.ndarray:
    """Upper tail of the standard normal, 1 - Phi(z), via erfc."""
    return 0.5 * erfc(np.asarray(z) / np.sqrt(2.0))


def standardize(ds: BinaryDataset, theta: np.ndarray) -> StandardizedMatrix:
    """Elementwise (X - theta) / sqrt(theta (1 - theta))."""
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (ds.n, ds.d):
        raise ValueError(f"theta shape {theta.shape} != data shape {(ds.n, ds.d)}")
    if np.any(theta <= 0) or np.any(theta >= 1):
        raise ValueError("theta entries must lie strictly inside (0, 1)")
    u = (ds.dense - theta) / np.sqrt(theta * (1.0 - theta))
    u.setflags(write=False)
    return StandardizedMatrix(u=u, col_labels=ds.col_labels)


def pairwise_psi(u: StandardizedMatrix, j: int, k: int) -> float:
    """Sample latent correlation (1/n) sum_i U_ij U_ik."""
    if j == k:
        raise ValueError("pairwise latent correlation requires j != k")
    return float(u.u[:, j] @ u.u[:, k] / u.n)


def avg_psi(u: StandardizedMatrix, j: int, a: Iterable[int]) -> float:
    """Sample latent correlation of j against the mean of U over A \\ {j}."""
    ubar = _set_mean(u, j, a)
    return float(u.u[:, j] @ ubar / u.n)


def sigma_hat(u: StandardizedMatrix, j: int, a: Iterable[int]) -> float:
    """Square root of (1/n) sum_i U_ij^2 Ubar_i^2 over A \\ {j}."""
    ubar = _set_mean(u, j, a)
    return float(np.sqrt(np.mean(u.u[:, j] ** 2 * ubar**2)))


def pvalue(u: StandardizedMatrix, j: int, a: Iterable[int]) -> TestStatistic:
    """Test H0: psi(j, A) <= 0 via the normal approximation."""
    a = frozenset(a)
    psi = avg_psi(u, j, a)
    sig = sigma_hat(u, j, a)
    if sig > 0:
        z = float(np.sqrt(u.n) * psi / sig)
    else:
        z = np.inf if psi > 0 else -np.inf
    return TestStatistic(
        psi_hat=psi,
        sigma_hat=sig,
        z=z,
        pvalue=float(normal_sf(z)),
        j=j,
        members=a,
    )


def sweep(u: StandardizedMatrix, a: Iterable[int]) -> tuple[np.ndarray, ...]:
    """Vectorized tests of every j in [d] against A.

    Returns (psi, sigma, z, pvals) arrays of length d, identical to
    looping :func:`pvalue` over j.  Members of A are tested against
    A \\ {j} via incremental column sums, so one sweep costs
    O(n (d + |A|)).  When A is a singleton its own member gets p = 1 by
    convention (there is nothing left to test it against).
    """
    idx = np.asarray(sorted(set(a)), dtype=int)
    if idx.size == 0:
        raise ValueError("cannot sweep against an empty set")
    mat = u.u
    n, d = mat.shape
    m = idx.size
    s = mat[:, idx].sum(axis=1)

    psi = (mat.T @ s) / (n * m)
    sig2 = ((mat**2).T @ s**2) / (n * m * m)

    if m == 1:
        psi[idx] = 0.0
        sig2[idx] = 0.0
    else:
        ua = mat[:, idx]
        rest = s[:, None] - ua
        psi[idx] = (ua * rest).mean(axis=0) / (m - 1)
        sig2[idx] = (ua**2 * rest**2).mean(axis=0) / (m - 1) ** 2

    sigma = np.sqrt(np.maximum(sig2, 0.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.sqrt(n) * psi / sigma
    z[sigma == 0] = np.where(psi[sigma == 0] > 0, np.inf, -np.inf)
    return psi, sigma, z, np.asarray(normal_sf(z))


def psi_matrix(u: StandardizedMatrix) -> np.ndarray:
    """Full d x d matrix of pairwise sample latent correlations.

    The diagonal holds (1/n) sum_i U_ij^2 (the natural self product);
    off-diagonal entries equal :func:`pairwise_psi`.
    """
    return u.u.T @ u.u / u.n


def _set_mean(u: StandardizedMatrix, j: int, a: Iterable[int]) -> np.ndarray:
    members = set(a)
    if not members:
        raise ValueError("set A must be nonempty")
    rest = sorted(members - {j})
    if not rest:
        raise ValueError(f"set A = {{{j}}} leaves nothing to test j against")
    return u.u[:, rest].mean(axis=1)
