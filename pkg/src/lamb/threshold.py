"""Threshold-matrix estimation under the shared-propensity model.

Each threshold is parameterized as ``theta_ij = 1 - exp(-tau_i * alpha_j)``
with a positive per-variable rate ``alpha_j`` and a positive per-sample
propensity ``tau_i``.  The default fit alternates exact per-row likelihood
maximization in ``tau`` with per-column moment matching in ``alpha``
(column means are reproduced exactly at every sweep).  An opt-in gamma
prior path estimates ``tau_i`` by posterior mean instead.

The model is scale-invariant under ``(tau, alpha) -> (c*tau, alpha/c)``;
the fit pins the mean of the interior propensities (rows not stuck at a
solver bound) to 1.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.integrate import quad
from scipy.optimize import brentq
from scipy.stats import gamma as gamma_dist

from .dataset import BinaryDataset, ColumnStats, column_means

TAU_MIN = 1e-6
TAU_MAX = 1e4
DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITER = 500


@dataclass(frozen=True)
class ThresholdFit:
    """Fitted threshold parameters and diagnostics."""

    alpha: np.ndarray
    tau: np.ndarray
    eps_theta: float
    converged: bool
    iterations: int
    constraint_residual: float
    tol: float

    @property
    def n(self) -> int:
        return len(self.tau)

    @property
    def d(self) -> int:
        return len(self.alpha)

    @cached_property
    def theta_hat(self) -> np.ndarray:
        """n x d matrix 1 - exp(-tau_i alpha_j), clamped inside (0, 1)."""
        return theta_matrix(self, self.eps_theta)


@dataclass(frozen=True)
class GammaPrior:
    """Gamma(zeta, beta) prior for the sample propensity (shape, rate)."""

    zeta: float
    beta: float

    def __post_init__(self) -> None:
        if self.zeta <= 0 or self.beta <= 0:
            raise ValueError("gamma prior requires zeta > 0 and beta > 0")

    def mean(self) -> float:
        return self.zeta / self.beta

    def check_conditions(self, alpha: np.ndarray) -> None:
        """Warn when the variance conditions behind the normal
        approximation are not guaranteed (zeta >= 3, beta > 6 max alpha)."""
        if self.zeta < 3:
            warnings.warn(
                f"gamma prior shape zeta={self.zeta} < 3; fourth-moment "
                "bounds for the test statistic are not guaranteed",
                stacklevel=2,
            )
        if len(alpha) and self.beta <= 6 * float(np.max(alpha)):
            warnings.warn(
                f"gamma prior rate beta={self.beta} is not greater than "
                f"6*max(alpha)={6 * float(np.max(alpha)):.4g}; fourth-moment "
                "bounds for the test statistic are not guaranteed",
                stacklevel=2,
            )


def init_params(stats: ColumnStats, ds: BinaryDataset) -> tuple[np.ndarray, np.ndarray]:
    """Starting values: alpha from the all-tau-equal-1 closed form, tau
    from row means scaled to grand mean 1."""
    alpha0 = -np.log1p(-stats.xbar)
    row_means = ds.dense.mean(axis=1)
    grand = row_means.mean()
    tau0 = np.clip(row_means / grand, TAU_MIN, TAU_MAX)
    return alpha0, tau0


def row_loglik(alpha: np.ndarray, x_row: np.ndarray, tau: float) -> float:
    """Log-likelihood of one row at propensity ``tau``:
    sum_j [x_j log(1 - e^{-tau a_j}) - (1 - x_j) tau a_j]."""
    t = tau * alpha
    with np.errstate(divide="ignore"):
        log_on = np.log(-np.expm1(-t))
    return float(np.sum(np.where(x_row > 0, log_on, -t)))


def total_loglik(alpha: np.ndarray, x: np.ndarray, tau: np.ndarray) -> float:
    """Sum of row log-likelihoods at per-row propensities."""
    t = tau[:, None] * alpha[None, :]
    with np.errstate(divide="ignore"):
        log_on = np.log(-np.expm1(-t))
    return float(np.sum(np.where(x > 0, log_on, -t)))


def solve_tau(
    alpha: np.ndarray,
    x_row: np.ndarray,
    bounds: tuple[float, float] = (TAU_MIN, TAU_MAX),
) -> float:
    """Maximize the row log-likelihood over ``bounds``.

    The objective is strictly concave, so its derivative has at most one
    root; an all-zero row pins to the lower bound, an all-one row to the
    upper bound.
    """
    alpha = np.asarray(alpha, dtype=float)
    if np.any(alpha <= 0):
        raise ValueError("alpha entries must be positive")
    x_row = np.asarray(x_row, dtype=float)
    lo, hi = bounds
    s0 = float(alpha[x_row == 0].sum())
    on = alpha[x_row > 0]

    def deriv(t: float) -> float:
        # sum_j(on) a_j e^{-t a_j} / (1 - e^{-t a_j}) - s0
        u = t * on
        return float(np.sum(on * np.exp(-u) / (-np.expm1(-u))) - s0)

    if on.size == 0 or deriv(lo) <= 0:
        return lo
    if deriv(hi) >= 0:
        return hi
    return float(brentq(deriv, lo, hi, xtol=1e-10, rtol=8.9e-16))


def solve_alpha(tau: np.ndarray, xbar_j: float) -> float:
    """Root of the moment equation mean_i(1 - e^{-tau_i a}) = xbar_j.

    The left side increases strictly from 0 toward 1 in ``a``, so the
    root exists and is unique for xbar_j in (0, 1).
    """
    tau = np.asarray(tau, dtype=float)
    if not 0 < xbar_j < 1:
        raise ValueError("column mean must lie strictly inside (0, 1)")
    if np.any(tau <= 0):
        raise ValueError("tau entries must be positive")

    def h(a: float) -> float:
        return float(-np.mean(np.expm1(-tau * a)) - xbar_j)

    hi = 1.0
    while h(hi) <= 0:
        hi *= 4.0
        if hi > 1e12:
            raise RuntimeError("failed to bracket alpha root")
    return float(brentq(h, 0.0, hi, xtol=1e-13, rtol=8.9e-16))


def _solve_tau_all(
    alpha: np.ndarray,
    x: np.ndarray,
    lo: float,
    hi: float,
    tau_start: np.ndarray,
    xtol: float = 1e-12,
) -> np.ndarray:
    """Vectorized per-row concave maximization (same root as solve_tau).

    Safeguarded Newton on the derivative with per-row brackets; rows
    whose derivative does not change sign on [lo, hi] pin to a bound.
    """
    n = x.shape[0]
    s0 = ((1.0 - x) * alpha[None, :]).sum(axis=1)

    def deriv_and_slope(t, rows):
        u = t[:, None] * alpha[None, :]
        e = np.exp(-u)
        denom = -np.expm1(-u)
        xa = x[rows] * alpha[None, :]
        g = (xa * e / denom).sum(axis=1) - s0[rows]
        gp = -(x[rows] * alpha[None, :] ** 2 * e / denom**2).sum(axis=1)
        return g, gp

    all_rows = np.arange(n)
    g_lo, _ = deriv_and_slope(np.full(n, lo), all_rows)
    g_hi, _ = deriv_and_slope(np.full(n, hi), all_rows)
    tau = np.clip(tau_start.astype(float).copy(), lo, hi)
    tau[g_lo <= 0] = lo
    tau[g_hi >= 0] = hi
    active = (g_lo > 0) & (g_hi < 0)

    lo_b = np.full(n, lo)
    hi_b = np.full(n, hi)
    rows = all_rows[active]
    for _ in range(200):
        if rows.size == 0:
            break
        t = tau[rows]
        g, gp = deriv_and_slope(t, rows)
        above = g > 0  # root lies to the right
        lo_b[rows[above]] = np.maximum(lo_b[rows[above]], t[above])
        hi_b[rows[~above]] = np.minimum(hi_b[rows[~above]], t[~above])
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            t_new = t - g / gp
        bad = ~np.isfinite(t_new) | (t_new <= lo_b[rows]) | (t_new >= hi_b[rows])
        t_new[bad] = np.sqrt(lo_b[rows[bad]] * hi_b[rows[bad]])
        done = np.abs(t_new - t) <= xtol * np.maximum(1.0, t_new)
        tau[rows] = t_new
        rows = rows[~done]
    return tau


def _solve_alpha_all(
    tau: np.ndarray,
    xbar: np.ndarray,
    alpha_start: np.ndarray,
    xtol: float = 1e-13,
) -> np.ndarray:
    """Vectorized per-column moment inversion (same root as solve_alpha)."""
    d = len(xbar)
    lo_b = np.zeros(d)
    hi_b = np.maximum(4.0 * alpha_start, 1.0)

    def h_of(a, cols):
        e = np.exp(-np.outer(tau, a))
        return (1.0 - e.mean(axis=0)) - xbar[cols], (tau[:, None] * e).mean(axis=0)

    all_cols = np.arange(d)
    for _ in range(60):  # ensure upper brackets
        hv, _ = h_of(hi_b, all_cols)
        short = hv <= 0
        if not short.any():
            break
        hi_b[short] *= 4.0

    alpha = np.clip(alpha_start.astype(float).copy(), 1e-12, hi_b)
    cols = all_cols
    for _ in range(200):
        if cols.size == 0:
            break
        a = alpha[cols]
        h, hp = h_of(a, cols)
        above = h < 0  # root lies to the right
        lo_b[cols[above]] = np.maximum(lo_b[cols[above]], a[above])
        hi_b[cols[~above]] = np.minimum(hi_b[cols[~above]], a[~above])
        with np.errstate(divide="ignore", invalid="ignore"):
            a_new = a - h / hp
        bad = ~np.isfinite(a_new) | (a_new <= lo_b[cols]) | (a_new >= hi_b[cols])
        a_new[bad] = 0.5 * (lo_b[cols[bad]] + hi_b[cols[bad]])
        done = np.abs(a_new - a) <= xtol * np.maximum(1.0, a_new)
        alpha[cols] = a_new
        cols = cols[~done]
    return alpha


def fit_empirical(
    ds: BinaryDataset,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    eps_theta: float | None = None,
) -> ThresholdFit:
    """Alternating constrained maximum-likelihood fit.

    Each sweep solves every row propensity exactly at the current alpha,
    rescales to mean(tau) = 1, then re-solves every alpha so the fitted
    column means match the observed ones.  Stops when the largest
    parameter change over a sweep drops below ``tol``; a fit that runs
    out of sweeps is returned with ``converged=False`` so callers can
    proceed with a warning.
    """
    if ds.d == 0:
        raise ValueError("no informative columns")
    if ds.n < 2 or ds.d < 2:
        raise ValueError("fit requires at least 2 rows and 2 columns")
    stats = column_means(ds)
    x = ds.dense
    alpha, tau = init_params(stats, ds)
    if eps_theta is None:
        eps_theta = 1.0 / (2 * ds.n)

    converged = False
    iterations = 0
    for sweep in range(1, max_iter + 1):
        iterations = sweep
        alpha_prev, tau_prev = alpha, tau
        tau = _solve_tau_all(alpha, x, TAU_MIN, TAU_MAX, tau_start=tau)
        # Fix the (c*tau, alpha/c) scale by pinning the interior mean to 1.
        # Rows stuck at a bound (all-zero/all-one rows) are excluded: their
        # pinned values would otherwise drag the scale and diverge the sweep.
        interior = tau[(tau > TAU_MIN * (1 + 1e-9)) & (tau < TAU_MAX * (1 - 1e-9))]
        scale = interior.mean() if interior.size else tau.mean()
        tau = np.clip(tau / scale, TAU_MIN, TAU_MAX)
        alpha = _solve_alpha_all(tau, stats.xbar, alpha_start=alpha)
        change = max(
            float(np.max(np.abs(tau - tau_prev))),
            float(np.max(np.abs(alpha - alpha_prev))),
        )
        if change < tol:
            converged = True
            break

    fitted_means = -np.expm1(-np.outer(tau, alpha)).mean(axis=0)
    residual = float(np.max(np.abs(stats.xbar - fitted_means)))
    return ThresholdFit(
        alpha=alpha,
        tau=tau,
        eps_theta=eps_theta,
        converged=converged,
        iterations=iterations,
        constraint_residual=residual,
        tol=tol,
    )


def fit_gamma(
    ds: BinaryDataset,
    prior: GammaPrior,
    eps_theta: float | None = None,
) -> ThresholdFit:
    """Opt-in fit under a known Gamma(zeta, beta) propensity prior.

    alpha comes from inverting the marginal mean
    ``E[theta_j] = 1 - (beta / (beta + alpha_j))^zeta`` at the observed
    column mean; each tau_i is the posterior mean given its row.
    """
    if ds.d == 0:
        raise ValueError("no informative columns")
    stats = column_means(ds)
    alpha = prior.beta * ((1.0 - stats.xbar) ** (-1.0 / prior.zeta) - 1.0)
    prior.check_conditions(alpha)
    x = ds.dense
    tau = np.array([posterior_mean_tau_gamma(x[i], alpha, prior) for i in range(ds.n)])
    if eps_theta is None:
        eps_theta = 1.0 / (2 * ds.n)
    fitted_means = -np.expm1(-np.outer(tau, alpha)).mean(axis=0)
    residual = float(np.max(np.abs(stats.xbar - fitted_means)))
    return ThresholdFit(
        alpha=alpha,
        tau=np.clip(tau, TAU_MIN, TAU_MAX),
        eps_theta=eps_theta,
        converged=True,
        iterations=0,
        constraint_residual=residual,
        tol=0.0,
    )


def posterior_mean_tau_gamma(
    x_row: np.ndarray,
    alpha: np.ndarray,
    prior: GammaPrior,
) -> float:
    """Posterior mean of the propensity given one binary row.

    Computed by adaptive quadrature of t * pi(t | x, alpha) over a
    support chosen so the truncated tail is negligible (the integrand is
    scanned on a log grid and the window extended until it has decayed
    by e^-50 from its peak).  Relative quadrature error is held below
    1e-8; an empty row of items returns the prior mean exactly.
    """
    alpha = np.asarray(alpha, dtype=float)
    x_row = np.asarray(x_row, dtype=float)
    if alpha.size == 0:
        return prior.mean()
    if np.any(alpha <= 0):
        raise ValueError("alpha entries must be positive")

    def log_f(t: np.ndarray) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        u = np.outer(t, alpha)
        with np.errstate(divide="ignore"):
            log_on = np.log(-np.expm1(-u))
        loglik = np.where(x_row[None, :] > 0, log_on, -u).sum(axis=1)
        with np.errstate(divide="ignore"):
            log_prior = (prior.zeta - 1.0) * np.log(t) - prior.beta * t
        return log_prior + loglik

    # Bracket the mass: start from the prior's far tail quantile, extend
    # right while the integrand has not fallen 50 nats below its peak
    # (an all-ones row can push the posterior well beyond the prior).
    ub = float(gamma_dist.ppf(1.0 - 1e-12, prior.zeta, scale=1.0 / prior.beta))
    for _ in range(200):
        grid = np.concatenate(([1e-300], np.geomspace(1e-12, ub, 600)))
        lf = log_f(grid)
        peak = float(np.max(lf))
        if lf[-1] < peak - 50.0:
            break
        ub *= 2.0
    else:
        raise RuntimeError("could not bracket the posterior support")

    def num(t: float) -> float:
        return float(t * math.exp(log_f(np.array([t]))[0] - peak))

    def den(t: float) -> float:
        return float(math.exp(log_f(np.array([t]))[0] - peak))

    t_peak = float(grid[int(np.argmax(lf))])
    pts = [p for p in (t_peak / 4, t_peak, min(4 * t_peak, ub * 0.99)) if 0 < p < ub]
    opts = dict(epsabs=0.0, epsrel=1e-10, limit=400, points=pts)
    num_val, num_err = quad(num, 0.0, ub, **opts)
    den_val, den_err = quad(den, 0.0, ub, **opts)
    if den_val <= 0 or num_err > 1e-8 * abs(num_val) or den_err > 1e-8 * abs(den_val):
        raise RuntimeError("posterior-mean quadrature did not converge")
    return num_val / den_val


def theta_matrix(fit: ThresholdFit, eps_theta: float) -> np.ndarray:
    """Threshold estimates 1 - exp(-tau_i alpha_j), clamped to
    [eps_theta, 1 - eps_theta]."""
    if not 0 < eps_theta < 0.5:
        raise ValueError("eps_theta must lie in (0, 0.5)")
    theta = -np.expm1(-np.outer(fit.tau, fit.alpha))
    return np.clip(theta, eps_theta, 1.0 - eps_theta)


def fit_to_json(fit: ThresholdFit) -> str:
    """Serialize a fit for reuse (stable key order)."""
    doc = {
        "alpha": [float(a) for a in fit.alpha],
        "tau": [float(t) for t in fit.tau],
        "meta": {
            "tol": fit.tol,
            "iterations": fit.iterations,
            "residual": fit.constraint_residual,
            "converged": fit.converged,
            "eps_theta": fit.eps_theta,
            "n": fit.n,
            "d": fit.d,
        },
    }
    return json.dumps(doc, sort_keys=True, indent=2) + "\n"


def fit_from_json(text: str) -> ThresholdFit:
    doc = json.loads(text)
    meta = doc["meta"]
    return ThresholdFit(
        alpha=np.asarray(doc["alpha"], dtype=float),
        tau=np.asarray(doc["tau"], dtype=float),
        eps_theta=float(meta["eps_theta"]),
        converged=bool(meta["converged"]),
        iterations=int(meta["iterations"]),
        constraint_residual=float(meta["residual"]),
        tol=float(meta["tol"]),
    )
