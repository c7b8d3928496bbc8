"""Wild cluster bootstrap for second-step coefficients.

Designed for few clusters: residuals from the null-imposed (restricted)
second-step regression are flipped blockwise by location-level Rademacher
signs, the second step is re-estimated on each synthetic outcome, and the
observed t statistic is ranked inside the bootstrap t distribution. The
first stage is held fixed across draws: the wild perturbation touches only
the outcome side, so the selection data, and with it the probit fit and
the mills ratios, are unchanged by construction.

The per-draw t statistic uses the corrected covariance, which for a fixed
first stage scales exactly with the draw's squared mills coefficient; the
scale-free part is therefore computed once.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import ClusteredDataset
from .differencing import DifferenceOperator
from .estimator import TwoStepFit, _sandwich
from .exceptions import EstimationError, ValidationError
from .probit import fit_probit

# keep draw batches under ~2e7 floats to bound peak memory
_BATCH_LIMIT = 20_000_000


@dataclass
class BootstrapResult:
    """Outcome of a wild cluster bootstrap test on one coefficient."""

    coefficient: str
    t_observed: float
    p_value: float
    ci_low: float | None
    ci_high: float | None
    replications: int
    weights: str
    seed: int


def _row_clusters(fit: TwoStepFit, op: DifferenceOperator | None,
                  ds: ClusteredDataset) -> np.ndarray:
    """Location code of each differenced row (rows never mix locations)."""
    if op is None:
        rows = ds.selected_indices()
        return ds.location_codes[rows]
    anchors_ds = op.selected_indices[op.anchor]
    return ds.location_codes[anchors_ds]


def _restricted(x: np.ndarray, y: np.ndarray, col: int, null_value: float):
    """Null-imposed OLS: coefficient `col` fixed at null_value."""
    k = x.shape[1]
    others = [j for j in range(k) if j != col]
    y_adj = y - null_value * x[:, col]
    theta_rest = np.zeros(k)
    theta_rest[col] = null_value
    if others:
        coef, *_ = np.linalg.lstsq(x[:, others], y_adj, rcond=None)
        theta_rest[others] = coef
    fitted = x @ theta_rest
    return theta_rest, fitted, y - fitted


def _t_for_draws(y_star: np.ndarray, proj: np.ndarray, col: int, mills_col: int,
                 null_value: float, k_cc: float) -> np.ndarray:
    """t statistics for a batch of synthetic outcomes (draws in rows)."""
    theta = y_star @ proj.T                      # (B, k)
    num = theta[:, col] - null_value
    se = np.abs(theta[:, mills_col]) * np.sqrt(k_cc)
    t = np.zeros(len(num))
    ok = se > 0
    t[ok] = num[ok] / se[ok]
    big = ~ok & (num != 0)
    t[big] = np.inf * np.sign(num[big])
    return t


def wild_cluster_bootstrap(fit: TwoStepFit, op: DifferenceOperator | None,
                           ds: ClusteredDataset, coef: str,
                           null_value: float = 0.0, B: int = 999,
                           seed: int = 0, *,
                           full_enumeration: bool = False,
                           compute_ci: bool = False,
                           ci_level: float = 0.95,
                           reestimate_probit: bool = False) -> BootstrapResult:
    """Restricted wild cluster bootstrap p-value (and optional interval).

    Rademacher signs are drawn once per location per replication; all
    replications are generated up front from `seed`, so the result is
    deterministic and independent of scheduling. The p-value uses the
    add-one rule (1 + #{|t*| >= |t_obs|}) / (1 + B). With
    `full_enumeration` every one of the 2^J sign patterns is evaluated
    instead and the p-value is the exact fraction.

    `reestimate_probit` refits the first stage against the (unchanged)
    selection data and verifies it reproduces the original coefficients;
    the wild draws perturb only the outcome equation, so a per-draw refit
    cannot alter the selection stage.
    """
    if B < 99 and not full_enumeration:
        raise ValidationError("B must be at least 99")
    if coef not in fit.names:
        raise ValidationError(f"unknown coefficient {coef!r}; have {fit.names}")
    col = fit.names.index(coef)

    clusters = _row_clusters(fit, op, ds)
    uniq = np.unique(clusters)
    n_clusters = len(uniq)
    if n_clusters < 2:
        raise ValidationError("need at least 2 locations to cluster on")
    cluster_idx = np.searchsorted(uniq, clusters)

    if reestimate_probit:
        refit = fit_probit(
            ds, include_location_dummies=bool(fit.probit.dummy_locations)
            or bool(fit.probit.dropped_dummies),
            include_intercept=fit.probit.include_intercept,
        )
        if not np.allclose(refit.beta, fit.probit.beta, rtol=0, atol=1e-8):
            raise EstimationError(
                "first-stage refit diverged from the original fit"
            )

    x = fit.design_diff
    y = fit.outcome_diff
    rows_sel = ds.selected_indices()
    z_sel = fit.probit.design(ds, rows_sel)
    # scale-free covariance: v_twostep(rho) = rho^2 * kmat
    kmat, _, _ = _sandwich(x, fit.xtx_inv, op, fit.dee, 1.0, z_sel,
                           fit.probit.vbeta, "mills", fit.residuals)
    k_cc = float(kmat[col, col])
    proj = fit.xtx_inv @ x.T

    # observed and bootstrap t statistics use the same corrected-variance
    # form (se = |mills coefficient| * sqrt(k_cc)), regardless of which
    # variant the fit itself reports
    se_obs = float(abs(fit.rho) * np.sqrt(k_cc))
    theta_obs = float(fit.theta[col])
    if se_obs > 0:
        t_obs = (theta_obs - null_value) / se_obs
    else:
        t_obs = 0.0 if theta_obs == null_value else np.inf

    if full_enumeration:
        if n_clusters > 20:
            raise ValidationError("full enumeration supported for at most 20 clusters")
        patterns = ((np.arange(2**n_clusters)[:, None] >> np.arange(n_clusters)[None, :]) & 1)
        signs = (2 * patterns - 1).astype(np.float64)
        reps = signs.shape[0]
    else:
        rng = np.random.default_rng(seed)
        signs = rng.integers(0, 2, size=(B, n_clusters)).astype(np.float64) * 2.0 - 1.0
        reps = B

    y_scale = float(np.abs(y).max()) if len(y) else 0.0

    def p_at(null: float) -> float:
        t_ref = (theta_obs - null) / se_obs if se_obs > 0 else t_obs
        _, fitted, resid = _restricted(x, y, col, null)
        if np.abs(resid).max() <= 1e-12 * max(1.0, y_scale):
            # degenerate: every draw reproduces the observed statistic
            return 1.0
        count = 0
        batch = max(1, _BATCH_LIMIT // max(1, x.shape[0]))
        for start in range(0, reps, batch):
            w = signs[start:start + batch][:, cluster_idx]
            y_star = fitted[None, :] + w * resid[None, :]
            t_star = _t_for_draws(y_star, proj, col, fit.mills_col, null, k_cc)
            count += int(np.sum(np.abs(t_star) >= abs(t_ref)))
        if full_enumeration:
            return count / reps
        return (1 + count) / (1 + reps)

    p_value = p_at(null_value)

    ci_low = ci_high = None
    if compute_ci:
        alpha = 1.0 - ci_level
        half = 6.0 * se_obs if se_obs > 0 else max(1.0, abs(theta_obs))
        lo_bracket = (theta_obs - half, theta_obs)
        hi_bracket = (theta_obs, theta_obs + half)
        ci_low = _invert(p_at, lo_bracket, alpha, widen=-half)
        ci_high = _invert(p_at, hi_bracket, alpha, widen=half)

    return BootstrapResult(
        coefficient=coef, t_observed=t_obs, p_value=p_value,
        ci_low=ci_low, ci_high=ci_high, replications=reps,
        weights="rademacher", seed=seed,
    )


def _invert(p_at, bracket: tuple[float, float], alpha: float, widen: float,
            tol: float = 1e-4, max_widen: int = 6) -> float:
    """Bisect for the null value where the bootstrap p-value crosses alpha."""
    inner, outer = (bracket[1], bracket[0]) if widen < 0 else (bracket[0], bracket[1])
    for _ in range(max_widen):
        if p_at(outer) < alpha:
            break
        outer += widen
    else:
        return outer
    lo, hi = (outer, inner) if widen < 0 else (inner, outer)
    # p >= alpha at the inner end, < alpha at the outer end
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if hi - lo < tol * (1 + abs(mid)):
            break
        if widen < 0:
            if p_at(mid) >= alpha:
                hi = mid
            else:
                lo = mid
        else:
            if p_at(mid) >= alpha:
                lo = mid
            else:
                hi = mid
    return 0.5 * (lo + hi)
