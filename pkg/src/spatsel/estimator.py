"""Second-step estimation and the corrected variance.

`two_step_fit` runs the full pipeline on a dataset and a difference
operator: probit first stage, inverse Mills ratio per selected
observation, then OLS of the differenced outcome on the differenced
regressors W = [x, mills]. No constant enters the differenced regression
by default (the operator annihilates it); `add_constant` appends one for
reporting parity.

The variance of the second-step coefficients combines two pieces built
from the same sandwich B (DW)' [V1 + V2] (DW) B' with B = [(DW)'DW]^-1:

V1 = rho^2 * D R D'         R   diagonal, entries d_i = 1 - lam_i (c_i + lam_i)
V2 = rho^2 * D S z Vb z' S D'   S = diag(1 - d_i), z the selection design,
                                Vb the probit coefficient covariance

Everything is evaluated in factored form through G = D'(DW); no dense
N x N matrix is ever formed. `heckman_classic` is the no-differencing
baseline: OLS of the outcome on [1, x, mills] over the selected sample
with the same variance algebra at D = identity.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dataset import ClusteredDataset
from .differencing import DifferenceOperator
from .exceptions import EstimationError
from .numerics import mills_lambda_dee
from .probit import ProbitFit, ProbitSpec, fit_probit, predict_index

RANK_TOL = 1e-10
MILLS_NAME = "mills"
VARIANCE_VARIANTS = ("mills", "residual", "classic")


@dataclass
class TwoStepFit:
    """Second-step OLS fit with its corrected covariance.

    `theta` holds every coefficient in column order (`names`); `delta` is
    the x block and `rho` the mills coefficient. `v1`/`v2` are the two
    sandwich components of `v_twostep` (selection-error part and
    first-step estimation part).
    """

    names: list[str]
    theta: np.ndarray
    delta: np.ndarray
    rho: float
    v_twostep: np.ndarray
    v1: np.ndarray
    v2: np.ndarray
    residuals: np.ndarray
    m_rows: int
    n_selected: int
    probit: ProbitFit
    design_diff: np.ndarray = field(repr=False)
    outcome_diff: np.ndarray = field(repr=False)
    mills: np.ndarray = field(repr=False)
    dee: np.ndarray = field(repr=False)
    xtx_inv: np.ndarray = field(repr=False)
    mills_col: int = -1

    def se(self) -> np.ndarray:
        return np.sqrt(np.maximum(np.diag(self.v_twostep), 0.0))

    def tstats(self) -> np.ndarray:
        se = self.se()
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(se > 0, self.theta / se, np.nan)

    def coefficient(self, name: str) -> float:
        return float(self.theta[self.names.index(name)])


def _solve_ols(design: np.ndarray, y: np.ndarray, names: list[str]):
    """QR least squares with an explicit collinearity check.

    A column is declared collinear when its post-QR diagonal falls below
    RANK_TOL times the leading diagonal.
    """
    m, k = design.shape
    if m < k + 1:
        raise EstimationError(
            f"differenced system has {m} rows, need at least {k + 1} "
            f"for {k} coefficients"
        )
    q, r = np.linalg.qr(design)
    diag = np.abs(np.diag(r))
    lead = diag.max() if k else 0.0
    bad = np.flatnonzero(diag < RANK_TOL * lead)
    if bad.size:
        raise EstimationError(
            f"design column {names[bad[0]]!r} is collinear after differencing"
        )
    theta = np.linalg.solve(r, q.T @ y)
    rinv = np.linalg.solve(r, np.eye(k))
    xtx_inv = rinv @ rinv.T
    return theta, xtx_inv


def _obs_residual_scale(op, residuals: np.ndarray, n_cols: int) -> np.ndarray:
    """Per-observation squared-error scale from differenced residuals.

    Each row's squared residual is deflated by its weight norm, then
    averaged over the rows touching the observation; observations in no
    row fall back to the pooled mean.
    """
    if op is None:
        return residuals**2
    norms = op.row_weight_norms()
    scaled = residuals**2 / norms
    pattern = op.matrix.copy()
    pattern.data = np.ones_like(pattern.data)
    totals = pattern.T @ scaled
    counts = np.asarray(pattern.sum(axis=0)).ravel()
    pooled = float(scaled.mean()) if len(scaled) else 0.0
    out = np.full(n_cols, pooled)
    touched = counts > 0
    out[touched] = totals[touched] / counts[touched]
    return out


def _sandwich(design_diff, xtx_inv, op, dee, rho, z_sel, vbeta,
              variant: str, residuals: np.ndarray | None):
    """B (DW)'[V1 + V2](DW) B' in factored form. Returns (v, v1, v2)."""
    if variant not in VARIANCE_VARIANTS:
        raise EstimationError(f"unknown variance variant {variant!r}")
    if op is not None:
        g = op.matrix.T @ design_diff              # D'(DW), n_sel x k
    else:
        g = design_diff
    if variant == "mills":
        omega = (rho * rho) * dee
    elif variant == "classic":
        # textbook two-step middle: residual-based total error variance
        # less the explained truncation part, sigma2 - rho^2 * (1 - d_i)
        if op is not None:
            raise EstimationError(
                "the classic variance middle is defined for the undifferenced fit"
            )
        one_minus_d = 1.0 - dee
        sigma2 = float(residuals @ residuals) / len(residuals) \
            + float(one_minus_d.mean()) * rho * rho
        omega = np.maximum(sigma2 - (rho * rho) * one_minus_d, 0.0)
    else:
        omega = _obs_residual_scale(op, residuals, g.shape[0])
    meat1 = (g * omega[:, None]).T @ g
    gz = g.T @ ((1.0 - dee)[:, None] * z_sel)      # k x kz
    meat2 = (rho * rho) * gz @ vbeta @ gz.T
    v1 = xtx_inv @ meat1 @ xtx_inv
    v2 = xtx_inv @ meat2 @ xtx_inv
    v = v1 + v2
    return 0.5 * (v + v.T), v1, v2


def variance_two_step(fit: TwoStepFit, op: DifferenceOperator | None,
                      probit: ProbitFit, ds: ClusteredDataset,
                      variant: str = "mills") -> np.ndarray:
    """Corrected covariance of the second-step coefficients.

    Recomputes the sandwich from the pieces stored on `fit`, so callers can
    probe structural cases (a fit with rho forced to zero, a probit with
    vbeta zeroed) without refitting. `variant="residual"` swaps the
    model-implied diagonal rho^2 * d_i for empirical squared residuals.
    """
    rows = ds.selected_indices()
    z_sel = probit.design(ds, rows)
    v, _, _ = _sandwich(fit.design_diff, fit.xtx_inv, op, fit.dee, fit.rho,
                        z_sel, probit.vbeta, variant, fit.residuals)
    return v


def _assemble(names, theta, xtx_inv, design_diff, y_diff, op, lam, dee,
              probit, z_sel, variant, n_selected, x_slice, mills_col):
    residuals = y_diff - design_diff @ theta
    rho = float(theta[mills_col])
    v, v1, v2 = _sandwich(design_diff, xtx_inv, op, dee, rho, z_sel,
                          probit.vbeta, variant, residuals)
    return TwoStepFit(
        names=names, theta=theta, delta=theta[x_slice], rho=rho,
        v_twostep=v, v1=v1, v2=v2, residuals=residuals,
        m_rows=design_diff.shape[0], n_selected=n_selected, probit=probit,
        design_diff=design_diff, outcome_diff=y_diff, mills=lam, dee=dee,
        xtx_inv=xtx_inv, mills_col=mills_col,
    )


def two_step_fit(ds: ClusteredDataset, op: DifferenceOperator,
                 probit_spec: ProbitSpec | None = None, *,
                 probit_fit: ProbitFit | None = None,
                 add_constant: bool = False,
                 variance: str = "mills") -> TwoStepFit:
    """Differenced two-step fit: probit, mills ratio, differenced OLS.

    The operator must have been built over the selected subsample of `ds`
    (same observations, same order). Pass `probit_fit` to reuse a first
    stage across several operators.
    """
    rows = ds.selected_indices()
    if op.cols != len(rows) or not np.array_equal(op.selected_indices, rows):
        raise EstimationError(
            "operator columns do not match the dataset's selected observations"
        )
    probit = probit_fit or fit_probit(ds, probit_spec)
    if not probit.converged:
        raise EstimationError("first-stage probit did not converge")

    index = predict_index(probit, ds)
    lam, dee = mills_lambda_dee(index)

    x_sel = ds.x[rows]
    names = list(ds.x_names) + [MILLS_NAME]
    w = np.column_stack([x_sel, lam])
    mills_col = len(ds.x_names)

    dw = op.apply(w)
    dy = op.apply(ds.outcome[rows])
    if add_constant:
        # appended to the differenced system; a constant in W itself would be
        # annihilated exactly, so it is only identified at this level
        names.append("const")
        dw = np.column_stack([dw, np.ones(op.rows)])
    theta, xtx_inv = _solve_ols(dw, dy, names)
    z_sel = probit.design(ds, rows)
    return _assemble(names, theta, xtx_inv, dw, dy, op, lam, dee, probit,
                     z_sel, variance, len(rows), slice(0, len(ds.x_names)),
                     mills_col)


def heckman_classic(ds: ClusteredDataset, probit_spec: ProbitSpec | None = None,
                    *, probit_fit: ProbitFit | None = None,
                    variance: str = "classic") -> TwoStepFit:
    """No-differencing baseline: OLS of the outcome on [1, x, mills] over the
    selected sample, with the textbook two-step-corrected covariance.

    The default middle matrix is the classic residual-based one,
    sigma2-hat - rho-hat^2 * (1 - d_i) with sigma2-hat = e'e/N +
    mean(1 - d) * rho-hat^2; `variance="mills"` instead applies the same
    model-implied diagonal the differenced fits use (rho^2 * d_i), and
    `variance="residual"` the per-observation squared residuals. The
    first-step correction term is identical across variants.
    """
    probit = probit_fit or fit_probit(ds, probit_spec)
    if not probit.converged:
        raise EstimationError("first-stage probit did not converge")
    rows = ds.selected_indices()
    index = predict_index(probit, ds)
    lam, dee = mills_lambda_dee(index)

    names = ["const"] + list(ds.x_names) + [MILLS_NAME]
    w = np.column_stack([np.ones(len(rows)), ds.x[rows], lam])
    mills_col = len(names) - 1
    y = ds.outcome[rows]
    theta, xtx_inv = _solve_ols(w, y, names)
    z_sel = probit.design(ds, rows)
    return _assemble(names, theta, xtx_inv, w, y, None, lam, dee, probit,
                     z_sel, variance, len(rows), slice(1, 1 + len(ds.x_names)),
                     mills_col)


# ---------------------------------------------------------------------------
# reporting
# ---------------------------------------------------------------------------


def coefficient_table(fit: TwoStepFit) -> list[tuple[str, float, float, float]]:
    """Rows of (name, estimate, se, t)."""
    se = fit.se()
    t = fit.tstats()
    return [(n, float(b), float(s), float(tv))
            for n, b, s, tv in zip(fit.names, fit.theta, se, t)]


def write_coefficients_csv(fit: TwoStepFit, path, bootstrap: dict | None = None) -> None:
    """Write (name, estimate, se, t) rows; full float precision.

    `bootstrap` maps coefficient name -> BootstrapResult and appends the
    columns (p_boot, ci_low, ci_high, B, seed) when given.
    """
    with open(path, "w", encoding="utf-8") as fh:
        header = "name,estimate,se,t"
        if bootstrap:
            header += ",p_boot,ci_low,ci_high,B,seed"
        fh.write(header + "\n")
        for name, est, se, t in coefficient_table(fit):
            row = f'"{name}",{est!r},{se!r},{t!r}'
            if bootstrap:
                b = bootstrap[name]
                row += (f",{b.p_value!r},{b.ci_low!r},{b.ci_high!r},"
                        f"{b.replications},{b.seed}")
            fh.write(row + "\n")


def report_text(fit: TwoStepFit, extra: dict | None = None) -> str:
    """Flat key-value text report of a fit."""
    lines = [
        f"n_selected = {fit.n_selected}",
        f"m_rows = {fit.m_rows}",
        f"probit_converged = {fit.probit.converged}",
        f"probit_iterations = {fit.probit.iterations}",
        f"probit_dropped_dummies = {len(fit.probit.dropped_dummies)}",
    ]
    for key, value in (extra or {}).items():
        lines.append(f"{key} = {value}")
    lines.append("")
    lines.append(f"{'name':<16}{'estimate':>14}{'se':>14}{'t':>10}")
    for name, b, s, t in coefficient_table(fit):
        lines.append(f"{name:<16}{b:>14.6g}{s:>14.6g}{t:>10.4g}")
    return "\n".join(lines) + "\n"
