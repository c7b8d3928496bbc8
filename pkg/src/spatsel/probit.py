"""First-step probit maximum likelihood for the selection equation.

Fits P(selected = 1 | z) = cdf(design @ beta) on the full sample by
Newton-Raphson with step-halving. The design is the z block, optionally a
location-dummy block, and optionally an intercept, in that order. Location
dummies that perfectly predict selection (the location's indicator is
constant) are dropped and recorded rather than letting the likelihood
diverge; with an intercept present the first remaining location serves as
the reference category.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import log_ndtr

from .dataset import ClusteredDataset
from .exceptions import EstimationError, SeparationError
from .numerics import mills_lambda_dee

GRADIENT_TOL = 1e-8
MAX_ITERATIONS = 100


@dataclass(frozen=True)
class ProbitSpec:
    """First-stage specification switches."""

    include_location_dummies: bool = False
    include_intercept: bool = True


@dataclass
class ProbitFit:
    """Converged (or diagnosed) probit fit.

    `beta` is ordered (z block, kept location dummies, intercept). `vbeta`
    is the inverse observed information at the optimum. `dropped_dummies`
    lists location ids whose dummy was removed for separation.
    """

    beta: np.ndarray
    vbeta: np.ndarray
    loglik: float
    iterations: int
    converged: bool
    dropped_dummies: list
    column_names: list[str]
    z_dim: int
    dummy_locations: list
    reference_location: object | None
    include_intercept: bool

    def design(self, ds: ClusteredDataset, rows: np.ndarray | None = None) -> np.ndarray:
        """Design matrix rows matching the columns this fit was estimated on."""
        return _build_design(ds, self.dummy_locations, self.include_intercept, rows)

    def se(self) -> np.ndarray:
        return np.sqrt(np.diag(self.vbeta))


def _build_design(ds: ClusteredDataset, dummy_locations, include_intercept: bool,
                  rows: np.ndarray | None = None) -> np.ndarray:
    z = ds.z if rows is None else ds.z[rows]
    loc = ds.location_ids if rows is None else ds.location_ids[rows]
    blocks = [z]
    for lid in dummy_locations:
        blocks.append((loc == lid).astype(np.float64)[:, None])
    if include_intercept:
        blocks.append(np.ones((z.shape[0], 1)))
    return np.hstack(blocks) if len(blocks) > 1 else z


def log_likelihood(design: np.ndarray, selected: np.ndarray, beta: np.ndarray) -> float:
    """Probit log-likelihood at beta (used directly by tests as an oracle hook)."""
    w = design @ beta
    s = np.asarray(selected, dtype=bool)
    return float(log_ndtr(w[s]).sum() + log_ndtr(-w[~s]).sum())


def _score_and_information(design, s_mask, w):
    lam_pos, dee_pos = mills_lambda_dee(w)
    lam_neg, dee_neg = mills_lambda_dee(-w)
    # d/dw log cdf(w) = lam(w); d/dw log cdf(-w) = -lam(-w)
    u = np.where(s_mask, lam_pos, -lam_neg)
    # -d2/dw2 log-likelihood contribution = 1 - dee at the signed index
    m = np.where(s_mask, 1.0 - dee_pos, 1.0 - dee_neg)
    grad = design.T @ u
    info = (design * m[:, None]).T @ design
    return grad, info


def fit_probit(ds: ClusteredDataset, spec: ProbitSpec | None = None,
               *, include_location_dummies: bool | None = None,
               include_intercept: bool | None = None) -> ProbitFit:
    """Maximise the probit likelihood on the full sample.

    Starts at beta = 0 and iterates Newton steps with step-halving until the
    gradient max-norm falls below 1e-8 or 100 iterations pass. Returns a fit
    with `converged=False` rather than raising when the iteration cap binds.
    """
    spec = spec or ProbitSpec()
    if include_location_dummies is not None or include_intercept is not None:
        spec = ProbitSpec(
            include_location_dummies=(spec.include_location_dummies
                                      if include_location_dummies is None else include_location_dummies),
            include_intercept=(spec.include_intercept
                               if include_intercept is None else include_intercept),
        )

    s_mask = ds.selected
    n_sel = int(s_mask.sum())
    if n_sel == 0 or n_sel == ds.n_obs:
        raise SeparationError(
            "selection indicator is constant across the sample; "
            "the probit likelihood has no maximiser"
        )

    dropped: list = []
    dummy_locations: list = []
    reference = None
    if spec.include_location_dummies:
        kept = []
        for lid, members in ds.locations.items():
            sel = s_mask[members]
            if sel.all() or not sel.any():
                dropped.append(lid)
            else:
                kept.append(lid)
        if not kept:
            raise SeparationError(
                "every location's selection indicator is constant; "
                "all location dummies would be dropped"
            )
        if spec.include_intercept:
            reference = kept[0]
            dummy_locations = kept[1:]
        else:
            dummy_locations = kept

    design = _build_design(ds, dummy_locations, spec.include_intercept)
    names = list(ds.z_names) + [f"loc[{lid}]" for lid in dummy_locations]
    if spec.include_intercept:
        names.append("const")

    k = design.shape[1]
    beta = np.zeros(k)
    loglik = log_likelihood(design, s_mask, beta)
    iterations = 0
    converged = False
    grad = np.zeros(k)
    info = np.eye(k)
    for iterations in range(1, MAX_ITERATIONS + 1):
        w = design @ beta
        grad, info = _score_and_information(design, s_mask, w)
        if np.max(np.abs(grad)) <= GRADIENT_TOL:
            converged = True
            iterations -= 1
            break
        try:
            step = np.linalg.solve(info, grad)
        except np.linalg.LinAlgError:
            raise EstimationError(
                "selection design matrix is rank deficient after dummy drops"
            ) from None
        scale = 1.0
        for _ in range(40):
            candidate = beta + scale * step
            cand_ll = log_likelihood(design, s_mask, candidate)
            if cand_ll >= loglik - 1e-13:
                break
            scale *= 0.5
        beta = beta + scale * step
        loglik = cand_ll
    else:
        w = design @ beta
        grad, info = _score_and_information(design, s_mask, w)
        converged = bool(np.max(np.abs(grad)) <= GRADIENT_TOL)
        iterations = MAX_ITERATIONS

    try:
        vbeta = np.linalg.inv(info)
    except np.linalg.LinAlgError:
        raise EstimationError(
            "observed information is singular at the optimum"
        ) from None
    vbeta = 0.5 * (vbeta + vbeta.T)

    return ProbitFit(
        beta=beta, vbeta=vbeta, loglik=loglik, iterations=iterations,
        converged=converged, dropped_dummies=dropped, column_names=names,
        z_dim=ds.q, dummy_locations=dummy_locations,
        reference_location=reference, include_intercept=spec.include_intercept,
    )


def predict_index(fit: ProbitFit, ds: ClusteredDataset) -> np.ndarray:
    """Fitted selection index design @ beta for every selected observation,
    in dataset order."""
    if not fit.converged:
        raise EstimationError("probit fit did not converge; refusing to predict")
    rows = ds.selected_indices()
    return fit.design(ds, rows) @ fit.beta
