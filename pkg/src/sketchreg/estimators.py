"""OLS and 2SLS on full or sketched data, with t and first-stage F tests.

Covariance matrices stored on :class:`FitResult` are variances of the
coefficient vector itself (already divided by the sample size), so a
standard error is simply ``sqrt(diag(cov))``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg as sla
from scipy.stats import chi2

from .errors import (
    DimensionMismatch,
    NotIdentified,
    OutOfDomain,
    SingularBlock,
    SketchTooSmall,
    ZeroVariance,
)
from .linalg import normal_sf_two_sided, qr_factor
from .sketch import SketchPlan, sketch_data

NOMINAL_LEVELS = (0.01, 0.05, 0.10)
BLOCK_TOL = 1e-12


class EstimatorKind(str, enum.Enum):
    OLS = "ols"
    TSLS = "tsls"


class CovKind(str, enum.Enum):
    HOMO = "homo"
    ROBUST = "robust"


@dataclass(frozen=True)
class DataBundle:
    y: np.ndarray
    X: np.ndarray
    Z: np.ndarray | None = None

    def __post_init__(self):
        y = np.asarray(self.y, dtype=np.float64).reshape(-1)
        X = np.asarray(self.X, dtype=np.float64)
        if X.ndim == 1:
            X = X[:, None]
        if X.ndim != 2 or X.shape[0] != y.shape[0]:
            raise DimensionMismatch(f"y has {y.shape[0]} rows but X has shape {X.shape}")
        Z = self.Z
        if Z is not None:
            Z = np.asarray(Z, dtype=np.float64)
            if Z.ndim == 1:
                Z = Z[:, None]
            if Z.ndim != 2 or Z.shape[0] != y.shape[0]:
                raise DimensionMismatch(f"y has {y.shape[0]} rows but Z has shape {Z.shape}")
        for name, arr in (("y", y), ("X", X), ("Z", Z)):
            if arr is not None and not np.all(np.isfinite(arr)):
                raise DimensionMismatch(f"{name} contains non-finite values")
        # contiguous storage keeps BLAS on one code path, so equal inputs
        # give bitwise-equal fits regardless of how they were sliced
        object.__setattr__(self, "y", np.ascontiguousarray(y))
        object.__setattr__(self, "X", np.ascontiguousarray(X))
        object.__setattr__(self, "Z", None if Z is None else np.ascontiguousarray(Z))

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def q(self) -> int | None:
        return None if self.Z is None else self.Z.shape[1]


@dataclass(frozen=True)
class FitResult:
    kind: EstimatorKind
    beta: np.ndarray
    residuals: np.ndarray
    cov_homo: np.ndarray
    cov_robust: np.ndarray
    sample_size_used: int
    s_squared: float
    effective_m: int | None = None
    scheme: str = "none"

    def cov(self, which) -> np.ndarray:
        return self.cov_homo if CovKind(which) is CovKind.HOMO else self.cov_robust

    @property
    def se_homo(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.cov_homo), 0.0, None))

    @property
    def se_robust(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.cov_robust), 0.0, None))


@dataclass(frozen=True)
class TestResult:
    statistic: float
    df_num: int
    df_denom: float
    p_value: float
    reject_at: dict = field(default_factory=dict)


def _reject_map(p_value: float) -> dict:
    return {a: bool(p_value < a) for a in NOMINAL_LEVELS}


def _sym(A: np.ndarray) -> np.ndarray:
    return 0.5 * (A + A.T)


def _fit_from_qr(Q, R, y, X, kind, scheme="none", effective_m=None) -> FitResult:
    # Q spans the regressors actually used in the second step (X or P_Z X)
    beta = sla.solve_triangular(R, Q.T @ y)
    resid = y - X @ beta
    n = y.shape[0]
    s2 = float(resid @ resid) / n
    Rinv = sla.solve_triangular(R, np.eye(R.shape[0]))
    bread = Rinv @ Rinv.T
    Qe = Q * resid[:, None]
    meat = Qe.T @ Qe
    return FitResult(
        kind=EstimatorKind(kind),
        beta=beta,
        residuals=resid,
        cov_homo=_sym(s2 * bread),
        cov_robust=_sym(Rinv @ meat @ Rinv.T),
        sample_size_used=n,
        s_squared=s2,
        effective_m=effective_m,
        scheme=scheme,
    )


def fit_ols(data: DataBundle, *, scheme: str = "none", effective_m: int | None = None) -> FitResult:
    """Least squares with homoskedastic and sandwich covariances (no df correction)."""
    Q, R = qr_factor(data.X)
    return _fit_from_qr(Q, R, data.y, data.X, EstimatorKind.OLS, scheme, effective_m)


def fit_tsls(data: DataBundle, *, scheme: str = "none", effective_m: int | None = None) -> FitResult:
    """Two-stage least squares via a QR of Z and a QR of the fitted regressors.

    Residuals are the structural ones, ``y - X beta``.
    """
    if data.Z is None:
        raise NotIdentified("2SLS needs instruments")
    if data.q < data.p:
        raise NotIdentified(f"{data.q} instruments cannot identify {data.p} coefficients")
    Qz, _ = qr_factor(data.Z)
    Xhat = Qz @ (Qz.T @ data.X)
    Q, R = qr_factor(Xhat)
    return _fit_from_qr(Q, R, data.y, data.X, EstimatorKind.TSLS, scheme, effective_m)


def fit(data: DataBundle, kind=EstimatorKind.OLS, **kw) -> FitResult:
    return fit_ols(data, **kw) if EstimatorKind(kind) is EstimatorKind.OLS else fit_tsls(data, **kw)


def fit_sketched(data: DataBundle, plan: SketchPlan, kind=EstimatorKind.OLS) -> FitResult:
    """Sketch ``(y, X, Z)`` with one plan and fit on the compressed rows."""
    kind = EstimatorKind(kind)
    Z = data.Z if kind is EstimatorKind.TSLS else None
    sd = sketch_data(plan, data.y, data.X, Z)
    need = data.p if kind is EstimatorKind.OLS else max(data.p, data.q or 0)
    if sd.rows_out < need:
        raise SketchTooSmall(f"sketch kept {sd.rows_out} rows, need at least {need}")
    sk = DataBundle(sd.y, sd.X, sd.Z)
    return fit(sk, kind, scheme=plan.kind.value, effective_m=sd.effective_m)


def t_test(fit_result: FitResult, c, null_value: float, cov=CovKind.HOMO) -> TestResult:
    """Two-sided asymptotic t test of ``c' beta = null_value``."""
    c = np.asarray(c, dtype=np.float64).reshape(-1)
    V = fit_result.cov(cov)
    if c.shape[0] != V.shape[0]:
        raise DimensionMismatch(f"contrast has length {c.shape[0]}, expected {V.shape[0]}")
    var = float(c @ V @ c)
    if not var > 0.0 or not math.isfinite(var):
        raise ZeroVariance(f"c' V c = {var}")
    stat = (float(c @ fit_result.beta) - null_value) / math.sqrt(var)
    p = normal_sf_two_sided(stat)
    return TestResult(stat, 1, math.inf, p, _reject_map(p))


def first_stage_f(data: DataBundle, endogenous_col: int, excluded, cov=CovKind.HOMO) -> TestResult:
    """Wald test, scaled by its dimension, that the excluded instruments
    have zero coefficients in the first-stage regression."""
    if data.Z is None:
        raise NotIdentified("first-stage test needs instruments")
    excluded = np.asarray(excluded, dtype=np.int64).reshape(-1)
    d = excluded.size
    if d < 1:
        raise OutOfDomain("at least one excluded instrument is required")
    x = data.X[:, endogenous_col]
    first = fit_ols(DataBundle(x, data.Z))
    if first.s_squared <= (BLOCK_TOL**2) * float(np.mean(x * x)):
        raise SingularBlock("first stage fits exactly; covariance block is zero")
    zeta = first.beta[excluded]
    V = first.cov(cov)[np.ix_(excluded, excluded)]
    ev = np.linalg.eigvalsh(V)
    if not ev[-1] > 0.0 or ev[0] <= BLOCK_TOL * ev[-1]:
        raise SingularBlock("covariance block of excluded instruments is singular")
    try:
        cf = sla.cho_factor(V)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise SingularBlock("covariance block of excluded instruments is singular") from exc
    stat = float(zeta @ sla.cho_solve(cf, zeta)) / d
    p = float(chi2.sf(stat * d, d))
    return TestResult(stat, d, math.inf, p, _reject_map(p))
