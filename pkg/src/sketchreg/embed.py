"""Per-realization subspace-embedding errors and the worst-case 2SLS bound."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConditionIVFailed, OutOfDomain, RankDeficient
from .estimators import DataBundle, EstimatorKind, fit_sketched, fit_tsls
from .inference import ceil_int
from .linalg import RANK_TOL, RngStream, spectral_norm, thin_svd
from .sketch import SketchKind, SketchPlan, SketchScheme, apply_sketch, plan_sketch


@dataclass(frozen=True)
class EmbedErrors:
    eps1: float
    eps2: float
    eps3: float
    sigma_min_uzux: float
    norm_ehat: float
    sigma_min_x: float
    condition_iv_ok: bool


def f1(eps1: float, eps2: float) -> float:
    if not 0.0 <= eps1 < 1.0 or eps2 < 0.0:
        raise OutOfDomain(f"need 0 <= eps1 < 1 and eps2 >= 0, got ({eps1}, {eps2})")
    return (eps1 + eps2 * (eps2 + 2.0)) / (1.0 - eps1)


def f2(eps1: float, eps2: float) -> float:
    if not 0.0 <= eps1 < 1.0 or eps2 < 0.0:
        raise OutOfDomain(f"need 0 <= eps1 < 1 and eps2 >= 0, got ({eps1}, {eps2})")
    return eps2 + eps1 / (1.0 - eps1) + eps2 * eps1 / (1.0 - eps1)


def _left_basis(A: np.ndarray):
    svd = thin_svd(A)
    s = svd.singular_values
    if s[-1] <= RANK_TOL * s[0]:
        raise RankDeficient(int(np.argmin(s)))
    return svd.U, float(s[-1])


def measure_embed_errors(X, Z, e_hat, plan: SketchPlan) -> EmbedErrors:
    """Embedding errors of the realized sketch on the column spaces of Z and X."""
    X = np.asarray(X, dtype=np.float64)
    Z = np.asarray(Z, dtype=np.float64)
    e = np.asarray(e_hat, dtype=np.float64).reshape(-1)
    Ux, smin_x = _left_basis(X)
    Uz, _ = _left_basis(Z)
    q, p = Uz.shape[1], Ux.shape[1]
    S = apply_sketch(plan, np.column_stack([Uz, Ux, e]))
    SUz, SUx, Se = S[:, :q], S[:, q : q + p], S[:, -1]
    UzUx = Uz.T @ Ux
    eps1 = spectral_norm(SUz.T @ SUz - np.eye(q))
    eps2 = spectral_norm(SUz.T @ SUx - UzUx)
    norm_e = float(np.linalg.norm(e))
    gap = np.linalg.norm(SUz.T @ Se - Uz.T @ e)
    eps3 = float(gap / norm_e) if norm_e > 0 else 0.0
    smin = thin_svd(UzUx).sigma_min
    ok = eps1 < 1.0 and smin**2 >= 2.0 * f1(eps1, eps2)
    return EmbedErrors(eps1, eps2, eps3, smin, norm_e, smin_x, bool(ok))


@dataclass(frozen=True)
class BoundCheck:
    bound: float
    actual: float
    holds: bool
    errors: EmbedErrors


def tsls_bound(errors: EmbedErrors) -> float:
    """Worst-case bound on ``||beta_sketch - beta_full||`` for 2SLS."""
    a, b = f1(errors.eps1, errors.eps2), f2(errors.eps1, errors.eps2)
    s2 = errors.sigma_min_uzux**2
    num = b + errors.eps3 * errors.norm_ehat * (1.0 + b)
    return num / (errors.sigma_min_x * s2) * (1.0 + 2.0 * a / s2)


def tsls_bound_check(data: DataBundle, plan: SketchPlan) -> BoundCheck:
    """Compare the realized 2SLS sketching error with the worst-case bound.

    Raises
    ------
    ConditionIVFailed
        When the instrument-strength precondition fails for this sketch;
        the instance is untestable rather than a violation.
    """
    full = fit_tsls(data)
    errors = measure_embed_errors(data.X, data.Z, full.residuals, plan)
    if not errors.condition_iv_ok:
        raise ConditionIVFailed(errors)
    sk = fit_sketched(data, plan, EstimatorKind.TSLS)
    actual = float(np.linalg.norm(sk.beta - full.beta))
    bound = tsls_bound(errors)
    return BoundCheck(bound, actual, bool(actual <= bound), errors)


def countsketch_size_bound(p: int, q: int, eps: float, delta: float) -> int:
    """Countsketch rows sufficient for the 2SLS embedding conditions."""
    if not 0.0 < eps <= 1.0 / 3.0 + 1e-15:
        raise OutOfDomain(f"eps must lie in (0, 1/3], got {eps}")
    if not 0.0 < delta < 0.5:
        raise OutOfDomain(f"delta must lie in (0, 1/2), got {delta}")
    if p < 1 or q < 1:
        raise OutOfDomain("p and q must be positive")
    return ceil_int(max(q * (q + 1), 2 * p * q) / (eps * eps * delta))


# ---------------------------------------------------------------------------
# audits over many plans
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AuditRow:
    scheme: str
    plan_index: int
    seed: int
    eps1: float
    eps2: float
    eps3: float
    sigma_min_uzux: float
    condition_iv_ok: bool
    bound: float
    actual: float
    holds: bool | None  # None when the instance is untestable


def audit_fixture(n: int = 4096, p: int = 2, q: int = 4, seed: int = 2024,
                  first_stage: float = 1.0, noise: float = 0.3) -> DataBundle:
    """Fixed 2SLS data set for the bound audit.

    ``Z = [1, N(0, I_{q-1})]``, one endogenous regressor
    ``x = Z (0, first_stage, ...) + noise * eta`` and
    ``y = 1 + x + eta + eps``; ``X = [1, x]`` when ``p = 2``.
    """
    rng = np.random.default_rng(seed)
    Z = np.column_stack([np.ones(n), rng.standard_normal((n, q - 1))])
    eta = rng.standard_normal(n)
    zeta = np.r_[0.0, np.full(q - 1, first_stage)]
    x = Z @ zeta + noise * eta
    X = np.column_stack([Z[:, : p - 1], x])
    y = X.sum(axis=1) + eta + rng.standard_normal(n)
    return DataBundle(y, X, Z)


def audit_plans(data: DataBundle, scheme, m: int, n_plans: int, stream: RngStream) -> list[AuditRow]:
    kind = SketchKind.parse(scheme)
    rows = []
    for i in range(n_plans):
        plan = plan_sketch(SketchScheme(kind, m), data.n, stream.spawn(i))
        try:
            chk = tsls_bound_check(data, plan)
            e = chk.errors
            rows.append(AuditRow(kind.value, i, stream.seed, e.eps1, e.eps2, e.eps3,
                                 e.sigma_min_uzux, True, chk.bound, chk.actual, chk.holds))
        except ConditionIVFailed as exc:
            e = exc.errors
            rows.append(AuditRow(kind.value, i, stream.seed, e.eps1, e.eps2, e.eps3,
                                 e.sigma_min_uzux, False, math.nan, math.nan, None))
    return rows


def summarize_audit(rows) -> dict:
    testable = [r for r in rows if r.holds is not None]
    return {
        "plans": len(rows),
        "qualifying": len(testable),
        "violations": sum(1 for r in testable if not r.holds),
        "max_actual_over_bound": max((r.actual / r.bound for r in testable if r.bound > 0), default=math.nan),
    }
