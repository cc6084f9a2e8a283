"""Monte Carlo checks of sketch moment identities and limit results.

Every check returns a :class:`MomentReport` whose rows compare an empirical
quantity with its theoretical value. Monte Carlo standard errors come from
splitting replications into 20 batches; a row passes when the discrepancy
is within three batch standard errors.
"""

from __future__ import annotations

import csv
import enum
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np
from scipy.stats import kstest

from .errors import BadRatio, UnsupportedScheme
from .estimators import EstimatorKind, fit, fit_sketched
from .linalg import RngStream
from .montecarlo import Design, DgpSpec, generate, theoretical_covariances
from .sketch import (
    SketchKind,
    SketchPlan,
    SketchScheme,
    apply_sketch,
    dense_matrix,
    leverage_probs,
    plan_sketch,
)

N_BATCHES = 20
SIGMA_RULE = 3.0
FOURTH_MOMENT_BOUND = 3.0
RP_KINDS = (SketchKind.GAUSSIAN, SketchKind.COUNTSKETCH, SketchKind.SRHT, SketchKind.SRFT)


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------


@dataclass
class MomentRow:
    name: str
    empirical: float
    theoretical: float
    mc_stderr: float
    passed: bool
    note: str = ""


@dataclass
class MomentReport:
    scheme: str
    n: int
    m: int
    replications: int
    rows: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    @property
    def all_passed(self) -> bool:
        return all(r.passed for r in self.rows)

    def row(self, name: str) -> MomentRow:
        for r in self.rows:
            if r.name == name:
                return r
        raise KeyError(name)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["all_passed"] = self.all_passed
        return d

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["scheme", "n", "m", "replications", "name", "empirical",
                        "theoretical", "mc_stderr", "pass", "note"])
            for r in self.rows:
                w.writerow([self.scheme, self.n, self.m, self.replications, r.name,
                            repr(r.empirical), repr(r.theoretical), repr(r.mc_stderr),
                            r.passed, r.note])

    def write_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, default=str)

    def format(self) -> str:
        lines = [f"{self.scheme}  n={self.n}  m={self.m}  reps={self.replications}"]
        for r in self.rows:
            flag = "PASS" if r.passed else "FAIL"
            lines.append(f"  [{flag}] {r.name:<34} emp={r.empirical:< 12.6g} "
                         f"theo={r.theoretical:< 12.6g} se={r.mc_stderr:.3g} {r.note}")
        return "\n".join(lines)


def batch_mean_se(values, n_batches: int = N_BATCHES) -> tuple[float, float]:
    """Overall mean and the standard error from batch means."""
    v = np.asarray(values, dtype=np.float64)
    groups = np.array_split(v, min(n_batches, v.size))
    means = np.array([g.mean() for g in groups])
    se = means.std(ddof=1) / math.sqrt(means.size) if means.size > 1 else float("inf")
    return float(v.mean()), float(se)


def compare(name: str, values, theoretical: float, note: str = "") -> MomentRow:
    emp, se = batch_mean_se(values)
    tol = SIGMA_RULE * se + 1e-12 * max(1.0, abs(theoretical))
    return MomentRow(name, emp, float(theoretical), se, bool(abs(emp - theoretical) <= tol), note)


# ---------------------------------------------------------------------------
# distributions of (U, V)
# ---------------------------------------------------------------------------


class UVKind(str, enum.Enum):
    GAUSSIAN_INDEP = "gaussian_indep"
    GAUSSIAN_EQUAL = "gaussian_equal"
    PRODUCT = "product"
    CUSTOM = "custom"


@dataclass(frozen=True)
class UVDistribution:
    """Law of an i.i.d. pair (U_i, V_i) together with its low moments."""

    kind: UVKind
    eu2: float
    ev2: float
    euv: float
    eu2v2: float
    sampler: Callable | None = None

    @classmethod
    def gaussian_indep(cls) -> "UVDistribution":
        return cls(UVKind.GAUSSIAN_INDEP, 1.0, 1.0, 0.0, 1.0)

    @classmethod
    def gaussian_equal(cls) -> "UVDistribution":
        return cls(UVKind.GAUSSIAN_EQUAL, 1.0, 1.0, 1.0, 3.0)

    @classmethod
    def product(cls) -> "UVDistribution":
        # V = U W with U, W independent N(0, 1)
        return cls(UVKind.PRODUCT, 1.0, 1.0, 0.0, 3.0)

    @classmethod
    def custom(cls, sampler, eu2, ev2, euv, eu2v2) -> "UVDistribution":
        return cls(UVKind.CUSTOM, eu2, ev2, euv, eu2v2, sampler)

    @property
    def var_uv(self) -> float:
        return self.eu2v2 - self.euv**2

    @property
    def rs_limit(self) -> float:
        return self.var_uv

    @property
    def bs_limit(self) -> float:
        return self.eu2v2

    @property
    def rp_limit(self) -> float:
        return self.eu2 * self.ev2 + self.euv**2

    def sample(self, n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        if self.kind is UVKind.CUSTOM:
            return self.sampler(n, rng)
        U = rng.standard_normal(n)
        if self.kind is UVKind.GAUSSIAN_INDEP:
            return U, rng.standard_normal(n)
        if self.kind is UVKind.GAUSSIAN_EQUAL:
            return U, U.copy()
        return U, U * rng.standard_normal(n)


UV_PRESETS = {
    "gaussian_indep": UVDistribution.gaussian_indep,
    "gaussian_equal": UVDistribution.gaussian_equal,
    "product": UVDistribution.product,
}


# ---------------------------------------------------------------------------
# decomposition of U' Pi' Pi V
# ---------------------------------------------------------------------------


def psi_phi(plan: SketchPlan) -> tuple[np.ndarray, np.ndarray]:
    """``psi_i = sum_k Pi_ki^2 - 1`` and ``phi_ij = sum_k Pi_ki Pi_kj`` (i != j)."""
    P = dense_matrix(plan)
    G = P.T @ P
    psi = np.diag(G) - 1.0
    phi = G - np.diag(np.diag(G))
    return psi, phi


def decomposed_product(plan: SketchPlan, U, V, drop_phi: bool = False) -> float:
    """``U' Pi' Pi V`` rebuilt as ``U'V + sum psi_i U_i V_i + sum phi_ij U_i V_j``."""
    U = np.asarray(U, dtype=np.float64)
    V = np.asarray(V, dtype=np.float64)
    psi, phi = psi_phi(plan)
    total = float(U @ V) + float(psi @ (U * V))
    if not drop_phi:
        total += float(U @ phi @ V)
    return total


def direct_product(plan: SketchPlan, U, V) -> float:
    S = apply_sketch(plan, np.column_stack([U, V]))
    return float(S[:, 0] @ S[:, 1])


# ---------------------------------------------------------------------------
# moment conditions on the entries of Pi
# ---------------------------------------------------------------------------


def _expected_fourth(kind: SketchKind, m: int) -> float | None:
    if kind is SketchKind.GAUSSIAN:
        return 3.0 / m**2
    if kind is SketchKind.COUNTSKETCH:
        return 1.0 / m
    if kind is SketchKind.SRHT:
        return 1.0 / m**2
    return None


def check_rp_conditions(scheme, n: int, m: int, reps: int, stream: RngStream) -> MomentReport:
    """Entry, same-row and cross-row moments of Pi against their RP targets.

    Each replication averages over every index tuple of its realized Pi
    (all (k, i), all k with i != j, all k != l with i != j and p != q);
    replications are independent, so batch standard errors remain valid.
    """
    kind = SketchKind.parse(scheme)
    if kind not in RP_KINDS:
        raise UnsupportedScheme(f"{kind.value} is not a projection scheme")
    stats = np.zeros((reps, 7))
    nn = n * (n - 1)
    for r in range(reps):
        P = dense_matrix(plan_sketch(SketchScheme(kind, m), n, stream.spawn(r)))
        P2 = P * P
        s1 = P.sum(axis=1)
        s2 = P2.sum(axis=1)
        s4 = (P2 * P2).sum(axis=1)
        pair = s1 * s1 - s2            # sum_{i != j} Pi_ki Pi_kj, per row
        pair_sq = s2 * s2 - s4         # sum_{i != j} Pi_ki^2 Pi_kj^2
        nz = np.count_nonzero(P, axis=1).astype(np.float64)
        stats[r] = (
            s1.sum() / (m * n),
            s2.sum() / (m * n),
            m * s4.sum() / (m * n),
            pair.sum() / (m * nn),
            pair_sq.sum() / (m * nn),
            (pair.sum() ** 2 - (pair**2).sum()) / (m * (m - 1) * nn * nn),
            1.0 - (nz * (nz - 1)).sum() / (m * nn),
        )
    note = "convention-dependent" if kind is SketchKind.SRFT else ""
    rows = [
        compare("E[Pi_ki]", stats[:, 0], 0.0, note),
        compare("E[Pi_ki^2]", stats[:, 1], 1.0 / m, note),
    ]
    emp4, se4 = batch_mean_se(stats[:, 2])
    rows.append(MomentRow("m*E[Pi_ki^4] bounded", emp4, FOURTH_MOMENT_BOUND, se4,
                          bool(emp4 <= FOURTH_MOMENT_BOUND + SIGMA_RULE * se4),
                          (note + " " if note else "") + f"bound {FOURTH_MOMENT_BOUND}"))
    target4 = _expected_fourth(kind, m)
    if target4 is not None:
        rows.append(compare("E[Pi_ki^4]", stats[:, 2] / m, target4, note))
    rows += [
        compare("E[Pi_ki Pi_kj]", stats[:, 3], 0.0, note),
        compare("E[Pi_ki^2 Pi_kj^2]", stats[:, 4], 1.0 / m**2, note),
        compare("E[Pi_ki Pi_kj Pi_lp Pi_lq]", stats[:, 5], 0.0, note),
    ]
    if kind is SketchKind.COUNTSKETCH:
        rows.append(compare("P[Pi_ki Pi_kj == 0]", stats[:, 6], 1.0 - 1.0 / m**2,
                            "one nonzero per column"))
    meta = {"seed": stream.seed, "stream_id": stream.stream_id,
            "conventions": {"srft": "Re(unitary DFT), no permutation",
                            "countsketch": "entries +-1, uniform bucket",
                            "srht": "zero padding to a power of two"}}
    return MomentReport(kind.value, n, m, reps, rows, meta)


# ---------------------------------------------------------------------------
# mean squared error of sketched inner products
# ---------------------------------------------------------------------------


def _gaussian_projection(W: np.ndarray, m: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``Pi W`` for Gaussian Pi without forming Pi.

    With ``W = Q R``, ``Pi Q`` has i.i.d. N(0, 1/m) entries because Q has
    orthonormal columns, so ``Pi W`` has the law of ``G R / sqrt(m)``.
    """
    R = np.linalg.qr(W, mode="r")
    return rng.standard_normal((m, R.shape[0])) @ R / math.sqrt(m)


def _sketch_error(kind, U, V, m, stream, probs=None) -> float:
    n = U.shape[0]
    W = np.column_stack([U, V])
    if kind is SketchKind.GAUSSIAN:
        S = _gaussian_projection(W, m, stream.spawn(1).generator())
    else:
        S = apply_sketch(plan_sketch(SketchScheme(kind, m), n, stream.spawn(1), probs), W)
    return float(S[:, 0] @ S[:, 1]) - float(U @ V)


def mse_limit_check(scheme, uv: UVDistribution, n: int, m: int, reps: int,
                    stream: RngStream) -> MomentReport:
    """MSE of ``sqrt(m) (U'Pi'Pi V - U'V) / n`` against its large-n limit."""
    kind = SketchKind.parse(scheme)
    if m / n > 0.1:
        raise BadRatio(f"m/n = {m / n:.3g} exceeds 0.1")
    if kind is SketchKind.LEVERAGE:
        raise UnsupportedScheme("leverage sampling has no data-free MSE limit")
    vals = np.empty(reps)
    for r in range(reps):
        rs = stream.spawn(r)
        U, V = uv.sample(n, rs.spawn(0).generator())
        vals[r] = (math.sqrt(m) * _sketch_error(kind, U, V, m, rs) / n) ** 2
    if kind is SketchKind.BERNOULLI:
        theo, label = uv.bs_limit, "E(U^2 V^2)"
    elif kind is SketchKind.UNIFORM:
        theo, label = uv.rs_limit, "Var(UV)"
    else:
        theo, label = uv.rp_limit, "E(U^2)E(V^2) + E(UV)^2"
    row = compare("MSE", vals, theo, f"limit {label}")
    meta = {"seed": stream.seed, "uv": uv.kind.value}
    return MomentReport(kind.value, n, m, reps, [row], meta)


def exact_rs_variance(p_vec, m: int, n: int, var_uv: float) -> float:
    """Exact variance of ``(U'Pi'Pi V - U'V) / n`` for sampling with replacement."""
    p = np.asarray(p_vec, dtype=np.float64)
    return (1.0 / m - 1.0 / n + (1.0 - 1.0 / m) * math.fsum(p * p)) * var_uv


def rs_variance_check(uv: UVDistribution, n: int, m: int, reps: int, stream: RngStream,
                      probs=None) -> MomentReport:
    """Monte Carlo variance of the sampling error against :func:`exact_rs_variance`."""
    p = np.full(n, 1.0 / n) if probs is None else np.asarray(probs, dtype=np.float64)
    vals = np.empty(reps)
    for r in range(reps):
        rs = stream.spawn(r)
        U, V = uv.sample(n, rs.spawn(0).generator())
        vals[r] = _sketch_error(SketchKind.UNIFORM, U, V, m, rs, probs) / n
    # the error has mean zero, so its second moment is its variance
    row = compare("Var[(U'Pi'Pi V - U'V)/n]", vals**2, exact_rs_variance(p, m, n, uv.var_uv))
    return MomentReport("uniform", n, m, reps, [row], {"seed": stream.seed})


# ---------------------------------------------------------------------------
# degenerate U-statistic CLT condition
# ---------------------------------------------------------------------------


def _columns(kind: SketchKind, m: int, size: int, rng) -> np.ndarray:
    if kind is SketchKind.GAUSSIAN:
        return rng.standard_normal((size, m)) / math.sqrt(m)
    cols = np.zeros((size, m))
    cols[np.arange(size), rng.integers(0, m, size)] = 1.0 - 2.0 * rng.integers(0, 2, size)
    return cols


def hall_ratio_diagnostic(scheme, uv: UVDistribution, n_ladder, m_of_n, reps: int,
                          stream: RngStream) -> MomentReport:
    """Moments of the U-statistic kernel H and its projection G over an n ladder.

    ``reps`` independent pairs of (column of Pi, data point) are drawn per
    ladder rung. Reports ``m E[H^2] / 2`` against its closed form, the
    scaled moments ``m E[H^4]`` and ``m^3 E[G^2]``, and whether the ratio
    ``(E[G^2] + E[H^4]/n) / E[H^2]^2`` falls along the ladder.
    """
    kind = SketchKind.parse(scheme)
    if kind not in (SketchKind.GAUSSIAN, SketchKind.COUNTSKETCH):
        raise UnsupportedScheme(f"{kind.value} does not have i.i.d. columns")
    rows, ratios = [], []
    for step, n in enumerate(n_ladder):
        m = max(1, int(round(m_of_n(n))))
        rng = stream.spawn(step).generator()
        u1, v1 = uv.sample(reps, rng)
        u2, v2 = uv.sample(reps, rng)
        dot = np.einsum("ij,ij->i", _columns(kind, m, reps, rng), _columns(kind, m, reps, rng))
        H = dot * (u1 * v2 + u2 * v1)
        G = dot / m * (uv.eu2 * v1 * v2 + uv.ev2 * u1 * u2 + uv.euv * (u1 * v2 + u2 * v1))
        eh2, _ = batch_mean_se(H**2)
        eh4, se4 = batch_mean_se(H**4)
        eg2, seg = batch_mean_se(G**2)
        ratio = (eg2 + eh4 / n) / eh2**2
        ratios.append(ratio)
        rows.append(compare(f"n={n} m*E[H^2]/2", m * H**2 / 2.0, uv.rp_limit))
        rows.append(MomentRow(f"n={n} m*E[H^4]", m * eh4, float("nan"), m * se4, True, "O(1)"))
        rows.append(MomentRow(f"n={n} m^3*E[G^2]", m**3 * eg2, float("nan"), m**3 * seg, True, "O(1)"))
        rows.append(MomentRow(f"n={n} ratio", ratio, float("nan"), float("nan"), True,
                              f"m={m}"))
    falling = all(b < a for a, b in zip(ratios, ratios[1:]))
    rows.append(MomentRow("ratio decreasing", float(falling), 1.0, 0.0, falling))
    return MomentReport(kind.value, int(n_ladder[-1]), int(round(m_of_n(n_ladder[-1]))), reps,
                        rows, {"seed": stream.seed, "ladder": list(map(int, n_ladder))})


# ---------------------------------------------------------------------------
# asymptotic normality of the sketched estimator
# ---------------------------------------------------------------------------

COVERAGE_LEVELS = (0.90, 0.95, 0.99)
_Z = {0.90: 1.6448536269514722, 0.95: 1.959963984540054, 0.99: 2.5758293035489004}


def normality_check(scheme, dgp: DgpSpec, n: int, m: int, reps: int,
                    stream: RngStream, c=None) -> MomentReport:
    """Coverage of ``sqrt(m) c'(beta_sketch - beta_full)`` standardized by
    the population covariance the limit theory assigns to the scheme
    (robust form for sampling schemes, homoskedastic form for projections)."""
    kind = SketchKind.parse(scheme)
    if reps < 1000:
        raise BadRatio("normality_check needs at least 1000 replications")
    spec = DgpSpec(**{**dgp.__dict__, "n": n})
    est = EstimatorKind.OLS if spec.design is Design.EXOGENOUS else EstimatorKind.TSLS
    cov = theoretical_covariances(spec)
    V = cov["V1"] if kind.is_sampling else cov["V0"]
    c = np.eye(spec.p)[-1] if c is None else np.asarray(c, dtype=np.float64)
    scale = math.sqrt(float(c @ V @ c))
    z = np.empty(reps)
    for r in range(reps):
        rs = stream.spawn(r)
        data = generate(spec, rs.spawn(0))
        full = fit(data, est)
        probs = leverage_probs(data.X) if kind is SketchKind.LEVERAGE else None
        plan = plan_sketch(SketchScheme(kind, m), n, rs.spawn(1), probs)
        sk = fit_sketched(data, plan, est)
        z[r] = math.sqrt(m) * float(c @ (sk.beta - full.beta)) / scale
    rows = []
    for level in COVERAGE_LEVELS:
        hits = (np.abs(z) <= _Z[level]).astype(np.float64)
        rate = float(hits.mean())
        se = math.sqrt(level * (1.0 - level) / reps)
        rows.append(MomentRow(f"coverage {level:.0%}", rate, level, se,
                              bool(abs(rate - level) <= SIGMA_RULE * se)))
    ks = kstest(z, "norm")
    rows.append(MomentRow("KS distance", float(ks.statistic), 0.0, float("nan"),
                          bool(ks.pvalue >= 0.001), f"p={ks.pvalue:.3g}"))
    probe = kind in (SketchKind.SRHT, SketchKind.SRFT)
    meta = {"seed": stream.seed, "design": spec.design.value, "estimator": est.value,
            "standardizer": "V1" if kind.is_sampling else "V0",
            "empirical_probe_only": probe}
    return MomentReport(kind.value, n, m, reps, rows, meta)
