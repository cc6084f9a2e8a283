"""Simulation designs and size/power experiments.

Each replication owns a derived random stream, so a table depends only on
the master seed and the design, never on how replications are split
across worker processes.
"""

from __future__ import annotations

import csv
import enum
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .errors import OutOfDomain, SketchRegError, UnsupportedScheme
from .estimators import (
    CovKind,
    DataBundle,
    EstimatorKind,
    first_stage_f,
    fit_sketched,
    t_test,
)
from .linalg import RngStream, mvn_ar1
from .sketch import (
    SketchKind,
    SketchScheme,
    apply_sketch,
    leverage_probs,
    plan_sketch,
)

LEVEL = 0.05


class Design(str, enum.Enum):
    EXOGENOUS = "exogenous"
    ENDOGENOUS = "endogenous"


@dataclass(frozen=True)
class DgpSpec:
    """Simulation design.

    ``hetero`` switches the exogenous design to ``sigma(X) = exp(X_p)``.
    For the endogenous design ``hetero1`` and ``hetero2`` switch the
    first-stage and outcome scale functions to ``exp((5/q) sum|Z_j|)/100``.
    """

    design: Design = Design.EXOGENOUS
    hetero: bool = False
    n: int = 20_000
    p: int = 6
    q: int = 21
    rho: float = 0.5
    beta0: tuple | None = None
    zeta_included: tuple | None = None
    zeta_excluded: float = 0.0
    hetero1: bool = False
    hetero2: bool = False

    def __post_init__(self):
        object.__setattr__(self, "design", Design(self.design))
        if self.p < 2:
            raise OutOfDomain("p must be at least 2")
        if self.design is Design.ENDOGENOUS and self.q < self.p:
            raise OutOfDomain("endogenous design needs q >= p")
        if self.beta0 is not None and len(self.beta0) != self.p:
            raise OutOfDomain("beta0 must have length p")

    @property
    def beta(self) -> np.ndarray:
        if self.beta0 is not None:
            return np.asarray(self.beta0, dtype=np.float64)
        return np.r_[0.0, np.ones(self.p - 1)]

    @property
    def zeta(self) -> np.ndarray:
        head = (np.r_[0.0, np.full(self.p - 2, 0.1)] if self.zeta_included is None
                else np.asarray(self.zeta_included, dtype=np.float64))
        return np.r_[head, np.full(self.q - self.p + 1, float(self.zeta_excluded))]

    @property
    def excluded(self) -> np.ndarray:
        return np.arange(self.p - 1, self.q)


def _scale_z(Zr: np.ndarray, q: int) -> np.ndarray:
    return np.exp((5.0 / q) * np.abs(Zr).sum(axis=1)) / 100.0


def gen_exogenous(spec: DgpSpec, stream: RngStream) -> DataBundle:
    if spec.design is not Design.EXOGENOUS:
        raise OutOfDomain("gen_exogenous needs an exogenous design")
    rng = stream.generator()
    X = np.empty((spec.n, spec.p))
    X[:, 0] = 1.0
    X[:, 1:] = mvn_ar1(spec.p - 1, spec.rho, rng, size=spec.n)
    e = rng.standard_normal(spec.n)
    if spec.hetero:
        e *= np.exp(X[:, -1])
    return DataBundle(X @ spec.beta + e, X)


def gen_endogenous(spec: DgpSpec, stream: RngStream) -> DataBundle:
    if spec.design is not Design.ENDOGENOUS:
        raise OutOfDomain("gen_endogenous needs an endogenous design")
    rng = stream.generator()
    n, p, q = spec.n, spec.p, spec.q
    Z = np.empty((n, q))
    Z[:, 0] = 1.0
    Z[:, 1:] = mvn_ar1(q - 1, spec.rho, rng, size=n)
    eta = rng.standard_normal(n)
    eps = rng.standard_normal(n)
    s = _scale_z(Z[:, 1:], q) if (spec.hetero1 or spec.hetero2) else None
    sigma1 = s if spec.hetero1 else 1.0
    sigma2 = s if spec.hetero2 else 1.0
    X = np.empty((n, p))
    X[:, : p - 1] = Z[:, : p - 1]
    X[:, -1] = Z @ spec.zeta + sigma1 * eta
    y = X @ spec.beta + sigma2 * (eta + eps)
    return DataBundle(y, X, Z)


def generate(spec: DgpSpec, stream: RngStream) -> DataBundle:
    return gen_exogenous(spec, stream) if spec.design is Design.EXOGENOUS else gen_endogenous(spec, stream)


# ---------------------------------------------------------------------------
# population covariances of the designs
# ---------------------------------------------------------------------------


def ar1_cov(dim: int, rho: float) -> np.ndarray:
    idx = np.arange(dim)
    return rho ** np.abs(idx[:, None] - idx[None, :])


def theoretical_covariances(spec: DgpSpec, draws: int = 1_000_000, seed: int = 20240229) -> dict:
    """Population V0 and V1 (or W0 and W1) for a design.

    The exogenous design has closed forms: with ``X_p ~ N(0, 1)``,
    ``E exp(2 X_p) = e^2`` and reweighting by ``exp(2 X_p)`` shifts the
    Gaussian block mean to ``2 Sigma[:, p]``. The endogenous design needs
    ``E[sigma2^2]`` and ``E[sigma2^2 Z Z']``, estimated once by a
    fixed-seed Monte Carlo with ``draws`` samples.
    """
    p = spec.p
    if spec.design is Design.EXOGENOUS:
        S = ar1_cov(p - 1, spec.rho)
        Exx = np.zeros((p, p))
        Exx[0, 0] = 1.0
        Exx[1:, 1:] = S
        Exx_inv = np.linalg.inv(Exx)
        if not spec.hetero:
            return {"V0": Exx_inv, "V1": Exx_inv}
        e2 = math.exp(2.0)
        mu = 2.0 * S[:, -1]
        M = np.empty((p, p))
        M[0, 0] = 1.0
        M[0, 1:] = M[1:, 0] = mu
        M[1:, 1:] = S + np.outer(mu, mu)
        return {"V0": e2 * Exx_inv, "V1": Exx_inv @ (e2 * M) @ Exx_inv}

    q = spec.q
    Ezz = np.zeros((q, q))
    Ezz[0, 0] = 1.0
    Ezz[1:, 1:] = ar1_cov(q - 1, spec.rho)
    Sel = np.zeros((p, q))
    Sel[np.arange(p - 1), np.arange(p - 1)] = 1.0
    Sel[-1] = spec.zeta
    Exz = Sel @ Ezz
    Ezz_inv = np.linalg.inv(Ezz)
    G = np.linalg.inv(Exz @ Ezz_inv @ Exz.T)
    A = G @ Exz @ Ezz_inv
    if spec.hetero2:
        rng = np.random.default_rng(seed)
        Zr = mvn_ar1(q - 1, spec.rho, rng, size=draws)
        s2 = _scale_z(Zr, q) ** 2
        Z = np.column_stack([np.ones(draws), Zr])
        Es2 = float(s2.mean())
        Es2zz = (Z * s2[:, None]).T @ Z / draws
    else:
        Es2, Es2zz = 1.0, Ezz
    # e = sigma2 (eta + eps) with E(eta + eps)^2 = 2, independent of Z
    return {"V0": 2.0 * Es2 * G, "V1": A @ (2.0 * Es2zz) @ A.T}


# ---------------------------------------------------------------------------
# size / power experiments
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TTest:
    """t test of ``c' beta = null``; power is the rejection rate of ``alt``."""

    null: float = 1.0
    alt: float = 1.1
    c: tuple | None = None
    estimator: EstimatorKind = EstimatorKind.OLS


@dataclass(frozen=True)
class FirstStageF:
    null_zeta: float = 0.0
    alt_zeta: float = 0.1


@dataclass
class SimCell:
    scheme: str
    quantity: str  # size | power
    cov: str       # se0 | se1
    rejections: int
    reps: int
    failures: int

    @property
    def rate(self) -> float:
        return self.rejections / self.reps if self.reps else float("nan")

    @property
    def mc_se(self) -> float:
        r = self.rate
        return math.sqrt(r * (1.0 - r) / self.reps) if self.reps else float("nan")


@dataclass
class SimTable:
    cells: list
    replications: int
    metadata: dict = field(default_factory=dict)

    def cell(self, scheme: str, quantity: str, cov: str) -> SimCell:
        for c in self.cells:
            if (c.scheme, c.quantity, c.cov) == (scheme, quantity, cov):
                return c
        raise KeyError((scheme, quantity, cov))

    def rate(self, scheme: str, quantity: str, cov: str) -> float:
        return self.cell(scheme, quantity, cov).rate

    @property
    def schemes(self) -> list:
        seen = []
        for c in self.cells:
            if c.scheme not in seen:
                seen.append(c.scheme)
        return seen

    def rows(self) -> list[dict]:
        return [
            {"scheme": c.scheme, "quantity": c.quantity, "cov": c.cov, "rate": c.rate,
             "mc_se": c.mc_se, "reps": c.reps, "failures": c.failures}
            for c in self.cells
        ]

    def write_csv(self, path) -> None:
        rows = self.rows()
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0]))
            w.writeheader()
            w.writerows(rows)

    def format(self) -> str:
        head = f"{'scheme':<12} {'size se0':>9} {'size se1':>9} {'power se0':>10} {'power se1':>10}"
        lines = [head, "-" * len(head)]
        for s in self.schemes:
            vals = [self.rate(s, qn, cv) for qn in ("size", "power") for cv in ("se0", "se1")]
            lines.append(f"{s:<12} {vals[0]:>9.3f} {vals[1]:>9.3f} {vals[2]:>10.3f} {vals[3]:>10.3f}")
        lines.append(f"replications: {self.replications}")
        return "\n".join(lines)


_COVS = (("se0", CovKind.HOMO), ("se1", CovKind.ROBUST))


def _plan_for(kind: SketchKind, m: int, data: DataBundle, stream: RngStream):
    probs = leverage_probs(data.X) if kind is SketchKind.LEVERAGE else None
    return plan_sketch(SketchScheme(kind, m), data.n, stream, probs)


def _rep_ttest(dgp, kinds, m, test: TTest, rs: RngStream) -> np.ndarray:
    # out[j] = [size se0, size se1, power se0, power se1, failed]
    out = np.zeros((len(kinds), 5), dtype=np.int64)
    data = generate(dgp, rs.spawn(0))
    c = np.eye(dgp.p)[-1] if test.c is None else np.asarray(test.c, dtype=np.float64)
    for j, kind in enumerate(kinds):
        try:
            plan = _plan_for(kind, m, data, rs.spawn(2 + j))
            res = fit_sketched(data, plan, test.estimator)
            for col, (_, ck) in enumerate(_COVS):
                out[j, col] = t_test(res, c, test.null, ck).reject_at[LEVEL]
                out[j, 2 + col] = t_test(res, c, test.alt, ck).reject_at[LEVEL]
        except SketchRegError:
            out[j, :4] = 0
            out[j, 4] = 1
    return out


def _first_stage(dgp, kind, m, data, stream) -> list:
    plan = plan_sketch(SketchScheme(kind, m), data.n, stream)
    S = apply_sketch(plan, np.column_stack([data.X[:, -1], data.Z]))
    if S.shape[0] < dgp.q:
        raise SketchRegError("sketch too small for the first-stage regression")
    sk = DataBundle(S[:, 0], S[:, :1], S[:, 1:])
    return [first_stage_f(sk, 0, dgp.excluded, ck).reject_at[LEVEL] for _, ck in _COVS]


def _rep_ftest(dgp, kinds, m, test: FirstStageF, rs: RngStream) -> np.ndarray:
    out = np.zeros((len(kinds), 5), dtype=np.int64)
    d_null = generate(replace(dgp, zeta_excluded=test.null_zeta), rs.spawn(0))
    d_alt = generate(replace(dgp, zeta_excluded=test.alt_zeta), rs.spawn(1))
    for j, kind in enumerate(kinds):
        try:
            out[j, :2] = _first_stage(dgp, kind, m, d_null, rs.spawn(2 + j).spawn(0))
            out[j, 2:4] = _first_stage(dgp, kind, m, d_alt, rs.spawn(2 + j).spawn(1))
        except SketchRegError:
            out[j, :4] = 0
            out[j, 4] = 1
    return out


def _run_chunk(args) -> np.ndarray:
    dgp, kinds, m, test, stream, reps = args
    fn = _rep_ftest if isinstance(test, FirstStageF) else _rep_ttest
    total = np.zeros((len(kinds), 5), dtype=np.int64)
    for r in reps:
        total += fn(dgp, kinds, m, test, stream.spawn(r))
    return total


def run_size_power(dgp: DgpSpec, schemes, m: int, reps: int, test, stream: RngStream,
                   workers: int = 1) -> SimTable:
    """Empirical rejection rates at the 5% level for each scheme.

    Every replication draws fresh data and a fresh sketch. Replications in
    which a scheme fails numerically are counted as failures for that
    scheme and excluded from its denominators.
    """
    kinds = [SketchKind.parse(s) for s in schemes]
    if dgp.design is Design.ENDOGENOUS and SketchKind.LEVERAGE in kinds:
        raise UnsupportedScheme("leverage sampling is only offered for the exogenous design")
    if isinstance(test, FirstStageF) and dgp.design is not Design.ENDOGENOUS:
        raise OutOfDomain("the first-stage F test needs the endogenous design")
    need = dgp.p if (isinstance(test, TTest) and test.estimator is EstimatorKind.OLS) else dgp.q
    if m < need:
        raise OutOfDomain(f"m={m} is below the {need} columns the fit needs")

    workers = max(1, int(workers))
    chunks = [range(i, reps, workers) for i in range(workers)]
    jobs = [(dgp, kinds, m, test, stream, ch) for ch in chunks if len(ch)]
    if workers == 1 or len(jobs) == 1:
        totals = [_run_chunk(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            totals = list(ex.map(_run_chunk, jobs))
    total = np.sum(totals, axis=0) if totals else np.zeros((len(kinds), 5), dtype=np.int64)

    cells = []
    for j, kind in enumerate(kinds):
        failed = int(total[j, 4])
        ok = reps - failed
        for qi, quantity in enumerate(("size", "power")):
            for ci, (cname, _) in enumerate(_COVS):
                cells.append(SimCell(kind.value, quantity, cname, int(total[j, 2 * qi + ci]), ok, failed))
    meta = {"dgp": {k: (v.value if isinstance(v, enum.Enum) else v) for k, v in asdict(dgp).items()},
            "m": m, "test": type(test).__name__, "seed": stream.seed, "stream_id": stream.stream_id}
    return SimTable(cells, reps, meta)


# ---------------------------------------------------------------------------
# presets
# ---------------------------------------------------------------------------

OLS_SCHEMES = ("bernoulli", "uniform", "leverage", "countsketch", "srht", "srft")
IV_SCHEMES = ("bernoulli", "uniform", "countsketch", "srht", "srft")


def table1(hetero: bool, n: int = 20_000, m: int = 500, reps: int = 2000, seed: int = 1,
           workers: int = 1, schemes=OLS_SCHEMES) -> SimTable:
    dgp = DgpSpec(Design.EXOGENOUS, hetero=hetero, n=n)
    test = TTest(null=1.0, alt=1.4 if hetero else 1.1)
    return run_size_power(dgp, schemes, m, reps, test, RngStream(seed, 1 + int(hetero)), workers)


def table2(hetero: bool, n: int = 20_000, m: int = 500, reps: int = 1000, seed: int = 1,
           workers: int = 1, schemes=IV_SCHEMES) -> SimTable:
    dgp = DgpSpec(Design.ENDOGENOUS, n=n, hetero1=hetero)
    return run_size_power(dgp, schemes, m, reps, FirstStageF(0.0, 0.1),
                          RngStream(seed, 3 + int(hetero)), workers)


def table3(hetero: bool, n: int = 20_000, m: int = 500, reps: int = 1000, seed: int = 1,
           workers: int = 1, schemes=IV_SCHEMES) -> SimTable:
    dgp = DgpSpec(Design.ENDOGENOUS, n=n, hetero2=hetero, zeta_excluded=0.5)
    test = TTest(null=1.0, alt=1.10 if hetero else 1.05, estimator=EstimatorKind.TSLS)
    return run_size_power(dgp, schemes, m, reps, test, RngStream(seed, 5 + int(hetero)), workers)
