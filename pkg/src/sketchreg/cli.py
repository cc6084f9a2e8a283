"""Command-line front end.

Subcommands: ``sketch``, ``fit``, ``simulate``, ``verify``, ``audit``, ``size``.
Options can come from a flat ``key = value`` file given by ``--config``;
flags on the command line take precedence over the file.

Exit codes: 0 success, 1 usage or configuration, 2 data, 3 numerical,
4 verification failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import os
import sys
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .embed import audit_fixture, audit_plans, countsketch_size_bound, summarize_audit
from .errors import (
    ConfigError,
    MissingColumn,
    NonNumericCell,
    ParseError,
    SketchRegError,
    VerificationFailed,
)
from .estimators import DataBundle, EstimatorKind, fit, fit_sketched
from .inference import m1_rule, m2_rule, m3_rule, s_factor
from .linalg import RngStream
from .moments import (
    UV_PRESETS,
    check_rp_conditions,
    hall_ratio_diagnostic,
    mse_limit_check,
    normality_check,
    rs_variance_check,
)
from .montecarlo import (
    IV_SCHEMES,
    OLS_SCHEMES,
    Design,
    DgpSpec,
    FirstStageF,
    TTest,
    run_size_power,
)
from .sketch import (
    SketchKind,
    SketchScheme,
    apply_sketch,
    leverage_probs,
    plan_sketch,
    stream_countsketch,
)

SCHEME_CHOICES = [k.value for k in SketchKind] + ["none"]

# ---------------------------------------------------------------------------
# CSV input / output
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ColumnMapping:
    response: str
    regressors: tuple = ()
    instruments: tuple = ()
    intercept: bool = False


def _parse_cell(text: str, row: int, col: str) -> float:
    s = text.strip()
    if not s:
        raise ParseError(row, col, "blank cell")
    try:
        v = float(s)
    except ValueError:
        raise NonNumericCell(row, col, f"non-numeric value {s!r}") from None
    if not math.isfinite(v):
        raise NonNumericCell(row, col, f"non-finite value {s!r}")
    return v


def read_table(path, columns=None) -> tuple[list[str], np.ndarray]:
    """Read a rectangular numeric CSV with a header row.

    Only ``columns`` (default: all) are parsed. Row numbers in errors count
    data rows from 1.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ParseError(0, "-", "empty file") from None
        wanted = list(header) if columns is None else list(columns)
        for name in wanted:
            if name not in header:
                raise MissingColumn(name)
        pos = [header.index(c) for c in wanted]
        rows = []
        for r, rec in enumerate(reader, start=1):
            if not rec or all(not c.strip() for c in rec):
                continue
            if len(rec) != len(header):
                raise ParseError(r, "-", f"expected {len(header)} cells, found {len(rec)}")
            rows.append([_parse_cell(rec[j], r, header[j]) for j in pos])
    arr = np.asarray(rows, dtype=np.float64).reshape(len(rows), len(wanted))
    return wanted, arr


def ingest_csv(path, mapping: ColumnMapping) -> DataBundle:
    cols = [mapping.response, *mapping.regressors, *mapping.instruments]
    _, arr = read_table(path, cols)
    n = arr.shape[0]
    p = len(mapping.regressors)
    y = arr[:, 0]
    X = arr[:, 1 : 1 + p]
    Z = arr[:, 1 + p :] if mapping.instruments else None
    if mapping.intercept:
        ones = np.ones((n, 1))
        X = np.hstack([ones, X])
        Z = None if Z is None else np.hstack([ones, Z])
    return DataBundle(y, X, Z)


def write_table(path, header, arr) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in np.atleast_2d(arr):
            w.writerow([repr(float(v)) for v in row])


def write_bundle(path, data: DataBundle, names: ColumnMapping | None = None) -> ColumnMapping:
    """Write a bundle so that :func:`ingest_csv` with the returned mapping
    reproduces it exactly."""
    xn = list(names.regressors) if names else [f"x{j + 1}" for j in range(data.p)]
    zn = list(names.instruments) if names else [f"z{j + 1}" for j in range(data.q or 0)]
    if len(xn) != data.p:
        xn = [f"x{j + 1}" for j in range(data.p)]
    if data.Z is not None and len(zn) != data.q:
        zn = [f"z{j + 1}" for j in range(data.q)]
    resp = names.response if names else "y"
    blocks = [data.y[:, None], data.X] + ([data.Z] if data.Z is not None else [])
    header = [resp, *xn, *(zn if data.Z is not None else [])]
    write_table(path, header, np.hstack(blocks))
    return ColumnMapping(resp, tuple(xn), tuple(zn) if data.Z is not None else (), False)


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


def _bool(v) -> bool:
    if isinstance(v, bool):
        return v
    s = str(v).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


def _list(v) -> tuple:
    if isinstance(v, (list, tuple)):
        return tuple(v)
    return tuple(s.strip() for s in str(v).split(",") if s.strip())


@dataclass(frozen=True)
class Opt:
    type: object
    default: object
    help: str
    choices: tuple | None = None


COMMON = {
    "seed": Opt(int, 1, "master seed"),
    "out": Opt(str, None, "output path"),
    "threads": Opt(int, None, "worker processes (default: available cores)"),
}

COMMANDS: dict[str, dict[str, Opt]] = {
    "sketch": {
        "data": Opt(str, None, "input CSV"),
        "columns": Opt(_list, (), "comma-separated columns to sketch (default: all)"),
        "scheme": Opt(str, "countsketch", "sketch scheme", tuple(SCHEME_CHOICES[:-1])),
        "m": Opt(int, None, "sketch size"),
        "stream": Opt(_bool, False, "one-pass streaming countsketch"),
    },
    "fit": {
        "data": Opt(str, None, "input CSV"),
        "response": Opt(str, None, "response column"),
        "regressors": Opt(_list, (), "comma-separated regressor columns"),
        "instruments": Opt(_list, (), "comma-separated instrument columns"),
        "intercept": Opt(_bool, False, "prepend an intercept to X (and Z)"),
        "estimator": Opt(str, None, "ols or tsls (default: tsls iff instruments given)", ("ols", "tsls")),
        "scheme": Opt(str, "none", "sketch scheme", tuple(SCHEME_CHOICES)),
        "m": Opt(int, None, "sketch size"),
        "cov": Opt(str, "both", "covariance columns to print", ("homo", "robust", "both")),
    },
    "simulate": {
        "table": Opt(int, None, "preset design: 1 (OLS t), 2 (first-stage F), 3 (2SLS t)", (1, 2, 3)),
        "design": Opt(str, "exogenous", "exogenous or endogenous", ("exogenous", "endogenous")),
        "hetero": Opt(_bool, False, "heteroskedastic design"),
        "test": Opt(str, None, "t or f (default from table/design)", ("t", "f")),
        "schemes": Opt(_list, (), "comma-separated schemes (default per design)"),
        "n": Opt(int, 20_000, "rows per replication"),
        "p": Opt(int, 6, "regressors"),
        "q": Opt(int, 21, "instruments"),
        "m": Opt(int, 500, "sketch size"),
        "reps": Opt(int, 2000, "replications"),
        "null": Opt(float, 1.0, "null value of beta_p"),
        "alt": Opt(float, None, "alternative value used for power"),
        "zeta": Opt(float, None, "excluded first-stage coefficient (t test designs)"),
        "alt_zeta": Opt(float, 0.1, "excluded coefficient under the F-test alternative"),
    },
    "verify": {
        "what": Opt(str, "rp-conditions", "check to run",
                    ("rp-conditions", "mse", "rs-variance", "hall", "normality")),
        "scheme": Opt(str, "countsketch", "sketch scheme", tuple(SCHEME_CHOICES[:-1])),
        "n": Opt(int, None, "rows"),
        "m": Opt(int, None, "sketch size"),
        "reps": Opt(int, None, "replications"),
        "uv": Opt(str, "gaussian_indep", "(U, V) law", tuple(UV_PRESETS)),
        "design": Opt(str, "exogenous", "normality design", ("exogenous", "endogenous")),
        "hetero": Opt(_bool, False, "heteroskedastic design for normality"),
        "json": Opt(str, None, "also write the report as JSON here"),
    },
    "audit": {
        "schemes": Opt(_list, ("bernoulli", "uniform", "countsketch", "srht"), "schemes to audit"),
        "n": Opt(int, 4096, "fixture rows"),
        "p": Opt(int, 2, "fixture regressors"),
        "q": Opt(int, 4, "fixture instruments"),
        "m": Opt(int, 1024, "sketch size"),
        "plans": Opt(int, 200, "plans per scheme"),
    },
    "size": {
        "rule": Opt(str, "m3", "rule", ("m1", "m2", "m3", "s", "cs-bound")),
        "n": Opt(int, None, "full sample size (m3)"),
        "q": Opt(int, None, "instruments (m1, cs-bound)"),
        "p": Opt(int, None, "regressors (cs-bound)"),
        "cm": Opt(float, 1.0, "constant C_m (m1)"),
        "variant": Opt(str, "logq", "m1 variant", ("logq", "qsquared")),
        "alpha": Opt(float, 0.05, "size"),
        "gamma": Opt(float, 0.8, "power"),
        "tau": Opt(float, None, "large-sample t statistic (m3)"),
        "m1": Opt(int, None, "pilot sketch size (m2)"),
        "se": Opt(float, None, "pilot standard error of c'beta (m2)"),
        "effect": Opt(float, None, "effect size c'(beta1 - beta0) (m2)"),
        "eps": Opt(float, 1.0 / 3.0, "embedding accuracy (cs-bound)"),
        "delta": Opt(float, 0.05, "failure probability (cs-bound)"),
    },
}


def load_config(path) -> dict:
    cfg = {}
    try:
        fh = open(path, encoding="utf-8")
    except OSError as exc:
        raise ConfigError("config", f"cannot read {path}: {exc.strerror}") from None
    with fh:
        for lineno, line in enumerate(fh, start=1):
            s = line.split("#", 1)[0].strip()
            if not s:
                continue
            if "=" not in s:
                raise ConfigError(f"{path}:{lineno}", "expected key = value")
            k, v = s.split("=", 1)
            cfg[k.strip().replace("-", "_")] = v.strip()
    return cfg


def resolve(command: str, cli_values: dict, config_path: str | None) -> dict:
    """Defaults, overridden by the config file, overridden by explicit flags."""
    spec = {**COMMON, **COMMANDS[command]}
    eff = {k: o.default for k, o in spec.items()}
    file_values = load_config(config_path) if config_path else {}
    for k, raw in file_values.items():
        if k not in spec:
            raise ConfigError(k, f"unknown key for '{command}'")
        try:
            eff[k] = spec[k].type(raw)
        except (TypeError, ValueError) as exc:
            raise ConfigError(k, str(exc)) from None
    for k, v in cli_values.items():
        if v is not None:
            eff[k] = v
    for k, o in spec.items():
        if o.choices and eff[k] is not None and eff[k] not in o.choices:
            raise ConfigError(k, f"must be one of {', '.join(map(str, o.choices))}")
    return eff


# settings that cannot change results stay out of the hash
_UNHASHED = ("out", "json", "threads")


def config_hash(command: str, cfg: dict) -> str:
    kept = {k: v for k, v in cfg.items() if k not in _UNHASHED}
    blob = json.dumps({"command": command, **kept}, sort_keys=True, default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _provenance(command: str, cfg: dict) -> dict:
    return {"seed": cfg["seed"], "version": __version__, "config_hash": config_hash(command, cfg)}


def _require(cfg: dict, *keys) -> None:
    for k in keys:
        if cfg.get(k) in (None, (), ""):
            raise ConfigError(k, "required")


def _threads(cfg: dict) -> int:
    return cfg["threads"] if cfg["threads"] else (os.cpu_count() or 1)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_sketch(cfg: dict) -> int:
    _require(cfg, "data", "m", "out")
    names, A = read_table(cfg["data"], cfg["columns"] or None)
    stream = RngStream(cfg["seed"])
    kind = SketchKind.parse(cfg["scheme"])
    if cfg["stream"]:
        if kind is not SketchKind.COUNTSKETCH:
            raise ConfigError("stream", "streaming is only available for countsketch")
        S = stream_countsketch(enumerate(A), cfg["m"], stream)
    else:
        plan = plan_sketch(SketchScheme(kind, cfg["m"]), A.shape[0], stream)
        S = apply_sketch(plan, A)
    write_table(cfg["out"], names, S)
    prov = _provenance("sketch", cfg)
    print(f"sketched {A.shape[0]} x {A.shape[1]} -> {S.shape[0]} x {S.shape[1]} "
          f"({kind.value}, seed {prov['seed']}, config {prov['config_hash']})")
    return 0


def cmd_fit(cfg: dict) -> int:
    _require(cfg, "data", "response", "regressors")
    mapping = ColumnMapping(cfg["response"], cfg["regressors"], cfg["instruments"], cfg["intercept"])
    data = ingest_csv(cfg["data"], mapping)
    est = EstimatorKind(cfg["estimator"] or ("tsls" if data.Z is not None else "ols"))
    if est is EstimatorKind.TSLS and data.Z is None:
        raise ConfigError("instruments", "2SLS needs instruments")
    names = (["(intercept)"] if mapping.intercept else []) + list(mapping.regressors)
    if cfg["scheme"] == "none":
        res = fit(data, est)
        m_used = data.n
    else:
        _require(cfg, "m")
        kind = SketchKind.parse(cfg["scheme"])
        probs = leverage_probs(data.X) if kind is SketchKind.LEVERAGE else None
        plan = plan_sketch(SketchScheme(kind, cfg["m"]), data.n, RngStream(cfg["seed"]), probs)
        res = fit_sketched(data, plan, est)
        m_used = res.sample_size_used
    out = {
        "estimator": est.value,
        "names": names,
        "beta": res.beta.tolist(),
        "se0": res.se_homo.tolist(),
        "se1": res.se_robust.tolist(),
        "m_used": int(m_used),
        "n": data.n,
        "scheme": cfg["scheme"],
        **_provenance("fit", cfg),
    }
    print(f"{est.value.upper()}  scheme={cfg['scheme']}  rows used={m_used}  seed={cfg['seed']}")
    cols = ["estimate"] + (["s.e.0"] if cfg["cov"] in ("homo", "both") else []) \
        + (["s.e.1"] if cfg["cov"] in ("robust", "both") else [])
    width = max(12, *(len(s) for s in names))
    print(f"{'':<{width}} " + " ".join(f"{c:>12}" for c in cols))
    for j, name in enumerate(names):
        vals = [res.beta[j]]
        if "s.e.0" in cols:
            vals.append(res.se_homo[j])
        if "s.e.1" in cols:
            vals.append(res.se_robust[j])
        print(f"{name:<{width}} " + " ".join(f"{v:>12.6g}" for v in vals))
    if cfg["out"]:
        with open(cfg["out"], "w", encoding="utf-8") as fh:
            json.dump(out, fh, indent=2)
    return 0


def cmd_simulate(cfg: dict) -> int:
    table = cfg["table"]
    hetero = cfg["hetero"]
    n, p, q, m = cfg["n"], cfg["p"], cfg["q"], cfg["m"]
    if table == 1 or (table is None and cfg["design"] == "exogenous"):
        dgp = DgpSpec(Design.EXOGENOUS, hetero=hetero, n=n, p=p)
        test = TTest(cfg["null"], cfg["alt"] if cfg["alt"] is not None else (1.4 if hetero else 1.1))
        schemes = cfg["schemes"] or OLS_SCHEMES
    elif table == 2 or (table is None and cfg["test"] == "f"):
        dgp = DgpSpec(Design.ENDOGENOUS, n=n, p=p, q=q, hetero1=hetero)
        test = FirstStageF(0.0, cfg["alt_zeta"])
        schemes = cfg["schemes"] or IV_SCHEMES
    else:
        zeta = 0.5 if cfg["zeta"] is None else cfg["zeta"]
        dgp = DgpSpec(Design.ENDOGENOUS, n=n, p=p, q=q, hetero2=hetero, zeta_excluded=zeta)
        test = TTest(cfg["null"], cfg["alt"] if cfg["alt"] is not None else (1.10 if hetero else 1.05),
                     estimator=EstimatorKind.TSLS)
        schemes = cfg["schemes"] or IV_SCHEMES
    tab = run_size_power(dgp, schemes, m, cfg["reps"], test, RngStream(cfg["seed"]), _threads(cfg))
    prov = _provenance("simulate", cfg)
    tab.metadata.update(prov)
    print(tab.format())
    print(f"seed {prov['seed']}  version {prov['version']}  config {prov['config_hash']}")
    if cfg["out"]:
        tab.write_csv(cfg["out"])
        with open(cfg["out"], "a", encoding="utf-8") as fh:
            fh.write(f"# seed={prov['seed']} version={prov['version']} config_hash={prov['config_hash']}\n")
    return 0


_VERIFY_DEFAULTS = {
    "rp-conditions": (256, 64, 20_000),
    "mse": (10_000, 200, 5000),
    "rs-variance": (1000, 50, 5000),
    "hall": (10_000, None, 100_000),
    "normality": (20_000, 500, 2000),
}


def cmd_verify(cfg: dict) -> int:
    what = cfg["what"]
    n0, m0, r0 = _VERIFY_DEFAULTS[what]
    n = cfg["n"] or n0
    m = cfg["m"] or m0
    reps = cfg["reps"] or r0
    stream = RngStream(cfg["seed"], 7)
    uv = UV_PRESETS[cfg["uv"]]()
    soft = False
    if what == "rp-conditions":
        rep = check_rp_conditions(cfg["scheme"], n, m, reps, stream)
        soft = rep.scheme == "srft"
    elif what == "mse":
        rep = mse_limit_check(cfg["scheme"], uv, n, m, reps, stream)
    elif what == "rs-variance":
        rep = rs_variance_check(uv, n, m, reps, stream)
    elif what == "hall":
        ladder = [n // 100, n // 10, n] if n >= 1000 else [n]
        rep = hall_ratio_diagnostic(cfg["scheme"], uv, ladder,
                                    (lambda k: m) if cfg["m"] else (lambda k: k**0.4), reps, stream)
    else:
        if cfg["design"] == "exogenous":
            dgp = DgpSpec(Design.EXOGENOUS, hetero=cfg["hetero"], n=n)
        else:
            dgp = DgpSpec(Design.ENDOGENOUS, n=n, hetero2=cfg["hetero"], zeta_excluded=0.5)
        rep = normality_check(cfg["scheme"], dgp, n, m, reps, stream)
        soft = bool(rep.metadata.get("empirical_probe_only"))
    rep.metadata.update(_provenance("verify", cfg))
    print(rep.format())
    if cfg["out"]:
        rep.write_csv(cfg["out"])
    if cfg["json"]:
        rep.write_json(cfg["json"])
    if not rep.all_passed:
        if soft:
            print("note: failing rows are convention-dependent probes, not hard invariants")
        else:
            raise VerificationFailed(f"{sum(not r.passed for r in rep.rows)} row(s) failed")
    return 0


def cmd_audit(cfg: dict) -> int:
    data = audit_fixture(n=cfg["n"], p=cfg["p"], q=cfg["q"])
    prov = _provenance("audit", cfg)
    rows = []
    for j, scheme in enumerate(cfg["schemes"]):
        got = audit_plans(data, scheme, cfg["m"], cfg["plans"], RngStream(cfg["seed"], 100 + j))
        s = summarize_audit(got)
        print(f"{SketchKind.parse(scheme).value:<12} plans={s['plans']:>4} qualifying={s['qualifying']:>4} "
              f"violations={s['violations']:>3} max actual/bound={s['max_actual_over_bound']:.3f}")
        rows += got
    print(f"seed {prov['seed']}  version {prov['version']}  config {prov['config_hash']}")
    if cfg["out"]:
        fields = ["scheme", "plan_index", "seed", "eps1", "eps2", "eps3", "sigma_min_uzux",
                  "condition_iv_ok", "bound", "actual", "holds"]
        with open(cfg["out"], "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(fields)
            for r in rows:
                w.writerow(["" if getattr(r, f) is None else getattr(r, f) for f in fields])
    return 0


def cmd_size(cfg: dict) -> int:
    rule = cfg["rule"]
    if rule == "s":
        val = s_factor(cfg["alpha"], cfg["gamma"])
        print(f"S = {val:.6f}  S^2 = {val * val:.6f}")
        return 0
    if rule == "m1":
        _require(cfg, "q")
        val = m1_rule(cfg["q"], cfg["cm"], cfg["variant"])
    elif rule == "m2":
        _require(cfg, "m1", "se", "effect")
        val = m2_rule(cfg["m1"], cfg["se"], cfg["effect"], cfg["alpha"], cfg["gamma"])
    elif rule == "m3":
        _require(cfg, "n", "tau")
        val = m3_rule(cfg["n"], cfg["alpha"], cfg["gamma"], cfg["tau"])
    else:
        _require(cfg, "p", "q")
        val = countsketch_size_bound(cfg["p"], cfg["q"], cfg["eps"], cfg["delta"])
    print(val)
    return 0


HANDLERS = {
    "sketch": cmd_sketch,
    "fit": cmd_fit,
    "simulate": cmd_simulate,
    "verify": cmd_verify,
    "audit": cmd_audit,
    "size": cmd_size,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="sketchreg", description="Sketched OLS/2SLS estimation and inference.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, opts in COMMANDS.items():
        sp = sub.add_parser(name, help=HANDLERS[name].__doc__)
        sp.add_argument("--config", default=None, help="flat key = value file")
        for key, o in {**COMMON, **opts}.items():
            flag = "--" + key.replace("_", "-")
            if o.type is _bool:
                sp.add_argument(flag, dest=key, default=None, action=argparse.BooleanOptionalAction,
                                help=o.help)
            else:
                sp.add_argument(flag, dest=key, default=None, type=o.type, help=o.help)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    values = {k: v for k, v in vars(args).items() if k not in ("command", "config")}
    try:
        cfg = resolve(args.command, values, args.config)
        return HANDLERS[args.command](cfg)
    except SketchRegError as exc:
        print(f"sketchreg {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except FileNotFoundError as exc:
        print(f"sketchreg {args.command}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
