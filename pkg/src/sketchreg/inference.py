"""Sketch-size rules and power arithmetic."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

from .errors import OutOfDomain, ZeroEffect
from .linalg import normal_quantile

# Products such as 1640 / (1/9 * 0.05) land a few ulps above an integer;
# rounding is done after snapping values within this relative distance.
_SNAP = 1e-9


def _snap(x: float) -> float:
    r = round(x)
    return float(r) if abs(x - r) <= _SNAP * max(1.0, abs(x)) else x


def ceil_int(x: float) -> int:
    return int(math.ceil(_snap(x)))


def round_half_up(x: float) -> int:
    return int(math.floor(_snap(x) + 0.5))


def _check_prob(name: str, v: float) -> float:
    v = float(v)
    if not 0.0 < v < 1.0:
        raise OutOfDomain(f"{name} must lie in (0, 1), got {v}")
    return v


class M1Variant(str, enum.Enum):
    LOGQ = "logq"
    QSQUARED = "qsquared"


@dataclass(frozen=True)
class SizeRuleInputs:
    n: int
    q: int
    C_m: float = 1.0
    alpha_bar: float = 0.05
    gamma_bar: float = 0.8
    tau_inf: float = 10.0
    effect: float = 1.0
    se_estimate: float = 1.0
    m1: int | None = None

    def __post_init__(self):
        _check_prob("alpha_bar", self.alpha_bar)
        _check_prob("gamma_bar", self.gamma_bar)
        if not self.tau_inf > 0:
            raise OutOfDomain("tau_inf must be positive")


def s_factor(alpha: float, gamma: float) -> float:
    """Quantile sum controlling size ``alpha`` and power ``gamma``."""
    alpha = _check_prob("alpha", alpha)
    gamma = _check_prob("gamma", gamma)
    return normal_quantile(gamma) + normal_quantile(1.0 - alpha)


def m1_rule(q: int, C_m: float, variant=M1Variant.LOGQ) -> int:
    variant = M1Variant(variant)
    if variant is M1Variant.LOGQ:
        if q < 2:
            raise OutOfDomain("the q log q rule needs q >= 2")
        return ceil_int(C_m * q * math.log(q))
    return ceil_int(C_m * q * q)


def m2_rule(m1: int, se_ctbeta: float, effect: float, alpha: float, gamma: float) -> int:
    """Size that attains power ``gamma`` at the given effect, from a pilot of size m1."""
    if effect == 0:
        raise ZeroEffect("effect size must be nonzero")
    S = s_factor(alpha, gamma)
    return ceil_int(m1 * S * S * (se_ctbeta / effect) ** 2)


def m3_rule(n: int, alpha: float, gamma: float, tau_inf: float) -> int:
    """Data-oblivious size ``n S^2 / tau^2``."""
    if not tau_inf > 0:
        raise OutOfDomain("tau_inf must be positive")
    S = s_factor(alpha, gamma)
    return round_half_up(n * S * S / (tau_inf * tau_inf))


def size_rules(inp: SizeRuleInputs) -> dict:
    m1 = inp.m1 if inp.m1 is not None else m1_rule(inp.q, inp.C_m)
    return {
        "S2": s_factor(inp.alpha_bar, inp.gamma_bar) ** 2,
        "m1": m1,
        "m2": m2_rule(m1, inp.se_estimate, inp.effect, inp.alpha_bar, inp.gamma_bar),
        "m3": m3_rule(inp.n, inp.alpha_bar, inp.gamma_bar, inp.tau_inf),
    }
