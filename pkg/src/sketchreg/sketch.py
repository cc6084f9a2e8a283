"""Sketching operators.

A :class:`SketchPlan` holds every random draw a scheme needs, so applying a
plan is deterministic. Countsketch output is accumulated exactly (integer
limbs instead of floating-point sums), which makes the materialized path and
the one-pass streaming path agree bit for bit irrespective of row order.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Iterable, Iterator

import numpy as np

from .errors import (
    BadProbabilities,
    DimensionMismatch,
    DuplicateRowIndex,
    MTooLarge,
    OutOfDomain,
    RankDeficient,
    UnsupportedScheme,
)
from .linalg import (
    RANK_TOL,
    RngStream,
    fwht_inplace,
    next_power_of_two,
    real_dft_fold,
    thin_svd,
)

PROB_TOL = 1e-10
GAUSS_BLOCK = 4096
_GAUSS_TAG = 0x6A55


class SketchKind(str, enum.Enum):
    BERNOULLI = "bernoulli"
    UNIFORM = "uniform"
    LEVERAGE = "leverage"
    COUNTSKETCH = "countsketch"
    SRHT = "srht"
    SRFT = "srft"
    GAUSSIAN = "gaussian"

    @property
    def is_sampling(self) -> bool:
        return self in (SketchKind.BERNOULLI, SketchKind.UNIFORM, SketchKind.LEVERAGE)

    @property
    def is_projection(self) -> bool:
        return not self.is_sampling

    @classmethod
    def parse(cls, name) -> "SketchKind":
        if isinstance(name, cls):
            return name
        key = str(name).strip().lower()
        aliases = {"fft": "srft", "cs": "countsketch", "bs": "bernoulli", "rs": "uniform"}
        key = aliases.get(key, key)
        try:
            return cls(key)
        except ValueError:
            raise UnsupportedScheme(f"unknown sketch scheme {name!r}") from None


@dataclass(frozen=True)
class SketchScheme:
    kind: SketchKind
    m: int

    def __post_init__(self):
        object.__setattr__(self, "kind", SketchKind.parse(self.kind))
        if int(self.m) != self.m or self.m < 1:
            raise OutOfDomain(f"sketch size m must be a positive integer, got {self.m}")
        object.__setattr__(self, "m", int(self.m))


@dataclass(frozen=True, eq=False)
class SketchPlan:
    """Materialized randomness for one draw of Pi (m x n, or rows_out x n)."""

    scheme: SketchScheme
    n: int
    stream: RngStream
    selected: np.ndarray | None = None  # Bernoulli selection bits
    indices: np.ndarray | None = None   # sampled rows (RS, leverage, SRHT, SRFT)
    probs: np.ndarray | None = None     # sampling probabilities (RS, leverage)
    buckets: np.ndarray | None = None   # countsketch h_i in [0, m)
    signs: np.ndarray | None = None     # countsketch s_i or SRHT/SRFT diagonal D

    @property
    def kind(self) -> SketchKind:
        return self.scheme.kind

    @property
    def m(self) -> int:
        return self.scheme.m

    @property
    def effective_m(self) -> int:
        return self.scheme.m

    @property
    def n_pad(self) -> int:
        return next_power_of_two(self.n) if self.kind is SketchKind.SRHT else self.n

    @property
    def rows_out(self) -> int:
        if self.kind is SketchKind.BERNOULLI:
            return int(np.count_nonzero(self.selected))
        return self.m


@dataclass(frozen=True)
class SketchedData:
    y: np.ndarray
    X: np.ndarray
    Z: np.ndarray | None
    rows_out: int
    effective_m: int


# ---------------------------------------------------------------------------
# plan construction
# ---------------------------------------------------------------------------


def _check_probs(probs, n: int) -> np.ndarray:
    p = np.asarray(probs, dtype=np.float64)
    if p.shape != (n,):
        raise BadProbabilities(f"probability vector has shape {p.shape}, expected ({n},)")
    if not np.all(np.isfinite(p)) or np.any(p < 0):
        raise BadProbabilities("probabilities must be finite and nonnegative")
    total = math.fsum(p)
    if abs(total - 1.0) > PROB_TOL:
        raise BadProbabilities(f"probabilities sum to {total!r}, not 1")
    return p


def countsketch_hash(stream: RngStream, idx, m: int) -> tuple[np.ndarray, np.ndarray]:
    """Bucket in [0, m) and sign in {-1, +1} for each row index.

    Depends only on (stream, index), so rows can be hashed in any order.
    """
    z = stream.hash_indices(idx)
    hi = z >> np.uint64(32)
    buckets = ((hi * np.uint64(m)) >> np.uint64(32)).astype(np.int64)
    signs = 1.0 - 2.0 * (z & np.uint64(1)).astype(np.float64)
    return buckets, signs


def plan_sketch(scheme: SketchScheme, n: int, stream: RngStream, probs=None) -> SketchPlan:
    """Draw all randomness for one sketch of an n-row matrix."""
    kind, m, n = scheme.kind, scheme.m, int(n)
    if n < 1:
        raise OutOfDomain("n must be positive")
    if probs is not None and kind not in (SketchKind.UNIFORM, SketchKind.LEVERAGE):
        raise BadProbabilities(f"probabilities do not apply to {kind.value}")
    if kind is SketchKind.LEVERAGE and probs is None:
        raise BadProbabilities("leverage sampling needs a probability vector")
    if kind in (SketchKind.BERNOULLI, SketchKind.SRHT) and m > n:
        raise MTooLarge(f"m={m} exceeds n={n} for {kind.value}")

    rng = stream.generator()
    if kind is SketchKind.BERNOULLI:
        return SketchPlan(scheme, n, stream, selected=rng.random(n) < m / n)
    if kind in (SketchKind.UNIFORM, SketchKind.LEVERAGE):
        if probs is None:
            return SketchPlan(scheme, n, stream, indices=rng.integers(0, n, size=m))
        p = _check_probs(probs, n)
        cdf = np.cumsum(p)
        cdf /= cdf[-1]
        idx = np.searchsorted(cdf, rng.random(m), side="right")
        return SketchPlan(scheme, n, stream, indices=np.minimum(idx, n - 1), probs=p)
    if kind is SketchKind.COUNTSKETCH:
        b, s = countsketch_hash(stream, np.arange(n), m)
        return SketchPlan(scheme, n, stream, buckets=b, signs=s)
    if kind in (SketchKind.SRHT, SketchKind.SRFT):
        n_rows = next_power_of_two(n) if kind is SketchKind.SRHT else n
        signs = 1.0 - 2.0 * rng.integers(0, 2, size=n)
        rows = rng.integers(0, n_rows, size=m)
        return SketchPlan(scheme, n, stream, indices=rows, signs=signs.astype(np.float64))
    return SketchPlan(scheme, n, stream)


def leverage_probs(X) -> np.ndarray:
    """Row leverage scores of X divided by its column count."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    svd = thin_svd(X)
    s = svd.singular_values
    if s.size == 0 or s[-1] <= RANK_TOL * s[0]:
        raise RankDeficient(int(np.argmin(s)) if s.size else 0)
    p = np.einsum("ij,ij->i", svd.U, svd.U) / X.shape[1]
    return p / p.sum()


# ---------------------------------------------------------------------------
# exact countsketch accumulation
# ---------------------------------------------------------------------------

_EXP_OFFSET = 1126  # shifts the smallest subnormal exponent (-1074 - 52) to 0
_NBINS = 70         # 32-bit limbs spanning every finite double, plus carry room
_BATCH = 1 << 16


class ExactAccumulator:
    """Order-independent, exact signed sums of doubles into m x k cells.

    Each double is split into three 32-bit limbs aligned on a global 32-bit
    grid; limb sums are integers, so any summation order gives the same
    result. The exact total is rounded to the nearest double once, at the end.
    """

    def __init__(self, m: int, k: int):
        self.m, self.k = int(m), int(k)
        self.acc = np.zeros((self.m * self.k, _NBINS), dtype=np.int64)
        self.lo, self.hi = _NBINS, 0  # range of limb bins touched so far

    def add(self, buckets: np.ndarray, signs: np.ndarray, rows: np.ndarray) -> None:
        rows = np.asarray(rows, dtype=np.float64)
        if not np.all(np.isfinite(rows)):
            raise ValueError("non-finite values cannot be sketched")
        for lo in range(0, rows.shape[0], _BATCH):
            hi = lo + _BATCH
            self._add_batch(buckets[lo:hi], signs[lo:hi], rows[lo:hi])

    def _add_batch(self, buckets, signs, rows) -> None:
        if rows.shape[0] == 0:
            return
        # decode the IEEE fields directly: |x| = M * 2^(e - 1075), e >= 1
        bits = np.ascontiguousarray(rows).view(np.int64)
        e = (bits >> 52) & 0x7FF
        M = bits & ((1 << 52) - 1)
        M |= (e != 0).astype(np.int64) << 52
        np.maximum(e, 1, out=e)
        # two's-complement negate where the signed value is negative
        flip = (bits >> 63) ^ np.where(signs < 0, -1, 0)[:, None]
        M ^= flip
        M -= flip
        E = e + (_EXP_OFFSET - 1075)
        b = E >> 5
        r = E & 31
        # M * 2^r = c0 + c1 2^32 + c2 2^64 with arithmetic shifts (floor)
        c0 = (M & ((np.int64(1) << (32 - r)) - 1)) << r
        c1 = (M >> (32 - r)) & 0xFFFFFFFF
        c2 = (M >> (63 - r)) >> 1  # avoids an undefined shift by 64
        b_lo, b_hi = int(b.min()), int(b.max())
        span = b_hi - b_lo + 3
        cell = buckets[:, None] * self.k + np.arange(self.k)[None, :]
        flat = (cell * span + (b - b_lo)).ravel()
        # each bin sums < 2^16 values below 2^32 in magnitude, which float64
        # represents exactly; limb j lands j bins above limb 0 of its cell
        size = self.m * self.k * span
        tot = np.bincount(flat, weights=c0.ravel(), minlength=size)
        tot[1:] += np.bincount(flat, weights=c1.ravel(), minlength=size)[:-1]
        tot[2:] += np.bincount(flat, weights=c2.ravel(), minlength=size)[:-2]
        self.acc[:, b_lo : b_lo + span] += tot.astype(np.int64).reshape(self.m * self.k, span)
        self.lo = min(self.lo, b_lo)
        self.hi = max(self.hi, b_lo + span)

    def result(self) -> np.ndarray:
        if self.lo >= self.hi:
            return np.zeros((self.m, self.k))
        # carries from < 2^63 totals climb at most two limbs past self.hi
        top = min(_NBINS, self.hi + 2)
        lo = self.lo
        a = self._normalize(self.acc[:, lo:top].copy())
        neg = a[:, -1] < 0
        if np.any(neg):
            a[neg] = self._normalize(-self.acc[neg, lo:top])
        out = _limbs_to_float(a.astype(np.uint64), 32 * lo)
        out[neg] = -out[neg]
        return out.reshape(self.m, self.k)

    @staticmethod
    def _normalize(a: np.ndarray) -> np.ndarray:
        for j in range(a.shape[1] - 1):
            carry = a[:, j] >> 32
            a[:, j] -= carry << 32
            a[:, j + 1] += carry
        return a


def _limbs_to_float(a: np.ndarray, base: int = 0) -> np.ndarray:
    """Correctly rounded value of ``sum_j a[:, j] 2^(32 j + base - offset)``.

    Limbs must be normalized to [0, 2^32). The leading 64 bits are gathered
    into one uint64 with a sticky bit for everything below (round to odd),
    so the single uint64 -> float64 conversion rounds correctly.
    """
    cells, nl = a.shape
    pad = np.zeros((cells, nl + 3), dtype=np.uint64)
    pad[:, 3:] = a
    nz = pad != 0
    if not nz.any():
        return np.zeros(cells)
    t = nl + 2 - np.argmax(nz[:, ::-1], axis=1)  # top nonzero limb (padded index)
    rows = np.arange(cells)
    a0, a1, a2 = pad[rows, t], pad[rows, t - 1], pad[rows, t - 2]
    bits = np.frexp(a0.astype(np.float64))[1].astype(np.uint64)  # bit length of a0
    lz = np.uint64(32) - bits
    W = (a0 << (np.uint64(32) + lz)) | (a1 << lz) | (a2 >> (np.uint64(32) - lz))
    below = a2 & ((np.uint64(1) << (np.uint64(32) - lz)) - np.uint64(1))
    any_nz = np.cumsum(nz, axis=1) > 0
    sticky = (below != 0) | any_nz[rows, np.maximum(t - 3, 0)] & (t >= 3)
    W |= sticky.astype(np.uint64)
    exp = 32 * (t.astype(np.int64) - 3) - 32 - lz.astype(np.int64) + base - _EXP_OFFSET
    out = np.ldexp(W.astype(np.float64), exp)
    out[~nz.any(axis=1)] = 0.0
    return out


# ---------------------------------------------------------------------------
# application
# ---------------------------------------------------------------------------


def _as_rows(A, n: int) -> tuple[np.ndarray, bool]:
    A = np.asarray(A, dtype=np.float64)
    vec = A.ndim == 1
    if vec:
        A = A[:, None]
    if A.ndim != 2 or A.shape[0] != n:
        raise DimensionMismatch(f"matrix has {A.shape[0] if A.ndim else 0} rows, plan expects {n}")
    return A, vec


def apply_sketch(plan: SketchPlan, A) -> np.ndarray:
    """Return ``Pi A`` for the plan's implied Pi."""
    A, vec = _as_rows(A, plan.n)
    kind, m, n = plan.kind, plan.m, plan.n
    if kind is SketchKind.BERNOULLI:
        out = A[plan.selected] * math.sqrt(n / m)
    elif kind is SketchKind.UNIFORM:
        out = A[plan.indices] * math.sqrt(n / m)
    elif kind is SketchKind.LEVERAGE:
        out = A[plan.indices] / np.sqrt(m * plan.probs[plan.indices])[:, None]
    elif kind is SketchKind.COUNTSKETCH:
        acc = ExactAccumulator(m, A.shape[1])
        acc.add(plan.buckets, plan.signs, A)
        out = acc.result()
    elif kind is SketchKind.SRHT:
        out = srht_apply(plan, A)
    elif kind is SketchKind.SRFT:
        out = srft_apply(plan, A)
    else:
        out = _gaussian_apply(plan, A)
    return out[:, 0] if vec else out


def srht_apply(plan: SketchPlan, A) -> np.ndarray:
    if plan.kind is not SketchKind.SRHT:
        raise UnsupportedScheme(f"srht_apply received a {plan.kind.value} plan")
    A, vec = _as_rows(A, plan.n)
    n_pad = plan.n_pad
    x = np.zeros((n_pad, A.shape[1]))
    x[: plan.n] = A * plan.signs[:, None]
    fwht_inplace(x)
    out = x[plan.indices] * (math.sqrt(n_pad / plan.m) / math.sqrt(n_pad))
    return out[:, 0] if vec else out


def srft_apply(plan: SketchPlan, A) -> np.ndarray:
    if plan.kind is not SketchKind.SRFT:
        raise UnsupportedScheme(f"srft_apply received a {plan.kind.value} plan")
    A, vec = _as_rows(A, plan.n)
    n = plan.n
    half = np.fft.rfft(A * plan.signs[:, None], axis=0, norm="ortho").real
    out = half[real_dft_fold(plan.indices, n)] * math.sqrt(n / plan.m)
    return out[:, 0] if vec else out


def _gaussian_block(plan: SketchPlan, block: int, width: int) -> np.ndarray:
    rng = plan.stream.spawn(_GAUSS_TAG).spawn(block).generator()
    return rng.standard_normal((plan.m, width))


def _gaussian_apply(plan: SketchPlan, A: np.ndarray) -> np.ndarray:
    out = np.zeros((plan.m, A.shape[1]))
    for b, start in enumerate(range(0, plan.n, GAUSS_BLOCK)):
        stop = min(start + GAUSS_BLOCK, plan.n)
        out += _gaussian_block(plan, b, stop - start) @ A[start:stop]
    return out / math.sqrt(plan.m)


def _parity(x: np.ndarray) -> np.ndarray:
    x = x.copy()
    shift = 32
    while shift:
        x ^= x >> shift
        shift //= 2
    return x & 1


def dense_matrix(plan: SketchPlan) -> np.ndarray:
    """Materialize Pi (rows_out x n). Intended for small n."""
    kind, m, n = plan.kind, plan.m, plan.n
    cols = np.arange(n)
    if kind is SketchKind.BERNOULLI:
        rows = np.flatnonzero(plan.selected)
        P = np.zeros((rows.size, n))
        P[np.arange(rows.size), rows] = math.sqrt(n / m)
        return P
    if kind is SketchKind.UNIFORM:
        P = np.zeros((m, n))
        P[np.arange(m), plan.indices] = math.sqrt(n / m)
        return P
    if kind is SketchKind.LEVERAGE:
        P = np.zeros((m, n))
        P[np.arange(m), plan.indices] = 1.0 / np.sqrt(m * plan.probs[plan.indices])
        return P
    if kind is SketchKind.COUNTSKETCH:
        P = np.zeros((m, n))
        P[plan.buckets, cols] = plan.signs
        return P
    if kind is SketchKind.SRHT:
        par = _parity(plan.indices[:, None].astype(np.int64) & cols[None, :])
        return (1.0 - 2.0 * par) * plan.signs[None, :] / math.sqrt(m)
    if kind is SketchKind.SRFT:
        phase = (plan.indices[:, None].astype(np.int64) * cols[None, :]) % n
        return np.cos(2.0 * np.pi * phase / n) * plan.signs[None, :] / math.sqrt(m)
    blocks = [
        _gaussian_block(plan, b, min(start + GAUSS_BLOCK, n) - start)
        for b, start in enumerate(range(0, n, GAUSS_BLOCK))
    ]
    return np.hstack(blocks) / math.sqrt(m)


def sketch_data(plan: SketchPlan, y, X, Z=None) -> SketchedData:
    """Apply one plan to the stacked blocks ``[y, X, Z]``."""
    y = np.asarray(y, dtype=np.float64)
    X = np.asarray(X, dtype=np.float64)
    blocks = [y[:, None], X] + ([] if Z is None else [np.asarray(Z, dtype=np.float64)])
    S = apply_sketch(plan, np.hstack(blocks))
    p = X.shape[1]
    return SketchedData(
        y=S[:, 0].copy(),
        X=S[:, 1 : 1 + p].copy(),
        Z=None if Z is None else S[:, 1 + p :].copy(),
        rows_out=S.shape[0],
        effective_m=plan.effective_m,
    )


# ---------------------------------------------------------------------------
# streaming countsketch
# ---------------------------------------------------------------------------


class _SeenBitmap:
    def __init__(self):
        self.bits = np.zeros(1024, dtype=bool)

    def mark(self, idx: np.ndarray) -> None:
        if idx.size == 0:
            return
        if idx.min() < 0:
            raise DimensionMismatch(f"negative row index {int(idx.min())}")
        top = int(idx.max())
        if top >= self.bits.size:
            grown = np.zeros(max(top + 1, 2 * self.bits.size), dtype=bool)
            grown[: self.bits.size] = self.bits
            self.bits = grown
        uniq, counts = np.unique(idx, return_counts=True)
        dup = uniq[counts > 1]
        if dup.size:
            raise DuplicateRowIndex(int(dup[0]))
        hit = self.bits[uniq]
        if np.any(hit):
            raise DuplicateRowIndex(int(uniq[np.argmax(hit)]))
        self.bits[uniq] = True


def stream_countsketch(
    row_source: Iterable[tuple[int, np.ndarray]],
    m: int,
    stream: RngStream,
    batch: int = 4096,
) -> np.ndarray:
    """One-pass countsketch of rows arriving as ``(index, row)`` pairs.

    Memory is O(m k + batch k). The result is bitwise identical to
    ``apply_sketch`` with ``plan_sketch(SketchScheme('countsketch', m), n,
    stream)`` for any arrival order.
    """
    it: Iterator = iter(row_source)
    seen = _SeenBitmap()
    acc: ExactAccumulator | None = None
    idx_buf: list[int] = []
    row_buf: list[np.ndarray] = []

    def flush():
        idx = np.asarray(idx_buf, dtype=np.int64)
        seen.mark(idx)
        b, s = countsketch_hash(stream, idx, m)
        acc.add(b, s, np.vstack(row_buf))
        idx_buf.clear()
        row_buf.clear()

    for i, row in it:
        row = np.atleast_1d(np.asarray(row, dtype=np.float64))
        if acc is None:
            acc = ExactAccumulator(m, row.size)
        elif row.size != acc.k:
            raise DimensionMismatch(f"row {i} has {row.size} entries, expected {acc.k}")
        idx_buf.append(int(i))
        row_buf.append(row)
        if len(idx_buf) >= batch:
            flush()
    if acc is None:
        return np.zeros((m, 0))
    if idx_buf:
        flush()
    return acc.result()
