"""Dense numerical kernels shared by every other module.

Least squares via Householder QR, thin SVD, the normalized Walsh-Hadamard
transform, the real part of the unitary DFT, AR(1) Gaussian vectors, the
inverse normal CDF and reproducible random streams.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular

from .errors import NoConvergence, NotPowerOfTwo, OutOfDomain, RankDeficient

RANK_TOL = 1e-12

# ---------------------------------------------------------------------------
# random streams
# ---------------------------------------------------------------------------

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)


def splitmix64(x: np.ndarray) -> np.ndarray:
    """SplitMix64 finalizer applied elementwise to a uint64 array."""
    z = np.asarray(x, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = z + _GOLDEN
        z = (z ^ (z >> np.uint64(30))) * _MIX1
        z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


@dataclass(frozen=True)
class RngStream:
    """A named, reproducible random stream.

    The pair ``(seed, stream_id)`` plus an optional spawn ``path`` fully
    determines every draw; two streams differing anywhere in that tuple are
    statistically independent (they feed distinct ``SeedSequence`` spawn
    keys). Instances are cheap value objects; call :meth:`generator` to get
    a fresh numpy ``Generator`` positioned at the start of the stream.
    """

    seed: int
    stream_id: int = 0
    path: tuple[int, ...] = field(default=())

    def seed_sequence(self) -> np.random.SeedSequence:
        return np.random.SeedSequence(
            entropy=int(self.seed) & (2**64 - 1),
            spawn_key=(int(self.stream_id), *self.path),
        )

    def generator(self) -> np.random.Generator:
        return np.random.Generator(np.random.PCG64(self.seed_sequence()))

    def key(self) -> np.uint64:
        """64-bit key for counter-based (stateless) hashing."""
        return self.seed_sequence().generate_state(1, dtype=np.uint64)[0]

    def spawn(self, task_id: int) -> "RngStream":
        return RngStream(self.seed, self.stream_id, (*self.path, int(task_id)))

    def hash_indices(self, idx: np.ndarray) -> np.ndarray:
        """Stateless 64-bit draws, one per integer index."""
        idx = np.asarray(idx, dtype=np.uint64)
        with np.errstate(over="ignore"):
            return splitmix64(self.key() + idx * _GOLDEN)


def as_generator(source) -> np.random.Generator:
    if isinstance(source, RngStream):
        return source.generator()
    if isinstance(source, np.random.Generator):
        return source
    return np.random.default_rng(source)


# ---------------------------------------------------------------------------
# least squares and decompositions
# ---------------------------------------------------------------------------


def _as_matrix(A) -> np.ndarray:
    A = np.asarray(A, dtype=np.float64)
    if A.ndim == 1:
        A = A[:, None]
    if A.ndim != 2:
        raise ValueError("expected a 2-D array")
    if not np.all(np.isfinite(A)):
        raise ValueError("matrix has non-finite entries")
    return A


def qr_factor(A, tol: float = RANK_TOL) -> tuple[np.ndarray, np.ndarray]:
    """Reduced QR with a column-rank check on the diagonal of R."""
    A = _as_matrix(A)
    n, k = A.shape
    if n < k:
        raise RankDeficient(n, f"{n} rows cannot support {k} columns")
    Q, R = np.linalg.qr(A, mode="reduced")
    d = np.abs(np.diag(R))
    if k and (d.max() == 0.0 or d.min() <= tol * d.max()):
        raise RankDeficient(int(np.argmin(d)))
    return Q, R


def qr_solve(A, b, tol: float = RANK_TOL) -> np.ndarray:
    """Least-squares solution of ``A x ~= b`` through Householder QR.

    Raises
    ------
    RankDeficient
        If the smallest diagonal entry of R is at most ``tol`` times the
        largest; ``.index`` names the offending column.
    """
    Q, R = qr_factor(A, tol)
    b = np.asarray(b, dtype=np.float64)
    return solve_triangular(R, Q.T @ b)


@dataclass(frozen=True)
class ThinSvd:
    U: np.ndarray
    singular_values: np.ndarray
    Vt: np.ndarray

    @property
    def sigma_max(self) -> float:
        return float(self.singular_values[0]) if self.singular_values.size else 0.0

    @property
    def sigma_min(self) -> float:
        return float(self.singular_values[-1]) if self.singular_values.size else 0.0

    def reconstruct(self) -> np.ndarray:
        return (self.U * self.singular_values) @ self.Vt


SVD_ITERATION_CAP = 75  # LAPACK's own sweep limit for bidiagonal QR


def thin_svd(A) -> ThinSvd:
    A = _as_matrix(A)
    try:
        U, s, Vt = np.linalg.svd(A, full_matrices=False)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - LAPACK failure
        raise NoConvergence(SVD_ITERATION_CAP) from exc
    return ThinSvd(U, s, Vt)


GRAM_SQUARING_MAX = 256


def spectral_norm(A, tol: float = 1e-10, max_iter: int = 10_000) -> float:
    """Largest singular value by power iteration on ``A^T A``.

    For narrow ``A`` the Gram matrix is squared after every step, so step j
    applies ``(A^T A)^(2^j)`` and nearly tied top singular values still
    separate within a few dozen steps. Stops when the relative change of
    ``||A v||`` falls below ``tol``.
    """
    A = _as_matrix(A)
    if A.size == 0 or not np.any(A):
        return 0.0
    v = np.random.default_rng(0x5EED).standard_normal(A.shape[1])
    v /= np.linalg.norm(v)
    est = np.linalg.norm(A @ v)
    B = A.T @ A if A.shape[1] <= GRAM_SQUARING_MAX else None
    for _ in range(max_iter):
        w = A.T @ (A @ v) if B is None else B @ v
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return float(est)
        v = w / nw
        new = np.linalg.norm(A @ v)
        if abs(new - est) <= tol * new:
            return float(new)
        est = new
        if B is not None:
            B = B @ B
            B /= np.abs(B).max()
    raise NoConvergence(max_iter)


# ---------------------------------------------------------------------------
# fast transforms
# ---------------------------------------------------------------------------


def is_power_of_two(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


def next_power_of_two(n: int) -> int:
    return 1 << max(0, (int(n) - 1).bit_length())


def fwht_inplace(x: np.ndarray) -> np.ndarray:
    """Unnormalized Walsh-Hadamard butterflies along axis 0, in place.

    ``x`` must be C-contiguous float64 with a power-of-two leading dimension.
    """
    n = x.shape[0]
    if not is_power_of_two(n):
        raise NotPowerOfTwo(f"length {n} is not a power of two")
    flat = x.reshape(n, -1)
    h = 1
    while h < n:
        y = flat.reshape(n // (2 * h), 2, h, flat.shape[1])
        top = y[:, 0].copy()
        y[:, 0] += y[:, 1]
        np.subtract(top, y[:, 1], out=y[:, 1])
        h *= 2
    return x


def fwht_normalized(v) -> np.ndarray:
    """``H v`` with ``H_ij = n^{-1/2} (-1)^{<i,j>}``; columnwise for 2-D input."""
    x = np.array(v, dtype=np.float64, order="C", copy=True)
    n = x.shape[0]
    if not is_power_of_two(n):
        raise NotPowerOfTwo(f"length {n} is not a power of two")
    fwht_inplace(x)
    x *= 1.0 / math.sqrt(n)
    return x


def real_dft(v) -> np.ndarray:
    """Real part of the unitary DFT (scale ``n^{-1/2}``) along axis 0."""
    x = np.asarray(v, dtype=np.float64)
    n = x.shape[0]
    if n == 0:
        raise ValueError("real_dft needs a nonempty input")
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite input")
    half = np.fft.rfft(x, axis=0, norm="ortho").real
    # Re(F v)_k = Re(F v)_{n-k} for real v
    return half[real_dft_fold(np.arange(n), n)]


def real_dft_fold(k: np.ndarray, n: int) -> np.ndarray:
    """Map DFT row indices onto the half spectrum returned by ``rfft``."""
    k = np.asarray(k)
    return np.minimum(k, n - k) % n


# ---------------------------------------------------------------------------
# distributions
# ---------------------------------------------------------------------------


def mvn_ar1(dim: int, rho: float, stream, size: int | None = None) -> np.ndarray:
    """Draw N(0, S) with ``S_ij = rho^|i-j|`` by the exact AR(1) recursion.

    Returns a vector of length ``dim``, or a ``(size, dim)`` array.
    """
    if not abs(rho) < 1:
        raise OutOfDomain(f"|rho| must be < 1, got {rho}")
    rng = as_generator(stream)
    shape = (1 if size is None else int(size), int(dim))
    x = rng.standard_normal(shape)
    innov = math.sqrt(1.0 - rho * rho)
    for j in range(1, shape[1]):
        x[:, j] = rho * x[:, j - 1] + innov * x[:, j]
    return x[0] if size is None else x


# Wichura (1988) AS241 PPND16 coefficients, ascending powers.
_A = (3.3871328727963666080e0, 1.3314166789178437745e2, 1.9715909503065514427e3,
      1.3731693765509461125e4, 4.5921953931549871457e4, 6.7265770927008700853e4,
      3.3430575583588128105e4, 2.5090809287301226727e3)
_B = (1.0, 4.2313330701600911252e1, 6.8718700749205790830e2, 5.3941960214247511077e3,
      2.1213794301586595867e4, 3.9307895800092710610e4, 2.8729085735721942674e4,
      5.2264952788528545610e3)
_C = (1.42343711074968357734e0, 4.63033784615654529590e0, 5.76949722146069140550e0,
      3.64784832476320460504e0, 1.27045825245236838258e0, 2.41780725177450611770e-1,
      2.27238449892691845833e-2, 7.74545014278341407640e-4)
_D = (1.0, 2.05319162663775882187e0, 1.67638483018380384940e0, 6.89767334985100004550e-1,
      1.48103976427480074590e-1, 1.51986665636164571966e-2, 5.47593808499534494600e-4,
      1.05075007164441684324e-9)
_E = (6.65790464350110377720e0, 5.46378491116411436990e0, 1.78482653991729133580e0,
      2.96560571828504891230e-1, 2.65321895265761230930e-2, 1.24266094738807843860e-3,
      2.71155556874348757815e-5, 2.01033439929228813265e-7)
_F = (1.0, 5.99832206555887937690e-1, 1.36929880922735805310e-1, 1.48753612908506148525e-2,
      7.86869131145613259100e-4, 1.84631831751005468180e-5, 1.42151175831644588870e-7,
      2.04426310338993978564e-15)


def _poly(coef, x: float) -> float:
    acc = 0.0
    for c in reversed(coef):
        acc = acc * x + c
    return acc


def normal_quantile(p: float) -> float:
    """Inverse standard normal CDF (AS241, about 1e-16 relative accuracy)."""
    p = float(p)
    if not 0.0 < p < 1.0:
        raise OutOfDomain(f"probability must lie in (0, 1), got {p}")
    q = p - 0.5
    if abs(q) <= 0.425:
        r = 0.180625 - q * q
        return q * _poly(_A, r) / _poly(_B, r)
    r = math.sqrt(-math.log(p if q < 0 else 1.0 - p))
    if r <= 5.0:
        r -= 1.6
        val = _poly(_C, r) / _poly(_D, r)
    else:
        r -= 5.0
        val = _poly(_E, r) / _poly(_F, r)
    return -val if q < 0 else val


def normal_cdf(x: float) -> float:
    return 0.5 * math.erfc(-x / math.sqrt(2.0))


def normal_sf_two_sided(z: float) -> float:
    """``P(|N(0,1)| > |z|)``."""
    return math.erfc(abs(z) / math.sqrt(2.0))
