"""Deterministic random streams, normal special functions, and small linear-algebra
and statistics utilities shared by the coverage engines and benchmarks.

Random numbers come from numpy's Philox bit generator, a counter-based PRNG with a
128-bit key. A stream is identified by the pair (seed, stream): the key is exactly
``[seed, stream]``, so equal pairs reproduce bit-identical draws on every platform
(for a fixed numpy version), and distinct pairs give statistically independent
streams. Substreams are derived by hashing the parent stream together with caller
supplied keys (blake2b, 8-byte digest), which lets independent tasks be keyed by
stable identifiers such as a simulation id.
"""

from __future__ import annotations

import contextlib
import hashlib
import math
import os
from dataclasses import dataclass

import numpy as np

try:
    from threadpoolctl import threadpool_limits as _threadpool_limits
except ImportError:  # pragma: no cover
    _threadpool_limits = None

_U64 = 1 << 64
_SQRT2 = math.sqrt(2.0)


def single_thread_blas():
    """Context manager pinning BLAS pools to one thread.

    The coverage and sampler loops are long sequences of small dense ops where
    BLAS-internal threading costs far more than it gains (and fights with the
    package's own simulation-level threads); they run under this limit.
    """
    if _threadpool_limits is None:  # pragma: no cover
        return contextlib.nullcontext()
    return _threadpool_limits(limits=1, user_api="blas")


class DecompositionError(ValueError):
    """Cholesky factorization failed; ``pivot`` is the failing pivot index."""

    def __init__(self, message, pivot=None):
        super().__init__(message)
        self.pivot = pivot


@dataclass(frozen=True)
class SeededRng:
    """A reproducible random stream identified by (seed, stream).

    Instances are cheap value objects; call :meth:`generator` to obtain a fresh
    numpy Generator positioned at the start of the stream. An instance is
    single-owner: two generators made from the same SeededRng replay the same
    draws, so concurrent tasks must use distinct substreams.
    """

    seed: int
    stream: int = 0

    def __post_init__(self):
        if not 0 <= self.seed < _U64:
            raise ValueError(f"seed must be a 64-bit unsigned integer, got {self.seed}")
        if not 0 <= self.stream < _U64:
            raise ValueError(f"stream must be a 64-bit unsigned integer, got {self.stream}")

    def substream(self, *keys) -> "SeededRng":
        """Derive an independent stream from this one, keyed by ints or strings."""
        h = hashlib.blake2b(digest_size=8)
        h.update(self.stream.to_bytes(8, "little"))
        for k in keys:
            if isinstance(k, (int, np.integer)):
                h.update(b"i" + int(k).to_bytes(8, "little", signed=True))
            elif isinstance(k, str):
                h.update(b"s" + k.encode("utf-8") + b"\x00")
            else:
                raise TypeError(f"substream keys must be int or str, got {type(k).__name__}")
        return SeededRng(self.seed, int.from_bytes(h.digest(), "little"))

    def generator(self) -> np.random.Generator:
        return np.random.Generator(np.random.Philox(key=[self.seed, self.stream]))


def norm_cdf(z: float) -> float:
    """Standard normal CDF, via the C library's erfc (accurate to ~1 ulp)."""
    z = float(z)
    if not math.isfinite(z):
        raise ValueError(f"norm_cdf requires a finite argument, got {z}")
    return 0.5 * math.erfc(-z / _SQRT2)


def _norm_sf(x: float) -> float:
    # survival function 1 - cdf(x), computed without cancellation
    return 0.5 * math.erfc(x / _SQRT2)


def _norm_pdf(x: float) -> float:
    return math.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)


def _solve_sf(q: float) -> float:
    # root of sf(x) = q on [0, 40] for q <= 0.5: safeguarded Newton, falling
    # back to bisection whenever the Newton step leaves the bracket
    lo, hi = 0.0, 40.0
    x = 0.5 * (lo + hi)
    for _ in range(200):
        s = _norm_sf(x)
        if s > q:
            lo = x
        elif s < q:
            hi = x
        else:
            return x
        pdf = _norm_pdf(x)
        if s > 0.0 and pdf > 1e-300:
            # Newton on log sf: quadratic on the exponential tail, and equal
            # to plain Newton to first order near the center
            x_new = x + (math.log(s) - math.log(q)) * s / pdf
        else:
            x_new = 0.5 * (lo + hi)
        if not lo < x_new < hi:
            x_new = 0.5 * (lo + hi)
        if abs(x_new - x) <= 5e-16 * (1.0 + abs(x_new)):
            return x_new
        x = x_new
    return x


def norm_isf(p: float) -> float:
    """Standard normal inverse survival function.

    Solves sf(x) = p by safeguarded Newton with a bisection bracket, using the
    symmetry isf(p) = -isf(1 - p) for p > 1/2. Only defined for 0 < p < 1; the
    endpoints are infinite limits.
    """
    p = float(p)
    if not 0.0 < p < 1.0:
        raise ValueError(f"norm_isf requires 0 < p < 1, got {p}")
    if p == 0.5:
        return 0.0
    if p > 0.5:
        return -_solve_sf(1.0 - p)
    return _solve_sf(p)


def cholesky(m: np.ndarray) -> np.ndarray:
    """Lower-triangular Cholesky factor of a symmetric positive-definite matrix.

    Unblocked outer-product algorithm; raises :class:`DecompositionError` with
    the failing pivot index when the matrix is not positive definite. Input
    must be square, finite, and symmetric to within 1e-9 relative.
    """
    a = np.asarray(m, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"cholesky requires a square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("cholesky requires finite entries")
    n = a.shape[0]
    scale = np.abs(a).max()
    if scale > 0 and np.abs(a - a.T).max() > 1e-9 * scale:
        raise ValueError("cholesky requires a symmetric matrix (1e-9 relative)")

    L = np.zeros_like(a)
    for j in range(n):
        d = a[j, j] - L[j, :j] @ L[j, :j]
        if not d > 0.0:
            raise DecompositionError(
                f"matrix is not positive definite: pivot {j} is {d:.6g}", pivot=j
            )
        L[j, j] = math.sqrt(d)
        if j + 1 < n:
            L[j + 1 :, j] = (a[j + 1 :, j] - L[j + 1 :, :j] @ L[j, :j]) / L[j, j]
    return L


def mvn_sample(mean, chol_cov, rng) -> np.ndarray:
    """One multivariate-normal draw ``mean + L z`` with z i.i.d. standard normal.

    ``rng`` may be a SeededRng (a fresh generator is opened) or a live numpy
    Generator (draws continue the stream).
    """
    mean = np.asarray(mean, dtype=float)
    L = np.asarray(chol_cov, dtype=float)
    if L.shape != (mean.size, mean.size):
        raise ValueError(f"dimension mismatch: mean {mean.shape}, chol {L.shape}")
    g = rng.generator() if isinstance(rng, SeededRng) else rng
    return mean + L @ g.standard_normal(mean.size)


def mvn_sample_batch(mean, chol_cov, n, rng) -> np.ndarray:
    """n multivariate-normal draws as an (n, d) array; see :func:`mvn_sample`."""
    mean = np.asarray(mean, dtype=float)
    L = np.asarray(chol_cov, dtype=float)
    if L.shape != (mean.size, mean.size):
        raise ValueError(f"dimension mismatch: mean {mean.shape}, chol {L.shape}")
    g = rng.generator() if isinstance(rng, SeededRng) else rng
    return mean + g.standard_normal((n, mean.size)) @ L.T


def ks_uniform_statistic(values) -> float:
    """Two-sided Kolmogorov-Smirnov sup-distance between the empirical CDF of
    ``values`` and the uniform CDF on [0, 1]."""
    v = np.sort(np.asarray(values, dtype=float).ravel())
    if v.size == 0:
        raise ValueError("ks_uniform_statistic requires a nonempty input")
    if not np.all(np.isfinite(v)) or v[0] < 0.0 or v[-1] > 1.0:
        raise ValueError("ks_uniform_statistic requires values in [0, 1]")
    n = v.size
    i = np.arange(1, n + 1, dtype=float)
    d_plus = (i / n - v).max()
    d_minus = (v - (i - 1.0) / n).max()
    return float(max(d_plus, d_minus, 0.0))


@dataclass(frozen=True)
class BinomialBand:
    """Pointwise binomial uncertainty half-widths for an ECP estimate."""

    levels: np.ndarray
    half_widths: np.ndarray
    z: float
    n_sims: int

    @property
    def level_count(self) -> int:
        return self.levels.size


def binomial_band(credibility_levels, n_sims: int, z: float = 3.0) -> BinomialBand:
    """Half-width z * sqrt(c (1-c) / n_sims) at each credibility level c."""
    levels = np.asarray(credibility_levels, dtype=float).ravel()
    if n_sims < 1:
        raise ValueError(f"n_sims must be >= 1, got {n_sims}")
    hw = z * np.sqrt(levels * (1.0 - levels) / n_sims)
    return BinomialBand(levels=levels, half_widths=hw, z=float(z), n_sims=int(n_sims))


def thread_cap() -> int:
    """Worker-thread cap from DRPKIT_THREADS: unset -> 1, 0 -> cpu count, k -> k."""
    raw = os.environ.get("DRPKIT_THREADS", "").strip()
    if raw == "":
        return 1
    try:
        cap = int(raw)
    except ValueError:
        raise ValueError(f"DRPKIT_THREADS must be an integer, got {raw!r}") from None
    if cap <= 0:
        return os.cpu_count() or 1
    return cap


def parallel_map(fn, items):
    """Map ``fn`` over ``items`` preserving order, on up to thread_cap() threads.

    Tasks must be pure given their arguments (independently seeded); the result
    is identical to a serial map regardless of scheduling.
    """
    items = list(items)
    workers = min(thread_cap(), len(items)) if items else 1
    if workers <= 1:
        return [fn(it) for it in items]
    from concurrent.futures import ThreadPoolExecutor

    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
