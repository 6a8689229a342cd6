"""Seedable randomness: a counter-based Philox stream plus the samplers built on it.

Every random word is a pure function of ``(seed, stream_id, lane, position)``,
so an ensemble can evaluate many streams at once with numpy and still match a
single-stream run bit for bit.  Each binomial or Gaussian variate consumes
exactly one word, which keeps traces aligned between the scalar and batched
simulators.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import special

__all__ = [
    "RngStream",
    "VarianceSchedule",
    "philox4x32",
    "stream_words",
    "words_to_uniform",
    "words_to_open_uniform",
    "binomial_inverse",
    "binomial_draw",
    "gaussian_draw",
    "sample_stretched_bm",
    "INVERSION_CUTOFF",
]

MASK32 = 0xFFFFFFFF
MASK64 = (1 << 64) - 1

_PHILOX_M0 = 0xD2511F53
_PHILOX_M1 = 0xCD9E8D57
_PHILOX_W0 = 0x9E3779B9
_PHILOX_W1 = 0xBB67AE85
_ROUNDS = 10

# positions live in the low 56 bits of the 64-bit position word; lanes in the top 8
POSITION_BITS = 56
MAX_LANE = 0xFF

# mean below which binomials are inverted by chop-down from zero
INVERSION_CUTOFF = 10.0

_TWO_M53 = 2.0**-53


def _philox_scalar(c0: int, c1: int, c2: int, c3: int, k0: int, k1: int) -> tuple[int, int, int, int]:
    for r in range(_ROUNDS):
        if r:
            k0 = (k0 + _PHILOX_W0) & MASK32
            k1 = (k1 + _PHILOX_W1) & MASK32
        p0 = _PHILOX_M0 * c0
        p1 = _PHILOX_M1 * c2
        c0, c1, c2, c3 = (
            (p1 >> 32) ^ c1 ^ k0,
            p1 & MASK32,
            (p0 >> 32) ^ c3 ^ k1,
            p0 & MASK32,
        )
    return c0, c1, c2, c3


def philox4x32(counter, key):
    """Philox4x32-10 block function, vectorised over numpy arrays.

    ``counter`` is four arrays (or ints) of 32-bit words, ``key`` two.  All
    arithmetic is done in uint64 so the 32x32 products never overflow.
    """
    c0, c1, c2, c3 = (np.asarray(x, dtype=np.uint64) for x in counter)
    k0, k1 = (np.asarray(x, dtype=np.uint64) for x in key)
    m0 = np.uint64(_PHILOX_M0)
    m1 = np.uint64(_PHILOX_M1)
    w0 = np.uint64(_PHILOX_W0)
    w1 = np.uint64(_PHILOX_W1)
    lo = np.uint64(MASK32)
    s32 = np.uint64(32)
    for r in range(_ROUNDS):
        if r:
            k0 = (k0 + w0) & lo
            k1 = (k1 + w1) & lo
        p0 = m0 * c0
        p1 = m1 * c2
        c0, c1, c2, c3 = (p1 >> s32) ^ c1 ^ k0, p1 & lo, (p0 >> s32) ^ c3 ^ k1, p0 & lo
    return c0, c1, c2, c3


def _check_u64(name: str, value: int) -> int:
    value = int(value)
    if not 0 <= value <= MASK64:
        raise ValueError(f"{name} must be a 64-bit unsigned integer, got {value}")
    return value


def stream_words(seed: int, stream_ids, positions, lane: int = 0) -> np.ndarray:
    """64-bit words for arrays of stream ids and positions (broadcast together)."""
    seed = _check_u64("seed", seed)
    if not 0 <= lane <= MAX_LANE:
        raise ValueError(f"lane must be in [0, {MAX_LANE}]")
    sid = np.asarray(stream_ids, dtype=np.uint64)
    pos = np.asarray(positions, dtype=np.uint64)
    sid, pos = np.broadcast_arrays(sid, pos)
    lo = np.uint64(MASK32)
    s32 = np.uint64(32)
    hi_pos = (pos >> s32) | np.uint64(lane << (POSITION_BITS - 32))
    x0, x1, _, _ = philox4x32(
        (pos & lo, hi_pos, sid & lo, sid >> s32),
        (np.uint64(seed & MASK32), np.uint64(seed >> 32)),
    )
    return x0 | (x1 << s32)


def words_to_uniform(words) -> np.ndarray:
    """Map 64-bit words to doubles on the grid ``{0, 2^-53, ..., 1 - 2^-53}``."""
    return (np.asarray(words, dtype=np.uint64) >> np.uint64(11)).astype(np.float64) * _TWO_M53


def words_to_open_uniform(words) -> np.ndarray:
    """Like :func:`words_to_uniform` but shifted half a step into ``(0, 1)``."""
    return ((np.asarray(words, dtype=np.uint64) >> np.uint64(11)).astype(np.float64) + 0.5) * _TWO_M53


@dataclass
class RngStream:
    """One sub-stream of the counter-based generator.

    ``position`` counts consumed words; two streams with equal
    ``(seed, stream_id, lane)`` produce identical sequences.  A stream is
    not safe to share between threads; hand each ensemble run its own.
    """

    seed: int = 0
    stream_id: int = 0
    lane: int = 0
    position: int = field(default=0)

    def __post_init__(self):
        self.seed = _check_u64("seed", self.seed)
        self.stream_id = _check_u64("stream_id", self.stream_id)
        if not 0 <= self.lane <= MAX_LANE:
            raise ValueError(f"lane must be in [0, {MAX_LANE}]")

    def substream(self, lane: int) -> "RngStream":
        """A fresh stream with the same seed and id but a disjoint word space."""
        return RngStream(self.seed, self.stream_id, lane, 0)

    def _key(self) -> tuple[int, int]:
        return self.seed & MASK32, self.seed >> 32

    def next_word(self) -> int:
        pos = self.position
        if pos >> POSITION_BITS:
            raise OverflowError("stream exhausted")
        self.position += 1
        x0, x1, _, _ = _philox_scalar(
            pos & MASK32,
            (pos >> 32) | (self.lane << (POSITION_BITS - 32)),
            self.stream_id & MASK32,
            self.stream_id >> 32,
            *self._key(),
        )
        return x0 | (x1 << 32)

    def words(self, size: int) -> np.ndarray:
        size = int(size)
        positions = np.arange(self.position, self.position + size, dtype=np.uint64)
        self.position += size
        return stream_words(self.seed, self.stream_id, positions, self.lane)

    def uniform(self, size: int | tuple | None = None):
        """Uniform variates on [0, 1) with 53-bit resolution."""
        if size is None:
            return (self.next_word() >> 11) * _TWO_M53
        shape = (size,) if np.isscalar(size) else tuple(size)
        return words_to_uniform(self.words(int(np.prod(shape)))).reshape(shape)

    def open_uniform(self, size: int | tuple | None = None):
        if size is None:
            return ((self.next_word() >> 11) + 0.5) * _TWO_M53
        shape = (size,) if np.isscalar(size) else tuple(size)
        return words_to_open_uniform(self.words(int(np.prod(shape)))).reshape(shape)

    def below(self, bound: int) -> int:
        """Uniform integer in ``[0, bound)``; bias is below ``bound / 2**53``."""
        if bound <= 0:
            raise ValueError("bound must be positive")
        return min(int(self.uniform() * bound), bound - 1)

    def normal(self, size: int | tuple | None = None):
        """Standard normals by inverse CDF, one word each."""
        u = self.open_uniform(size)
        return float(special.ndtri(u)) if size is None else special.ndtri(u)


def _validate_binomial(trials, p):
    trials = np.asarray(trials, dtype=np.int64)
    p = np.asarray(p, dtype=np.float64)
    if np.any(trials < 0):
        raise ValueError("trials must be non-negative")
    if np.any(~((p >= 0.0) & (p <= 1.0))):
        raise ValueError("p must lie in [0, 1]")
    return trials, p


def binomial_inverse(u, trials, p) -> np.ndarray:
    """Binomial(trials, p) quantile at uniform ``u`` (vectorised, exact inversion).

    Returns the smallest ``k`` with ``u < P(X <= k)``.  For ``p > 1/2`` the
    mirrored law is inverted.  Small means walk the pmf recurrence up from
    zero; larger means start from a normal guess and step with the exact CDF.
    """
    u = np.asarray(u, dtype=np.float64)
    trials, p = _validate_binomial(trials, p)
    u, trials, p = np.broadcast_arrays(u, trials, p)
    flip = p > 0.5
    pp = np.where(flip, 1.0 - p, p)
    mean = trials * pp
    out = np.zeros(u.shape, dtype=np.int64)

    small = mean < INVERSION_CUTOFF
    if np.any(small):
        out[small] = _chop_down(u[small], trials[small], pp[small])
    big = ~small
    if np.any(big):
        out[big] = _guided_search(u[big], trials[big], pp[big])
    return np.where(flip, trials - out, out)


def _chop_down(u, n, p):
    k = np.zeros(u.shape, dtype=np.int64)
    with np.errstate(divide="ignore"):
        ratio = np.where(p < 1.0, p / (1.0 - p), 0.0)
        pmf = np.exp(n * np.log1p(-p))
    cdf = pmf.copy()
    active = np.nonzero((u >= cdf) & (k < n))[0]
    while active.size:
        k[active] += 1
        ka = k[active]
        pmf[active] *= (n[active] - ka + 1) / ka * ratio[active]
        cdf[active] += pmf[active]
        keep = (u[active] >= cdf[active]) & (ka < n[active])
        active = active[keep]
    return k


def _guided_search(u, n, p):
    sd = np.sqrt(n * p * (1.0 - p))
    z = special.ndtri(np.clip(u, _TWO_M53, 1.0 - _TWO_M53))
    k = np.clip(np.floor(n * p + sd * z), 0, n).astype(np.int64)
    up = np.nonzero(special.bdtr(k, n, p) <= u)[0]
    while up.size:
        k[up] += 1
        up = up[(special.bdtr(k[up], n[up], p[up]) <= u[up]) & (k[up] < n[up])]
    down = np.nonzero(k > 0)[0]
    down = down[special.bdtr(k[down] - 1, n[down], p[down]) > u[down]]
    while down.size:
        k[down] -= 1
        down = down[k[down] > 0]
        down = down[special.bdtr(k[down] - 1, n[down], p[down]) > u[down]]
    return k


def binomial_draw(trials: int, p: float, rng: RngStream) -> int:
    """One Binomial(trials, p) variate; always consumes exactly one word."""
    _validate_binomial(trials, p)
    u = rng.uniform()
    return int(binomial_inverse(u, trials, p))


def gaussian_draw(mean: float, sd: float, rng: RngStream) -> float:
    """One Normal(mean, sd**2) variate; ``sd == 0`` returns ``mean`` exactly."""
    if not sd >= 0:
        raise ValueError("sd must be non-negative")
    z = rng.normal()
    if sd == 0:
        return float(mean)
    return float(mean + sd * z)


@dataclass(frozen=True)
class VarianceSchedule:
    """Cumulative variance H at each grid point: starts at 0, never decreases."""

    values: tuple

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.ndim != 1 or vals.size == 0:
            raise ValueError("schedule must be a non-empty 1-d sequence")
        if vals[0] != 0.0:
            raise ValueError("schedule must start at 0")
        if np.any(np.diff(vals) < 0) or np.any(~np.isfinite(vals)):
            raise ValueError("schedule must be finite and non-decreasing")
        object.__setattr__(self, "values", tuple(float(v) for v in vals))

    def __len__(self):
        return len(self.values)

    def increments(self) -> np.ndarray:
        return np.diff(np.asarray(self.values))


def sample_stretched_bm(schedule: VarianceSchedule | list, rng: RngStream, size: int | None = None) -> np.ndarray:
    """Brownian motion observed at cumulative variances ``schedule``.

    Returns one path, or ``(size, len(schedule))`` paths when ``size`` is given.
    Paths are drawn row by row, so path ``i`` does not depend on ``size``.
    """
    if not isinstance(schedule, VarianceSchedule):
        schedule = VarianceSchedule(tuple(schedule))
    scale = np.sqrt(schedule.increments())
    m = len(scale)
    rows = 1 if size is None else int(size)
    z = rng.normal((rows, m)) if m else np.zeros((rows, 0))
    paths = np.zeros((rows, m + 1))
    np.cumsum(z * scale, axis=1, out=paths[:, 1:])
    return paths[0] if size is None else paths
