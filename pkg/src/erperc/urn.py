"""The two-urn process equivalent to directed percolation, and its rescaled views.

Urn 1 ("not visited") starts with ``n`` balls.  Each step moves a
Binomial(U, p) number of them to urn 2 until urn 1 is empty.  The draw at
step ``k`` always uses word ``k`` of the run's stream, so a single run and
the same stream inside a vectorised batch give identical traces.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .caps import StepCapExceeded, step_cap
from .kernel import binomial_inverse, stream_words, words_to_uniform

__all__ = [
    "UrnConfig",
    "UrnTrace",
    "ScaledTrace",
    "MartingaleTrace",
    "UrnBatch",
    "urn_run",
    "simulate_urns",
    "scale_trace",
    "martingale_transform",
    "first_exhaustion_step",
]


@dataclass(frozen=True)
class UrnConfig:
    n: int
    p: float
    seed: int = 0
    stream_id: int = 0

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise ValueError("n must be a positive integer")
        if not 0.0 <= self.p <= 1.0:
            raise ValueError("p must lie in [0, 1]")
        if self.p == 0.0:
            raise ValueError("p = 0 never empties urn 1")

    @classmethod
    def from_c(cls, n: int, c: float, seed: int = 0, stream_id: int = 0) -> "UrnConfig":
        return cls(n, c / n, seed, stream_id)

    @property
    def c(self) -> float:
        return self.n * self.p

    @property
    def q(self) -> float:
        return 1.0 - self.p


@dataclass
class UrnTrace:
    """``u[k]`` balls in urn 1 after step ``k``; ``moved[k]`` took ``u[k]`` to ``u[k+1]``."""

    u: np.ndarray
    moved: np.ndarray

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=np.int64)
        self.moved = np.asarray(self.moved, dtype=np.int64)

    @property
    def n(self) -> int:
        return int(self.u[0])

    @property
    def k_end(self) -> int:
        return len(self.u) - 1

    def to_csv(self) -> str:
        """Rows ``k, u, moved`` where ``moved`` is the draw that produced ``u[k]`` (0 at k=0)."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["k", "u", "moved"])
        into = np.concatenate([[0], self.moved])
        for k, (uk, bk) in enumerate(zip(self.u, into)):
            w.writerow([k, int(uk), int(bk)])
        return buf.getvalue()


@dataclass
class ScaledTrace:
    """Cadlag path ``alpha -> U(floor(alpha n)) / n``."""

    alpha: np.ndarray
    s: np.ndarray

    def at(self, alpha):
        """Right-continuous evaluation; holds the last value past the end of the trace."""
        idx = np.searchsorted(self.alpha, alpha, side="right") - 1
        if np.any(np.asarray(idx) < 0):
            raise ValueError("alpha must be non-negative")
        return self.s[idx]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["alpha", "s"])
        for a, s in zip(self.alpha, self.s):
            w.writerow([repr(float(a)), repr(float(s))])
        return buf.getvalue()


@dataclass
class MartingaleTrace:
    t: np.ndarray
    k: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.k is None:
            self.k = np.arange(len(self.t))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["k", "t"])
        for k, t in zip(self.k, self.t):
            w.writerow([int(k), repr(float(t))])
        return buf.getvalue()


@dataclass
class UrnBatch:
    """Per-run results and exact integer step sums for a batch of urn runs.

    ``sum_u[k]`` and ``sum_u2[k]`` include finished runs at their terminal
    value 0; ``running[k]`` counts runs not yet finished at step ``k`` (the
    rest are padding).  ``k_end`` is -1 for runs cut off by the horizon and
    ``first_exhaustion`` is -1 where the horizon hides it.
    """

    n: int
    p: float
    stream_ids: np.ndarray
    k_end: np.ndarray
    first_exhaustion: np.ndarray
    sum_u: np.ndarray
    sum_u2: np.ndarray
    running: np.ndarray
    max_jump: np.ndarray
    u_matrix: np.ndarray | None = None

    @property
    def runs(self) -> int:
        return len(self.stream_ids)

    def trace(self, i: int) -> UrnTrace:
        if self.u_matrix is None:
            raise ValueError("batch was simulated without keep_traces")
        end = self.k_end[i] if self.k_end[i] >= 0 else self.u_matrix.shape[1] - 1
        u = self.u_matrix[i, : end + 1]
        return UrnTrace(u, -np.diff(u))


def simulate_urns(
    n: int,
    p: float,
    seed: int,
    stream_ids,
    horizon: int | None = None,
    keep_traces: bool = False,
) -> UrnBatch:
    """Run the urn process for every stream id in one vectorised sweep.

    ``horizon`` stops all runs after that many steps.  The T-process jump
    statistic is taken over steps ``1..n`` (``alpha`` in ``[0, 1]``).
    """
    UrnConfig(n, p)
    stream_ids = np.asarray(stream_ids, dtype=np.uint64)
    runs = len(stream_ids)
    cap = step_cap(n, p)
    q = 1.0 - p
    root_n = math.sqrt(n)

    u = np.full(runs, n, dtype=np.int64)
    k_end = np.full(runs, -1, dtype=np.int64)
    first_exh = np.full(runs, -1, dtype=np.int64)
    max_jump = np.zeros(runs) if q > 0 else np.full(runs, np.nan)
    prev_scaled = np.full(runs, float(n))  # u[k] / q^k
    sums, sums2, running = [runs * n], [runs * n * n], [runs]
    cols = [u.copy()] if keep_traces else None
    log_q = math.log(q) if q > 0 else -math.inf

    k = 0
    while True:
        live = np.nonzero(u > 0)[0]
        if live.size == 0 or (horizon is not None and k >= horizon):
            break
        k += 1
        if k > cap:
            raise StepCapExceeded(f"urn run exceeded {cap} steps (n={n}, p={p})")
        words = stream_words(seed, stream_ids[live], k)
        b = binomial_inverse(words_to_uniform(words), u[live], p)
        u[live] -= b

        if k <= n and q > 0:
            scaled = u[live] * math.exp(-k * log_q)
            jump = np.abs(scaled - prev_scaled[live]) / root_n
            max_jump[live] = np.maximum(max_jump[live], jump)
            prev_scaled[live] = scaled

        unseen = first_exh[live] < 0
        hit = live[unseen & ((n - u[live]) < k)]
        first_exh[hit] = k
        ended = live[u[live] == 0]
        k_end[ended] = k

        sums.append(int(u.sum()))
        sums2.append(int((u * u).sum()))
        running.append(int(np.count_nonzero(u > 0)) + int(ended.size))
        if keep_traces:
            cols.append(u.copy())

    # runs that empty urn 1 without an earlier exhaustion exhaust at step n + 1
    done_silent = (k_end >= 0) & (first_exh < 0)
    first_exh[done_silent] = n + 1

    return UrnBatch(
        n=n,
        p=p,
        stream_ids=stream_ids,
        k_end=k_end,
        first_exhaustion=first_exh,
        sum_u=np.array(sums, dtype=np.int64),
        sum_u2=np.array(sums2, dtype=np.int64),
        running=np.array(running, dtype=np.int64),
        max_jump=max_jump,
        u_matrix=np.stack(cols, axis=1) if keep_traces else None,
    )


def urn_run(config: UrnConfig) -> UrnTrace:
    """One full urn run; records every step, including empty draws."""
    batch = simulate_urns(config.n, config.p, config.seed, [config.stream_id], keep_traces=True)
    return batch.trace(0)


def scale_trace(trace: UrnTrace, config: UrnConfig) -> ScaledTrace:
    n = config.n
    k = np.arange(len(trace.u))
    return ScaledTrace(alpha=k / n, s=trace.u / n)


def martingale_transform(trace: UrnTrace, config: UrnConfig) -> MartingaleTrace:
    """``T(k) = U(k) / (sqrt(n) q^k) - sqrt(n)``."""
    if config.q <= 0:
        raise ValueError("martingale transform needs q = 1 - p > 0")
    n = config.n
    k = np.arange(len(trace.u))
    with np.errstate(over="ignore", invalid="ignore"):
        t = trace.u * np.exp(-k * math.log(config.q)) / math.sqrt(n) - math.sqrt(n)
    t = np.where(trace.u == 0, -math.sqrt(n), t)
    t[0] = 0.0
    return MartingaleTrace(t=t, k=k)


def first_exhaustion_step(trace: UrnTrace) -> int:
    """First ``k >= 1`` with fewer than ``k`` balls in urn 2.

    Past the end of the trace urn 2 holds all ``n`` balls, so a run that
    empties urn 1 first exhausts at ``n + 1``.
    """
    n = trace.n
    k = np.arange(len(trace.u))
    hits = np.nonzero((k >= 1) & ((n - trace.u) < k))[0]
    return int(hits[0]) if hits.size else n + 1
