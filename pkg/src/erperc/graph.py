"""Directed percolation on an Erdős–Rényi graph by deferred decisions.

Edges are never stored.  When a vertex transmits, the number of its
not-visited neighbours is drawn as Binomial(|V_n|, p) and that many
not-visited vertices, chosen uniformly, become visited-not-transmitted.
When nothing is left to transmit the loop reseeds a Binomial(|V_n|, p)
number of not-visited vertices instead, retrying on zero draws.

Step ``k`` draws its binomial from word ``k`` of lane 0 of the run's stream.
Vertex identities come from lane 1, so the count-only batch engine and the
labelled single-run simulator produce the same counts for the same stream.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

from .caps import StepCapExceeded, step_cap
from .kernel import RngStream, binomial_draw, binomial_inverse, stream_words, words_to_uniform

__all__ = [
    "VertexLabel",
    "PercolationConfig",
    "PercolationTrace",
    "GraphBatch",
    "percolate",
    "simulate_graphs",
    "exhaustion_steps",
]


class VertexLabel(IntEnum):
    NOT_VISITED = 0
    VISITED_NOT_TRANSMITTED = 1
    VISITED_TRANSMITTED = 2


@dataclass(frozen=True)
class PercolationConfig:
    n_plus_1: int
    p: float
    seed: int = 0
    stream_id: int = 0

    def __post_init__(self):
        if int(self.n_plus_1) != self.n_plus_1 or self.n_plus_1 < 1:
            raise ValueError("n_plus_1 must be a positive integer")
        if not 0.0 <= self.p <= 1.0:
            raise ValueError("p must lie in [0, 1]")
        if self.p == 0.0 and self.n_plus_1 > 1:
            raise ValueError("p = 0 never reseeds, so the loop cannot terminate")

    @classmethod
    def from_c(cls, n: int, c: float, seed: int = 0, stream_id: int = 0) -> "PercolationConfig":
        """Graph on ``n + 1`` vertices with ``p = c / n``."""
        return cls(n + 1, c / n, seed, stream_id)


_COLUMNS = ("k", "not_visited", "visited_not_transmitted", "visited_transmitted", "newly_visited", "reseed")


@dataclass
class PercolationTrace:
    """One row per while-loop iteration, ``k = 1, 2, ...``; counts are after the step."""

    n_plus_1: int
    k: np.ndarray
    not_visited: np.ndarray
    visited_not_transmitted: np.ndarray
    visited_transmitted: np.ndarray
    newly_visited: np.ndarray
    reseed: np.ndarray
    labels: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        for name in _COLUMNS:
            dtype = bool if name == "reseed" else np.int64
            setattr(self, name, np.asarray(getattr(self, name), dtype=dtype))

    def __len__(self):
        return len(self.k)

    @property
    def exhaustion_steps(self) -> list[int]:
        return exhaustion_steps(self)

    def rows(self):
        for i in range(len(self)):
            yield tuple(int(getattr(self, name)[i]) for name in _COLUMNS)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["k", "not_visited", "visited_not_transmitted", "visited_transmitted", "newly_visited", "reseed"])
        w.writerows(self.rows())
        return buf.getvalue()


def exhaustion_steps(trace: PercolationTrace) -> list[int]:
    """Steps that exhaust a component, plus the terminal step.

    A component is exhausted by a transmission that leaves nothing to
    transmit while not-visited vertices remain.  Reseed rows that draw zero
    vertices leave the same counts but are retries, not new exhaustions.
    """
    mask = (trace.visited_not_transmitted == 0) & (trace.not_visited > 0) & ~trace.reseed
    steps = [int(k) for k in trace.k[mask]]
    if len(trace) and trace.visited_transmitted[-1] == trace.n_plus_1:
        steps.append(int(trace.k[-1]))
    return steps


def percolate(config: PercolationConfig) -> PercolationTrace:
    """Simulate the labelled algorithm on ``config.n_plus_1`` vertices.

    Vertices are kept in one array partitioned as
    ``[transmitted | visited-not-transmitted | not-visited]``, so the
    uniform choices are swaps at the partition boundaries.
    """
    num = config.n_plus_1
    p = config.p
    draws = RngStream(config.seed, config.stream_id, lane=0, position=1)
    aux = RngStream(config.seed, config.stream_id, lane=1)
    cap = step_cap(num, p) if p > 0 else 1

    order = list(range(num))
    labels = np.full(num, VertexLabel.NOT_VISITED, dtype=np.int8)
    s = aux.below(num)
    order[0], order[s] = order[s], order[0]
    labels[order[0]] = VertexLabel.VISITED_NOT_TRANSMITTED
    t, v = 0, 1

    rows = []
    k = 0
    while t < num:
        k += 1
        if k > cap:
            raise StepCapExceeded(f"percolation run exceeded {cap} steps (n+1={num}, p={p})")
        remaining = num - t - v
        b = binomial_draw(remaining, p, draws)
        reseed = v == 0
        if not reseed:
            j = t + aux.below(v)
            order[t], order[j] = order[j], order[t]
            labels[order[t]] = VertexLabel.VISITED_TRANSMITTED
            t += 1
            v -= 1
        lo = t + v
        for i in range(lo, lo + b):
            r = i + aux.below(num - i)
            order[i], order[r] = order[r], order[i]
            labels[order[i]] = VertexLabel.VISITED_NOT_TRANSMITTED
        v += b
        assert (num - t - v) + v + t == num
        rows.append((k, num - t - v, v, t, b, reseed))

    cols = list(zip(*rows)) if rows else [[] for _ in _COLUMNS]
    return PercolationTrace(num, *cols, labels=labels)


@dataclass
class GraphBatch:
    """Count-only results for a batch of percolation runs.

    ``sum_not_visited[k]`` and ``sum_not_visited2[k]`` (``k = 0`` is the
    initial state) pad finished runs with their terminal value 0.
    ``first_exhaustion`` is -1 if the horizon cut a run off before it.
    """

    n_plus_1: int
    p: float
    stream_ids: np.ndarray
    k_end: np.ndarray
    first_exhaustion: np.ndarray
    exhaustion_events: list
    reseed_counts: np.ndarray
    sum_not_visited: np.ndarray
    sum_not_visited2: np.ndarray
    running: np.ndarray
    step1_newly_visited: np.ndarray
    columns: dict | None = None

    @property
    def runs(self) -> int:
        return len(self.stream_ids)

    def trace(self, i: int) -> PercolationTrace:
        if self.columns is None:
            raise ValueError("batch was simulated without keep_traces")
        end = self.k_end[i] if self.k_end[i] >= 0 else self.columns["not_visited"].shape[1]
        cols = {name: arr[i, :end] for name, arr in self.columns.items()}
        return PercolationTrace(self.n_plus_1, k=np.arange(1, end + 1), **cols)


def simulate_graphs(
    n_plus_1: int,
    p: float,
    seed: int,
    stream_ids,
    horizon: int | None = None,
    keep_traces: bool = False,
) -> GraphBatch:
    """Count-level percolation runs for many streams in one vectorised sweep."""
    PercolationConfig(n_plus_1, p)
    stream_ids = np.asarray(stream_ids, dtype=np.uint64)
    runs = len(stream_ids)
    num = n_plus_1
    cap = step_cap(num, p) if p > 0 else 1

    nv = np.full(runs, num - 1, dtype=np.int64)
    vv = np.ones(runs, dtype=np.int64)
    vt = np.zeros(runs, dtype=np.int64)
    k_end = np.full(runs, -1, dtype=np.int64)
    first_exh = np.full(runs, -1, dtype=np.int64)
    reseeds = np.zeros(runs, dtype=np.int64)
    step1 = np.zeros(runs, dtype=np.int64)
    ev_run, ev_step = [], []
    sums, sums2, running = [int(nv.sum())], [int((nv * nv).sum())], [runs]
    rec = {name: [] for name in _COLUMNS[1:]} if keep_traces else None

    k = 0
    while True:
        live = np.nonzero(vt < num)[0]
        if live.size == 0 or (horizon is not None and k >= horizon):
            break
        k += 1
        if k > cap:
            raise StepCapExceeded(f"percolation run exceeded {cap} steps (n+1={num}, p={p})")
        words = stream_words(seed, stream_ids[live], k)
        b = binomial_inverse(words_to_uniform(words), nv[live], p)
        transmit = vv[live] > 0
        nv[live] -= b
        vv[live] += b - transmit
        vt[live] += transmit
        reseeds[live] += ~transmit
        if k == 1:
            step1[live] = b

        exhausted = live[transmit & (vv[live] == 0) & (nv[live] > 0)]
        ev_run.append(exhausted)
        ev_step.append(np.full(exhausted.size, k, dtype=np.int64))
        finished = live[vt[live] == num]
        k_end[finished] = k
        fresh = exhausted[first_exh[exhausted] < 0]
        first_exh[fresh] = k
        fresh = finished[first_exh[finished] < 0]
        first_exh[fresh] = k

        sums.append(int(nv.sum()))
        sums2.append(int((nv * nv).sum()))
        running.append(live.size)
        if keep_traces:
            newly = np.zeros(runs, dtype=np.int64)
            newly[live] = b
            flag = np.zeros(runs, dtype=bool)
            flag[live] = ~transmit
            rec["not_visited"].append(nv.copy())
            rec["visited_not_transmitted"].append(vv.copy())
            rec["visited_transmitted"].append(vt.copy())
            rec["newly_visited"].append(newly)
            rec["reseed"].append(flag)

    all_run = np.concatenate(ev_run) if ev_run else np.zeros(0, dtype=np.int64)
    all_step = np.concatenate(ev_step) if ev_step else np.zeros(0, dtype=np.int64)
    order = np.argsort(all_run, kind="stable")
    sorted_steps = all_step[order]
    split = np.searchsorted(all_run[order], np.arange(runs + 1))
    events = [
        np.append(sorted_steps[split[i] : split[i + 1]], k_end[i]) if k_end[i] >= 0 else sorted_steps[split[i] : split[i + 1]].copy()
        for i in range(runs)
    ]

    columns = None
    if keep_traces:
        columns = {name: np.stack(v, axis=1) if v else np.zeros((runs, 0)) for name, v in rec.items()}
    return GraphBatch(
        n_plus_1=num,
        p=p,
        stream_ids=stream_ids,
        k_end=k_end,
        first_exhaustion=first_exh,
        exhaustion_events=events,
        reseed_counts=reseeds,
        sum_not_visited=np.array(sums, dtype=np.int64),
        sum_not_visited2=np.array(sums2, dtype=np.int64),
        running=np.array(running, dtype=np.int64),
        step1_newly_visited=step1,
        columns=columns,
    )
