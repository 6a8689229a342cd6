"""Monte Carlo harness and exact small-graph oracles for the limit claims."""

from __future__ import annotations

import csv
import io
import itertools
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import special, stats

from .graph import GraphBatch, PercolationConfig, simulate_graphs
from .limits import (
    LimitParams,
    giant_exhaustion_law,
    hitting_cdf,
    reflected_hitting_cdf,
    solve_threshold,
)
from .urn import UrnBatch, UrnConfig, simulate_urns

__all__ = [
    "EnsembleConfig",
    "EnsembleSummary",
    "GofReport",
    "ExactGraphLaw",
    "run_ensemble",
    "simulate_batch",
    "ks_compare",
    "ks_two_sample",
    "chi_square_compare",
    "exact_small_graph_law",
    "graph_urn_equivalence",
    "hitting_law_check",
    "failure_flags",
    "binomial_band",
    "martingale_clt_diagnostics",
    "exhaustion_samples_csv",
]

RECORD_KINDS = frozenset({"traces", "exhaustions", "martingale", "scaled"})
_ARM_SALT = 0x9E3779B97F4A7C15


@dataclass(frozen=True)
class EnsembleConfig:
    """Run ``i`` of the ensemble uses stream id ``i`` under ``base_seed``.

    The simulator config's own seed and stream id are ignored.
    """

    runs: int
    base_seed: int
    sim_params: UrnConfig | PercolationConfig
    record: frozenset = frozenset({"exhaustions", "martingale", "scaled"})
    horizon: int | None = None

    def __post_init__(self):
        if int(self.runs) != self.runs or self.runs < 1:
            raise ValueError("runs must be a positive integer")
        if not 0 <= self.base_seed < 2**64:
            raise ValueError("base_seed must be a 64-bit unsigned integer")
        object.__setattr__(self, "record", frozenset(self.record))
        unknown = self.record - RECORD_KINDS
        if unknown:
            raise ValueError(f"unknown record kinds: {sorted(unknown)}")
        if not isinstance(self.sim_params, (UrnConfig, PercolationConfig)):
            raise TypeError("sim_params must be an UrnConfig or PercolationConfig")

    @property
    def model(self) -> str:
        return "urn" if isinstance(self.sim_params, UrnConfig) else "graph"

    @property
    def n(self) -> int:
        """Balls in urn 1, or vertices minus one for the graph."""
        s = self.sim_params
        return s.n if isinstance(s, UrnConfig) else s.n_plus_1 - 1

    @property
    def c(self) -> float:
        return self.n * self.sim_params.p


@dataclass
class EnsembleSummary:
    """Cross-run statistics of an ensemble.

    ``mean_trace``/``var_trace`` are over urn-1 counts (not-visited counts
    for the graph), with finished runs padded at 0; ``padded[k]`` says how
    many runs are padding at step ``k``.  ``failure_fraction`` is the share
    of runs whose first exhaustion comes before ``failure_cutoff`` (scaled
    time), i.e. runs that never reach the giant component.
    """

    model: str
    n: int
    c: float
    runs: int
    mean_trace: list
    var_trace: list
    padded: list
    exhaustion_samples: list
    failure_fraction: float
    failure_cutoff: float
    coverage_failure_fraction: float
    max_jump_sq_mean: float | None
    martingale_mean: list | None = None
    martingale_var: list | None = None
    scaled_mean: list | None = None
    scaled_var: list | None = None
    exhaustion_events: list | None = None
    traces: list | None = field(default=None, repr=False)

    def to_dict(self) -> dict:
        out = {k: v for k, v in self.__dict__.items() if k != "traces"}
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def to_csv(self) -> str:
        """Per-step rows: ``k, mean, var, padded`` plus the T and S moments when recorded."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        extra = [name for name in ("martingale_mean", "martingale_var", "scaled_mean", "scaled_var") if getattr(self, name) is not None]
        w.writerow(["k", "mean", "var", "padded", *extra])
        for k in range(len(self.mean_trace)):
            w.writerow(
                [k, repr(self.mean_trace[k]), repr(self.var_trace[k]), self.padded[k]]
                + [repr(getattr(self, name)[k]) for name in extra]
            )
        return buf.getvalue()


@dataclass
class GofReport:
    statistic_name: str
    statistic: float
    p_value: float
    sample_size: int
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.statistic_name not in ("KS", "chi_square"):
            raise ValueError("statistic_name must be 'KS' or 'chi_square'")

    def to_json(self) -> str:
        return json.dumps(self.__dict__, sort_keys=True)


def _simulate_chunk(model, size_param, p, seed, ids, horizon, keep):
    if model == "urn":
        return simulate_urns(size_param, p, seed, ids, horizon=horizon, keep_traces=keep)
    return simulate_graphs(size_param, p, seed, ids, horizon=horizon, keep_traces=keep)


def _pad_to(arr, length):
    arr = np.asarray(arr)
    if len(arr) >= length:
        return arr
    return np.concatenate([arr, np.zeros(length - len(arr), dtype=arr.dtype)])


def simulate_batch(config: EnsembleConfig, workers: int = 1):
    """Raw per-run results for the whole ensemble, merged in run order.

    Every run's randomness depends only on ``(base_seed, run index)``, and
    the merged step sums are exact integers, so the result does not depend
    on ``workers``.
    """
    model = config.model
    sim = config.sim_params
    size_param = sim.n if model == "urn" else sim.n_plus_1
    keep = "traces" in config.record
    ids = np.arange(config.runs, dtype=np.uint64)
    workers = max(1, int(workers))
    if workers == 1:
        return _simulate_chunk(model, size_param, sim.p, config.base_seed, ids, config.horizon, keep)
    chunks = [c for c in np.array_split(ids, workers) if len(c)]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        parts = list(
            pool.map(
                _simulate_chunk,
                *zip(*[(model, size_param, sim.p, config.base_seed, c, config.horizon, keep) for c in chunks]),
            )
        )
    return _merge(parts)


def _merge(parts):
    first = parts[0]
    if isinstance(first, UrnBatch):
        length = max(len(b.sum_u) for b in parts)
        u_matrix = None
        if first.u_matrix is not None:
            width = max(b.u_matrix.shape[1] for b in parts)
            u_matrix = np.concatenate([np.pad(b.u_matrix, ((0, 0), (0, width - b.u_matrix.shape[1]))) for b in parts])
        return UrnBatch(
            n=first.n,
            p=first.p,
            stream_ids=np.concatenate([b.stream_ids for b in parts]),
            k_end=np.concatenate([b.k_end for b in parts]),
            first_exhaustion=np.concatenate([b.first_exhaustion for b in parts]),
            sum_u=sum(_pad_to(b.sum_u, length) for b in parts),
            sum_u2=sum(_pad_to(b.sum_u2, length) for b in parts),
            running=sum(_pad_to(b.running, length) for b in parts),
            max_jump=np.concatenate([b.max_jump for b in parts]),
            u_matrix=u_matrix,
        )
    length = max(len(b.sum_not_visited) for b in parts)
    columns = None
    if first.columns is not None:
        width = max(b.columns["not_visited"].shape[1] for b in parts)
        columns = {
            name: np.concatenate([np.pad(b.columns[name], ((0, 0), (0, width - b.columns[name].shape[1]))) for b in parts])
            for name in first.columns
        }
    return GraphBatch(
        n_plus_1=first.n_plus_1,
        p=first.p,
        stream_ids=np.concatenate([b.stream_ids for b in parts]),
        k_end=np.concatenate([b.k_end for b in parts]),
        first_exhaustion=np.concatenate([b.first_exhaustion for b in parts]),
        exhaustion_events=[e for b in parts for e in b.exhaustion_events],
        reseed_counts=np.concatenate([b.reseed_counts for b in parts]),
        sum_not_visited=sum(_pad_to(b.sum_not_visited, length) for b in parts),
        sum_not_visited2=sum(_pad_to(b.sum_not_visited2, length) for b in parts),
        running=sum(_pad_to(b.running, length) for b in parts),
        step1_newly_visited=np.concatenate([b.step1_newly_visited for b in parts]),
        columns=columns,
    )


def _moments(sums, sums2, runs):
    mean = [int(s) / runs for s in sums]
    if runs == 1:
        return mean, [0.0] * len(mean)
    var = [(runs * int(s2) - int(s) ** 2) / (runs * (runs - 1)) for s, s2 in zip(sums, sums2)]
    return mean, var


def failure_flags(first_exhaustion, n: int, c: float) -> tuple[np.ndarray, float]:
    """Flag runs whose first component is not the giant one.

    A run fails when its first exhaustion comes before half the threshold
    root (scaled time).  Below the threshold there is no giant component and
    every run fails.  Returns the flags and the cutoff used.
    """
    scaled = np.asarray(first_exhaustion, dtype=float) / n
    if c <= 1:
        return np.ones(len(scaled), dtype=bool), math.inf
    cutoff = solve_threshold(c).alpha_star / 2
    return scaled < cutoff, cutoff


def run_ensemble(config: EnsembleConfig, workers: int = 1) -> EnsembleSummary:
    batch = simulate_batch(config, workers)
    n, c, runs = config.n, config.c, config.runs
    if isinstance(batch, UrnBatch):
        sums, sums2 = batch.sum_u, batch.sum_u2
    else:
        sums, sums2 = batch.sum_not_visited, batch.sum_not_visited2
    mean, var = _moments(sums, sums2, runs)
    padded = [int(runs - r) for r in batch.running]

    known = batch.first_exhaustion >= 0
    first = batch.first_exhaustion[known]
    flags, cutoff = failure_flags(first, n, c)
    summary = EnsembleSummary(
        model=config.model,
        n=n,
        c=c,
        runs=runs,
        mean_trace=mean,
        var_trace=var,
        padded=padded,
        exhaustion_samples=(first / n).tolist() if "exhaustions" in config.record else [],
        failure_fraction=float(flags.mean()) if flags.size else math.nan,
        failure_cutoff=cutoff,
        coverage_failure_fraction=float(np.mean(first <= n)) if first.size else math.nan,
        max_jump_sq_mean=None,
    )

    p = config.sim_params.p
    q = 1.0 - p
    if isinstance(batch, UrnBatch):
        if q > 0:
            summary.max_jump_sq_mean = float(np.mean(batch.max_jump**2))
        if "martingale" in config.record and q > 0:
            k = np.arange(len(mean))
            qk = np.exp(k * math.log(q))
            summary.martingale_mean = ((np.asarray(mean) / qk - n) / math.sqrt(n)).tolist()
            summary.martingale_var = (np.asarray(var) / (n * qk * qk)).tolist()
        if "traces" in config.record:
            summary.traces = [batch.trace(i).u.tolist() for i in range(runs)]
        if "exhaustions" in config.record:
            summary.exhaustion_events = [[int(x)] if x >= 0 else [] for x in batch.first_exhaustion]
    else:
        if "traces" in config.record:
            summary.traces = [batch.trace(i) for i in range(runs)]
        if "exhaustions" in config.record:
            summary.exhaustion_events = [e.tolist() for e in batch.exhaustion_events]
    if "scaled" in config.record:
        summary.scaled_mean = (np.asarray(mean) / n).tolist()
        summary.scaled_var = (np.asarray(var) / n**2).tolist()
    return summary


def ks_compare(samples, cdf) -> GofReport:
    """One-sample two-sided KS test with the asymptotic Kolmogorov p-value."""
    x = np.sort(np.asarray(samples, dtype=float))
    m = x.size
    if m == 0:
        raise ValueError("samples must be non-empty")
    try:
        f = np.asarray(cdf(x), dtype=float)
        if f.shape != x.shape:
            raise TypeError
    except TypeError:
        f = np.array([cdf(v) for v in x], dtype=float)
    i = np.arange(1, m + 1)
    d = max(float(np.max(i / m - f)), float(np.max(f - (i - 1) / m)), 0.0)
    p = float(special.kolmogorov(math.sqrt(m) * d))
    return GofReport("KS", d, min(max(p, 0.0), 1.0), m)


def ks_two_sample(a, b) -> GofReport:
    """Two-sample KS distance; ties are handled by evaluating both ECDFs on the pooled support."""
    a = np.sort(np.asarray(a, dtype=float))
    b = np.sort(np.asarray(b, dtype=float))
    if a.size == 0 or b.size == 0:
        raise ValueError("both samples must be non-empty")
    grid = np.concatenate([a, b])
    fa = np.searchsorted(a, grid, side="right") / a.size
    fb = np.searchsorted(b, grid, side="right") / b.size
    d = float(np.max(np.abs(fa - fb)))
    en = a.size * b.size / (a.size + b.size)
    p = float(special.kolmogorov(math.sqrt(en) * d))
    return GofReport("KS", d, min(max(p, 0.0), 1.0), int(a.size + b.size), {"n_a": int(a.size), "n_b": int(b.size)})


def chi_square_compare(observed, probs, min_expected: float = 5.0) -> GofReport:
    """Pearson goodness of fit; adjacent bins with small expected counts are pooled."""
    obs = np.asarray(observed, dtype=float)
    probs = np.asarray(probs, dtype=float)
    if obs.shape != probs.shape:
        raise ValueError("observed and probs must align")
    total = obs.sum()
    if total <= 0:
        raise ValueError("no observations")
    exp = probs / probs.sum() * total
    pooled_o, pooled_e = [], []
    acc_o = acc_e = 0.0
    for o, e in zip(obs, exp):
        acc_o += o
        acc_e += e
        if acc_e >= min_expected:
            pooled_o.append(acc_o)
            pooled_e.append(acc_e)
            acc_o = acc_e = 0.0
    if acc_e > 0 or acc_o > 0:
        if pooled_e:
            pooled_o[-1] += acc_o
            pooled_e[-1] += acc_e
        else:
            pooled_o.append(acc_o)
            pooled_e.append(acc_e)
    po, pe = np.array(pooled_o), np.array(pooled_e)
    dof = len(po) - 1
    if dof < 1:
        return GofReport("chi_square", 0.0, 1.0, int(total), {"dof": 0})
    stat = float(np.sum((po - pe) ** 2 / pe))
    return GofReport("chi_square", stat, float(stats.chi2.sf(stat, dof)), int(total), {"dof": dof})


@dataclass(frozen=True)
class ExactGraphLaw:
    """Exact laws for the labelled algorithm on a tiny explicit graph.

    ``first_exhaustion[k]`` is the probability that the first component is
    exhausted at step ``k`` (index 0 unused); ``exhaustion_count[j]`` that
    ``j`` components are exhausted before the terminal step.
    """

    n_plus_1: int
    p: float
    step1_newly_visited: np.ndarray
    first_exhaustion: np.ndarray
    exhaustion_count: np.ndarray
    expected_reseed_iterations: float


def _popcount(x: int) -> int:
    return bin(x).count("1")


@lru_cache(maxsize=64)
def _exact_law(num: int, p: float) -> ExactGraphLaw:
    q = 1.0 - p
    full = (1 << num) - 1
    pairs = list(itertools.combinations(range(num), 2))
    step1 = np.zeros(num)
    first = np.zeros(num + 1)
    count = np.zeros(num + 1)
    reseed_mean = 0.0

    def subsets(mask):
        sub = mask
        while True:
            yield sub
            if sub == 0:
                return
            sub = (sub - 1) & mask

    for edges in itertools.product((0, 1), repeat=len(pairs)):
        m_edges = sum(edges)
        weight = p**m_edges * q ** (len(pairs) - m_edges)
        if weight == 0.0:
            continue
        adj = [0] * num
        for (i, j), e in zip(pairs, edges):
            if e:
                adj[i] |= 1 << j
                adj[j] |= 1 << i

        memo = {}

        def walk(done, active, have_first):
            # returns ({(first_step, exhaustions): prob}, expected reseed iterations)
            key = (done, active, have_first)
            if key in memo:
                return memo[key]
            if done == full:
                res = ({(0, 0): 1.0}, 0.0)
                memo[key] = res
                return res
            fresh = full & ~done & ~active
            dist, retries = {}, 0.0
            if active:
                members = [v for v in range(num) if active >> v & 1]
                share = 1.0 / len(members)
                for v in members:
                    nd = done | (1 << v)
                    na = (active & ~(1 << v)) | (adj[v] & fresh)
                    nfresh = full & ~nd & ~na
                    event = na == 0 and nfresh != 0
                    terminal = nd == full
                    stamp = 0
                    if not have_first and (event or terminal):
                        stamp = _popcount(nd)
                    sub, r = walk(nd, na, have_first or event or terminal)
                    for (f, cnt), pr in sub.items():
                        key2 = (stamp or f, cnt + int(event))
                        dist[key2] = dist.get(key2, 0.0) + share * pr
                    retries += share * r
            else:
                m = _popcount(fresh)
                success = 1.0 - q**m
                retries += 1.0 / success
                for sub_mask in subsets(fresh):
                    b = _popcount(sub_mask)
                    if b == 0:
                        continue
                    pr_b = p**b * q ** (m - b) / success
                    sub, r = walk(done, sub_mask, have_first)
                    for key2, pr in sub.items():
                        dist[key2] = dist.get(key2, 0.0) + pr_b * pr
                    retries += pr_b * r
            memo[key] = (dist, retries)
            return memo[key]

        for s in range(num):
            step1[_popcount(adj[s])] += weight / num
            dist, r = walk(0, 1 << s, False)
            reseed_mean += weight / num * r
            for (f, cnt), pr in dist.items():
                first[f] += weight / num * pr
                count[cnt] += weight / num * pr

    return ExactGraphLaw(
        n_plus_1=num,
        p=p,
        step1_newly_visited=step1,
        first_exhaustion=first,
        exhaustion_count=count[:num],
        expected_reseed_iterations=reseed_mean,
    )


def exact_small_graph_law(n_plus_1: int, p: float) -> ExactGraphLaw:
    """Enumerate every edge set of a graph on ``n_plus_1 <= 5`` vertices.

    For each graph the labelled algorithm is solved exactly as a Markov
    chain over label sets, with reseed retries summed geometrically.
    """
    if int(n_plus_1) != n_plus_1 or not 1 <= n_plus_1 <= 5:
        raise ValueError("exact enumeration supports 1 <= n_plus_1 <= 5")
    if not 0.0 <= p <= 1.0:
        raise ValueError("p must lie in [0, 1]")
    if p == 0.0 and n_plus_1 > 1:
        raise ValueError("p = 0 never reseeds")
    return _exact_law(int(n_plus_1), float(p))


def _first_exhaustions(model, n, c, runs, seed, workers, horizon=None):
    if model == "urn":
        sim = UrnConfig.from_c(n, c)
    else:
        sim = PercolationConfig.from_c(n, c)
    cfg = EnsembleConfig(runs, seed, sim, record=frozenset({"exhaustions"}), horizon=horizon or n + 2)
    batch = simulate_batch(cfg, workers)
    return batch.first_exhaustion / n


def graph_urn_equivalence(n: int, c: float, runs: int, seed: int = 0, urn_c: float | None = None, workers: int = 1) -> GofReport:
    """Two-sample KS between scaled first-exhaustion times of graph and urn arms.

    The arms use different keys, so they are independent samples.
    ``urn_c`` mismatches the urn arm on purpose (power checks).
    """
    if n < 10 or runs < 1000:
        raise ValueError("needs n >= 10 and runs >= 1000")
    urn_c = c if urn_c is None else urn_c
    graph_t = _first_exhaustions("graph", n, c, runs, seed, workers)
    urn_t = _first_exhaustions("urn", n, urn_c, runs, seed ^ _ARM_SALT, workers)
    report = ks_two_sample(graph_t, urn_t)
    report.metadata.update({"n": n, "c_graph": c, "c_urn": urn_c, "runs": runs, "seed": seed})
    return report


def hitting_law_check(c: float, n: int, runs: int, seed: int = 0, reflected: bool = False, workers: int = 1) -> GofReport:
    """KS test of giant-component exhaustion times against the Gaussian crossing law.

    Runs whose first component is small (exhaustion before half the threshold
    root) are dropped first.  ``reflected=True`` tests the law centred at
    ``log(A)/c`` instead.  The metadata records the empirical moments and
    how the statistic moves with the cutoff.
    """
    if not c > 1:
        raise ValueError("c must exceed 1")
    law = giant_exhaustion_law(c, n)
    params = LimitParams(n, c)
    times = _first_exhaustions("urn", n, c, runs, seed, workers)
    cdf_fn = reflected_hitting_cdf if reflected else hitting_cdf

    def cdf(t):
        return cdf_fn(t, law, params)

    cutoff = law.alpha0 / 2
    giant = times[times > cutoff]
    if giant.size == 0:
        raise RuntimeError("no run reached the giant component")
    report = ks_compare(giant, cdf)
    sensitivity = {}
    for frac in (1 / 3, 2 / 3):
        sel = times[times > frac * law.alpha0]
        sensitivity[f"{frac:.3f}"] = {"kept": int(sel.size), "statistic": ks_compare(sel, cdf).statistic}
    report.metadata.update(
        {
            "c": c,
            "n": n,
            "runs": runs,
            "seed": seed,
            "law": "reflected" if reflected else "centred",
            "A": law.level_A,
            "alpha0": law.alpha0,
            "sd": law.sd,
            "cutoff": cutoff,
            "kept": int(giant.size),
            "empirical_mean": float(giant.mean()),
            "empirical_sd": float(giant.std(ddof=1)) if giant.size > 1 else 0.0,
            "cutoff_sensitivity": sensitivity,
        }
    )
    return report


def binomial_band(rate: float, draws: int, z: float = 1.96) -> tuple[float, float]:
    """Normal-approximation band for the share seen in ``draws`` Bernoulli(rate) trials."""
    half = z * math.sqrt(rate * (1.0 - rate) / draws)
    return max(0.0, rate - half), min(1.0, rate + half)


def martingale_clt_diagnostics(n: int, c: float, runs: int, seed: int = 0, workers: int = 1) -> dict:
    """Statistics for the three martingale-FCLT conditions of the T-process on ``[0, n]``."""
    cfg = EnsembleConfig(runs, seed, UrnConfig.from_c(n, c), record=frozenset({"martingale", "scaled"}), horizon=n)
    summary = run_ensemble(cfg, workers)
    q = 1.0 - c / n
    return {
        "n": n,
        "c": c,
        "runs": runs,
        "seed": seed,
        "t0_mean": summary.martingale_mean[0],
        "t0_var": summary.martingale_var[0],
        "var_t_at_n": summary.martingale_var[n],
        "var_t_target": math.expm1(c),
        "var_scaled_at_half": summary.scaled_var[n // 2] * n,
        "var_scaled_target": math.exp(-c / 2) * (1 - math.exp(-c / 2)),
        "max_jump_sq_mean": summary.max_jump_sq_mean,
        "jump_envelope": 5 * (c * q) ** 2 / n,
    }


def exhaustion_samples_csv(first_exhaustion, n: int, c: float) -> str:
    """Rows ``run_index, scaled_time, is_giant`` for the first exhaustion of each run."""
    times = np.asarray(first_exhaustion, dtype=float) / n
    fails, _ = failure_flags(np.asarray(first_exhaustion), n, c)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["run_index", "scaled_time", "is_giant"])
    for i, (t, f) in enumerate(zip(times, fails)):
        w.writerow([i, repr(float(t)), int(not f)])
    return buf.getvalue()
