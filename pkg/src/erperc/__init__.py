"""Directed percolation on Erdős–Rényi graphs, its urn equivalent, and their limit laws."""

from .graph import PercolationConfig, PercolationTrace, VertexLabel, exhaustion_steps, percolate, simulate_graphs
from .kernel import RngStream, VarianceSchedule, binomial_draw, gaussian_draw, sample_stretched_bm
from .limits import (
    HittingLaw,
    LimitParams,
    ThresholdSolution,
    giant_exhaustion_law,
    hitting_density,
    hitting_law,
    limit_variance,
    ode_limit,
    sample_wlimit_path,
    solve_threshold,
)
from .urn import UrnConfig, UrnTrace, martingale_transform, scale_trace, simulate_urns, urn_run
from .validation import (
    EnsembleConfig,
    EnsembleSummary,
    GofReport,
    exact_small_graph_law,
    graph_urn_equivalence,
    hitting_law_check,
    ks_compare,
    run_ensemble,
)

__version__ = "0.1.0"
