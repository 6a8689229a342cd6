"""Closed-form limit objects for the rescaled urn process.

``v(alpha) = exp(-c alpha)`` is the deterministic limit of ``U(alpha n)/n``;
the fluctuation around it is ``n**-0.5 B(v (1 - v))``.  The level-crossing
time of that approximation is Gaussian, and the first component's
exhaustion is located by the root of ``exp(-c alpha) = 1 - alpha``.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy import special

from .kernel import RngStream, sample_stretched_bm

__all__ = [
    "LimitParams",
    "HittingLaw",
    "ThresholdSolution",
    "ode_limit",
    "limit_variance",
    "sample_wlimit_path",
    "hitting_law",
    "hitting_density",
    "hitting_cdf",
    "reflected_hitting_density",
    "reflected_hitting_cdf",
    "solve_threshold",
    "giant_exhaustion_law",
]


@dataclass(frozen=True)
class LimitParams:
    n: int
    c: float

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise ValueError("n must be a positive integer")
        if not self.c > 0:
            raise ValueError("c must be positive")

    @property
    def p(self) -> float:
        return self.c / self.n


@dataclass(frozen=True)
class HittingLaw:
    """Gaussian law of the first time the process falls to ``level_A``."""

    level_A: float
    alpha0: float
    sd: float

    def to_json(self, params: LimitParams) -> str:
        return json.dumps(
            {"c": params.c, "n": params.n, "A": self.level_A, "alpha0": self.alpha0, "sd": self.sd},
            sort_keys=True,
        )


@dataclass(frozen=True)
class ThresholdSolution:
    c: float
    alpha_star: float
    subcritical: bool
    residual: float

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def ode_limit(alpha, params: LimitParams):
    alpha = np.asarray(alpha, dtype=float)
    if np.any(alpha < 0):
        raise ValueError("alpha must be non-negative")
    out = np.exp(-params.c * alpha)
    return float(out) if out.ndim == 0 else out


def limit_variance(alpha, params: LimitParams, mode: str = "s"):
    """Variance argument of the Brownian correction.

    ``mode="s"`` gives ``v (1 - v)`` for the rescaled urn count;
    ``mode="t"`` gives ``exp(c alpha) - 1`` for the T-process.
    """
    alpha = np.asarray(alpha, dtype=float)
    if np.any(alpha < 0):
        raise ValueError("alpha must be non-negative")
    if mode == "s":
        v = np.exp(-params.c * alpha)
        out = v * (1.0 - v)
    elif mode == "t":
        out = np.expm1(params.c * alpha)
    else:
        raise ValueError("mode must be 's' or 't'")
    return float(out) if out.ndim == 0 else out


def sample_wlimit_path(params: LimitParams, grid, rng: RngStream, size: int | None = None) -> np.ndarray:
    """Sample ``v(alpha) + n**-0.5 B(v(alpha)(1 - v(alpha)))`` on ``grid``.

    The time change rises until ``v = 1/2`` and falls afterwards, so the
    falling branch reuses the same Brownian path at times it already passed.
    The Brownian motion is drawn once at the sorted distinct variance
    values and read back in grid order.
    """
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size == 0 or grid[0] != 0.0:
        raise ValueError("grid must be a 1-d sequence starting at 0")
    if np.any(np.diff(grid) <= 0):
        raise ValueError("grid must be strictly increasing")
    v = np.exp(-params.c * grid)
    h = v * (1.0 - v)
    h[0] = 0.0
    times, where = np.unique(h, return_inverse=True)
    if times[0] != 0.0:
        times = np.concatenate([[0.0], times])
        where = where + 1
    bm = sample_stretched_bm(tuple(times), rng, size=1 if size is None else size)
    paths = v + bm[:, where] / math.sqrt(params.n)
    return paths[0] if size is None else paths


def hitting_law(level_A: float, params: LimitParams) -> HittingLaw:
    if not 0.0 < level_A < 1.0:
        raise ValueError("level_A must lie in (0, 1)")
    alpha0 = -math.log(level_A) / params.c
    sd = math.sqrt((1.0 - level_A) / (params.n * level_A)) / params.c
    return HittingLaw(level_A, alpha0, sd)


def _check_law(law: HittingLaw):
    if not 0.0 < law.level_A < 1.0:
        raise ValueError("level_A must lie in (0, 1)")


def hitting_density(t, law: HittingLaw, params: LimitParams):
    """``c k phi(k (t c + log A))`` with ``k = sqrt(n A / (1 - A))``.

    This is the Normal(alpha0, sd**2) density, centred at ``-log(A)/c``.
    """
    _check_law(law)
    A = law.level_A
    scale = math.sqrt(params.n * A / (1.0 - A))
    z = scale * (np.asarray(t, dtype=float) * params.c + math.log(A))
    out = params.c * scale * np.exp(-0.5 * z * z) / math.sqrt(2 * math.pi)
    return float(out) if out.ndim == 0 else out


def hitting_cdf(t, law: HittingLaw, params: LimitParams):
    _check_law(law)
    A = law.level_A
    scale = math.sqrt(params.n * A / (1.0 - A))
    out = special.ndtr(scale * (np.asarray(t, dtype=float) * params.c + math.log(A)))
    return float(out) if np.ndim(out) == 0 else out


def reflected_hitting_density(t, law: HittingLaw, params: LimitParams):
    """The same density with argument ``t c - log A``, centred at ``log(A)/c < 0``."""
    _check_law(law)
    A = law.level_A
    scale = math.sqrt(params.n * A / (1.0 - A))
    z = scale * (np.asarray(t, dtype=float) * params.c - math.log(A))
    out = params.c * scale * np.exp(-0.5 * z * z) / math.sqrt(2 * math.pi)
    return float(out) if out.ndim == 0 else out


def reflected_hitting_cdf(t, law: HittingLaw, params: LimitParams):
    _check_law(law)
    A = law.level_A
    scale = math.sqrt(params.n * A / (1.0 - A))
    out = special.ndtr(scale * (np.asarray(t, dtype=float) * params.c - math.log(A)))
    return float(out) if np.ndim(out) == 0 else out


_BRACKET = 1e-12
_POLISH_STEPS = 5


def _crossing(alpha: float, c: float) -> float:
    # exp(-c a) - (1 - a), written to keep precision near a = 0
    return math.expm1(-c * alpha) + alpha


def solve_threshold(c: float, tol: float = 1e-12) -> ThresholdSolution:
    """Largest root of ``exp(-c alpha) = 1 - alpha`` on ``[0, 1]``.

    Zero is the only root for ``c <= 1``.  Otherwise the root in ``(0, 1)``
    is bracketed by bisection and polished with at most five Newton steps
    that are kept inside the bracket.
    """
    if not c > 0:
        raise ValueError("c must be positive")
    if not tol > 0:
        raise ValueError("tol must be positive")
    if c <= 1.0:
        return ThresholdSolution(c=c, alpha_star=0.0, subcritical=True, residual=0.0)

    lo, hi = _BRACKET, 1.0 - _BRACKET
    g_lo, g_hi = _crossing(lo, c), _crossing(hi, c)
    if g_hi <= 0:
        # large c puts the root within exp(-c) of 1, past the inner bracket
        hi = 1.0
        g_hi = _crossing(hi, c)
        if g_hi <= 0:
            # exp(-c) is below double resolution at 1
            alpha = math.nextafter(1.0, 0.0)
            residual = abs(math.exp(-c * alpha) - (1.0 - alpha))
            return ThresholdSolution(c=c, alpha_star=alpha, subcritical=False, residual=residual)
    if not (g_lo < 0 < g_hi):
        raise ArithmeticError(f"crossing not bracketed for c={c}")
    while hi - lo > 1e-15 * max(1.0, hi):
        mid = 0.5 * (lo + hi)
        g = _crossing(mid, c)
        if g == 0:
            lo = hi = mid
            break
        if g < 0:
            lo = mid
        else:
            hi = mid
    alpha = 0.5 * (lo + hi)
    for _ in range(_POLISH_STEPS):
        g = _crossing(alpha, c)
        slope = 1.0 - c * math.exp(-c * alpha)
        if g == 0 or slope == 0:
            break
        step = alpha - g / slope
        if not lo <= step <= hi:
            break
        alpha = step
    residual = abs(math.exp(-c * alpha) - (1.0 - alpha))
    if residual > tol:
        raise ArithmeticError(f"residual {residual:.3g} above tol {tol:.3g} for c={c}")
    return ThresholdSolution(c=c, alpha_star=alpha, subcritical=False, residual=residual)


def giant_exhaustion_law(c: float, n: int) -> HittingLaw:
    """Law of the scaled step at which the giant component is exhausted.

    The centre is the threshold root itself and ``A = exp(-c alpha_star)``.
    """
    if not c > 1:
        raise ValueError("a giant component needs c > 1")
    sol = solve_threshold(c)
    params = LimitParams(n, c)
    A = math.exp(-c * sol.alpha_star)
    sd = math.sqrt((1.0 - A) / (params.n * A)) / c
    return HittingLaw(A, sol.alpha_star, sd)
