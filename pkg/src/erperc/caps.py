"""Hard step caps shared by the graph and urn simulators."""

import math

# multiples of the mean reseed / last-ball waiting time 1/p allowed before giving up
RETRY_SLACK = 40


class StepCapExceeded(RuntimeError):
    """A run did not terminate within its hard step cap."""


def step_cap(size: int, p: float) -> int:
    """Upper bound on while-loop iterations for ``size`` vertices or balls.

    Each of at most ``size`` transmissions may be followed by a wait whose mean
    is at most ``1/p``; the cap allows ``RETRY_SLACK`` times that.
    """
    if p <= 0:
        raise ValueError("p must be positive")
    return 2 * size * (1 + math.ceil(RETRY_SLACK / p))
