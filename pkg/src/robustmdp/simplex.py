"""Finite probability distributions, KL divergence, and simplex grids.

Everything else in the package is built on the small value types here:
probability vectors over a finite support, the divergence between them,
and uniform lattices over the strict interior of the simplex.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

import numpy as np

_SUM_TOL = 1e-12


class InfiniteDivergenceError(ValueError):
    """KL divergence is infinite: q puts mass where p has none."""


class EmptyGridError(ValueError):
    """No strictly interior lattice point exists for (dim, increment)."""


@dataclass(frozen=True, eq=False)
class Distribution:
    """Probability vector over a finite support.

    Weights must be non-negative and sum to one within 1e-12. Instances
    compare by identity, which callers rely on when asserting that one
    object is shared (e.g. a single true law across states).
    """

    probs: np.ndarray

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=float)
        if probs.ndim != 1 or probs.size == 0:
            raise ValueError("probs must be a non-empty 1-D array")
        if np.any(probs < 0):
            raise ValueError(f"negative weight in {probs!r}")
        total = probs.sum()
        if abs(total - 1.0) > _SUM_TOL:
            raise ValueError(f"weights sum to {total!r}, not 1")
        probs.setflags(write=False)
        object.__setattr__(self, "probs", probs)

    @property
    def support_size(self) -> int:
        return self.probs.size

    def restricted(self) -> tuple[np.ndarray, "Distribution"]:
        """Indices with positive weight and the distribution on them."""
        idx = np.flatnonzero(self.probs > 0)
        return idx, Distribution(self.probs[idx])


@dataclass(frozen=True, eq=False)
class SimplexGrid:
    """Uniform lattice over the strict interior of the simplex.

    Every point has all weights >= increment and weights that are exact
    integer multiples of the increment.
    """

    increment: float
    points: tuple[Distribution, ...]

    @property
    def dim(self) -> int:
        return self.points[0].support_size


def kl_divergence(q: Distribution, p: Distribution) -> float:
    """Kullback-Leibler divergence sum_i q_i ln(q_i / p_i).

    Uses the convention 0*ln(0/p) = 0. Raises InfiniteDivergenceError
    when q puts positive mass on an atom where p has none.
    """
    if q.support_size != p.support_size:
        raise ValueError(
            f"support sizes differ: {q.support_size} vs {p.support_size}"
        )
    qp, pp = q.probs, p.probs
    bad = (qp > 0) & (pp == 0)
    if np.any(bad):
        raise InfiniteDivergenceError(
            f"q has mass {qp[bad]} on atoms with zero reference weight"
        )
    pos = qp > 0
    val = float(np.sum(qp[pos] * np.log(qp[pos] / pp[pos])))
    # tiny negative values are rounding noise around q == p
    return max(val, 0.0)


def build_simplex_grid(dim: int, increment: float) -> SimplexGrid:
    """Enumerate all interior probability vectors on a uniform lattice.

    The grid consists of every vector whose weights are positive integer
    multiples of `increment` summing to one. Enumeration works on exact
    integer compositions, so no floating-point drift accumulates.
    """
    if dim < 2:
        raise ValueError("dim must be >= 2")
    if not 0.0 < increment < 1.0:
        raise ValueError(f"increment must lie in (0, 1), got {increment}")
    n_steps = round(1.0 / increment)
    if abs(n_steps * increment - 1.0) > 1e-9:
        raise ValueError(f"increment {increment} does not divide 1")
    if n_steps < dim:
        raise EmptyGridError(
            f"no interior point: 1/{increment} allows at most "
            f"{n_steps} positive parts, need {dim}"
        )
    points = []
    # positive compositions of n_steps into dim parts via bar placement
    for bars in combinations(range(1, n_steps), dim - 1):
        cuts = (0,) + bars + (n_steps,)
        parts = np.diff(cuts)
        points.append(Distribution(parts / n_steps))
    return SimplexGrid(increment=increment, points=tuple(points))


def multinomial_sample(p: Distribution, n: int, seed: int) -> np.ndarray:
    """Draw counts of n iid samples from p, deterministic given seed."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    return rng.multinomial(n, p.probs)
