"""Sampling designs for both asymptotic regimes and exact GP simulation.

Two design generators:

* ``gen_increasing`` builds a perturbed regular lattice whose minimum
  pairwise separation is at least a prescribed delta by construction
  (lattice spacing delta / (1 - 2 perturb), coordinatewise jitter of at
  most perturb * spacing).
* ``gen_fixed`` fills a fixed compact box, either with i.i.d. uniform
  points or a regular grid, so separations shrink as n grows.

Randomness contract: every generator is a pure function of its arguments
and a :class:`SeedSpec`.  A SeedSpec maps to a ``numpy.random.Generator``
via ``PCG64`` seeded with ``SeedSequence((master_seed, replicate_index))``
(SeedSequence's documented integer-entropy mixing).  Normal variates come
from ``Generator.standard_normal`` (ziggurat).  Streams are bit-stable for
a fixed numpy version; reports that must be byte-reproducible should pin
numpy.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from enum import Enum
from functools import cached_property
from itertools import product
from typing import TYPE_CHECKING

import numpy as np
from scipy.spatial.distance import cdist

if TYPE_CHECKING:
    from .gausslin import CholFactor

# Construction guarantees min separation >= delta exactly in reals; allow
# one part in 1e12 of float slack when validating.
_SEPARATION_SLACK = 1.0 - 1e-12


class Regime(str, Enum):
    INCREASING = "increasing"
    FIXED = "fixed"


class FixedDesignMode(str, Enum):
    UNIFORM = "uniform"
    GRID = "grid"


@dataclass(frozen=True)
class SeedSpec:
    """Deterministic stream handle: (master_seed, replicate_index) -> Generator."""

    master_seed: int
    replicate_index: int

    def __post_init__(self):
        if not 0 <= self.master_seed < 2**64:
            raise ValueError("master_seed must be a 64-bit unsigned integer")
        if self.replicate_index < 0:
            raise ValueError("replicate_index must be >= 0")

    def rng(self) -> np.random.Generator:
        ss = np.random.SeedSequence((self.master_seed, self.replicate_index))
        return np.random.Generator(np.random.PCG64(ss))


@dataclass(frozen=True, eq=False)
class Design:
    """Ordered, pairwise-distinct observation points with a regime tag."""

    points: np.ndarray  # (n, d) float64
    regime: Regime
    delta: float | None = None  # increasing-domain separation target
    box: np.ndarray | None = None  # (d, 2) fixed-domain bounds

    def __post_init__(self):
        pts = np.ascontiguousarray(np.atleast_2d(np.asarray(self.points, dtype=float)))
        if pts.ndim != 2 or pts.shape[1] not in (1, 2, 3):
            raise ValueError(f"points must be (n, d) with d in {{1,2,3}}, got shape {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise ValueError("design points must be finite")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "regime", Regime(self.regime))

        if self.regime is Regime.INCREASING:
            if self.delta is None or self.delta <= 0:
                raise ValueError("increasing-domain designs require delta > 0")
            if self.n >= 2 and self.min_sep < self.delta * _SEPARATION_SLACK:
                raise ValueError(
                    f"minimum separation {self.min_sep:.6g} violates delta={self.delta:.6g}"
                )
        else:
            if self.box is None:
                raise ValueError("fixed-domain designs require a bounding box")
            box = np.asarray(self.box, dtype=float)
            if box.shape != (pts.shape[1], 2) or np.any(box[:, 0] >= box[:, 1]):
                raise ValueError(f"box must be (d, 2) with lo < hi per axis, got {box!r}")
            object.__setattr__(self, "box", box)
            if np.any(pts < box[:, 0]) or np.any(pts > box[:, 1]):
                raise ValueError("fixed-domain design points must lie inside the box")
        if self.n >= 2 and self.min_sep <= 0.0:
            raise ValueError("design points must be pairwise distinct")

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def d(self) -> int:
        return self.points.shape[1]

    @cached_property
    def dists(self) -> np.ndarray:
        """Pairwise Euclidean distance matrix, symmetrized."""
        dm = cdist(self.points, self.points)
        return 0.5 * (dm + dm.T)

    @cached_property
    def min_sep(self) -> float:
        n = self.n
        if n < 2:
            raise ValueError("min separation needs at least two points")
        dm = self.dists + np.diag(np.full(n, np.inf))
        return float(dm.min())

    def prefix(self, m: int) -> "Design":
        """The design made of the first m points (nested-design diagnostics)."""
        if not 1 <= m <= self.n:
            raise ValueError(f"prefix length must be in [1, {self.n}], got {m}")
        return Design(points=self.points[:m].copy(), regime=self.regime, delta=self.delta, box=self.box)


def _grid_side(n: int, d: int) -> int:
    m = max(1, round(n ** (1.0 / d)))
    while m**d < n:
        m += 1
    while m > 1 and (m - 1) ** d >= n:
        m -= 1
    return m


def gen_increasing(n: int, d: int, delta: float, perturb: float, seed: SeedSpec) -> Design:
    """Perturbed lattice with guaranteed minimum separation >= delta.

    Lattice spacing is delta / (1 - 2 perturb); each coordinate is jittered
    independently by Uniform(-perturb * spacing, +perturb * spacing), so any
    two lattice sites still differ by at least delta in some coordinate.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if d not in (1, 2, 3):
        raise ValueError(f"dimension must be 1, 2 or 3, got {d!r}")
    if delta <= 0:
        raise ValueError("delta must be > 0")
    if not 0.0 <= perturb <= 0.4:
        raise ValueError("perturb must lie in [0, 0.4]")

    spacing = delta / (1.0 - 2.0 * perturb)
    side = _grid_side(n, d)
    lattice = np.array(list(product(range(side), repeat=d))[:n], dtype=float) * spacing
    jitter = seed.rng().uniform(-perturb * spacing, perturb * spacing, size=(n, d))
    return Design(points=lattice + jitter, regime=Regime.INCREASING, delta=delta)


def gen_fixed(n: int, d: int, box, mode: FixedDesignMode, seed: SeedSpec) -> Design:
    """n points filling a compact box: i.i.d. uniform or a regular grid."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if d not in (1, 2, 3):
        raise ValueError(f"dimension must be 1, 2 or 3, got {d!r}")
    box = np.asarray(box, dtype=float).reshape(d, 2)
    mode = FixedDesignMode(mode)

    if mode is FixedDesignMode.UNIFORM:
        pts = seed.rng().uniform(low=box[:, 0], high=box[:, 1], size=(n, d))
    else:
        side = _grid_side(n, d)
        axes = [np.linspace(box[i, 0], box[i, 1], side) for i in range(d)]
        pts = np.array(list(product(*axes))[:n], dtype=float)
    return Design(points=pts, regime=Regime.FIXED, box=box)


def min_separation(design: Design) -> float:
    """Smallest pairwise distance; requires at least two points."""
    if design.n < 2:
        raise ValueError("min_separation requires n >= 2")
    return design.min_sep


def sample_gp(factor: "CholFactor", seed: SeedSpec) -> np.ndarray:
    """Draw y = L z with z i.i.d. standard normal from the seeded stream.

    Exact zero-mean Gaussian with covariance L L^T (the factored matrix,
    including any recorded jitter).
    """
    z = seed.rng().standard_normal(factor.n)
    return factor.lower @ z


def write_design_csv(design: Design, path) -> None:
    """Serialize points, one per row, header ``x1[,x2[,x3]]``."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"x{i + 1}" for i in range(design.d)])
        for row in design.points:
            writer.writerow([repr(float(v)) for v in row])


def read_points_csv(path) -> np.ndarray:
    """Read back a design CSV into an (n, d) array."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        d = len(header)
        if header != [f"x{i + 1}" for i in range(d)]:
            raise ValueError(f"unexpected design header {header!r}")
        pts = [[float(v) for v in row] for row in reader if row]
    arr = np.asarray(pts, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != d:
        raise ValueError("malformed design CSV")
    return arr
