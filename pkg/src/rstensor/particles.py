"""Particle systems in a cubic box: data model, file I/O, generators, snapping.

Conventions
-----------
The computational box is ``[-b, b]^3``.  A grid with ``n`` points per axis
(``n`` even) places points at integer multiples of the mesh size
``h = 2b/n``::

    x_i = -b + i*h = (i - n/2)*h,   i = 0, ..., n-1

so the origin is the grid point with index ``n/2`` on every axis and
differences of grid positions are again integer multiples of ``h``.  This
alignment is what makes shift-and-windowing of a doubled reference tensor a
pure integer slicing operation.

All random generation uses NumPy's ``default_rng`` (PCG64), so results are
bit-reproducible for a fixed seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import pdist

from .errors import (
    DomainError,
    PackingError,
    ParseError,
    ResolutionError,
)

_HEADER_PREFIX = "# rs-particles v1"


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Box3:
    """Cubic box ``[-b, b]^3`` given by its half width ``b``."""

    half_width: float

    def __post_init__(self):
        b = float(self.half_width)
        if not (math.isfinite(b) and b > 0):
            raise DomainError(f"box half width must be positive, got {self.half_width}")
        object.__setattr__(self, "half_width", b)

    def contains(self, points: np.ndarray) -> np.ndarray:
        """Strict interior test, one boolean per point."""
        points = np.atleast_2d(points)
        return np.all(np.abs(points) < self.half_width, axis=1)


@dataclass(frozen=True)
class Grid3:
    """Uniform ``n x n x n`` grid of points on a cubic box.

    The mesh size ``h = 2b/n`` is always derived from ``(b, n)`` and never
    stored separately.  The origin sits at index ``n/2`` on every axis.
    """

    n: int
    box: Box3

    def __post_init__(self):
        if self.n < 2 or self.n % 2 != 0:
            raise DomainError(f"grid size must be a positive even integer, got {self.n}")

    @property
    def h(self) -> float:
        return 2.0 * self.box.half_width / self.n

    @property
    def origin_index(self) -> int:
        return self.n // 2

    def coords(self) -> np.ndarray:
        """Axis coordinates ``(i - n/2)*h`` for ``i = 0..n-1``."""
        return (np.arange(self.n) - self.n // 2) * self.h

    def position(self, indices) -> np.ndarray:
        """Cartesian position(s) of integer grid indices."""
        return (np.asarray(indices, dtype=np.float64) - self.n // 2) * self.h

    def doubled(self) -> "Grid3":
        """The accompanying ``2n`` grid on the box of doubled size.

        Its points are the integer multiples of the same ``h`` covering
        ``[-2b, 2b)``, with the origin at index ``n``.
        """
        return Grid3(2 * self.n, Box3(2.0 * self.box.half_width))


@dataclass(frozen=True)
class ParticleSystem:
    """Immutable set of charged particles strictly inside a box."""

    positions: np.ndarray
    charges: np.ndarray
    box: Box3

    def __post_init__(self):
        pos = _readonly(np.asarray(self.positions, dtype=np.float64))
        chg = _readonly(np.asarray(self.charges, dtype=np.float64))
        if pos.ndim != 2 or pos.shape[1] != 3:
            raise DomainError(f"positions must have shape (N, 3), got {pos.shape}")
        if chg.shape != (pos.shape[0],):
            raise DomainError("charges must be a vector with one entry per particle")
        if pos.shape[0] < 1:
            raise DomainError("a particle system holds at least one particle")
        if not np.all(self.box.contains(pos)):
            bad = int(np.nonzero(~self.box.contains(pos))[0][0])
            raise DomainError(
                f"particle {bad} at {pos[bad]} is not strictly inside the box "
                f"[-{self.box.half_width}, {self.box.half_width}]^3"
            )
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "charges", chg)

    @property
    def count(self) -> int:
        return self.positions.shape[0]


@dataclass(frozen=True)
class IndexedParticleSystem:
    """A particle system whose positions coincide with grid points.

    ``indices`` holds one integer triple per particle with entries in
    ``[0, n)``; the base system's positions equal ``grid.position(indices)``
    exactly, so re-snapping is the identity.
    """

    base: ParticleSystem
    grid: Grid3
    indices: np.ndarray
    max_displacement: float = 0.0

    def __post_init__(self):
        idx = _readonly(np.asarray(self.indices, dtype=np.int64))
        if idx.shape != (self.base.count, 3):
            raise DomainError("indices must have shape (N, 3)")
        if idx.min() < 0 or idx.max() >= self.grid.n:
            raise DomainError("grid indices out of range")
        uniq = np.unique(idx, axis=0)
        if uniq.shape[0] != idx.shape[0]:
            raise ResolutionError("two particles share one grid node")
        object.__setattr__(self, "indices", idx)

    @property
    def count(self) -> int:
        return self.base.count

    @property
    def charges(self) -> np.ndarray:
        return self.base.charges


def load_particles(path) -> ParticleSystem:
    """Read a particle system from the ``rs-particles v1`` text format.

    The first line must be ``# rs-particles v1 b=<float>``; every following
    non-comment line holds ``x y z q``.  Duplicate positions are accepted
    here; physics-level validation happens at the point of use.
    """
    with open(path, "r", encoding="ascii") as fh:
        lines = fh.readlines()
    if not lines or not lines[0].startswith(_HEADER_PREFIX):
        raise ParseError(f"{path}: line 1: missing '{_HEADER_PREFIX} b=<float>' header")
    header = lines[0].strip()
    try:
        b = float(header.split("b=", 1)[1].split()[0])
    except (IndexError, ValueError) as exc:
        raise ParseError(f"{path}: line 1: cannot parse box half width: {header!r}") from exc
    rows = []
    for lineno, line in enumerate(lines[1:], start=2):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        fields = stripped.split()
        if len(fields) != 4:
            raise ParseError(f"{path}: line {lineno}: expected 'x y z q', got {stripped!r}")
        try:
            rows.append([float(f) for f in fields])
        except ValueError as exc:
            raise ParseError(f"{path}: line {lineno}: non-numeric field in {stripped!r}") from exc
    if not rows:
        raise ParseError(f"{path}: no particle records found")
    data = np.asarray(rows, dtype=np.float64)
    return ParticleSystem(positions=data[:, :3], charges=data[:, 3], box=Box3(b))


def save_particles(system: ParticleSystem, path) -> None:
    """Write the ``rs-particles v1`` format with 17 significant digits."""
    with open(path, "w", encoding="ascii") as fh:
        fh.write(f"{_HEADER_PREFIX} b={system.box.half_width:.17g}\n")
        for p, q in zip(system.positions, system.charges):
            fh.write(f"{p[0]:.17g} {p[1]:.17g} {p[2]:.17g} {q:.17g}\n")


def _make_charges(rng: np.random.Generator, n: int, charge_law: str) -> np.ndarray:
    if charge_law == "unit":
        return np.ones(n)
    if charge_law == "random_sign":
        return rng.integers(0, 2, size=n).astype(np.float64) * 2.0 - 1.0
    if charge_law == "uniform":
        return rng.uniform(-1.0, 1.0, size=n)
    raise DomainError(f"unknown charge law {charge_law!r}")


def generate_lattice(
    dims,
    spacing: float,
    charge_law: str = "unit",
    seed: int = 0,
    box: Box3 | None = None,
) -> ParticleSystem:
    """Regular ``d1 x d2 x d3`` lattice centered in the box.

    Node order is deterministic (x-major).  When ``box`` is omitted the half
    width is set to ``0.75 * max extent`` (or ``spacing`` for a single
    point) so the lattice sits strictly inside.
    """
    dims = tuple(int(d) for d in dims)
    if len(dims) != 3 or min(dims) < 1:
        raise DomainError(f"lattice dims must be three integers >= 1, got {dims}")
    if not spacing > 0:
        raise DomainError(f"lattice spacing must be positive, got {spacing}")
    extent = max((d - 1) * spacing for d in dims)
    if box is None:
        box = Box3(0.75 * extent if extent > 0 else spacing)
    if extent >= 2.0 * box.half_width:
        raise DomainError(
            f"lattice extent {extent} does not fit in the box of half width {box.half_width}"
        )
    axes = [(np.arange(d) - (d - 1) / 2.0) * spacing for d in dims]
    gx, gy, gz = np.meshgrid(*axes, indexing="ij")
    positions = np.stack([gx.ravel(), gy.ravel(), gz.ravel()], axis=1)
    rng = np.random.default_rng(seed)
    charges = _make_charges(rng, positions.shape[0], charge_law)
    return ParticleSystem(positions=positions, charges=charges, box=box)


def generate_random_cluster(
    n_particles: int,
    box: Box3,
    min_sep: float,
    seed: int = 0,
    charge_law: str = "random_sign",
    max_attempts: int | None = None,
) -> ParticleSystem:
    """Rejection-sampled cluster with pairwise distances >= ``min_sep``.

    Deterministic for a fixed seed.  Raises :class:`PackingError` when the
    attempt cap is exhausted, which signals an infeasible density.
    """
    if n_particles < 1:
        raise DomainError("n_particles must be >= 1")
    if not min_sep > 0:
        raise DomainError("min_sep must be positive")
    rng = np.random.default_rng(seed)
    cap = max_attempts if max_attempts is not None else max(10_000, 1_000 * n_particles)
    b = box.half_width
    accepted = np.empty((n_particles, 3))
    count = 0
    attempts = 0
    while count < n_particles:
        if attempts >= cap:
            raise PackingError(
                f"placed {count}/{n_particles} points after {attempts} attempts; "
                f"min_sep={min_sep} is too large for this box"
            )
        attempts += 1
        candidate = rng.uniform(-b, b, size=3)
        if not np.all(np.abs(candidate) < b):
            continue
        if count > 0:
            d2 = np.sum((accepted[:count] - candidate) ** 2, axis=1)
            if d2.min() < min_sep * min_sep:
                continue
        accepted[count] = candidate
        count += 1
    charges = _make_charges(rng, n_particles, charge_law)
    return ParticleSystem(positions=accepted, charges=charges, box=box)


def separation_distance(system: ParticleSystem) -> float:
    """Minimum pairwise Euclidean distance (the set's separation distance)."""
    if system.count < 2:
        raise DomainError("separation distance needs at least two particles")
    return float(pdist(system.positions).min())


def snap_to_grid(system: ParticleSystem, grid: Grid3) -> IndexedParticleSystem:
    """Move every particle to its nearest grid point.

    Rounding is nearest-node with ties broken toward the lower index, so
    the map is deterministic; per-axis displacement is at most ``h/2`` for
    particles at least ``h/2`` away from the upper box face, hence the
    reported maximum displacement is bounded by ``h*sqrt(3)/2`` there.
    Two particles landing on one node is a resolution error.
    """
    h = grid.h
    float_idx = system.positions / h + grid.n // 2
    idx = np.ceil(float_idx - 0.5).astype(np.int64)
    # Node 0 sits on the box face at -b; keep snapped positions strictly
    # inside by excluding it, mirroring the absent +b node.
    idx = np.clip(idx, 1, grid.n - 1)
    snapped = grid.position(idx)
    disp = np.linalg.norm(system.positions - snapped, axis=1)
    uniq, counts = np.unique(idx, axis=0, return_counts=True)
    if np.any(counts > 1):
        node = uniq[np.nonzero(counts > 1)[0][0]]
        raise ResolutionError(
            f"grid n={grid.n} cannot resolve the system: several particles snap "
            f"to node {tuple(int(v) for v in node)}; use a larger n"
        )
    base = ParticleSystem(positions=snapped, charges=system.charges, box=system.box)
    return IndexedParticleSystem(
        base=base, grid=grid, indices=idx, max_displacement=float(disp.max())
    )
