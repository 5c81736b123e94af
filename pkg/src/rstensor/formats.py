"""Rank-structured tensor formats: canonical, Tucker, cumulated canonical,
and the combined range-separated (RS) representations.

All types are immutable value objects; evaluation and inner products are
pure functions, safe for concurrent reads.  Dense materialization is guarded
so that no code path silently allocates a full ``n^3`` array beyond the desk
scale limit (``128^3`` elements by default).

Scale convention: tensors built from grid projections of kernels store raw
per-mode cell integrals, so one tensor entry carries a factor ``h^3``
relative to a pointwise kernel value.  Modules that need pointwise values
(energies, interpolation operators) divide that factor out explicitly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import CapacityError, ConfigError, DomainError
from .particles import Grid3

MAX_DENSE_ELEMENTS = 128 ** 3


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


def _guard_dense(shape, limit: int) -> None:
    total = int(np.prod([int(s) for s in shape]))
    if total > limit:
        raise CapacityError(
            f"refusing to materialize a dense {tuple(shape)} tensor "
            f"({total} > {limit} elements); raise the limit explicitly if this "
            "is intentional"
        )


@dataclass(frozen=True)
class CanonicalTensor:
    """Rank-R canonical tensor: weights plus one side matrix per mode.

    The normal form keeps unit-norm columns with explicit weights; columns
    may be left unnormalized only when all weights equal one.
    """

    weights: np.ndarray
    factors: tuple

    def __post_init__(self):
        w = _readonly(np.asarray(self.weights, dtype=np.float64).reshape(-1))
        facs = tuple(_readonly(np.asarray(f, dtype=np.float64)) for f in self.factors)
        if len(facs) != 3:
            raise DomainError("canonical tensor needs exactly three side matrices")
        for f in facs:
            if f.ndim != 2 or f.shape[1] != w.shape[0]:
                raise DomainError(
                    f"side matrix shape {f.shape} inconsistent with rank {w.shape[0]}"
                )
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "factors", facs)

    @property
    def rank(self) -> int:
        return int(self.weights.shape[0])

    @property
    def mode_sizes(self) -> tuple:
        return tuple(int(f.shape[0]) for f in self.factors)

    @classmethod
    def empty(cls, mode_sizes) -> "CanonicalTensor":
        return cls(np.zeros(0), tuple(np.zeros((int(n), 0)) for n in mode_sizes))

    def normalize(self) -> "CanonicalTensor":
        """Return the normal form: unit columns, norms absorbed into weights."""
        if self.rank == 0:
            return self
        w = self.weights.copy()
        facs = []
        for f in self.factors:
            norms = np.linalg.norm(f, axis=0)
            safe = np.where(norms > 0, norms, 1.0)
            w = w * norms
            facs.append(f / safe)
        return CanonicalTensor(w, tuple(facs))

    def norm(self) -> float:
        """Frobenius norm from mode-wise Gram matrices, no materialization."""
        if self.rank == 0:
            return 0.0
        if self.rank ** 2 > 50_000_000:
            raise CapacityError(f"rank {self.rank} Gram matrix would be too large")
        g = _gram(self, self)
        val = float(self.weights @ g @ self.weights)
        return float(np.sqrt(max(val, 0.0)))

    def dense(self, limit: int = MAX_DENSE_ELEMENTS) -> np.ndarray:
        _guard_dense(self.mode_sizes, limit)
        u1, u2, u3 = self.factors
        out = np.zeros(self.mode_sizes)
        chunk = 256
        for lo in range(0, self.rank, chunk):
            hi = min(lo + chunk, self.rank)
            out += np.einsum(
                "k,ik,jk,lk->ijl",
                self.weights[lo:hi],
                u1[:, lo:hi],
                u2[:, lo:hi],
                u3[:, lo:hi],
                optimize=True,
            )
        return out


def _gram(a: CanonicalTensor, b: CanonicalTensor) -> np.ndarray:
    g = np.ones((a.rank, b.rank))
    for fa, fb in zip(a.factors, b.factors):
        g *= fa.T @ fb
    return g


def canonical_inner(a: CanonicalTensor, b: CanonicalTensor) -> float:
    """Euclidean inner product of two canonical tensors on one grid."""
    if a.mode_sizes != b.mode_sizes:
        raise ConfigError("mode size mismatch in canonical inner product")
    if a.rank == 0 or b.rank == 0:
        return 0.0
    return float(a.weights @ _gram(a, b) @ b.weights)


@dataclass(frozen=True)
class TuckerTensor:
    """Orthogonal Tucker tensor: core contracted with orthonormal factors."""

    core: np.ndarray
    factors: tuple

    def __post_init__(self):
        core = _readonly(np.asarray(self.core, dtype=np.float64))
        facs = tuple(_readonly(np.asarray(f, dtype=np.float64)) for f in self.factors)
        if core.ndim != 3 or len(facs) != 3:
            raise DomainError("Tucker tensor needs a 3D core and three factors")
        for axis, f in enumerate(facs):
            if f.ndim != 2 or f.shape[1] != core.shape[axis]:
                raise DomainError(
                    f"factor {axis} shape {f.shape} inconsistent with core {core.shape}"
                )
            if f.shape[1] > f.shape[0]:
                raise DomainError("Tucker rank exceeds mode size")
            eye = f.T @ f
            if not np.allclose(eye, np.eye(f.shape[1]), atol=1e-11):
                raise DomainError(f"factor {axis} columns are not orthonormal")
        object.__setattr__(self, "core", core)
        object.__setattr__(self, "factors", facs)

    @property
    def ranks(self) -> tuple:
        return tuple(int(r) for r in self.core.shape)

    @property
    def mode_sizes(self) -> tuple:
        return tuple(int(f.shape[0]) for f in self.factors)

    def norm(self) -> float:
        return float(np.linalg.norm(self.core))

    def dense(self, limit: int = MAX_DENSE_ELEMENTS) -> np.ndarray:
        _guard_dense(self.mode_sizes, limit)
        v1, v2, v3 = self.factors
        return np.einsum("abc,ia,jb,lc->ijl", self.core, v1, v2, v3, optimize=True)


@dataclass(frozen=True)
class CCT:
    """Cumulated canonical tensor: one local reference tensor replicated at
    particle centers with per-copy weights.

    The local tensor lives on a ``(2*gamma+1)^3`` window; copy ``nu`` is
    placed with its window centered at grid index ``centers[nu]`` and clipped
    at the ambient boundary, so its entries vanish outside the gamma
    vicinity.  Under the strict overlap policy the vicinities must be
    pairwise disjoint; the soft policy admits overlaps but caps how many
    copies may cover one grid point.
    """

    local: CanonicalTensor
    gamma: int
    centers: np.ndarray
    weights: np.ndarray
    mode_sizes: tuple
    overlap_policy: str = "soft"
    max_overlap: Optional[int] = 8
    _buckets: dict = field(repr=False, compare=False, default=None)

    def __post_init__(self):
        gamma = int(self.gamma)
        centers = _readonly(np.asarray(self.centers, dtype=np.int64).reshape(-1, 3))
        weights = _readonly(np.asarray(self.weights, dtype=np.float64).reshape(-1))
        sizes = tuple(int(s) for s in self.mode_sizes)
        if gamma < 0:
            raise DomainError("gamma must be non-negative")
        if centers.shape[0] != weights.shape[0]:
            raise DomainError("one weight per center required")
        if self.local.rank > 0:
            win = 2 * gamma + 1
            if self.local.mode_sizes != (win, win, win):
                raise DomainError(
                    f"local tensor modes {self.local.mode_sizes} do not match "
                    f"window size {win}"
                )
        if self.overlap_policy not in ("strict", "soft"):
            raise DomainError(f"unknown overlap policy {self.overlap_policy!r}")
        if centers.size and (centers.min() < 0 or np.any(centers >= np.array(sizes))):
            raise DomainError("CCT centers out of the ambient index range")
        object.__setattr__(self, "gamma", gamma)
        object.__setattr__(self, "centers", centers)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "mode_sizes", sizes)
        object.__setattr__(self, "_buckets", _build_buckets(centers, gamma))
        if self.overlap_policy == "strict" and self.local.rank > 0:
            _check_disjoint(self, centers, gamma)

    @property
    def count(self) -> int:
        return int(self.centers.shape[0])

    @property
    def local_rank(self) -> int:
        return self.local.rank


def _build_buckets(centers: np.ndarray, gamma: int) -> dict:
    cell = gamma + 1
    buckets: dict = {}
    for nu, c in enumerate(centers):
        key = (int(c[0] // cell), int(c[1] // cell), int(c[2] // cell))
        buckets.setdefault(key, []).append(nu)
    return {k: np.asarray(v, dtype=np.int64) for k, v in buckets.items()}


def _check_disjoint(short: CCT, centers: np.ndarray, gamma: int) -> None:
    from .errors import SeparationError

    cell = gamma + 1
    for nu in range(centers.shape[0]):
        key = centers[nu] // cell
        for dx in (-2, -1, 0, 1, 2):
            for dy in (-2, -1, 0, 1, 2):
                for dz in (-2, -1, 0, 1, 2):
                    cand = short._buckets.get((int(key[0] + dx), int(key[1] + dy), int(key[2] + dz)))
                    if cand is None:
                        continue
                    for m in cand:
                        if m <= nu:
                            continue
                        if np.max(np.abs(centers[nu] - centers[m])) <= 2 * gamma:
                            raise SeparationError(
                                f"strict policy: gamma vicinities of particles {nu} "
                                f"and {int(m)} intersect (gamma={gamma})"
                            )


@dataclass(frozen=True)
class RSCanonical:
    """Range-separated tensor: global canonical long part plus CCT short part."""

    long: CanonicalTensor
    short: CCT
    grid: Grid3

    def __post_init__(self):
        n = self.grid.n
        if self.long.mode_sizes != (n, n, n):
            raise DomainError("long part mode sizes do not match the grid")
        if self.short.mode_sizes != (n, n, n):
            raise DomainError("short part ambient sizes do not match the grid")
        if self.short.local.rank > 0 and 2 * self.short.gamma + 1 > n:
            raise DomainError("short-range window exceeds the grid")

    @property
    def mode_sizes(self) -> tuple:
        return self.long.mode_sizes


@dataclass(frozen=True)
class RSTucker:
    """Range-separated tensor with a Tucker long part."""

    long: TuckerTensor
    short: CCT
    grid: Grid3

    def __post_init__(self):
        n = self.grid.n
        if self.long.mode_sizes != (n, n, n):
            raise DomainError("long part mode sizes do not match the grid")
        if self.short.mode_sizes != (n, n, n):
            raise DomainError("short part ambient sizes do not match the grid")

    @property
    def mode_sizes(self) -> tuple:
        return self.long.mode_sizes


def _check_index(i, mode_sizes) -> tuple:
    i = tuple(int(v) for v in i)
    if len(i) != 3:
        raise DomainError(f"expected a 3D multi-index, got {i}")
    for v, n in zip(i, mode_sizes):
        if v < 0 or v >= n:
            raise IndexError(f"index {i} out of range for modes {mode_sizes}")
    return i


def eval_canonical(t: CanonicalTensor, i) -> float:
    """Single entry of a canonical tensor, O(d*R)."""
    i1, i2, i3 = _check_index(i, t.mode_sizes)
    if t.rank == 0:
        return 0.0
    u1, u2, u3 = t.factors
    return float(np.dot(t.weights, u1[i1] * u2[i2] * u3[i3]))


def eval_canonical_many(t: CanonicalTensor, idx: np.ndarray) -> np.ndarray:
    """Entries at an (m, 3) array of multi-indices."""
    idx = np.asarray(idx, dtype=np.int64).reshape(-1, 3)
    if t.rank == 0:
        return np.zeros(idx.shape[0])
    u1, u2, u3 = t.factors
    rows = u1[idx[:, 0]] * u2[idx[:, 1]] * u3[idx[:, 2]]
    return rows @ t.weights


def eval_tucker(t: TuckerTensor, i) -> float:
    """Single entry of a Tucker tensor, O(r^3)."""
    i1, i2, i3 = _check_index(i, t.mode_sizes)
    v1, v2, v3 = t.factors
    return float(np.einsum("abc,a,b,c->", t.core, v1[i1], v2[i2], v3[i3]))


def eval_tucker_many(t: TuckerTensor, idx: np.ndarray) -> np.ndarray:
    idx = np.asarray(idx, dtype=np.int64).reshape(-1, 3)
    v1, v2, v3 = t.factors
    tmp = np.tensordot(v1[idx[:, 0]], t.core, axes=(1, 0))
    tmp = np.einsum("mbc,mb->mc", tmp, v2[idx[:, 1]])
    return np.einsum("mc,mc->m", tmp, v3[idx[:, 2]])


def lookup_short(short: CCT, i) -> np.ndarray:
    """Indices of all short-range copies whose gamma vicinity contains ``i``.

    Uses the cell-bucket spatial index built at construction; the result is
    sorted ascending for determinism.
    """
    i = np.asarray(i, dtype=np.int64).reshape(3)
    if short.count == 0:
        return np.zeros(0, dtype=np.int64)
    cell = short.gamma + 1
    key = i // cell
    found = []
    for dx in (-1, 0, 1):
        for dy in (-1, 0, 1):
            for dz in (-1, 0, 1):
                cand = short._buckets.get((int(key[0] + dx), int(key[1] + dy), int(key[2] + dz)))
                if cand is None:
                    continue
                sel = np.max(np.abs(short.centers[cand] - i), axis=1) <= short.gamma
                found.append(cand[sel])
    if not found:
        return np.zeros(0, dtype=np.int64)
    return np.sort(np.concatenate(found))


def eval_cct(short: CCT, i) -> float:
    """Short-range contribution at one grid point."""
    i = _check_index(i, short.mode_sizes)
    if short.local.rank == 0:
        return 0.0
    hits = lookup_short(short, i)
    if short.max_overlap is not None and hits.size > short.max_overlap:
        raise CapacityError(
            f"{hits.size} overlapping short-range copies at {i} exceed the "
            f"soft-policy cap {short.max_overlap}"
        )
    total = 0.0
    g = short.gamma
    u1, u2, u3 = short.local.factors
    w = short.local.weights
    for nu in hits:
        off = np.asarray(i) - short.centers[nu] + g
        total += short.weights[nu] * float(np.dot(w, u1[off[0]] * u2[off[1]] * u3[off[2]]))
    return total


def eval_rs(a, i) -> float:
    """Entry of an RS tensor: long-part entry plus overlapping short copies."""
    if isinstance(a, RSCanonical):
        return eval_canonical(a.long, i) + eval_cct(a.short, i)
    if isinstance(a, RSTucker):
        return eval_tucker(a.long, i) + eval_cct(a.short, i)
    raise ConfigError(f"eval_rs expects an RS tensor, got {type(a).__name__}")


def eval_rs_many(a, idx: np.ndarray) -> np.ndarray:
    idx = np.asarray(idx, dtype=np.int64).reshape(-1, 3)
    if isinstance(a, RSCanonical):
        out = eval_canonical_many(a.long, idx)
    elif isinstance(a, RSTucker):
        out = eval_tucker_many(a.long, idx)
    else:
        raise ConfigError(f"eval_rs_many expects an RS tensor, got {type(a).__name__}")
    if a.short.local.rank > 0:
        out = out + np.array([eval_cct(a.short, i) for i in idx])
    return out


def _window_ranges(center: np.ndarray, gamma: int, n: int):
    """Ambient and local slice bounds of a clipped window along each mode."""
    lo = np.maximum(center - gamma, 0)
    hi = np.minimum(center + gamma, n - 1)
    loc_lo = lo - (center - gamma)
    loc_hi = hi - (center - gamma)
    return lo, hi, loc_lo, loc_hi


def dense_cct(short: CCT, limit: int = MAX_DENSE_ELEMENTS) -> np.ndarray:
    _guard_dense(short.mode_sizes, limit)
    out = np.zeros(short.mode_sizes)
    if short.local.rank == 0:
        return out
    local = short.local.dense(limit=limit)
    n = short.mode_sizes[0]
    g = short.gamma
    for nu in range(short.count):
        lo, hi, llo, lhi = _window_ranges(short.centers[nu], g, n)
        out[lo[0]:hi[0] + 1, lo[1]:hi[1] + 1, lo[2]:hi[2] + 1] += short.weights[nu] * local[
            llo[0]:lhi[0] + 1, llo[1]:lhi[1] + 1, llo[2]:lhi[2] + 1
        ]
    return out


def dense_rs(a, limit: int = MAX_DENSE_ELEMENTS) -> np.ndarray:
    if isinstance(a, RSCanonical):
        return a.long.dense(limit=limit) + dense_cct(a.short, limit=limit)
    if isinstance(a, RSTucker):
        return a.long.dense(limit=limit) + dense_cct(a.short, limit=limit)
    raise ConfigError(f"dense_rs expects an RS tensor, got {type(a).__name__}")


def _long_short_inner(long: CanonicalTensor, short: CCT) -> float:
    """<long, short> via per-copy window slices of the long side matrices."""
    if long.rank == 0 or short.local.rank == 0 or short.count == 0:
        return 0.0
    n = long.mode_sizes[0]
    g = short.gamma
    u_long = long.factors
    u_loc = short.local.factors
    total = 0.0
    for nu in range(short.count):
        lo, hi, llo, lhi = _window_ranges(short.centers[nu], g, n)
        p = np.ones((long.rank, short.local.rank))
        for ell in range(3):
            a_sl = u_long[ell][lo[ell]:hi[ell] + 1, :]
            b_sl = u_loc[ell][llo[ell]:lhi[ell] + 1, :]
            p *= a_sl.T @ b_sl
        total += short.weights[nu] * float(long.weights @ p @ short.local.weights)
    return total


def _short_short_inner(sa: CCT, sb: CCT) -> float:
    """<short_a, short_b> for CCTs on one center set, overlap-aware."""
    if sa.local.rank == 0 or sb.local.rank == 0:
        return 0.0
    g = sa.gamma
    n = sa.mode_sizes[0]
    # same-center contributions, window-clipped where needed
    full = canonical_inner(sa.local, sb.local)
    total = 0.0
    for nu in range(sa.count):
        lo, hi, llo, lhi = _window_ranges(sa.centers[nu], g, n)
        if np.all(lhi - llo == 2 * g):
            val = full
        else:
            p = np.ones((sa.local.rank, sb.local.rank))
            for ell in range(3):
                p *= (
                    sa.local.factors[ell][llo[ell]:lhi[ell] + 1, :].T
                    @ sb.local.factors[ell][llo[ell]:lhi[ell] + 1, :]
                )
            val = float(sa.local.weights @ p @ sb.local.weights)
        total += sa.weights[nu] * sb.weights[nu] * val
    if sa.overlap_policy == "strict" or sb.overlap_policy == "strict":
        # disjoint supports on a shared center set leave no cross terms
        return total
    # cross terms between distinct centers with intersecting windows
    for nu in range(sa.count):
        for mu in _neighbors_within(sa, nu, 2 * g):
            total += sa.weights[nu] * sb.weights[mu] * _cross_window_inner(sa, nu, sb, mu)
    return total


def _neighbors_within(short: CCT, nu: int, radius: int):
    """Centers mu != nu with Chebyshev distance <= radius (bucket scan)."""
    cell = short.gamma + 1
    reach = radius // cell + 1
    key = short.centers[nu] // cell
    out = []
    for dx in range(-reach, reach + 1):
        for dy in range(-reach, reach + 1):
            for dz in range(-reach, reach + 1):
                cand = short._buckets.get((int(key[0] + dx), int(key[1] + dy), int(key[2] + dz)))
                if cand is None:
                    continue
                for m in cand:
                    if m == nu:
                        continue
                    if np.max(np.abs(short.centers[nu] - short.centers[m])) <= radius:
                        out.append(int(m))
    return sorted(out)


def _cross_window_inner(sa: CCT, nu: int, sb: CCT, mu: int) -> float:
    """<copy nu of sa, copy mu of sb> over the intersection of their windows."""
    g = sa.gamma
    n = sa.mode_sizes[0]
    lo_a, hi_a, _, _ = _window_ranges(sa.centers[nu], g, n)
    lo_b, hi_b, _, _ = _window_ranges(sb.centers[mu], g, n)
    lo = np.maximum(lo_a, lo_b)
    hi = np.minimum(hi_a, hi_b)
    if np.any(hi < lo):
        return 0.0
    p = np.ones((sa.local.rank, sb.local.rank))
    for ell in range(3):
        a_lo = lo[ell] - (sa.centers[nu][ell] - g)
        b_lo = lo[ell] - (sb.centers[mu][ell] - g)
        length = hi[ell] - lo[ell] + 1
        p *= (
            sa.local.factors[ell][a_lo:a_lo + length, :].T
            @ sb.local.factors[ell][b_lo:b_lo + length, :]
        )
    return float(sa.local.weights @ p @ sb.local.weights)


def scalar_product_rs(a: RSCanonical, b: RSCanonical) -> float:
    """Euclidean scalar product of two RS-canonical tensors.

    Computed as long-long mode-wise dot products, long-short window slices,
    and short-short overlap windows; requires both operands to live on the
    same grid and the same center set.
    """
    if not isinstance(a, RSCanonical) or not isinstance(b, RSCanonical):
        raise ConfigError("scalar_product_rs expects two RS-canonical tensors")
    if a.grid != b.grid:
        raise ConfigError("grid mismatch in scalar_product_rs")
    if a.short.count != b.short.count or not np.array_equal(a.short.centers, b.short.centers):
        raise ConfigError("scalar_product_rs requires identical center sets")
    if a.short.local.rank > 0 and b.short.local.rank > 0 and a.short.gamma != b.short.gamma:
        raise ConfigError("scalar_product_rs requires matching window widths")
    total = canonical_inner(a.long, b.long)
    total += _long_short_inner(a.long, b.short)
    total += _long_short_inner(b.long, a.short)
    total += _short_short_inner(a.short, b.short)
    return total


@dataclass(frozen=True)
class StorageReport:
    """Float counts of an RS representation against the analytic bound.

    Counting convention: the minimal weight-folded parametrization is
    counted (weights folded into mode-1 columns), and the local window
    contributes ``2*gamma+1`` points per mode.  The explicit weight vectors
    kept by the normal form are reported separately.
    """

    long_floats: int
    short_floats: int
    particle_floats: int
    normal_form_extra: int
    bound: int

    @property
    def total(self) -> int:
        return self.long_floats + self.short_floats + self.particle_floats

    @property
    def within_bound(self) -> bool:
        return self.total <= self.bound


def storage_report(a) -> StorageReport:
    """Exact float count of an RS tensor plus its storage-cost bound."""
    d = 3
    short = a.short
    n_particles = short.count
    window = 2 * short.gamma + 1 if short.local.rank > 0 else 0
    short_floats = d * short.local.rank * window
    particle_floats = (d + 1) * n_particles
    if isinstance(a, RSCanonical):
        n = a.long.mode_sizes[0]
        long_floats = d * a.long.rank * n
        extra = a.long.rank + short.local.rank
        bound = d * a.long.rank * n + (d + 1) * n_particles + d * short.local.rank * window
    elif isinstance(a, RSTucker):
        r1, r2, r3 = a.long.ranks
        long_floats = r1 * r2 * r3 + sum(
            r * f.shape[0] for r, f in zip(a.long.ranks, a.long.factors)
        )
        extra = short.local.rank
        bound = long_floats + (d + 1) * n_particles + d * short.local.rank * window
    else:
        raise ConfigError(f"storage_report expects an RS tensor, got {type(a).__name__}")
    return StorageReport(
        long_floats=long_floats,
        short_floats=short_floats,
        particle_floats=particle_floats,
        normal_form_extra=extra,
        bound=bound,
    )
