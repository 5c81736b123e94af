"""Shift-and-windowing assembly of N-particle potential tensors in RS form.

The reference kernel tensor lives on the doubled ``2n`` grid whose points
are integer multiples of ``h`` with the origin at index ``n``.  A particle
snapped to grid index ``j`` contributes the window

    p^(nu)[i] = p2n[i - j + n],    i = 0..n-1,

per mode, so assembly is pure integer slicing of the doubled side vectors.
The long-range terms accumulate into one global canonical tensor (rank
``(R_l+1)*N`` before reduction); the short-range terms collapse into a
single local reference tensor replicated at the particle centers (a CCT).
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from .errors import ConfigError, DomainError
from .formats import CCT, CanonicalTensor, RSCanonical, RSTucker
from .kernels import (
    RadialKernel,
    ReferenceCanonical,
    build_quadrature,
    effective_support,
    project_kernel,
    split_rank,
    split_tensor,
)
from .particles import Grid3, IndexedParticleSystem, ParticleSystem, separation_distance, snap_to_grid
from .rankred import ReductionConfig, c2t_als, rhosvd_error_bound, side_svd, tucker_to_canonical


@dataclass(frozen=True)
class AssemblyConfig:
    """Everything the RS assembly pipeline needs, with paper-style defaults.

    ``sigma`` defaults to the system's separation distance; ``split_index``
    overrides the splitting criterion when set.  The long part is rank
    reduced when requested or when its raw rank exceeds
    ``reduce_threshold``.
    """

    grid: Grid3
    kernel: RadialKernel = field(default_factory=lambda: RadialKernel("newton"))
    M: int = 25
    C0: float = 3.0
    split_index: Optional[int] = None
    sigma: Optional[float] = None
    delta: float = 1e-4
    criterion: str = "max_norm"
    overlap_policy: str = "soft"
    max_overlap: Optional[int] = 8
    reduction: ReductionConfig = field(default_factory=lambda: ReductionConfig(eps=1e-5))
    long_format: str = "canonical"
    entry_rule: str = "integral"
    reduce_long: Optional[bool] = None
    reduce_threshold: int = 2000

    def __post_init__(self):
        if self.long_format not in ("canonical", "tucker"):
            raise ConfigError(f"unknown long format {self.long_format!r}")
        if not (0 < self.delta < 1):
            raise ConfigError(f"delta must lie in (0,1), got {self.delta}")


def reference_for(cfg: AssemblyConfig) -> ReferenceCanonical:
    """Doubled-grid reference tensor calibrated for this box.

    The quadrature radius range spans half a cell up to the diagonal of the
    doubled box, the largest offset windowing can produce.
    """
    b = cfg.grid.box.half_width
    r_lo = 0.5 * cfg.grid.h
    r_hi = 2.0 * math.sqrt(3.0) * b
    rule = build_quadrature(cfg.kernel, cfg.M, cfg.C0, r_range=(r_lo, r_hi))
    return project_kernel(rule, cfg.grid, doubled=True, entry_rule=cfg.entry_rule)


def window_slice(ref2n: ReferenceCanonical, j, k: int):
    """Mode vectors of one windowed rank-1 term: pure slicing, no arithmetic."""
    if not ref2n.doubled:
        raise ConfigError("windowing requires the doubled-grid reference")
    n = ref2n.grid.n // 2
    j = tuple(int(v) for v in j)
    if len(j) != 3 or any(v < 0 or v >= n for v in j):
        raise DomainError(f"particle index {j} outside the n-grid")
    out = []
    for ell in range(3):
        start = n - j[ell]
        assert 0 < start <= n, "in-box windows always fit the doubled grid"
        out.append(ref2n.tensor.factors[ell][start:start + n, k])
    return tuple(out)


def _require_indexed(system, grid: Grid3) -> IndexedParticleSystem:
    if isinstance(system, IndexedParticleSystem):
        if system.grid != grid:
            raise ConfigError("particle system snapped to a different grid")
        return system
    if isinstance(system, ParticleSystem):
        return snap_to_grid(system, grid)
    raise ConfigError(f"expected a particle system, got {type(system).__name__}")


def assemble_long(
    ref2n: ReferenceCanonical,
    system: IndexedParticleSystem,
    split_index: int,
) -> CanonicalTensor:
    """Long-range sum: rank ``(R_l+1)*N`` canonical tensor.

    Term order is deterministic, particle-major with the quadrature index
    minor; weights are ``z_nu * xi_k`` and the columns are windowed slices
    of the doubled reference vectors.
    """
    if not (0 <= split_index < ref2n.R):
        raise DomainError(f"split index {split_index} out of range")
    n = ref2n.grid.n // 2
    n_terms = split_index + 1
    count = system.count
    weights = (system.charges[:, None] * ref2n.tensor.weights[None, :n_terms]).reshape(-1)
    factors = []
    for ell in range(3):
        u = ref2n.tensor.factors[ell]
        out = np.empty((n, count * n_terms))
        starts = n - system.indices[:, ell]
        for nu in range(count):
            out[:, nu * n_terms:(nu + 1) * n_terms] = u[starts[nu]:starts[nu] + n, :n_terms]
        factors.append(out)
    return CanonicalTensor(weights, tuple(factors))


def assemble_short(
    ref2n: ReferenceCanonical,
    system: IndexedParticleSystem,
    split_index: int,
    delta: float,
    overlap_policy: str = "soft",
    max_overlap: Optional[int] = 8,
    gamma: Optional[int] = None,
) -> CCT:
    """Short-range sum as a uniform CCT.

    The local tensor is the short-range reference restricted to the
    ``(2*gamma+1)^3`` window around the origin of the doubled grid, with
    ``gamma`` taken from the effective support at threshold ``delta``
    unless given explicitly.
    """
    n = ref2n.grid.n // 2
    short, _ = split_tensor(ref2n, split_index)
    sizes = (n, n, n)
    if short.rank == 0:
        return CCT(
            local=CanonicalTensor.empty((1, 1, 1)),
            gamma=0,
            centers=system.indices,
            weights=system.charges,
            mode_sizes=sizes,
            overlap_policy=overlap_policy,
            max_overlap=max_overlap,
        )
    if gamma is None:
        gamma = effective_support(short, delta, ref2n.grid.h)
    gamma = int(min(max(gamma, 0), n - 1))
    n0 = ref2n.origin_index
    local = CanonicalTensor(
        short.weights,
        tuple(f[n0 - gamma:n0 + gamma + 1, :] for f in short.factors),
    ).normalize()
    return CCT(
        local=local,
        gamma=gamma,
        centers=system.indices,
        weights=system.charges,
        mode_sizes=sizes,
        overlap_policy=overlap_policy,
        max_overlap=max_overlap,
    )


@dataclass(frozen=True)
class AssemblyResult:
    """RS tensor plus the provenance the pipeline recorded."""

    rs: Union[RSCanonical, RSTucker]
    reference: ReferenceCanonical
    system: IndexedParticleSystem
    split_index: int
    sigma: float
    gamma: int
    report: dict


def build_rs(system, cfg: AssemblyConfig) -> AssemblyResult:
    """Full pipeline: snap, project, split, assemble, reduce, package."""
    indexed = _require_indexed(system, cfg.grid)
    ref2n = reference_for(cfg)
    if cfg.sigma is not None:
        sigma = float(cfg.sigma)
    elif indexed.count >= 2:
        sigma = separation_distance(indexed.base)
    else:
        sigma = cfg.grid.h
    if cfg.split_index is not None:
        split_index = int(cfg.split_index)
    else:
        split_index = split_rank(ref2n, sigma, cfg.delta, cfg.criterion)
    ref2n = dataclasses.replace(ref2n, split_index=split_index)

    long_raw = assemble_long(ref2n, indexed, split_index)
    reduce_long = cfg.reduce_long
    if reduce_long is None:
        reduce_long = cfg.long_format == "tucker" or long_raw.rank > cfg.reduce_threshold
    if cfg.long_format == "tucker":
        reduce_long = True

    report = {
        "n": cfg.grid.n,
        "b": cfg.grid.box.half_width,
        "particles": indexed.count,
        "max_snap_displacement": indexed.max_displacement,
        "quadrature_rank": ref2n.R,
        "split_index": split_index,
        "short_terms": ref2n.R - split_index - 1,
        "sigma": sigma,
        "raw_long_rank": long_raw.rank,
        "reduced": bool(reduce_long),
    }

    if reduce_long:
        spectrum = side_svd(long_raw)
        tucker = c2t_als(long_raw, cfg.reduction, spectrum=spectrum)
        ranks = tucker.ranks
        report["tucker_ranks"] = list(ranks)
        report["reduction_tail_bracket"] = rhosvd_error_bound(long_raw, spectrum, ranks)
        mode_totals = [float(np.sqrt(np.sum(s * s))) for s in spectrum.values]
        report["reduction_tail_fraction"] = [
            float(np.sqrt(np.sum(s[r:] ** 2)) / t) if t > 0 else 0.0
            for s, r, t in zip(spectrum.values, ranks, mode_totals)
        ]
        if cfg.long_format == "tucker":
            long_part = tucker
        else:
            long_part = tucker_to_canonical(tucker, cfg.reduction.eps_t2c)
            report["reduced_canonical_rank"] = long_part.rank
    else:
        long_part = long_raw

    short = assemble_short(
        ref2n, indexed, split_index, cfg.delta, cfg.overlap_policy, cfg.max_overlap
    )
    gamma = short.gamma
    report["gamma"] = gamma
    report["gamma_h"] = gamma * cfg.grid.h
    if cfg.long_format == "tucker":
        rs = RSTucker(long=long_part, short=short, grid=cfg.grid)
    else:
        rs = RSCanonical(long=long_part, short=short, grid=cfg.grid)

    from .formats import storage_report

    sto = storage_report(rs)
    report["storage_floats"] = sto.total
    report["storage_bound"] = sto.bound
    return AssemblyResult(
        rs=rs,
        reference=ref2n,
        system=indexed,
        split_index=split_index,
        sigma=sigma,
        gamma=gamma,
        report=report,
    )
