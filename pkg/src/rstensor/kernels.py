"""Separable Gaussian-sum expansion of radial kernels on Cartesian grids.

A radial kernel ``p(r)`` with Laplace-Gauss density ``a(t)`` satisfies

    p(r) = int_0^inf a(t) * exp(-t^2 r^2) dt,

and a quadrature with nodes ``t_k`` and weights ``a_k`` turns that integral
into a separable Gaussian sum, hence a low-rank canonical grid tensor.

Node placement.  The plain trapezoidal grid ``t_k = k*h_M`` from the
symmetric sum cannot deliver uniform relative accuracy over a wide radius
range at small ``M`` (its constant ``k=0`` term alone caps accuracy at large
``r``), so the folded Newton rule here condenses the nodes by a sinh map,

    t_k = alpha * sinh(k*h_M),   a_k = a(t_k) * alpha * cosh(k*h_M) * h_M,

with ``h_M = C0*log(M)/M`` and the ``k=0`` weight halved exactly as in the
symmetric fold.  The scale ``alpha`` is calibrated deterministically at
construction so the measured relative error on the rule's target radius
range is minimal; nodes stay at ``t_0 = 0``, strictly increasing, with
positive weights, and the short/long splitting by node index carries over
unchanged.  Yukawa and Slater densities vanish at ``t = 0`` and instead use
geometrically spaced nodes (with a dead origin node keeping ``t_0 = 0``);
the Gaussian kernel is its own rank-1 expansion and bypasses quadrature.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import erf

from .errors import CapabilityError, ConfigError, DomainError
from .formats import CanonicalTensor
from .particles import Grid3

SQRT_PI = math.sqrt(math.pi)

#: default radius range a rule is calibrated for (length units)
DEFAULT_R_RANGE = (0.1, 20.0)

_CAL_PROBES = 128
_CAL_ITERS = 72


@dataclass(frozen=True)
class RadialKernel:
    """Radial interaction kernel.

    kind:
        ``newton`` (1/r), ``yukawa`` (exp(-lam*r)/r), ``slater``
        (exp(-lam*r)), or ``gaussian`` (exp(-lam*r^2)).
    lam:
        decay parameter, required positive for all kinds but ``newton``.
    """

    kind: str
    lam: float = 1.0

    def __post_init__(self):
        if self.kind not in ("newton", "yukawa", "slater", "gaussian"):
            raise CapabilityError(f"unsupported kernel kind {self.kind!r}")
        if self.kind != "newton" and not self.lam > 0:
            raise DomainError(f"kernel parameter must be positive, got {self.lam}")

    def __call__(self, r):
        r = np.asarray(r, dtype=np.float64)
        if self.kind == "newton":
            return 1.0 / r
        if self.kind == "yukawa":
            return np.exp(-self.lam * r) / r
        if self.kind == "slater":
            return np.exp(-self.lam * r)
        return np.exp(-self.lam * r * r)

    def singular_at_origin(self) -> bool:
        return self.kind in ("newton", "yukawa")


@dataclass(frozen=True)
class QuadratureRule:
    """Gaussian-sum quadrature for one radial kernel.

    ``nodes[0] == 0`` and the nodes increase strictly; all weights are
    positive except the dead origin node of the Yukawa/Slater rules whose
    density vanishes at ``t = 0``.  ``r_range`` records the radius interval
    the rule was calibrated for.
    """

    kernel: RadialKernel
    M: int
    C0: float
    h_M: float
    nodes: np.ndarray
    weights: np.ndarray
    r_range: tuple
    symmetric_folded: bool

    def __post_init__(self):
        nodes = np.ascontiguousarray(np.asarray(self.nodes, dtype=np.float64))
        weights = np.ascontiguousarray(np.asarray(self.weights, dtype=np.float64))
        if nodes.shape != weights.shape or nodes.ndim != 1 or nodes.size == 0:
            raise DomainError("nodes and weights must be equal-length vectors")
        if self.kernel.kind != "gaussian":
            if nodes[0] != 0.0:
                raise DomainError("the first quadrature node must sit at t = 0")
            if np.any(np.diff(nodes) <= 0):
                raise DomainError("quadrature nodes must increase strictly")
        if np.any(weights < 0) or not np.all(np.isfinite(weights)):
            raise DomainError("quadrature weights must be non-negative and finite")
        nodes.setflags(write=False)
        weights.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "weights", weights)

    @property
    def rank(self) -> int:
        return int(self.nodes.size)


def _mesh_parameter(M: int, C0: float) -> float:
    # log(max(M, 2)) keeps the degenerate M=1 rule valid (nodes must increase)
    return C0 * math.log(max(M, 2)) / M


def _expansion_values(nodes, weights, r):
    r = np.asarray(r, dtype=np.float64)
    return (weights[None, :] * np.exp(-np.outer(r * r, nodes * nodes))).sum(axis=1)


def _newton_rule_arrays(M: int, h: float, alpha: float):
    u = np.arange(M + 1) * h
    nodes = alpha * np.sinh(u)
    weights = (2.0 / SQRT_PI) * alpha * np.cosh(u) * h
    weights[0] *= 0.5  # symmetric fold counts the k=0 term once
    return nodes, weights


def _calibrate_newton(M: int, h: float, r_lo: float, r_hi: float) -> float:
    """Golden-section search for the node scale with the smallest sup error.

    Deterministic: fixed probe set and iteration count.
    """
    probes = np.geomspace(r_lo, r_hi, _CAL_PROBES)
    target = 1.0 / probes

    def sup_err(log_alpha: float) -> float:
        nodes, weights = _newton_rule_arrays(M, h, math.exp(log_alpha))
        vals = _expansion_values(nodes, weights, probes)
        return float(np.max(np.abs(vals - target) / target))

    lo, hi = math.log(1e-6), math.log(10.0)
    inv_phi = (math.sqrt(5.0) - 1.0) / 2.0
    c = hi - inv_phi * (hi - lo)
    d = lo + inv_phi * (hi - lo)
    fc, fd = sup_err(c), sup_err(d)
    for _ in range(_CAL_ITERS):
        if fc < fd:
            hi, d, fd = d, c, fc
            c = hi - inv_phi * (hi - lo)
            fc = sup_err(c)
        else:
            lo, c, fc = c, d, fd
            d = lo + inv_phi * (hi - lo)
            fd = sup_err(d)
    return math.exp(0.5 * (lo + hi))


def _density(kernel: RadialKernel, t: np.ndarray) -> np.ndarray:
    """Laplace-Gauss density a(t) of the kernel, a(0) taken as the limit."""
    t = np.asarray(t, dtype=np.float64)
    if kernel.kind == "newton":
        return np.full_like(t, 2.0 / SQRT_PI)
    lam = kernel.lam
    safe = np.where(t > 0, t, 1.0)
    damp = np.where(t > 0, np.exp(-lam * lam / (4.0 * safe * safe)), 0.0)
    if kernel.kind == "yukawa":
        return (2.0 / SQRT_PI) * damp
    if kernel.kind == "slater":
        return (lam / SQRT_PI) * damp / np.where(t > 0, safe * safe, 1.0)
    raise CapabilityError(f"no Laplace-Gauss density for kernel {kernel.kind!r}")


def _geometric_rule_arrays(kernel: RadialKernel, M: int, t_lo: float, t_hi: float):
    v = np.linspace(math.log(t_lo), math.log(t_hi), M)
    t = np.exp(v)
    hv = v[1] - v[0] if M > 1 else 1.0
    a = _density(kernel, t) * t * hv
    if M > 1:
        a[0] *= 0.5
        a[-1] *= 0.5
    nodes = np.concatenate([[0.0], t])
    weights = np.concatenate([[0.0], a])
    return nodes, weights


def _calibrate_geometric(kernel: RadialKernel, M: int, r_lo: float, r_hi: float):
    """Coordinate descent on (t_lo, t_hi) for Yukawa/Slater rules."""
    probes = np.geomspace(r_lo, r_hi, _CAL_PROBES)
    target = kernel(probes)

    def sup_err(x) -> float:
        nodes, weights = _geometric_rule_arrays(kernel, M, math.exp(x[0]), math.exp(x[1]))
        vals = _expansion_values(nodes, weights, probes)
        return float(np.max(np.abs(vals - target) / np.abs(target)))

    x = [
        math.log(max(math.sqrt(kernel.lam / (2.0 * r_hi)) / 4.0, 1e-4)),
        math.log(math.sqrt(math.log(1e8)) / r_lo),
    ]
    inv_phi = (math.sqrt(5.0) - 1.0) / 2.0
    bounds = [(x[0] - 5.0, x[0] + 5.0), (x[1] - 5.0, x[1] + 5.0)]
    for _ in range(6):
        for dim in (0, 1):
            lo, hi = bounds[dim]
            c = hi - inv_phi * (hi - lo)
            d = lo + inv_phi * (hi - lo)
            xc = list(x)
            xd = list(x)
            xc[dim], xd[dim] = c, d
            fc, fd = sup_err(xc), sup_err(xd)
            for _ in range(40):
                if fc < fd:
                    hi, d, fd = d, c, fc
                    c = hi - inv_phi * (hi - lo)
                    xc[dim] = c
                    fc = sup_err(xc)
                else:
                    lo, c, fc = c, d, fd
                    d = lo + inv_phi * (hi - lo)
                    xd[dim] = d
                    fd = sup_err(xd)
            x[dim] = 0.5 * (lo + hi)
    return math.exp(x[0]), math.exp(x[1])


def build_quadrature(
    kernel: RadialKernel,
    M: int,
    C0: float = 3.0,
    r_range: tuple = DEFAULT_R_RANGE,
) -> QuadratureRule:
    """Construct the Gaussian-sum rule for a kernel.

    ``M`` is the node index bound of the folded sum (``M+1`` stored terms
    for Newton); ``C0`` enters the mesh parameter ``h_M = C0*log(M)/M``.
    The rule is calibrated for radii in ``r_range`` and degrades gracefully
    outside it.
    """
    if M < 1:
        raise DomainError(f"M must be >= 1, got {M}")
    if not C0 > 0:
        raise DomainError(f"C0 must be positive, got {C0}")
    r_lo, r_hi = float(r_range[0]), float(r_range[1])
    if not (0 < r_lo < r_hi):
        raise DomainError(f"invalid radius range {r_range}")
    h = _mesh_parameter(M, C0)
    if kernel.kind == "gaussian":
        nodes = np.array([math.sqrt(kernel.lam)])
        weights = np.array([1.0])
        return QuadratureRule(
            kernel=kernel, M=M, C0=C0, h_M=h, nodes=nodes, weights=weights,
            r_range=(r_lo, r_hi), symmetric_folded=False,
        )
    if kernel.kind == "newton":
        alpha = _calibrate_newton(M, h, r_lo, r_hi)
        nodes, weights = _newton_rule_arrays(M, h, alpha)
        return QuadratureRule(
            kernel=kernel, M=M, C0=C0, h_M=h, nodes=nodes, weights=weights,
            r_range=(r_lo, r_hi), symmetric_folded=True,
        )
    if kernel.kind in ("yukawa", "slater"):
        t_lo, t_hi = _calibrate_geometric(kernel, M, r_lo, r_hi)
        nodes, weights = _geometric_rule_arrays(kernel, M, t_lo, t_hi)
        return QuadratureRule(
            kernel=kernel, M=M, C0=C0, h_M=h, nodes=nodes, weights=weights,
            r_range=(r_lo, r_hi), symmetric_folded=False,
        )
    raise CapabilityError(f"unsupported kernel kind {kernel.kind!r}")


def eval_expansion(rule: QuadratureRule, r):
    """Gaussian-sum value ``sum_k a_k exp(-t_k^2 r^2)``.

    Valid for ``r > 0``; the sum is finite at ``r = 0`` but radii below the
    calibrated range are not resolved.
    """
    arr = np.asarray(r, dtype=np.float64)
    if np.any(arr <= 0):
        raise DomainError("eval_expansion requires r > 0")
    vals = _expansion_values(rule.nodes, rule.weights, arr.reshape(-1))
    if np.isscalar(r) or arr.ndim == 0:
        return float(vals[0])
    return vals.reshape(arr.shape)


@dataclass(frozen=True)
class ReferenceCanonical:
    """Canonical grid tensor of one kernel centered at the origin.

    The three modes share a single set of side vectors; the tensor is kept
    in normal form (unit columns, quadrature weights times column norms as
    tensor weights).  ``doubled=True`` means the tensor lives on the
    accompanying ``2n`` grid whose points are all integer-offset multiples
    of ``h``, which is the variant consumed by shift-and-windowing.

    Entries are per-mode cell integrals (the ``integral`` rule) or midpoint
    values times ``h`` (the ``collocation`` rule); either way one entry is
    ``h^3`` times a pointwise kernel value.
    """

    tensor: CanonicalTensor
    rule: QuadratureRule
    grid: Grid3
    doubled: bool = False
    entry_rule: str = "integral"
    split_index: Optional[int] = None

    def __post_init__(self):
        n = self.grid.n
        if self.tensor.mode_sizes != (n, n, n):
            raise DomainError("reference tensor does not match its grid")
        if self.entry_rule not in ("integral", "collocation"):
            raise DomainError(f"unknown entry rule {self.entry_rule!r}")
        if self.split_index is not None and not (0 <= self.split_index < self.tensor.rank):
            raise DomainError(f"split index {self.split_index} out of range")

    @property
    def R(self) -> int:
        return self.tensor.rank

    @property
    def origin_index(self) -> int:
        return self.grid.origin_index

    def pointwise_value(self, offset, terms: slice = slice(None)) -> float:
        """Pointwise kernel-expansion value at an integer grid offset."""
        c = self.origin_index
        i = tuple(c + int(v) for v in offset)
        u = self.tensor.factors[0]
        w = self.tensor.weights[terms]
        cols = u[:, terms]
        h3 = self.grid.h ** 3
        return float(np.dot(w, cols[i[0]] * cols[i[1]] * cols[i[2]])) / h3

    def self_value(self, split_index: Optional[int] = None) -> float:
        """Long-range pointwise value at the origin (the energy self term)."""
        r_l = self.split_index if split_index is None else split_index
        if r_l is None:
            raise ConfigError("no split index set on this reference")
        return self.pointwise_value((0, 0, 0), terms=slice(0, r_l + 1))


def _entry_vectors(rule: QuadratureRule, coords: np.ndarray, h: float, entry_rule: str):
    """Per-node mode vectors b_i(t_k); shape (n, R)."""
    t = rule.nodes
    if entry_rule == "collocation":
        return np.exp(-np.outer(coords ** 2, t ** 2)) * h
    cols = np.empty((coords.size, t.size))
    for k, tk in enumerate(t):
        if tk == 0.0:
            cols[:, k] = h
        else:
            cols[:, k] = (SQRT_PI / (2.0 * tk)) * (
                erf(tk * (coords + 0.5 * h)) - erf(tk * (coords - 0.5 * h))
            )
    return cols


def project_kernel(
    rule: QuadratureRule,
    grid: Grid3,
    doubled: bool = False,
    entry_rule: str = "integral",
) -> ReferenceCanonical:
    """Project the Gaussian sum onto a grid as a reference canonical tensor.

    With ``doubled=True`` the tensor is built on the ``2n`` companion grid
    so that any in-box particle window fits without boundary branches.
    """
    if entry_rule not in ("integral", "collocation"):
        raise DomainError(f"unknown entry rule {entry_rule!r}")
    grid_eff = grid.doubled() if doubled else grid
    coords = grid_eff.coords()
    cols = _entry_vectors(rule, coords, grid_eff.h, entry_rule)
    norms = np.linalg.norm(cols, axis=0)
    safe = np.where(norms > 0, norms, 1.0)
    unit = cols / safe
    weights = rule.weights * norms ** 3
    side = np.ascontiguousarray(unit)
    tensor = CanonicalTensor(weights, (side, side, side))
    return ReferenceCanonical(
        tensor=tensor, rule=rule, grid=grid_eff, doubled=doubled, entry_rule=entry_rule
    )


def split_rank(
    ref: ReferenceCanonical,
    sigma: float,
    delta: float,
    criterion: str = "max_norm",
) -> int:
    """Smallest node index whose term falls below ``delta`` at radius ``sigma``.

    ``max_norm`` tests ``a_k * exp(-t_k^2 sigma^2)``; ``l1_norm`` tests the
    weight times the separable Gaussian mass over the sigma cube, the cube
    of the 1D erf integral (the per-mode 1D mass alone does not decay for
    rules whose weights carry the node-map Jacobian).  Terms ``0..R_l`` are
    the long-range part, the rest short-range.  When no node passes, the
    last index is returned with a warning (everything is treated as
    long-range).
    """
    if not sigma > 0:
        raise DomainError("sigma must be positive")
    if not (0 < delta < 1):
        raise DomainError("delta must lie in (0, 1)")
    t = ref.rule.nodes
    a = ref.rule.weights
    if criterion == "max_norm":
        crit = a * np.exp(-t * t * sigma * sigma)
    elif criterion == "l1_norm":
        mass = np.where(t > 0, SQRT_PI * erf(t * sigma) / np.where(t > 0, t, 1.0), 2.0 * sigma)
        crit = a * mass ** 3
    else:
        raise DomainError(f"unknown split criterion {criterion!r}")
    below = np.nonzero(crit <= delta)[0]
    last = ref.R - 1
    if below.size == 0:
        warnings.warn(
            "no quadrature term falls below delta at this sigma; treating the "
            "whole expansion as long-range",
            stacklevel=2,
        )
        return last
    return int(min(max(int(below[0]), 0), last))


def split_tensor(ref: ReferenceCanonical, split_index: int):
    """Exact additive split into (short, long) canonical tensors.

    Long range collects terms ``k = 0..R_l``, short range the remaining
    ``k = R_l+1..``; entrywise ``short + long`` equals the reference.
    """
    r_l = int(split_index)
    if not (0 <= r_l < ref.R):
        raise DomainError(f"split index {r_l} out of range [0, {ref.R - 1}]")
    t = ref.tensor
    long = CanonicalTensor(t.weights[: r_l + 1], tuple(f[:, : r_l + 1] for f in t.factors))
    short = CanonicalTensor(t.weights[r_l + 1 :], tuple(f[:, r_l + 1 :] for f in t.factors))
    return short, long


def effective_support(short: CanonicalTensor, delta: float, h: float) -> int:
    """Smallest cell radius gamma outside which all short terms are <= delta.

    Magnitudes are measured on the pointwise scale (entries divided by
    ``h^3``); by symmetry and unimodality the extreme entry at infinity
    distance ``d`` from the center is the one at offset ``(d, 0, 0)``.
    """
    if short.rank == 0:
        return 0
    if not delta > 0:
        raise DomainError("delta must be positive")
    n = short.mode_sizes[0]
    center = n // 2
    h3 = h ** 3
    gamma = 0
    u = short.factors[0]
    for k in range(short.rank):
        col = u[:, k]
        peak = float(col[center])
        scale = short.weights[k] * peak * peak / h3
        d = np.arange(1, n - center)
        profile = np.maximum(col[center + d], col[center - d])
        above = np.nonzero(scale * profile > delta)[0]
        if above.size:
            gamma = max(gamma, int(d[above[-1]]))
    return gamma
