"""RS-structured interpolation operator and conjugate-gradient solver.

The kernel interdistance matrix on a full grid factorizes, after range
separation, into ``R_l`` Kronecker products of symmetric Toeplitz matrices
(matvec by 1D FFTs through a length ``2n`` circulant embedding) plus a
banded near-field correction.  Inside the correction band the operator
stores exact kernel values, so the expansion error lives only in the far
field and the matrix stays well defined at the ``r = 0`` singularity.

Case A treats the full grid; case B restricts to a subset of grid points by
embedding into the grid, applying the structured operator, and gathering.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.ndimage
import scipy.sparse

from .errors import CapabilityError, CapacityError, ConfigError, DomainError, SolverError
from .kernels import RadialKernel, ReferenceCanonical
from .particles import Box3, Grid3

_MAX_BAND_VOLUME = 4_000_000
_MAX_EMBED_N = 256


@dataclass(frozen=True)
class RSOperator:
    """Diagonal-plus-Kronecker-Toeplitz form of the kernel matrix.

    ``generators[:, k]`` is the first column of the k-th symmetric Toeplitz
    factor (shared by all three modes); ``near_kernel`` holds the banded
    exact-minus-long corrections as a ``(2*gamma+1)^3`` stencil.  For case B
    (``points`` set) the corrections are a sparse matrix over the points.
    """

    grid: Grid3
    kernel: RadialKernel
    split_index: int
    gamma: int
    weights: np.ndarray
    generators: np.ndarray
    emb_fft: np.ndarray
    near_kernel: Optional[np.ndarray] = None
    points: Optional[np.ndarray] = None
    near_matrix: Optional[object] = None
    origin_flagged: bool = False

    @property
    def shape(self) -> tuple:
        if self.points is not None:
            k = self.points.shape[0]
            return (k, k)
        n3 = self.grid.n ** 3
        return (n3, n3)


@dataclass(frozen=True)
class InterpolationProblem:
    """Samples on the operator's point set plus solver controls."""

    samples: np.ndarray
    kernel: RadialKernel
    tol: float = 1e-8
    max_iter: int = 1000

    def __post_init__(self):
        samples = np.ascontiguousarray(np.asarray(self.samples, dtype=np.float64).reshape(-1))
        if not (0 < self.tol < 1):
            raise ConfigError(f"tolerance must lie in (0,1), got {self.tol}")
        if self.max_iter < 1:
            raise ConfigError("max_iter must be positive")
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)


def _circulant_fft(column: np.ndarray) -> np.ndarray:
    n = column.size
    emb = np.concatenate([column, [0.0], column[-1:0:-1]])
    assert emb.size == 2 * n
    return np.fft.rfft(emb)


def _near_field_stencil(
    ref2n: ReferenceCanonical, generators: np.ndarray, weights: np.ndarray, gamma: int
):
    """Exact kernel values minus the long-part values on the offset band."""
    h = ref2n.grid.h
    d = np.arange(-gamma, gamma + 1)
    gl = generators[np.abs(d), :]
    long_vals = np.einsum("k,ak,bk,ck->abc", weights, gl, gl, gl, optimize=True)
    r = h * np.sqrt(
        d[:, None, None] ** 2 + d[None, :, None] ** 2 + d[None, None, :] ** 2
    )
    kernel = ref2n.rule.kernel
    flagged = False
    with np.errstate(divide="ignore", invalid="ignore"):
        exact = kernel(r)
    center = (gamma, gamma, gamma)
    if not np.isfinite(exact[center]):
        # singular kernels get the regularized Gaussian-sum value at r = 0
        exact[center] = ref2n.pointwise_value((0, 0, 0))
        flagged = True
    return exact - long_vals, flagged


def build_rs_operator(
    ref2n: ReferenceCanonical,
    split_index: int,
    gamma: int,
    points: Optional[np.ndarray] = None,
) -> RSOperator:
    """Assemble the RS operator from a doubled-grid kernel reference.

    ``points=None`` is case A (the point set is the whole grid); otherwise
    ``points`` holds integer grid indices of shape (K, 3), case B.
    """
    if not ref2n.doubled:
        raise ConfigError("the RS operator needs the doubled-grid reference")
    if ref2n.entry_rule != "collocation":
        raise ConfigError(
            "the interpolation operator is the collocation matrix; project the "
            "reference with entry_rule='collocation'"
        )
    if not (0 <= split_index < ref2n.R):
        raise DomainError(f"split index {split_index} out of range")
    if gamma < 0:
        raise DomainError("gamma must be non-negative")
    n = ref2n.grid.n // 2
    if gamma >= n:
        raise DomainError(f"gamma {gamma} must be below the grid size {n}")
    if (2 * gamma + 1) ** 3 > _MAX_BAND_VOLUME:
        raise CapacityError(
            f"near-field band with gamma={gamma} exceeds the memory budget"
        )
    h = ref2n.grid.h
    n0 = ref2n.origin_index
    n_terms = split_index + 1
    generators = np.ascontiguousarray(ref2n.tensor.factors[0][n0:n0 + n, :n_terms])
    weights = ref2n.tensor.weights[:n_terms] / h ** 3
    emb_fft = np.stack([_circulant_fft(generators[:, k]) for k in range(n_terms)])
    stencil, flagged = _near_field_stencil(ref2n, generators, weights, gamma)
    grid = Grid3(n, Box3(ref2n.grid.box.half_width / 2.0))
    if points is None:
        return RSOperator(
            grid=grid, kernel=ref2n.rule.kernel, split_index=split_index, gamma=gamma,
            weights=weights, generators=generators, emb_fft=emb_fft,
            near_kernel=stencil, origin_flagged=flagged,
        )
    pts = np.asarray(points, dtype=np.int64).reshape(-1, 3)
    if pts.min() < 0 or pts.max() >= n:
        raise DomainError("case-B points must be grid indices in [0, n)")
    near = _near_matrix(pts, stencil, gamma)
    return RSOperator(
        grid=grid, kernel=ref2n.rule.kernel, split_index=split_index, gamma=gamma,
        weights=weights, generators=generators, emb_fft=emb_fft,
        points=pts, near_matrix=near, origin_flagged=flagged,
    )


def _near_matrix(points: np.ndarray, stencil: np.ndarray, gamma: int):
    """Sparse near-field corrections over an explicit point set."""
    k = points.shape[0]
    rows, cols, vals = [], [], []
    chunk = max(1, 20_000_000 // max(k, 1))
    for lo in range(0, k, chunk):
        hi = min(lo + chunk, k)
        diff = points[lo:hi, None, :] - points[None, :, :]
        mask = np.max(np.abs(diff), axis=2) <= gamma
        r, c = np.nonzero(mask)
        d = diff[r, c] + gamma
        rows.append(r + lo)
        cols.append(c)
        vals.append(stencil[d[:, 0], d[:, 1], d[:, 2]])
    return scipy.sparse.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(k, k)
    )


def _toeplitz_apply_axis(x: np.ndarray, fhat: np.ndarray, axis: int, n: int) -> np.ndarray:
    spec = np.fft.rfft(x, n=2 * n, axis=axis)
    shape = [1, 1, 1]
    shape[axis] = fhat.size
    out = np.fft.irfft(spec * fhat.reshape(shape), n=2 * n, axis=axis)
    slicer = [slice(None)] * 3
    slicer[axis] = slice(0, n)
    return out[tuple(slicer)]


def _apply_long(op: RSOperator, x: np.ndarray) -> np.ndarray:
    n = op.grid.n
    out = np.zeros_like(x)
    for k in range(op.weights.size):
        t = x
        for axis in range(3):
            t = _toeplitz_apply_axis(t, op.emb_fft[k], axis, n)
        out += op.weights[k] * t
    return out


def rs_matvec(op: RSOperator, c):
    """Apply the operator: FFT Kronecker-Toeplitz far field plus banded
    near-field corrections; O(c N + d R_l N log n)."""
    n = op.grid.n
    if op.points is None:
        x = np.asarray(c, dtype=np.float64)
        flat_in = x.ndim == 1
        if flat_in:
            if x.size != n ** 3:
                raise ConfigError(f"expected {n ** 3} entries, got {x.size}")
            x = x.reshape(n, n, n)
        elif x.shape != (n, n, n):
            raise ConfigError(f"expected shape {(n, n, n)}, got {x.shape}")
        out = _apply_long(op, x)
        out += scipy.ndimage.correlate(x, op.near_kernel, mode="constant", cval=0.0)
        return out.reshape(-1) if flat_in else out
    vec = np.asarray(c, dtype=np.float64).reshape(-1)
    if vec.size != op.points.shape[0]:
        raise ConfigError(f"expected {op.points.shape[0]} entries, got {vec.size}")
    if n > _MAX_EMBED_N:
        raise CapacityError(f"case-B embedding needs an n^3 work grid; n={n} is too large")
    grid_vec = np.zeros((n, n, n))
    grid_vec[op.points[:, 0], op.points[:, 1], op.points[:, 2]] = vec
    far = _apply_long(op, grid_vec)
    out = far[op.points[:, 0], op.points[:, 1], op.points[:, 2]]
    out += op.near_matrix @ vec
    return out


def solve_interpolation(op: RSOperator, problem: InterpolationProblem):
    """Conjugate gradients on the RS operator.

    Returns the coefficient vector and the relative-residual history.  The
    solver is restricted to the positive definite Gaussian kernel; other
    radial kernels are interpolation-theoretically delicate and remain an
    extension point.
    """
    if problem.kernel.kind != "gaussian" or op.kernel.kind != "gaussian":
        raise CapabilityError(
            "solve_interpolation supports only the gaussian kernel; "
            f"got {problem.kernel.kind!r}/{op.kernel.kind!r}"
        )
    b = problem.samples
    expect = op.points.shape[0] if op.points is not None else op.grid.n ** 3
    if b.size != expect:
        raise ConfigError(f"sample vector length {b.size} does not match the operator")
    b_norm = float(np.linalg.norm(b))
    if b_norm == 0.0:
        return np.zeros_like(b), np.zeros(1)
    x = np.zeros_like(b)
    r = b.copy()
    p = r.copy()
    rho = float(r @ r)
    history = [1.0]
    for _ in range(problem.max_iter):
        ap = rs_matvec(op, p)
        p_ap = float(p @ ap)
        if p_ap <= 0.0:
            raise SolverError(
                f"negative curvature: the {op.kernel.kind} kernel matrix is not "
                "positive definite on this point set"
            )
        alpha = rho / p_ap
        x = x + alpha * p
        r = r - alpha * ap
        rel = float(np.linalg.norm(r)) / b_norm
        history.append(rel)
        if rel <= problem.tol:
            break
        rho_new = float(r @ r)
        p = r + (rho_new / rho) * p
        rho = rho_new
    return x, np.asarray(history)
