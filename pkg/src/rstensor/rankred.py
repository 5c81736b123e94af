"""Rank reduction of canonical tensors without materializing them.

The pipeline follows the classical two-stage scheme: a reduced HOSVD builds
orthogonal mode bases from SVDs of the (weight-absorbed) side matrices, an
ALS refinement iterates SVDs of partially projected matricizations, and a
core factorization converts the result back to canonical form with rank at
most ``r1 * min(r2, r3)``.

No routine here ever touches a dense ``n^3`` array; everything works on the
``n x R`` side matrices and small projected objects, so grids with
``n = 4096`` and ranks in the tens of thousands stay tractable.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ConfigError, DomainError, NumericalError
from .formats import CanonicalTensor, TuckerTensor

_CHUNK = 2048
_GRAM_SWITCH = 8  # use the Gram path when R exceeds this multiple of n


@dataclass(frozen=True)
class SvdSpectrum:
    """Per-mode singular values and left singular vectors of side matrices."""

    values: tuple
    vectors: tuple

    def __post_init__(self):
        if len(self.values) != 3 or len(self.vectors) != 3:
            raise DomainError("spectrum needs three modes")
        for s in self.values:
            if s.size > 1 and np.any(np.diff(s) > 1e-12 * max(s[0], 1.0)):
                raise DomainError("singular values must be non-increasing")


@dataclass(frozen=True)
class ReductionConfig:
    """Target ranks or tolerance for the reduction, plus ALS controls.

    Exactly one of ``ranks`` and ``eps`` selects the truncation; ``eps``
    picks the smallest rank whose singular-value tail energy is at most
    ``eps`` times the total.  ``eps_c2t`` stops the ALS sweeps once the fit
    gain falls below it, ``eps_t2c`` truncates the core factorization.
    """

    ranks: Optional[tuple] = None
    eps: Optional[float] = None
    max_sweeps: int = 3
    eps_c2t: float = 1e-5
    eps_t2c: float = 1e-6

    def __post_init__(self):
        if (self.ranks is None) == (self.eps is None):
            raise ConfigError("set exactly one of ranks and eps")
        if self.ranks is not None:
            object.__setattr__(self, "ranks", tuple(int(r) for r in self.ranks))
            if len(self.ranks) != 3 or min(self.ranks) < 1:
                raise ConfigError(f"ranks must be three positive integers, got {self.ranks}")
        if self.eps is not None and not (0 < self.eps < 1):
            raise ConfigError(f"eps must lie in (0, 1), got {self.eps}")
        if self.max_sweeps < 0:
            raise ConfigError("max_sweeps must be non-negative")


def _fix_signs(z: np.ndarray) -> np.ndarray:
    """Make the largest-magnitude component of each column positive."""
    if z.size == 0:
        return z
    lead = np.abs(z).argmax(axis=0)
    signs = np.sign(z[lead, np.arange(z.shape[1])])
    signs[signs == 0] = 1.0
    return z * signs


def _thin_svd(a: np.ndarray):
    """Left singular vectors and values of a possibly very wide matrix.

    For R much larger than n the Gram route (eigendecomposition of A A^T)
    avoids the O(n R^2) factorization; accuracy suffices for rank selection
    down to tail energies near machine precision.
    """
    n, r = a.shape
    if r > _GRAM_SWITCH * n and r > 512:
        gram = a @ a.T
        vals, vecs = np.linalg.eigh(gram)
        order = np.argsort(vals)[::-1]
        vals = np.clip(vals[order], 0.0, None)
        z = vecs[:, order]
        s = np.sqrt(vals)
    else:
        try:
            z, s, _ = np.linalg.svd(a, full_matrices=False)
        except np.linalg.LinAlgError as exc:
            raise NumericalError(f"SVD failed on a {a.shape} side matrix") from exc
    return _fix_signs(z), s


def side_svd(c: CanonicalTensor, weighted: bool = True) -> SvdSpectrum:
    """Thin SVD of each side matrix.

    With ``weighted=True`` (the algorithmic default) the absolute tensor
    weights are absorbed into every mode's columns before that mode's SVD,
    so the per-mode spectra carry the term magnitudes and the eps-rank rule
    sees them; when the columns of the complementary modes are mutually
    orthogonal these spectra coincide with those of the dense unfoldings.
    ``weighted=False`` factors the stored (unit-column) side matrices as in
    the stability analysis.  Signs follow the largest-component-positive
    convention.
    """
    if c.rank == 0:
        raise DomainError("side_svd needs a nonempty tensor")
    scale = np.abs(c.weights) if weighted else None
    values = []
    vectors = []
    for u in c.factors:
        z, s = _thin_svd(u * scale if weighted else u)
        values.append(s)
        vectors.append(z)
    return SvdSpectrum(values=tuple(values), vectors=tuple(vectors))


def _eps_rank(s: np.ndarray, eps: float) -> int:
    total = float(np.sum(s * s))
    if total == 0.0:
        return 1
    tail = np.cumsum((s * s)[::-1])[::-1]  # tail[r] = sum_{k>=r} s_k^2
    ok = np.nonzero(tail <= eps * total)[0]
    r = int(ok[0]) if ok.size else s.size
    return max(r, 1)


def _select_ranks(c: CanonicalTensor, spectrum: SvdSpectrum, cfg: ReductionConfig):
    limit = [min(n, c.rank) for n in c.mode_sizes]
    if cfg.ranks is not None:
        for r, lim in zip(cfg.ranks, limit):
            if r > lim:
                raise ConfigError(f"requested rank {r} exceeds min(n, R) = {lim}")
        return cfg.ranks
    return tuple(
        min(_eps_rank(s, cfg.eps), lim) for s, lim in zip(spectrum.values, limit)
    )


def _core_from_projections(weights, w1, w2, w3) -> np.ndarray:
    """Core tensor sum_k xi_k w1[:,k] x w2[:,k] x w3[:,k], chunked over k."""
    r1, r2, r3 = w1.shape[0], w2.shape[0], w3.shape[0]
    core = np.zeros((r1, r2, r3))
    for lo in range(0, weights.size, _CHUNK):
        hi = min(lo + _CHUNK, weights.size)
        core += np.einsum(
            "k,ak,bk,ck->abc", weights[lo:hi], w1[:, lo:hi], w2[:, lo:hi], w3[:, lo:hi],
            optimize=True,
        )
    return core


def rhosvd(
    c: CanonicalTensor,
    cfg: ReductionConfig,
    spectrum: Optional[SvdSpectrum] = None,
) -> TuckerTensor:
    """Reduced HOSVD: project the canonical tensor onto the dominant left
    singular vectors of its side matrices, entirely in factored form."""
    if spectrum is None:
        spectrum = side_svd(c)
    ranks = _select_ranks(c, spectrum, cfg)
    factors = tuple(z[:, :r] for z, r in zip(spectrum.vectors, ranks))
    projected = [f.T @ u for f, u in zip(factors, c.factors)]
    core = _core_from_projections(c.weights, *projected)
    return TuckerTensor(core=core, factors=factors)


def rhosvd_error_bound(
    c: CanonicalTensor, spectrum: SvdSpectrum, ranks
) -> float:
    """Computable bracket of the RHOSVD stability bound.

    Returns ``sum_ell sqrt(sum_{k > r_ell} sigma_{ell,k}^2)``; the moderate
    constant and the tensor norm multiply it separately.  For the stability
    estimate pass the unit-column spectrum, ``side_svd(c, weighted=False)``.
    """
    ranks = tuple(int(r) for r in ranks)
    total = 0.0
    for s, r in zip(spectrum.values, ranks):
        if r < 0:
            raise DomainError("ranks must be non-negative")
        tail = s[r:]
        total += float(np.sqrt(np.sum(tail * tail)))
    return total


def _als_matricization(c: CanonicalTensor, projected, mode: int) -> np.ndarray:
    """Mode-``mode`` unfolding of the partially projected tensor.

    Rows live in the physical mode-``mode`` space, columns in the tensor
    product of the two projected complements; built chunkwise over the
    canonical terms.
    """
    others = [m for m in range(3) if m != mode]
    wa, wb = projected[others[0]], projected[others[1]]
    ra, rb = wa.shape[0], wb.shape[0]
    u = c.factors[mode]
    out = np.zeros((u.shape[0], ra * rb))
    for lo in range(0, c.rank, _CHUNK):
        hi = min(lo + _CHUNK, c.rank)
        kr = (wa[:, None, lo:hi] * wb[None, :, lo:hi]).reshape(ra * rb, hi - lo)
        out += (u[:, lo:hi] * c.weights[lo:hi]) @ kr.T
    return out


def c2t_als(
    c: CanonicalTensor,
    cfg: ReductionConfig,
    spectrum: Optional[SvdSpectrum] = None,
) -> TuckerTensor:
    """Canonical-to-Tucker transform: RHOSVD start plus ALS sweeps.

    Each sweep updates modes 1, 2, 3 in order by an SVD of the matricized
    partially projected tensor; sweeps stop after ``max_sweeps`` or once the
    relative fit gain drops below ``eps_c2t``.  The Frobenius fit (norm of
    the projected core) never decreases.
    """
    if spectrum is None:
        spectrum = side_svd(c)
    ranks = _select_ranks(c, spectrum, cfg)
    factors = [z[:, :r] for z, r in zip(spectrum.vectors, ranks)]
    prev_fit = None
    for _ in range(cfg.max_sweeps):
        for mode in range(3):
            projected = [f.T @ u for f, u in zip(factors, c.factors)]
            mat = _als_matricization(c, projected, mode)
            z, _ = _thin_svd(mat)
            factors[mode] = z[:, : ranks[mode]]
        projected = [f.T @ u for f, u in zip(factors, c.factors)]
        core = _core_from_projections(c.weights, *projected)
        fit = float(np.linalg.norm(core))
        if prev_fit is not None and fit - prev_fit <= cfg.eps_c2t * max(fit, 1e-300):
            break
        prev_fit = fit
    projected = [f.T @ u for f, u in zip(factors, c.factors)]
    core = _core_from_projections(c.weights, *projected)
    return TuckerTensor(core=core, factors=tuple(factors))


def tucker_to_canonical(t: TuckerTensor, eps_t2c: float = 1e-6) -> CanonicalTensor:
    """Canonical form of a Tucker tensor with rank <= r1 * min(r2, r3).

    The mode-1 unfolding of the core is factored by an SVD whose small
    singular values are dropped at ``eps_t2c`` relative tail energy; every
    right factor is factored exactly once more.  Entries reproduce the
    Tucker tensor within ``eps_t2c`` times its norm.
    """
    r1, r2, r3 = t.ranks
    core_norm = float(np.linalg.norm(t.core))
    if core_norm == 0.0:
        return CanonicalTensor.empty(t.mode_sizes)
    b1 = t.core.reshape(r1, r2 * r3)
    u, s, vt = np.linalg.svd(b1, full_matrices=False)
    keep = _eps_rank(s, eps_t2c ** 2) if eps_t2c > 0 else int(np.sum(s > 0))
    keep = max(min(keep, int(np.sum(s > 0))), 1)
    weights = []
    cols1, cols2, cols3 = [], [], []
    v1, v2, v3 = t.factors
    for j in range(keep):
        uj = u[:, j]
        vj = vt[j] * s[j]
        lead = int(np.abs(uj).argmax())
        if uj[lead] < 0:
            uj, vj = -uj, -vj
        w = vj.reshape(r2, r3)
        p, tau, qt = np.linalg.svd(w, full_matrices=False)
        for i in range(tau.size):
            if tau[i] <= 1e-15 * max(tau[0], 1e-300):
                break
            pi = p[:, i]
            qi = qt[i]
            lead = int(np.abs(pi).argmax())
            if pi[lead] < 0:
                pi, qi = -pi, -qi
            weights.append(tau[i])
            cols1.append(v1 @ uj)
            cols2.append(v2 @ pi)
            cols3.append(v3 @ qi)
    if not weights:
        return CanonicalTensor.empty(t.mode_sizes)
    return CanonicalTensor(
        np.asarray(weights),
        (np.column_stack(cols1), np.column_stack(cols2), np.column_stack(cols3)),
    )
