"""Weighted Lichnerowicz operator Delta_f + 2 Rm on rotationally symmetric 2-tensors.

For h = a dr^2 + b psi^2 g_link (c = a - b, q = psi'/psi) the operator is

    (A h)_a = Delta_f a - 2 m q^2 c + 2 m K_rad b
    (A h)_b = Delta_f b + 2 q^2 c + 2 K_rad a + 2 (m-1) K_sph b,
    Delta_f u = u'' + (m q - f') u'.

It is discretised variationally: -<Ah, h>_f equals the discrete energy

    sum_edges W_{i+1/2}/dr [(da)^2 + m (db)^2] + sum_nodes w_i [2 m q^2 c^2 - 2 <Rm[h], h>]

with W the exact weight e^{-f} v at cell midpoints and w the trapezoid
weights, so A = M^{-1} S with S symmetric and M = diag(w, m w).  Self-adjointness
in L^2_f therefore holds to rounding.  Outer ends carry h = 0.  At a smooth
origin the node value is eliminated by minimising the energy of the first
cell under a(0) = b(0), which leaves a(0) = b(0) = (a_1 + m b_1)/n.

Unknowns are interleaved (a_0, b_0, a_1, b_1, ...) over the active nodes so
the symmetric matrices have lower bandwidth 2.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import NumericalError, ResonanceError, ValidationError
from .geometry import Background
from .tensors import SymTensorField, check_grid, grad_norm_sq, pointwise_norm

__all__ = [
    "SymTensorField",
    "OperatorMatrix",
    "SpectralDecomposition",
    "assemble",
    "inner_f",
    "norm_f",
    "spectrum",
    "project",
    "check_weighted_inequalities",
    "eigenmode_growth_fit",
]

BANDWIDTH = 2


def _band_add(band: np.ndarray, i: int | np.ndarray, j: int | np.ndarray, val) -> None:
    """Accumulate into lower banded storage band[i - j, j] (requires i >= j)."""
    np.add.at(band, (i - j, j), val)


@dataclass(frozen=True, eq=False)
class OperatorMatrix:
    bg: Background
    active: np.ndarray  # node indices carrying unknowns
    band: np.ndarray  # S in lower banded storage, shape (3, 2 * n_active)
    mass: np.ndarray  # diagonal of M, interleaved

    @property
    def n_active(self) -> int:
        return int(self.active.size)

    def to_active(self, h: SymTensorField) -> np.ndarray:
        x = np.empty(2 * self.n_active)
        x[0::2] = h.a[self.active]
        x[1::2] = h.b[self.active]
        return x

    def from_active(self, x: np.ndarray) -> SymTensorField:
        N = self.bg.grid.size
        a = np.zeros(N)
        b = np.zeros(N)
        a[self.active] = x[0::2]
        b[self.active] = x[1::2]
        if self.bg.has_origin:
            s = (a[1] + self.bg.m * b[1]) / self.bg.dim
            a[0] = b[0] = s
        return SymTensorField(a, b)

    def apply_active(self, x: np.ndarray) -> np.ndarray:
        return banded_matvec(self.band, x) / self.mass

    def apply(self, h: SymTensorField) -> SymTensorField:
        check_grid(self.bg, h)
        return self.from_active(self.apply_active(self.to_active(h)))

    def similarity_band(self) -> np.ndarray:
        """M^{-1/2} S M^{-1/2} in lower banded storage."""
        s = 1.0 / np.sqrt(self.mass)
        out = np.zeros_like(self.band)
        n = self.band.shape[1]
        for k in range(BANDWIDTH + 1):
            out[k, : n - k] = self.band[k, : n - k] * s[: n - k] * s[k:]
        return out

    def similarity_matrix(self) -> sp.csr_matrix:
        band = self.similarity_band()
        n = band.shape[1]
        offs = [0]
        diags = [band[0]]
        for k in range(1, BANDWIDTH + 1):
            diags += [band[k, : n - k], band[k, : n - k]]
            offs += [-k, k]
        return sp.diags(diags, offs, format="csr")

    @property
    def matrix(self) -> sp.csr_matrix:
        """A as a 2N x 2N sparse matrix on stacked (a, b) over the full grid.

        Rows of outer nodes are zero (h = 0 there); origin rows reproduce the
        condensed value (a_1 + m b_1)/n of the image.
        """
        N = self.bg.grid.size
        n = 2 * self.n_active
        dense_band = sp.diags(
            [self.band[0]] + [self.band[k, : n - k] for k in range(1, BANDWIDTH + 1)]
            + [self.band[k, : n - k] for k in range(1, BANDWIDTH + 1)],
            [0] + list(range(-1, -BANDWIDTH - 1, -1)) + list(range(1, BANDWIDTH + 1)),
            format="csr",
        )
        Aint = sp.diags(1.0 / self.mass) @ dense_band
        stacked = np.concatenate([self.active, self.active + N])
        order = np.empty(n, dtype=int)
        order[0::2] = stacked[: self.n_active]
        order[1::2] = stacked[self.n_active :]
        coo = Aint.tocoo()
        rows = list(order[coo.row])
        cols = list(order[coo.col])
        vals = list(coo.data)
        if self.bg.has_origin:
            m, dim = self.bg.m, self.bg.dim
            row_a1 = Aint.getrow(0).tocoo()
            row_b1 = Aint.getrow(1).tocoo()
            for target in (0, N):
                for r, wgt in ((row_a1, 1.0 / dim), (row_b1, m / dim)):
                    rows += [target] * r.nnz
                    cols += list(order[r.col])
                    vals += list(wgt * r.data)
        return sp.csr_matrix((vals, (rows, cols)), shape=(2 * N, 2 * N))


def banded_matvec(band: np.ndarray, x: np.ndarray) -> np.ndarray:
    """y = S x for symmetric S in lower banded storage."""
    y = band[0] * x
    n = x.size
    for k in range(1, band.shape[0]):
        d = band[k, : n - k]
        y[k:] += d * x[: n - k]
        y[: n - k] += d * x[k:]
    return y


def assemble(bg: Background) -> OperatorMatrix:
    if not bg.is_soliton:
        raise ValidationError("operator assembly needs a soliton background")
    N = bg.grid.size
    if N > 10_000:
        raise ValidationError("grid too large for the dense eigensolve budget (N <= 1e4)")
    m = bg.m
    dr = bg.h
    active = np.arange(1, N - 1)
    na = active.size
    w = bg.grid.quad_weights[active]
    q = bg.q[active]
    Krad = bg.K_rad[active]
    Ksph = bg.K_sph[active]
    # Quadratic form E(x) = x^T H x; S = -H.
    H = np.zeros((BANDWIDTH + 1, 2 * na))
    ia = 2 * np.arange(na)
    ib = ia + 1

    # Edges between consecutive active nodes i, i+1 use W at node index i + 1/2.
    cw = bg.w_half[active[:-1]] / dr
    for idx, mult in ((ia, 1.0), (ib, float(m))):
        _band_add(H, idx[:-1], idx[:-1], mult * cw)
        _band_add(H, idx[1:], idx[1:], mult * cw)
        _band_add(H, idx[1:], idx[:-1], -mult * cw)
    # Edge from the last active node to the zero outer node.
    c_out = bg.w_half[N - 2] / dr
    _band_add(H, ia[-1], ia[-1], c_out)
    _band_add(H, ib[-1], ib[-1], m * c_out)
    # Left end: origin condensation or a zero outer node.
    c_in = bg.w_half[0] / dr
    if bg.has_origin:
        c0 = c_in * m / bg.dim
        _band_add(H, ia[0], ia[0], c0)
        _band_add(H, ib[0], ib[0], c0)
        _band_add(H, ib[0], ia[0], -c0)
    else:
        _band_add(H, ia[0], ia[0], c_in)
        _band_add(H, ib[0], ib[0], m * c_in)

    kap = 2.0 * m * q**2 * w
    _band_add(H, ia, ia, kap)
    _band_add(H, ib, ib, kap)
    _band_add(H, ib, ia, -kap - 2.0 * m * Krad * w)
    _band_add(H, ib, ib, -2.0 * m * (m - 1) * Ksph * w)

    mass = np.empty(2 * na)
    mass[0::2] = w
    mass[1::2] = m * w
    if np.any(mass <= 0):
        raise NumericalError("nonpositive quadrature weight on an active node")
    return OperatorMatrix(bg, active, -H, mass)


def inner_f(bg: Background, h1: SymTensorField, h2: SymTensorField) -> float:
    """L^2_f inner product; the link block counts with multiplicity m."""
    check_grid(bg, h1, h2)
    w = bg.grid.quad_weights
    return float(np.dot(w, h1.a * h2.a) + bg.m * np.dot(w, h1.b * h2.b))


def norm_f(bg: Background, h: SymTensorField) -> float:
    return float(np.sqrt(max(inner_f(bg, h, h), 0.0)))


@dataclass(frozen=True, eq=False)
class SpectralDecomposition:
    bg: Background
    eigenvalues: np.ndarray
    eigenfields: List[SymTensorField]
    lambda_star: float
    K: int

    def coefficients(self, h: SymTensorField, count: Optional[int] = None) -> np.ndarray:
        count = self.K if count is None else count
        w = self.bg.grid.quad_weights
        m = self.bg.m
        return np.array(
            [np.dot(w, h.a * e.a) + m * np.dot(w, h.b * e.b) for e in self.eigenfields[:count]]
        )

    def combine(self, coeffs: np.ndarray) -> SymTensorField:
        N = self.bg.grid.size
        a = np.zeros(N)
        b = np.zeros(N)
        for c, e in zip(coeffs, self.eigenfields):
            a += c * e.a
            b += c * e.b
        return SymTensorField(a, b)

    def to_json(self) -> dict:
        return {
            "eigenvalues": [float(v) for v in self.eigenvalues],
            "K": int(self.K),
            "lambda_star": float(self.lambda_star),
        }


# Eigenvectors are accurate to rounding in the weighted norm, so pointwise
# errors grow like eps * e^{f/2}.  Below F_TRUST that is under 1e-9; between
# F_TRUST and F_CUT the eigenfields are tapered to zero.
F_TRUST = 30.0
F_CUT = 40.0


def _taper(bg: Background) -> Optional[np.ndarray]:
    if bg.f is None or np.max(bg.f) <= F_TRUST:
        return None
    x = np.clip((bg.f - F_TRUST) / (F_CUT - F_TRUST), 0.0, 1.0)
    return 1.0 - x**3 * (10.0 - 15.0 * x + 6.0 * x**2)


def _clean_fields(bg: Background, fields: List[SymTensorField]) -> List[SymTensorField]:
    """Taper away the rounding-dominated tails, then restore orthonormality."""
    chi = _taper(bg)
    if chi is None:
        return fields
    fields = [SymTensorField(chi * h.a, chi * h.b) for h in fields]
    G = np.array([[inner_f(bg, u, v) for v in fields] for u in fields])
    w, V = np.linalg.eigh(G)
    T = V @ np.diag(w**-0.5) @ V.T
    out = []
    for row in T:
        a = sum(c * h.a for c, h in zip(row, fields))
        b = sum(c * h.b for c, h in zip(row, fields))
        out.append(SymTensorField(a, b))
    return out


def _fix_sign(bg: Background, h: SymTensorField) -> SymTensorField:
    # Deterministic orientation: the largest-magnitude weighted entry is positive.
    w = np.sqrt(bg.grid.quad_weights)
    v = np.concatenate([w * h.a, w * h.b])
    k = int(np.argmax(np.abs(v)))
    return h if v[k] >= 0 else -h


def spectrum(opm: OperatorMatrix, bg: Background, m: int, lambda_star: float) -> SpectralDecomposition:
    """Top-m eigenpairs of A, L^2_f-orthonormal, plus the split index K."""
    n = 2 * opm.n_active
    if not 1 <= m <= n:
        raise ValidationError("number of modes must be in [1, 2N]")
    if not lambda_star < 0:
        raise ValidationError("lambda_star must be negative")
    B = opm.similarity_matrix()
    # Shift above the Rayleigh-quotient bound so the nearest eigenvalues are the top ones.
    sigma = 2.0 * float(np.max(bg.rm_norm)) + 1.0
    if m >= n - 1 or n <= 64:
        vals, vecs = sla.eigh(B.toarray(), subset_by_index=(n - m, n - 1))
    else:
        vals, vecs = spla.eigsh(B.tocsc(), k=m, sigma=sigma, which="LM", v0=np.ones(n), tol=0.0)
    order = np.argsort(vals)[::-1]
    vals = vals[order]
    vecs = vecs[:, order] / np.sqrt(opm.mass)[:, None]
    fields = _clean_fields(bg, [opm.from_active(vecs[:, j]) for j in range(m)])
    fields = [_fix_sign(bg, h) for h in fields]
    gap = np.min(np.abs(vals - lambda_star))
    if gap < 1e-6:
        raise ResonanceError(f"resonant lambda_star: {lambda_star} is within {gap:.2e} of an eigenvalue")
    K = int(np.sum(vals > lambda_star))
    if K == m:
        raise ValidationError("all computed eigenvalues exceed lambda_star; request more modes")
    return SpectralDecomposition(bg, vals, fields, float(lambda_star), K)


def project(dec: SpectralDecomposition, h: SymTensorField) -> Tuple[SymTensorField, SymTensorField, np.ndarray]:
    check_grid(dec.bg, h)
    coeffs = dec.coefficients(h)
    hu = dec.combine(coeffs)
    return hu, h - hu, coeffs


@dataclass(frozen=True)
class WeightedInequalityReport:
    lhs1: float
    rhs1: float
    lhs2: float
    rhs2: float

    @property
    def grad_f_ok(self) -> bool:
        return self.lhs1 <= self.rhs1 * (1.0 + 1e-12) + 1e-300

    @property
    def root_f_ok(self) -> bool:
        return self.lhs2 <= self.rhs2 * (1.0 + 1e-12) + 1e-300

    @property
    def holds(self) -> bool:
        return self.grad_f_ok and self.root_f_ok


def check_weighted_inequalities(bg: Background, T: SymTensorField) -> WeightedInequalityReport:
    """Both sides of the |grad f| and sqrt(f) weighted estimates.

    lhs1 = int |grad f|^2 |T|^2,  rhs1 = int 4 |grad T|^2 + n |T|^2,
    lhs2 = int f |T|^2,           rhs2 = sup|R| ||T||^2 + lhs1.
    A relative slack of 1e-12 absorbs rounding where the second estimate is
    an identity (constant R).
    """
    if not bg.is_soliton:
        raise ValidationError("weighted inequalities need a soliton background")
    check_grid(bg, T)
    N = bg.grid.size
    nz = np.flatnonzero((T.a != 0) | (T.b != 0))
    lo, hi = (T.support_hint if T.support_hint is not None else ((nz[0], nz[-1]) if nz.size else (1, 1)))
    # a smooth origin is an interior point; any other end is a boundary
    if nz.size and (hi >= N - 1 or (not bg.has_origin and lo < 1)):
        raise ValidationError("support touches the grid boundary")
    t2 = pointwise_norm(bg, T) ** 2
    g2 = grad_norm_sq(bg, T)
    w = bg.grid.quad_weights
    lhs1 = float(np.dot(w, bg.f1**2 * t2))
    rhs1 = float(np.dot(w, 4.0 * g2 + bg.dim * t2))
    lhs2 = float(np.dot(w, bg.f * t2))
    rhs2 = float(np.max(np.abs(bg.R)) * np.dot(w, t2) + lhs1)
    return WeightedInequalityReport(lhs1, rhs1, lhs2, rhs2)


@dataclass(frozen=True)
class GrowthFit:
    exponent: float
    C: float
    bound: float
    satisfied: bool


def eigenmode_growth_fit(dec: SpectralDecomposition, bg: Background, j: int, delta: float = 0.1) -> GrowthFit:
    """Fit |h_j| ~ C f^exponent over the outer half of the positive axis.

    ``j`` is zero-based.  The fit window is r in [r_top/2, r_top] where
    r_top = min(0.9 r_end, largest r with f <= F_TRUST).  The first bound
    keeps clear of the Dirichlet boundary layer.  The second keeps clear of
    the region where weighted rounding error, amplified by e^{f/2}, swamps
    the eigenfield.  ``satisfied``
    reports exponent <= max(-lambda_j, 0) + delta + 0.1.
    """
    vals = dec.eigenvalues
    if not 0 <= j < vals.size:
        raise ValidationError("mode index out of range")
    nbrs = [vals[k] for k in (j - 1, j + 1) if 0 <= k < vals.size]
    if nbrs and min(abs(vals[j] - v) for v in nbrs) <= 1e-3:
        raise NumericalError("eigenfield numerically degenerate")
    r = bg.nodes
    trusted = r[(r >= 0) & (bg.f <= F_TRUST)]
    if trusted.size == 0:
        raise NumericalError("no trusted region to fit growth")
    r_top = min(0.9 * r[-1], trusted[-1])
    sel = (r >= 0.5 * r_top) & (r <= r_top)
    mag = pointwise_norm(bg, dec.eigenfields[j])[sel]
    fv = bg.f[sel]
    keep = (mag > 0) & (fv > 0)
    if keep.sum() < 3:
        raise NumericalError("not enough support to fit growth")
    slope, icpt = np.polyfit(np.log(fv[keep]), np.log(mag[keep]), 1)
    bound = max(-vals[j], 0.0) + delta
    return GrowthFit(float(slope), float(np.exp(icpt)), float(bound), bool(slope <= bound + 0.1))
