"""Rotationally symmetric 2-tensors h = a dr^2 + b psi^2 g_link and their covariant jets.

In the orthonormal frame (theta = dr, P = projection onto the link
directions) h = a theta(x)theta + b P.  With c = a - b and q = psi'/psi the
warped-product Christoffel symbols give

    grad h   = theta (x) (a' theta theta + b' P) + c q Q,
    Q_kij    = P_ki theta_j + theta_i P_kj,

and differentiating once more (grad theta = q P, grad P = -q (P theta + theta P))

    hess h_lkij = q P_lk (a' theta theta + b' P)_ij + theta_l theta_k (a'' theta theta + b'' P)_ij
                  + c' q theta_k Q_lij + (c q)' theta_l Q_kij
                  + c q^2 (P_ki P_lj + P_li P_kj - 2 P_lk theta_i theta_j
                           - theta_k P_li theta_j - theta_k theta_i P_lj).

The frame tensors are built explicitly with link dimension m, so every
contraction below is a plain einsum over indices 0..m.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from . import fd
from .errors import ValidationError
from .geometry import Background


@dataclass(frozen=True, eq=False)
class SymTensorField:
    a: np.ndarray
    b: np.ndarray
    support_hint: Optional[Tuple[int, int]] = None

    def __post_init__(self) -> None:
        a = np.asarray(self.a, dtype=float)
        b = np.asarray(self.b, dtype=float)
        if a.shape != b.shape or a.ndim != 1:
            raise ValidationError("a and b must be 1-D arrays of equal length")
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
            raise ValidationError("tensor field has non-finite entries")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)

    @classmethod
    def zeros(cls, n: int) -> "SymTensorField":
        return cls(np.zeros(n), np.zeros(n))

    def __add__(self, other: "SymTensorField") -> "SymTensorField":
        return SymTensorField(self.a + other.a, self.b + other.b)

    def __sub__(self, other: "SymTensorField") -> "SymTensorField":
        return SymTensorField(self.a - other.a, self.b - other.b)

    def __mul__(self, s: float) -> "SymTensorField":
        return SymTensorField(s * self.a, s * self.b)

    __rmul__ = __mul__

    def __neg__(self) -> "SymTensorField":
        return SymTensorField(-self.a, -self.b)

    def __len__(self) -> int:
        return self.a.size


def check_grid(bg: Background, *fields: SymTensorField) -> None:
    for h in fields:
        if h.a.size != bg.grid.size:
            raise ValidationError("tensor field does not match the grid")


def pointwise_norm(bg: Background, h: SymTensorField) -> np.ndarray:
    """|h|_g per node; the link block carries multiplicity m."""
    return np.sqrt(h.a**2 + bg.m * h.b**2)


@dataclass(frozen=True)
class RadialJet:
    a: np.ndarray
    a1: np.ndarray
    a2: np.ndarray
    b: np.ndarray
    b1: np.ndarray
    b2: np.ndarray
    cq: np.ndarray  # (a - b) psi'/psi
    cq1: np.ndarray  # derivative of cq
    cqq: np.ndarray  # (a - b) (psi'/psi)^2
    c1q: np.ndarray  # (a - b)' psi'/psi
    q: np.ndarray


def radial_jet(bg: Background, h: SymTensorField) -> RadialJet:
    """Finite-difference derivatives of (a, b) plus the Christoffel combinations.

    At a smooth origin a and b are even and c/r is odd; the limits
    c q -> 0, c q^2 -> c''(0)/2, (c q)' -> c''(0)/2, c' q -> c''(0) are used.
    """
    check_grid(bg, h)
    step = bg.h
    par = "even" if bg.has_origin else None
    a1, a2 = fd.d1(h.a, step, par), fd.d2(h.a, step, par)
    b1, b2 = fd.d1(h.b, step, par), fd.d2(h.b, step, par)
    c = h.a - h.b
    q = bg.q
    cq = c * q
    c1q = (a1 - b1) * q
    if bg.has_origin:
        cq[0] = 0.0
        cq1 = fd.d1(cq, step, "odd")
        cqq = cq * q
        c2_0 = a2[0] - b2[0]
        cqq[0] = 0.5 * c2_0
        c1q[0] = c2_0
    else:
        cq1 = fd.d1(cq, step)
        cqq = cq * q
    return RadialJet(h.a, a1, a2, h.b, b1, b2, cq, cq1, cqq, c1q, q)


def frame_basis(m: int) -> Tuple[np.ndarray, np.ndarray]:
    d = m + 1
    theta = np.zeros(d)
    theta[0] = 1.0
    P = np.eye(d)
    P[0, 0] = 0.0
    return theta, P


def frame_tensors(bg: Background, h: SymTensorField):
    """Per-node frame components of h, grad h and hess h.

    Returns arrays of shapes (N,d,d), (N,d,d,d), (N,d,d,d,d) with index
    order (deriv..., i, j); the first derivative index is the outermost.
    """
    jet = radial_jet(bg, h)
    th, P = frame_basis(bg.m)
    TT = np.outer(th, th)
    Q = np.einsum("ki,j->kij", P, th) + np.einsum("i,kj->kij", th, P)
    H = jet.a[:, None, None] * TT + jet.b[:, None, None] * P
    H1 = jet.a1[:, None, None] * TT + jet.b1[:, None, None] * P
    H2 = jet.a2[:, None, None] * TT + jet.b2[:, None, None] * P
    grad = np.einsum("k,nij->nkij", th, H1) + jet.cq[:, None, None, None] * Q
    curv = (
        np.einsum("ki,lj->lkij", P, P)
        + np.einsum("li,kj->lkij", P, P)
        - 2.0 * np.einsum("lk,i,j->lkij", P, th, th)
        - np.einsum("k,li,j->lkij", th, P, th)
        - np.einsum("k,i,lj->lkij", th, th, P)
    )
    hess = (
        jet.q[:, None, None, None, None] * np.einsum("lk,nij->nlkij", P, H1)
        + np.einsum("l,k,nij->nlkij", th, th, H2)
        + jet.c1q[:, None, None, None, None] * np.einsum("k,lij->lkij", th, Q)[None]
        + jet.cq1[:, None, None, None, None] * np.einsum("l,kij->lkij", th, Q)[None]
        + jet.cqq[:, None, None, None, None] * curv[None]
    )
    if bg.has_origin:
        # The q P (x) H1 term tends to a''(0)-type limits: q a' -> a''(0), q b' -> b''(0).
        lim = jet.a2[0] * TT + jet.b2[0] * P
        hess[0] += np.einsum("lk,ij->lkij", P, lim)
    return H, grad, hess


def grad_norm_sq(bg: Background, h: SymTensorField) -> np.ndarray:
    """|grad h|^2 = a'^2 + m b'^2 + 2 m q^2 (a - b)^2."""
    j = radial_jet(bg, h)
    m = bg.m
    return j.a1**2 + m * j.b1**2 + 2.0 * m * j.cq**2


def c2_norms(bg: Background, h: SymTensorField) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Pointwise |h|, |grad h|, |hess h|."""
    H, G, Hs = frame_tensors(bg, h)
    n0 = np.sqrt(np.einsum("nij,nij->n", H, H))
    n1 = np.sqrt(np.einsum("nkij,nkij->n", G, G))
    n2 = np.sqrt(np.einsum("nlkij,nlkij->n", Hs, Hs))
    return n0, n1, n2


def riemann_frame(bg: Background) -> np.ndarray:
    """R_abcd per node with R_abab = sectional curvature of the (a,b)-plane."""
    d = bg.m + 1
    N = bg.grid.size
    sec = np.empty((N, d, d))
    sec[:] = bg.K_sph[:, None, None]
    sec[:, 0, :] = bg.K_rad[:, None]
    sec[:, :, 0] = bg.K_rad[:, None]
    eye = np.eye(d)
    # R_abcd = sec_ab (delta_ac delta_bd - delta_ad delta_bc) for a != b
    off = 1.0 - eye
    base = np.einsum("ac,bd->abcd", eye, eye) - np.einsum("ad,bc->abcd", eye, eye)
    return sec[:, :, :, None, None] * off[None, :, :, None, None] * base[None]
