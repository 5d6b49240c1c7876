"""Parabolic defects of the two scalar supersolutions for |h|^2 and their glued minimum.

Both barriers are radial, so with X = grad f the defect reduces to

    D = d_tau u - (1 + Cn sqrt(u)) (u'' + m q u') + f' u' - 4 Cn (1 + eps) |Rm| u - forcing,

where the forcing term (C0/Gamma) e^{-tau} sqrt(u) is present only for the
large-scale barrier.  Derivatives in r are second-order finite differences.
A barrier is a supersolution on its region iff D >= 0 there.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from . import fd
from .errors import GlueError, HypothesisError, ValidationError
from .geometry import Background

INTERMEDIATE = "Intermediate"
LARGE = "Large"


@dataclass(frozen=True)
class BarrierParams:
    kind: str
    Cn: float = 4.0
    eps: float = 0.01
    Gamma: float = 50.0
    gamma: float = 0.01
    tau_window: Tuple[float, float] = (5.0, 10.0)
    # intermediate-scale barrier
    A: float = 1.0
    B: float = 3.0
    kappa: float = 0.5
    omega: float = 1.0
    # large-scale barrier
    a: float = 1e-4
    B1: float = 1.0
    C0: float = 1.0

    def __post_init__(self) -> None:
        if self.kind not in (INTERMEDIATE, LARGE):
            raise ValidationError(f"unknown barrier kind {self.kind!r}")
        if not self.Cn > 0:
            raise ValidationError("Cn must be positive")
        if self.eps < 0 or not self.Gamma > 0 or not self.gamma > 0:
            raise ValidationError("need eps >= 0 and positive Gamma, gamma")
        t0, t1 = self.tau_window
        if not t0 <= t1:
            raise ValidationError("tau_window must be ordered")
        object.__setattr__(self, "tau_window", (float(t0), float(t1)))
        if self.kind == INTERMEDIATE:
            if not (self.kappa > 0 and self.A > 0 and self.omega > 0):
                raise ValidationError("intermediate barrier needs kappa, A, omega > 0")
        else:
            if not (self.a > 0 and self.C0 >= 0):
                raise ValidationError("large barrier needs a > 0 and C0 >= 0")

    @property
    def curvature_coeff(self) -> float:
        return 4.0 * self.Cn * (1.0 + self.eps)


def sup_rm_f(bg: Background) -> float:
    return float(np.max(bg.rm_norm * bg.f))


def hypothesis_margin(bg: Background, p: BarrierParams) -> float:
    """Slack in the barrier hypothesis; the hypothesis holds iff the margin is >= 0 (> 0 for Large)."""
    S = sup_rm_f(bg)
    if p.kind == INTERMEDIATE:
        need = p.A * (p.kappa * (p.kappa + 0.5 * bg.dim) + p.curvature_coeff * S)
        return float(p.B - need - p.omega)
    return float(p.B1 - p.curvature_coeff * S * p.a - p.C0 * np.sqrt(p.a))


def hypothesis_holds(bg: Background, p: BarrierParams) -> bool:
    margin = hypothesis_margin(bg, p)
    if p.kind == INTERMEDIATE:
        return margin >= -1e-12 * max(1.0, abs(p.B))
    return margin > 0


def barrier_value(bg: Background, p: BarrierParams, tau: float, f: Optional[np.ndarray] = None) -> np.ndarray:
    f = bg.f if f is None else f
    if p.kind == INTERMEDIATE:
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.exp(-p.kappa * tau) * (p.A * f**p.kappa - p.B * f ** (p.kappa - 1.0))
    with np.errstate(divide="ignore"):
        return p.a - p.B1 / f


def region_bounds(p: BarrierParams, tau: float) -> Tuple[float, float]:
    if p.kind == INTERMEDIATE:
        return p.Gamma, p.gamma * np.exp(tau)
    return p.gamma * np.exp(tau), p.Gamma * np.exp(tau)


def _region(bg: Background, p: BarrierParams, tau: float) -> Tuple[np.ndarray, np.ndarray]:
    """Nodes strictly inside the region and not adjacent to its boundary."""
    lo, hi = region_bounds(p, tau)
    inside = (bg.f > lo) & (bg.f < hi)
    interior = inside.copy()
    interior[0] = interior[-1] = False
    interior[1:-1] &= inside[:-2] & inside[2:]
    return inside, interior


@dataclass(frozen=True, eq=False)
class DefectTerms:
    """Pieces of the defect on the interior nodes of the region."""

    index: np.ndarray
    u: np.ndarray
    time: np.ndarray
    diffusion: np.ndarray
    drift: np.ndarray
    curvature: np.ndarray
    forcing: np.ndarray

    @property
    def defect(self) -> np.ndarray:
        return self.time - self.diffusion + self.drift - self.curvature - self.forcing


def defect_terms(bg: Background, p: BarrierParams, tau: float, curvature_coeff: Optional[float] = None) -> DefectTerms:
    inside, interior = _region(bg, p, tau)
    idx = np.flatnonzero(inside)
    empty = np.zeros(0)
    if idx.size < 3 or not interior.any():
        return DefectTerms(np.zeros(0, dtype=int), empty, empty, empty, empty, empty, empty)
    s = slice(idx[0], idx[-1] + 1)
    f = bg.f[s]
    u = barrier_value(bg, p, tau, f)
    u1 = fd.d1(u, bg.h)
    u2 = fd.d2(u, bg.h)
    keep = interior[s]
    u, u1, u2 = u[keep], u1[keep], u2[keep]
    q = bg.q[s][keep]
    f1 = bg.f1[s][keep]
    rm = bg.rm_norm[s][keep]
    root = np.sqrt(np.maximum(u, 0.0))
    lap = u2 + bg.m * q * u1
    time = -p.kappa * u if p.kind == INTERMEDIATE else np.zeros_like(u)
    coeff = p.curvature_coeff if curvature_coeff is None else curvature_coeff
    if p.kind == LARGE:
        forcing = (p.C0 / p.Gamma) * np.exp(-tau) * root
    else:
        forcing = np.zeros_like(u)
    return DefectTerms(
        idx[0] + np.flatnonzero(keep),
        u,
        time,
        (1.0 + p.Cn * root) * lap,
        f1 * u1,
        coeff * rm * u,
        forcing,
    )


@dataclass(frozen=True, eq=False)
class DefectReport:
    kind: str
    min_defect: float
    argmin_r: float
    argmin_tau: float
    nodes_checked: int
    hypothesis_margin: float
    hypothesis_holds: bool
    positivity: Optional[bool]
    per_tau: List[Tuple[float, float, float, int]] = field(default_factory=list)

    @property
    def supersolution(self) -> bool:
        return self.min_defect >= 0

    def to_json(self) -> dict:
        return {
            "kind": self.kind,
            "min_defect": self.min_defect,
            "argmin": {"r": self.argmin_r, "tau": self.argmin_tau},
            "nodes_checked": self.nodes_checked,
            "hypothesis_margin": self.hypothesis_margin,
            "hypothesis_holds": self.hypothesis_holds,
            "positivity": self.positivity,
        }


def default_tau_grid(p: BarrierParams, count: int = 51) -> np.ndarray:
    return np.linspace(p.tau_window[0], p.tau_window[1], count)


def _positivity(bg: Background, p: BarrierParams, taus: Sequence[float]) -> Optional[bool]:
    if p.kind == INTERMEDIATE:
        C = p.A - p.B / p.Gamma
        if not C > 0:
            return None
        sel = bg.f > p.Gamma
        f = bg.f[sel]
        for t in taus:
            u = barrier_value(bg, p, t, f)
            lower = C * np.exp(-p.kappa * t) * f**p.kappa
            if not (np.all(u > 0) and np.all(u >= lower * (1.0 - 1e-12))):
                return False
        return True
    tau0 = p.tau_window[0]
    c = p.a - (p.B1 / p.gamma) * np.exp(-tau0)
    if not c > 0:
        return None
    for t in taus:
        if t < tau0:
            continue
        f = bg.f[bg.f > p.gamma * np.exp(t)]
        if f.size and not np.all(barrier_value(bg, p, t, f) > c):
            return False
    return True


def _sweep(bg: Background, p: BarrierParams, grid_tau, falsify: bool, want: str) -> DefectReport:
    if p.kind != want:
        raise ValidationError(f"expected {want} barrier parameters, got {p.kind}")
    taus = default_tau_grid(p) if grid_tau is None else np.asarray(grid_tau, dtype=float)
    margin = hypothesis_margin(bg, p)
    ok = hypothesis_holds(bg, p)
    if not ok and not falsify:
        raise HypothesisError(
            f"{p.kind} barrier hypothesis violated (margin {margin:.6g}); rerun in falsify mode to evaluate anyway"
        )
    best = (np.inf, np.nan, np.nan)
    count = 0
    per_tau = []
    for t in taus:
        terms = defect_terms(bg, p, float(t))
        if terms.index.size == 0:
            per_tau.append((float(t), float("nan"), float("nan"), 0))
            continue
        D = terms.defect
        k = int(np.argmin(D))
        r_k = float(bg.nodes[terms.index[k]])
        per_tau.append((float(t), float(D[k]), r_k, int(D.size)))
        count += D.size
        if D[k] < best[0]:
            best = (float(D[k]), r_k, float(t))
    if count == 0:
        raise ValidationError(f"{p.kind} barrier region empty on this grid for every tau")
    return DefectReport(p.kind, best[0], best[1], best[2], count, margin, ok, _positivity(bg, p, taus), per_tau)


def intermediate_defect(bg: Background, p: BarrierParams, grid_tau=None, falsify: bool = False) -> DefectReport:
    """Minimum defect of e^{-kappa tau}(A f^kappa - B f^{kappa-1}) over {Gamma < f < gamma e^tau}."""
    return _sweep(bg, p, grid_tau, falsify, INTERMEDIATE)


def large_defect(bg: Background, p: BarrierParams, grid_tau=None, falsify: bool = False) -> DefectReport:
    """Minimum defect of a - B1/f over {gamma e^tau < f < Gamma e^tau}."""
    return _sweep(bg, p, grid_tau, falsify, LARGE)


def defect_rows(bg: Background, p: BarrierParams, grid_tau, stride: int = 1) -> List[Tuple[float, float, float]]:
    """(r, tau, defect) rows for CSV export, every ``stride``-th region node."""
    rows = []
    for t in grid_tau:
        terms = defect_terms(bg, p, float(t))
        D = terms.defect
        for i, d in zip(terms.index[::stride], D[::stride]):
            rows.append((float(bg.nodes[i]), float(t), float(d)))
    return rows


# ---------------------------------------------------------------- gluing


@dataclass(frozen=True)
class GlueRecipe:
    """Constants of the glued barrier built from C1, delta and the target rate."""

    A: float
    B0: float
    a: float
    B1: float
    kappa: float
    gamma_plus: float
    gamma_minus: float

    def intermediate(self, **kw) -> BarrierParams:
        return BarrierParams(INTERMEDIATE, A=self.A, B=self.B0, kappa=self.kappa, **kw)

    def large(self, **kw) -> BarrierParams:
        return BarrierParams(LARGE, a=self.a, B1=self.B1, **kw)


def glue_recipe(bg: Background, C1: float, delta: float, lambda_star: float, C0: float = 1.0, Cn: float = 4.0) -> GlueRecipe:
    """A = C1^2 + 1, B0 and B1 with eps replaced by 1, a = delta^2, gamma_pm from A and delta."""
    if not lambda_star < 0 or not delta > 0:
        raise ValidationError("need lambda_star < 0 and delta > 0")
    kappa = -2.0 * lambda_star
    S = sup_rm_f(bg)
    A = C1**2 + 1.0
    B0 = A * (kappa * (kappa + 0.5 * bg.dim) + 8.0 * Cn * S) + 1.0
    B1 = 8.0 * Cn * S + C0
    a = delta**2
    gp = (2.0 * a / A) ** (1.0 / kappa)
    gm = (a / (2.0 * A)) ** (1.0 / kappa)
    return GlueRecipe(A, B0, a, B1, kappa, gp, gm)


@dataclass(frozen=True)
class GlueCheck:
    tau: float
    f_plus: float
    f_minus: float
    gap_plus: float  # intermediate - large at gamma_+ e^tau, must be > 0
    gap_minus: float  # large - intermediate at gamma_- e^tau, must be > 0

    @property
    def holds(self) -> bool:
        return self.gap_plus > 0 and self.gap_minus > 0


def _nearest(bg: Background, value: float) -> int:
    if not bg.f[0] <= value <= bg.f[-1]:
        raise ValidationError(f"interface f = {value:.6g} lies outside the grid")
    return int(np.argmin(np.abs(bg.f - value)))


def crossing_check(bg: Background, p_int: BarrierParams, p_large: BarrierParams, gamma_minus: float, gamma_plus: float, tau: float) -> GlueCheck:
    fp = float(bg.f[_nearest(bg, gamma_plus * np.exp(tau))])
    fm = float(bg.f[_nearest(bg, gamma_minus * np.exp(tau))])
    arr = np.array([fp, fm])
    ui = barrier_value(bg, p_int, tau, arr)
    ul = barrier_value(bg, p_large, tau, arr)
    return GlueCheck(float(tau), fp, fm, float(ui[0] - ul[0]), float(ul[1] - ui[1]))


def glue_supersolution(
    bg: Background,
    p_int: BarrierParams,
    p_large: BarrierParams,
    gamma_minus: float,
    gamma_plus: float,
    tau: float,
) -> np.ndarray:
    """Intermediate barrier below gamma_- e^tau, large barrier above gamma_+ e^tau, their minimum between."""
    if p_int.kind != INTERMEDIATE or p_large.kind != LARGE:
        raise ValidationError("glue needs an intermediate and a large parameter set")
    if not 0 < gamma_minus <= gamma_plus:
        raise ValidationError("need 0 < gamma_minus <= gamma_plus")
    chk = crossing_check(bg, p_int, p_large, gamma_minus, gamma_plus, tau)
    if not chk.holds:
        raise GlueError(
            f"crossing inequalities fail at tau={tau:.6g}: gap at gamma_+ {chk.gap_plus:.6g}, "
            f"gap at gamma_- {chk.gap_minus:.6g}; tau0 is too small"
        )
    f = bg.f
    ui = barrier_value(bg, p_int, tau)
    ul = barrier_value(bg, p_large, tau)
    lo, hi = gamma_minus * np.exp(tau), gamma_plus * np.exp(tau)
    u = np.where(f <= lo, ui, np.where(f >= hi, ul, np.minimum(ui, ul)))
    return u


def glue_tau_scan(bg: Background, recipe: GlueRecipe, taus: Sequence[float]) -> Tuple[List[GlueCheck], Optional[float]]:
    """Crossing checks over ``taus``; returns the checks and the first tau after which all hold."""
    p_int, p_large = recipe.intermediate(), recipe.large()
    checks = [crossing_check(bg, p_int, p_large, recipe.gamma_minus, recipe.gamma_plus, t) for t in taus]
    threshold = None
    for c in reversed(checks):
        if not c.holds:
            break
        threshold = c.tau
    return checks, threshold
