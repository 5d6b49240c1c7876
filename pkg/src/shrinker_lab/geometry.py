"""Model backgrounds in the warped-product reduction g = dr^2 + psi(r)^2 g_link.

All curvature quantities are expressed in an orthonormal frame
{d/dr, e_1/psi, ..., e_m/psi} with m = n - 1 the link dimension:

    K_rad = -psi''/psi                 (planes containing d/dr)
    K_sph = (c_link - psi'^2)/psi^2    (planes tangent to the link)
    Ric(d/dr, d/dr) = m K_rad
    Ric(e_i, e_i)   = K_rad + (m-1) K_sph
    R               = 2 m K_rad + m (m-1) K_sph
    |Rm|^2          = 4 (m K_rad^2 + m (m-1)/2 K_sph^2)

The round cylinder R x S^k is the case psi = const with the axial
coordinate z in place of r; its grid is two-sided and has no origin.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.integrate import solve_ivp
from scipy.interpolate import CubicSpline
from scipy.special import gamma as gamma_fn

from . import fd
from .errors import ValidationError

GAUSSIAN = "Gaussian"
CYLINDER = "RoundCylinder"
WARPED = "WarpedProduct"
ROUNDED_CONE = "RoundedCone"
SOLITON_KINDS = (GAUSSIAN, CYLINDER)


def sphere_area(m: int) -> float:
    """Area of the unit m-sphere in R^(m+1)."""
    return 2.0 * np.pi ** ((m + 1) / 2.0) / gamma_fn((m + 1) / 2.0)


@dataclass(frozen=True, eq=False)
class RadialGrid:
    nodes: np.ndarray
    volume_density: Optional[np.ndarray] = None
    quad_weights: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        r = np.asarray(self.nodes, dtype=float)
        if r.ndim != 1 or r.size < 5:
            raise ValidationError("grid needs at least 5 nodes")
        dr = np.diff(r)
        if np.any(dr <= 0):
            raise ValidationError("grid nodes must be strictly increasing")
        h = (r[-1] - r[0]) / (r.size - 1)
        ideal = r[0] + h * np.arange(r.size)
        scale = max(1.0, float(np.max(np.abs(r))))
        if np.max(np.abs(r - ideal)) > 1e-12 * scale:
            raise ValidationError("grid spacing is not uniform")
        object.__setattr__(self, "nodes", r)
        for name in ("volume_density", "quad_weights"):
            val = getattr(self, name)
            if val is not None:
                val = np.asarray(val, dtype=float)
                if val.shape != r.shape:
                    raise ValidationError(f"{name} has wrong length")
                object.__setattr__(self, name, val)
        if self.quad_weights is not None and np.any(self.quad_weights < 0):
            raise ValidationError("quadrature weights must be nonnegative")

    @property
    def spacing(self) -> float:
        return float((self.nodes[-1] - self.nodes[0]) / (self.nodes.size - 1))

    @property
    def size(self) -> int:
        return int(self.nodes.size)

    def with_measure(self, volume_density: np.ndarray, f: Optional[np.ndarray]) -> "RadialGrid":
        """Attach v(r) and trapezoid weights for the measure e^{-f} v dr."""
        dens = np.asarray(volume_density, dtype=float)
        weight = dens if f is None else np.exp(-np.asarray(f)) * dens
        w = self.spacing * weight
        w[0] *= 0.5
        w[-1] *= 0.5
        return RadialGrid(self.nodes, dens, w)


def uniform_grid(r_min: float, r_max: float, n_nodes: int) -> RadialGrid:
    if n_nodes < 5 or not r_max > r_min:
        raise ValidationError("need r_max > r_min and at least 5 nodes")
    return RadialGrid(np.linspace(r_min, r_max, n_nodes))


@dataclass(frozen=True, eq=False)
class Background:
    kind: str
    dim: int
    grid: RadialGrid
    psi: np.ndarray
    psi1: np.ndarray
    psi2: np.ndarray
    K_rad: np.ndarray
    K_sph: np.ndarray
    link_curv: float
    f: Optional[np.ndarray] = None
    f1: Optional[np.ndarray] = None
    # e^{-f} v evaluated at the cell midpoints r_{i+1/2}; used by the operator fluxes.
    w_half: Optional[np.ndarray] = None
    params: dict = field(default_factory=dict)

    @property
    def m(self) -> int:
        return self.dim - 1

    @property
    def nodes(self) -> np.ndarray:
        return self.grid.nodes

    @property
    def h(self) -> float:
        return self.grid.spacing

    @property
    def has_origin(self) -> bool:
        """True when the first node is a smooth origin (psi(0) = 0)."""
        return bool(self.psi[0] == 0.0)

    @property
    def is_soliton(self) -> bool:
        return self.kind in SOLITON_KINDS and self.f is not None

    @property
    def ric_rad(self) -> np.ndarray:
        return self.m * self.K_rad

    @property
    def ric_sph(self) -> np.ndarray:
        return self.K_rad + (self.m - 1) * self.K_sph

    @property
    def R(self) -> np.ndarray:
        m = self.m
        return 2.0 * m * self.K_rad + m * (m - 1) * self.K_sph

    @property
    def rm_norm(self) -> np.ndarray:
        m = self.m
        return 2.0 * np.sqrt(m * self.K_rad**2 + 0.5 * m * (m - 1) * self.K_sph**2)

    @property
    def q(self) -> np.ndarray:
        """psi'/psi, with the origin entry set to 0 (never used there)."""
        out = np.zeros_like(self.psi)
        pos = self.psi > 0
        out[pos] = self.psi1[pos] / self.psi[pos]
        return out

    def to_json(self) -> dict:
        def arr(x):
            return None if x is None else [float(v) for v in x]

        return {
            "kind": self.kind,
            "dim": self.dim,
            "params": {k: float(v) for k, v in self.params.items()},
            "link_curv": float(self.link_curv),
            "nodes": arr(self.nodes),
            "psi": arr(self.psi),
            "psi1": arr(self.psi1),
            "psi2": arr(self.psi2),
            "f": arr(self.f),
            "f1": arr(self.f1),
            "R": arr(self.R),
            "ric_rad": arr(self.ric_rad),
            "ric_sph": arr(self.ric_sph),
            "K_rad": arr(self.K_rad),
            "K_sph": arr(self.K_sph),
            "rm_norm": arr(self.rm_norm),
            "volume_density": arr(self.grid.volume_density),
            "quad_weights": arr(self.grid.quad_weights),
        }


def make_gaussian(n: int, grid: RadialGrid) -> Background:
    if n < 2:
        raise ValidationError("Gaussian soliton needs n >= 2")
    r = grid.nodes
    if r[0] != 0.0:
        raise ValidationError("Gaussian grid must start at r = 0")
    m = n - 1
    area = sphere_area(m)
    f = r**2 / 4.0
    rh = r[:-1] + 0.5 * grid.spacing
    w_half = np.exp(-(rh**2) / 4.0) * area * rh**m
    zero = np.zeros_like(r)
    return Background(
        kind=GAUSSIAN,
        dim=n,
        grid=grid.with_measure(area * r**m, f),
        psi=r.copy(),
        psi1=np.ones_like(r),
        psi2=zero.copy(),
        K_rad=zero.copy(),
        K_sph=zero.copy(),
        link_curv=1.0,
        f=f,
        f1=r / 2.0,
        w_half=w_half,
        params={"n": n},
    )


def make_cylinder(k: int, grid: RadialGrid) -> Background:
    if k < 2:
        raise ValidationError("cylinder needs k >= 2")
    z = grid.nodes
    if abs(z[0] + z[-1]) > 1e-12 * max(1.0, abs(z[-1])):
        raise ValidationError("cylinder grid must be symmetric about z = 0")
    rho2 = 2.0 * (k - 1)
    rho = np.sqrt(rho2)
    area = sphere_area(k) * rho**k
    f = z**2 / 4.0 + k / 2.0
    zh = z[:-1] + 0.5 * grid.spacing
    w_half = np.exp(-(zh**2 / 4.0 + k / 2.0)) * area
    return Background(
        kind=CYLINDER,
        dim=k + 1,
        grid=grid.with_measure(np.full_like(z, area), f),
        psi=np.full_like(z, rho),
        psi1=np.zeros_like(z),
        psi2=np.zeros_like(z),
        K_rad=np.zeros_like(z),
        K_sph=np.full_like(z, 1.0 / rho2),
        link_curv=1.0,
        f=f,
        f1=z / 2.0,
        w_half=w_half,
        params={"k": k},
    )


def make_warped_product(
    grid: RadialGrid,
    psi: np.ndarray,
    psi1: np.ndarray,
    psi2: np.ndarray,
    c_link: float,
    n: int,
    kind: str = WARPED,
    params: Optional[dict] = None,
) -> Background:
    """Generic warped product; f is left unset (not a soliton)."""
    psi = np.asarray(psi, dtype=float)
    psi1 = np.asarray(psi1, dtype=float)
    psi2 = np.asarray(psi2, dtype=float)
    if np.any(psi[1:-1] <= 0):
        raise ValidationError("psi must be positive on the interior of the grid")
    if n < 2 or c_link <= 0:
        raise ValidationError("need n >= 2 and c_link > 0")
    m = n - 1
    with np.errstate(divide="ignore", invalid="ignore"):
        K_rad = np.where(psi > 0, -psi2 / psi, 0.0)
        K_sph = np.where(psi > 0, (c_link - psi1**2) / psi**2, 0.0)
    if psi[0] == 0.0:
        K_sph[0] = K_rad[0]
    area = sphere_area(m) * c_link ** (-m / 2.0)
    return Background(
        kind=kind,
        dim=n,
        grid=grid.with_measure(area * psi**m, None),
        psi=psi,
        psi1=psi1,
        psi2=psi2,
        K_rad=K_rad,
        K_sph=K_sph,
        link_curv=float(c_link),
        params=dict(params or {}),
    )


def _smootherstep(x):
    x = np.clip(x, 0.0, 1.0)
    return x**3 * (10.0 - 15.0 * x + 6.0 * x**2)


def _smootherstep_d1(x):
    x = np.clip(x, 0.0, 1.0)
    return 30.0 * x**2 * (1.0 - x) ** 2


def _smootherstep_int(x):
    """Antiderivative of the smootherstep vanishing at 0, clipped to [0, 1]."""
    x = np.clip(x, 0.0, 1.0)
    return x**6 - 3.0 * x**5 + 2.5 * x**4


def unit_rounding_profile(s: np.ndarray):
    """Profile with value s on (0,1], in [1,2] on (1,3), equal to 2 on [3, inf).

    Its slope is 1 - S((s-1)/2) for the smootherstep S, so it is monotone,
    C^3, and the slope loses exactly one unit of area over [1, 3].
    Returns (value, first derivative, second derivative).
    """
    s = np.asarray(s, dtype=float)
    x = (s - 1.0) / 2.0
    xc = np.clip(x, 0.0, 1.0)
    val = np.where(s <= 1.0, s, 1.0 + 2.0 * (xc - _smootherstep_int(xc)))
    val = np.where(s >= 3.0, 2.0, val)
    d1 = np.where(s <= 1.0, 1.0, 1.0 - _smootherstep(x))
    d2 = np.where((s > 1.0) & (s < 3.0), -0.5 * _smootherstep_d1(x), 0.0)
    return val, d1, d2


def make_rounded_cone(c_link: float, R1: float, grid: RadialGrid, n: int = 3) -> Background:
    """Cone of link curvature c_link, capped at radius 3 R1 by a cylinder of radius 2 R1."""
    if R1 <= 0:
        raise ValidationError("R1 must be positive")
    r = grid.nodes
    if r[0] <= 0:
        raise ValidationError("rounded-cone grid must start at r > 0")
    if r[-1] < 4.0 * R1:
        raise ValidationError("grid too short: need r_max >= 4 R1 to contain the cylinder end")
    val, d1, d2 = unit_rounding_profile(r / R1)
    return make_warped_product(
        grid, R1 * val, d1, d2 / R1, c_link, n, kind=ROUNDED_CONE, params={"R1": R1, "c_link": c_link}
    )


def _require_f(bg: Background) -> None:
    if bg.f is None or bg.f1 is None:
        raise ValidationError("not a soliton background")


def soliton_residuals(bg: Background) -> tuple[float, float, float]:
    """Sup-norms of Rc + Hess f - g/2, R + |grad f|^2 - f and R + Lap f - n/2.

    f' and f'' come from finite differences of the sampled potential.
    """
    _require_f(bg)
    h = bg.h
    parity = "even" if bg.has_origin else None
    fp = fd.d1(bg.f, h, parity)
    fpp = fd.d2(bg.f, h, parity)
    qfp = bg.q * fp
    if bg.has_origin:
        qfp[0] = fpp[0]
    res_rad = bg.ric_rad + fpp - 0.5
    res_sph = bg.ric_sph + qfp - 0.5
    res_e = max(float(np.max(np.abs(res_rad))), float(np.max(np.abs(res_sph))))
    res_h = float(np.max(np.abs(bg.R + fp**2 - bg.f)))
    res_t = float(np.max(np.abs(bg.R + fpp + bg.m * qfp - bg.dim / 2.0)))
    return res_e, res_h, res_t


def cone_trace_defect(bg: Background) -> np.ndarray:
    """R + Lap(r^2/4) - n/2 for a background without potential.

    Uses the cone's natural candidate potential r^2/4; nonzero wherever the
    metric fails to be a shrinker with that potential.
    """
    r = bg.nodes
    lap = 0.5 + bg.m * bg.q * r / 2.0
    return bg.R + lap - bg.dim / 2.0


def weighted_integral(bg: Background, values: np.ndarray) -> float:
    values = np.asarray(values, dtype=float)
    w = bg.grid.quad_weights
    if values.shape != w.shape:
        raise ValidationError("field size does not match the grid")
    return float(np.dot(w, values))


@dataclass(frozen=True)
class FlowMapSample:
    tau: np.ndarray
    positions: np.ndarray  # shape (len(tau), n_seeds)
    f_values: np.ndarray
    truncated: np.ndarray  # per-seed flag: trajectory left the grid


def soliton_flow(
    bg: Background,
    seeds: Sequence[float],
    tau_grid: Sequence[float],
    rtol: float = 1e-10,
) -> FlowMapSample:
    """Integrate dr/dtau = f'(r); then F(tau) = f(r(tau)) solves dF/dtau = |grad f|^2."""
    _require_f(bg)
    tau = np.asarray(tau_grid, dtype=float)
    if tau.ndim != 1 or tau.size == 0 or np.any(np.diff(tau) < 0) or tau[0] < 0:
        raise ValidationError("tau_grid must be nondecreasing and start at tau >= 0")
    r = bg.nodes
    lo, hi = r[0], r[-1]
    seeds = np.asarray(seeds, dtype=float)
    if np.any(seeds < lo) or np.any(seeds > hi):
        raise ValidationError("seed outside grid")
    fprime = CubicSpline(r, bg.f1)
    fval = CubicSpline(r, bg.f)

    def leave_hi(_t, y):
        return y[0] - hi

    def leave_lo(_t, y):
        return y[0] - lo

    leave_hi.terminal = True
    leave_lo.terminal = True
    leave_lo.direction = -1.0
    leave_hi.direction = 1.0

    pos = np.full((tau.size, seeds.size), np.nan)
    trunc = np.zeros(seeds.size, dtype=bool)
    for j, s in enumerate(seeds):
        sol = solve_ivp(
            lambda _t, y: fprime(y),
            (0.0, float(tau[-1])),
            [s],
            method="DOP853",
            t_eval=tau,
            rtol=rtol,
            atol=1e-14,
            events=(leave_hi, leave_lo),
        )
        k = sol.y.shape[1]
        pos[:k, j] = sol.y[0]
        trunc[j] = k < tau.size
    fv = np.where(np.isnan(pos), np.nan, fval(np.nan_to_num(pos)))
    return FlowMapSample(tau, pos, fv, trunc)


def flow_map_bounds(sample: FlowMapSample, bg: Background, slack: float = 1e-7) -> np.ndarray:
    """Boolean array (len(tau)-1, n_seeds): slope bounds max{0, F - C/F} <= dF/dtau <= F.

    The slope between consecutive samples equals dF/dtau at an intermediate
    time; both bounds increase with F, so the lower one is taken at the left
    sample and the upper one at the right sample.
    """
    C = float(np.max(bg.f * bg.R))
    F = sample.f_values
    dt = np.diff(sample.tau)[:, None]
    with np.errstate(invalid="ignore", divide="ignore"):
        slope = np.diff(F, axis=0) / dt
        lower = np.maximum(0.0, F[:-1] - C / F[:-1])
        upper = F[1:]
        tol = slack * (1.0 + np.abs(F[1:]))
        ok = (slope >= lower - tol) & (slope <= upper + tol)
    return ok | np.isnan(slope)
