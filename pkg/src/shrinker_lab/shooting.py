"""Initial data, exit map and the bisection search for the non-exiting trajectory.

The search space is the ball |p| <= p_bar e^{lambda* tau0} of coefficients on
the first K_active eigenmodes.  Boundary points leave the box immediately
through the unstable face with F ~ p, so each coordinate of F changes sign
across the ball; bisecting on that sign (cyclically over coordinates when
K_active >= 2) closes in on p*.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import NoCrossingError, ValidationError
from .flow import BoxSpec, FlowResult, FlowState, ForcingSpec, Status, Stepper, evolve_until_exit
from .geometry import Background
from .operator import OperatorMatrix, SpectralDecomposition
from .tensors import SymTensorField

MAX_SWEEPS = 50


def _smoothstep(x):
    x = np.clip(x, 0.0, 1.0)
    return x**3 * (10.0 - 15.0 * x + 6.0 * x**2)


def bump_gamma0(bg: Background, gamma0: float, tau0: float) -> np.ndarray:
    """Cutoff equal to 1 on {f <= L/2} and 0 on {f >= L}, L = gamma0 e^{tau0}."""
    if not 0 < gamma0 < 1:
        raise ValidationError("gamma0 must lie in (0, 1)")
    L = gamma0 * np.exp(tau0)
    if L >= float(np.max(bg.f)):
        raise ValidationError("cutoff support exceeds the grid")
    return 1.0 - _smoothstep(2.0 * bg.f / L - 1.0)


def cutoff_derivative_sups(bg: Background, eta: np.ndarray) -> Tuple[float, float]:
    """sup |grad eta| and sup |hess eta| for a radial function."""
    from . import fd

    par = "even" if bg.has_origin else None
    e1 = fd.d1(eta, bg.h, par)
    e2 = fd.d2(eta, bg.h, par)
    qe1 = bg.q * e1
    if bg.has_origin:
        qe1[0] = e2[0]
    hess = np.sqrt(e2**2 + bg.m * qe1**2)
    return float(np.max(np.abs(e1))), float(np.max(hess))


@dataclass(frozen=True)
class ShootConfig:
    p_bar: float
    gamma0: float
    box: BoxSpec
    forcing: ForcingSpec
    dtau: float
    K_active: int
    nonlinear: bool = True
    stride: int = 10

    def __post_init__(self) -> None:
        if not 0 < self.p_bar <= 1:
            raise ValidationError("p_bar must lie in (0, 1]")
        if not 0 < self.gamma0 < 1:
            raise ValidationError("gamma0 must lie in (0, 1)")
        if self.K_active < 1:
            raise ValidationError("K_active must be at least 1")
        if not self.dtau > 0:
            raise ValidationError("dtau must be positive")

    @property
    def radius(self) -> float:
        return self.p_bar * np.exp(self.box.lambda_star * self.box.tau0)

    @property
    def exit_box(self) -> BoxSpec:
        # The exit map uses the box with the stable threshold relaxed to 1.
        return replace(self.box, mu_s=1.0)


@dataclass(eq=False)
class ShootContext:
    bg: Background
    opm: OperatorMatrix
    dec: SpectralDecomposition
    _steppers: Dict[tuple, Stepper] = field(default_factory=dict)

    def stepper(self, box: BoxSpec, forcing: ForcingSpec, nonlinear: bool) -> Stepper:
        key = (box, forcing, nonlinear)
        st = self._steppers.get(key)
        if st is None:
            st = Stepper(self.bg, self.opm, self.dec, box, forcing, nonlinear)
            self._steppers[key] = st
        return st


def initial_data(
    p: Sequence[float],
    dec: SpectralDecomposition,
    bg: Background,
    gamma0: float,
    tau0: float,
    radius: Optional[float] = None,
) -> SymTensorField:
    """h(tau0) = eta * sum_j p_j h_j; ``radius`` bounds |p| when given."""
    p = np.asarray(p, dtype=float)
    if p.size > len(dec.eigenfields):
        raise ValidationError("more coefficients than eigenfields")
    if radius is not None and np.linalg.norm(p) > radius * (1.0 + 1e-12):
        raise ValidationError("|p| exceeds the admissible radius")
    eta = bump_gamma0(bg, gamma0, tau0)
    h = dec.combine(p)
    return SymTensorField(eta * h.a, eta * h.b)


@dataclass(frozen=True, eq=False)
class ExitResult:
    p: np.ndarray
    F: np.ndarray
    tau_exit: float
    exit: Status
    flow: FlowResult


def exit_map(p: Sequence[float], cfg: ShootConfig, ctx: ShootContext, box: Optional[BoxSpec] = None) -> ExitResult:
    p = np.asarray(p, dtype=float)
    if p.size != cfg.K_active:
        raise ValidationError("p must have K_active entries")
    box = box or cfg.exit_box
    h0 = initial_data(p, ctx.dec, ctx.bg, cfg.gamma0, cfg.box.tau0, cfg.radius)
    st = ctx.stepper(box, cfg.forcing, cfg.nonlinear)
    res = evolve_until_exit(h0, box, ctx.bg, ctx.opm, ctx.dec, cfg.forcing, cfg.dtau, cfg.stride, cfg.nonlinear, st)
    F = np.array(res.final.coeffs[: cfg.K_active], dtype=float)
    return ExitResult(p, F, res.tau_exit, res.exit, res)


@dataclass(frozen=True)
class BracketEnd:
    p: Tuple[float, ...]
    exit: str
    F_j: float
    tau_exit: float


@dataclass(frozen=True)
class Certificate:
    """Bracket record for one coordinate.

    ``lower``/``upper`` are the final bracket ends; ``exit_lower``/``exit_upper``
    are the probes nearest to the bracket on each side that left the box
    through the unstable face.
    """

    coordinate: int
    lower: BracketEnd
    upper: BracketEnd
    width: float
    exact_root: bool
    exit_lower: Optional[BracketEnd] = None
    exit_upper: Optional[BracketEnd] = None

    @property
    def sign_alternates(self) -> bool:
        if self.exact_root:
            return True
        return np.sign(self.lower.F_j) == -np.sign(self.upper.F_j) != 0

    @property
    def exit_alternates(self) -> bool:
        lo, hi = self.exit_lower, self.exit_upper
        if lo is None or hi is None:
            return False
        unstable = Status.EXIT_UNSTABLE.value
        return lo.exit == unstable == hi.exit and np.sign(lo.F_j) == -np.sign(hi.F_j) != 0

    @property
    def alternates(self) -> bool:
        return self.sign_alternates and self.exit_alternates

    def to_json(self) -> dict:
        def end(e):
            return None if e is None else e.__dict__ | {"p": list(e.p)}

        return {
            "coordinate": self.coordinate,
            "width": self.width,
            "exact_root": self.exact_root,
            "sign_alternates": bool(self.sign_alternates),
            "exit_alternates": bool(self.exit_alternates),
            "lower": end(self.lower),
            "upper": end(self.upper),
            "exit_lower": end(self.exit_lower),
            "exit_upper": end(self.exit_upper),
        }


@dataclass(eq=False)
class ShootResult:
    p_star: np.ndarray
    bracket_width: float
    tuned: FlowResult
    certificates: List[Certificate]
    probes: List[ExitResult]
    sweeps: int
    decay_slope: Optional[float]

    @property
    def survived(self) -> bool:
        return self.tuned.exit == Status.INSIDE

    @property
    def exit_histogram(self) -> Dict[str, int]:
        c = Counter(pr.exit.value for pr in self.probes)
        return {k: int(c[k]) for k in sorted(c)}

    def to_json(self) -> dict:
        return {
            "p_star": [float(v) for v in self.p_star],
            "bracket_width": float(self.bracket_width),
            "decay_slope": None if self.decay_slope is None else float(self.decay_slope),
            "exit_histogram": self.exit_histogram,
            "survived": bool(self.survived),
            "sweeps": int(self.sweeps),
            "certificates": [c.to_json() for c in self.certificates],
        }


def decay_slope(flow: FlowResult) -> Optional[float]:
    """Least-squares slope of log ||h||_{L^2_f} against tau over nonzero samples."""
    tau = np.array([s.tau for s in flow.trajectory])
    nrm = np.array([s.norms.l2f for s in flow.trajectory])
    keep = nrm > 0
    if keep.sum() < 2:
        return None
    return float(np.polyfit(tau[keep], np.log(nrm[keep]), 1)[0])


def _end(res: ExitResult, j: int) -> BracketEnd:
    return BracketEnd(tuple(float(v) for v in res.p), res.exit.value, float(res.F[j]), float(res.tau_exit))


def find_p_star(cfg: ShootConfig, ctx: ShootContext, max_sweeps: int = MAX_SWEEPS) -> ShootResult:
    """Bisection (K_active = 1) or cyclic coordinate bisection on sign(F_j).

    Each coordinate is bisected until its bracket is narrower than
    1e-10 p_bar e^{lambda* tau0}; if the midpoint still leaves the box the
    bisection continues to floating-point resolution.  A probe whose F_j
    is exactly zero is an exact root and collapses the bracket.  Sweeps
    stop once the current p survives to tau_max.
    """
    K = cfg.K_active
    P = cfg.radius
    tol = 1e-10 * P
    p = np.zeros(K)
    probes: List[ExitResult] = []
    certs: Dict[int, Certificate] = {}
    unstable = Status.EXIT_UNSTABLE

    def probe(vec):
        r = exit_map(vec, cfg, ctx)
        probes.append(r)
        return r

    def with_coord(j, val):
        v = p.copy()
        v[j] = val
        return v

    def bracket(j, R, first):
        if first:
            lo, hi = -R, R
            return lo, hi, probe(with_coord(j, lo)), probe(with_coord(j, hi))
        delta = 16.0 * tol
        while True:
            lo, hi = max(p[j] - delta, -R), min(p[j] + delta, R)
            r_lo, r_hi = probe(with_coord(j, lo)), probe(with_coord(j, hi))
            if np.sign(r_lo.F[j]) != np.sign(r_hi.F[j]) or (lo == -R and hi == R):
                return lo, hi, r_lo, r_hi
            delta *= 64.0

    sweeps = 0
    first = True
    while sweeps < max_sweeps:
        sweeps += 1
        for j in range(K):
            R = np.sqrt(max(P**2 - (np.sum(p**2) - p[j] ** 2), 0.0))
            lo, hi, r_lo, r_hi = bracket(j, R, first)
            s_lo, s_hi = np.sign(r_lo.F[j]), np.sign(r_hi.F[j])
            if s_lo != 0 and s_lo == s_hi:
                raise NoCrossingError(
                    f"no crossing detected on coordinate {j}: F has sign {s_lo:+.0f} at both ends"
                )
            prev = certs.get(j)
            x_lo = r_lo if r_lo.exit == unstable else None
            x_hi = r_hi if r_hi.exit == unstable else None
            exact = bool(s_lo == 0 or s_hi == 0)
            if exact:
                r_lo = r_hi = r_lo if s_lo == 0 else r_hi
                lo = hi = float(r_lo.p[j])
            while not exact:
                mid = 0.5 * (lo + hi)
                if not lo < mid < hi:
                    break
                r_mid = probe(with_coord(j, mid))
                s = np.sign(r_mid.F[j])
                if s == 0:
                    lo = hi = mid
                    r_lo = r_hi = r_mid
                    exact = True
                    break
                if s == s_lo:
                    lo, r_lo = mid, r_mid
                    if r_mid.exit == unstable:
                        x_lo = r_mid
                else:
                    hi, r_hi = mid, r_mid
                    if r_mid.exit == unstable:
                        x_hi = r_mid
                if hi - lo <= tol and r_mid.exit == Status.INSIDE:
                    break
            p[j] = 0.5 * (lo + hi)
            # later sweeps start from a narrow bracket that may not reach an
            # unstable exit; keep the nearest ones found so far
            e_lo = _end(x_lo, j) if x_lo is not None else (prev.exit_lower if prev else None)
            e_hi = _end(x_hi, j) if x_hi is not None else (prev.exit_upper if prev else None)
            certs[j] = Certificate(j, _end(r_lo, j), _end(r_hi, j), float(hi - lo), exact, e_lo, e_hi)
        first = False
        check = probe(p.copy())
        if check.exit == Status.INSIDE:
            break
    width = max(c.width for c in certs.values())
    st = ctx.stepper(cfg.box, cfg.forcing, cfg.nonlinear)
    h0 = initial_data(p, ctx.dec, ctx.bg, cfg.gamma0, cfg.box.tau0, cfg.radius)
    tuned = evolve_until_exit(h0, cfg.box, ctx.bg, ctx.opm, ctx.dec, cfg.forcing, cfg.dtau, cfg.stride, cfg.nonlinear, st)
    return ShootResult(p.copy(), float(width), tuned, [certs[j] for j in range(K)], probes, sweeps, decay_slope(tuned))


@dataclass(frozen=True)
class WazReport:
    stable_ok: bool
    touches: int
    touches_outward: int
    exit_stats: Dict[str, int]

    @property
    def holds(self) -> bool:
        return self.stable_ok and self.touches == self.touches_outward


def verify_waz_box(
    trajectory: List[FlowState],
    dec: SpectralDecomposition,
    box: BoxSpec,
    probes: Optional[List[ExitResult]] = None,
    touch_tol: float = 1e-6,
) -> WazReport:
    ls = box.lambda_star
    tau = np.array([s.tau for s in trajectory])
    env = np.exp(ls * tau)
    hs = np.array([s.norms.l2f_s for s in trajectory])
    hu = np.array([s.norms.l2f_u for s in trajectory])
    stable_ok = True
    if hs[0] <= box.mu_s * env[0]:
        stable_ok = bool(np.all(hs <= box.mu_s * env * (1 + 1e-12)))
    U = hu / env
    touch = np.flatnonzero(np.abs(U - box.mu_u) <= touch_tol * box.mu_u)
    touch = touch[touch < len(trajectory) - 1]
    outward = int(np.sum(U[touch + 1] > U[touch]))
    stats: Dict[str, int] = {}
    if probes:
        c = Counter(pr.exit.value for pr in probes)
        stats = {k: int(c[k]) for k in sorted(c)}
    return WazReport(stable_ok, int(touch.size), outward, stats)


def p_sweep(cfg: ShootConfig, ctx: ShootContext, values: Sequence[float], coordinate: int = 0, threads: int = 1):
    """Exit map along one coordinate axis; results keep the order of ``values``."""

    def run(v):
        vec = np.zeros(cfg.K_active)
        vec[coordinate] = v
        return exit_map(vec, cfg, ctx)

    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(run, values))
    return [run(v) for v in values]
