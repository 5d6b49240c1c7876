"""Rescaled perturbation flow dh/dtau = A h + E1(h) + E2(tau) and box monitoring.

E1 is the full quadratic remainder of the gauge-fixed flow written around the
background metric g.  With the frame inverse (g + h)^{-1} = g - hh and
hh = h/(1+h) blockwise, ht = hh - h (so ht = -a^2/(1+a) on the radial block):

    E1_ij = R_japb (g_ip ht^ab + hh^ab h_ip) + (i <-> j)
            + g^ab g^pq (grad h * grad h)_abpqij - hh^ab hess_ab h_ij,

    2 (grad h * grad h)_abpqij = D_i h_pa D_j h_qb + 2 D_a h_jp D_q h_ib
            - 2 D_a h_jp D_b h_iq - 2 D_j h_pa D_b h_iq - 2 D_i h_pa D_b h_jq,

where g^ab is the inverse of g + h.  Because h, hh and ht are diagonal in
the frame the curvature terms reduce to sums of sectional curvatures.

E2 is a synthetic grafting error: an angular bump in log f supported in
{e^tau <= f <= Gamma0 e^tau} with sup-norm C0/Gamma0 e^{-tau}.

Time stepping is IMEX: Crank-Nicolson for A, Heun (predictor-corrector)
for E1 + E2, which keeps second order and is exactly Crank-Nicolson when
the explicit terms vanish.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Tuple

import numpy as np
import scipy.linalg as sla

from .errors import MetricDegenerateError, NumericalError, ValidationError
from .geometry import Background
from .operator import OperatorMatrix, SpectralDecomposition, banded_matvec, norm_f
from .tensors import SymTensorField, check_grid, frame_tensors

PROFILE_OFF = "Off"
PROFILE_BUMP = "AngularBump"
RAMP = 0.2  # width of each smoothstep ramp of the forcing, in units of log(f)/log(Gamma0)


class Status(str, enum.Enum):
    INSIDE = "Inside"
    EXIT_UNSTABLE = "ExitUnstable"
    EXIT_STABLE = "ExitStable"
    EXIT_C0 = "ExitC0"
    EXIT_C1 = "ExitC1"
    EXIT_C2 = "ExitC2"


@dataclass(frozen=True)
class BoxSpec:
    lambda_star: float
    mu_u: float
    mu_s: float
    eps0: float
    eps1: float
    eps2: float
    tau0: float
    tau_max: float

    def __post_init__(self) -> None:
        if not self.lambda_star < 0:
            raise ValidationError("lambda_star must be negative")
        for name in ("mu_u", "mu_s", "eps0", "eps1", "eps2"):
            v = getattr(self, name)
            if not 0 < v <= 1:
                raise ValidationError(f"{name} must lie in (0, 1]")
        if not self.tau0 < self.tau_max:
            raise ValidationError("need tau0 < tau_max")


@dataclass(frozen=True)
class ForcingSpec:
    C0: float = 0.0
    Gamma0: float = 100.0
    profile: str = PROFILE_OFF

    def __post_init__(self) -> None:
        if self.C0 < 0 or not self.Gamma0 > 1:
            raise ValidationError("forcing needs C0 >= 0 and Gamma0 > 1")
        if self.profile not in (PROFILE_OFF, PROFILE_BUMP):
            raise ValidationError(f"unknown forcing profile {self.profile!r}")

    @property
    def active(self) -> bool:
        return self.profile != PROFILE_OFF and self.C0 > 0


@dataclass(frozen=True)
class Norms:
    l2f: float
    l2f_u: float
    l2f_s: float
    c0: float
    c1: float
    c2: float

    def as_tuple(self) -> Tuple[float, ...]:
        return (self.l2f, self.l2f_u, self.l2f_s, self.c0, self.c1, self.c2)


@dataclass(frozen=True, eq=False)
class FlowState:
    h: SymTensorField
    tau: float
    norms: Norms
    status: Status
    coeffs: np.ndarray = field(default_factory=lambda: np.zeros(0))
    e1: Optional[SymTensorField] = None


# ---------------------------------------------------------------- nonlinearity


def _inverse_parts(h: SymTensorField):
    ga = 1.0 + h.a
    gb = 1.0 + h.b
    if np.any(ga <= 0) or np.any(gb <= 0):
        raise MetricDegenerateError("metric degenerate: g + h is not positive definite")
    hh_a, hh_b = h.a / ga, h.b / gb
    return (1.0 / ga, 1.0 / gb), (hh_a, hh_b), (hh_a - h.a, hh_b - h.b)


def _e1_from_jets(bg: Background, h: SymTensorField, jets) -> SymTensorField:
    _, T, Hs = jets
    m = bg.m
    d = m + 1
    (gia, gib), (hha, hhb), (hta, htb) = _inverse_parts(h)
    gv = np.empty((h.a.size, d))
    gv[:, 0] = gia
    gv[:, 1:] = gib[:, None]
    hhv = np.empty_like(gv)
    hhv[:, 0] = hha
    hhv[:, 1:] = hhb[:, None]

    # curvature part, diagonal: 2 sum_{a != i} sec_ia (ht_a + hh_a h_i)
    Kr, Ks = bg.K_rad, bg.K_sph
    cur_a = 2.0 * m * Kr * (htb + hhb * h.a)
    cur_b = 2.0 * (Kr * (hta + hha * h.b) + (m - 1) * Ks * (htb + hhb * h.b))

    # fold the inverse-metric weights into T once: W ~ g^{pp} g^{aa} on the last two slots,
    # V ~ g^{xx} g^{zz} on the first and last, so every term is a two-tensor contraction
    W = T * (gv[:, None, :, None] * gv[:, None, None, :])
    V = T * (gv[:, :, None, None] * gv[:, None, None, :])
    t1 = np.einsum("nipa,njpa->nij", W, T)
    t2 = np.einsum("npia,najp->nij", V, T)
    t3 = np.einsum("najp,naip->nij", V, T)
    t4 = np.einsum("njpa,naip->nij", W, T)
    t5 = np.einsum("nipa,najp->nij", W, T)
    quad = 0.5 * t1 + t2 - t3 - t4 - t5
    hess = np.einsum("na,naaij->nij", hhv, Hs)
    E = quad - hess
    E = 0.5 * (E + np.swapaxes(E, 1, 2))
    ea = E[:, 0, 0] + cur_a
    eb = np.mean(np.diagonal(E, axis1=1, axis2=2)[:, 1:], axis=1) + cur_b
    return SymTensorField(ea, eb)


def e1_nonlinearity(bg: Background, h: SymTensorField) -> SymTensorField:
    check_grid(bg, h)
    return _e1_from_jets(bg, h, frame_tensors(bg, h))


# -------------------------------------------------------------------- forcing


def _smoothstep(x):
    x = np.clip(x, 0.0, 1.0)
    return x**3 * (10.0 - 15.0 * x + 6.0 * x**2)


def forcing_profile(f: np.ndarray, tau: float, Gamma0: float) -> np.ndarray:
    """Plateau bump in s = log(f e^{-tau}) / log(Gamma0); zero outside s in [0, 1]."""
    with np.errstate(divide="ignore"):
        s = (np.log(f) - tau) / np.log(Gamma0)
    up = _smoothstep(s / RAMP)
    down = _smoothstep((1.0 - s) / RAMP)
    out = np.minimum(up, down)
    out[(s <= 0) | (s >= 1)] = 0.0
    return out


def e2_forcing(spec: ForcingSpec, bg: Background, tau: float) -> SymTensorField:
    N = bg.grid.size
    if not spec.active or bg.f is None:
        return SymTensorField.zeros(N)
    amp = spec.C0 / spec.Gamma0 * np.exp(-tau) / np.sqrt(bg.m)
    b = amp * forcing_profile(bg.f, tau, spec.Gamma0)
    return SymTensorField(np.zeros(N), b)


# ---------------------------------------------------------------- diagnostics


def compute_norms(bg: Background, dec: SpectralDecomposition, h: SymTensorField, jets=None):
    if jets is None:
        jets = frame_tensors(bg, h)
    H, G, Hs = jets
    coeffs = dec.coefficients(h)
    hs = h - dec.combine(coeffs)
    norms = Norms(
        l2f=norm_f(bg, h),
        l2f_u=float(np.linalg.norm(coeffs)),
        l2f_s=norm_f(bg, hs),
        c0=float(np.sqrt(np.max(np.einsum("nij,nij->n", H, H)))),
        c1=float(np.sqrt(np.max(np.einsum("nkij,nkij->n", G, G)))),
        c2=float(np.sqrt(np.max(np.einsum("nlkij,nlkij->n", Hs, Hs)))),
    )
    return norms, coeffs


def status_from_norms(norms: Norms, tau: float, box: BoxSpec) -> Status:
    env = np.exp(box.lambda_star * tau)
    if norms.l2f_u > box.mu_u * env:
        return Status.EXIT_UNSTABLE
    if norms.l2f_s > box.mu_s * env:
        return Status.EXIT_STABLE
    if norms.c0 > box.eps0:
        return Status.EXIT_C0
    if norms.c1 > box.eps1:
        return Status.EXIT_C1
    if norms.c2 > box.eps2:
        return Status.EXIT_C2
    return Status.INSIDE


def box_status(state: FlowState, box: BoxSpec, dec: SpectralDecomposition) -> Status:
    norms, _ = compute_norms(dec.bg, dec, state.h)
    return status_from_norms(norms, state.tau, box)


def make_state(
    h: SymTensorField,
    tau: float,
    bg: Background,
    dec: SpectralDecomposition,
    box: BoxSpec,
    nonlinear: bool = True,
) -> FlowState:
    jets = frame_tensors(bg, h)
    norms, coeffs = compute_norms(bg, dec, h, jets)
    e1 = _e1_from_jets(bg, h, jets) if nonlinear else None
    return FlowState(h, float(tau), norms, status_from_norms(norms, tau, box), coeffs, e1)


# ---------------------------------------------------------------- time stepping


class Stepper:
    """IMEX Crank-Nicolson/Heun integrator bound to one background."""

    def __init__(
        self,
        bg: Background,
        opm: OperatorMatrix,
        dec: SpectralDecomposition,
        box: BoxSpec,
        forcing: Optional[ForcingSpec] = None,
        nonlinear: bool = True,
    ) -> None:
        self.bg, self.opm, self.dec, self.box = bg, opm, dec, box
        self.forcing = forcing or ForcingSpec()
        self.nonlinear = nonlinear
        self._factors: Dict[float, np.ndarray] = {}

    def _factor(self, dt: float) -> np.ndarray:
        fac = self._factors.get(dt)
        if fac is None:
            band = -0.5 * dt * self.opm.band
            band[0] += self.opm.mass
            try:
                fac = sla.cholesky_banded(band, lower=True)
            except np.linalg.LinAlgError as exc:
                raise NumericalError(f"implicit solve failed for dtau={dt}") from exc
            if len(self._factors) > 8:
                self._factors.clear()
            self._factors[dt] = fac
        return fac

    def _explicit(self, state: FlowState, tau: float, h: SymTensorField, e1: Optional[SymTensorField]):
        x = np.zeros(2 * self.opm.n_active)
        if self.nonlinear:
            if e1 is None:
                e1 = e1_nonlinearity(self.bg, h)
            x += self.opm.to_active(e1)
        if self.forcing.active:
            x += self.opm.to_active(e2_forcing(self.forcing, self.bg, tau))
        return x

    def state(self, h: SymTensorField, tau: float) -> FlowState:
        return make_state(h, tau, self.bg, self.dec, self.box, self.nonlinear)

    def step(self, state: FlowState, dt: float) -> FlowState:
        if not dt > 0:
            raise ValidationError("dtau must be positive")
        opm = self.opm
        fac = self._factor(dt)
        x = opm.to_active(state.h)
        base = opm.mass * x + 0.5 * dt * banded_matvec(opm.band, x)
        explicit = self.nonlinear or self.forcing.active
        if explicit:
            n0 = self._explicit(state, state.tau, state.h, state.e1)
            xp = sla.cho_solve_banded((fac, True), base + dt * opm.mass * n0)
            hp = opm.from_active(xp)
            n1 = self._explicit(state, state.tau + dt, hp, None)
            xn = sla.cho_solve_banded((fac, True), base + 0.5 * dt * opm.mass * (n0 + n1))
        else:
            xn = sla.cho_solve_banded((fac, True), base)
        return self.state(opm.from_active(xn), state.tau + dt)


def step(
    state: FlowState,
    dtau: float,
    bg: Background,
    opm: OperatorMatrix,
    forcing: ForcingSpec,
    dec: SpectralDecomposition,
    box: BoxSpec,
    nonlinear: bool = True,
) -> FlowState:
    return Stepper(bg, opm, dec, box, forcing, nonlinear).step(state, dtau)


@dataclass(frozen=True, eq=False)
class FlowResult:
    trajectory: List[FlowState]
    exit: Status
    tau_exit: float
    final: FlowState


def evolve_until_exit(
    h0: SymTensorField,
    box: BoxSpec,
    bg: Background,
    opm: OperatorMatrix,
    dec: SpectralDecomposition,
    forcing: Optional[ForcingSpec],
    dtau: float,
    stride: int = 1,
    nonlinear: bool = True,
    stepper: Optional[Stepper] = None,
) -> FlowResult:
    """Step from tau0 until the box is left or tau_max is reached.

    The exit time is refined by bisecting the length of the last step down
    to 1e-8.  A state already outside at tau0 exits immediately.
    """
    if not dtau > 0 or stride < 1:
        raise ValidationError("need dtau > 0 and stride >= 1")
    st = stepper or Stepper(bg, opm, dec, box, forcing, nonlinear)
    state = st.state(h0, box.tau0)
    traj = [state]
    if state.status != Status.INSIDE:
        return FlowResult(traj, state.status, state.tau, state)
    k = 0
    while box.tau_max - state.tau > 1e-12:
        dt = min(dtau, box.tau_max - state.tau)
        new = st.step(state, dt)
        k += 1
        if new.status != Status.INSIDE:
            lo, hi, out = 0.0, dt, new
            while hi - lo > 1e-8:
                mid = 0.5 * (lo + hi)
                trial = st.step(state, mid)
                if trial.status == Status.INSIDE:
                    lo = mid
                else:
                    hi, out = mid, trial
            traj.append(out)
            return FlowResult(traj, out.status, out.tau, out)
        state = new
        if k % stride == 0:
            traj.append(state)
    if traj[-1] is not state:
        traj.append(state)
    return FlowResult(traj, Status.INSIDE, state.tau, state)


# ------------------------------------------------------------- dynamic checks


def envelope_ratio(trajectory: List[FlowState], bg: Background, lambda_star: float, f_floor: float = 0.1) -> float:
    """sup over samples and nodes of (|h| + |grad h| + |hess h|) / (f^{|lambda*|} e^{lambda* tau})."""
    weight = np.maximum(bg.f, f_floor) ** abs(lambda_star)
    best = 0.0
    for s in trajectory:
        H, G, Hs = frame_tensors(bg, s.h)
        tot = (
            np.sqrt(np.einsum("nij,nij->n", H, H))
            + np.sqrt(np.einsum("nkij,nkij->n", G, G))
            + np.sqrt(np.einsum("nlkij,nlkij->n", Hs, Hs))
        )
        best = max(best, float(np.max(tot / weight)) * np.exp(-lambda_star * s.tau))
    return best


def envelope_check(trajectory: List[FlowState], bg: Background, W: float, lambda_star: float) -> bool:
    return envelope_ratio(trajectory, bg, lambda_star) <= W


@dataclass(frozen=True)
class ProjectionReport:
    unstable_ok: bool
    stable_ok: bool
    e1_ok: bool
    worst_unstable_margin: float
    worst_stable_margin: float
    C1: float
    W: float
    samples: int

    @property
    def holds(self) -> bool:
        return self.unstable_ok and self.stable_ok and self.e1_ok


def e1_ratio_at_start(trajectory: List[FlowState], bg: Background, lambda_star: float) -> float:
    """||E1(tau0)|| / (W0^2 e^{2 lambda* tau0}) with W0 the envelope ratio at tau0."""
    s0 = trajectory[0]
    if s0.e1 is None:
        return 0.0
    W0 = envelope_ratio([s0], bg, lambda_star)
    if W0 == 0:
        return 0.0
    return norm_f(bg, s0.e1) / (W0**2 * np.exp(2 * lambda_star * s0.tau))


def check_projection_dynamics(
    trajectory: List[FlowState],
    dec: SpectralDecomposition,
    box: BoxSpec,
    C_meas: float,
    C1: Optional[float] = None,
    W: Optional[float] = None,
    rel_slack: float = 1e-9,
) -> ProjectionReport:
    """Growth/decay inequalities for the projections, in integrated (Gronwall) form.

    Between consecutive samples, with U = e^{-lambda* tau}||h_u||, S likewise,
    alpha = lambda_K - lambda*, beta = lambda_{K+1} - lambda*, B = C_meas e^{lambda* tau0}:

        U_{k+1} >= e^{alpha d} U_k - B (e^{alpha d} - 1)/alpha
        S_{k+1} <= e^{beta d} S_k + B (e^{beta d} - 1)/beta

    which integrate the differential inequalities exactly.  Also checks
    ||E1(tau)|| <= C1 W^2 e^{2 lambda* tau} with C1 fitted at tau0 unless given.
    """
    if len(trajectory) < 3:
        raise ValidationError("projection dynamics need at least 3 samples")
    bg = dec.bg
    ls = box.lambda_star
    K = dec.K
    alpha = dec.eigenvalues[K - 1] - ls
    beta = dec.eigenvalues[K] - ls
    B = C_meas * np.exp(ls * box.tau0)
    tau = np.array([s.tau for s in trajectory])
    U = np.array([s.norms.l2f_u for s in trajectory]) * np.exp(-ls * tau)
    S = np.array([s.norms.l2f_s for s in trajectory]) * np.exp(-ls * tau)
    d = np.diff(tau)
    ea = np.exp(alpha * d)
    eb = np.exp(beta * d)
    lower_u = ea * U[:-1] - B * (ea - 1.0) / alpha
    upper_s = eb * S[:-1] + B * (eb - 1.0) / beta
    # discretization slack scales with the whole solution, not one projection
    slack = rel_slack * (U[:-1] + U[1:] + S[:-1] + S[1:]) + 1e-300
    slack_u = slack_s = slack
    mu = U[1:] - lower_u + slack_u
    ms = upper_s - S[1:] + slack_s
    if W is None:
        W = envelope_ratio(trajectory, bg, ls)
    if C1 is None:
        C1 = e1_ratio_at_start(trajectory, bg, ls)
    e1_ok = True
    for s in trajectory:
        if s.e1 is None:
            continue
        if norm_f(bg, s.e1) > C1 * W**2 * np.exp(2 * ls * s.tau) * (1 + 1e-9) + 1e-300:
            e1_ok = False
            break
    return ProjectionReport(
        bool(np.all(mu >= 0)),
        bool(np.all(ms >= 0)),
        e1_ok,
        float(np.min(mu)),
        float(np.min(ms)),
        float(C1),
        float(W),
        len(trajectory),
    )


def trajectory_rows(trajectory: List[FlowState]) -> List[tuple]:
    return [(s.tau, *s.norms.as_tuple(), s.status.value) for s in trajectory]
