import numpy as np
import pytest

from shrinker_lab import shooting
from shrinker_lab.errors import NoCrossingError, ValidationError
from shrinker_lab.flow import BoxSpec, ForcingSpec, Status, compute_norms, evolve_until_exit
from shrinker_lab.geometry import make_cylinder, uniform_grid
from shrinker_lab.operator import assemble, inner_f, norm_f, spectrum
from shrinker_lab.shooting import (
    ShootConfig,
    ShootContext,
    bump_gamma0,
    cutoff_derivative_sups,
    exit_map,
    find_p_star,
    initial_data,
    p_sweep,
    verify_waz_box,
)
from shrinker_lab.tensors import SymTensorField


def config(K_active=1, nonlinear=False, tau_max=12.0, dtau=0.05, **kw):
    box = BoxSpec(-0.25, 1e-2, 1e-2, 5e-2, 5e-2, 5e-2, 4.0, tau_max)
    return ShootConfig(0.05, 0.5, box, ForcingSpec(), dtau, K_active, nonlinear=nonlinear, **kw)


@pytest.fixture(scope="module")
def ctx(small_cyl):
    bg, opm, dec = small_cyl
    return ShootContext(bg, opm, dec)


# -------------------------------------------------------------------- cutoff


def test_bump_values(cyl):
    gamma0, tau0 = 0.5, 4.0
    L = gamma0 * np.exp(tau0)
    eta = bump_gamma0(cyl, gamma0, tau0)
    assert np.all(eta[cyl.f <= L / 2] == 1.0) and np.all(eta[cyl.f >= L] == 0.0)
    i = int(np.argmin(np.abs(cyl.f - L / 4)))
    j = int(np.argmin(np.abs(cyl.f - 2 * L)))
    assert eta[i] == 1.0 and eta[j] == 0.0
    pos = cyl.nodes >= 0
    assert np.all(np.diff(eta[pos]) <= 0)


def test_bump_derivatives_bounded_as_tau0_grows():
    bg = make_cylinder(2, uniform_grid(-300.0, 300.0, 60001))
    sups = [cutoff_derivative_sups(bg, bump_gamma0(bg, 0.5, t)) for t in (6.0, 8.0, 10.0)]
    grads = [s[0] for s in sups]
    hessians = [s[1] for s in sups]
    assert grads[2] <= grads[0] and hessians[2] <= hessians[0]


def test_bump_rejects_bad_input(cyl):
    with pytest.raises(ValidationError):
        bump_gamma0(cyl, 1.5, 4.0)
    with pytest.raises(ValidationError):
        bump_gamma0(cyl, 0.5, 10.0)  # support beyond the grid


# -------------------------------------------------------------- initial data


def test_zero_coefficients_give_zero(small_cyl):
    bg, _, dec = small_cyl
    h = initial_data([0.0, 0.0], dec, bg, 0.5, 4.0)
    assert not h.a.any() and not h.b.any()


def test_too_large_coefficients_rejected(small_cyl):
    bg, _, dec = small_cyl
    with pytest.raises(ValidationError):
        initial_data([1.0], dec, bg, 0.5, 4.0, radius=0.1)


def _tail(bg, dec, j, gamma0, tau0):
    """Weighted mass of h_j where the cutoff is below one."""
    L = gamma0 * np.exp(tau0)
    mask = (bg.f >= L / 2).astype(float)
    h = dec.eigenfields[j]
    return norm_f(bg, SymTensorField(mask * h.a, mask * h.b)) ** 2


def test_projection_error_bounded_by_tail(small_cyl):
    bg, _, dec = small_cyl
    gamma0, tau0 = 0.5, 4.0
    p = np.array([0.01, -0.007])
    h = initial_data(p, dec, bg, gamma0, tau0)
    tail = max(_tail(bg, dec, j, gamma0, tau0) for j in range(dec.K))
    scale = np.linalg.norm(p)
    for j in range(dec.K):
        target = p[j] if j < p.size else 0.0
        assert abs(inner_f(bg, h, dec.eigenfields[j]) - target) <= np.sqrt(tail) * scale * 2
    _, hs = h, h - dec.combine(dec.coefficients(h))
    assert norm_f(bg, hs) <= np.sqrt(tail) * scale * 2


def test_tail_decays_at_least_like_the_stated_bound(small_cyl):
    bg, _, dec = small_cyl
    gamma0 = 0.1
    taus = (4.0, 6.0, 7.0)
    tails = [max(_tail(bg, dec, j, gamma0, t) for j in range(dec.K)) for t in taus]
    bound = [np.exp(-(gamma0 / 100) * np.exp(t)) for t in taus]
    C = tails[0] / bound[0]
    for t, b in zip(tails[1:], bound[1:]):
        assert t <= C * b


def test_initial_c2_norm_scales_with_radius(small_cyl):
    bg, _, dec = small_cyl
    lam_K = abs(dec.eigenvalues[dec.K - 1])
    tau0 = 4.0
    ratios = []
    for gamma0 in (0.2, 0.3, 0.5):
        p_bar = 0.05
        R = p_bar * np.exp(-0.25 * tau0)
        h = initial_data([R / np.sqrt(2), R / np.sqrt(2)], dec, bg, gamma0, tau0)
        n, _ = compute_norms(bg, dec, h)
        ratios.append((n.c0 + n.c1 + n.c2) / (p_bar * gamma0**lam_K))
    C = ratios[-1]
    assert max(ratios) <= 2 * C


def test_config_validation():
    box = BoxSpec(-0.25, 1e-2, 1e-2, 5e-2, 5e-2, 5e-2, 4.0, 12.0)
    with pytest.raises(ValidationError):
        ShootConfig(2.0, 0.5, box, ForcingSpec(), 0.05, 1)
    with pytest.raises(ValidationError):
        ShootConfig(0.05, 1.0, box, ForcingSpec(), 0.05, 1)
    with pytest.raises(ValidationError):
        ShootConfig(0.05, 0.5, box, ForcingSpec(), 0.05, 0)


# ------------------------------------------------------------------ exit map


def test_boundary_exits_immediately(ctx):
    cfg = config()
    r = exit_map([cfg.radius], cfg, ctx)
    assert r.exit == Status.EXIT_UNSTABLE and r.tau_exit == cfg.box.tau0


def test_zero_never_exits(ctx):
    cfg = config()
    r = exit_map([0.0], cfg, ctx)
    assert r.exit == Status.INSIDE and r.tau_exit == pytest.approx(cfg.box.tau_max)
    assert np.all(r.F == 0.0)


def test_sign_flips_across_the_ball(ctx):
    cfg = config()
    lo = exit_map([-cfg.radius], cfg, ctx)
    hi = exit_map([cfg.radius], cfg, ctx)
    assert np.sign(lo.F[0]) == -np.sign(hi.F[0]) != 0


def test_exit_map_needs_matching_length(ctx):
    with pytest.raises(ValidationError):
        exit_map([0.0, 0.0], config(), ctx)


def test_linear_scaling_of_exit_time(ctx):
    cfg = config(dtau=0.01)
    lam = ctx.dec.eigenvalues[0]
    p = 0.02 * cfg.radius
    base = exit_map([p], cfg, ctx)
    assert base.exit == Status.EXIT_UNSTABLE
    for s in (0.5, 0.1):
        r = exit_map([s * p], cfg, ctx)
        expect = base.tau_exit + np.log(1 / s) / (lam - cfg.box.lambda_star)
        assert r.exit == Status.EXIT_UNSTABLE
        assert r.tau_exit == pytest.approx(expect, abs=1e-4)


def test_exit_time_continuity(ctx):
    cfg = config()
    p = 0.05 * cfg.radius
    a = exit_map([p], cfg, ctx)
    b = exit_map([p + 1e-8], cfg, ctx)
    assert abs(a.tau_exit - b.tau_exit) < 1e-3


def test_sweep_preserves_order(ctx):
    cfg = config()
    vals = [-cfg.radius, -0.1 * cfg.radius, 0.0, 0.1 * cfg.radius, cfg.radius]
    serial = p_sweep(cfg, ctx, vals)
    threaded = p_sweep(cfg, ctx, vals, threads=3)
    for s, t, v in zip(serial, threaded, vals):
        assert s.p[0] == t.p[0] == v and s.tau_exit == t.tau_exit
        assert np.array_equal(s.F, t.F)


# ---------------------------------------------------------------- the search


def test_linear_search_finds_zero(ctx):
    cfg = config()
    res = find_p_star(cfg, ctx)
    assert abs(res.p_star[0]) <= 1e-10 * cfg.radius
    assert res.survived
    cert = res.certificates[0]
    assert cert.sign_alternates
    rep = verify_waz_box(res.tuned.trajectory, ctx.dec, cfg.box, res.probes)
    assert rep.holds and rep.touches == 0
    assert sum(rep.exit_stats.values()) == len(res.probes)
    d = res.to_json()
    assert d["survived"] and len(d["certificates"]) == 1


def test_no_crossing_is_reported(ctx, monkeypatch):
    cfg = config()
    real = shooting.exit_map

    def same_sign(p, cfg_, ctx_, box=None):
        r = real(p, cfg_, ctx_, box)
        return shooting.ExitResult(r.p, np.abs(r.F) + 1.0, r.tau_exit, r.exit, r.flow)

    monkeypatch.setattr(shooting, "exit_map", same_sign)
    with pytest.raises(NoCrossingError):
        find_p_star(cfg, ctx)


def test_stable_only_data_keeps_stable_bound(ctx):
    bg, dec = ctx.bg, ctx.dec
    cfg = config()
    box = cfg.box
    eta = bump_gamma0(bg, cfg.gamma0, box.tau0)
    mode = dec.eigenfields[dec.K]
    h0 = 0.5 * box.mu_s * np.exp(box.lambda_star * box.tau0) * SymTensorField(eta * mode.a, eta * mode.b)
    # remove the small unstable leakage introduced by the cutoff
    h0 = h0 - dec.combine(dec.coefficients(h0))
    res = evolve_until_exit(h0, box, bg, ctx.opm, dec, None, cfg.dtau, nonlinear=False)
    rep = verify_waz_box(res.trajectory, dec, box)
    assert rep.stable_ok


def test_bracket_ends_exit_unstable_with_opposite_signs(ctx):
    cfg = config(nonlinear=True, tau_max=10.0)
    res = find_p_star(cfg, ctx)
    cert = res.certificates[0]
    assert cert.exact_root or cert.exit_alternates
    if not cert.exact_root:
        assert cert.exit_lower.p[0] <= res.p_star[0] <= cert.exit_upper.p[0]
