import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from shrinker_lab import fd
from shrinker_lab.barriers import (
    INTERMEDIATE,
    LARGE,
    BarrierParams,
    barrier_value,
    crossing_check,
    defect_rows,
    defect_terms,
    glue_recipe,
    glue_supersolution,
    glue_tau_scan,
    hypothesis_holds,
    hypothesis_margin,
    intermediate_defect,
    large_defect,
    sup_rm_f,
)
from shrinker_lab.errors import GlueError, HypothesisError, ValidationError
from shrinker_lab.geometry import make_cylinder, make_gaussian, uniform_grid


@pytest.fixture(scope="module")
def wide_gauss():
    """Gaussian reaching f = 2.25e6, enough for the large-scale region at tau = 10."""
    return make_gaussian(3, uniform_grid(0.0, 3000.0, 300001))


@pytest.fixture(scope="module")
def mid_gauss():
    return make_gaussian(3, uniform_grid(0.0, 450.0, 45001))


def intermediate(B=2.0, **kw):
    return BarrierParams(INTERMEDIATE, A=1.0, B=B, kappa=0.5, omega=1.0, Cn=4.0, eps=0.01, Gamma=50.0, gamma=0.01, **kw)


def large(B1=None, **kw):
    a, C0 = 1e-4, 1.0
    B1 = C0 * np.sqrt(a) + 1e-3 if B1 is None else B1
    kw.setdefault("tau_window", (8.0, 10.0))
    return BarrierParams(LARGE, a=a, B1=B1, C0=C0, gamma=0.05, Gamma=100.0, **kw)


# ------------------------------------------------------------------- examples


def test_intermediate_supersolution(wide_gauss):
    p = intermediate(tau_window=(5.0, 10.0))
    assert hypothesis_margin(wide_gauss, p) == pytest.approx(0.0, abs=1e-12)
    rep = intermediate_defect(wide_gauss, p)
    assert rep.supersolution and rep.nodes_checked > 0
    assert rep.positivity is True


def test_intermediate_falsified(wide_gauss):
    p = intermediate(B=0.0, tau_window=(5.0, 10.0))
    assert hypothesis_margin(wide_gauss, p) < 0
    rep = intermediate_defect(wide_gauss, p, falsify=True)
    assert rep.min_defect < 0 and not rep.supersolution


def test_intermediate_refuses_without_falsify(wide_gauss):
    with pytest.raises(HypothesisError):
        intermediate_defect(wide_gauss, intermediate(B=0.0))


def test_intermediate_positivity_point():
    # C + B/Gamma <= A gives u > C e^{-kappa tau} f^kappa at f = 2 Gamma
    p = intermediate()
    C = p.A - p.B / p.Gamma
    tau = 7.0
    f = np.array([2 * p.Gamma])
    bg = make_gaussian(3, uniform_grid(0.0, 30.0, 301))
    u = barrier_value(bg, p, tau, f)
    assert u[0] > 0 and u[0] >= C * np.exp(-p.kappa * tau) * f[0] ** p.kappa * (1 - 1e-14)


def test_large_supersolution(wide_gauss):
    p = large()
    assert hypothesis_holds(wide_gauss, p)
    rep = large_defect(wide_gauss, p)
    assert rep.supersolution
    assert rep.positivity is True


def test_large_falsified(wide_gauss):
    p = large(B1=0.5 * np.sqrt(1e-4))
    assert not hypothesis_holds(wide_gauss, p)
    rep = large_defect(wide_gauss, p, falsify=True)
    assert rep.min_defect < 0


def test_large_positivity_point():
    p = large()
    tau0 = p.tau_window[0]
    c = p.a - (p.B1 / p.gamma) * np.exp(-tau0)
    assert c > 0
    f = np.array([p.gamma * np.exp(tau0) * (1 + 1e-9)])
    bg = make_gaussian(3, uniform_grid(0.0, 30.0, 301))
    assert barrier_value(bg, p, tau0, f)[0] > c


def test_region_empty():
    bg = make_gaussian(3, uniform_grid(0.0, 60.0, 6001))
    with pytest.raises(ValidationError, match="region empty"):
        intermediate_defect(bg, intermediate(tau_window=(5.0, 6.0)))


def test_wrong_kind_rejected(mid_gauss):
    with pytest.raises(ValidationError):
        large_defect(mid_gauss, intermediate())
    with pytest.raises(ValidationError):
        BarrierParams("Huge")
    with pytest.raises(ValidationError):
        BarrierParams(INTERMEDIATE, Cn=0.0)


def test_per_tau_and_rows(mid_gauss):
    p = intermediate(tau_window=(9.0, 10.0))
    rep = intermediate_defect(mid_gauss, p, grid_tau=[9.0, 9.5, 10.0])
    assert len(rep.per_tau) == 3 and sum(r[3] for r in rep.per_tau) == rep.nodes_checked
    rows = defect_rows(mid_gauss, p, [9.5], stride=10)
    assert rows and all(r[1] == 9.5 for r in rows)
    d = rep.to_json()
    assert d["kind"] == INTERMEDIATE and d["min_defect"] == rep.min_defect


# ----------------------------------------------------------------- invariants


def test_defect_is_linear_in_curvature_coefficient(cyl):
    p = intermediate()
    t1 = defect_terms(cyl, p, 10.0, curvature_coeff=3.0)
    t2 = defect_terms(cyl, p, 10.0, curvature_coeff=6.0)
    assert t1.index.size > 0 and np.all(cyl.rm_norm[t1.index] > 0)
    shift = 3.0 * cyl.rm_norm[t1.index] * t1.u
    assert np.allclose(t1.defect - t2.defect, shift, rtol=1e-12, atol=1e-300)


def test_drift_laplacian_of_power_on_gaussian():
    # |grad f|^2 = f on the Gaussian, so the last term reduces to kappa(kappa - 1) f^{kappa-1}
    bg = make_gaussian(3, uniform_grid(0.0, 20.0, 20001))
    n = 3
    for kappa in (0.5, 1.0, 1.7):
        u = bg.f**kappa
        lap_f = fd.d2(u, bg.h) + bg.m * bg.q * fd.d1(u, bg.h) - bg.f1 * fd.d1(u, bg.h)
        f = bg.f
        with np.errstate(divide="ignore", invalid="ignore"):
            exact = 0.5 * n * kappa * f ** (kappa - 1) - kappa * f**kappa + kappa * (kappa - 1) * f ** (kappa - 1) * (
                bg.f1**2 / f
            )
        sel = (bg.nodes > 1.0) & (bg.nodes < 19.0)
        assert np.max(np.abs(lap_f[sel] - exact[sel]) / np.maximum(1.0, np.abs(exact[sel]))) < 1e-6


@settings(max_examples=8, deadline=None)
@given(B=st.floats(-1.0, 3.0), dB=st.floats(0.01, 2.0))
def test_intermediate_min_defect_monotone_in_B(B, dB):
    bg = make_gaussian(3, uniform_grid(0.0, 60.0, 6001))
    taus = [9.0, 9.5, 10.0]
    lo = intermediate_defect(bg, intermediate(B=B), grid_tau=taus, falsify=True).min_defect
    hi = intermediate_defect(bg, intermediate(B=B + dB), grid_tau=taus, falsify=True).min_defect
    assert hi >= lo - 1e-15


@settings(max_examples=8, deadline=None)
@given(B1=st.floats(0.0, 0.05), dB=st.floats(1e-4, 0.05))
def test_large_min_defect_monotone_in_B1(mid_gauss, B1, dB):
    taus = [5.0, 5.5, 6.0]
    kw = dict(tau_window=(5.0, 6.0))
    lo = large_defect(mid_gauss, large(B1=B1, **kw), grid_tau=taus, falsify=True).min_defect
    hi = large_defect(mid_gauss, large(B1=B1 + dB, **kw), grid_tau=taus, falsify=True).min_defect
    assert hi >= lo - 1e-15


def test_sup_rm_f_zero_on_gaussian(mid_gauss, cyl):
    assert sup_rm_f(mid_gauss) == 0.0
    assert sup_rm_f(cyl) > 0


# ---------------------------------------------------------------------- gluing


def test_glue_recipe_values(wide_gauss):
    rec = glue_recipe(wide_gauss, C1=1.0, delta=1e-2, lambda_star=-0.25)
    assert rec.A == 2.0 and rec.B0 == pytest.approx(3.0) and rec.a == pytest.approx(1e-4)
    assert rec.B1 == 1.0 and rec.kappa == 0.5
    assert rec.gamma_plus == pytest.approx(1e-8) and rec.gamma_minus == pytest.approx(6.25e-10)


def test_glue_crossings_hold_after_scan_threshold(wide_gauss):
    rec = glue_recipe(wide_gauss, C1=1.0, delta=1e-2, lambda_star=-0.25)
    checks, threshold = glue_tau_scan(wide_gauss, rec, np.arange(25.0, 33.0 + 1e-9, 0.25))
    assert threshold is not None and 30.0 <= threshold <= 32.0
    assert all(c.holds for c in checks if c.tau >= threshold)
    assert not checks[0].holds


def test_glue_fails_far_below_threshold(wide_gauss):
    rec = glue_recipe(wide_gauss, C1=1.0, delta=1e-2, lambda_star=-0.25)
    with pytest.raises(GlueError):
        glue_supersolution(wide_gauss, rec.intermediate(), rec.large(), rec.gamma_minus, rec.gamma_plus, 25.0)


def test_glued_barrier_continuous_at_interfaces(wide_gauss):
    rec = glue_recipe(wide_gauss, C1=1.0, delta=1e-2, lambda_star=-0.25)
    tau = 32.0
    u = glue_supersolution(wide_gauss, rec.intermediate(), rec.large(), rec.gamma_minus, rec.gamma_plus, tau)
    f = wide_gauss.f
    for g in (rec.gamma_minus, rec.gamma_plus):
        k = int(np.searchsorted(f, g * np.exp(tau)))
        jump = abs(u[k] - u[k - 1])
        typical = max(abs(u[k + 1] - u[k]), abs(u[k - 1] - u[k - 2]))
        assert jump <= 3 * typical


def test_glue_interface_off_grid(mid_gauss):
    rec = glue_recipe(mid_gauss, C1=1.0, delta=1e-2, lambda_star=-0.25)
    with pytest.raises(ValidationError):
        crossing_check(mid_gauss, rec.intermediate(), rec.large(), rec.gamma_minus, rec.gamma_plus, 40.0)


def test_glue_argument_checks(mid_gauss):
    rec = glue_recipe(mid_gauss, C1=1.0, delta=1e-2, lambda_star=-0.25)
    with pytest.raises(ValidationError):
        glue_supersolution(mid_gauss, rec.large(), rec.intermediate(), rec.gamma_minus, rec.gamma_plus, 20.0)
    with pytest.raises(ValidationError):
        glue_supersolution(mid_gauss, rec.intermediate(), rec.large(), rec.gamma_plus, rec.gamma_minus, 20.0)
    with pytest.raises(ValidationError):
        glue_recipe(mid_gauss, C1=1.0, delta=1e-2, lambda_star=0.25)


def test_curved_background_raises_recipe_constants():
    cyl = make_cylinder(2, uniform_grid(-10.0, 10.0, 201))
    rec = glue_recipe(cyl, C1=1.0, delta=1e-2, lambda_star=-0.25)
    S = sup_rm_f(cyl)
    assert rec.B1 == pytest.approx(32.0 * S + 1.0)
    assert rec.B0 == pytest.approx(2.0 * (0.5 * 2.0 + 32.0 * S) + 1.0)
