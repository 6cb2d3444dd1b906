from dataclasses import replace

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st
from numba import njit

from micromacro import (DirectConfig, IndirectConfig, ProposalKernel, butane_model,
                        mala_log_accept, n_lambda_table, run_direct_chain, run_indirect_chain,
                        run_mala_chain, threeatom_model)
from micromacro.core import rc_difference, wrap_angle
from micromacro.harness import efficiency_gain, kde, mse
from micromacro.mmmcmc import direct_micro_log_accept, indirect_micro_log_accept
from micromacro.molecules import _threeatom_potential
from micromacro.samplers import macro_accept_log_prob

from toy import poly_free_energy

FAST = settings(max_examples=25, deadline=None,
                suppress_health_check=[HealthCheck.function_scoped_fixture])
finite = st.floats(-50, 50, allow_nan=False)
positive = st.floats(1e-3, 1e3)


@njit(cache=True)
def _shifted_potential(x, p):
    return _threeatom_potential(x, p) + p[-1]


def shifted(model, c):
    return replace(model, potential_fn=_shifted_potential, params=np.append(model.params, c))


@pytest.fixture(scope="module")
def base():
    m = threeatom_model(epsilon=1e-3)
    return m, n_lambda_table(m.exact, 1e4, m.beta)


@FAST
@given(c=st.floats(-1e3, 1e3))
def test_shifted_potential_changes_no_decision(base, c):
    m, table = base
    s = shifted(m, c)
    assert s.potential(m.x0) == pytest.approx(m.potential(m.x0) + c)
    a = run_mala_chain(m, None, 200, 1e-3, random_state=3).rc_samples
    b = run_mala_chain(s, None, 200, 1e-3, random_state=3).rc_samples
    np.testing.assert_array_equal(a, b)
    kern = ProposalKernel("langevin", 0.05)
    for mod_a, mod_b in ((m, s),):
        da = DirectConfig(mod_a, kern, mod_a.free_energy("A_shift"), mod_a.reconstruction("nu_wide"))
        db = DirectConfig(mod_b, kern, mod_b.free_energy("A_shift"), mod_b.reconstruction("nu_wide"))
        np.testing.assert_array_equal(run_direct_chain(da, None, 200, 4).rc_samples,
                                      run_direct_chain(db, None, 200, 4).rc_samples)
        ia = IndirectConfig(mod_a, kern, mod_a.exact, 1e4, 3, n_lambda=table)
        ib = IndirectConfig(mod_b, kern, mod_b.exact, 1e4, 3, n_lambda=table)
        np.testing.assert_array_equal(run_indirect_chain(ia, None, 100, 5).rc_samples,
                                      run_indirect_chain(ib, None, 100, 5).rc_samples)


@given(lp=st.lists(finite, min_size=6, max_size=6), c=finite, d=finite)
def test_micro_ratios_are_translation_consistent(lp, c, d):
    lp_x, lp_xp, lz, lzp, lnx, lnxp = lp
    a = direct_micro_log_accept(lp_x, lp_xp, lz, lzp, lnx, lnxp)
    b = direct_micro_log_accept(lp_x + c, lp_xp + c, lz + d, lzp + d, lnx, lnxp)
    assert a <= 0 and b == pytest.approx(a, abs=1e-9)
    i = indirect_micro_log_accept(lz, lzp, lnx, lnxp)
    j = indirect_micro_log_accept(lz + c, lzp + c, lnx + d, lnxp + d)
    assert i <= 0 and j == pytest.approx(i, abs=1e-9)


@given(z=st.floats(-3, 3), zp=st.floats(-3, 3), c=finite)
def test_macro_ratio_is_translation_consistent(z, zp, c):
    fe = poly_free_energy(0.7, 0.1)
    a = macro_accept_log_prob(fe, z, zp, -0.3, -0.1, 1.3)
    b = macro_accept_log_prob(fe, z, zp, -0.3 + c, -0.1 + c, 1.3)
    assert a <= 0 and b == pytest.approx(a, abs=1e-9)


@given(x=st.floats(-4, 4), y=st.floats(-4, 4), dt=st.floats(1e-3, 2.0), c=finite)
def test_mala_log_alpha_bounded_and_shift_free(x, y, dt, c):
    lp = lambda v: -0.5 * v[0] ** 2 - 0.1 * v[0] ** 4
    grad = lambda v: np.array([-v[0] - 0.4 * v[0] ** 3])
    a = mala_log_accept(lp, grad, np.array([x]), np.array([y]), dt, 1.0)
    b = mala_log_accept(lambda v: lp(v) + c, grad, np.array([x]), np.array([y]), dt, 1.0)
    assert a <= 0 and b == pytest.approx(a, abs=1e-9)


@settings(max_examples=50, deadline=None)
@given(z=st.floats(0.05, np.pi - 0.05), variant=st.sampled_from(["nu_exact", "nu_wide"]),
       seed=st.integers(0, 2**32))
def test_threeatom_fiber_identity(z, variant, seed):
    m = threeatom_model(epsilon=1e-3)
    x = m.reconstruction(variant).sample(z, m.beta, seed)
    assert abs(m.rc(x) - z) <= 1e-12


@settings(max_examples=50, deadline=None)
@given(z=st.floats(-np.pi, np.pi, exclude_min=True),
       variant=st.sampled_from(["nu_exact", "nu_wide"]), seed=st.integers(0, 2**32))
def test_butane_fiber_identity(z, variant, seed):
    m = butane_model()
    x = m.reconstruction(variant).sample(z, m.beta, seed)
    assert abs(rc_difference(m.rc(x), z, 2 * np.pi)) <= 1e-12


@given(phi=st.floats(-1e3, 1e3), k=st.integers(-5, 5))
def test_butane_periodicity(phi, k):
    m = butane_model()
    x = m.x0.copy()
    x[-1] = phi
    y = x.copy()
    y[-1] = phi + 2 * np.pi * k
    assert m.potential(y) == pytest.approx(m.potential(x), rel=1e-9, abs=1e-6)
    for fe in m.free_energies.values():
        # contracted variants are defined on one period and evaluated after wrapping
        assert fe(phi + 2 * np.pi * k) == pytest.approx(fe(phi), rel=1e-9, abs=1e-6)


@given(z=st.floats(-1e4, 1e4))
def test_wrap_angle_range(z):
    w = wrap_angle(z)
    assert -np.pi < w <= np.pi
    assert abs(np.sin(w) - np.sin(z)) < 1e-9 and abs(np.cos(w) - np.cos(z)) < 1e-9


@given(a=st.floats(-100, 100), b=st.floats(-100, 100))
def test_minimal_image(a, b):
    d = rc_difference(a, b, 2 * np.pi)
    assert abs(d) <= np.pi + 1e-12
    assert abs(np.sin(d) - np.sin(a - b)) < 1e-9


@given(est=st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=30), ref=st.floats(-1e3, 1e3),
       seed=st.integers(0, 1000))
def test_mse_permutation_invariant(est, ref, seed):
    perm = np.random.default_rng(seed).permutation(est)
    assert mse(perm, ref) == pytest.approx(mse(est, ref), rel=1e-12, abs=1e-12)
    assert mse(est, ref) >= 0


@given(mb=positive, mn=positive, tb=positive, tn=positive)
def test_total_gain_identity(mb, mn, tb, tn):
    total = efficiency_gain(mb, mn, tb, tn)
    assert total == pytest.approx(efficiency_gain(mb, mn, 1, 1) * efficiency_gain(1, 1, tb, tn),
                                  rel=1e-12)


@settings(max_examples=30, deadline=None)
@given(samples=st.lists(st.floats(-np.pi, np.pi), min_size=1, max_size=40),
       h=st.floats(0.05, 0.8))
def test_periodic_kde_mass(samples, h):
    g = np.linspace(-np.pi, np.pi, 6001)
    dens = kde(samples, h, g, period=2 * np.pi)
    assert np.trapezoid(dens, g) == pytest.approx(1.0, abs=1e-3)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**63), reps=st.integers(1, 8))
def test_derived_seeds_distinct(seed, reps):
    streams = {np.random.Generator(np.random.Philox(
        np.random.SeedSequence(seed, spawn_key=(v, j, m)))).integers(2**63)
        for v in range(2) for j in range(3) for m in range(reps)}
    assert len(streams) == 2 * 3 * reps
