import numpy as np
import pytest

from micromacro import (ChainRecord, ModelDomainError, check_gradients, free_energy_log_density,
                        gibbs_log_density, threeatom_model, butane_model)
from micromacro.core import RcDomain, rc_difference, spline_eval, wrap_angle
from micromacro.molecules import ANGLE_OFFSET

X_MIN = (1.0, np.cos(np.pi / 2 - ANGLE_OFFSET), np.sin(np.pi / 2 - ANGLE_OFFSET))


def test_gibbs_log_density_at_minimum(threeatom):
    assert gibbs_log_density(threeatom, X_MIN, 1.0) == pytest.approx(0.0, abs=1e-12)


def test_gibbs_log_density_at_top_of_barrier(threeatom):
    # 104 * 0.3838**4 on the fiber theta = pi/2 with both bonds at rest
    expected = -104.0 * 0.3838 ** 4
    assert gibbs_log_density(threeatom, (1.0, 0.0, 1.0), 1.0) == pytest.approx(expected, rel=1e-12)
    assert expected == pytest.approx(-2.2566, abs=1e-4)


def test_gibbs_log_density_butane_reference_state(butane):
    x = [1.53, 1.53, 1.53, np.deg2rad(112.0), np.deg2rad(112.0), 0.0]
    for beta in (1.0, 1 / 300, 1 / 200):
        assert gibbs_log_density(butane, x, beta) == pytest.approx(0.0, abs=1e-9)


def test_gibbs_log_density_singular_state(threeatom):
    with pytest.raises(ModelDomainError):
        gibbs_log_density(threeatom, (1.0, 0.0, 0.0), 1.0)


def test_free_energy_log_density_examples(threeatom, butane):
    A = threeatom.exact
    assert free_energy_log_density(A, np.pi / 2 - ANGLE_OFFSET, 1.0) == pytest.approx(0.0, abs=1e-12)
    assert free_energy_log_density(A, np.pi / 2, 1.0) == pytest.approx(-104.0 * 0.3838 ** 4, rel=1e-12)
    assert free_energy_log_density(butane.exact, 0.0, 0.37) == pytest.approx(0.0, abs=1e-9)


def test_free_energy_log_density_outside_domain(threeatom):
    with pytest.raises(ModelDomainError):
        free_energy_log_density(threeatom.exact, 3.5, 1.0)


def test_gibbs_equals_free_energy_on_rest_fiber(threeatom):
    for theta in np.linspace(0.2, np.pi - 0.2, 11):
        x = (1.0, np.cos(theta), np.sin(theta))
        assert gibbs_log_density(threeatom, x, 0.7) == pytest.approx(
            free_energy_log_density(threeatom.exact, theta, 0.7), rel=1e-12, abs=1e-12)


@pytest.mark.parametrize("factory", [threeatom_model, butane_model])
def test_gradients_match_finite_differences(factory):
    errs = check_gradients(factory(), n_states=100, random_state=3)
    assert errs["potential"] < 1e-5
    assert errs["rc"] < 1e-5


def test_wrap_angle_half_open():
    assert wrap_angle(np.pi) == pytest.approx(np.pi)
    assert wrap_angle(-np.pi) == pytest.approx(np.pi)
    assert wrap_angle(3 * np.pi / 2) == pytest.approx(-np.pi / 2)


def test_rc_difference_minimal_image():
    assert rc_difference(3.0, -3.0, 2 * np.pi) == pytest.approx(6.0 - 2 * np.pi)
    assert rc_difference(3.0, -3.0, 0.0) == 6.0


def test_rc_domain_wrap_and_contains():
    d = RcDomain(-np.pi, np.pi, periodic=True)
    assert d.wrap(np.pi + 0.1) == pytest.approx(-np.pi + 0.1)
    assert d.period == pytest.approx(2 * np.pi)
    flat = RcDomain(0.0, np.pi)
    assert flat.period == 0.0
    assert not flat.contains(0.0) and flat.contains(1.0)


def test_spline_eval_reproduces_cubic():
    from scipy.interpolate import CubicSpline
    t = np.linspace(0.0, 2.0, 21)
    cs = CubicSpline(t, t ** 3 - t)
    for z in (0.05, 0.77, 1.99):
        assert spline_eval(z, t[0], t[1] - t[0], cs.c, 0.0) == pytest.approx(z ** 3 - z, rel=1e-12)


def test_chain_record_rates_and_estimates():
    rec = ChainRecord(rc_samples=np.array([1.0, 2.0, 3.0, 2.0]), n_steps=4, accepted=2,
                      runtime=0.1, macro_accepted=3, micro_accepted=2)
    assert rec.acceptance_rate == 0.5
    assert rec.macro_acceptance_rate == 0.75
    assert rec.micro_acceptance_rate == pytest.approx(2 / 3)
    assert rec.estimate("mean_rc") == 2.0
    assert rec.estimate("var_rc", burn_in=1) == pytest.approx(np.var([2.0, 3.0, 2.0]))
    with pytest.raises(ValueError):
        rec.estimate("median_rc")


def test_models_are_immutable(threeatom):
    with pytest.raises(Exception):
        threeatom.params[0] = 1.0
    with pytest.raises(TypeError):
        threeatom.free_energies["new"] = None
