import numpy as np
import pytest

from micromacro import (ConfigError, NLambdaTable, NumericalError, ProposalKernel,
                        brute_force_stationary, n_lambda_table, normalize_free_energy,
                        reference_moment, threeatom_model)
from micromacro.core import RcDomain
from micromacro.mmmcmc import direct_micro_log_accept
from micromacro.oracle import (assemble_direct_kernel, discretized_gibbs, free_energy_density,
                               n_lambda_values, quadrature_table)

from toy import poly_free_energy

FLAT_PI = poly_free_energy(0.0, domain=RcDomain(0.0, np.pi))
STD_NORMAL = poly_free_energy(0.5, domain=RcDomain(-20.0, 20.0))


def adaptive_simpson(f, a, b, tol):
    def simpson(fa, fm, fb, a, b):
        return (b - a) / 6 * (fa + 4 * fm + fb)

    def rec(a, b, fa, fm, fb, whole, tol, depth):
        m = 0.5 * (a + b)
        lm, rm = 0.5 * (a + m), 0.5 * (m + b)
        flm, frm = f(lm), f(rm)
        left, right = simpson(fa, flm, fm, a, m), simpson(fm, frm, fb, m, b)
        if depth > 50 or abs(left + right - whole) <= 15 * tol:
            return left + right + (left + right - whole) / 15
        return (rec(a, m, fa, flm, fm, left, tol / 2, depth + 1)
                + rec(m, b, fm, frm, fb, right, tol / 2, depth + 1))

    fa, fm, fb = f(a), f(0.5 * (a + b)), f(b)
    return rec(a, b, fa, fm, fb, simpson(fa, fm, fb, a, b), tol, 0)


def test_gaussian_normalization():
    trunc = poly_free_energy(0.5, domain=RcDomain(-10.0, 10.0))
    assert normalize_free_energy(trunc, 1.0) == pytest.approx(np.sqrt(2 * np.pi), abs=1e-9)


def test_flat_normalization():
    assert normalize_free_energy(FLAT_PI, 1.0) == pytest.approx(np.pi, rel=1e-14)


def test_threeatom_normalization_against_adaptive_simpson(threeatom):
    A = threeatom.exact
    z_a = normalize_free_energy(A, 1.0)
    oracle = adaptive_simpson(lambda z: np.exp(-float(A(z))), 0.0, np.pi, 1e-13)
    assert z_a == pytest.approx(oracle, rel=1e-8)


def test_quadrature_refinement_converged(threeatom):
    t = quadrature_table(threeatom.exact, 1.0)
    coarse = np.exp(quadrature_table(threeatom.exact, 1.0, n_panels=t.n_panels).log_z)
    fine = np.exp(quadrature_table(threeatom.exact, 1.0, n_panels=2 * t.n_panels).log_z)
    assert abs(fine - coarse) / fine < 1e-8
    assert np.all(np.diff(t.grid) > 0)


def test_density_integrates_to_one(butane):
    rho = free_energy_density(butane.exact, butane.beta)
    z = np.linspace(-np.pi, np.pi, 20001)
    assert np.trapezoid(rho(z), z) == pytest.approx(1.0, abs=1e-6)


def test_n_lambda_gaussian_closed_form():
    assert n_lambda_values(STD_NORMAL, 1.0, 1.0, [0.0])[0] == pytest.approx(1 / np.sqrt(4 * np.pi),
                                                                              rel=1e-10)
    z = np.array([-1.0, 0.5, 2.0])
    np.testing.assert_allclose(n_lambda_values(STD_NORMAL, 1.0, 1.0, z),
                               np.exp(-z ** 2 / 4) / np.sqrt(4 * np.pi), rtol=1e-10)


def test_n_lambda_flat_interior():
    table = n_lambda_table(FLAT_PI, 1e4, 1.0)
    assert table(np.pi / 2) == pytest.approx(1 / np.pi, rel=1e-10)


def test_n_lambda_large_lambda_limit(threeatom):
    rho = free_energy_density(threeatom.exact, 1.0)
    z = np.array([0.9, 1.2, 1.5707963])
    err = [np.abs(n_lambda_values(threeatom.exact, lam, 1.0, z) / rho(z) - 1) for lam in (1e8, 1e9, 1e10)]
    assert np.all(err[-1] < 1e-6)
    np.testing.assert_allclose(err[0] / err[1], 10.0, rtol=0.01)


def test_n_lambda_increases_to_mode_density(threeatom):
    mode = np.pi / 2 - 0.3838
    vals = [n_lambda_values(threeatom.exact, lam, 1.0, [mode])[0] for lam in (1, 10, 100, 1000)]
    target = free_energy_density(threeatom.exact, 1.0)(mode)
    assert np.all(np.diff(vals) > 0) and vals[-1] < target


@pytest.mark.parametrize("lam", [1e3, 1e4, 1e6])
def test_n_lambda_table_self_consistency(threeatom, lam):
    table = n_lambda_table(threeatom.exact, lam, 1.0)
    z = np.linspace(0.3, np.pi - 0.3, 997)
    direct = n_lambda_values(threeatom.exact, lam, 1.0, z)
    np.testing.assert_allclose(table(z), direct, rtol=1e-8)
    np.testing.assert_allclose(n_lambda_values(threeatom.exact, lam, 1.0, z, n_panels=32), direct,
                               rtol=1e-8)


def test_n_lambda_periodic_wrapping(butane):
    lam = butane.info["k_b"]
    table = n_lambda_table(butane.exact, lam, butane.beta)
    assert table(np.pi - 1e-3) == pytest.approx(table(-np.pi - 1e-3), rel=1e-10)
    z = np.array([-3.1, -2.0, 0.0, 1.0, 3.1])
    np.testing.assert_allclose(table(z), n_lambda_values(butane.exact, lam, butane.beta, z),
                               rtol=1e-8)


def test_n_lambda_grid_too_coarse(threeatom):
    with pytest.raises(ConfigError, match="quarter"):
        n_lambda_table(threeatom.exact, 1e4, 1.0, grid=100)


def test_n_lambda_cache_round_trip(threeatom, tmp_path):
    a = n_lambda_table(threeatom.exact, 1e3, 1.0, cache_dir=tmp_path, model_id="threeatom")
    files = list(tmp_path.iterdir())
    assert len(files) == 1
    b = n_lambda_table(threeatom.exact, 1e3, 1.0, cache_dir=tmp_path, model_id="threeatom")
    np.testing.assert_array_equal(a.log_values, b.log_values)
    assert NLambdaTable.load(files[0], key={"other": 1}) is None
    files[0].write_bytes(b"garbage")
    assert NLambdaTable.load(files[0], key=a.key) is None


def test_reference_moments(threeatom, butane):
    A = threeatom.exact
    assert reference_moment(lambda z: z, A, 1.0) == pytest.approx(np.pi / 2, rel=1e-12)
    assert reference_moment(lambda z: np.ones_like(z), butane.exact, butane.beta) == \
        pytest.approx(1.0, rel=1e-12)


def test_reference_variance_against_rejection_sampling(threeatom):
    A = threeatom.exact
    var = reference_moment(lambda z: (z - np.pi / 2) ** 2, A, 1.0)
    rng = np.random.default_rng(99)
    kept = []
    for _ in range(10):
        z = rng.uniform(0.0, np.pi, 1_000_000)
        kept.append(z[rng.random(z.size) < np.exp(-A(z))])  # A >= 0
    d2 = (np.concatenate(kept) - np.pi / 2) ** 2
    se = d2.std() / np.sqrt(d2.size)
    assert abs(d2.mean() - var) < 3 * se


def test_reference_moment_is_linear(threeatom):
    A = threeatom.exact
    f, g = np.sin, lambda z: z ** 3
    lhs = reference_moment(f, A, 1.0) + reference_moment(g, A, 1.0)
    assert lhs == pytest.approx(reference_moment(lambda z: f(z) + g(z), A, 1.0), abs=1e-12)


def test_stationary_two_state():
    p = brute_force_stationary(np.array([[0.3, 0.7], [0.7, 0.3]]))
    np.testing.assert_allclose(p, [0.5, 0.5], atol=1e-12)


def test_stationary_three_state_metropolis():
    pi = np.array([0.2, 0.3, 0.5])
    P = np.zeros((3, 3))
    for i in range(3):
        for j in range(3):
            if i != j:
                P[i, j] = 0.5 * min(1.0, pi[j] / pi[i])
        P[i, i] = 1.0 - P[i].sum()
    p = brute_force_stationary(lambda grid: P)
    np.testing.assert_allclose(p, pi, atol=1e-10)


def test_stationary_rejects_non_stochastic_rows():
    with pytest.raises(NumericalError, match="do not sum"):
        brute_force_stationary(np.array([[0.5, 0.4], [0.5, 0.5]]))


GRID = (np.linspace(1 - 0.45, 1 + 0.45, 7), np.linspace(1 - 0.45, 1 + 0.45, 7),
        np.linspace(0.35, np.pi - 0.35, 40))


@pytest.fixture(scope="module")
def coarse():
    m = threeatom_model(epsilon=0.01)
    args = (m, ProposalKernel("langevin", 0.01), m.free_energy("A_shift"),
            m.reconstruction("nu_wide"), 1.0, GRID)
    return m, args


def test_direct_kernel_preserves_discretized_gibbs(coarse):
    m, args = coarse
    P, states, _ = assemble_direct_kernel(*args)
    assert P.shape == (7 * 7 * 40,) * 2
    p = brute_force_stationary(P)
    tv = 0.5 * np.abs(p - discretized_gibbs(m, states, 1.0)).sum()
    assert tv < 1e-3


def test_wrong_micro_acceptance_is_detected(coarse):
    m, args = coarse

    def no_reconstruction_term(lp_x, lp_xp, lpbar_z, lpbar_zp, lnu_x, lnu_xp):
        return direct_micro_log_accept(lp_x, lp_xp, lpbar_z, lpbar_zp, 0.0 * lnu_x, 0.0 * lnu_xp)

    P, states, _ = assemble_direct_kernel(*args, micro_log_accept=no_reconstruction_term)
    p = brute_force_stationary(P)
    tv = 0.5 * np.abs(p - discretized_gibbs(m, states, 1.0)).sum()
    assert tv > 1e-3
