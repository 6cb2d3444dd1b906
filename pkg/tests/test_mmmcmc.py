import copy
import gc
from dataclasses import replace

import numpy as np
import pytest
from numba import njit

from micromacro import (DirectConfig, ExtendedState, IndirectConfig, ProposalKernel,
                        biased_inner_chain, direct_step, indirect_step, mala_step, n_lambda_table,
                        run_direct_chain, run_indirect_chain, threeatom_model)
from micromacro.mmmcmc import (default_inner_dt, direct_micro_log_accept,
                               indirect_micro_acceptance, indirect_micro_log_accept)

from toy import poly_model

EPS = 1e-4
LANGEVIN = ProposalKernel("langevin", 0.01)


def direct_cfg(model, fe="A_exact", recon="nu_exact", kernel=LANGEVIN):
    return DirectConfig(model, kernel, model.free_energy(fe), model.reconstruction(recon))


@pytest.fixture(scope="module")
def indirect(threeatom):
    return IndirectConfig(threeatom, LANGEVIN, threeatom.exact, lam=1 / EPS, K=5)


def test_exact_pair_has_unit_micro_acceptance(threeatom):
    rec = run_direct_chain(direct_cfg(threeatom), n_steps=100_000, random_state=7)
    assert rec.micro_accepted == rec.macro_accepted
    assert rec.micro_log_alpha_min > -1e-10
    assert rec.macro_acceptance_rate == pytest.approx(0.75, abs=0.03)


def test_brownian_macro_acceptance(threeatom):
    cfg = direct_cfg(threeatom, kernel=ProposalKernel("brownian", 0.01))
    rec = run_direct_chain(cfg, n_steps=100_000, random_state=8)
    assert rec.macro_acceptance_rate == pytest.approx(0.645, abs=0.03)


def test_shifted_free_energy_micro_acceptance(threeatom):
    rec = run_direct_chain(direct_cfg(threeatom, "A_shift"), n_steps=200_000, random_state=9)
    assert rec.micro_acceptance_rate == pytest.approx(0.43, abs=0.05)


def test_direct_identity_move_accepts():
    assert direct_micro_log_accept(-1.3, -1.3, -0.2, -0.2, 4.0, 4.0) == 0.0


def test_direct_step_outcomes(threeatom, rng):
    cfg = direct_cfg(threeatom)
    x = threeatom.x0.copy()
    seen_reject = seen_accept = False
    for _ in range(200):
        before = copy.deepcopy(rng)
        out = direct_step(cfg, x, rng)
        if out.macro_accepted:
            seen_accept = True
            assert out.log_alpha == pytest.approx(0.0, abs=1e-10)
            assert threeatom.reconstruction("nu_exact").log_density(out.state,
                                                                    threeatom.rc(out.state), 1.0)
        else:
            seen_reject = True
            np.testing.assert_array_equal(out.state, x)
            assert np.isnan(out.log_alpha) and not out.accepted
            # a macro rejection draws one normal and one uniform, nothing else
            before.standard_normal()
            before.random()
            assert before.bit_generator.state == rng.bit_generator.state
        x = out.state
    assert seen_reject and seen_accept


def test_direct_chain_length_one(threeatom):
    rec = run_direct_chain(direct_cfg(threeatom), n_steps=1, random_state=0)
    assert rec.rc_samples.shape == (1,)
    assert rec.macro_accepted <= 1 and rec.micro_accepted <= rec.macro_accepted


def test_handles_must_belong_to_model(threeatom):
    other = threeatom_model(epsilon=1e-3)
    with pytest.raises(ValueError, match="does not belong"):
        DirectConfig(threeatom, LANGEVIN, other.exact, threeatom.reconstruction("nu_exact"))
    with pytest.raises(ValueError, match="does not belong"):
        IndirectConfig(threeatom, LANGEVIN, other.exact, lam=10.0,
                       n_lambda=n_lambda_table(threeatom.exact, 10.0, 1.0))


def test_indirect_config_defaults(threeatom, butane):
    assert default_inner_dt(threeatom, 1e3) == EPS
    assert default_inner_dt(threeatom, 1e5) == pytest.approx(1e-5)
    assert default_inner_dt(butane, 4.68e6) == pytest.approx(0.4 / 4.68e6)
    table = n_lambda_table(threeatom.exact, 1e3, 1.0)
    with pytest.raises(ValueError, match="different"):
        IndirectConfig(threeatom, LANGEVIN, threeatom.exact, lam=2e3, n_lambda=table)
    with pytest.raises(ValueError):
        IndirectConfig(threeatom, LANGEVIN, threeatom.exact, lam=-1.0, n_lambda=table)


def test_indirect_identity_proposal(indirect):
    assert indirect_micro_acceptance(indirect, 1.1, 1.1) == 1.0
    assert indirect_micro_log_accept(-0.3, -0.3, 0.7, 0.7) == 0.0


def test_indirect_micro_acceptance_ignores_microstate(indirect, threeatom, rng):
    z, zp = 1.2, 1.33
    base = min(indirect_micro_acceptance(indirect, z, zp), indirect_micro_acceptance(indirect, zp, z))
    for _ in range(20):
        # the same draws from the same rng state, different microstates with equal z
        x1 = threeatom.reconstruction("nu_wide").sample(z, 1.0, rng)
        x2 = threeatom.reconstruction("nu_exact").sample(z, 1.0, rng)
        seed = int(rng.integers(2 ** 32))
        outs = [indirect_step(indirect, ExtendedState(x, z), seed) for x in (x1, x2)]
        assert outs[0][1:] == outs[1][1:]
    assert 0.0 < base < 1.0


def test_indirect_micro_acceptance_matches_table(threeatom):
    cfg = IndirectConfig(threeatom, LANGEVIN, threeatom.exact, lam=1 / EPS)
    rec = run_indirect_chain(cfg, n_steps=100_000, random_state=3)
    assert rec.micro_acceptance_rate == pytest.approx(0.9936, abs=0.01)
    assert rec.macro_acceptance_rate == pytest.approx(0.75, abs=0.03)
    assert rec.inner_proposed == 5 * rec.macro_accepted


# Expected micro acceptance at stationarity, conditioned on macro acceptance:
# z ~ N_lambda restricted to (0, pi) (the z-marginal of the extended chain),
# z' from the Langevin kernel on A_exact (dt 0.01), computed by dense 2-D
# quadrature on a 4001-node grid with the convolution done by Riemann sums.
STATIONARY_MICRO_ACCEPTANCE = {1e3: 0.9744928507850495, 1e4: 0.9972260573697854}


@pytest.mark.parametrize("lam", sorted(STATIONARY_MICRO_ACCEPTANCE))
def test_indirect_micro_acceptance_oracle(threeatom, lam):
    cfg = IndirectConfig(threeatom, LANGEVIN, threeatom.exact, lam=lam)
    rates = [run_indirect_chain(cfg, n_steps=100_000, random_state=s).micro_acceptance_rate
             for s in range(3)]
    assert np.mean(rates) == pytest.approx(STATIONARY_MICRO_ACCEPTANCE[lam], abs=1.5e-3)


def test_indirect_step_state_handling(indirect, threeatom, rng):
    s = ExtendedState(threeatom.x0.copy(), threeatom.rc(threeatom.x0))
    for _ in range(100):
        new, macro, micro = indirect_step(indirect, s, rng)
        if not micro:
            np.testing.assert_array_equal(new.x, s.x)
            assert new.z == s.z
        assert micro <= macro
        s = new


def test_indirect_acceptance_independent_of_epsilon():
    rates = []
    for eps in (1e-3, 1e-4, 1e-5):
        m = threeatom_model(epsilon=eps)
        cfg = IndirectConfig(m, LANGEVIN, m.exact, lam=1 / eps, K=5)
        rec = run_indirect_chain(cfg, n_steps=50_000, random_state=12)
        rates.append(rec.macro_acceptance_rate)
    assert max(abs(r - rates[0]) for r in rates) <= 0.01


def test_indirect_chain_records_micro_component(indirect):
    rec = run_indirect_chain(indirect, n_steps=1, random_state=0, store_states=True)
    assert rec.rc_samples.shape == (1,) and rec.states.shape == (1, 3)
    assert rec.rc_samples[0] == pytest.approx(indirect.model.rc(rec.states[0]))


def test_inner_chain_spread_matches_bias_width():
    flat = poly_model(0.0)
    lam = 100.0
    ends = [biased_inner_chain(flat, [0.0], 1.0, lam, 400, 0.005, random_state=s)[0]
            for s in range(400)]
    assert np.mean(ends) == pytest.approx(1.0, abs=4 * 0.1 / np.sqrt(400))
    assert np.std(ends) == pytest.approx(1 / np.sqrt(lam), rel=0.15)


def test_inner_chain_without_bias_is_a_mala_step():
    flat = poly_model(0.0)
    for seed in range(5):
        a = biased_inner_chain(flat, [0.3], 5.0, 0.0, 1, 0.01, random_state=seed)
        b = mala_step(lambda x: 0.0, lambda x: np.zeros(1), [0.3], 0.01, 1.0, random_state=seed)
        np.testing.assert_allclose(a, b.state, rtol=1e-14)


def test_inner_chain_reaches_fiber(threeatom, rng):
    recon = threeatom.reconstruction("nu_exact")
    gaps = []
    for _ in range(1000):
        z = rng.uniform(0.8, np.pi - 0.8)
        zp = z + rng.normal(0, np.sqrt(0.02))
        x = biased_inner_chain(threeatom, recon.sample(z, 1.0, rng), zp, 1 / EPS, 5, EPS,
                               random_state=rng)
        gaps.append(abs(threeatom.rc(x) - zp))
    assert np.median(gaps) < 3 * np.sqrt(EPS)


def test_inner_chain_periodic_distance(butane, rng):
    # pulling across the branch cut takes the short way round
    x0 = butane.reconstruction("nu_exact").sample(np.pi - 0.05, butane.beta, rng)
    lam = 4 * butane.info["k_b"]
    x = biased_inner_chain(butane, x0, -np.pi + 0.05, lam, 10, 0.4 / lam, random_state=rng)
    assert abs(np.angle(np.exp(1j * (x[5] - (-np.pi + 0.05))))) < 0.05


def test_unadjusted_inner_chain_runs(threeatom):
    cfg = IndirectConfig(threeatom, LANGEVIN, threeatom.exact, lam=1 / EPS, adjusted=False)
    rec = run_indirect_chain(cfg, n_steps=10_000, random_state=1)
    assert rec.inner_accepted == rec.inner_proposed


def _transient_model(shift):
    # freshly compiled model functions that are dropped after use
    @njit
    def potential(x, p):
        return x[0] * x[0] + p[0]

    @njit
    def gradient(x, p):
        return 2.0 * x

    base = poly_model(1.0)
    return replace(base, potential_fn=potential, potential_grad_fn=gradient, params=[shift])


def test_kernels_accept_transient_model_functions():
    for shift in (0.0, 1.0, 2.0):
        m = _transient_model(shift)
        kern = ProposalKernel("langevin", 0.1)
        cfg = IndirectConfig(m, kern, m.exact, 100.0, 2, inner_dt=0.01)
        assert run_indirect_chain(cfg, None, 20, 0).n_steps == 20
        assert biased_inner_chain(m, [0.0], 0.5, 10.0, 3, 0.01, random_state=0).shape == (1,)
        del m, cfg
        gc.collect()
