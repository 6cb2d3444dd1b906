"""Micro-macro MCMC with direct and indirect reconstruction.

Each outer step proposes a new reaction-coordinate value ``z'`` with the
macroscopic kernel and screens it against the approximate marginal
``exp(-beta A_bar)``. Only macro-accepted values are lifted to a microstate:

* direct reconstruction draws ``x'`` on the fiber ``xi(x') = z'`` and
  corrects with the full microscopic Metropolis-Hastings ratio;
* indirect reconstruction pulls the current microstate towards ``z'`` with
  a few biased MALA steps and corrects with a ratio of ``N_lambda`` values
  that does not involve the microstates at all.

Macro rejections short-circuit: no reconstruction and no microscopic
potential evaluation takes place.
"""
import time
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np
from numba import njit

from ._validation import check_int, check_positive, check_random_state, check_state
from .core import ChainRecord, FreeEnergy, Model, Reconstruction, rc_difference, spline_eval
from .samplers import (ProposalKernel, StepOutcome, _all_finite, _fe_log_density,
                       _macro_log_accept, _macro_propose)


@dataclass(frozen=True)
class DirectConfig:
    model: Model
    kernel: ProposalKernel
    mu0_bar: FreeEnergy
    recon: Reconstruction
    beta: Optional[float] = None

    def __post_init__(self):
        beta = self.model.beta if self.beta is None else self.beta
        object.__setattr__(self, "beta", check_positive(beta, "beta"))
        _check_belongs(self.model, self.mu0_bar, self.recon)


def default_inner_dt(model, lam):
    """Biased-chain step: ``min(eps, 1/lambda)`` with a time-scale, else ``0.4/lambda``."""
    if model.epsilon is not None:
        return min(model.epsilon, 1.0 / lam)
    return 0.4 / lam


@dataclass(frozen=True)
class IndirectConfig:
    """Settings of mM-MCMC with indirect reconstruction.

    ``n_lambda`` is an :class:`~micromacro.oracle.NLambdaTable` built from the
    exact marginal; it is tabulated on construction when omitted (the cost
    is not part of any chain runtime).
    """

    model: Model
    kernel: ProposalKernel
    mu0_bar: FreeEnergy
    lam: float
    K: int = 5
    inner_dt: Optional[float] = None
    n_lambda: object = None
    beta: Optional[float] = None
    adjusted: bool = True

    def __post_init__(self):
        beta = self.model.beta if self.beta is None else self.beta
        object.__setattr__(self, "beta", check_positive(beta, "beta"))
        object.__setattr__(self, "lam", check_positive(self.lam, "lambda"))
        object.__setattr__(self, "K", check_int(self.K, "K"))
        dt = default_inner_dt(self.model, self.lam) if self.inner_dt is None else self.inner_dt
        object.__setattr__(self, "inner_dt", check_positive(dt, "inner_dt"))
        _check_belongs(self.model, self.mu0_bar)
        if self.n_lambda is None:
            from .oracle import n_lambda_table
            table = n_lambda_table(self.model.exact, self.lam, self.beta)
            object.__setattr__(self, "n_lambda", table)
        elif not (np.isclose(self.n_lambda.lam, self.lam) and np.isclose(self.n_lambda.beta, self.beta)):
            raise ValueError("n_lambda table was built for a different (lambda, beta)")


def _check_belongs(model, *handles):
    for h in handles:
        catalog = model.free_energies if isinstance(h, FreeEnergy) else model.reconstructions
        if catalog.get(h.name) is not h:
            raise ValueError(f"{h!r} does not belong to {model!r}")


class ExtendedState(NamedTuple):
    x: np.ndarray
    z: float


# --- compiled kernels -----------------------------------------------------

@njit(cache=True, nogil=True)
def direct_micro_log_accept(lp_x, lp_xp, lpbar_z, lpbar_zp, lnu_x, lnu_xp):
    """Log microscopic acceptance after direct reconstruction (elementwise)."""
    return np.minimum(0.0, (lp_xp + lpbar_z + lnu_x) - (lp_x + lpbar_zp + lnu_xp))


@njit(cache=True, nogil=True)
def indirect_micro_log_accept(lpbar_z, lpbar_zp, log_n_z, log_n_zp):
    """Log microscopic acceptance after indirect reconstruction (elementwise)."""
    return np.minimum(0.0, (lpbar_z + log_n_zp) - (lpbar_zp + log_n_z))


# Kernels that take model functions as arguments are not disk-cached: numba
# re-pickles the cache index per new function type and fails once an
# earlier (e.g. user-defined) model function has been collected.
@njit(nogil=True)
def _log_potential(pot, x, p, beta):
    v = pot(x, p)
    if not np.isfinite(v):
        return -np.inf
    return -beta * v


@njit(nogil=True)
def _direct_move(x, z, lp_x, lpbar_z, lnu_x, kind, mdt, beta, pot, rc, p,
                 fe, fe_grad, q, dq, low, high, period, rsample, rlogpdf, rp, rscale, rng):
    zp, lqf, lqb = _macro_propose(kind, mdt, beta, z, fe_grad, dq, low, period, rng)
    lpbar_zp = _fe_log_density(fe, q, zp, beta, low, high, period)
    la = _macro_log_accept(lpbar_z, lpbar_zp, lqf, lqb)
    if not np.log(rng.random()) < la:
        return x, z, lp_x, lpbar_z, lnu_x, False, False, np.nan
    xp = rsample(zp, rp, beta, rscale, rng)
    zx = rc(xp, p)
    lp_xp = _log_potential(pot, xp, p, beta)
    lnu_xp = rlogpdf(xp, zx, rp, beta, rscale)
    lm = direct_micro_log_accept(lp_x, lp_xp, lpbar_z, lpbar_zp, lnu_x, lnu_xp)
    if np.log(rng.random()) < lm:
        lpbar_zx = _fe_log_density(fe, q, zx, beta, low, high, period)
        return xp, zx, lp_xp, lpbar_zx, lnu_xp, True, True, lm
    return x, z, lp_x, lpbar_z, lnu_x, True, False, lm


@njit(nogil=True)
def _direct_chain(x0, n, kind, mdt, beta, pot, rc, p, fe, fe_grad, q, dq, low, high, period,
                  rsample, rlogpdf, rp, rscale, thin, store, rng):
    x = x0.copy()
    z = rc(x, p)
    lp_x = _log_potential(pot, x, p, beta)
    lpbar_z = _fe_log_density(fe, q, z, beta, low, high, period)
    lnu_x = rlogpdf(x, z, rp, beta, rscale)
    rcs = np.empty(n)
    n_store = n // thin if store else 0
    states = np.empty((n_store, x.size))
    n_macro = 0
    n_micro = 0
    lm_min = 0.0
    for i in range(n):
        x, z, lp_x, lpbar_z, lnu_x, macro, micro, lm = _direct_move(
            x, z, lp_x, lpbar_z, lnu_x, kind, mdt, beta, pot, rc, p,
            fe, fe_grad, q, dq, low, high, period, rsample, rlogpdf, rp, rscale, rng)
        if macro:
            n_macro += 1
            if lm < lm_min:
                lm_min = lm
        if micro:
            n_micro += 1
        rcs[i] = z
        if store and (i + 1) % thin == 0:
            states[(i + 1) // thin - 1] = x
    return rcs, states, n_macro, n_micro, lm_min, x


@njit(nogil=True)
def _biased_energy(x, zp, lam, pot, grad, rc, rcgrad, p, period):
    d = rc_difference(rc(x, p), zp, period)
    u = pot(x, p) + 0.5 * lam * d * d
    g = grad(x, p) + lam * d * rcgrad(x, p)
    return u, g


@njit(nogil=True)
def _biased_moves(x, zp, lam, K, dt, beta, pot, grad, rc, rcgrad, normalize, p, period,
                  adjusted, rng):
    """``K`` MALA steps on ``exp(-beta [V + lam/2 dist(xi, z')^2])``."""
    x = x.copy()
    u_x, g_x = _biased_energy(x, zp, lam, pot, grad, rc, rcgrad, p, period)
    var = 2.0 * dt / beta
    n_acc = 0
    for k in range(K):
        noise = rng.standard_normal(x.size)
        y = x - dt * g_x + np.sqrt(var) * noise
        uu = rng.random()
        u_y, g_y = _biased_energy(y, zp, lam, pot, grad, rc, rcgrad, p, period)
        if not (np.isfinite(u_y) and _all_finite(g_y)):
            continue
        if adjusted:
            back = x - y + dt * g_y
            la = min(0.0, (-beta * u_y - np.sum(back * back) / (2.0 * var))
                     - (-beta * u_x - np.sum(noise * noise) / 2.0))
            if not np.log(uu) < la:
                continue
        x = normalize(y, p)
        u_x = u_y
        g_x = g_y
        n_acc += 1
    return x, n_acc


@njit(nogil=True)
def _indirect_move(x, z, lpbar_z, ln_z, kind, mdt, beta, pot, grad, rc, rcgrad, normalize, p,
                   fe, fe_grad, q, dq, low, high, period, lam, K, idt, adjusted,
                   t0, h, c, tperiod, rng):
    zp, lqf, lqb = _macro_propose(kind, mdt, beta, z, fe_grad, dq, low, period, rng)
    lpbar_zp = _fe_log_density(fe, q, zp, beta, low, high, period)
    la = _macro_log_accept(lpbar_z, lpbar_zp, lqf, lqb)
    if not np.log(rng.random()) < la:
        return x, z, lpbar_z, ln_z, False, False, 0
    xp, n_in = _biased_moves(x, zp, lam, K, idt, beta, pot, grad, rc, rcgrad, normalize,
                             p, period, adjusted, rng)
    ln_zp = spline_eval(zp, t0, h, c, tperiod)
    lm = indirect_micro_log_accept(lpbar_z, lpbar_zp, ln_z, ln_zp)
    if np.log(rng.random()) < lm:
        return xp, zp, lpbar_zp, ln_zp, True, True, n_in
    return x, z, lpbar_z, ln_z, True, False, n_in


@njit(nogil=True)
def _indirect_chain(x0, z0, n, kind, mdt, beta, pot, grad, rc, rcgrad, normalize, p,
                    fe, fe_grad, q, dq, low, high, period, lam, K, idt, adjusted,
                    t0, h, c, tperiod, thin, store, rng):
    x = x0.copy()
    z = z0
    lpbar_z = _fe_log_density(fe, q, z, beta, low, high, period)
    ln_z = spline_eval(z, t0, h, c, tperiod)
    rcs = np.empty(n)
    zs = np.empty(n)
    n_store = n // thin if store else 0
    states = np.empty((n_store, x.size))
    n_macro = 0
    n_micro = 0
    n_inner = 0
    for i in range(n):
        x, z, lpbar_z, ln_z, macro, micro, n_in = _indirect_move(
            x, z, lpbar_z, ln_z, kind, mdt, beta, pot, grad, rc, rcgrad, normalize, p,
            fe, fe_grad, q, dq, low, high, period, lam, K, idt, adjusted, t0, h, c, tperiod, rng)
        if macro:
            n_macro += 1
            n_inner += n_in
        if micro:
            n_micro += 1
        rcs[i] = rc(x, p)
        zs[i] = z
        if store and (i + 1) % thin == 0:
            states[(i + 1) // thin - 1] = x
    return rcs, zs, states, n_macro, n_micro, n_inner, x, z


# --- argument plumbing ----------------------------------------------------

def _macro_args(kernel, mu0_bar, beta):
    drift = kernel.drift_source(mu0_bar)
    d = mu0_bar.domain
    return (kernel.code, kernel.step, beta, mu0_bar.value_fn, drift.gradient_fn,
            mu0_bar.params, drift.params, d.low, d.high, d.period)


def _direct_args(cfg):
    m = cfg.model
    kind, mdt, beta, fe, fe_grad, q, dq, low, high, period = _macro_args(cfg.kernel, cfg.mu0_bar, cfg.beta)
    return (kind, mdt, beta, m.potential_fn, m.rc_fn, m.params, fe, fe_grad, q, dq,
            low, high, period, cfg.recon.sample_fn, cfg.recon.log_density_fn,
            cfg.recon.params, cfg.recon.scale)


def _table_args(table):
    return table.t0, table.h, table.coeffs, table.period


def _indirect_args(cfg):
    m = cfg.model
    kind, mdt, beta, fe, fe_grad, q, dq, low, high, period = _macro_args(cfg.kernel, cfg.mu0_bar, cfg.beta)
    return (kind, mdt, beta, m.potential_fn, m.potential_grad_fn, m.rc_fn, m.rc_grad_fn,
            m.normalize_fn, m.params, fe, fe_grad, q, dq, low, high, period,
            cfg.lam, cfg.K, cfg.inner_dt, bool(cfg.adjusted)) + _table_args(cfg.n_lambda)


# --- Python API -----------------------------------------------------------

def direct_step(cfg, x, random_state=None):
    """One outer step of mM-MCMC with direct reconstruction.

    Returns a :class:`~micromacro.samplers.StepOutcome`; ``log_alpha`` is the
    log micro acceptance probability, or ``nan`` after a macro rejection.
    """
    rng = check_random_state(random_state)
    m = cfg.model
    x = check_state(x, m.dim)
    args = _direct_args(cfg)
    z = m.rc_fn(x, m.params)
    lp_x = -cfg.beta * m.potential_fn(x, m.params)
    lpbar_z = _fe_log_density(cfg.mu0_bar.value_fn, cfg.mu0_bar.params, z, cfg.beta,
                              *_domain(cfg.mu0_bar))
    lnu_x = cfg.recon.log_density(x, z, cfg.beta)
    out = _direct_move(x, z, lp_x, lpbar_z, lnu_x, *args, rng)
    return StepOutcome(out[0], bool(out[6]), float(out[7]), bool(out[5]))


def _domain(fe):
    d = fe.domain
    return d.low, d.high, d.period


def indirect_step(cfg, s, random_state=None):
    """One outer step of mM-MCMC with indirect reconstruction.

    Returns ``(new_state, macro_accepted, micro_accepted)``.
    """
    rng = check_random_state(random_state)
    m = cfg.model
    x = check_state(s.x, m.dim)
    z = float(cfg.mu0_bar.domain.wrap(s.z))
    lpbar_z = _fe_log_density(cfg.mu0_bar.value_fn, cfg.mu0_bar.params, z, cfg.beta,
                              *_domain(cfg.mu0_bar))
    ln_z = cfg.n_lambda.log(z)
    args = _indirect_args(cfg)
    xn, zn, _, _, macro, micro, _ = _indirect_move(x, z, lpbar_z, ln_z, *args, rng)
    return ExtendedState(xn, float(zn)), bool(macro), bool(micro)


def indirect_micro_acceptance(cfg, z, z_prime):
    """Micro acceptance probability of the indirect scheme for ``z -> z'``."""
    fe = cfg.mu0_bar
    lo, hi, period = _domain(fe)
    lz = _fe_log_density(fe.value_fn, fe.params, float(z), cfg.beta, lo, hi, period)
    lzp = _fe_log_density(fe.value_fn, fe.params, float(z_prime), cfg.beta, lo, hi, period)
    return float(np.exp(indirect_micro_log_accept(lz, lzp, cfg.n_lambda.log(z),
                                                  cfg.n_lambda.log(z_prime))))


def biased_inner_chain(model, x0, z_prime, lam, K, inner_dt, beta=None, random_state=None,
                       adjusted=True):
    """Pull ``x0`` towards the fiber of ``z_prime`` with ``K`` biased MALA steps."""
    rng = check_random_state(random_state)
    beta = check_positive(model.beta if beta is None else beta, "beta")
    if not lam >= 0:
        raise ValueError(f"lambda must be non-negative, got {lam!r}")
    K = check_int(K, "K")
    inner_dt = check_positive(inner_dt, "inner_dt")
    x0 = check_state(x0, model.dim, "x0")
    x, _ = _biased_moves(x0, float(z_prime), float(lam), K, inner_dt, beta, model.potential_fn,
                         model.potential_grad_fn, model.rc_fn, model.rc_grad_fn,
                         model.normalize_fn, model.params, model.rc_domain.period,
                         bool(adjusted), rng)
    return x


def run_direct_chain(cfg, x0=None, n_steps=1, random_state=None, store_states=False, thin=1):
    """Run ``n_steps`` outer steps of direct mM-MCMC from ``x0``."""
    n_steps = check_int(n_steps, "n_steps")
    thin = check_int(thin, "thin")
    rng = check_random_state(random_state)
    m = cfg.model
    x = check_state(m.x0 if x0 is None else x0, m.dim, "x0")
    args = _direct_args(cfg) + (thin, bool(store_states))
    _direct_chain(x, 1, *args, np.random.default_rng(0))
    t0 = time.perf_counter()
    rcs, states, n_macro, n_micro, lm_min, x_end = _direct_chain(x, n_steps, *args, rng)
    runtime = time.perf_counter() - t0
    return ChainRecord(rc_samples=rcs, n_steps=n_steps, accepted=int(n_micro), runtime=runtime,
                       states=states if store_states else None, thin=thin,
                       macro_accepted=int(n_macro), micro_accepted=int(n_micro),
                       micro_log_alpha_min=float(lm_min), final_state=x_end,
                       final_rc=float(rcs[-1]))


def run_indirect_chain(cfg, s0=None, n_steps=1, random_state=None, store_states=False, thin=1):
    """Run ``n_steps`` outer steps of indirect mM-MCMC.

    ``s0`` is an :class:`ExtendedState`, a bare microstate (paired with its
    own reaction coordinate) or ``None`` for the model's default state.
    The record's ``rc_samples`` are ``xi`` of the microscopic component.
    """
    n_steps = check_int(n_steps, "n_steps")
    thin = check_int(thin, "thin")
    rng = check_random_state(random_state)
    m = cfg.model
    if s0 is None:
        s0 = m.x0
    if isinstance(s0, ExtendedState):
        x, z = check_state(s0.x, m.dim, "x0"), float(s0.z)
    else:
        x = check_state(s0, m.dim, "x0")
        z = float(m.rc_fn(x, m.params))
    z = float(cfg.mu0_bar.domain.wrap(z))
    args = _indirect_args(cfg) + (thin, bool(store_states))
    _indirect_chain(x, z, 1, *args, np.random.default_rng(0))
    t0 = time.perf_counter()
    rcs, zs, states, n_macro, n_micro, n_inner, x_end, z_end = _indirect_chain(
        x, z, n_steps, *args, rng)
    runtime = time.perf_counter() - t0
    return ChainRecord(rc_samples=rcs, n_steps=n_steps, accepted=int(n_micro), runtime=runtime,
                       states=states if store_states else None, thin=thin,
                       macro_accepted=int(n_macro), micro_accepted=int(n_micro),
                       inner_accepted=int(n_inner), inner_proposed=int(n_macro) * cfg.K,
                       final_state=x_end, final_rc=float(z_end))
