"""Microscopic MALA baseline and the macroscopic proposal machinery.

The compiled kernels here (``_mala_move``, ``_macro_propose``, ...) are the
building blocks of every chain in the package, including the mM-MCMC
chains in :mod:`micromacro.mmmcmc`. They draw their randomness from a
:class:`numpy.random.Generator` passed in by the caller, so a chain is
fully determined by the generator state it starts from.
"""
import time
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np
from numba import njit

from ._validation import check_int, check_positive, check_random_state, check_state
from .core import ChainRecord, FreeEnergy

BROWNIAN = 0
LANGEVIN = 1
KERNEL_KINDS = {"brownian": BROWNIAN, "langevin": LANGEVIN}

_LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True)
class ProposalKernel:
    """Macroscopic proposal ``q0``: Brownian or overdamped-Langevin increments.

    ``step`` is the macroscopic time step. Langevin kernels need a drift
    source; when ``free_energy`` is omitted the chain's approximate free
    energy is used.
    """

    kind: str
    step: float
    free_energy: Optional[FreeEnergy] = None

    def __post_init__(self):
        if self.kind not in KERNEL_KINDS:
            raise ValueError(f"kernel kind must be one of {sorted(KERNEL_KINDS)}, got {self.kind!r}")
        object.__setattr__(self, "step", check_positive(self.step, "step"))

    @property
    def code(self):
        return KERNEL_KINDS[self.kind]

    def drift_source(self, fallback):
        fe = self.free_energy or fallback
        if fe is None:
            raise ValueError("a langevin kernel requires a free energy for its drift")
        return fe


class StepOutcome(NamedTuple):
    state: np.ndarray
    accepted: bool
    log_alpha: float
    macro_accepted: Optional[bool] = None


# --- compiled building blocks --------------------------------------------

@njit(cache=True, nogil=True)
def _wrap(z, low, period):
    # maps to (low, low + period]
    return z - period * np.ceil((z - low - period) / period)


# Kernels that take model functions as arguments are not disk-cached: numba
# re-pickles the cache index per new function type and fails once an
# earlier (e.g. user-defined) model function has been collected.
@njit(nogil=True)
def _fe_log_density(fe, q, z, beta, low, high, period):
    if period == 0.0 and not (low < z < high):
        return -np.inf
    v = fe(z, q)
    if not np.isfinite(v):
        return -np.inf
    return -beta * v


@njit(nogil=True)
def _macro_propose(kind, dt, beta, z, fe_grad, q, low, period, rng):
    """Propose ``z'`` from ``z``; returns ``(z', log q(z->z'), log q(z'->z))``.

    Transition densities are evaluated on the unwrapped line; ``z'`` is
    wrapped afterwards on periodic domains.
    """
    var = 2.0 * dt / beta
    eta = rng.standard_normal()
    norm = -0.5 * (_LOG_2PI + np.log(var))
    if kind == LANGEVIN:
        drift = -dt * fe_grad(z, q)
        zp = z + drift + np.sqrt(var) * eta
        zp_w = _wrap(zp, low, period) if period > 0.0 else zp
        back = z - zp + dt * fe_grad(zp_w, q)
        lqf = -0.5 * eta * eta + norm
        lqb = -back * back / (2.0 * var) + norm
    else:
        zp = z + np.sqrt(var) * eta
        zp_w = _wrap(zp, low, period) if period > 0.0 else zp
        lqf = -0.5 * eta * eta + norm
        lqb = lqf
    return zp_w, lqf, lqb


@njit(nogil=True)
def _macro_log_q(kind, dt, beta, z, zp, fe_grad, q):
    # Gaussian transition log-density on the unwrapped line
    var = 2.0 * dt / beta
    mean = z - dt * fe_grad(z, q) if kind == LANGEVIN else z
    d = zp - mean
    return -d * d / (2.0 * var) - 0.5 * (_LOG_2PI + np.log(var))


@njit(cache=True, nogil=True)
def _macro_log_accept(lp_z, lp_zp, lqf, lqb):
    if lp_zp == -np.inf:
        return -np.inf
    return min(0.0, (lp_zp + lqb) - (lp_z + lqf))


@njit(cache=True, nogil=True)
def _all_finite(a):
    for v in a:
        if not np.isfinite(v):
            return False
    return True


@njit(nogil=True)
def _mala_move(x, lp_x, g_x, dt, beta, pot, grad, normalize, p, rng):
    """One MALA transition on ``exp(-beta V)``.

    ``lp_x`` and ``g_x`` are the cached ``-beta V(x)`` and ``grad V(x)``.
    Returns ``(x, lp, g, accepted, log_alpha)`` for the new state.
    """
    var = 2.0 * dt / beta
    noise = rng.standard_normal(x.size)
    y = x - dt * g_x + np.sqrt(var) * noise
    u = rng.random()
    vy = pot(y, p)
    if not np.isfinite(vy):
        return x, lp_x, g_x, False, -np.inf
    gy = grad(y, p)
    if not _all_finite(gy):
        return x, lp_x, g_x, False, -np.inf
    lp_y = -beta * vy
    lqf = -np.sum(noise * noise) / 2.0
    back = x - y + dt * gy
    lqb = -np.sum(back * back) / (2.0 * var)
    log_alpha = min(0.0, (lp_y + lqb) - (lp_x + lqf))
    if np.log(u) < log_alpha:
        return normalize(y, p), lp_y, gy, True, log_alpha
    return x, lp_x, g_x, False, log_alpha


@njit(nogil=True)
def _mala_chain(x0, n, dt, beta, pot, grad, rc, normalize, p, thin, store, rng):
    x = x0.copy()
    lp = -beta * pot(x, p)
    g = grad(x, p)
    rcs = np.empty(n)
    n_store = n // thin if store else 0
    states = np.empty((n_store, x.size))
    acc = 0
    for i in range(n):
        x, lp, g, ok, la = _mala_move(x, lp, g, dt, beta, pot, grad, normalize, p, rng)
        if ok:
            acc += 1
        rcs[i] = rc(x, p)
        if store and (i + 1) % thin == 0:
            states[(i + 1) // thin - 1] = x
    return rcs, states, acc, x


@njit(nogil=True)
def _macro_chain(z0, n, kind, dt, beta, fe, fe_grad, q, dq, low, high, period, rng):
    # dq: parameters of the drift free energy (langevin kernels)
    z = z0
    lp = _fe_log_density(fe, q, z, beta, low, high, period)
    out = np.empty(n)
    acc = 0
    for i in range(n):
        zp, lqf, lqb = _macro_propose(kind, dt, beta, z, fe_grad, dq, low, period, rng)
        lp_zp = _fe_log_density(fe, q, zp, beta, low, high, period)
        la = _macro_log_accept(lp, lp_zp, lqf, lqb)
        if np.log(rng.random()) < la:
            z = zp
            lp = lp_zp
            acc += 1
        out[i] = z
    return out, acc


# --- Python API -----------------------------------------------------------

def mala_log_accept(logpi, grad_logpi, x, y, dt, beta):
    """Log Metropolis-Hastings acceptance of the MALA move ``x -> y``."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    lp_x = float(logpi(x))
    lp_y = float(logpi(y))
    if not np.isfinite(lp_y):
        return -np.inf
    var = 2.0 * dt / beta
    fwd = y - x - dt * np.asarray(grad_logpi(x), dtype=np.float64) / beta
    back = x - y - dt * np.asarray(grad_logpi(y), dtype=np.float64) / beta
    return min(0.0, (lp_y - np.sum(back ** 2) / (2 * var)) - (lp_x - np.sum(fwd ** 2) / (2 * var)))


def mala_step(logpi, grad_logpi, x, dt, beta, random_state=None):
    """One Metropolis-adjusted Langevin step for an arbitrary target.

    Parameters
    ----------
    logpi, grad_logpi : callable
        Unnormalized log target ``-beta V`` and its gradient.
    x : array_like
        Current state.
    dt : float
        Time step; the proposal is ``x - dt grad V + sqrt(2 dt / beta) eta``.
    beta : float
        Inverse temperature (``grad V = -grad_logpi / beta``).

    Returns
    -------
    StepOutcome
    """
    dt = check_positive(dt, "dt")
    beta = check_positive(beta, "beta")
    rng = check_random_state(random_state)
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if not np.isfinite(float(logpi(x))):
        raise ValueError("log target is not finite at the current state")
    grad_v = -np.asarray(grad_logpi(x), dtype=np.float64) / beta
    y = x - dt * grad_v + np.sqrt(2.0 * dt / beta) * rng.standard_normal(x.size)
    u = rng.random()
    log_alpha = mala_log_accept(logpi, grad_logpi, x, y, dt, beta)
    if np.log(u) < log_alpha:
        return StepOutcome(y, True, log_alpha)
    return StepOutcome(x, False, log_alpha)


def _domain_args(fe):
    d = fe.domain
    return d.low, d.high, d.period


@njit(cache=True, nogil=True)
def _zero_grad(z, q):
    return 0.0


def macro_propose(kernel, z, beta, random_state=None, free_energy=None, domain=None):
    """Draw ``z'`` from the macroscopic kernel.

    Returns ``(z', log q(z -> z'), log q(z' -> z))``. For Brownian kernels
    the two log-densities are equal. The drift of a Langevin kernel comes
    from ``kernel.free_energy`` or, failing that, ``free_energy``; periodic
    values are wrapped into ``domain`` (default: the free energy's domain).
    """
    beta = check_positive(beta, "beta")
    rng = check_random_state(random_state)
    fe = kernel.free_energy or free_energy
    if kernel.kind == "langevin":
        fe = kernel.drift_source(free_energy)
    grad_fn, q = (fe.gradient_fn, fe.params) if fe is not None else (_zero_grad, np.zeros(1))
    domain = domain or (fe.domain if fe is not None else None)
    low, period = (domain.low, domain.period) if domain is not None else (0.0, 0.0)
    return _macro_propose(kernel.code, kernel.step, beta, float(z), grad_fn, q, low, period, rng)


def macro_transition_log_density(kernel, z, z_prime, beta, free_energy=None):
    """``log q0(z -> z')`` of the macroscopic kernel, without wrapping."""
    beta = check_positive(beta, "beta")
    if kernel.kind == "langevin":
        fe = kernel.drift_source(free_energy)
        grad_fn, q = fe.gradient_fn, fe.params
    else:
        grad_fn, q = _zero_grad, np.zeros(1)
    return float(_macro_log_q(kernel.code, kernel.step, beta, float(z), float(z_prime), grad_fn, q))


def macro_accept_log_prob(mu0_bar, z, z_prime, log_q_forward, log_q_backward, beta):
    """Log of the macroscopic Metropolis-Hastings acceptance probability."""
    beta = check_positive(beta, "beta")
    low, high, period = _domain_args(mu0_bar)
    lp_z = _fe_log_density(mu0_bar.value_fn, mu0_bar.params, float(z), beta, low, high, period)
    lp_zp = _fe_log_density(mu0_bar.value_fn, mu0_bar.params, float(z_prime), beta, low, high, period)
    return float(_macro_log_accept(lp_z, lp_zp, float(log_q_forward), float(log_q_backward)))


def _prepare_x0(model, x0):
    x = model.x0 if x0 is None else x0
    return check_state(x, model.dim, "x0")


def run_mala_chain(model, x0, n_steps, dt, beta=None, random_state=None,
                   store_states=False, thin=1):
    """Run ``n_steps`` MALA steps on the model's Gibbs measure."""
    n_steps = check_int(n_steps, "n_steps")
    thin = check_int(thin, "thin")
    dt = check_positive(dt, "dt")
    beta = check_positive(model.beta if beta is None else beta, "beta")
    rng = check_random_state(random_state)
    x = _prepare_x0(model, x0)
    if not np.isfinite(model.potential_fn(x, model.params)):
        raise ValueError("potential is not finite at x0")
    args = (dt, beta, model.potential_fn, model.potential_grad_fn, model.rc_fn,
            model.normalize_fn, model.params, thin, bool(store_states))
    _mala_chain(x, 1, *args, np.random.default_rng(0))  # compile outside the timer
    t0 = time.perf_counter()
    rcs, states, acc, x_end = _mala_chain(x, n_steps, *args, rng)
    runtime = time.perf_counter() - t0
    return ChainRecord(rc_samples=rcs, n_steps=n_steps, accepted=int(acc), runtime=runtime,
                       states=states if store_states else None, thin=thin,
                       final_state=x_end, final_rc=float(model.rc_fn(x_end, model.params)))


def run_macro_chain(kernel, mu0_bar, z0, n_steps, beta, random_state=None):
    """Sample the approximate marginal ``exp(-beta A_bar)`` directly.

    This is the macroscopic reference sampler: it never touches a
    microstate and is only exact when ``A_bar`` is the true free energy.
    """
    n_steps = check_int(n_steps, "n_steps")
    beta = check_positive(beta, "beta")
    rng = check_random_state(random_state)
    drift = kernel.drift_source(mu0_bar)
    low, high, period = _domain_args(mu0_bar)
    z0 = float(mu0_bar.domain.wrap(z0))
    args = (kernel.code, kernel.step, beta, mu0_bar.value_fn, drift.gradient_fn,
            mu0_bar.params, drift.params, low, high, period)
    _macro_chain(z0, 1, *args, np.random.default_rng(0))
    t0 = time.perf_counter()
    zs, acc = _macro_chain(z0, n_steps, *args, rng)
    runtime = time.perf_counter() - t0
    return ChainRecord(rc_samples=zs, n_steps=n_steps, accepted=int(acc), runtime=runtime,
                       macro_accepted=int(acc), final_rc=float(zs[-1]))
