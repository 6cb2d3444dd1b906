"""Estimator-style wrappers around the samplers.

Each sampler is a scikit-learn ``BaseEstimator``: its constructor only
stores hyper-parameters, ``fit`` runs one chain and stores the trajectory
in attributes with a trailing underscore. ``get_params``/``set_params``/
``clone`` work as usual, which is what the replication harness relies on.
"""
import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_positive, check_samples
from .core import Model
from .molecules import make_model
from .mmmcmc import DirectConfig, IndirectConfig, run_direct_chain, run_indirect_chain
from .samplers import ProposalKernel, run_macro_chain, run_mala_chain


def _resolve_model(model, model_params=None):
    if isinstance(model, Model):
        if model_params:
            raise ValueError("model_params only apply when model is given by name")
        return model
    return make_model(model, **(model_params or {}))


def _initial_state(X):
    if X is None:
        return None
    return np.asarray(X, dtype=np.float64).reshape(-1)


class _ChainEstimator(BaseEstimator):

    def _record(self, record):
        self.record_ = record
        self.rc_samples_ = record.rc_samples
        self.n_steps_ = record.n_steps
        self.acceptance_rate_ = record.acceptance_rate
        self.macro_acceptance_rate_ = record.macro_acceptance_rate
        self.micro_acceptance_rate_ = record.micro_acceptance_rate
        self.runtime_ = record.runtime
        return self

    def estimate(self, functional, burn_in=0):
        """Chain estimate of ``mean_rc`` or ``var_rc``."""
        check_is_fitted(self, "record_")
        return self.record_.estimate(functional, burn_in)

    def _kernel(self, model):
        fe = model.free_energy(self.kernel_free_energy) if self.kernel_free_energy else None
        return ProposalKernel(self.kernel, self.macro_dt, fe)


class MALASampler(_ChainEstimator):
    """Microscopic Metropolis-adjusted Langevin baseline.

    Parameters
    ----------
    model : Model or str
    dt : float, optional
        Time step; ``epsilon`` for the three-atom model and ``1/k_b`` for
        butane when omitted.
    n_steps : int
    beta : float, optional
        Defaults to the model's inverse temperature.
    random_state : None, int, SeedSequence or Generator
    """

    def __init__(self, model="threeatom", model_params=None, dt=None, n_steps=1000, beta=None,
                 random_state=None, store_states=False, thin=1):
        self.model = model
        self.model_params = model_params
        self.dt = dt
        self.n_steps = n_steps
        self.beta = beta
        self.random_state = random_state
        self.store_states = store_states
        self.thin = thin

    def fit(self, X=None, y=None):
        """Run the chain from ``X`` (a microstate) or the model default."""
        model = _resolve_model(self.model, self.model_params)
        dt = self.dt if self.dt is not None else default_micro_dt(model)
        self.model_ = model
        return self._record(run_mala_chain(model, _initial_state(X), self.n_steps, dt,
                                           self.beta, self.random_state,
                                           self.store_states, self.thin))


def default_micro_dt(model):
    if model.epsilon is not None:
        return model.epsilon
    return 1.0 / model.info["stiffest"]


class DirectMMMCMC(_ChainEstimator):
    """Micro-macro MCMC with direct reconstruction on the fiber."""

    def __init__(self, model="threeatom", model_params=None, kernel="langevin", macro_dt=0.01,
                 free_energy="A_exact", reconstruction="nu_exact", kernel_free_energy=None,
                 n_steps=1000, beta=None, random_state=None, store_states=False, thin=1):
        self.model = model
        self.model_params = model_params
        self.kernel = kernel
        self.macro_dt = macro_dt
        self.free_energy = free_energy
        self.reconstruction = reconstruction
        self.kernel_free_energy = kernel_free_energy
        self.n_steps = n_steps
        self.beta = beta
        self.random_state = random_state
        self.store_states = store_states
        self.thin = thin

    def config(self):
        model = _resolve_model(self.model, self.model_params)
        return DirectConfig(model, self._kernel(model), model.free_energy(self.free_energy),
                            model.reconstruction(self.reconstruction), self.beta)

    def fit(self, X=None, y=None):
        cfg = self.config()
        self.model_ = cfg.model
        return self._record(run_direct_chain(cfg, _initial_state(X), self.n_steps,
                                             self.random_state, self.store_states, self.thin))


class IndirectMMMCMC(_ChainEstimator):
    """Micro-macro MCMC with indirect reconstruction by a biased inner chain.

    ``n_lambda`` may carry a pre-built table; it is tabulated from the
    model's exact free energy otherwise. Table construction is not part of
    ``runtime_``.
    """

    def __init__(self, model="threeatom", model_params=None, kernel="langevin", macro_dt=0.01,
                 free_energy="A_exact", lam=None, K=5, inner_dt=None, adjusted=True,
                 n_lambda=None, kernel_free_energy=None, n_steps=1000, beta=None,
                 random_state=None, store_states=False, thin=1):
        self.model = model
        self.model_params = model_params
        self.kernel = kernel
        self.macro_dt = macro_dt
        self.free_energy = free_energy
        self.lam = lam
        self.K = K
        self.inner_dt = inner_dt
        self.adjusted = adjusted
        self.n_lambda = n_lambda
        self.kernel_free_energy = kernel_free_energy
        self.n_steps = n_steps
        self.beta = beta
        self.random_state = random_state
        self.store_states = store_states
        self.thin = thin

    def config(self):
        model = _resolve_model(self.model, self.model_params)
        if self.lam is None:
            raise ValueError("IndirectMMMCMC requires lam")
        return IndirectConfig(model, self._kernel(model), model.free_energy(self.free_energy),
                              self.lam, self.K, self.inner_dt, self.n_lambda, self.beta,
                              self.adjusted)

    def fit(self, X=None, y=None):
        cfg = self.config()
        self.model_ = cfg.model
        self.n_lambda_ = cfg.n_lambda
        record = run_indirect_chain(cfg, _initial_state(X), self.n_steps, self.random_state,
                                    self.store_states, self.thin)
        self._record(record)
        self.inner_acceptance_rate_ = record.inner_accepted / max(record.inner_proposed, 1)
        return self


class MacroSampler(_ChainEstimator):
    """Metropolis-Hastings chain on the approximate marginal alone."""

    def __init__(self, model="threeatom", model_params=None, kernel="langevin", macro_dt=0.01,
                 free_energy="A_exact", kernel_free_energy=None, n_steps=1000, beta=None,
                 random_state=None, z0=None):
        self.model = model
        self.model_params = model_params
        self.kernel = kernel
        self.macro_dt = macro_dt
        self.free_energy = free_energy
        self.kernel_free_energy = kernel_free_energy
        self.n_steps = n_steps
        self.beta = beta
        self.random_state = random_state
        self.z0 = z0

    def fit(self, X=None, y=None):
        """Run from ``X`` (a rc value), ``z0`` or the rc of the model's default state."""
        model = _resolve_model(self.model, self.model_params)
        self.model_ = model
        if X is not None:
            z0 = float(np.asarray(X, dtype=np.float64).reshape(-1)[0])
        elif self.z0 is not None:
            z0 = float(self.z0)
        else:
            z0 = model.rc(model.x0)
        beta = model.beta if self.beta is None else self.beta
        return self._record(run_macro_chain(self._kernel(model), model.free_energy(self.free_energy),
                                            z0, self.n_steps, beta, self.random_state))


SAMPLER_KINDS = {
    "mala": MALASampler,
    "mm-direct": DirectMMMCMC,
    "mm-indirect": IndirectMMMCMC,
    "macro-only": MacroSampler,
}


class PeriodicKDE(BaseEstimator):
    """Gaussian kernel density estimate, optionally on a periodic domain.

    With ``period`` set, every sample contributes its images one period to
    either side, so mass leaving one end of the domain re-enters at the
    other.
    """

    def __init__(self, bandwidth=0.03, period=None):
        self.bandwidth = bandwidth
        self.period = period

    def fit(self, X, y=None):
        self.samples_ = check_samples(X)
        check_positive(self.bandwidth, "bandwidth")
        if self.period is not None:
            check_positive(self.period, "period")
        return self

    def density(self, grid):
        check_is_fitted(self, "samples_")
        g = np.asarray(grid, dtype=np.float64).reshape(-1)
        h = float(self.bandwidth)
        shifts = (0.0,) if self.period is None else (-self.period, 0.0, self.period)
        out = np.zeros(g.size)
        for start in range(0, self.samples_.size, 4096):
            s = self.samples_[start:start + 4096]
            for shift in shifts:
                u = (g[:, None] - s[None, :] - shift) / h
                out += np.exp(-0.5 * u * u).sum(axis=1)
        return out / (self.samples_.size * h * np.sqrt(2.0 * np.pi))

    def score_samples(self, X):
        """Log-density at ``X`` (scikit-learn's ``KernelDensity`` convention)."""
        with np.errstate(divide="ignore"):
            return np.log(self.density(X))
