"""Target-measure abstractions consumed by every sampler.

A :class:`Model` bundles a potential energy ``V``, a scalar reaction
coordinate ``xi`` and catalogs of (approximate) free energies and direct
reconstruction distributions. All densities are handled as unnormalized
log-densities ``-beta * energy``; normalization constants cancel in every
acceptance ratio and are only computed by :mod:`micromacro.oracle`.

The energy, coordinate and reconstruction callables are numba-compiled
functions with a fixed calling convention so the chain kernels can call
them without returning to the interpreter:

* ``potential(x, params) -> float`` and ``potential_grad(x, params) -> ndarray``
* ``rc(x, params) -> float`` and ``rc_grad(x, params) -> ndarray``
* ``normalize(x, params) -> ndarray`` (wraps periodic entries)
* free energies: ``value(z, fe_params)``, ``gradient(z, fe_params)``
* reconstructions: ``sample(z, params, beta, scale, rng)`` and
  ``log_density(x, z, params, beta, scale)``
"""
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Mapping, Optional

import numpy as np
from numba import njit

from ._validation import check_positive, check_random_state, check_state


class ModelDomainError(ValueError):
    """A state or reaction-coordinate value lies outside the model domain."""


class FiberMismatchError(ValueError):
    """A microstate handed to a reconstruction density is not on the fiber."""


class ConfigError(ValueError):
    """A configuration is inconsistent or cannot be honoured."""


class NumericalError(RuntimeError):
    """A numerical procedure failed to reach its tolerance."""


FIBER_TOL = 1e-9


@njit(cache=True, nogil=True)
def wrap_angle(z):
    """Map ``z`` to the half-open interval (-pi, pi]."""
    return z - 2.0 * np.pi * np.ceil((z - np.pi) / (2.0 * np.pi))


@njit(cache=True, nogil=True)
def rc_difference(a, b, period):
    """``a - b``, reduced to the minimal image when ``period > 0``."""
    d = a - b
    if period > 0.0:
        d = d - period * np.round(d / period)
    return d


@njit(cache=True, nogil=True)
def spline_eval(z, t0, h, c, period):
    """Evaluate a cubic on uniform knots ``t0 + i h`` (scipy ``PPoly`` layout)."""
    if period > 0.0:
        z = z - period * np.floor((z - t0) / period)
    n = c.shape[1]
    i = int(np.floor((z - t0) / h))
    if i < 0:
        i = 0
    elif i >= n:
        i = n - 1
    s = z - (t0 + i * h)
    return ((c[0, i] * s + c[1, i]) * s + c[2, i]) * s + c[3, i]


@dataclass(frozen=True)
class RcDomain:
    """Interval of admissible reaction-coordinate values.

    Periodic domains are half-open, ``(low, high]``, and every value is
    admissible after wrapping. Non-periodic domains are open intervals.
    """

    low: float
    high: float
    periodic: bool = False

    @property
    def period(self):
        return self.high - self.low if self.periodic else 0.0

    @property
    def width(self):
        return self.high - self.low

    def wrap(self, z):
        if not self.periodic:
            return z
        z = np.asarray(z, dtype=np.float64)
        out = z - self.period * np.ceil((z - self.high) / self.period)
        return out if out.ndim else float(out)

    def contains(self, z):
        z = np.asarray(z, dtype=np.float64)
        if self.periodic:
            return np.isfinite(z)
        return (z > self.low) & (z < self.high)

    def distance(self, a, b):
        d = np.asarray(a, dtype=np.float64) - b
        if self.periodic:
            d = d - self.period * np.round(d / self.period)
        return d


@dataclass(frozen=True, eq=False)
class FreeEnergy:
    """A (possibly approximate) free energy of the reaction coordinate."""

    name: str
    value_fn: object
    gradient_fn: object
    params: np.ndarray
    domain: RcDomain

    def __post_init__(self):
        params = np.array(self.params, dtype=np.float64)
        params.setflags(write=False)
        object.__setattr__(self, "params", params)

    def __call__(self, z):
        return self.value_fn(self.domain.wrap(z), self.params)

    def gradient(self, z):
        return self.gradient_fn(self.domain.wrap(z), self.params)

    def log_density(self, z, beta):
        return free_energy_log_density(self, z, beta)

    def __repr__(self):
        return f"FreeEnergy({self.name!r})"

    def __deepcopy__(self, memo):
        return self


@dataclass(frozen=True, eq=False)
class Reconstruction:
    """Direct reconstruction distribution on the fiber of a rc value.

    ``scale`` multiplies every variance of the model's exact reconstruction
    (``1`` for the exact distribution, ``2`` for the widened one).
    """

    name: str
    sample_fn: object
    log_density_fn: object
    params: np.ndarray
    scale: float = 1.0
    rc_fn: object = None
    rc_period: float = 0.0

    def __post_init__(self):
        params = np.array(self.params, dtype=np.float64)
        params.setflags(write=False)
        object.__setattr__(self, "params", params)

    def sample(self, z, beta, random_state=None):
        rng = check_random_state(random_state)
        return self.sample_fn(float(z), self.params, float(beta), self.scale, rng)

    def log_density(self, x, z, beta):
        x = np.asarray(x, dtype=np.float64)
        if self.rc_fn is not None:
            gap = abs(rc_difference(self.rc_fn(x, self.params), float(z), self.rc_period))
            if not gap <= FIBER_TOL:
                raise FiberMismatchError(
                    f"state is off the fiber of z={z}: |xi(x) - z| = {gap:.3e}")
        return self.log_density_fn(x, float(z), self.params, float(beta), self.scale)

    def __repr__(self):
        return f"Reconstruction({self.name!r}, scale={self.scale})"

    def __deepcopy__(self, memo):
        return self


@dataclass(frozen=True, eq=False)
class Model:
    """Immutable description of a molecular target measure.

    Attributes
    ----------
    name : str
        Registry id (``"threeatom"``, ``"butane"``, ...).
    dim : int
        Number of microscopic coordinates.
    params : ndarray
        Parameter vector passed to every compiled model function.
    rc_domain : RcDomain
    free_energies, reconstructions : mapping
        Named catalogs. ``exact_free_energy`` names the true free energy.
    beta : float
        Default inverse temperature.
    x0 : ndarray
        Default initial microstate for chains.
    epsilon : float or None
        Time-scale separation, for models that have one.
    """

    name: str
    dim: int
    potential_fn: object
    potential_grad_fn: object
    rc_fn: object
    rc_grad_fn: object
    normalize_fn: object
    params: np.ndarray
    rc_domain: RcDomain
    free_energies: Mapping[str, FreeEnergy]
    reconstructions: Mapping[str, Reconstruction]
    beta: float
    x0: np.ndarray
    epsilon: Optional[float] = None
    exact_free_energy: str = "A_exact"
    typical_rc: tuple = None
    info: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        params = np.array(self.params, dtype=np.float64)
        params.setflags(write=False)
        x0 = np.array(self.x0, dtype=np.float64)
        x0.setflags(write=False)
        object.__setattr__(self, "params", params)
        object.__setattr__(self, "x0", x0)
        object.__setattr__(self, "free_energies", MappingProxyType(dict(self.free_energies)))
        object.__setattr__(self, "reconstructions", MappingProxyType(dict(self.reconstructions)))
        object.__setattr__(self, "info", MappingProxyType(dict(self.info)))
        check_positive(self.beta, "beta")

    def __repr__(self):
        extra = f", epsilon={self.epsilon:g}" if self.epsilon is not None else ""
        return f"Model({self.name!r}, dim={self.dim}{extra}, beta={self.beta:g})"

    def __deepcopy__(self, memo):
        # immutable: estimator clones share the model
        return self

    def potential(self, x):
        return float(self.potential_fn(check_state(x, self.dim), self.params))

    def potential_grad(self, x):
        return self.potential_grad_fn(check_state(x, self.dim), self.params)

    def rc(self, x):
        return float(self.rc_fn(check_state(x, self.dim), self.params))

    def rc_grad(self, x):
        return self.rc_grad_fn(check_state(x, self.dim), self.params)

    def normalize(self, x):
        return self.normalize_fn(check_state(x, self.dim), self.params)

    @property
    def exact(self):
        return self.free_energies[self.exact_free_energy]

    def free_energy(self, name):
        try:
            return self.free_energies[name]
        except KeyError:
            raise KeyError(f"model {self.name!r} has no free energy {name!r}; "
                           f"choose from {sorted(self.free_energies)}") from None

    def reconstruction(self, name):
        try:
            return self.reconstructions[name]
        except KeyError:
            raise KeyError(f"model {self.name!r} has no reconstruction {name!r}; "
                           f"choose from {sorted(self.reconstructions)}") from None

    def sample_typical(self, random_state=None):
        """Draw a state away from singularities, for gradient spot checks."""
        rng = check_random_state(random_state)
        lo, hi = self.typical_rc if self.typical_rc else (self.rc_domain.low, self.rc_domain.high)
        z = rng.uniform(lo, hi)
        recon = self.reconstructions.get("nu_wide") or next(iter(self.reconstructions.values()))
        return recon.sample(z, self.beta, rng)


def gibbs_log_density(model, x, beta):
    """Unnormalized log Gibbs density ``-beta * V(x)``.

    Raises
    ------
    ModelDomainError
        If the potential is not finite at ``x``.
    """
    beta = check_positive(beta, "beta")
    v = model.potential(x)
    if not np.isfinite(v):
        raise ModelDomainError(f"potential of {model.name!r} is not finite at {x}")
    return -beta * v


def free_energy_log_density(fe, z, beta):
    """Unnormalized log marginal density ``-beta * A(z)``."""
    beta = check_positive(beta, "beta")
    z = float(z)
    if not fe.domain.contains(z):
        raise ModelDomainError(
            f"z={z} outside the domain ({fe.domain.low}, {fe.domain.high}) of {fe.name}")
    z = fe.domain.wrap(z)
    return -beta * float(fe.value_fn(z, fe.params))


def _relative_error(approx, exact):
    scale = max(np.linalg.norm(exact), np.linalg.norm(approx), 1e-300)
    return float(np.linalg.norm(approx - exact) / scale)


def finite_difference_gradient(f, x, step=1e-6):
    x = np.asarray(x, dtype=np.float64)
    g = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = step
        g[i] = (f(x + e) - f(x - e)) / (2.0 * step)
    return g


def check_gradients(model, n_states=100, step=1e-6, random_state=None,
                    potential_grad=None):
    """Worst-case relative error of analytic against central differences.

    Returns a dict with keys ``"potential"`` and ``"rc"``. Errors are
    measured norm-wise per state so that exactly-zero components (for
    example the bond entries of a torsion gradient) do not blow up.
    """
    rng = check_random_state(random_state)
    grad_v = potential_grad or model.potential_grad
    worst_v = worst_rc = 0.0
    for _ in range(n_states):
        x = model.sample_typical(rng)
        gv = finite_difference_gradient(model.potential, x, step)
        grc = finite_difference_gradient(model.rc, x, step)
        worst_v = max(worst_v, _relative_error(gv, grad_v(x)))
        worst_rc = max(worst_rc, _relative_error(grc, model.rc_grad(x)))
    return {"potential": worst_v, "rc": worst_rc}


@dataclass
class ChainRecord:
    """One sampler trajectory.

    ``rc_samples`` holds the reaction coordinate of the stored state after
    every step (rejections repeat the previous value). ``states`` is only
    filled when states were requested, thinned by ``thin``.
    """

    rc_samples: np.ndarray
    n_steps: int
    accepted: int
    runtime: float
    states: Optional[np.ndarray] = None
    thin: int = 1
    macro_accepted: Optional[int] = None
    micro_accepted: Optional[int] = None
    micro_log_alpha_min: Optional[float] = None
    inner_accepted: Optional[int] = None
    inner_proposed: Optional[int] = None
    final_state: Optional[np.ndarray] = None
    final_rc: Optional[float] = None

    @property
    def acceptance_rate(self):
        return self.accepted / self.n_steps

    @property
    def macro_acceptance_rate(self):
        if self.macro_accepted is None:
            return float("nan")
        return self.macro_accepted / self.n_steps

    @property
    def micro_acceptance_rate(self):
        """Micro acceptance conditioned on macro acceptance."""
        if self.micro_accepted is None:
            return float("nan")
        if self.macro_accepted == 0:
            return float("nan")
        return self.micro_accepted / self.macro_accepted

    def estimate(self, functional, burn_in=0):
        samples = self.rc_samples[burn_in:]
        if functional == "mean_rc":
            return float(np.mean(samples))
        if functional == "var_rc":
            return float(np.var(samples))
        raise ValueError(f"unknown functional {functional!r}")
