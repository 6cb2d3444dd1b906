"""The two benchmark molecules: a planar three-atom molecule and butane.

Three-atom molecule
    State ``(x_a, x_c, y_c)``: atom A on the x-axis, atom B fixed at the
    origin, atom C free in the plane. Two stiff bonds of stiffness ``1/eps``
    and a bimodal bending term in ``theta = atan2(y_c, x_c)``, which is the
    reaction coordinate.

Butane (united atom)
    Internal coordinates ``(r1, r2, r3, a1, a2, phi)``: three bonds, two bend
    angles and the torsion ``phi``, the reaction coordinate. The potential is
    separable in these coordinates, so the torsion energy is the free energy.
"""
import numpy as np
from numba import njit

from ._validation import check_positive, check_random_state
from .core import (FreeEnergy, Model, RcDomain, Reconstruction, rc_difference,
                   wrap_angle, FIBER_TOL, FiberMismatchError, ModelDomainError)

# --- three-atom molecule -------------------------------------------------

ANGLE_STIFFNESS = 208.0
ANGLE_OFFSET = 0.3838
SHIFTED_ANGLE_OFFSET = 0.4838
THREEATOM_X0 = (1.0, np.cos(np.pi / 2 - ANGLE_OFFSET), np.sin(np.pi / 2 - ANGLE_OFFSET))


@njit(cache=True, nogil=True)
def _bend_energy(z, q):
    # q = (stiffness, offset, cosine amplitude)
    u = z - np.pi / 2
    w = u * u - q[1] * q[1]
    return 0.5 * q[0] * w * w + q[2] * np.cos(z)


@njit(cache=True, nogil=True)
def _bend_energy_grad(z, q):
    u = z - np.pi / 2
    return 2.0 * q[0] * u * (u * u - q[1] * q[1]) - q[2] * np.sin(z)


_EXACT_BEND = np.array([ANGLE_STIFFNESS, ANGLE_OFFSET, 0.0])


@njit(cache=True, nogil=True)
def _threeatom_potential(x, p):
    eps = p[0]
    r = np.sqrt(x[1] * x[1] + x[2] * x[2])
    if r == 0.0:
        return np.inf
    theta = np.arctan2(x[2], x[1])
    return ((x[0] - 1.0) ** 2 + (r - 1.0) ** 2) / (2.0 * eps) + _bend_energy(theta, _EXACT_BEND)


@njit(cache=True, nogil=True)
def _threeatom_potential_grad(x, p):
    eps = p[0]
    r2 = x[1] * x[1] + x[2] * x[2]
    r = np.sqrt(r2)
    theta = np.arctan2(x[2], x[1])
    da = _bend_energy_grad(theta, _EXACT_BEND)
    g = np.empty(3)
    g[0] = (x[0] - 1.0) / eps
    radial = (r - 1.0) / (eps * r)
    g[1] = radial * x[1] - da * x[2] / r2
    g[2] = radial * x[2] + da * x[1] / r2
    return g


@njit(cache=True, nogil=True)
def _threeatom_rc(x, p):
    return np.arctan2(x[2], x[1])


@njit(cache=True, nogil=True)
def _threeatom_rc_grad(x, p):
    r2 = x[1] * x[1] + x[2] * x[2]
    g = np.empty(3)
    g[0] = 0.0
    g[1] = -x[2] / r2
    g[2] = x[1] / r2
    return g


@njit(cache=True, nogil=True)
def _identity(x, p):
    return x


@njit(cache=True, nogil=True)
def _threeatom_recon_sample(z, p, beta, scale, rng):
    sd = np.sqrt(scale * p[0] / beta)
    xa = 1.0 + sd * rng.standard_normal()
    r = 1.0 + sd * rng.standard_normal()
    while r <= 0.0:
        r = 1.0 + sd * rng.standard_normal()
    x = np.empty(3)
    x[0] = xa
    x[1] = r * np.cos(z)
    x[2] = r * np.sin(z)
    return x


@njit(cache=True, nogil=True)
def _threeatom_recon_logpdf(x, z, p, beta, scale):
    var = scale * p[0] / beta
    r = np.sqrt(x[1] * x[1] + x[2] * x[2])
    return -((x[0] - 1.0) ** 2 + (r - 1.0) ** 2) / (2.0 * var) - np.log(2.0 * np.pi * var)


def threeatom_model(epsilon=1e-4, beta=1.0):
    """Three-atom molecule with time-scale separation ``epsilon``.

    Free energies: ``A_exact``, ``A_shift`` (wells moved 0.1 rad outward) and
    ``A_cos`` (``A_exact + cos theta``). Reconstructions: ``nu_exact``
    (``x_a, r_c ~ N(1, eps/beta)``) and ``nu_wide`` (variances doubled).
    """
    epsilon = check_positive(epsilon, "epsilon")
    beta = check_positive(beta, "beta")
    params = np.array([epsilon])
    domain = RcDomain(0.0, np.pi, periodic=False)
    fes = {
        "A_exact": FreeEnergy("A_exact", _bend_energy, _bend_energy_grad,
                              [ANGLE_STIFFNESS, ANGLE_OFFSET, 0.0], domain),
        "A_shift": FreeEnergy("A_shift", _bend_energy, _bend_energy_grad,
                              [ANGLE_STIFFNESS, SHIFTED_ANGLE_OFFSET, 0.0], domain),
        "A_cos": FreeEnergy("A_cos", _bend_energy, _bend_energy_grad,
                            [ANGLE_STIFFNESS, ANGLE_OFFSET, 1.0], domain),
    }
    recons = {
        name: Reconstruction(name, _threeatom_recon_sample, _threeatom_recon_logpdf,
                             params, scale=scale, rc_fn=_threeatom_rc)
        for name, scale in (("nu_exact", 1.0), ("nu_wide", 2.0))
    }
    return Model(
        name="threeatom", dim=3,
        potential_fn=_threeatom_potential, potential_grad_fn=_threeatom_potential_grad,
        rc_fn=_threeatom_rc, rc_grad_fn=_threeatom_rc_grad, normalize_fn=_identity,
        params=params, rc_domain=domain, free_energies=fes, reconstructions=recons,
        beta=beta, x0=THREEATOM_X0, epsilon=epsilon, typical_rc=(0.4, np.pi - 0.4),
        info={"stiffest": 1.0 / epsilon},
    )


def _variant_scale(variant):
    scales = {"nu_exact": 1.0, "nu_wide": 2.0}
    try:
        return scales[variant]
    except KeyError:
        raise ValueError(f"unknown reconstruction {variant!r}; choose from {sorted(scales)}") from None


def threeatom_reconstruct(variant, z, epsilon, beta, random_state=None):
    """Draw a three-atom state on the fiber ``theta = z``."""
    z = float(z)
    if not 0.0 < z < np.pi:
        raise ModelDomainError(f"z={z} outside (0, pi)")
    rng = check_random_state(random_state)
    return _threeatom_recon_sample(z, np.array([check_positive(epsilon, "epsilon")]),
                                   check_positive(beta, "beta"), _variant_scale(variant), rng)


def threeatom_reconstruction_log_density(variant, x, z, epsilon, beta):
    """Log-density of ``(x_a, r_c)`` under a three-atom reconstruction."""
    x = np.asarray(x, dtype=np.float64)
    gap = abs(_threeatom_rc(x, None) - float(z))
    if not gap <= FIBER_TOL:
        raise FiberMismatchError(f"|theta(x) - z| = {gap:.3e} exceeds {FIBER_TOL}")
    return _threeatom_recon_logpdf(x, float(z), np.array([float(epsilon)]), float(beta),
                                   _variant_scale(variant))


# --- butane --------------------------------------------------------------

BUTANE_PARAMS = {
    "k_b": 1.17e6,
    "k_a": 62500.0,
    "r0": 1.53,
    "theta0": np.deg2rad(112.0),
    "c0": 1031.36,
    "c1": 2037.82,
    "c2": 158.52,
    "c3": -3227.7,
}
# Reproduces the published butane macroscopic acceptance rates.
BUTANE_BETA = 1.0 / 200.0
_TORSION = np.array([BUTANE_PARAMS[c] for c in ("c0", "c1", "c2", "c3")])


@njit(cache=True, nogil=True)
def _torsion_energy(z, q):
    # q = (c0, c1, c2, c3, frequency, bias amplitude, bias phase)
    u = np.cos(q[4] * z)
    return q[0] + u * (q[1] + u * (q[2] + u * q[3])) + q[5] * np.cos(z - q[6])


@njit(cache=True, nogil=True)
def _torsion_energy_grad(z, q):
    u = np.cos(q[4] * z)
    return (-q[4] * np.sin(q[4] * z) * (q[1] + u * (2.0 * q[2] + 3.0 * u * q[3]))
            - q[5] * np.sin(z - q[6]))


@njit(cache=True, nogil=True)
def _butane_potential(x, p):
    # p = (k_b, k_a, r0, theta0, c0, c1, c2, c3)
    v = 0.0
    for i in range(3):
        v += 0.5 * p[0] * (x[i] - p[2]) ** 2
    for i in range(3, 5):
        v += 0.5 * p[1] * (x[i] - p[3]) ** 2
    u = np.cos(x[5])
    return v + p[4] + u * (p[5] + u * (p[6] + u * p[7]))


@njit(cache=True, nogil=True)
def _butane_potential_grad(x, p):
    g = np.empty(6)
    for i in range(3):
        g[i] = p[0] * (x[i] - p[2])
    for i in range(3, 5):
        g[i] = p[1] * (x[i] - p[3])
    u = np.cos(x[5])
    g[5] = -np.sin(x[5]) * (p[5] + u * (2.0 * p[6] + 3.0 * u * p[7]))
    return g


@njit(cache=True, nogil=True)
def _butane_rc(x, p):
    return x[5]


@njit(cache=True, nogil=True)
def _butane_rc_grad(x, p):
    g = np.zeros(6)
    g[5] = 1.0
    return g


@njit(cache=True, nogil=True)
def _butane_normalize(x, p):
    x[5] = wrap_angle(x[5])
    return x


@njit(cache=True, nogil=True)
def _butane_recon_sample(z, p, beta, scale, rng):
    x = np.empty(6)
    sd_b = np.sqrt(scale / (beta * p[0]))
    sd_a = np.sqrt(scale / (beta * p[1]))
    for i in range(3):
        r = p[2] + sd_b * rng.standard_normal()
        while r <= 0.0:
            r = p[2] + sd_b * rng.standard_normal()
        x[i] = r
    for i in range(3, 5):
        a = p[3] + sd_a * rng.standard_normal()
        while a <= 0.0 or a >= np.pi:
            a = p[3] + sd_a * rng.standard_normal()
        x[i] = a
    x[5] = wrap_angle(z)
    return x


@njit(cache=True, nogil=True)
def _butane_recon_logpdf(x, z, p, beta, scale):
    var_b = scale / (beta * p[0])
    var_a = scale / (beta * p[1])
    s = 0.0
    for i in range(3):
        s += (x[i] - p[2]) ** 2
    t = 0.0
    for i in range(3, 5):
        t += (x[i] - p[3]) ** 2
    return (-s / (2.0 * var_b) - 1.5 * np.log(2.0 * np.pi * var_b)
            - t / (2.0 * var_a) - np.log(2.0 * np.pi * var_a))


def _butane_param_vector():
    return np.array([BUTANE_PARAMS[k] for k in
                     ("k_b", "k_a", "r0", "theta0", "c0", "c1", "c2", "c3")])


def butane_model(beta=BUTANE_BETA):
    """United-atom butane in internal coordinates.

    Free energies: ``A_exact`` (the torsion energy), ``A_contract`` (torsion
    argument scaled by 1.2) and ``A_biased`` (``+ 500 cos(phi - 1)``).
    Reconstructions draw bonds and bends from their Gaussian conditionals
    (``nu_exact``) or from Gaussians with doubled variances (``nu_wide``).
    """
    beta = check_positive(beta, "beta")
    params = _butane_param_vector()
    domain = RcDomain(-np.pi, np.pi, periodic=True)

    def fe(name, freq=1.0, amp=0.0, phase=0.0):
        return FreeEnergy(name, _torsion_energy, _torsion_energy_grad,
                          np.r_[_TORSION, freq, amp, phase], domain)

    fes = {
        "A_exact": fe("A_exact"),
        "A_contract": fe("A_contract", freq=1.2),
        "A_biased": fe("A_biased", amp=500.0, phase=1.0),
    }
    recons = {
        name: Reconstruction(name, _butane_recon_sample, _butane_recon_logpdf, params,
                             scale=scale, rc_fn=_butane_rc, rc_period=2.0 * np.pi)
        for name, scale in (("nu_exact", 1.0), ("nu_wide", 2.0))
    }
    x0 = [BUTANE_PARAMS["r0"]] * 3 + [BUTANE_PARAMS["theta0"]] * 2 + [-2.0 * np.pi / 3.0]
    return Model(
        name="butane", dim=6,
        potential_fn=_butane_potential, potential_grad_fn=_butane_potential_grad,
        rc_fn=_butane_rc, rc_grad_fn=_butane_rc_grad, normalize_fn=_butane_normalize,
        params=params, rc_domain=domain, free_energies=fes, reconstructions=recons,
        beta=beta, x0=x0, typical_rc=(-np.pi, np.pi),
        info={"stiffest": BUTANE_PARAMS["k_b"], "k_b": BUTANE_PARAMS["k_b"],
              "k_a": BUTANE_PARAMS["k_a"]},
    )


def torsion_energy(phi):
    """Torsion energy ``V_phi`` of butane."""
    return _torsion_energy(phi, np.r_[_TORSION, 1.0, 0.0, 0.0])


def butane_reconstruct(variant, phi, beta=BUTANE_BETA, random_state=None):
    scale = _variant_scale(variant)
    rng = check_random_state(random_state)
    return _butane_recon_sample(float(phi), _butane_param_vector(),
                                check_positive(beta, "beta"), scale, rng)


def butane_reconstruction_log_density(variant, x, phi, beta=BUTANE_BETA):
    """Log-density of the bonds and bends under a butane reconstruction."""
    x = np.asarray(x, dtype=np.float64)
    gap = abs(rc_difference(x[5], float(phi), 2.0 * np.pi))
    if not gap <= FIBER_TOL:
        raise FiberMismatchError(f"|phi(x) - phi| = {gap:.3e} exceeds {FIBER_TOL}")
    return _butane_recon_logpdf(x, float(phi), _butane_param_vector(), float(beta),
                                _variant_scale(variant))


MODELS = {
    "threeatom": threeatom_model,
    "butane": butane_model,
}


def make_model(model_id, **params):
    """Build a registered model from keyword parameters."""
    try:
        factory = MODELS[model_id]
    except KeyError:
        raise ValueError(f"unknown model {model_id!r}; choose from {sorted(MODELS)}") from None
    return factory(**params)


def well_index(phi):
    """Butane torsional well of each angle: -1 (left gauche), 0 (trans), 1 (right gauche)."""
    phi = wrap_angle(np.asarray(phi, dtype=np.float64))
    barrier = _torsion_barrier()
    return np.where(phi < -barrier, -1, np.where(phi > barrier, 1, 0))


def _torsion_barrier():
    # cos(phi) at the trans/gauche barrier solves c1 + 2 c2 u + 3 c3 u^2 = 0
    c1, c2, c3 = _TORSION[1:]
    roots = np.roots([3.0 * c3, 2.0 * c2, c1])
    u = roots[roots > 0].real.max()
    return float(np.arccos(u))
