"""Quadrature ground truth for the reaction-coordinate level.

Everything here is deterministic and independent of the samplers: the
normalization ``Z_A`` of a marginal, exact moments of it, the smoothed
normalization ``N_lambda`` used by indirect reconstruction, and a
brute-force stationary distribution for small discretized chains.
"""
import hashlib
import json
import os
from dataclasses import dataclass

import numpy as np
from numba import njit
from numpy.polynomial.legendre import leggauss
from scipy.interpolate import CubicSpline
from scipy.special import logsumexp

from .core import ConfigError, FreeEnergy, NumericalError, RcDomain, spline_eval

GL_ORDER = 20
_PROBE = 2001


def _gl_rule(a, b, n_panels, order=GL_ORDER):
    t, w = leggauss(order)
    edges = np.linspace(a, b, n_panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    nodes = (mid[:, None] + half[:, None] * t).ravel()
    weights = (half[:, None] * w).ravel()
    return nodes, weights


def _energy(fe):
    """Vectorized ``z -> A(z)``; FreeEnergy handles wrap periodic values."""
    if isinstance(fe, FreeEnergy):
        return lambda z: np.asarray(fe.value_fn(fe.domain.wrap(np.asarray(z, dtype=np.float64)),
                                                fe.params), dtype=np.float64)
    return lambda z: np.asarray(fe(np.asarray(z, dtype=np.float64)), dtype=np.float64)


def _bounds(fe, domain):
    if domain is None:
        if not isinstance(fe, FreeEnergy):
            raise ValueError("a domain is required for a bare free-energy callable")
        domain = fe.domain
    if isinstance(domain, RcDomain):
        return float(domain.low), float(domain.high)
    lo, hi = domain
    if not (np.isfinite(lo) and np.isfinite(hi) and lo < hi):
        raise ValueError(f"domain must be a finite interval, got {domain!r}")
    return float(lo), float(hi)


@dataclass(frozen=True)
class QuadratureTable:
    """Converged composite Gauss-Legendre rule for ``exp(-beta A)``.

    ``values`` are ``exp(-beta A(node) - log_scale)``; ``log_scale`` keeps the
    integrand near unity so large energies do not underflow.
    """

    grid: np.ndarray
    weights: np.ndarray
    values: np.ndarray
    log_scale: float
    n_panels: int

    @property
    def log_z(self):
        return float(np.log(self.weights @ self.values) + self.log_scale)


def quadrature_table(fe, beta, domain=None, tol=1e-10, n_panels=4, max_refine=16):
    """Refine panels by 2x until ``Z_A`` changes by less than ``tol`` (relative)."""
    energy = _energy(fe)
    lo, hi = _bounds(fe, domain)
    probe = np.linspace(lo, hi, _PROBE)[1:-1]
    a_probe = energy(probe)
    log_scale = float(np.max(-beta * a_probe[np.isfinite(a_probe)]))
    prev = None
    for _ in range(max_refine):
        nodes, weights = _gl_rule(lo, hi, n_panels)
        values = np.exp(-beta * energy(nodes) - log_scale)
        z = float(weights @ values)
        if not np.isfinite(z) or z <= 0:
            raise NumericalError(f"exp(-beta A) is not integrable on ({lo}, {hi})")
        if prev is not None and abs(z - prev) <= tol * z:
            return QuadratureTable(nodes, weights, values, log_scale, n_panels)
        prev = z
        n_panels *= 2
    raise NumericalError(f"Z_A did not converge to {tol:g} after {max_refine} refinements")


def normalize_free_energy(fe, beta, domain=None, tol=1e-10):
    """``Z_A = int exp(-beta A(z)) dz`` over the domain."""
    return float(np.exp(quadrature_table(fe, beta, domain, tol).log_z))


def free_energy_density(fe, beta, domain=None, tol=1e-10):
    """Normalized marginal density ``exp(-beta A) / Z_A`` as a vectorized callable."""
    table = quadrature_table(fe, beta, domain, tol)
    energy = _energy(fe)
    log_z = table.log_z

    def density(z):
        return np.exp(-beta * energy(z) - log_z)
    return density


def reference_moment(f, mu0, beta, tol=1e-10, domain=None, max_refine=16):
    """Exact expectation of ``f(z)`` under ``exp(-beta A) / Z_A``.

    The quadrature level is fixed by the density alone and only refined
    further if ``f`` demands it, so the result is linear in ``f`` to
    rounding error.
    """
    table = quadrature_table(mu0, beta, domain, tol)
    energy = _energy(mu0)
    lo, hi = _bounds(mu0, domain)

    def level(n):
        nodes, weights = _gl_rule(lo, hi, n)
        rho = np.exp(-beta * energy(nodes) - table.log_scale)
        fx = np.broadcast_to(np.asarray(f(nodes), dtype=np.float64), nodes.shape)
        return float(weights @ (fx * rho)) / float(weights @ rho)

    n = table.n_panels
    prev = level(n // 2) if n > 1 else None
    for _ in range(max_refine):
        cur = level(n)
        if prev is not None and abs(cur - prev) <= tol * max(abs(cur), 1.0):
            return cur
        prev = cur
        n *= 2
    raise NumericalError(f"moment did not converge to {tol:g}")


# --- N_lambda --------------------------------------------------------------

WINDOW = 12.0


def _smoothed(density, z_nodes, width, lo, hi, period, n_panels, order=GL_ORDER):
    """Gaussian smoothing ``int phi_w(u - z) rho(u) du`` at every node."""
    t, gw = leggauss(order)
    c = 1.0 / (np.sqrt(2.0 * np.pi) * width)
    full = period > 0 and 2.0 * WINDOW * width >= period
    if full:
        a = z_nodes - 0.5 * period
        b = z_nodes + 0.5 * period
    else:
        a = z_nodes - WINDOW * width
        b = z_nodes + WINDOW * width
        if period == 0:
            a = np.maximum(a, lo)
            b = np.minimum(b, hi)
    out = np.empty(z_nodes.size)
    m = int(np.ceil(WINDOW * width / period)) + 1 if full else 0
    chunk = max(1, 400_000 // (n_panels * order))
    for s in range(0, z_nodes.size, chunk):
        sl = slice(s, s + chunk)
        af, bf, zf = a[sl, None], b[sl, None], z_nodes[sl, None]
        edges = af + (bf - af) * np.linspace(0.0, 1.0, n_panels + 1)[None, :]
        half = 0.5 * np.diff(edges, axis=1)
        mid = 0.5 * (edges[:, 1:] + edges[:, :-1])
        u = (mid[:, :, None] + half[:, :, None] * t).reshape(zf.shape[0], -1)
        w = (half[:, :, None] * gw).reshape(zf.shape[0], -1)
        d = u - zf
        if full:
            k = np.zeros_like(d)
            for img in range(-m, m + 1):
                k += np.exp(-0.5 * ((d + img * period) / width) ** 2)
        else:
            k = np.exp(-0.5 * (d / width) ** 2)
        out[sl] = c * np.sum(w * k * density(u), axis=1)
    return out


class NLambdaTable:
    """``log N_lambda(z) / Z_V`` tabulated on uniform knots and splined.

    ``N_lambda(z')/Z_V`` is the marginal density smoothed by a Gaussian of
    width ``1/sqrt(lambda beta)``. The table interpolates ``log N`` with a
    cubic spline (periodic on periodic domains); evaluation is compiled so
    the chains can call it in their hot loop.
    """

    MAGIC = b"MMNLAM01"

    def __init__(self, nodes, log_values, lam, beta, period, key=None):
        self.nodes = np.asarray(nodes, dtype=np.float64)
        self.log_values = np.asarray(log_values, dtype=np.float64)
        self.lam = float(lam)
        self.beta = float(beta)
        self.period = float(period)
        self.key = key
        if self.period > 0:
            self.log_values = self.log_values.copy()
            self.log_values[-1] = self.log_values[0]
        bc = "periodic" if self.period > 0 else "not-a-knot"
        spline = CubicSpline(self.nodes, self.log_values, bc_type=bc)
        self.coeffs = np.ascontiguousarray(spline.c)
        self.t0 = float(self.nodes[0])
        self.h = float(self.nodes[1] - self.nodes[0])

    @property
    def width(self):
        return 1.0 / np.sqrt(self.lam * self.beta)

    def __deepcopy__(self, memo):
        return self

    def __repr__(self):
        return f"NLambdaTable(lam={self.lam:g}, beta={self.beta:g}, n={self.nodes.size})"

    def log(self, z):
        z = np.asarray(z, dtype=np.float64)
        out = _spline_many(z.reshape(-1), self.t0, self.h, self.coeffs, self.period)
        return out.reshape(z.shape) if z.ndim else float(out[0])

    def __call__(self, z):
        return np.exp(self.log(z))

    def save(self, path):
        header = json.dumps({"key": self.key, "lam": self.lam, "beta": self.beta,
                             "period": self.period, "n": int(self.nodes.size)}).encode()
        with open(path, "wb") as fh:
            fh.write(self.MAGIC)
            fh.write(np.uint64(len(header)).tobytes())
            fh.write(header)
            fh.write(self.nodes.tobytes())
            fh.write(self.log_values.tobytes())

    @classmethod
    def load(cls, path, key=None):
        """Read a cached table; returns ``None`` on a key mismatch or bad file."""
        try:
            with open(path, "rb") as fh:
                if fh.read(8) != cls.MAGIC:
                    return None
                n_head = int(np.frombuffer(fh.read(8), dtype=np.uint64)[0])
                header = json.loads(fh.read(n_head))
                n = header["n"]
                data = np.frombuffer(fh.read(16 * n), dtype=np.float64)
        except (OSError, ValueError, KeyError):
            return None
        if data.size != 2 * n or (key is not None and header["key"] != key):
            return None
        return cls(data[:n], data[n:], header["lam"], header["beta"], header["period"],
                   header["key"])


@njit(cache=True)
def _spline_many(z, t0, h, c, period):
    out = np.empty(z.size)
    for i in range(z.size):
        out[i] = spline_eval(z[i], t0, h, c, period)
    return out


def _table_key(fe, lam, beta, n_intervals, model_id):
    d = fe.domain
    return {"model": model_id, "free_energy": fe.name,
            "params": [float(v) for v in fe.params], "lambda": float(lam),
            "beta": float(beta), "grid": int(n_intervals),
            "domain": [float(d.low), float(d.high), bool(d.periodic)]}


def _log_floor(values):
    return np.log(np.maximum(values, 1e-300))


def n_lambda_table(mu0, lam, beta, grid=None, n_panels=16, cache_dir=None, model_id=None):
    """Tabulate ``N_lambda(z') / Z_V`` over the reaction-coordinate domain.

    Parameters
    ----------
    mu0 : FreeEnergy
        The exact free energy (``N_lambda`` smooths the true marginal).
    lam, beta : float
        Bias stiffness and inverse temperature.
    grid : int, optional
        Number of table intervals. Defaults to a spacing of a sixteenth of the
        kernel width ``1/sqrt(lambda beta)``.
    cache_dir : path, optional
        Read and write a binary cache keyed by model, free energy, lambda,
        beta and grid.

    Raises
    ------
    ConfigError
        If the table spacing exceeds a quarter of the kernel width.
    """
    if not lam > 0:
        raise ConfigError(f"lambda must be positive, got {lam!r}")
    if not beta > 0:
        raise ConfigError(f"beta must be positive, got {beta!r}")
    dom = mu0.domain
    width = 1.0 / np.sqrt(lam * beta)
    if grid is None:
        grid = max(64, int(np.ceil(dom.width / (width / 16.0))))
    grid = int(grid)
    if dom.width / grid > width / 4.0:
        raise ConfigError(f"N_lambda grid spacing {dom.width / grid:.3g} exceeds a quarter of "
                          f"the kernel width {width:.3g}; use at least "
                          f"{int(np.ceil(4 * dom.width / width))} intervals")
    key = _table_key(mu0, lam, beta, grid, model_id)
    path = None
    if cache_dir is not None:
        digest = hashlib.sha256(json.dumps(key, sort_keys=True).encode()).hexdigest()[:16]
        path = os.path.join(cache_dir, f"nlambda-{digest}.bin")
        cached = NLambdaTable.load(path, key)
        if cached is not None:
            return cached
    nodes = np.linspace(dom.low, dom.high, grid + 1)
    values = n_lambda_values(mu0, lam, beta, nodes, n_panels)
    table = NLambdaTable(nodes, _log_floor(values), lam, beta, dom.period, key)
    if path is not None:
        os.makedirs(cache_dir, exist_ok=True)
        table.save(path)
    return table


def n_lambda_values(mu0, lam, beta, z, n_panels=16):
    """``N_lambda(z) / Z_V`` by direct quadrature at the points ``z``."""
    dom = mu0.domain
    density = free_energy_density(mu0, beta)
    width = 1.0 / np.sqrt(lam * beta)
    z = np.atleast_1d(np.asarray(z, dtype=np.float64))
    return _smoothed(density, z, width, dom.low, dom.high, dom.period, n_panels)


# --- brute-force stationary distributions ---------------------------------

def brute_force_stationary(kernel_assembler, grid=None, tol=1e-12, max_iter=500_000,
                           row_tol=1e-9):
    """Left Perron vector of a row-stochastic matrix by power iteration.

    ``kernel_assembler`` is either the matrix itself or a callable that
    builds it from ``grid``. Iterates until ``||p P - p||_1 < tol``,
    starting from a direct linear solve.
    """
    P = kernel_assembler(grid) if callable(kernel_assembler) else kernel_assembler
    P = np.asarray(P, dtype=np.float64)
    if P.ndim != 2 or P.shape[0] != P.shape[1]:
        raise NumericalError(f"transition matrix must be square, got shape {P.shape}")
    if np.any(P < -row_tol):
        raise NumericalError("transition matrix has negative entries")
    bad = np.abs(P.sum(axis=1) - 1.0) > row_tol
    if np.any(bad):
        raise NumericalError(f"{bad.sum()} rows of the transition matrix do not sum to 1 "
                             f"(first: row {int(np.argmax(bad))})")
    p = _stationary_guess(P)
    for _ in range(max_iter):
        nxt = p @ P
        nxt /= nxt.sum()
        if np.abs(nxt - p).sum() < tol:
            return nxt
        # a half-lazy step breaks any periodicity without moving the fixed point
        p = 0.5 * (p + nxt)
    raise NumericalError(f"power iteration did not reach {tol:g} in {max_iter} iterations")


def _stationary_guess(P):
    """Start vector for the power iteration: a direct solve of ``p (P - I) = 0``.

    Slowly mixing kernels would need very many plain iterations; the solve
    lands next to the fixed point and the iteration only certifies it.
    """
    n = P.shape[0]
    A = P.T - np.eye(n)
    A[-1] = 1.0
    b = np.zeros(n)
    b[-1] = 1.0
    try:
        p = np.linalg.solve(A, b)
    except np.linalg.LinAlgError:
        return np.full(n, 1.0 / n)
    if not np.all(np.isfinite(p)) or np.any(p < -1e-6 * np.abs(p).max()):
        return np.full(n, 1.0 / n)
    p = np.clip(p, 0.0, None)
    return p / p.sum()


def threeatom_grid_states(grid):
    """Microstates ``(x_a, r cos t, r sin t)`` for a product grid in ``(x_a, r, t)``."""
    xa, r, t = (np.asarray(g, dtype=np.float64) for g in grid)
    XA, R, T = np.meshgrid(xa, r, t, indexing="ij")
    return np.stack([XA.ravel(), (R * np.cos(T)).ravel(), (R * np.sin(T)).ravel()], axis=1)


def discretized_gibbs(model, states, beta):
    lp = np.array([-beta * model.potential_fn(x, model.params) for x in states])
    return np.exp(lp - logsumexp(lp))


def assemble_direct_kernel(model, kernel, mu0_bar, recon, beta, grid, micro_log_accept=None):
    """Transition matrix of direct mM-MCMC on a three-atom product grid.

    The macroscopic Gaussian proposal is restricted to the angle nodes and
    renormalized, the reconstruction distribution to the ``(x_a, r)`` nodes
    of each fiber. Acceptance probabilities come from the package's own
    macroscopic and microscopic acceptance functions, so the stationary
    vector of this matrix is a check of those functions.
    """
    from .mmmcmc import direct_micro_log_accept
    from .samplers import macro_accept_log_prob, macro_transition_log_density

    micro = micro_log_accept or direct_micro_log_accept
    xa, r, t = (np.asarray(g, dtype=np.float64) for g in grid)
    nf, nt = xa.size * r.size, t.size
    states = threeatom_grid_states(grid)
    n = states.shape[0]
    lp = np.array([-beta * model.potential_fn(x, model.params) for x in states])
    lpbar = np.array([mu0_bar.log_density(z, beta) for z in t])

    logq = np.array([[macro_transition_log_density(kernel, a, b, beta, mu0_bar) for b in t]
                     for a in t])
    logq -= logsumexp(logq, axis=1, keepdims=True)
    macro = np.array([[np.exp(macro_accept_log_prob(mu0_bar, t[a], t[b], logq[a, b],
                                                    logq[b, a], beta))
                       for b in range(nt)] for a in range(nt)])

    lnu = np.array([recon.log_density_fn(x, float(z), recon.params, beta, recon.scale)
                    for x, z in zip(states, np.tile(t, nf))]).reshape(nf, nt)
    lnu -= logsumexp(lnu, axis=0, keepdims=True)
    lnu = lnu.ravel()
    k_of = np.tile(np.arange(nt), nf)

    P = np.empty((n, n))
    for s in range(n):
        k = k_of[s]
        lm = micro(lp[s], lp, lpbar[k], lpbar[k_of], lnu[s], lnu)
        row = np.exp(logq[k, k_of]) * macro[k, k_of] * np.exp(lnu) * np.exp(lm)
        row[s] = 0.0
        row[s] = 1.0 - row.sum()
        P[s] = row
    return P, states, lp
