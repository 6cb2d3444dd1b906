"""Replicated experiments, MSE and efficiency-gain statistics, CSV output.

A run executes ``M`` replications of every configured sampler. Replication
``m`` of sampler ``j`` at scan position ``v`` draws from
``SeedSequence(seed, spawn_key=(v, j, m))`` expanded with Philox, so each
chain's stream depends only on those indices and never on the pool size or
the order in which replications finish.
"""
import csv
import hashlib
import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional

import numpy as np
from sklearn.base import clone

from ._validation import check_int, check_samples
from .core import ConfigError
from .estimators import SAMPLER_KINDS, PeriodicKDE
from .molecules import make_model
from .oracle import n_lambda_table, reference_moment

FUNCTIONALS = ("mean_rc", "var_rc")
REPLICATION_COLUMNS = ("config_hash", "method", "replication", "mean_rc", "var_rc",
                       "macro_acceptance", "micro_acceptance", "acceptance", "runtime_seconds")
GAIN_COLUMNS = ("axis", "value", "method", "baseline", "functional", "variance_gain",
                "runtime_gain", "total_gain", "macro_acceptance", "micro_acceptance")
KDE_COLUMNS = ("grid", "density")


def mse(estimates, reference):
    """Mean squared error of replicated estimates about a reference value."""
    est = check_samples(estimates, "estimates")
    return float(np.mean((est - float(reference)) ** 2))


def efficiency_gain(mse_base, mse_new, t_base, t_new):
    """``(mse_base / mse_new) * (t_base / t_new)``; ``inf`` when ``mse_new`` is 0."""
    for name, v in (("mse_base", mse_base), ("t_base", t_base), ("t_new", t_new)):
        if not v > 0:
            raise ValueError(f"{name} must be positive, got {v!r}")
    if mse_new < 0:
        raise ValueError(f"mse_new must be non-negative, got {mse_new!r}")
    if mse_new == 0:
        return math.inf
    return (mse_base / mse_new) * (t_base / t_new)


def kde(samples, bandwidth, grid, period=None):
    """Gaussian KDE of ``samples`` on ``grid``; periodic images when ``period`` is set."""
    return PeriodicKDE(bandwidth, period).fit(samples).density(grid)


# --- configuration --------------------------------------------------------

@dataclass(frozen=True)
class SamplerSpec:
    """One sampler of an experiment.

    Numeric fields hold numbers or expressions (see :mod:`micromacro.config`)
    that are resolved against the model at run time, so ``dt: epsilon``
    follows an epsilon scan.
    """

    name: str
    kind: str
    params: Dict[str, object] = field(default_factory=dict)


@dataclass(frozen=True)
class ExperimentConfig:
    model: str
    model_params: Dict[str, object]
    samplers: List[SamplerSpec]
    n_steps: int
    replications: int = 1
    functionals: tuple = FUNCTIONALS
    seed: int = 0
    baseline: Optional[str] = None
    burn_in: int = 0
    name: str = "experiment"
    kde: Dict[str, object] = field(default_factory=dict)
    scan: Dict[str, object] = field(default_factory=dict)

    def __post_init__(self):
        check_int(self.replications, "replications")
        check_int(self.n_steps, "steps")
        check_int(self.burn_in, "burn_in", minimum=0)
        if self.burn_in >= self.n_steps:
            raise ConfigError("burn_in must be smaller than steps")
        names = [s.name for s in self.samplers]
        if not names:
            raise ConfigError("at least one sampler is required")
        if len(set(names)) != len(names):
            raise ConfigError(f"sampler names must be unique, got {names}")
        if self.baseline is not None and self.baseline not in names:
            raise ConfigError(f"baseline {self.baseline!r} is not one of the samplers {names}")
        for f in self.functionals:
            if f not in FUNCTIONALS:
                raise ConfigError(f"unknown functional {f!r}; choose from {list(FUNCTIONALS)}")

    def config_hash(self):
        blob = json.dumps(_canonical(self), sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()[:12]


def _canonical(cfg):
    return {"model": cfg.model, "model_params": cfg.model_params,
            "samplers": [[s.name, s.kind, s.params] for s in cfg.samplers],
            "steps": cfg.n_steps, "replications": cfg.replications,
            "functionals": list(cfg.functionals), "seed": cfg.seed, "baseline": cfg.baseline,
            "burn_in": cfg.burn_in}


def _expression_names(model, extra=None):
    names = {"pi": math.pi, "beta": model.beta}
    if model.epsilon is not None:
        names["epsilon"] = model.epsilon
    for k in ("k_b", "k_a"):
        if k in model.info:
            names[k] = model.info[k]
    names.update(extra or {})
    return names


def _resolve(value, names):
    from .config import evaluate_expression
    if isinstance(value, str):
        return evaluate_expression(value, names)
    return value


_NUMERIC = {"dt", "macro_dt", "lambda", "K", "inner_dt", "beta", "nlambda_grid"}
_ALLOWED = {
    "mala": {"dt"},
    "mm-direct": {"kernel", "macro_dt", "free_energy", "reconstruction", "kernel_free_energy"},
    "mm-indirect": {"kernel", "macro_dt", "free_energy", "lambda", "K", "inner_dt", "adjusted",
                    "kernel_free_energy", "nlambda_grid"},
    "macro-only": {"kernel", "macro_dt", "free_energy", "kernel_free_energy"},
}
_REQUIRED = {"mala": set(), "mm-direct": {"macro_dt"}, "mm-indirect": {"macro_dt", "lambda"},
             "macro-only": {"macro_dt"}}


def resolve_sampler(spec, model):
    """Evaluate a sampler's expressions against ``model``; returns plain values."""
    if spec.kind not in SAMPLER_KINDS:
        raise ConfigError(f"sampler {spec.name!r}: unknown kind {spec.kind!r}; "
                          f"choose from {sorted(SAMPLER_KINDS)}")
    unknown = set(spec.params) - _ALLOWED[spec.kind]
    if unknown:
        raise ConfigError(f"sampler {spec.name!r}: unknown field(s) {sorted(unknown)} "
                          f"for kind {spec.kind!r}")
    missing = _REQUIRED[spec.kind] - set(spec.params)
    if missing:
        raise ConfigError(f"sampler {spec.name!r}: missing required field(s) {sorted(missing)}")
    names = _expression_names(model)
    out = {}
    # lambda first so inner_dt may refer to it
    for key in sorted(spec.params, key=lambda k: k != "lambda"):
        v = spec.params[key]
        if key in _NUMERIC:
            v = _resolve(v, names)
            if key == "lambda":
                names["lambda"] = v
        out[key] = v
    for key in ("free_energy", "kernel_free_energy"):
        if out.get(key) is not None and out[key] not in model.free_energies:
            raise ConfigError(f"sampler {spec.name!r}: model {model.name!r} has no free energy "
                              f"{out[key]!r}; choose from {sorted(model.free_energies)}")
    if out.get("reconstruction") is not None and out["reconstruction"] not in model.reconstructions:
        raise ConfigError(f"sampler {spec.name!r}: model {model.name!r} has no reconstruction "
                          f"{out['reconstruction']!r}; choose from {sorted(model.reconstructions)}")
    if "kernel" in out and out["kernel"] not in ("langevin", "brownian"):
        raise ConfigError(f"sampler {spec.name!r}: kernel must be langevin or brownian")
    return out


def build_model(cfg):
    try:
        return make_model(cfg.model, **cfg.model_params)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"model {cfg.model!r}: {exc}") from None


def build_estimator(spec, model, n_steps, tables=None):
    """Construct the estimator for ``spec``; ``tables`` caches N_lambda tables."""
    p = resolve_sampler(spec, model)
    cls = SAMPLER_KINDS[spec.kind]
    common = dict(model=model, n_steps=n_steps)
    try:
        if spec.kind == "mala":
            return cls(dt=p.get("dt"), **common)
        kernel = dict(kernel=p.get("kernel", "langevin"), macro_dt=p["macro_dt"],
                      free_energy=p.get("free_energy", model.exact_free_energy),
                      kernel_free_energy=p.get("kernel_free_energy"))
        if spec.kind == "mm-direct":
            return cls(reconstruction=p.get("reconstruction", "nu_exact"), **kernel, **common)
        if spec.kind == "macro-only":
            return cls(**kernel, **common)
        lam = float(p["lambda"])
        key = (model.name, lam, model.beta, p.get("nlambda_grid"))
        tables = {} if tables is None else tables
        if key not in tables:
            tables[key] = n_lambda_table(model.exact, lam, model.beta,
                                         grid=p.get("nlambda_grid"), model_id=model.name)
        return cls(lam=lam, K=int(p.get("K", 5)), inner_dt=p.get("inner_dt"),
                   adjusted=bool(p.get("adjusted", True)), n_lambda=tables[key],
                   **kernel, **common)
    except ConfigError:
        raise
    except (TypeError, ValueError, KeyError) as exc:
        raise ConfigError(f"sampler {spec.name!r}: {exc}") from None


# --- reports --------------------------------------------------------------

@dataclass
class MethodStats:
    name: str
    kind: str
    estimates: Dict[str, np.ndarray]
    mse: Dict[str, float]
    macro_acceptance: float
    micro_acceptance: float
    acceptance: float
    runtime: float
    replications: List[dict]


@dataclass
class GainReport:
    """Per-method statistics plus gains of every method over the baseline.

    ``gains[method]`` has ``runtime_gain``, ``variance_gain`` and
    ``total_gain``; the latter two map functional names to values and
    ``total_gain = variance_gain * runtime_gain`` exactly as stored.
    """

    config_hash: str
    references: Dict[str, float]
    methods: Dict[str, MethodStats]
    baseline: Optional[str]
    gains: Dict[str, dict]
    axis: Optional[str] = None
    value: Optional[float] = None
    records: Optional[list] = None


def reference_values(model, functionals=FUNCTIONALS):
    fe = model.exact
    mean = reference_moment(lambda z: z, fe, model.beta)
    out = {"mean_rc": mean}
    if "var_rc" in functionals:
        out["var_rc"] = reference_moment(lambda z: (z - mean) ** 2, fe, model.beta)
    return {k: out[k] for k in functionals}


def _nanmean(values):
    # acceptance fields are nan where they do not apply (e.g. micro for MALA)
    arr = np.asarray(values, dtype=np.float64)
    return float(np.nanmean(arr)) if np.any(np.isfinite(arr)) else math.nan


def _run_one(est, x0, burn_in):
    est.fit(x0)
    rec = est.record_
    return {"mean_rc": rec.estimate("mean_rc", burn_in), "var_rc": rec.estimate("var_rc", burn_in),
            "macro_acceptance": rec.macro_acceptance_rate,
            "micro_acceptance": rec.micro_acceptance_rate,
            "acceptance": rec.acceptance_rate, "runtime_seconds": rec.runtime}


def run_experiment(cfg, threads=1, value_index=0, model=None, axis=None, value=None,
                   tables=None, keep_records=False):
    """Run all replications of all samplers and reduce them to a GainReport."""
    threads = check_int(threads, "threads")
    model = build_model(cfg) if model is None else model
    tables = {} if tables is None else tables
    estimators = [build_estimator(s, model, cfg.n_steps, tables) for s in cfg.samplers]
    refs = reference_values(model, cfg.functionals)
    jobs = []
    for j, est in enumerate(estimators):
        for m in range(cfg.replications):
            seed = np.random.SeedSequence(cfg.seed, spawn_key=(value_index, j, m))
            jobs.append((j, m, clone(est).set_params(random_state=seed)))
    with ThreadPoolExecutor(max_workers=threads) as pool:
        results = list(pool.map(lambda job: _run_one(job[2], None, cfg.burn_in), jobs))
    records = [job[2].record_ for job in jobs] if keep_records else None
    methods = {}
    for j, spec in enumerate(cfg.samplers):
        rows = [r for (jj, _, _), r in zip(jobs, results) if jj == j]
        est = {f: np.array([r[f] for r in rows]) for f in cfg.functionals}
        methods[spec.name] = MethodStats(
            name=spec.name, kind=spec.kind, estimates=est,
            mse={f: mse(est[f], refs[f]) for f in cfg.functionals},
            macro_acceptance=_nanmean([r["macro_acceptance"] for r in rows]),
            micro_acceptance=_nanmean([r["micro_acceptance"] for r in rows]),
            acceptance=_nanmean([r["acceptance"] for r in rows]),
            runtime=float(np.mean([r["runtime_seconds"] for r in rows])),
            replications=rows)
    gains = {}
    if cfg.baseline is not None:
        base = methods[cfg.baseline]
        for name, st in methods.items():
            if name == cfg.baseline:
                continue
            rt = base.runtime / st.runtime if st.runtime > 0 else math.inf
            vg = {f: (base.mse[f] / st.mse[f] if st.mse[f] > 0 else math.inf)
                  for f in cfg.functionals}
            gains[name] = {"runtime_gain": rt, "variance_gain": vg,
                           "total_gain": {f: vg[f] * rt for f in cfg.functionals}}
    return GainReport(cfg.config_hash(), refs, methods, cfg.baseline, gains, axis, value, records)


SCAN_AXES = {"epsilon", "lambda"}


def scan(cfg, axis, values, threads=1):
    """One GainReport per axis value; seeds are offset by the value's position."""
    if axis not in SCAN_AXES:
        raise ConfigError(f"unknown scan axis {axis!r}; choose from {sorted(SCAN_AXES)}")
    values = list(values)
    if not values:
        raise ConfigError("scan needs at least one value")
    reports = []
    tables = {}
    for v_idx, raw in enumerate(values):
        sub, shown = scan_point(cfg, axis, raw)
        reports.append(run_experiment(sub, threads, value_index=v_idx, axis=axis, value=shown,
                                      tables=tables))
    return reports


def scan_point(cfg, axis, raw):
    """The configuration at one scan value, and the value as a number."""
    if axis == "epsilon":
        probe = build_model(cfg)
        if probe.epsilon is None:
            raise ConfigError(f"scan axis 'epsilon' does not apply to model {cfg.model!r}")
        value = float(_resolve(raw, _expression_names(probe)))
        return replace(cfg, model_params={**cfg.model_params, "epsilon": value}), value
    if axis == "lambda":
        if not any(s.kind == "mm-indirect" for s in cfg.samplers):
            raise ConfigError("scan axis 'lambda' needs an mm-indirect sampler")
        model = build_model(cfg)
        value = float(_resolve(raw, _expression_names(model)))
        samplers = [replace(s, params={**s.params, "lambda": value})
                    if s.kind == "mm-indirect" else s for s in cfg.samplers]
        return replace(cfg, samplers=samplers), value
    raise ConfigError(f"unknown scan axis {axis!r}; choose from {sorted(SCAN_AXES)}")


# --- output ---------------------------------------------------------------

def _fmt(v):
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    if isinstance(v, str):
        return v
    return repr(float(v))


def replications_csv(report):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPLICATION_COLUMNS)
    for name, st in report.methods.items():
        for m, r in enumerate(st.replications):
            w.writerow([report.config_hash, name, m] + [_fmt(r[c]) for c in REPLICATION_COLUMNS[3:]])
    return buf.getvalue()


def summary_text(report):
    lines = [f"config_hash={report.config_hash}"]
    if report.axis is not None:
        lines += [f"scan.axis={report.axis}", f"scan.value={_fmt(report.value)}"]
    lines.append(f"baseline={report.baseline or ''}")
    for f, v in report.references.items():
        lines.append(f"reference.{f}={_fmt(v)}")
    for name, st in report.methods.items():
        p = f"method.{name}"
        lines += [f"{p}.kind={st.kind}", f"{p}.replications={len(st.replications)}",
                  f"{p}.macro_acceptance={_fmt(st.macro_acceptance)}",
                  f"{p}.micro_acceptance={_fmt(st.micro_acceptance)}",
                  f"{p}.acceptance={_fmt(st.acceptance)}",
                  f"{p}.runtime_seconds={_fmt(st.runtime)}"]
        for f in st.mse:
            lines.append(f"{p}.estimate_mean.{f}={_fmt(np.mean(st.estimates[f]))}")
            lines.append(f"{p}.mse.{f}={_fmt(st.mse[f])}")
    for name, g in report.gains.items():
        p = f"gain.{name}"
        lines.append(f"{p}.runtime_gain={_fmt(g['runtime_gain'])}")
        for f in g["variance_gain"]:
            lines.append(f"{p}.variance_gain.{f}={_fmt(g['variance_gain'][f])}")
            lines.append(f"{p}.total_gain.{f}={_fmt(g['total_gain'][f])}")
    return "\n".join(lines) + "\n"


def gains_csv(reports):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(GAIN_COLUMNS)
    for rep in reports:
        for name, g in rep.gains.items():
            st = rep.methods[name]
            for f in g["variance_gain"]:
                w.writerow([rep.axis or "", _fmt(rep.value) if rep.value is not None else "",
                            name, rep.baseline, f, _fmt(g["variance_gain"][f]),
                            _fmt(g["runtime_gain"]), _fmt(g["total_gain"][f]),
                            _fmt(st.macro_acceptance), _fmt(st.micro_acceptance)])
    return buf.getvalue()


def kde_csv(grid, density):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(KDE_COLUMNS)
    for g, d in zip(grid, density):
        w.writerow([_fmt(g), _fmt(d)])
    return buf.getvalue()


def read_summary(text):
    """Parse ``key=value`` summary text back into a dict of strings."""
    out = {}
    for line in text.splitlines():
        if line and "=" in line:
            k, v = line.split("=", 1)
            out[k] = v
    return out
