"""YAML experiment configurations and the shipped presets.

A configuration is one YAML mapping::

    name: table-threeatom-1e-4
    model: {id: threeatom, epsilon: 1.0e-4}
    seed: 1234
    replications: 20
    steps: 100000
    functionals: [mean_rc, var_rc]
    baseline: mala
    samplers:
      - {name: mala, kind: mala, dt: epsilon}
      - {name: direct, kind: mm-direct, kernel: langevin, macro_dt: 0.01,
         free_energy: A_exact, reconstruction: nu_exact}

Numeric sampler fields accept arithmetic expressions over ``epsilon``,
``beta``, ``k_b``, ``k_a``, ``pi`` and (for ``inner_dt``) ``lambda``, so a
scan over epsilon or lambda carries dependent step sizes along. Every
error raised while loading names the file and line of the offending entry.
"""
import ast
import math
import operator
import os
import re
from importlib import resources

import yaml

from .core import ConfigError
from .harness import (FUNCTIONALS, SCAN_AXES, ExperimentConfig, SamplerSpec, _ALLOWED,
                      _REQUIRED, build_model, resolve_sampler)

_BINOPS = {ast.Add: operator.add, ast.Sub: operator.sub, ast.Mult: operator.mul,
           ast.Div: operator.truediv, ast.Pow: operator.pow}
_UNARY = {ast.UAdd: operator.pos, ast.USub: operator.neg}
_FUNCS = {"sqrt": math.sqrt, "exp": math.exp, "log": math.log, "min": min, "max": max}


class LocatedConfigError(ConfigError):
    """A configuration error anchored to ``path:line``."""

    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = f"{path or '<config>'}:{line}: " if line is not None else \
            (f"{path}: " if path else "")
        super().__init__(where + message)


def evaluate_expression(text, names):
    """Evaluate an arithmetic expression over ``names`` without ``eval``."""
    # ``lambda`` is a Python keyword; parse it under another name
    source = re.sub(r"\blambda\b", "lambda_", str(text).strip())
    names = {("lambda_" if k == "lambda" else k): v for k, v in names.items()}
    try:
        tree = ast.parse(source, mode="eval")
    except SyntaxError:
        raise ConfigError(f"cannot parse expression {text!r}") from None

    def ev(node):
        if isinstance(node, ast.Expression):
            return ev(node.body)
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)) \
                and not isinstance(node.value, bool):
            return node.value
        if isinstance(node, ast.Name):
            if node.id not in names:
                shown = sorted("lambda" if k == "lambda_" else k for k in names)
                raise ConfigError(f"unknown name {node.id.rstrip('_')!r} in expression {text!r}; "
                                  f"available: {shown}")
            return names[node.id]
        if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
            return _BINOPS[type(node.op)](ev(node.left), ev(node.right))
        if isinstance(node, ast.UnaryOp) and type(node.op) in _UNARY:
            return _UNARY[type(node.op)](ev(node.operand))
        if isinstance(node, ast.Call) and isinstance(node.func, ast.Name) \
                and node.func.id in _FUNCS and node.args and not node.keywords:
            return _FUNCS[node.func.id](*(ev(a) for a in node.args))
        raise ConfigError(f"unsupported syntax in expression {text!r}")

    try:
        return ev(tree)
    except (ZeroDivisionError, OverflowError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"cannot evaluate {text!r}: {exc}") from None


# --- YAML with line marks -------------------------------------------------

def _scalar(node):
    return yaml.SafeLoader("").construct_object(node, deep=True)


def _construct(node, marks, path=()):
    """Plain Python data from a composed YAML node, recording 1-based lines."""
    marks[path] = node.start_mark.line + 1
    if isinstance(node, yaml.MappingNode):
        out = {}
        for k, v in node.value:
            key = _scalar(k)
            out[key] = _construct(v, marks, path + (key,))
            # anchor a field on its key, not on a value that may start below it
            marks[path + (key,)] = k.start_mark.line + 1
        return out
    if isinstance(node, yaml.SequenceNode):
        return [_construct(v, marks, path + (i,)) for i, v in enumerate(node.value)]
    return _scalar(node)


def _compose(text, source):
    try:
        node = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise LocatedConfigError(f"invalid YAML: {getattr(exc, 'problem', exc)}", source,
                                 mark.line + 1 if mark else None) from None
    if node is None:
        raise LocatedConfigError("configuration is empty", source, 1)
    marks = {}
    data = _construct(node, marks)
    if not isinstance(data, dict):
        raise LocatedConfigError("configuration must be a mapping", source, 1)
    return data, marks


_TOP = {"name", "model", "seed", "replications", "steps", "burn_in", "functionals", "baseline",
        "samplers", "kde", "scan"}


def parse_config(text, source=None, seed=None):
    """Build an :class:`ExperimentConfig` from YAML text and cross-check it."""
    data, marks = _compose(text, source)

    def fail(msg, *path):
        line = None
        for cut in range(len(path), -1, -1):
            if path[:cut] in marks:
                line = marks[path[:cut]]
                break
        raise LocatedConfigError(msg, source, line)

    for key in data:
        if key not in _TOP:
            fail(f"unknown top-level field {key!r}", key)
    for key in ("model", "steps", "samplers"):
        if key not in data:
            fail(f"missing required field {key!r}")

    model = data["model"]
    if isinstance(model, str):
        model = {"id": model}
    if not isinstance(model, dict) or "id" not in model:
        fail("model must be a mapping with an 'id' field", "model")
    model_params = {}
    for k, v in model.items():
        if k == "id":
            continue
        try:
            model_params[k] = float(evaluate_expression(v, {"pi": math.pi})) \
                if isinstance(v, str) else v
        except ConfigError as exc:
            fail(f"model.{k}: {exc}", "model", k)

    samplers = data["samplers"]
    if not isinstance(samplers, list) or not samplers:
        fail("samplers must be a non-empty list", "samplers")
    specs = []
    for i, s in enumerate(samplers):
        if not isinstance(s, dict):
            fail("each sampler must be a mapping", "samplers", i)
        kind = s.get("kind")
        if kind not in _ALLOWED:
            fail(f"sampler {i}: kind must be one of {sorted(_ALLOWED)}, got {kind!r}",
                 "samplers", i, "kind")
        params = {k: v for k, v in s.items() if k not in ("name", "kind")}
        for k in params:
            if k not in _ALLOWED[kind]:
                fail(f"sampler {s.get('name', i)!r}: unknown field {k!r} for kind {kind!r}",
                     "samplers", i, k)
        for k in sorted(_REQUIRED[kind] - set(params)):
            fail(f"sampler {s.get('name', i)!r} ({kind}): missing required field {k!r}",
                 "samplers", i)
        specs.append(SamplerSpec(str(s.get("name", kind)), kind, params))

    functionals = data.get("functionals", list(FUNCTIONALS))
    if isinstance(functionals, str):
        functionals = [functionals]
    scan = data.get("scan") or {}
    if scan:
        if scan.get("axis") not in SCAN_AXES:
            fail(f"scan.axis must be one of {sorted(SCAN_AXES)}", "scan", "axis")
        if not scan.get("values"):
            fail("scan.values must be a non-empty list", "scan", "values")
    counts = {}
    for key, default in (("steps", None), ("replications", 1), ("burn_in", 0)):
        try:
            counts[key] = _integer(data.get(key, default))
        except ConfigError as exc:
            fail(f"{key}: {exc}", key)
    try:
        cfg = ExperimentConfig(
            model=str(model["id"]), model_params=model_params, samplers=specs,
            n_steps=counts["steps"], replications=counts["replications"],
            functionals=tuple(functionals), seed=int(seed if seed is not None else data.get("seed", 0)),
            baseline=data.get("baseline"), burn_in=counts["burn_in"],
            name=str(data.get("name", "experiment")), kde=data.get("kde") or {}, scan=scan)
    except (ConfigError, ValueError, TypeError) as exc:
        field_of = {"steps": "steps", "replications": "replications", "burn_in": "burn_in",
                    "baseline": "baseline", "functional": "functionals", "sampler names": "samplers"}
        where = next((v for k, v in field_of.items() if k in str(exc)), None)
        fail(str(exc), *((where,) if where else ()))

    try:
        probe = build_model(cfg)
    except ConfigError as exc:
        fail(str(exc), "model")
    for i, spec in enumerate(cfg.samplers):
        try:
            resolve_sampler(spec, probe)
        except ConfigError as exc:
            bad = next((k for k in spec.params if repr(k) in str(exc) or str(k) in str(exc).split()),
                       None)
            fail(str(exc), "samplers", i, *((bad,) if bad else ()))
    return cfg


def _integer(v):
    if isinstance(v, str):
        v = evaluate_expression(v, {})
    if isinstance(v, float) and v.is_integer():
        v = int(v)
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(f"expected an integer, got {v!r}")
    return v


def load_config(path, seed=None):
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise LocatedConfigError(f"cannot read configuration: {exc.strerror}", str(path)) from None
    return parse_config(text, str(path), seed)


# --- presets --------------------------------------------------------------

def preset_names():
    root = resources.files("micromacro") / "presets"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".yaml"))


def preset_text(name):
    root = resources.files("micromacro") / "presets"
    res = root / f"{name}.yaml"
    if not res.is_file():
        raise ConfigError(f"unknown preset {name!r}; available: {', '.join(preset_names())}")
    return res.read_text(encoding="utf-8")


def load_preset(name, seed=None):
    return parse_config(preset_text(name), f"preset:{name}", seed)


def preset_path(name):
    return os.fspath(resources.files("micromacro") / "presets" / f"{name}.yaml")
