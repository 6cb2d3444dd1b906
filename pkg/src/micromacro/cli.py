"""Command-line front end: ``micromacro {run,scan,kde,validate}``.

Exit codes: 0 success, 2 configuration error, 3 numerical error.
"""
import argparse
import logging
import os
import sys

import numpy as np

from .core import ConfigError, NumericalError, check_gradients
from .config import load_config, load_preset, preset_names
from .estimators import PeriodicKDE
from .harness import (SCAN_AXES, build_estimator, build_model, gains_csv,
                      kde_csv, replications_csv, resolve_sampler, run_experiment, scan,
                      scan_point, summary_text)
from .oracle import free_energy_density

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3
GRADIENT_TOL = 1e-5
log = logging.getLogger("micromacro")


def _parser():
    common = argparse.ArgumentParser(add_help=False)
    src = common.add_mutually_exclusive_group(required=True)
    src.add_argument("--config", metavar="PATH", help="YAML experiment configuration")
    src.add_argument("--preset", metavar="NAME", help="shipped configuration (see --list-presets)")
    common.add_argument("--seed", type=int, metavar="U64", help="override the configured seed")
    common.add_argument("-v", "--verbose", action="count", default=0)

    out = argparse.ArgumentParser(add_help=False)
    out.add_argument("--out", metavar="DIR", required=True, help="output directory")
    out.add_argument("--threads", type=int, default=1, metavar="N",
                     help="parallel replications (results do not depend on it)")

    p = argparse.ArgumentParser(prog="micromacro", description=__doc__.splitlines()[0])
    p.add_argument("--list-presets", action="store_true", help="print preset names and exit")
    sub = p.add_subparsers(dest="command")
    sub.add_parser("run", parents=[common, out], help="run one experiment")
    s = sub.add_parser("scan", parents=[common, out], help="repeat an experiment along an axis")
    s.add_argument("--axis", choices=sorted(SCAN_AXES))
    s.add_argument("--values", help="comma-separated values or expressions")
    k = sub.add_parser("kde", parents=[common, out], help="density estimates of one replication")
    k.add_argument("--bandwidth", type=float)
    sub.add_parser("validate", parents=[common], help="check a configuration without sampling")
    return p


def _load(args):
    if args.preset:
        return load_preset(args.preset, args.seed)
    return load_config(args.config, args.seed)


def _write(out_dir, name, text):
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, name)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    log.info("wrote %s", path)
    return path


def cmd_run(args):
    cfg = _load(args)
    report = run_experiment(cfg, threads=args.threads)
    _write(args.out, "replications.csv", replications_csv(report))
    _write(args.out, "summary.txt", summary_text(report))
    return EXIT_OK


def _scan_values(args, cfg):
    axis = args.axis or cfg.scan.get("axis")
    if args.values is not None:
        values = [v.strip() for v in args.values.split(",") if v.strip()]
    else:
        values = cfg.scan.get("values")
    if axis is None or not values:
        raise ConfigError("scan needs --axis and --values (or a scan section in the config)")
    return axis, values


def cmd_scan(args):
    cfg = _load(args)
    axis, values = _scan_values(args, cfg)
    reports = scan(cfg, axis, values, threads=args.threads)
    for i, rep in enumerate(reports):
        _write(args.out, f"replications-{axis}-{i}.csv", replications_csv(rep))
        _write(args.out, f"summary-{axis}-{i}.txt", summary_text(rep))
    _write(args.out, "gains.csv", gains_csv(reports))
    return EXIT_OK


def cmd_kde(args):
    """Replication 0 of every sampler, estimated on a grid over the rc domain."""
    cfg = _load(args)
    model = build_model(cfg)
    settings = cfg.kde
    h = args.bandwidth or float(settings.get("bandwidth", 0.03))
    n_grid = int(settings.get("grid", 721))
    dom = model.rc_domain
    grid = np.linspace(dom.low, dom.high, n_grid)
    period = dom.period or None
    ref = free_energy_density(model.exact, model.beta)(grid)
    _write(args.out, "kde-reference.csv", kde_csv(grid, ref))
    tables = {}
    for j, spec in enumerate(cfg.samplers):
        est = build_estimator(spec, model, cfg.n_steps, tables)
        est.set_params(random_state=np.random.SeedSequence(cfg.seed, spawn_key=(0, j, 0)))
        est.fit()
        dens = PeriodicKDE(h, period).fit(est.rc_samples_[cfg.burn_in:]).density(grid)
        _write(args.out, f"kde-{spec.name}.csv", kde_csv(grid, dens))
    return EXIT_OK


def validate_config(cfg, gradient_states=10, random_state=0):
    """Dry-run checks; returns a list of warnings, raises ConfigError on failure."""
    warnings = []
    points = [(None, cfg)]
    if cfg.scan:
        points = [(v, scan_point(cfg, cfg.scan["axis"], v)[0]) for v in cfg.scan["values"]]
    checked = set()
    for raw, sub in points:
        model = build_model(sub)
        key = (model.name, model.epsilon, model.beta)
        if key not in checked:
            checked.add(key)
            errs = check_gradients(model, n_states=gradient_states, random_state=random_state)
            for what, err in errs.items():
                if not err < GRADIENT_TOL:
                    raise ConfigError(f"gradient check failed for {model.name!r}: {what} gradient "
                                      f"relative error {err:.3g} exceeds {GRADIENT_TOL:g}")
        for spec in sub.samplers:
            p = resolve_sampler(spec, model)
            if spec.kind != "mm-indirect":
                continue
            lam = float(p["lambda"])
            if not lam > 0:
                raise ConfigError(f"sampler {spec.name!r}: lambda must be positive")
            width = 1.0 / np.sqrt(lam * model.beta)
            grid = p.get("nlambda_grid")
            if grid is not None and model.rc_domain.width / float(grid) > width / 4.0:
                raise ConfigError(f"N_lambda grid check failed for sampler {spec.name!r}: spacing "
                                  f"{model.rc_domain.width / float(grid):.3g} exceeds a quarter "
                                  f"of the kernel width {width:.3g}")
            inner = p.get("inner_dt")
            if inner is not None and float(inner) > 10.0 / lam:
                warnings.append(f"sampler {spec.name!r}: inner_dt={float(inner):.3g} exceeds "
                                f"10/lambda={10.0 / lam:.3g}; the biased chain may be unstable")
    return warnings


def cmd_validate(args):
    cfg = _load(args)
    for w in validate_config(cfg):
        print(f"warning: {w}", file=sys.stderr)
    print(f"ok: {cfg.name} ({cfg.config_hash()})")
    return EXIT_OK


COMMANDS = {"run": cmd_run, "scan": cmd_scan, "kde": cmd_kde, "validate": cmd_validate}


def main(argv=None):
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    if args.list_presets:
        print("\n".join(preset_names()))
        return EXIT_OK
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_CONFIG
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s: %(message)s")
    if getattr(args, "threads", 1) < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalError, FloatingPointError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
