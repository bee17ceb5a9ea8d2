"""Command-line interface: ``aicp {mockgen,fit,scan,oracle,figures}``.

Every stochastic command needs ``--seed``. Settings may also come from a
config file of flat ``key = value`` lines whose keys are the long flag
names (``n-mocks`` or ``n_mocks``); flags given on the command line win over
the file, the file wins over built-in defaults.

Errors are reported on stderr as one JSON object and give a nonzero exit
status (2 for usage errors, 1 for everything else).
"""

from __future__ import annotations

import argparse
import configparser
import json
import os
import sys

import numpy as np

from . import __version__
from .bootstrap import BootstrapPlan, write_iterations
from .data import (
    DataFormatError,
    MockConfig,
    TABLE1_MODEL,
    generate_mock,
    load_dataset,
    load_truth,
    save_dataset,
    save_truth,
)
from .experiments import ALL_FIGURES, ExperimentConfig, ExperimentError, run_figure_suite
from .models import ModelSpec
from .oracle import validate_bootstrap, write_reports
from .provenance import config_hash, provenance_lines
from .selection import default_alpha_grid, scan_alpha, scan_parametric
from .solver import FitError, fit

STOCHASTIC = {"mockgen", "scan", "oracle", "figures"}
DEFAULT_ORACLE_GRID = "1e8:1e12:10"


class CliError(Exception):
    def __init__(self, message, kind="validation", status=1):
        super().__init__(message)
        self.kind = kind
        self.status = status


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError(message, kind="usage", status=2)


# --------------------------------------------------------------------------
# argument types
# --------------------------------------------------------------------------

def _positive_float(text):
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not v > 0 or not np.isfinite(v):
        raise argparse.ArgumentTypeError(f"must be positive: {text!r}")
    return v


def _nonneg_float(text):
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not v >= 0 or not np.isfinite(v):
        raise argparse.ArgumentTypeError(f"must be >= 0: {text!r}")
    return v


def _positive_int(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1: {text!r}")
    return v


def _seed(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be a 64-bit unsigned integer")
    return v


def _even_order(text):
    v = _positive_int(text)
    if v < 2 or v % 2:
        raise argparse.ArgumentTypeError(
            f"Gauss-Hermite order must be even and >= 2 (orders go in steps of two), got {v}"
        )
    return v


def _orders(text):
    """``start:stop:step`` (stop inclusive) or a comma list."""
    try:
        if ":" in text:
            parts = [int(p) for p in text.split(":")]
            if len(parts) == 2:
                parts.append(2)
            start, stop, step = parts
            if step <= 0:
                raise ValueError
            values = list(range(start, stop + 1, step))
        else:
            values = [int(p) for p in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad order list {text!r}") from None
    if not values:
        raise argparse.ArgumentTypeError(f"empty order list {text!r}")
    for v in values:
        if v < 2 or v % 2:
            raise argparse.ArgumentTypeError(
                f"Gauss-Hermite orders must be even and >= 2, got {v}"
            )
    if any(b - a != 2 for a, b in zip(values, values[1:])):
        raise argparse.ArgumentTypeError("orders must increase in steps of two")
    return tuple(values)


def _alpha_grid(text):
    """``lo:hi:n`` (log-spaced, inclusive) or a comma list."""
    try:
        if ":" in text:
            lo, hi, n = text.split(":")
            lo, hi, n = float(lo), float(hi), int(n)
            if not (0 < lo < hi) or n < 2:
                raise ValueError
            values = default_alpha_grid(lo, hi, n)
        else:
            values = np.array([float(p) for p in text.split(",")])
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad alpha grid {text!r}") from None
    if values.size == 0 or np.any(values < 0) or not np.all(np.isfinite(values)):
        raise argparse.ArgumentTypeError(f"alpha values must be finite and >= 0: {text!r}")
    return tuple(float(v) for v in values)


def _int_list(text):
    try:
        values = tuple(int(p) for p in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad integer list {text!r}") from None
    if any(v < 1 for v in values):
        raise argparse.ArgumentTypeError("every N_boot must be >= 1")
    return values


def _figure_list(text):
    values = tuple(p.strip() for p in text.split(",") if p.strip())
    bad = [v for v in values if v not in ALL_FIGURES]
    if bad or not values:
        raise argparse.ArgumentTypeError(f"unknown figures {bad}; choose from {ALL_FIGURES}")
    return values


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------

def _add_common(p, stochastic):
    p.add_argument("--config", help="file of 'key = value' lines using long flag names")
    p.add_argument("--jobs", type=_positive_int, default=1, help="concurrent fits")
    if stochastic:
        p.add_argument("--seed", type=_seed, default=None, help="master seed (required)")


def _add_mock_flags(p, snr_default):
    p.add_argument("--snr", type=_positive_float, default=snr_default,
                   help="signal-to-noise ratio at the profile peak")
    p.add_argument("--n-data", type=_positive_int, default=71)
    p.add_argument("--x-range-sigmas", type=_positive_float, default=8.0)


def build_parser():
    parser = _Parser(prog="aicp", description="Generalized AIC model selection.")
    parser.add_argument("--version", action="version", version=f"aicp {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("mockgen", help="write a mock dataset and its noise-free truth")
    _add_common(p, True)
    _add_mock_flags(p, 10.0)
    p.add_argument("--out-dir", default=".", help="directory for data.csv and truth.csv")
    p.add_argument("--prefix", default="", help="file name prefix")

    p = sub.add_parser("fit", help="fit one model to a dataset")
    _add_common(p, False)
    p.add_argument("--data", required=False, help="dataset CSV (x,y,eps)")
    p.add_argument("--model", choices=("gh", "nonparametric"), default="gh")
    p.add_argument("--order", type=_even_order, default=10)
    p.add_argument("--alpha", type=_nonneg_float, default=0.0)
    p.add_argument("--out", help="write the JSON result here instead of stdout")

    p = sub.add_parser("scan", help="AIC_p scan over order or penalty strength")
    _add_common(p, True)
    _add_mock_flags(p, 100.0)
    p.add_argument("--data", help="dataset CSV; a mock is generated from --seed if absent")
    p.add_argument("--truth", help="truth CSV (x,y0) for the rms column")
    p.add_argument("--axis", choices=("order", "alpha"), default="order")
    p.add_argument("--orders", type=_orders, default=tuple(range(4, 21, 2)),
                   help="start:stop:step (inclusive) or comma list")
    p.add_argument("--alpha-grid", type=_alpha_grid, default=None,
                   help="lo:hi:n log-spaced or comma list")
    p.add_argument("--nboot", type=_positive_int, default=500)
    p.add_argument("--dump-iterations", action="store_true",
                   help="write per-iteration m_eff for every scanned model")
    p.add_argument("--out-dir", default=".")

    p = sub.add_parser("oracle", help="bootstrap m_eff against trace(H) for linear models")
    _add_common(p, True)
    _add_mock_flags(p, 100.0)
    p.add_argument("--data", help="dataset CSV; a mock is generated from --seed if absent")
    p.add_argument("--model", choices=("nonparametric", "polynomial", "gh"),
                   default="nonparametric")
    p.add_argument("--degree", type=_positive_int, default=4,
                   help="polynomial degree for --model polynomial")
    p.add_argument("--alpha", type=_alpha_grid, default=None,
                   help="alpha values (comma list or lo:hi:n); default 1e8:1e12:10")
    p.add_argument("--nboot", type=_positive_int, default=500)
    p.add_argument("--out-dir", default=".")

    p = sub.add_parser("figures", help="write the figure CSV bundles")
    _add_common(p, True)
    p.add_argument("--out-dir", default="figures")
    p.add_argument("--nboot", type=_positive_int, default=500)
    p.add_argument("--nboot-values", type=_int_list, default=(1, 5, 10, 50, 500, 2500))
    p.add_argument("--n-mocks", type=_positive_int, default=5)
    p.add_argument("--n-mocks-average", type=_positive_int, default=20)
    p.add_argument("--orders", type=_orders, default=tuple(range(4, 21, 2)))
    p.add_argument("--alpha-grid", type=_alpha_grid, default=None)
    p.add_argument("--snr-values", default="100,10",
                   help="two SNR values: the main one and the noisy one")
    p.add_argument("--figures", type=_figure_list, default=ALL_FIGURES)
    return parser


# --------------------------------------------------------------------------
# config file
# --------------------------------------------------------------------------

def _read_config(path):
    cp = configparser.ConfigParser(interpolation=None)
    try:
        with open(path, encoding="utf-8") as fh:
            cp.read_string("[aicp]\n" + fh.read(), source=path)
    except OSError as exc:
        raise CliError(f"cannot read config file {path}: {exc.strerror}") from None
    except configparser.Error as exc:
        raise CliError(f"malformed config file {path}: {exc}") from None
    return {k.replace("-", "_"): v for k, v in cp["aicp"].items()}


def _subparser(parser, name):
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            return action.choices[name]
    raise KeyError(name)


def parse_args(argv=None):
    """Parse flags, applying config-file values as defaults."""
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    args = parser.parse_args(argv)
    if getattr(args, "config", None):
        values = _read_config(args.config)
        sp = _subparser(parser, args.command)
        actions = {a.dest: a for a in sp._actions if a.dest not in ("help", "config")}
        defaults = {}
        for key, raw in values.items():
            if key not in actions:
                raise CliError(f"unknown config key {key!r} for {args.command}", kind="usage", status=2)
            action = actions[key]
            if isinstance(action, argparse._StoreTrueAction):
                defaults[key] = raw.strip().lower() in ("1", "true", "yes", "on")
                continue
            try:
                value = action.type(raw) if action.type else raw
            except (argparse.ArgumentTypeError, ValueError) as exc:
                raise CliError(f"config key {key!r}: {exc}", kind="usage", status=2) from None
            if action.choices is not None and value not in action.choices:
                raise CliError(f"config key {key!r}: invalid choice {value!r}", kind="usage", status=2)
            defaults[key] = value
        sp.set_defaults(**defaults)
        args = parser.parse_args(argv)
    if args.command in STOCHASTIC and args.seed is None:
        raise CliError(f"{args.command} requires --seed (no implicit random seed)", kind="usage", status=2)
    return args


def effective_config(args):
    cfg = {k: v for k, v in vars(args).items() if k not in ("config", "jobs", "out_dir", "out")}
    return json.loads(json.dumps(cfg, default=list))


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------

def _mock_config(args):
    return MockConfig(
        generating=TABLE1_MODEL,
        n_data=args.n_data,
        x_range_sigmas=args.x_range_sigmas,
        snr_peak=args.snr,
        seed=args.seed,
    )


def _load_or_mock(args):
    if args.data:
        data = load_dataset(args.data)
        truth = None
        if getattr(args, "truth", None):
            tx, ty = load_truth(args.truth)
            if tx.shape != data.x.shape or not np.allclose(tx, data.x, rtol=1e-12, atol=0):
                raise CliError("truth abscissae do not match the dataset")
            truth = ty
        return data, truth, "file"
    data, truth = generate_mock(_mock_config(args))
    return data, truth, "mock"


def _prov(args, label=None):
    cfg = effective_config(args)
    return provenance_lines(cfg, getattr(args, "seed", None), label)


def _write_json(path, payload):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def cmd_mockgen(args):
    data, truth = generate_mock(_mock_config(args))
    os.makedirs(args.out_dir, exist_ok=True)
    dpath = os.path.join(args.out_dir, f"{args.prefix}data.csv")
    tpath = os.path.join(args.out_dir, f"{args.prefix}truth.csv")
    save_dataset(data, dpath, comments=_prov(args, "mock dataset"))
    save_truth(data.x, truth, tpath, comments=_prov(args, "noise-free truth"))
    return {"data": dpath, "truth": tpath, "n_data": data.n_data}, True


def cmd_fit(args):
    if not args.data:
        raise CliError("fit needs --data", kind="usage", status=2)
    data = load_dataset(args.data)
    if args.model == "gh":
        if args.alpha:
            raise CliError("the Gauss-Hermite family takes no --alpha")
        spec = ModelSpec.gauss_hermite(args.order)
    else:
        spec = ModelSpec.nonparametric(args.alpha)
    try:
        res = fit(spec, data)
    except (FitError, ValueError) as exc:
        raise CliError(str(exc), kind="fit") from None
    payload = res.to_dict()
    payload["config"] = effective_config(args)
    payload["config_hash"] = config_hash(payload["config"])
    payload["master_seed"] = None
    if args.out:
        _write_json(args.out, payload)
        return {"out": args.out, "converged": res.converged, "chi2": res.chi2}, res.converged
    return payload, res.converged


def cmd_scan(args):
    data, truth, source = _load_or_mock(args)
    plan = BootstrapPlan(args.nboot, args.seed)
    if args.axis == "order":
        table = scan_parametric(data, args.orders, plan, truth=truth, jobs=args.jobs)
    else:
        grid = args.alpha_grid
        if grid is not None and min(grid) <= 0:
            raise CliError("alpha grid for a scan must be positive")
        table = scan_alpha(data, grid, plan, truth=truth, jobs=args.jobs)
    cfg = effective_config(args)
    table.metadata.update({
        "config": cfg,
        "config_hash": config_hash(cfg),
        "data_source": source,
    })
    os.makedirs(args.out_dir, exist_ok=True)
    csv_path = os.path.join(args.out_dir, f"scan_{args.axis}.csv")
    json_path = os.path.join(args.out_dir, f"scan_{args.axis}.json")
    table.write_csv(csv_path, comments=_prov(args, f"AIC_p scan over {args.axis}"))
    table.write_json(json_path)
    if args.dump_iterations:
        for k, e in enumerate(table.entries):
            write_iterations(
                e.bootstrap,
                os.path.join(args.out_dir, f"iterations_{args.axis}_{k}.csv"),
                comments=_prov(args, f"per-iteration m_eff for {e.spec.label()}"),
            )
    best = table.best
    ok = best is not None and all(e.valid for e in table.entries)
    return {
        "csv": csv_path,
        "json": json_path,
        "selected_index": table.selected,
        "selected_axis_value": None if best is None else best.axis_value,
        "all_valid": ok,
    }, ok


def _polynomial_design(x, degree):
    t = (x - x.mean()) / (0.5 * (x.max() - x.min()))
    return np.polynomial.legendre.legvander(t, degree)


def cmd_oracle(args):
    if args.model == "gh":
        raise CliError("oracle is linear-family only")
    data, _, source = _load_or_mock(args)
    grid = args.alpha if args.alpha is not None else _alpha_grid(DEFAULT_ORACLE_GRID)
    design = None
    if args.model == "polynomial":
        design = _polynomial_design(data.x, args.degree)
        if any(a > 0 for a in grid) and design.shape[1] < 3:
            raise CliError("a penalized polynomial model needs degree >= 2")
    else:
        if not data.is_uniform():
            raise CliError("the non-parametric family requires a uniform x grid")
    plan = BootstrapPlan(args.nboot, args.seed)
    try:
        reports = validate_bootstrap(data, plan, grid, design=design)
    except ValueError as exc:
        raise CliError(str(exc)) from None
    os.makedirs(args.out_dir, exist_ok=True)
    path = os.path.join(args.out_dir, "oracle.csv")
    write_reports(reports, path, comments=_prov(args, f"oracle check; model={args.model}"))
    checks = [r.identity_checks for r in reports if r.identity_checks]
    ok = all(all(v for k, v in c.items() if k.endswith("_ok")) for c in checks)
    ok &= all(r.n_boot == args.nboot for r in reports)
    return {
        "csv": path,
        "z_scores": [r.z_score for r in reports],
        "max_abs_z": max((abs(r.z_score) for r in reports if r.z_score is not None), default=None),
        "identity_checks": checks,
        "data_source": source,
    }, ok


def cmd_figures(args):
    try:
        snr_values = tuple(float(s) for s in str(args.snr_values).split(","))
    except ValueError:
        raise CliError(f"bad --snr-values {args.snr_values!r}") from None
    kwargs = dict(
        n_mocks=args.n_mocks,
        n_mocks_average=args.n_mocks_average,
        orders=args.orders,
        n_boot=args.nboot,
        n_boot_values=args.nboot_values,
        snr_values=snr_values,
        master_seed=args.seed,
        figures=args.figures,
        output_dir=args.out_dir,
        jobs=args.jobs,
    )
    if args.alpha_grid is not None:
        kwargs["alpha_grid"] = args.alpha_grid
    try:
        cfg = ExperimentConfig(**kwargs)
    except ValueError as exc:
        raise CliError(str(exc)) from None
    try:
        manifest = run_figure_suite(cfg)
    except ExperimentError as exc:
        raise CliError(str(exc), kind="experiment") from None
    return {
        "out_dir": args.out_dir,
        "config_hash": manifest["config_hash"],
        "figures": {k: v["status"] for k, v in manifest["figures"].items()},
    }, True


COMMANDS = {
    "mockgen": cmd_mockgen,
    "fit": cmd_fit,
    "scan": cmd_scan,
    "oracle": cmd_oracle,
    "figures": cmd_figures,
}


def _fail(exc_message, kind, status, stream):
    json.dump({"error": exc_message, "kind": kind}, stream)
    stream.write("\n")
    return status


def main(argv=None, stdout=None, stderr=None):
    """Entry point; returns the exit status."""
    stdout = sys.stdout if stdout is None else stdout
    stderr = sys.stderr if stderr is None else stderr
    try:
        args = parse_args(argv)
        result, ok = COMMANDS[args.command](args)
    except CliError as exc:
        return _fail(str(exc), exc.kind, exc.status, stderr)
    except DataFormatError as exc:
        return _fail(str(exc), "data", 1, stderr)
    except (ValueError, FitError, OSError) as exc:
        return _fail(str(exc), type(exc).__name__, 1, stderr)
    json.dump(result, stdout, indent=2, sort_keys=True, default=float)
    stdout.write("\n")
    if not ok:
        return _fail(f"{args.command}: a validity check failed", "validity", 1, stderr)
    return 0


def run():
    sys.exit(main())


if __name__ == "__main__":
    run()
