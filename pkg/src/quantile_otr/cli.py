"""Command-line interface.

Usage::

    qotr simulate --case 1 --n 500 --seed 7 --output data.csv
    qotr fit --data data.csv --tau 0.5 --kernel linear --output fit.json
    qotr evaluate --regime fit.json --data test.csv --tau 0.5
    qotr benchmark --case 1 --tau 0.5 --reps 50 --n 500 --kernel linear --output table.csv
    qotr oracle --case 2 --tau 0.25
    qotr dtr-fit --data two_stage.csv --tau 0.5 --output dtr.json

Settings come from an optional flat TOML file (``--config``) overridden by
``--kebab-case`` flags.  Every run writes a JSON manifest next to its main
output.  Exit codes: 0 success, 2 configuration error, 3 data error,
4 estimator error.
"""

from __future__ import annotations

import argparse
import json
import platform
import sys
import warnings
from dataclasses import asdict
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .errors import ConfigError, DataError, EstimatorError, QotrError

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_ESTIMATOR = 0, 2, 3, 4


def _floats(v):
    if isinstance(v, (list, tuple)):
        return [float(x) for x in v]
    return [float(x) for x in str(v).split(",") if x.strip()]


def _ints(v):
    if isinstance(v, (list, tuple)):
        return [int(x) for x in v]
    return [int(x) for x in str(v).split(",") if x.strip()]


def _bool(v):
    if isinstance(v, bool):
        return v
    s = str(v).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


# key -> (parser, default, help)
OPTIONS = {
    "case": (str, None, "simulation case: 1, 2, 3 or dtr_toy"),
    "n": (int, 500, "sample size"),
    "ns": (_ints, None, "comma-separated sample sizes (benchmark MSE-vs-n table)"),
    "seed": (int, 0, "base random seed"),
    "tau": (float, 0.5, "quantile level in (0, 1)"),
    "output": (str, None, "main output file"),
    "manifest": (str, None, "manifest path (default: <output>.manifest.json)"),
    "with-oracle": (_bool, False, "also write the counterfactual side-table"),
    "data": (str, None, "input dataset CSV"),
    "outcome-kind": (str, "continuous", "continuous or discrete"),
    "regime": (str, None, "fitted regime JSON (output of fit)"),
    "method": (str, "ipw", "evaluate: ipw (check-loss estimator) or counterfactual"),
    "kernel": (str, "linear", "linear or gaussian"),
    "lambda-grid": (_floats, None, "comma-separated lambda values"),
    "sigma-grid": (_floats, None, "comma-separated sigma multipliers of 1/median distance"),
    "kkt-tol": (float, 1e-3, "SMO stopping tolerance"),
    "max-passes": (int, None, "SMO pass limit (default 10 n)"),
    "cv-folds": (int, 5, "cross-validation folds"),
    "l1": (float, None, "search interval lower end (default min Y)"),
    "r1": (float, None, "search interval upper end (default max Y)"),
    "kappa": (float, None, "interval-width stopping rule (default sd(Y)/(6 sqrt n))"),
    "epsilon": (float, None, "survival tolerance (default 0.5/sqrt n)"),
    "bandwidth": (float, None, "fixed smoothing bandwidth (default 0.2/log n)"),
    "retune-each-iteration": (_bool, True, "cross-validate at every search step"),
    "propensity": (str, "logistic", "logistic or intercept"),
    "survival": (str, "auto", "auto, gaussian, negbin or misspecified"),
    "clip-epsilon": (float, 0.01, "propensity clipping level"),
    "support": (_floats, None, "extra support points for discrete outcomes"),
    "reps": (int, 50, "benchmark replications"),
    "jobs": (int, 1, "worker processes"),
    "n-test": (int, 10_000, "test-set size for counterfactual evaluation"),
    "instance": (str, None, "oracle instance JSON"),
    "nodes": (int, 60, "Gauss-Hermite nodes per axis"),
    "replications-output": (str, None, "benchmark per-replication CSV"),
    "mse-output": (str, None, "benchmark MSE-vs-n CSV (default: <output stem>.mse.csv)"),
}

SEARCH_KEYS = ["tau", "kernel", "lambda-grid", "sigma-grid", "kkt-tol", "max-passes", "cv-folds", "l1", "r1",
               "kappa", "epsilon", "bandwidth", "retune-each-iteration", "seed"]
COMMANDS = {
    "simulate": ["case", "n", "seed", "tau", "output", "manifest", "with-oracle"],
    "fit": ["data", "outcome-kind", "output", "manifest", "propensity", "survival", "clip-epsilon", "support"]
    + SEARCH_KEYS,
    "evaluate": ["regime", "data", "outcome-kind", "method", "case", "tau", "n-test", "seed", "output", "manifest",
                 "clip-epsilon"],
    "benchmark": ["case", "tau", "n", "ns", "reps", "kernel", "seed", "jobs", "n-test", "propensity", "survival",
                  "output", "manifest", "replications-output", "mse-output"],
    "oracle": ["case", "tau", "instance", "nodes", "output", "manifest"],
    "dtr-fit": ["data", "output", "manifest"] + SEARCH_KEYS,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qotr", description="Quantile-optimal treatment regimes by "
                                     "sequential weighted classification.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for cmd, keys in COMMANDS.items():
        p = sub.add_parser(cmd)
        p.add_argument("--config", help="flat TOML file of settings")
        for key in keys:
            _, default, help_ = OPTIONS[key]
            p.add_argument(f"--{key}", dest=key.replace("-", "_"), default=None, metavar="VALUE",
                           help=f"{help_} (default: {default})")
    return parser


def load_config_file(path, command: str) -> dict:
    import tomli

    try:
        with open(path, "rb") as fh:
            doc = tomli.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    valid = COMMANDS[command]
    out = {}
    for k, v in doc.items():
        key = k.replace("_", "-")
        if isinstance(v, dict):
            raise ConfigError(f"{path}: config must be flat; section [{k}] not allowed")
        if key not in valid:
            raise ConfigError(f"{path}: unknown key {k!r} for {command}; valid keys: {', '.join(sorted(valid))}")
        out[key] = v
    return out


def resolve(args: argparse.Namespace) -> dict:
    cmd = args.command
    cfg = {k: OPTIONS[k][1] for k in COMMANDS[cmd]}
    raw = {}
    if args.config:
        raw.update(load_config_file(args.config, cmd))
    for k in COMMANDS[cmd]:
        v = getattr(args, k.replace("-", "_"))
        if v is not None:
            raw[k] = v
    for k, v in raw.items():
        try:
            cfg[k] = OPTIONS[k][0](v)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad value for {k}: {exc}") from None
    return cfg


# -- helpers --------------------------------------------------------------------

def _need(cfg, *keys):
    for k in keys:
        if cfg.get(k) is None:
            raise ConfigError(f"--{k} is required")


def _input(path) -> Path:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"input file not found: {path}")
    return p


def _output(path) -> Path:
    p = Path(path)
    if not p.parent.exists():
        raise ConfigError(f"output directory does not exist: {p.parent}")
    return p


def _emit(doc, output) -> None:
    text = json.dumps(doc, indent=2)
    if output:
        _output(output).write_text(text + "\n")
    else:
        print(text)


def solver_config(cfg):
    from .classifier import SolverConfig

    kw = {}
    if cfg.get("lambda-grid"):
        kw["lambda_grid"] = cfg["lambda-grid"]
    if cfg.get("sigma-grid"):
        kw["sigma_grid"] = cfg["sigma-grid"]
    try:
        return SolverConfig(kkt_tol=cfg["kkt-tol"], max_passes=cfg["max-passes"], cv_folds=cfg["cv-folds"], **kw)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def search_overrides(cfg) -> dict:
    from .evaluation import BandwidthSpec

    kw = {"kernel_kind": cfg["kernel"], "solver": solver_config(cfg),
          "retune_each_iteration": cfg["retune-each-iteration"], "seed": cfg["seed"]}
    if cfg["kernel"] not in ("linear", "gaussian"):
        raise ConfigError(f"kernel must be linear or gaussian, got {cfg['kernel']!r}")
    for key in ("l1", "r1", "kappa", "epsilon"):
        if cfg.get(key) is not None:
            kw[key] = cfg[key]
    if cfg.get("bandwidth") is not None:
        try:
            kw["bandwidth"] = BandwidthSpec(cfg["bandwidth"], "fixed")
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    return kw


def manifest(command: str, cfg: dict, outputs: dict) -> dict:
    from .classifier import SolverConfig

    return {
        "command": command,
        "config": cfg,
        "seed": cfg.get("seed"),
        "outputs": outputs,
        "package_version": __version__,
        "defaults": {"solver": {k: v for k, v in asdict(SolverConfig()).items()},
                     "bandwidth_rule": "0.2/log(n)", "kappa_rule": "sd(Y)/(6 sqrt(n))",
                     "epsilon_rule": "0.5/sqrt(n)"},
        "versions": {"python": platform.python_version(), "numpy": np.__version__, "scipy": scipy.__version__},
        "argv": sys.argv[1:],
    }


def _write_manifest(command, cfg, outputs):
    target = cfg.get("manifest")
    if target is None:
        main = cfg.get("output")
        target = f"{main}.manifest.json" if main else f"qotr-{command}.manifest.json"
    _output(target).write_text(json.dumps(manifest(command, cfg, outputs), indent=2) + "\n")


# -- commands -------------------------------------------------------------------

def cmd_simulate(cfg) -> dict:
    from .core import write_dataset_csv
    from .dtr import write_two_stage_csv
    from .simulation import CaseId, SimCaseSpec, generate, generate_dtr_toy

    _need(cfg, "case", "output")
    out = _output(cfg["output"])
    case = CaseId.parse(cfg["case"])
    outputs = {"data": str(out)}
    side = out.with_name(out.stem + ".oracle.csv")
    if case is CaseId.DTR_TOY:
        s = generate_dtr_toy(cfg["n"], cfg["seed"])
        write_two_stage_csv(s.data, out, s.p1, s.p2)
        if cfg["with-oracle"]:
            _write_columns(side, {"x1": s.latent.x1, "e2": s.latent.e2, "e": s.latent.e})
    else:
        s = generate(SimCaseSpec(case, cfg["n"], cfg["seed"], cfg["tau"]))
        write_dataset_csv(s.data, out)
        if cfg["with-oracle"]:
            _write_columns(side, {"y0": s.counterfactuals.y0, "y1": s.counterfactuals.y1})
    if cfg["with-oracle"]:
        outputs["oracle"] = str(side)
    return outputs


def _write_columns(path, cols: dict) -> None:
    from .core import _fmt

    names = list(cols)
    with open(path, "w") as fh:
        fh.write(",".join(names) + "\n")
        for row in zip(*cols.values()):
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def cmd_fit(cfg) -> dict:
    from .core import read_dataset_csv
    from .nuisance import fit_nuisances
    from .search import default_search_config, scl_fit

    _need(cfg, "data")
    data = read_dataset_csv(_input(cfg["data"]), cfg["outcome-kind"])

    def fit(d):
        return fit_nuisances(d, propensity=cfg["propensity"], survival=cfg["survival"],
                             clip_epsilon=cfg["clip-epsilon"])

    try:
        m = fit(data)
    except ValueError as exc:
        if isinstance(exc, DataError):
            raise
        raise ConfigError(str(exc)) from None
    scfg = default_search_config(data, cfg["tau"], **search_overrides(cfg))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        res = scl_fit(data, scfg, m, refit=fit, support=cfg.get("support"))
    doc = res.to_dict()
    doc["nuisances"] = m.to_dict()
    doc["outcome_kind"] = data.outcome_kind.value
    _emit(doc, cfg.get("output"))
    return {"result": cfg.get("output")}


def cmd_evaluate(cfg) -> dict:
    from .core import DecisionFunction, Regime, load_json, read_dataset_csv
    from .evaluation import ipw_checkloss_quantile
    from .nuisance import fit_propensity
    from .simulation import evaluate_regime

    _need(cfg, "regime")
    doc = load_json(_input(cfg["regime"]))
    try:
        regime = Regime(DecisionFunction.from_dict(doc["decision"] if "decision" in doc else doc))
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"{cfg['regime']}: not a decision function document ({exc})") from None
    if cfg["method"] == "counterfactual":
        _need(cfg, "case")
        rep = evaluate_regime(regime, cfg["case"], cfg["tau"], cfg["n-test"], cfg["seed"])
        out = {"method": "counterfactual", "case": cfg["case"], "tau": cfg["tau"], **rep.to_dict()}
    elif cfg["method"] == "ipw":
        _need(cfg, "data")
        data = read_dataset_csv(_input(cfg["data"]), cfg["outcome-kind"])
        prop = fit_propensity(data)
        q = ipw_checkloss_quantile(data, regime, cfg["tau"], prop, cfg["clip-epsilon"])
        out = {"method": "ipw", "tau": cfg["tau"], "quantile": q, "n": data.n,
               "treated_fraction": float(np.mean(regime(data.X)))}
    else:
        raise ConfigError(f"method must be ipw or counterfactual, got {cfg['method']!r}")
    _emit(out, cfg.get("output"))
    return {"result": cfg.get("output")}


def cmd_benchmark(cfg) -> dict:
    from .benchmark import (MSE_COLUMNS, REPLICATION_COLUMNS, TABLE_COLUMNS, BenchmarkSpec, mse_row,
                            replication_rows, run_benchmark, summary_row, write_table)
    from .oracle import numeric_qstar

    _need(cfg, "case", "output")
    out = _output(cfg["output"])
    ns = cfg["ns"] or [cfg["n"]]
    rows, mse, reps = [], [], []
    optimum = numeric_qstar(cfg["case"], cfg["tau"])
    for n in ns:
        spec = BenchmarkSpec(cfg["case"], cfg["tau"], n, cfg["reps"], cfg["kernel"], cfg["seed"], cfg["n-test"],
                             cfg["propensity"], cfg["survival"], cfg["jobs"])
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            results = run_benchmark(spec)
        rows.append(summary_row(spec, results))
        mse.append(mse_row(spec, results, optimum))
        reps.extend(replication_rows(spec, results))
    write_table(rows, out, TABLE_COLUMNS)
    mse_path = Path(cfg["mse-output"]) if cfg["mse-output"] else out.with_name(out.stem + ".mse.csv")
    write_table(mse, _output(mse_path), MSE_COLUMNS)
    outputs = {"table": str(out), "mse": str(mse_path)}
    if cfg["replications-output"]:
        write_table(reps, _output(cfg["replications-output"]), REPLICATION_COLUMNS)
        outputs["replications"] = cfg["replications-output"]
    for row in rows:
        print(",".join(str(row[c]) for c in TABLE_COLUMNS))
    return outputs


def cmd_oracle(cfg) -> dict:
    from .core import load_json
    from .oracle import OracleInstance, enumerate_optima, numeric_qstar

    if cfg.get("instance"):
        try:
            inst = OracleInstance.from_dict(load_json(_input(cfg["instance"])))
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"{cfg['instance']}: {exc}") from None
        o = enumerate_optima(inst)
        out = {"q_hard": o.q_hard, "q_smoothed": o.q_smoothed, "hard_set": o.hard_set.tolist(),
               "smoothed_set": o.smoothed_set.tolist(), "smoothed_subset_of_hard": o.smoothed_subset_of_hard,
               "best_expectation_smoothed": o.best_expectation_smoothed,
               "max_expectation_hard": o.max_expectation_hard}
    else:
        _need(cfg, "case")
        out = {"case": cfg["case"], "tau": cfg["tau"], "q_star": numeric_qstar(cfg["case"], cfg["tau"], cfg["nodes"])}
    _emit(out, cfg.get("output"))
    return {"result": cfg.get("output")}


def cmd_dtr_fit(cfg) -> dict:
    from .core import Dataset
    from .dtr import default_dtr_search_config, dtr_fit, read_two_stage_csv
    from .nuisance import fit_propensity

    _need(cfg, "data")
    data, p1, p2 = read_two_stage_csv(_input(cfg["data"]))
    if p1 is None:
        p1 = fit_propensity(Dataset(data.H1, data.A1, data.Y)).prob1(data.H1)
        p2 = fit_propensity(Dataset(data.H2, data.A2, data.Y)).prob1(data.H2)
    scfg = default_dtr_search_config(data, cfg["tau"], **search_overrides(cfg))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        res = dtr_fit(data, scfg, p1, p2)
    _emit(res.to_dict(), cfg.get("output"))
    return {"result": cfg.get("output")}


HANDLERS = {"simulate": cmd_simulate, "fit": cmd_fit, "evaluate": cmd_evaluate, "benchmark": cmd_benchmark,
            "oracle": cmd_oracle, "dtr-fit": cmd_dtr_fit}


def run(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve(args)
        outputs = HANDLERS[args.command](cfg)
        _write_manifest(args.command, cfg, outputs)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except EstimatorError as exc:
        print(f"estimator error: {exc}", file=sys.stderr)
        return EXIT_ESTIMATOR
    except QotrError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ESTIMATOR
    return EXIT_OK


def main() -> None:
    sys.exit(run())
