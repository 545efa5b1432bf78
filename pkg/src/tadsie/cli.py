"""Command-line front end.

Subcommands: ``generate``, ``run-trial``, ``evaluate``, ``sweep``, ``report``
and ``repro``. Settings come from an optional JSON config file
(``--config``) and from flags; flags win. Output goes to ``--out`` or stdout;
diagnostics (including a defaulted seed) go to stderr.

Config file layout::

    {
      "schema_version": 1,
      "design": "tad_sie_se",
      "design_config": {"n_pilot": 30, "si": {...}, "testing": {...}},
      "cohort": {"standardized_effect": 0.25, "visits": 8, ...},
      "data": "trial.csv",
      "seed": 7, "n_trials": 100, "workers": 1,
      "hypothesis": "H1",
      "scale_factors": [0.1, 0.6], "boundaries": [0.0, 0.11]
    }
"""
from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import MISSING, fields
from pathlib import Path

import numpy as np

from .baselines import BaselineConfig
from .cohort import HYPOTHESES, CohortGenConfig, desk_cohort, generate_cohort, read_dataset, save_dataset
from .errors import ConfigError, DatasetParseError, TadsieError, TrialError
from .harness import (DEFAULT_N_TRIALS, DESIGNS, EvaluationSet, TAD_DESIGNS, default_workers,
                      load_report, make_design, make_source, render_report, simulate_trials, sweep,
                      trial_streams)
from .repro import BUDGETS, SCENARIOS, repro_suite
from .secrets import TestingParams
from .si import SiParams
from .tad import TadConfig

CONFIG_SCHEMA_VERSION = 1

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_IO = 4
EXIT_DATA = 5
EXIT_RUNTIME = 6

DEFAULT_EFFECT = 0.25

_NESTED = {"si", "testing"}
_TOP_KEYS = {"schema_version", "design", "design_config", "cohort", "data", "seed", "n_trials",
             "workers", "hypothesis", "scale_factors", "boundaries", "n_control", "n_treatment",
             "trial_index"}


class _Parser(argparse.ArgumentParser):
    """Argument parser that raises instead of exiting."""

    def error(self, message):
        raise _UsageError(f"{self.prog}: {message}")


class _UsageError(Exception):
    pass


def _flag(name: str) -> str:
    return "--" + name.replace("_", "-")


def _default(f) -> object:
    if f.default is not MISSING:
        return f.default
    if f.default_factory is not MISSING:  # type: ignore[misc]
        return None
    return None


def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def _float_list(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _type_for(default):
    if isinstance(default, bool):
        return _parse_bool
    if isinstance(default, int):
        return int
    if isinstance(default, float):
        return float
    if isinstance(default, tuple):
        return _float_list
    return str


def _design_fields():
    """(key, default, group) for every design key, in a stable order."""
    seen, out = set(), []
    for cls in (TadConfig, BaselineConfig):
        for f in fields(cls):
            if f.name in _NESTED or f.name in seen:
                continue
            seen.add(f.name)
            out.append((f.name, _default(f), None))
    for f in fields(SiParams):
        out.append((f.name, _default(f), "si"))
    for f in fields(TestingParams):
        if f.name != "alpha_target":
            out.append((f.name, _default(f), "testing"))
    return out


DESIGN_FIELDS = _design_fields()
COHORT_FIELDS = [(f.name, _default(f)) for f in fields(CohortGenConfig)]


def _fmt_default(value) -> str:
    if isinstance(value, tuple):
        return ",".join(repr(v) for v in value)
    return "unset" if value is None else repr(value)


def _add_design_options(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("design config keys (defaults shown)")
    g.add_argument("--design", choices=DESIGNS, default=None, help="design to run (default: tad_sie)")
    for key, default, group in DESIGN_FIELDS:
        where = f"{group}." if group else ""
        extra = ""
        if key == "futility_power_boundary":
            extra = " (preset: 0.11 at power 0.8, 0.01 at power 0.9)"
        if key == "pre_period_end":
            extra = " (unset: one past the baseline visit)"
        g.add_argument(_flag(key), dest=f"d_{key}", type=_type_for(default) if default is not None else int,
                       default=None, metavar=key.upper(),
                       help=f"{where}{key}, default {_fmt_default(default)}{extra}")


def _add_source_options(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("subject source (a cohort CSV, or the synthetic generator)")
    g.add_argument("--data", default=None, help="cohort CSV to resample from")
    g.add_argument("--standardized-effect", dest="c_standardized_effect", type=float, default=None,
                   metavar="EFFECT",
                   help=f"generator ATE in control-outcome SDs, default {DEFAULT_EFFECT}")
    for key, default in COHORT_FIELDS:
        if key == "treatment_effect_mean":
            continue
        g.add_argument(_flag(key), dest=f"c_{key}", type=_type_for(default), default=None,
                       metavar=key.upper(), help=f"cohort.{key}, default {_fmt_default(default)}")


def _add_common(p: argparse.ArgumentParser, seed=True, out=True) -> None:
    p.add_argument("--config", default=None, help="JSON config file; flags override it")
    if seed:
        p.add_argument("--seed", type=int, default=None,
                       help="master seed; a random one is chosen and printed when unset")
    if out:
        p.add_argument("--out", default=None, help="output path (default: stdout)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="tadsie", description="Adaptive trial-design simulation.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("generate", help="write a synthetic cohort CSV and its metadata sidecar")
    _add_common(p, out=False)
    p.add_argument("--out", required=True, help="CSV path; the sidecar gets a .json suffix")
    p.add_argument("--n-control", type=int, default=None, help="control subjects, default 100")
    p.add_argument("--n-treatment", type=int, default=None, help="treatment subjects, default 100")
    _add_source_options(p)

    p = sub.add_parser("run-trial", help="run one trial and print its result")
    _add_common(p)
    p.add_argument("--hypothesis", choices=HYPOTHESES, default=None, help="default H1")
    p.add_argument("--trial-index", type=int, default=None, help="trial stream index, default 0")
    _add_design_options(p)
    _add_source_options(p)

    p = sub.add_parser("evaluate", help="simulate trials under H0 and H1")
    _add_common(p)
    p.add_argument("--n-trials", type=int, default=None, help=f"default {DEFAULT_N_TRIALS}")
    p.add_argument("--workers", type=int, default=None, help="processes, default $TADSIE_WORKERS or 1")
    p.add_argument("--format", choices=("json", "csv"), default="json")
    _add_design_options(p)
    _add_source_options(p)

    p = sub.add_parser("sweep", help="evaluate a scale-factor by futility-boundary grid")
    _add_common(p)
    p.add_argument("--scale-factors", type=_float_list, default=None, help="comma list, default 0.1")
    p.add_argument("--boundaries", type=_float_list, default=None, help="comma list, default 0.11")
    p.add_argument("--n-trials", type=int, default=None, help=f"default {DEFAULT_N_TRIALS}")
    p.add_argument("--workers", type=int, default=None, help="processes, default $TADSIE_WORKERS or 1")
    p.add_argument("--format", choices=("json", "csv"), default="json")
    _add_design_options(p)
    _add_source_options(p)

    p = sub.add_parser("report", help="re-render a saved JSON report")
    p.add_argument("input", help="JSON report written by evaluate or sweep")
    p.add_argument("--format", choices=("json", "csv"), default="csv")
    p.add_argument("--out", default=None, help="output path (default: stdout)")

    p = sub.add_parser("repro", help="run a reproduction scenario into a bundle directory")
    p.add_argument("scenario", choices=SCENARIOS)
    p.add_argument("--budget", choices=tuple(BUDGETS), default="quick")
    p.add_argument("--seed", type=int, default=None, help="default: the scenario's fixed seed")
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--out-dir", required=True, help="bundle directory")
    return parser


# ---------------------------------------------------------------------------
# Config resolution
# ---------------------------------------------------------------------------


def _read_config(path) -> dict:
    if path is None:
        return {}
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise FileNotFoundError(f"cannot read config file {p}: {exc.strerror or exc}") from None
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {p} is not valid JSON: {exc}") from None
    if not isinstance(cfg, dict):
        raise ConfigError(f"config file {p} must hold a JSON object")
    unknown = set(cfg) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys in {p}: {sorted(unknown)}")
    version = cfg.get("schema_version", CONFIG_SCHEMA_VERSION)
    if version != CONFIG_SCHEMA_VERSION:
        raise ConfigError(f"unsupported config schema_version {version!r}")
    return cfg


def _pick(args, name: str, cfg: dict, default):
    value = getattr(args, name, None)
    if value is not None:
        return value
    return cfg.get(name, default)


def _design_payload(args, cfg: dict) -> tuple[str, dict]:
    name = _pick(args, "design", cfg, "tad_sie")
    payload = dict(cfg.get("design_config") or {})
    for group in _NESTED:
        payload[group] = dict(payload.get(group) or {})
    for key, _, group in DESIGN_FIELDS:
        value = getattr(args, f"d_{key}", None)
        if value is None:
            continue
        if key == "ridge_grid":
            value = tuple(value)
        if group:
            payload[group][key] = value
        else:
            payload[key] = value
    for group in _NESTED:
        if not payload[group]:
            del payload[group]
    if name not in DESIGNS:
        raise ConfigError(f"unknown design {name!r}; expected one of {DESIGNS}")
    allowed = {f.name for f in fields(TadConfig if name in TAD_DESIGNS else BaselineConfig)}
    stray = sorted(set(payload) - allowed)
    if stray:
        raise ConfigError(f"keys {stray} do not apply to design {name!r}")
    return name, payload


def _cohort(args, cfg: dict) -> CohortGenConfig:
    spec = dict(cfg.get("cohort") or {})
    for key, _ in COHORT_FIELDS + [("standardized_effect", None)]:
        value = getattr(args, f"c_{key}", None)
        if value is not None:
            spec[key] = value
    effect = spec.pop("standardized_effect", DEFAULT_EFFECT)
    if "treatment_effect_mean" in spec:
        raise ConfigError("set the generator effect with standardized_effect")
    known = {k for k, _ in COHORT_FIELDS}
    unknown = set(spec) - known
    if unknown:
        raise ConfigError(f"unknown cohort keys: {sorted(unknown)}")
    return desk_cohort(float(effect), **spec)


def _data(args, cfg: dict):
    path = _pick(args, "data", cfg, None)
    if path is None:
        return _cohort(args, cfg)
    if cfg.get("cohort") or any(getattr(args, f"c_{k}", None) is not None
                                for k, _ in COHORT_FIELDS + [("standardized_effect", None)]):
        raise ConfigError("generator options cannot be combined with --data")
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"dataset not found: {p}")
    return read_dataset(p)


def _seed(args, cfg: dict, err) -> int:
    seed = _pick(args, "seed", cfg, None)
    if seed is None:
        seed = int(np.random.SeedSequence().entropy % (2 ** 32))
        print(f"tadsie: using seed {seed}", file=err)
    if not isinstance(seed, int) or seed < 0:
        raise ConfigError(f"seed must be a non-negative integer, got {seed!r}")
    return seed


def _workers(args, cfg: dict) -> int:
    w = _pick(args, "workers", cfg, None)
    w = default_workers() if w is None else w
    if not isinstance(w, int) or w < 1:
        raise ConfigError(f"workers must be a positive integer, got {w!r}")
    return w


def _positive_int(value, name: str) -> int:
    if not isinstance(value, int) or value < 1:
        raise ConfigError(f"{name} must be a positive integer, got {value!r}")
    return value


# ---------------------------------------------------------------------------
# Output
# ---------------------------------------------------------------------------


def _json_safe(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return None if math.isnan(obj) else ("inf" if obj > 0 else "-inf")
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, np.generic):
        return _json_safe(obj.item())
    return obj


def _emit(text: str, out, stdout) -> None:
    if out is None:
        stdout.write(text)
        return
    p = Path(out)
    try:
        p.write_text(text)
    except OSError as exc:
        raise FileNotFoundError(f"cannot write {p}: {exc.strerror or exc}") from None


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def _cmd_generate(args, cfg, stdout, stderr) -> None:
    config = _cohort(args, cfg)
    seed = _seed(args, cfg, stderr)
    nc = _positive_int(_pick(args, "n_control", cfg, 100), "n_control")
    nt = _positive_int(_pick(args, "n_treatment", cfg, 100), "n_treatment")
    data = generate_cohort(config, nc, nt, np.random.default_rng(seed))
    out = Path(args.out)
    try:
        save_dataset(data, out)
    except OSError as exc:
        raise FileNotFoundError(f"cannot write {out}: {exc.strerror or exc}") from None


def _cmd_run_trial(args, cfg, stdout, stderr) -> None:
    name, payload = _design_payload(args, cfg)
    design = make_design(name, payload)
    data = _data(args, cfg)
    seed = _seed(args, cfg, stderr)
    hypothesis = _pick(args, "hypothesis", cfg, "H1")
    if hypothesis not in HYPOTHESES:
        raise ConfigError(f"hypothesis must be one of {HYPOTHESES}")
    index = _pick(args, "trial_index", cfg, 0)
    if not isinstance(index, int) or index < 0:
        raise ConfigError(f"trial_index must be a non-negative integer, got {index!r}")
    recruit_ss, rng = trial_streams(seed, index)
    try:
        result = design.run(make_source(data, hypothesis, recruit_ss), rng)
    except Exception as exc:
        raise TrialError(index, exc) from exc
    doc = {"design": design.to_dict(), "seed": seed, "trial_index": index,
           "hypothesis": hypothesis, "result": result.to_dict()}
    _emit(json.dumps(_json_safe(doc), sort_keys=True, indent=2) + "\n", args.out, stdout)


def _cmd_evaluate(args, cfg, stdout, stderr) -> None:
    name, payload = _design_payload(args, cfg)
    design = make_design(name, payload)
    data = _data(args, cfg)
    seed = _seed(args, cfg, stderr)
    n_trials = _positive_int(_pick(args, "n_trials", cfg, DEFAULT_N_TRIALS), "n_trials")
    workers = _workers(args, cfg)
    reports = tuple(simulate_trials(design, data, h, n_trials, seed, workers) for h in HYPOTHESES)
    _emit(render_report(EvaluationSet(reports), args.format), args.out, stdout)


def _cmd_sweep(args, cfg, stdout, stderr) -> None:
    name, payload = _design_payload(args, cfg)
    if name not in TAD_DESIGNS:
        raise ConfigError(f"sweeps need a search design, got {name!r}")
    design = make_design(name, payload)
    data = _data(args, cfg)
    seed = _seed(args, cfg, stderr)
    n_trials = _positive_int(_pick(args, "n_trials", cfg, DEFAULT_N_TRIALS), "n_trials")
    scales = _pick(args, "scale_factors", cfg, [design.config.step_size_scale_factor])
    bounds = _pick(args, "boundaries", cfg, [design.config.futility_power_boundary])
    report = sweep(design, data, scales, bounds, n_trials, seed, _workers(args, cfg))
    _emit(render_report(report, args.format), args.out, stdout)


def _cmd_report(args, cfg, stdout, stderr) -> None:
    p = Path(args.input)
    if not p.is_file():
        raise FileNotFoundError(f"report not found: {p}")
    try:
        report = load_report(p)
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise ConfigError(f"{p} is not a valid report: {exc}") from None
    _emit(render_report(report, args.format), args.out, stdout)


def _cmd_repro(args, cfg, stdout, stderr) -> None:
    kwargs = {} if args.seed is None else {"seed": args.seed}
    workers = _workers(args, {})
    bundle = repro_suite(args.scenario, args.budget, workers=workers, out_dir=args.out_dir, **kwargs)
    stdout.write(f"wrote {len(bundle.files())} files to {args.out_dir} (seed {bundle.seed})\n")


_COMMANDS = {
    "generate": _cmd_generate,
    "run-trial": _cmd_run_trial,
    "evaluate": _cmd_evaluate,
    "sweep": _cmd_sweep,
    "report": _cmd_report,
    "repro": _cmd_repro,
}


def run_cli(argv=None, stdout=None, stderr=None) -> int:
    """Run the CLI and return its exit status.

    Exit codes: 0 success, 2 usage error, 3 invalid configuration, 4 missing
    or unwritable file, 5 malformed dataset, 6 trial failure.
    """
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    try:
        cfg = _read_config(getattr(args, "config", None))
        _COMMANDS[args.command](args, cfg, stdout, stderr)
    except FileNotFoundError as exc:
        print(f"file error: {exc}", file=stderr)
        return EXIT_IO
    except DatasetParseError as exc:
        print(f"dataset error: {exc}", file=stderr)
        return EXIT_DATA
    except ConfigError as exc:
        print(f"config error: {exc}", file=stderr)
        return EXIT_CONFIG
    except TrialError as exc:
        print(f"trial error: {exc}", file=stderr)
        return EXIT_RUNTIME
    except (TadsieError, ValueError, TypeError) as exc:
        print(f"config error: {exc}", file=stderr)
        return EXIT_CONFIG
    return EXIT_OK


def main() -> None:
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
