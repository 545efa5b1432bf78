"""Monte Carlo evaluation of trial designs.

A *design* is anything with a ``run(source, rng) -> TrialResult`` method (or a
plain callable with that signature). :func:`simulate_trials` runs it on many
independent trials and aggregates rejection, futility and increase rates
together with box summaries of the final arm size and iteration count.

Trial ``i`` of a run seeded with ``seed`` uses ``SeedSequence(seed,
spawn_key=(i,))``; its first child drives subject recruitment and its second
drives the analysis. Results therefore do not depend on the worker count or
the order in which trials finish, and two designs evaluated with the same seed
see the same recruited subjects for as long as they request the same sizes.
"""
from __future__ import annotations

import csv
import io
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .baselines import (BaselineConfig, run_fixed_sample_design, run_standard_tad,
                        run_standard_tad_sie, run_tad_standard_test)
from .cohort import HYPOTHESES, CohortGenConfig, GeneratorSource, PoolSource, RctDataset
from .errors import ConfigError, TrialError
from .stats import BoxSummary, box_summary
from .tad import TadConfig, TrialResult, run_tad_sie

REPORT_SCHEMA_VERSION = 1
WORKERS_ENV = "TADSIE_WORKERS"
DEFAULT_N_TRIALS = 100
FEASIBILITY_POWER_TOLERANCE = 0.01
FEASIBILITY_ALPHA_TOLERANCE = 0.01

# ---------------------------------------------------------------------------
# Designs
# ---------------------------------------------------------------------------

TAD_DESIGNS = ("tad_sie", "tad_sie_se", "tad_sie_te", "tad_standard_test")
BASELINE_DESIGNS = ("fixed", "standard_tad", "standard_tad_sie")
DESIGNS = TAD_DESIGNS + BASELINE_DESIGNS

SCALE_PRESETS = {"tad_sie_se": 0.1, "tad_sie_te": 0.6}
BOUNDARY_PRESETS = {0.8: 0.11, 0.9: 0.01}

_RUNNERS = {
    "tad_sie": run_tad_sie,
    "tad_sie_se": run_tad_sie,
    "tad_sie_te": run_tad_sie,
    "tad_standard_test": run_tad_standard_test,
    "fixed": run_fixed_sample_design,
    "standard_tad": run_standard_tad,
    "standard_tad_sie": run_standard_tad_sie,
}


def boundary_preset(power_target: float) -> float | None:
    """Futility boundary preset for a power target, or ``None`` if there is none."""
    for target, boundary in BOUNDARY_PRESETS.items():
        if math.isclose(power_target, target, abs_tol=1e-12):
            return boundary
    return None


@dataclass(frozen=True)
class Design:
    """A named design with its resolved configuration."""

    name: str
    config: TadConfig | BaselineConfig

    def __post_init__(self):
        if self.name not in DESIGNS:
            raise ConfigError(f"unknown design {self.name!r}; expected one of {DESIGNS}")
        expected = TadConfig if self.name in TAD_DESIGNS else BaselineConfig
        if not isinstance(self.config, expected):
            raise ConfigError(f"design {self.name!r} needs a {expected.__name__}")

    def run(self, source, rng: np.random.Generator) -> TrialResult:
        return _RUNNERS[self.name](self.config, source, rng)

    def to_dict(self) -> dict:
        return {"design": self.name, "config": self.config.to_dict()}


def make_design(name: str, overrides: dict | None = None) -> Design:
    """Build a design from its name and configuration overrides.

    ``tad_sie_se`` and ``tad_sie_te`` fix the step-size scale factor. For the
    search designs an unset futility boundary follows the power target
    (11% at 80% power, 1% at 90% power; otherwise the configuration default).
    """
    if name not in DESIGNS:
        raise ConfigError(f"unknown design {name!r}; expected one of {DESIGNS}")
    overrides = dict(overrides or {})
    if name in BASELINE_DESIGNS:
        return Design(name, BaselineConfig.from_dict(overrides))
    if name in SCALE_PRESETS:
        given = overrides.get("step_size_scale_factor")
        if given is not None and given != SCALE_PRESETS[name]:
            raise ConfigError(f"{name} fixes step_size_scale_factor={SCALE_PRESETS[name]}")
        overrides["step_size_scale_factor"] = SCALE_PRESETS[name]
    if overrides.get("futility_power_boundary") is None:
        overrides.pop("futility_power_boundary", None)
        preset = boundary_preset(overrides.get("power_target", TadConfig.power_target))
        if preset is not None:
            overrides["futility_power_boundary"] = preset
    if name == "tad_standard_test":
        overrides.setdefault("moment_method", "two_sample")
    return Design(name, TadConfig.from_dict(overrides))


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TrialRecord:
    """Per-trial row kept in an :class:`EvaluationReport`."""

    index: int
    rejected: bool
    futility_stopped: bool
    increases: bool
    final_arm_size: int
    iterations: int

    @classmethod
    def from_result(cls, index: int, result: TrialResult) -> "TrialRecord":
        return cls(index, result.rejected, result.futility_stopped, result.increases,
                   int(result.final_arm_size), int(result.iterations))

    def to_dict(self) -> dict:
        return {"index": self.index, "rejected": self.rejected,
                "futility_stopped": self.futility_stopped, "increases": self.increases,
                "final_arm_size": self.final_arm_size, "iterations": self.iterations}


def _rate_ok(p: float) -> bool:
    return 0.0 <= p <= 1.0


@dataclass(frozen=True)
class EvaluationReport:
    """Aggregate of ``n_trials`` simulated trials of one design under one hypothesis.

    Under ``H1`` the rejection rate estimates power; under ``H0`` it estimates
    the significance level.
    """

    method: str
    hypothesis: str
    n_trials: int
    rejection_rate: float
    rejection_se: float
    futility_rate: float
    increase_rate: float
    arm_size_summary: BoxSummary
    iterations_summary: BoxSummary
    seed: int
    config: dict = field(default_factory=dict)
    trials: tuple = ()

    def __post_init__(self):
        if self.n_trials < 1:
            raise ValueError("n_trials must be at least 1")
        if self.hypothesis not in HYPOTHESES:
            raise ValueError(f"hypothesis must be one of {HYPOTHESES}")
        for name in ("rejection_rate", "futility_rate", "increase_rate"):
            if not _rate_ok(getattr(self, name)):
                raise ValueError(f"{name} must lie in [0, 1]")

    @classmethod
    def from_records(cls, method: str, hypothesis: str, records: Sequence[TrialRecord], seed: int,
                     config: dict | None = None) -> "EvaluationReport":
        n = len(records)
        if n < 1:
            raise ValueError("need at least one trial")
        rej = sum(r.rejected for r in records) / n
        return cls(
            method=method, hypothesis=hypothesis, n_trials=n,
            rejection_rate=rej, rejection_se=math.sqrt(rej * (1.0 - rej) / n),
            futility_rate=sum(r.futility_stopped for r in records) / n,
            increase_rate=sum(r.increases for r in records) / n,
            arm_size_summary=box_summary([r.final_arm_size for r in records]),
            iterations_summary=box_summary([r.iterations for r in records]),
            seed=int(seed), config=dict(config or {}), trials=tuple(records),
        )

    def to_dict(self) -> dict:
        return {
            "kind": "evaluation",
            "schema_version": REPORT_SCHEMA_VERSION,
            "method": self.method,
            "hypothesis": self.hypothesis,
            "n_trials": self.n_trials,
            "rejection_rate": self.rejection_rate,
            "rejection_se": self.rejection_se,
            "futility_rate": self.futility_rate,
            "increase_rate": self.increase_rate,
            "arm_size_summary": self.arm_size_summary.to_dict(),
            "iterations_summary": self.iterations_summary.to_dict(),
            "seed": self.seed,
            "config": self.config,
            "trials": [r.to_dict() for r in self.trials],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "EvaluationReport":
        data = {k: v for k, v in data.items() if k not in ("kind", "schema_version")}
        data["arm_size_summary"] = BoxSummary(**data["arm_size_summary"])
        data["iterations_summary"] = BoxSummary(**data["iterations_summary"])
        data["trials"] = tuple(TrialRecord(**r) for r in data.get("trials", ()))
        return cls(**data)


@dataclass(frozen=True)
class SweepCell:
    """One grid point evaluated under both hypotheses."""

    step_size_scale_factor: float
    futility_power_boundary: float
    h0: EvaluationReport
    h1: EvaluationReport
    feasible: bool

    @property
    def power(self) -> float:
        return self.h1.rejection_rate

    @property
    def significance(self) -> float:
        return self.h0.rejection_rate

    def to_dict(self) -> dict:
        return {"step_size_scale_factor": self.step_size_scale_factor,
                "futility_power_boundary": self.futility_power_boundary,
                "feasible": self.feasible, "h0": self.h0.to_dict(), "h1": self.h1.to_dict()}

    @classmethod
    def from_dict(cls, data: dict) -> "SweepCell":
        return cls(data["step_size_scale_factor"], data["futility_power_boundary"],
                   EvaluationReport.from_dict(data["h0"]), EvaluationReport.from_dict(data["h1"]),
                   data["feasible"])


@dataclass(frozen=True)
class SweepReport:
    """Scale-factor by futility-boundary grid of evaluations.

    A cell is feasible when its power is at least ``power_target`` minus
    ``power_tolerance`` and its significance is at most ``alpha_target`` plus
    ``alpha_tolerance``.
    """

    method: str
    scale_factors: tuple
    boundaries: tuple
    n_trials: int
    seed: int
    alpha_target: float
    power_target: float
    cells: tuple
    power_tolerance: float = FEASIBILITY_POWER_TOLERANCE
    alpha_tolerance: float = FEASIBILITY_ALPHA_TOLERANCE
    config: dict = field(default_factory=dict)

    def cell(self, scale: float, boundary: float) -> SweepCell:
        for c in self.cells:
            if c.step_size_scale_factor == scale and c.futility_power_boundary == boundary:
                return c
        raise KeyError((scale, boundary))

    def to_dict(self) -> dict:
        return {
            "kind": "sweep",
            "schema_version": REPORT_SCHEMA_VERSION,
            "method": self.method,
            "scale_factors": list(self.scale_factors),
            "boundaries": list(self.boundaries),
            "n_trials": self.n_trials,
            "seed": self.seed,
            "alpha_target": self.alpha_target,
            "power_target": self.power_target,
            "power_tolerance": self.power_tolerance,
            "alpha_tolerance": self.alpha_tolerance,
            "config": self.config,
            "cells": [c.to_dict() for c in self.cells],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SweepReport":
        data = {k: v for k, v in data.items() if k not in ("kind", "schema_version")}
        data["scale_factors"] = tuple(data["scale_factors"])
        data["boundaries"] = tuple(data["boundaries"])
        data["cells"] = tuple(SweepCell.from_dict(c) for c in data["cells"])
        return cls(**data)


@dataclass(frozen=True)
class EvaluationSet:
    """Several evaluations saved together, e.g. one design under both hypotheses."""

    reports: tuple

    def by(self, method: str, hypothesis: str) -> EvaluationReport:
        for r in self.reports:
            if r.method == method and r.hypothesis == hypothesis:
                return r
        raise KeyError((method, hypothesis))

    def to_dict(self) -> dict:
        return {"kind": "evaluation_set", "schema_version": REPORT_SCHEMA_VERSION,
                "reports": [r.to_dict() for r in self.reports]}

    @classmethod
    def from_dict(cls, data: dict) -> "EvaluationSet":
        return cls(tuple(EvaluationReport.from_dict(r) for r in data["reports"]))


# ---------------------------------------------------------------------------
# Simulation
# ---------------------------------------------------------------------------


def default_workers() -> int:
    """Worker count from ``TADSIE_WORKERS`` (default 1)."""
    raw = os.environ.get(WORKERS_ENV, "").strip()
    if not raw:
        return 1
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"{WORKERS_ENV} must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError(f"{WORKERS_ENV} must be a positive integer, got {raw!r}")
    return n


def trial_streams(seed: int, index: int) -> tuple[np.random.SeedSequence, np.random.Generator]:
    """Recruitment seed and analysis generator for trial ``index``."""
    recruit_ss, analysis_ss = np.random.SeedSequence(seed, spawn_key=(index,)).spawn(2)
    return recruit_ss, np.random.default_rng(analysis_ss)


def make_source(data: CohortGenConfig | RctDataset, hypothesis: str, seed):
    """Subject source for one trial: fresh synthetic subjects or resampling with replacement."""
    if isinstance(data, CohortGenConfig):
        return GeneratorSource(data, hypothesis, seed)
    if isinstance(data, RctDataset):
        return PoolSource(data, hypothesis, seed, replace=True)
    raise ConfigError("data must be a CohortGenConfig or an RctDataset")


def _run_design(design, source, rng) -> TrialResult:
    run = getattr(design, "run", design)
    return run(source, rng)


def _one_trial(args) -> TrialRecord:
    design, data, hypothesis, seed, index = args
    try:
        recruit_ss, rng = trial_streams(seed, index)
        result = _run_design(design, make_source(data, hypothesis, recruit_ss), rng)
        return TrialRecord.from_result(index, result)
    except Exception as exc:  # attach the trial index to anything a trial raises
        raise TrialError(index, exc) from exc


def run_trials(design, data, hypothesis: str, indices: Sequence[int], seed: int,
               workers: int | None = None) -> list[TrialRecord]:
    """Run the listed trials and return their records in the order given."""
    workers = default_workers() if workers is None else workers
    if workers < 1:
        raise ConfigError("workers must be at least 1")
    if not isinstance(data, (CohortGenConfig, RctDataset)):
        raise ConfigError("data must be a CohortGenConfig or an RctDataset")
    jobs = [(design, data, hypothesis, seed, int(i)) for i in indices]
    if workers == 1 or len(jobs) < 2:
        return [_one_trial(j) for j in jobs]
    chunk = max(1, len(jobs) // (4 * workers))
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_one_trial, jobs, chunksize=chunk))


def _method_name(design) -> str:
    return getattr(design, "name", None) or getattr(design, "__name__", type(design).__name__)


def _config_of(design) -> dict:
    to_dict = getattr(design, "to_dict", None)
    return to_dict() if callable(to_dict) else {"design": _method_name(design)}


def simulate_trials(design: Design | Callable, data: CohortGenConfig | RctDataset, hypothesis: str,
                    n_trials: int = DEFAULT_N_TRIALS, seed: int = 0,
                    workers: int | None = None) -> EvaluationReport:
    """Evaluate ``design`` over ``n_trials`` independent trials.

    Args:
        design: A :class:`Design` or any callable ``(source, rng) -> TrialResult``.
        data: A generator configuration (fresh subjects per trial) or an
            observed dataset (per-arm resampling with replacement; under
            ``H0`` both arms are drawn from the control arm).
        hypothesis: ``"H0"`` or ``"H1"``.
        n_trials: Number of trials.
        seed: Master seed.
        workers: Process count; defaults to ``TADSIE_WORKERS`` or 1.

    Raises:
        TrialError: A trial raised; the error names the trial index.
    """
    if n_trials < 1:
        raise ValueError("n_trials must be at least 1")
    if hypothesis not in HYPOTHESES:
        raise ConfigError(f"hypothesis must be one of {HYPOTHESES}")
    records = run_trials(design, data, hypothesis, range(n_trials), seed, workers)
    return EvaluationReport.from_records(_method_name(design), hypothesis, records, seed,
                                         _config_of(design))


def _with_cell(design: Design, scale: float, boundary: float) -> Design:
    if design.name not in TAD_DESIGNS:
        raise ConfigError(f"sweeps need a search design, got {design.name!r}")
    # Bypass the preset check: the sweep sets the scale factor explicitly.
    return Design("tad_sie" if design.name in SCALE_PRESETS else design.name,
                  replace(design.config, step_size_scale_factor=float(scale),
                          futility_power_boundary=float(boundary)))


def sweep(design: Design, data, scale_factors: Sequence[float], boundaries: Sequence[float],
          n_trials: int = DEFAULT_N_TRIALS, seed: int = 0, workers: int | None = None,
          power_tolerance: float = FEASIBILITY_POWER_TOLERANCE,
          alpha_tolerance: float = FEASIBILITY_ALPHA_TOLERANCE) -> SweepReport:
    """Evaluate every (scale factor, boundary) pair under both hypotheses.

    All cells share ``seed``, so neighbouring cells see the same subjects
    wherever they request the same arm sizes.
    """
    if not scale_factors or not boundaries:
        raise ConfigError("scale_factors and boundaries must be non-empty")
    cfg = design.config
    cells = []
    for scale in scale_factors:
        for boundary in boundaries:
            d = _with_cell(design, scale, boundary)
            h0 = simulate_trials(d, data, "H0", n_trials, seed, workers)
            h1 = simulate_trials(d, data, "H1", n_trials, seed, workers)
            feasible = (h1.rejection_rate >= cfg.power_target - power_tolerance
                        and h0.rejection_rate <= cfg.alpha_target + alpha_tolerance)
            cells.append(SweepCell(float(scale), float(boundary), h0, h1, feasible))
    return SweepReport(design.name, tuple(float(s) for s in scale_factors),
                       tuple(float(b) for b in boundaries), n_trials, int(seed),
                       cfg.alpha_target, cfg.power_target, tuple(cells),
                       power_tolerance, alpha_tolerance, design.to_dict())


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

BOX_FIELDS = ("median", "q1", "q3", "whisker_low", "whisker_high", "n_outliers")
AGGREGATE_COLUMNS = ("step_size_scale_factor", "futility_power_boundary", "method", "hypothesis",
                     "n_trials", "rejection_rate", "rejection_se", "futility_rate",
                     "increase_rate", "feasible", "seed")
BOX_COLUMNS = ("step_size_scale_factor", "futility_power_boundary", "method", "hypothesis",
               "quantity") + BOX_FIELDS


def _evaluations(report) -> list[tuple[object, object, object, EvaluationReport]]:
    if isinstance(report, EvaluationReport):
        return [("", "", "", report)]
    if isinstance(report, EvaluationSet):
        return [("", "", "", ev) for ev in report.reports]
    if isinstance(report, SweepReport):
        return [(c.step_size_scale_factor, c.futility_power_boundary, c.feasible, ev)
                for c in report.cells for ev in (c.h0, c.h1)]
    raise TypeError("report must be an EvaluationReport, EvaluationSet or SweepReport")


def aggregate_rows(report) -> list[dict]:
    """One row per evaluated hypothesis (per grid cell for sweeps)."""
    return [{"step_size_scale_factor": s, "futility_power_boundary": b, "method": ev.method,
             "hypothesis": ev.hypothesis, "n_trials": ev.n_trials,
             "rejection_rate": ev.rejection_rate, "rejection_se": ev.rejection_se,
             "futility_rate": ev.futility_rate, "increase_rate": ev.increase_rate,
             "feasible": f, "seed": ev.seed}
            for s, b, f, ev in _evaluations(report)]


def box_rows(report) -> list[dict]:
    """Arm-size and iteration box summaries, one row per quantity."""
    rows = []
    for s, b, _, ev in _evaluations(report):
        for quantity, box in (("arm_size", ev.arm_size_summary), ("iterations", ev.iterations_summary)):
            row = {"step_size_scale_factor": s, "futility_power_boundary": b, "method": ev.method,
                   "hypothesis": ev.hypothesis, "quantity": quantity}
            row.update(box.to_dict())
            rows.append(row)
    return rows


def render_report(report, fmt: str = "json") -> str:
    """Serialize a report.

    JSON carries every field with sorted keys. CSV has an aggregate table and,
    after one blank line, a box-summary table.
    """
    if fmt == "json":
        return json.dumps(report.to_dict(), sort_keys=True, indent=2) + "\n"
    if fmt != "csv":
        raise ConfigError(f"unknown report format {fmt!r}; expected 'json' or 'csv'")
    buf = io.StringIO()
    for i, (cols, rows) in enumerate(((AGGREGATE_COLUMNS, aggregate_rows(report)),
                                      (BOX_COLUMNS, box_rows(report)))):
        if i:
            buf.write("\n")
        writer = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
    return buf.getvalue()


def write_report(report, fmt: str, sink) -> None:
    """Write ``report`` to a path or text stream."""
    text = render_report(report, fmt)
    if isinstance(sink, (str, Path)):
        Path(sink).write_text(text)
    else:
        sink.write(text)


def parse_csv_report(text: str) -> tuple[list[dict], list[dict]]:
    """Split a CSV report into its aggregate rows and box-summary rows."""
    head, _, tail = text.partition("\n\n")
    return list(csv.DictReader(io.StringIO(head))), list(csv.DictReader(io.StringIO(tail)))


def report_from_dict(data: dict):
    kind = data.get("kind")
    if kind == "evaluation":
        return EvaluationReport.from_dict(data)
    if kind == "evaluation_set":
        return EvaluationSet.from_dict(data)
    if kind == "sweep":
        return SweepReport.from_dict(data)
    raise ConfigError(f"unknown report kind {kind!r}")


def load_report(source):
    """Read a JSON report from a path or text stream."""
    text = Path(source).read_text() if isinstance(source, (str, Path)) else source.read()
    return report_from_dict(json.loads(text))
