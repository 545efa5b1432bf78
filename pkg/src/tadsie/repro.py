"""Scripted reproduction scenarios on synthetic cohorts.

Every scenario returns a :class:`Bundle`: named reports and tables plus a
manifest recording the seed, budget and resolved configuration. The outputs
are synthetic-data qualitative analogs. Reproducing exact published numbers
needs the original trial data, which users must obtain themselves and load
with :func:`tadsie.cohort.read_dataset`.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import stats as _sps

from .cohort import CohortGenConfig, desk_cohort
from .errors import ConfigError
from .harness import EvaluationSet, make_design, render_report, simulate_trials, sweep
from .moments import bootstrap_variance, variance_of_outcome

SCENARIOS = ("sweep", "tradeoff", "baselines", "ablation_moments", "ablation_tad",
             "ablation_test", "theorem1")
LABEL = "synthetic-data qualitative analogs"
DEFAULT_SEED = 12345
DEFAULT_EFFECT = 0.25

BUDGETS = {
    "quick": {"n_trials": 50, "T": 50, "B": 50},
    "full": {"n_trials": 100, "T": 100, "B": 100},
}

SWEEP_GRIDS = {
    "quick": ((0.1, 0.3, 0.6), (0.0, 0.01, 0.05, 0.11, 0.2)),
    "full": (tuple(round(0.1 * k, 1) for k in range(1, 11)),
             tuple(round(0.01 * k, 2) for k in range(0, 21))),
}

THEOREM1_SIZES = (50, 100, 200, 400)
THEOREM1_SEEDS = {"quick": 5, "full": 20}


@dataclass
class Bundle:
    """Reports and tables produced by one scenario."""

    scenario: str
    budget: str
    seed: int
    manifest: dict
    reports: dict = field(default_factory=dict)
    tables: dict = field(default_factory=dict)

    def files(self) -> dict[str, str]:
        """File name to text content, as written by :meth:`write`."""
        out = {"manifest.json": json.dumps(self.manifest, sort_keys=True, indent=2) + "\n"}
        for name, report in self.reports.items():
            out[f"{name}.json"] = render_report(report, "json")
            out[f"{name}.csv"] = render_report(report, "csv")
        for name, (columns, rows) in self.tables.items():
            out[f"{name}.csv"] = table_csv(columns, rows)
        return out

    def write(self, directory) -> Path:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        for name, text in self.files().items():
            (d / name).write_text(text)
        return d


def table_csv(columns: Sequence[str], rows: Sequence[dict]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(columns), lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    return buf.getvalue()


def _pct(p: float) -> float:
    return round(100.0 * p, 1)


def _design_overrides(budget: str, **extra) -> dict:
    b = BUDGETS[budget]
    return {"T": b["T"], "B": b["B"], **extra}


def _evaluate(names_and_designs, data, n_trials, seed, workers) -> EvaluationSet:
    reports = []
    for label, design in names_and_designs:
        for hyp in ("H0", "H1"):
            r = simulate_trials(design, data, hyp, n_trials, seed, workers)
            reports.append(_relabel(r, label))
    return EvaluationSet(tuple(reports))


def _relabel(report, label: str):
    return replace(report, method=label)


def _power_alpha_rows(ev: EvaluationSet, labels: Sequence[str]) -> list[dict]:
    return [{"method": m, "power_pct": _pct(ev.by(m, "H1").rejection_rate),
             "alpha_pct": _pct(ev.by(m, "H0").rejection_rate)} for m in labels]


# ---------------------------------------------------------------------------
# Scenarios
# ---------------------------------------------------------------------------


def _scenario_sweep(budget, data, seed, workers, bundle):
    scales, boundaries = SWEEP_GRIDS[budget]
    design = make_design("tad_sie", _design_overrides(budget))
    rep = sweep(design, data, scales, boundaries, BUDGETS[budget]["n_trials"], seed, workers)
    bundle.reports["sweep"] = rep
    rows = [{"step_size_scale_factor": c.step_size_scale_factor,
             "futility_power_boundary": c.futility_power_boundary,
             "power_pct": _pct(c.power), "alpha_pct": _pct(c.significance),
             "feasible": c.feasible} for c in rep.cells]
    bundle.tables["heatmap"] = (("step_size_scale_factor", "futility_power_boundary",
                                 "power_pct", "alpha_pct", "feasible"), rows)


def _scenario_tradeoff(budget, data, seed, workers, bundle):
    labels = ("TAD-SIE-SE", "TAD-SIE-TE")
    designs = [(labels[0], make_design("tad_sie_se", _design_overrides(budget))),
               (labels[1], make_design("tad_sie_te", _design_overrides(budget)))]
    ev = _evaluate(designs, data, BUDGETS[budget]["n_trials"], seed, workers)
    bundle.reports["tradeoff"] = ev
    rows = []
    for r in ev.reports:
        for quantity, box in (("arm_size", r.arm_size_summary), ("iterations", r.iterations_summary)):
            rows.append({"method": r.method, "hypothesis": r.hypothesis, "quantity": quantity,
                         **box.to_dict()})
    bundle.tables["boxes"] = (("method", "hypothesis", "quantity", "median", "q1", "q3",
                               "whisker_low", "whisker_high", "n_outliers"), rows)


def _scenario_baselines(budget, data, seed, workers, bundle):
    labels = ("Fixed Sample Design", "Standard-TAD", "TAD-SIE-SE", "TAD-SIE-TE")
    designs = [(labels[0], make_design("fixed")),
               (labels[1], make_design("standard_tad")),
               (labels[2], make_design("tad_sie_se", _design_overrides(budget))),
               (labels[3], make_design("tad_sie_te", _design_overrides(budget)))]
    ev = _evaluate(designs, data, BUDGETS[budget]["n_trials"], seed, workers)
    bundle.reports["baselines"] = ev
    bundle.tables["table"] = (("method", "power_pct", "alpha_pct"), _power_alpha_rows(ev, labels))


def _scenario_ablation_moments(budget, data, seed, workers, bundle):
    designs, labels = [], []
    for mode in ("tad_sie_se", "tad_sie_te"):
        for method in ("secrets", "naive"):
            label = f"{'TAD-SIE-SE' if mode.endswith('se') else 'TAD-SIE-TE'} ({method})"
            over = _design_overrides(budget, moment_method=method, cp_moment_method=method)
            designs.append((label, make_design(mode, over)))
            labels.append(label)
    ev = _evaluate(designs, data, BUDGETS[budget]["n_trials"], seed, workers)
    bundle.reports["ablation_moments"] = ev
    bundle.tables["table"] = (("method", "power_pct", "alpha_pct"), _power_alpha_rows(ev, labels))


def _scenario_ablation_tad(budget, data, seed, workers, bundle):
    labels = ("TAD-SIE-SE", "TAD-SIE-TE", "Standard-TAD+SIE")
    designs = [(labels[0], make_design("tad_sie_se", _design_overrides(budget))),
               (labels[1], make_design("tad_sie_te", _design_overrides(budget))),
               (labels[2], make_design("standard_tad_sie", _design_overrides(budget)))]
    ev = _evaluate(designs, data, BUDGETS[budget]["n_trials"], seed, workers)
    bundle.reports["ablation_tad"] = ev
    rows = []
    for m in labels:
        h0, h1 = ev.by(m, "H0"), ev.by(m, "H1")
        uses_futility = m != "Standard-TAD+SIE"
        rows.append({"method": m, "alpha_pct": _pct(h0.rejection_rate),
                     "power_pct": _pct(h1.rejection_rate),
                     "increase_h0_pct": _pct(h0.increase_rate),
                     "increase_h1_pct": _pct(h1.increase_rate),
                     "futility_h0_pct": _pct(h0.futility_rate) if uses_futility else "n/a",
                     "futility_h1_pct": _pct(h1.futility_rate) if uses_futility else "n/a"})
    bundle.tables["table"] = (("method", "alpha_pct", "power_pct", "increase_h0_pct",
                               "increase_h1_pct", "futility_h0_pct", "futility_h1_pct"), rows)


def _scenario_ablation_test(budget, data, seed, workers, bundle):
    designs, rows_spec = [], []
    for mode, scale in (("TAD-SIE-SE", 0.1), ("TAD-SIE-TE", 0.6)):
        over = _design_overrides(budget, step_size_scale_factor=scale)
        designs.append((f"{mode} / SECRETS", make_design("tad_sie", over)))
        designs.append((f"{mode} / Standard", make_design("tad_standard_test", over)))
        rows_spec += [(mode, "SECRETS"), (mode, "Standard")]
    ev = _evaluate(designs, data, BUDGETS[budget]["n_trials"], seed, workers)
    bundle.reports["ablation_test"] = ev
    rows = [{"method": mode, "testing": test,
             "power_pct": _pct(ev.by(f"{mode} / {test}", "H1").rejection_rate),
             "alpha_pct": _pct(ev.by(f"{mode} / {test}", "H0").rejection_rate)}
            for mode, test in rows_spec]
    bundle.tables["table"] = (("method", "testing", "power_pct", "alpha_pct"), rows)


def dependent_ites(shared_sd: float = 1.0, noise_sd: float = 1e-3):
    """ITE builder with maximal dependence: one shared draw plus tiny noise.

    The returned callable maps ``(ctrl, treat, rng)`` to ``2 n`` ITEs that all
    carry the same random shift, so the variance of their mean does not shrink
    with ``n``.
    """
    def build(ctrl, treat, rng):
        n = ctrl.shape[0] + treat.shape[0]
        return shared_sd * rng.standard_normal() + noise_sd * rng.standard_normal(n)
    return build


def independent_ites(ctrl, treat, rng):
    """ITE builder for i.i.d. ITEs: each subject's own first-visit value."""
    return np.concatenate([ctrl[:, 0], treat[:, 0]])


def scaling_points(builder, sizes: Sequence[int], B: int, seed: int) -> list[tuple[int, float]]:
    """``(n, sigma^2)`` pairs where ``sigma^2 = 2 n var(ATE)`` from a bootstrap over ``B`` replicates."""
    out = []
    for n in sizes:
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(int(n),)))
        ctrl = rng.standard_normal((n, 2))
        treat = rng.standard_normal((n, 2))
        v = bootstrap_variance(lambda c, t: builder(c, t, rng), ctrl, treat, B, rng)
        out.append((int(n), variance_of_outcome(v, n)))
    return out


def linear_fit(points: Sequence[tuple[float, float]]) -> dict:
    """Least-squares line with slope, intercept, R^2 and slope t-statistic."""
    x = np.array([p[0] for p in points], dtype=float)
    y = np.array([p[1] for p in points], dtype=float)
    fit = _sps.linregress(x, y)
    t = fit.slope / fit.stderr if fit.stderr > 0 else float("inf") * np.sign(fit.slope)
    return {"slope": float(fit.slope), "intercept": float(fit.intercept),
            "r_squared": float(fit.rvalue ** 2), "slope_t": float(t), "n_points": int(x.size)}


def _scenario_theorem1(budget, data, seed, workers, bundle):
    B = BUDGETS[budget]["B"]
    rows = []
    dep = scaling_points(dependent_ites(), THEOREM1_SIZES, B, seed)
    for n, s2 in dep:
        rows.append({"construction": "dependent", "seed_offset": 0, "n": n, "sigma2": s2})
    pooled = []
    for k in range(THEOREM1_SEEDS[budget]):
        pts = scaling_points(independent_ites, THEOREM1_SIZES, B, seed + 1 + k)
        pooled += pts
        rows += [{"construction": "independent", "seed_offset": 1 + k, "n": n, "sigma2": s2}
                 for n, s2 in pts]
    fits = [{"construction": "dependent", **linear_fit(dep)},
            {"construction": "independent", **linear_fit(pooled)}]
    bundle.tables["points"] = (("construction", "seed_offset", "n", "sigma2"), rows)
    bundle.tables["regression"] = (("construction", "slope", "intercept", "r_squared", "slope_t",
                                    "n_points"), fits)


_SCENARIOS = {
    "sweep": _scenario_sweep,
    "tradeoff": _scenario_tradeoff,
    "baselines": _scenario_baselines,
    "ablation_moments": _scenario_ablation_moments,
    "ablation_tad": _scenario_ablation_tad,
    "ablation_test": _scenario_ablation_test,
    "theorem1": _scenario_theorem1,
}


def repro_suite(scenario: str, budget: str = "quick", seed: int = DEFAULT_SEED,
                data: CohortGenConfig | None = None, workers: int | None = None,
                out_dir=None) -> Bundle:
    """Run a reproduction scenario and optionally write its bundle to ``out_dir``.

    ``quick`` uses 50 trials and ``T = B = 50``; ``full`` uses 100 trials and
    ``T = B = 100``.
    """
    if scenario not in _SCENARIOS:
        raise ConfigError(f"unknown scenario {scenario!r}; expected one of {SCENARIOS}")
    if budget not in BUDGETS:
        raise ConfigError(f"unknown budget {budget!r}; expected one of {tuple(BUDGETS)}")
    data = data or desk_cohort(DEFAULT_EFFECT)
    manifest = {"label": LABEL, "scenario": scenario, "budget": budget, "seed": int(seed),
                "budget_settings": BUDGETS[budget], "cohort": data.to_dict()}
    bundle = Bundle(scenario, budget, int(seed), manifest)
    _SCENARIOS[scenario](budget, data, int(seed), workers, bundle)
    if out_dir is not None:
        bundle.write(out_dir)
    return bundle
