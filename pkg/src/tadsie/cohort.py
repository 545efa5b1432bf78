"""Trial data: a synthetic trajectory generator, CSV ingestion, the change-score
outcome and subject recruitment.

Arms are stored as ``(n_subjects, visits)`` float arrays; ``PatientRecord`` is
the per-row view used for I/O.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Iterator, Union

import numpy as np

from .errors import ConfigError, DatasetParseError, RecruitmentError
from .stats import bootstrap_indices

ARMS = ("control", "treatment")
HYPOTHESES = ("H0", "H1")

SeedLike = Union[None, int, np.random.SeedSequence]


@dataclass(frozen=True)
class PatientRecord:
    subject_id: str
    arm: str
    trajectory: tuple[float, ...]


@dataclass(frozen=True)
class ChangeScore:
    """Primary outcome: score at the endpoint visit minus score at baseline."""

    baseline_index: int
    endpoint_index: int

    def __call__(self, trajectories) -> np.ndarray:
        x = np.asarray(trajectories, dtype=float)
        return x[..., self.endpoint_index] - x[..., self.baseline_index]


def outcome_change_score(trajectory, baseline_index: int, endpoint_index: int) -> float:
    traj = np.asarray(trajectory, dtype=float)
    n = traj.shape[-1]
    for name, idx in (("baseline_index", baseline_index), ("endpoint_index", endpoint_index)):
        if not 0 <= idx < n:
            raise IndexError(f"{name}={idx} outside trajectory of length {n}")
    return float(traj[endpoint_index] - traj[baseline_index])


def _as_arm(x, visits: int | None = None) -> np.ndarray:
    arr = np.array(x, dtype=np.float64, order="C", copy=True)
    if arr.ndim == 1 and visits is not None and arr.size == 0:
        arr = arr.reshape(0, visits)
    if arr.ndim != 2:
        raise ValueError("arm data must be a 2-D (subjects x visits) array")
    if not np.all(np.isfinite(arr)):
        raise ValueError("arm data must not contain missing or non-finite values")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class RctDataset:
    """Two-arm trial data with the visit indices that define the outcome."""

    control: np.ndarray
    treatment: np.ndarray
    baseline_index: int
    endpoint_index: int
    control_ids: tuple[str, ...] = ()
    treatment_ids: tuple[str, ...] = ()

    def __post_init__(self):
        ctrl = _as_arm(self.control)
        treat = _as_arm(self.treatment, ctrl.shape[1])
        if ctrl.shape[1] != treat.shape[1]:
            raise ValueError("control and treatment trajectories differ in length")
        visits = ctrl.shape[1]
        if visits < 2:
            raise ValueError("trajectories need at least two visits")
        if not 0 <= self.baseline_index < self.endpoint_index < visits:
            raise ValueError(
                f"need 0 <= baseline_index < endpoint_index < {visits}, got "
                f"{self.baseline_index}, {self.endpoint_index}"
            )
        for ids, arm in ((self.control_ids, ctrl), (self.treatment_ids, treat)):
            if ids and len(ids) != arm.shape[0]:
                raise ValueError("subject id count does not match arm size")
        object.__setattr__(self, "control", ctrl)
        object.__setattr__(self, "treatment", treat)
        object.__setattr__(self, "control_ids", tuple(str(i) for i in self.control_ids))
        object.__setattr__(self, "treatment_ids", tuple(str(i) for i in self.treatment_ids))

    @property
    def visits(self) -> int:
        return self.control.shape[1]

    @property
    def n_control(self) -> int:
        return self.control.shape[0]

    @property
    def n_treatment(self) -> int:
        return self.treatment.shape[0]

    @property
    def arm_size(self) -> int:
        """Current per-arm size (the smaller arm if they differ)."""
        return min(self.n_control, self.n_treatment)

    @property
    def outcome(self) -> ChangeScore:
        return ChangeScore(self.baseline_index, self.endpoint_index)

    def ids(self, arm: str) -> tuple[str, ...]:
        if arm == "control":
            return self.control_ids or tuple(f"c{i}" for i in range(self.n_control))
        if arm == "treatment":
            return self.treatment_ids or tuple(f"t{i}" for i in range(self.n_treatment))
        raise ValueError(f"unknown arm {arm!r}")

    def records(self) -> Iterator[PatientRecord]:
        for arm, data in (("control", self.control), ("treatment", self.treatment)):
            for sid, row in zip(self.ids(arm), data):
                yield PatientRecord(sid, arm, tuple(float(v) for v in row))

    def append(self, control_new, treatment_new) -> "RctDataset":
        """New dataset with the given rows concatenated after the existing ones."""
        ctrl_new = np.asarray(control_new, dtype=float).reshape(-1, self.visits)
        treat_new = np.asarray(treatment_new, dtype=float).reshape(-1, self.visits)
        return RctDataset(
            np.concatenate([self.control, ctrl_new]),
            np.concatenate([self.treatment, treat_new]),
            self.baseline_index,
            self.endpoint_index,
        )

    def __eq__(self, other):
        if not isinstance(other, RctDataset):
            return NotImplemented
        return (
            self.baseline_index == other.baseline_index
            and self.endpoint_index == other.endpoint_index
            and self.ids("control") == other.ids("control")
            and self.ids("treatment") == other.ids("treatment")
            and np.array_equal(self.control, other.control)
            and np.array_equal(self.treatment, other.treatment)
        )

    __hash__ = None


# ---------------------------------------------------------------------------
# Synthetic generator
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CohortGenConfig:
    """Latent-factor trajectory model.

    Subject ``i`` at visit ``v`` scores
    ``b_i + drift*v + sum_k L_ik cos(pi*k*v/(V-1)) + eps_iv``; treated subjects
    add ``tau_i`` ramped linearly from the baseline visit to the endpoint.
    """

    visits: int = 8
    baseline_index: int = 3
    endpoint_index: int = 7
    baseline_mean: float = 40.0
    baseline_sd: float = 8.0
    control_drift: float = -1.0
    treatment_effect_mean: float = 0.0
    treatment_effect_sd: float = 0.5
    noise_sd: float = 1.0
    latent_factor_count: int = 2
    latent_loading_sd: float = 2.0

    def __post_init__(self):
        if self.visits < 2:
            raise ConfigError("visits must be at least 2")
        if not 0 <= self.baseline_index < self.endpoint_index < self.visits:
            raise ConfigError("need 0 <= baseline_index < endpoint_index < visits")
        if self.latent_factor_count < 1:
            raise ConfigError("latent_factor_count must be at least 1")
        for name in ("baseline_sd", "treatment_effect_sd", "noise_sd", "latent_loading_sd"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")

    @classmethod
    def from_dict(cls, data: dict) -> "CohortGenConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown cohort keys: {sorted(unknown)}")
        return cls(**data)

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def factor_matrix(self) -> np.ndarray:
        v = np.arange(self.visits) / (self.visits - 1)
        k = np.arange(1, self.latent_factor_count + 1)[:, None]
        return np.cos(np.pi * k * v)

    def effect_ramp(self) -> np.ndarray:
        v = np.arange(self.visits, dtype=float)
        span = self.endpoint_index - self.baseline_index
        return np.clip((v - self.baseline_index) / span, 0.0, 1.0)

    def control_outcome_variance(self) -> float:
        """Population variance of the change score in the control arm."""
        f = self.factor_matrix()
        d_f = f[:, self.endpoint_index] - f[:, self.baseline_index]
        return float(self.latent_loading_sd ** 2 * np.sum(d_f ** 2) + 2.0 * self.noise_sd ** 2)


def desk_cohort(standardized_effect: float = 0.25, **overrides) -> CohortGenConfig:
    """Generator whose population ATE is ``standardized_effect`` control-outcome
    standard deviations."""
    base = CohortGenConfig(**overrides)
    sd = math.sqrt(base.control_outcome_variance())
    return replace(base, treatment_effect_mean=standardized_effect * sd)


def _draw_subjects(config: CohortGenConfig, n: int, rng: np.random.Generator, treated: bool) -> np.ndarray:
    # One row of standard normals per subject keeps draws prefix-consistent.
    k, v = config.latent_factor_count, config.visits
    z = rng.standard_normal((n, 1 + k + v + 1))
    base = config.baseline_mean + config.baseline_sd * z[:, :1]
    loadings = config.latent_loading_sd * z[:, 1 : 1 + k]
    noise = config.noise_sd * z[:, 1 + k : 1 + k + v]
    visits = np.arange(v, dtype=float)
    traj = base + config.control_drift * visits + loadings @ config.factor_matrix() + noise
    if treated:
        tau = config.treatment_effect_mean + config.treatment_effect_sd * z[:, -1:]
        traj = traj + tau * config.effect_ramp()
    return traj


def generate_cohort(config: CohortGenConfig, n_control: int, n_treatment: int,
                    rng: np.random.Generator) -> RctDataset:
    if n_control < 1 or n_treatment < 1:
        raise ConfigError("arm sizes must be at least 1")
    ctrl = _draw_subjects(config, n_control, rng, treated=False)
    treat = _draw_subjects(config, n_treatment, rng, treated=True)
    return RctDataset(
        ctrl,
        treat,
        config.baseline_index,
        config.endpoint_index,
        control_ids=tuple(f"c{i:04d}" for i in range(n_control)),
        treatment_ids=tuple(f"t{i:04d}" for i in range(n_treatment)),
    )


# ---------------------------------------------------------------------------
# CSV format
# ---------------------------------------------------------------------------


def write_dataset(dataset: RctDataset, sink) -> None:
    """Write ``subject_id,arm,v0..v{V-1}`` rows (UTF-8 text)."""
    writer = csv.writer(sink, lineterminator="\n")
    writer.writerow(["subject_id", "arm"] + [f"v{j}" for j in range(dataset.visits)])
    for rec in dataset.records():
        writer.writerow([rec.subject_id, rec.arm] + [repr(v) for v in rec.trajectory])


def dataset_metadata(dataset: RctDataset) -> dict:
    return {
        "baseline_index": dataset.baseline_index,
        "endpoint_index": dataset.endpoint_index,
        "visits": dataset.visits,
    }


def load_dataset(source, baseline_index: int | None = None,
                 endpoint_index: int | None = None) -> RctDataset:
    """Parse the cohort CSV from a text or binary stream.

    Without explicit indices the outcome spans the first to the last visit.
    """
    if isinstance(source, (bytes, bytearray)):
        source = io.BytesIO(source)
    if isinstance(source, io.BufferedIOBase) or isinstance(source, io.RawIOBase) or (
        hasattr(source, "mode") and "b" in getattr(source, "mode", "")
    ):
        source = io.TextIOWrapper(source, encoding="utf-8", newline="")
    reader = csv.reader(source)
    try:
        header = next(reader)
    except StopIteration:
        raise DatasetParseError("empty file", line=1) from None
    visits = len(header) - 2
    expected = ["subject_id", "arm"] + [f"v{j}" for j in range(max(visits, 0))]
    if visits < 2 or [h.strip() for h in header] != expected:
        raise DatasetParseError(
            "header must be subject_id,arm,v0,...,v{V-1} with V >= 2", line=1
        )
    rows = {"control": [], "treatment": []}
    ids = {"control": [], "treatment": []}
    for line_no, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise DatasetParseError(f"expected {len(header)} fields, found {len(row)}", line=line_no)
        arm = row[1].strip()
        if arm not in ARMS:
            raise DatasetParseError(f"unknown arm label {arm!r}", line=line_no)
        try:
            values = [float(cell) for cell in row[2:]]
        except ValueError:
            raise DatasetParseError("non-numeric trajectory value", line=line_no) from None
        if not all(math.isfinite(v) for v in values):
            raise DatasetParseError("missing or non-finite trajectory value", line=line_no)
        rows[arm].append(values)
        ids[arm].append(row[0].strip())
    if not rows["control"] or not rows["treatment"]:
        raise DatasetParseError("both arms need at least one subject")
    b = 0 if baseline_index is None else baseline_index
    e = visits - 1 if endpoint_index is None else endpoint_index
    try:
        return RctDataset(
            np.array(rows["control"]),
            np.array(rows["treatment"]),
            b,
            e,
            control_ids=tuple(ids["control"]),
            treatment_ids=tuple(ids["treatment"]),
        )
    except ValueError as exc:
        raise DatasetParseError(str(exc)) from None


def sidecar_path(csv_path) -> Path:
    return Path(csv_path).with_suffix(".json")


def save_dataset(dataset: RctDataset, csv_path) -> None:
    """Write the CSV plus its JSON metadata sidecar."""
    csv_path = Path(csv_path)
    with open(csv_path, "w", encoding="utf-8", newline="") as fh:
        write_dataset(dataset, fh)
    with open(sidecar_path(csv_path), "w", encoding="utf-8") as fh:
        json.dump(dataset_metadata(dataset), fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_dataset(csv_path) -> RctDataset:
    """Load a CSV and, when present, its sidecar's baseline/endpoint indices."""
    csv_path = Path(csv_path)
    meta = {}
    side = sidecar_path(csv_path)
    if side.exists():
        try:
            meta = json.loads(side.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise DatasetParseError(f"bad metadata sidecar {side}: {exc}") from None
    with open(csv_path, "rb") as fh:
        return load_dataset(fh, meta.get("baseline_index"), meta.get("endpoint_index"))


# ---------------------------------------------------------------------------
# Recruitment
# ---------------------------------------------------------------------------


def _arm_streams(seed: SeedLike) -> tuple[np.random.Generator, np.random.Generator]:
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    ctrl_ss, treat_ss = ss.spawn(2)
    return np.random.default_rng(ctrl_ss), np.random.default_rng(treat_ss)


@dataclass
class GeneratorSource:
    """Fresh synthetic subjects. Under ``H0`` the treatment arm follows the
    control law."""

    config: CohortGenConfig
    hypothesis: str = "H1"
    seed: SeedLike = None
    _streams: tuple = field(init=False, repr=False)

    def __post_init__(self):
        if self.hypothesis not in HYPOTHESES:
            raise ConfigError(f"hypothesis must be one of {HYPOTHESES}")
        self._streams = _arm_streams(self.seed)

    visits = property(lambda self: self.config.visits)
    baseline_index = property(lambda self: self.config.baseline_index)
    endpoint_index = property(lambda self: self.config.endpoint_index)

    def recruit(self, n_step: int) -> tuple[np.ndarray, np.ndarray]:
        if n_step < 1:
            raise RecruitmentError("n_step must be at least 1")
        ctrl_rng, treat_rng = self._streams
        ctrl = _draw_subjects(self.config, n_step, ctrl_rng, treated=False)
        treat = _draw_subjects(self.config, n_step, treat_rng, treated=self.hypothesis == "H1")
        return ctrl, treat


@dataclass
class PoolSource:
    """Subjects resampled from an observed trial.

    ``H1`` draws each arm from its own observed arm; ``H0`` draws both arms
    from the observed control arm.
    """

    dataset: RctDataset
    hypothesis: str = "H1"
    seed: SeedLike = None
    replace: bool = True
    _streams: tuple = field(init=False, repr=False)
    _order: dict = field(init=False, repr=False)
    _used: dict = field(init=False, repr=False)

    def __post_init__(self):
        if self.hypothesis not in HYPOTHESES:
            raise ConfigError(f"hypothesis must be one of {HYPOTHESES}")
        self._streams = _arm_streams(self.seed)
        self._order, self._used = {}, {}
        if not self.replace:
            ctrl_rng, treat_rng = self._streams
            if self.hypothesis == "H0":
                perm = ctrl_rng.permutation(self.dataset.n_control)
                half = perm.size // 2
                self._order = {"control": perm[:half], "treatment": perm[half:]}
            else:
                self._order = {
                    "control": ctrl_rng.permutation(self.dataset.n_control),
                    "treatment": treat_rng.permutation(self.dataset.n_treatment),
                }
            self._used = {"control": 0, "treatment": 0}

    visits = property(lambda self: self.dataset.visits)
    baseline_index = property(lambda self: self.dataset.baseline_index)
    endpoint_index = property(lambda self: self.dataset.endpoint_index)

    def _pool(self, arm: str) -> np.ndarray:
        if arm == "treatment" and self.hypothesis == "H1":
            return self.dataset.treatment
        return self.dataset.control

    def recruit(self, n_step: int) -> tuple[np.ndarray, np.ndarray]:
        if n_step < 1:
            raise RecruitmentError("n_step must be at least 1")
        out = []
        for arm, rng in zip(ARMS, self._streams):
            pool = self._pool(arm)
            if self.replace:
                out.append(pool[bootstrap_indices(pool.shape[0], n_step, rng)])
                continue
            order, used = self._order[arm], self._used[arm]
            if used + n_step > order.size:
                raise RecruitmentError(
                    f"{arm} pool exhausted: {order.size - used} subjects left, {n_step} requested"
                )
            out.append(pool[order[used : used + n_step]])
            self._used[arm] = used + n_step
        return out[0], out[1]


def recruit(source, n_step: int) -> tuple[np.ndarray, np.ndarray]:
    """``n_step`` new subjects per arm from ``source``."""
    return source.recruit(n_step)


def empty_dataset(source) -> RctDataset:
    v = source.visits
    return RctDataset(np.empty((0, v)), np.empty((0, v)), source.baseline_index, source.endpoint_index)
