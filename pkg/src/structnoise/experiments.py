"""Multi-trial experiment orchestration, summaries and result CSVs."""
from __future__ import annotations

import csv
import functools
import io
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .graphgen import Graph, HouseRingConfig, build_ring_of_houses
from .noise import NoiseSpec, add_noise, parse_mode
from .trainer import (
    AUG_NOISE_STREAM,
    AUG_ORDER_STREAM,
    INIT_STREAM,
    NOISE_STREAM,
    SPLIT_STREAM,
    AugmentConfig,
    InfeasibleSplit,
    SplitConfig,
    TrainOptions,
    TrialFailed,
    TrialResult,
    derive_seed,
    make_splits,
    train_augmented,
    train_baseline,
    train_on_surrogate,
)

EXPERIMENT_KINDS = ("noise_sweep", "samples_sweep", "augment_same", "augment_small", "surrogate_compare")

VARIANTS = {
    "noise_sweep": ("baseline",),
    "samples_sweep": ("baseline",),
    "augment_same": ("baseline", "augment_same"),
    "augment_small": ("baseline", "augment_small"),
    "surrogate_compare": ("baseline", "surrogate"),
}

TRIAL_COLUMNS = ("experiment", "mode", "p", "l", "trial", "seed", "best_epoch", "test_f1")
SUMMARY_COLUMNS = ("experiment", "mode", "p", "l", "trials", "median", "q1", "q3", "min", "max")
IMPROVEMENT_COLUMNS = ("variant", "mode", "p", "l", "median_baseline", "median_variant", "improvement_pct")

DEFAULT_P_VALUES = (0.05, 0.1, 0.15, 0.2, 0.25, 0.3, 0.35, 0.4, 0.45, 0.5)
DEFAULT_L_VALUES = (1, 2, 4, 8, 16, 32, 64, 128, 256)


class ConfigError(ValueError):
    """Invalid experiment configuration; the message names the offending field."""


@dataclass(frozen=True)
class ExperimentSpec:
    kind: str = "noise_sweep"
    num_houses: int = 333
    ring_period: int = 3
    small_houses: int = 33
    modes: tuple[str, ...] = ("khop2", "khop3", "global")
    p_values: tuple[float, ...] = DEFAULT_P_VALUES
    l_values: tuple[int, ...] = (20,)
    trials: int = 50
    epochs: int = 200
    seed: int = 0
    n_small: int = 10
    val_size: int = 200
    test_size: int = 1000
    p_max: float = 0.5
    lr: float = 0.01
    weight_decay: float = 5e-4
    hidden_dim: int = 32
    eps_gin: float = 0.0
    relu_after_aggregation: bool = True
    output_dir: str = "results"

    def __post_init__(self):
        if self.kind not in EXPERIMENT_KINDS:
            raise ConfigError(f"kind: unknown experiment {self.kind!r}; expected one of {', '.join(EXPERIMENT_KINDS)}")
        if not self.modes:
            raise ConfigError("modes: must list at least one noise mode")
        for m in self.modes:
            try:
                parse_mode(m)
            except ValueError as exc:
                raise ConfigError(f"modes: {exc}") from None
        if not self.p_values:
            raise ConfigError("p_values: must list at least one noise ratio")
        for p in self.p_values:
            if not 0 <= p <= self.p_max:
                raise ConfigError(f"p_values: {p} outside [0, {self.p_max}]")
        if not self.l_values or min(self.l_values) < 1:
            raise ConfigError("l_values: need at least one value, all >= 1")
        for name in ("trials", "num_houses", "ring_period", "small_houses", "n_small", "hidden_dim"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name}: must be >= 1")
        if self.epochs < 0:
            raise ConfigError("epochs: must be >= 0")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed: must be an unsigned 64-bit integer")

    @property
    def variants(self) -> tuple[str, ...]:
        return VARIANTS[self.kind]

    @property
    def options(self) -> TrainOptions:
        return TrainOptions(
            epochs=self.epochs,
            lr=self.lr,
            weight_decay=self.weight_decay,
            hidden_dim=self.hidden_dim,
            eps_gin=self.eps_gin,
            relu_after_aggregation=self.relu_after_aggregation,
        )


@dataclass(frozen=True, order=True)
class TrialTask:
    variant: str
    mode: str
    p: float
    l: int
    trial: int


@dataclass(frozen=True)
class TrialRecord:
    experiment: str
    mode: str
    p: float
    l: int
    trial: int
    seed: int
    best_epoch: int
    test_f1: float


@dataclass(frozen=True)
class CellSummary:
    experiment: str
    mode: str
    p: float
    l: int
    trials: int
    median: float
    q1: float
    q3: float
    min: float
    max: float


@dataclass
class ExperimentReport:
    records: list[TrialRecord]
    cells: list[CellSummary] = field(default_factory=list)
    improvements: list[dict] = field(default_factory=list)

    def cell(self, experiment: str, mode: str, p: float, l: int) -> CellSummary:
        for c in self.cells:
            if (c.experiment, c.mode, c.p, c.l) == (experiment, mode, p, l):
                return c
        raise KeyError((experiment, mode, p, l))

    def scores(self, experiment: str, mode: str, p: float, l: int) -> np.ndarray:
        rows = [r for r in self.records if (r.experiment, r.mode, r.p, r.l) == (experiment, mode, p, l)]
        return np.array([r.test_f1 for r in sorted(rows, key=lambda r: r.trial)])


def relative_improvement(median_aug: float, median_base: float) -> float:
    """Percentage change of ``median_aug`` over ``median_base``."""
    if median_base <= 0:
        raise ZeroDivisionError("baseline median must be positive")
    return 100.0 * (median_aug - median_base) / median_base


@functools.lru_cache(maxsize=8)
def _base_graph(num_houses: int, ring_period: int) -> Graph:
    return build_ring_of_houses(HouseRingConfig(num_houses, ring_period))


def trial_seed(master: int, trial: int) -> int:
    return derive_seed(master, trial)


def tasks_for(spec: ExperimentSpec, variants: Optional[Sequence[str]] = None) -> list[TrialTask]:
    variants = spec.variants if variants is None else tuple(variants)
    return [
        TrialTask(v, mode, p, l, t)
        for v in variants
        for mode in spec.modes
        for p in spec.p_values
        for l in spec.l_values
        for t in range(spec.trials)
    ]


def run_trial(spec: ExperimentSpec, task: TrialTask) -> TrialRecord:
    """One trial. Every variant of the same (mode, p, l, trial) shares noise, split and init seeds."""
    ts = trial_seed(spec.seed, task.trial)
    base = _base_graph(spec.num_houses, spec.ring_period)
    target = add_noise(base, NoiseSpec(task.p, task.mode, derive_seed(ts, NOISE_STREAM)))
    split_cfg = SplitConfig(
        per_class_train=task.l,
        val_size=spec.val_size,
        test_size=spec.test_size,
        seed=derive_seed(ts, SPLIT_STREAM),
        clip_test=spec.kind == "samples_sweep",
    )
    splits = make_splits(target, split_cfg)
    init = derive_seed(ts, INIT_STREAM)
    opts = spec.options
    if task.variant == "baseline":
        res = train_baseline(target, splits, opts, init)
    elif task.variant == "augment_same":
        aug = add_noise(base, NoiseSpec(task.p, task.mode, derive_seed(ts, AUG_NOISE_STREAM, 0)))
        res = train_augmented(target, splits, [aug], AugmentConfig("same"), opts, init)
    elif task.variant == "augment_small":
        small = _base_graph(spec.small_houses, spec.ring_period)
        aug = [
            add_noise(small, NoiseSpec(task.p, task.mode, derive_seed(ts, AUG_NOISE_STREAM, j)))
            for j in range(spec.n_small)
        ]
        res = train_augmented(
            target, splits, aug, AugmentConfig("small", spec.n_small), opts, init, derive_seed(ts, AUG_ORDER_STREAM)
        )
    elif task.variant == "surrogate":
        surrogate = add_noise(base, NoiseSpec(task.p, task.mode, derive_seed(ts, AUG_NOISE_STREAM, 0)))
        res = train_on_surrogate(surrogate, target, split_cfg, opts, init, target_splits=splits)
    else:
        raise ValueError(f"unknown variant {task.variant!r}")
    return _record(task, ts, res)


def _record(task: TrialTask, seed: int, res: TrialResult) -> TrialRecord:
    return TrialRecord(task.variant, task.mode, task.p, task.l, task.trial, seed, res.best_epoch, res.test_f1)


def _run_task(args: tuple[ExperimentSpec, TrialTask]) -> TrialRecord:
    spec, task = args
    try:
        return run_trial(spec, task)
    except Exception as exc:  # surfaced with the trial index by the caller
        raise TrialFailed(task.trial, exc) from exc


def check_feasible(spec: ExperimentSpec) -> None:
    """Fail early on (l, split size) combinations the target graph cannot supply."""
    base = _base_graph(spec.num_houses, spec.ring_period)
    for l in spec.l_values:
        cfg = SplitConfig(l, spec.val_size, spec.test_size, 0, clip_test=spec.kind == "samples_sweep")
        try:
            make_splits(base, cfg)
        except InfeasibleSplit as exc:
            raise ConfigError(f"l_values: l={l} is infeasible: {exc}") from None


def run_trials(
    spec: ExperimentSpec,
    jobs: int = 1,
    variants: Optional[Sequence[str]] = None,
    progress=None,
) -> ExperimentReport:
    """Run every (variant, mode, p, l, trial) task and summarize per cell.

    Results are keyed by task, so the report does not depend on ``jobs`` or on
    completion order.
    """
    check_feasible(spec)
    tasks = tasks_for(spec, variants)
    records: dict[TrialTask, TrialRecord] = {}
    if jobs <= 1:
        for task in tasks:
            records[task] = _run_task((spec, task))
            if progress:
                progress(task, records[task])
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for task, rec in zip(tasks, pool.map(_run_task, [(spec, t) for t in tasks])):
                records[task] = rec
                if progress:
                    progress(task, rec)
    ordered = [records[t] for t in tasks]
    return build_report(ordered)


def summarize(scores: Sequence[float]) -> tuple[float, float, float, float, float]:
    """(median, q1, q3, min, max) with linear-interpolated quartiles."""
    a = np.asarray(scores, dtype=np.float64)
    q1, med, q3 = np.percentile(a, [25, 50, 75])
    return float(med), float(q1), float(q3), float(a.min()), float(a.max())


def build_report(records: Sequence[TrialRecord]) -> ExperimentReport:
    groups: dict[tuple, list[float]] = {}
    for r in records:
        groups.setdefault((r.experiment, r.mode, r.p, r.l), []).append(r.test_f1)
    cells = [CellSummary(*key, len(v), *summarize(v)) for key, v in groups.items()]
    report = ExperimentReport(list(records), cells)
    report.improvements = improvement_table(cells)
    return report


def improvement_table(cells: Sequence[CellSummary]) -> list[dict]:
    base = {(c.mode, c.p, c.l): c.median for c in cells if c.experiment == "baseline"}
    rows = []
    for c in cells:
        if c.experiment == "baseline" or (c.mode, c.p, c.l) not in base:
            continue
        b = base[(c.mode, c.p, c.l)]
        rows.append(
            {
                "variant": c.experiment,
                "mode": c.mode,
                "p": c.p,
                "l": c.l,
                "median_baseline": b,
                "median_variant": c.median,
                "improvement_pct": relative_improvement(c.median, b),
            }
        )
    return rows


# ---------------------------------------------------------------- CSV output


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _csv_text(columns: Sequence[str], rows: Iterable[Sequence]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def trials_csv(records: Sequence[TrialRecord]) -> str:
    return _csv_text(TRIAL_COLUMNS, ([getattr(r, c) for c in TRIAL_COLUMNS] for r in records))


def summary_csv(cells: Sequence[CellSummary]) -> str:
    return _csv_text(SUMMARY_COLUMNS, ([getattr(c, k) for k in SUMMARY_COLUMNS] for c in cells))


def improvement_csv(rows: Sequence[dict]) -> str:
    return _csv_text(IMPROVEMENT_COLUMNS, ([r[k] for k in IMPROVEMENT_COLUMNS] for r in rows))


def improvement_grid(rows: Sequence[dict], variant: str) -> str:
    """Improvement percentages laid out as p rows by mode columns."""
    rows = [r for r in rows if r["variant"] == variant]
    if not rows:
        return ""
    modes = list(dict.fromkeys(r["mode"] for r in rows))
    ps = sorted(set(r["p"] for r in rows))
    ls = sorted(set(r["l"] for r in rows))
    lines = []
    for l in ls:
        lines.append(f"{variant} (l={l}): percentage median F1 change over baseline")
        lines.append("p".ljust(8) + "".join(m.rjust(10) for m in modes))
        for p in ps:
            vals = {r["mode"]: r["improvement_pct"] for r in rows if r["p"] == p and r["l"] == l}
            lines.append(f"{p:<8g}" + "".join(f"{vals[m]:10.2f}" if m in vals else " " * 10 for m in modes))
    return "\n".join(lines) + "\n"


def summary_text(cells: Sequence[CellSummary]) -> str:
    head = f"{'experiment':<15}{'mode':<8}{'p':>6}{'l':>5}{'n':>5}{'median':>9}{'q1':>9}{'q3':>9}{'min':>9}{'max':>9}"
    lines = [head]
    for c in cells:
        lines.append(
            f"{c.experiment:<15}{c.mode:<8}{c.p:>6g}{c.l:>5d}{c.trials:>5d}"
            f"{c.median:>9.4f}{c.q1:>9.4f}{c.q3:>9.4f}{c.min:>9.4f}{c.max:>9.4f}"
        )
    return "\n".join(lines) + "\n"


def write_report(report: ExperimentReport, out_dir: str | Path, name: str) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "trials": out / f"{name}_trials.csv",
        "summary": out / f"{name}_summary.csv",
        "text": out / f"{name}_summary.txt",
    }
    paths["trials"].write_text(trials_csv(report.records))
    paths["summary"].write_text(summary_csv(report.cells))
    text = summary_text(report.cells)
    if report.improvements:
        paths["improvement"] = out / f"{name}_improvement.csv"
        paths["improvement"].write_text(improvement_csv(report.improvements))
        for variant in dict.fromkeys(r["variant"] for r in report.improvements):
            text += "\n" + improvement_grid(report.improvements, variant)
    paths["text"].write_text(text)
    return paths


class SchemaError(ValueError):
    pass


def read_trials_csv(path: str | Path) -> list[TrialRecord]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            return []
        if tuple(header) != TRIAL_COLUMNS:
            raise SchemaError(f"{path}: expected columns {','.join(TRIAL_COLUMNS)}, got {','.join(header)}")
        out = []
        for row in reader:
            if len(row) != len(TRIAL_COLUMNS):
                raise SchemaError(f"{path}: malformed row {row}")
            out.append(
                TrialRecord(row[0], row[1], float(row[2]), int(row[3]), int(row[4]), int(row[5]), int(row[6]), float(row[7]))
            )
        return out
