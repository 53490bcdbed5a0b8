"""Planning and execution of the performance-grid sweeps.

Three kinds of grid points feed the curve fits:

* STL: one task trained alone on its first ``m`` folds.
* MTL: all tasks trained together on their first ``m`` folds.
* STAG: the MTL reference at ``m`` plus one extra fold of labels for a
  single auxiliary task; comparing against the reference isolates that
  task's sample-based transfer onto every other task.

STAG entries reuse the seed of their MTL reference so the two runs
differ only in data, never in training noise. Entries are independent
pure jobs; execution order cannot change the output because results
are keyed and written in sorted spec order, and each job pins its BLAS
pool to one thread so parallel and serial runs agree bitwise.
"""

from __future__ import annotations

import csv
import dataclasses
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from threadpoolctl import threadpool_limits

from .data import Dataset, FoldAssignment, TrainingSelection, training_subset
from .errors import ConfigError, MtlcError, SpecMismatchError
from .learner import ModelConfig, predict, train
from .metrics import task_metrics
from .util import config_hash, derive_seed, fmt_float, sha256_array

logger = logging.getLogger(__name__)

KIND_STL = "STL"
KIND_MTL = "MTL"
KIND_STAG = "STAG"
_KIND_ORDER = {KIND_STL: 0, KIND_MTL: 1, KIND_STAG: 2}

GRID_COLUMNS = [
    "shift", "kind", "m", "target_task", "aux_task", "task",
    "n_t", "n_sigma", "n_aux", "auroc", "aupr",
    "n_test_pos", "n_test_neg", "defined", "seed", "config_hash",
]


@dataclass(frozen=True)
class GridPointSpec:
    """One training job: (shift, kind, m) plus the kind's task fields.

    ``target_task`` is set for STL entries only and ``aux_task`` for
    STAG entries only; -1 marks an unused field.
    """

    shift: int
    kind: str
    m: int
    target_task: int = -1
    aux_task: int = -1

    def sort_key(self):
        return (self.shift, _KIND_ORDER[self.kind], self.m, self.target_task, self.aux_task)

    def key(self) -> str:
        return f"s{self.shift}:{self.kind}:m{self.m}:t{self.target_task}:a{self.aux_task}"


@dataclass(frozen=True)
class TrainSettings:
    """Per-kind learner settings; widths and seeds are filled at run time."""

    r: int = 64
    learning_rate: float = 1e-4
    epochs: int = 300
    batch_size: int = 128

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass(frozen=True)
class GridPlan:
    K: int
    n_folds: int
    m_max: int
    shifts: tuple[int, ...]
    master_seed: int
    stl: TrainSettings
    mtl: TrainSettings
    entries: tuple[GridPointSpec, ...]

    def entry_seed(self, spec: GridPointSpec) -> int:
        """Per-entry training seed; STAG reuses its MTL reference seed."""
        if spec.kind == KIND_STAG:
            ref = GridPointSpec(shift=spec.shift, kind=KIND_MTL, m=spec.m)
            return derive_seed(self.master_seed, ref.key())
        return derive_seed(self.master_seed, spec.key())

    def settings_for(self, spec: GridPointSpec) -> TrainSettings:
        return self.stl if spec.kind == KIND_STL else self.mtl

    def expected_rows(self, spec: GridPointSpec) -> int:
        return 1 if spec.kind == KIND_STL else self.K


def plan_grid(
    K: int,
    n_folds: int,
    m_max: int,
    shifts,
    master_seed: int = 0,
    stl: TrainSettings = TrainSettings(epochs=40),
    mtl: TrainSettings = TrainSettings(epochs=300),
) -> GridPlan:
    """Enumerate all grid entries for the given sweep dimensions.

    Per shift: one STL entry per (task, m <= m_max), one MTL entry per
    m, and one STAG entry per (m <= m_max - 1, auxiliary task), which
    leaves room for the augmenting fold and the held-out test fold.
    """
    if K < 1:
        raise ConfigError("K must be >= 1")
    if not (1 <= m_max <= n_folds - 1):
        raise ConfigError("m_max must lie in [1, n_folds - 1]")
    shifts = tuple(int(s) for s in shifts)
    if len(set(shifts)) != len(shifts) or not shifts:
        raise ConfigError("shifts must be non-empty and unique")
    if any(not (0 <= s < n_folds) for s in shifts):
        raise ConfigError("shifts must lie in [0, n_folds)")
    entries = []
    for shift in shifts:
        for t in range(K):
            for m in range(1, m_max + 1):
                entries.append(GridPointSpec(shift=shift, kind=KIND_STL, m=m, target_task=t))
        for m in range(1, m_max + 1):
            entries.append(GridPointSpec(shift=shift, kind=KIND_MTL, m=m))
        for m in range(1, m_max):
            for j in range(K):
                entries.append(GridPointSpec(shift=shift, kind=KIND_STAG, m=m, aux_task=j))
    return GridPlan(
        K=K, n_folds=n_folds, m_max=m_max, shifts=shifts,
        master_seed=master_seed, stl=stl, mtl=mtl,
        entries=tuple(sorted(entries, key=GridPointSpec.sort_key)),
    )


@dataclass(frozen=True)
class TaskRecord:
    """Realized counts and test metrics for one task at one grid point."""

    task: int
    n_t: float
    n_sigma: float
    n_aux: float
    auroc: float | None
    aupr: float | None
    n_test_pos: int
    n_test_neg: int

    @property
    def defined(self) -> bool:
        return self.auroc is not None and self.aupr is not None


@dataclass(frozen=True)
class GridObservation:
    spec: GridPointSpec
    seed: int
    records: tuple[TaskRecord, ...]
    error: str | None = None


def grid_config_hash(plan: GridPlan, ds: Dataset, fa: FoldAssignment) -> str:
    """Hash of every setting that affects grid numbers (not parallelism)."""
    return config_hash(
        {
            "K": plan.K,
            "n_folds": plan.n_folds,
            "m_max": plan.m_max,
            "shifts": list(plan.shifts),
            "master_seed": plan.master_seed,
            "stl": plan.stl.as_dict(),
            "mtl": plan.mtl.as_dict(),
            "dataset": sha256_array(ds.features, ds.labels, ds.mask),
            "folds": sha256_array(fa.fold_of_row) + f":{fa.n_folds}",
        }
    )


def _selection_for(
    spec: GridPointSpec, ds: Dataset, fa: FoldAssignment
) -> tuple[TrainingSelection, float]:
    shifted = fa.with_shift(spec.shift)
    if spec.kind == KIND_STL:
        counts = np.zeros(ds.n_tasks, dtype=int)
        counts[spec.target_task] = spec.m
        return training_subset(ds, shifted, counts), 0.0
    if spec.kind == KIND_MTL:
        return training_subset(ds, shifted, spec.m), 0.0
    sel = training_subset(ds, shifted, spec.m, extra=(spec.aux_task, spec.m))
    positions = shifted.positions()
    extra_count = float((ds.mask[:, spec.aux_task] & (positions == spec.m)).sum())
    return sel, extra_count


def _records_for(
    spec: GridPointSpec,
    sel: TrainingSelection,
    extra_count: float,
    metrics: dict | None,
) -> tuple[TaskRecord, ...]:
    n = sel.n_per_task
    total = float(n.sum())
    tasks = [spec.target_task] if spec.kind == KIND_STL else range(len(n))
    records = []
    for t in tasks:
        n_t = float(n[t])
        if spec.kind == KIND_STL:
            n_sigma, n_aux = 0.0, 0.0
        elif spec.kind == KIND_MTL:
            n_sigma, n_aux = total - n_t, 0.0
        elif t == spec.aux_task:
            # the auxiliary's own record folds the extra labels into n_t
            n_sigma, n_aux = total - n_t, 0.0
        else:
            n_sigma = total - n_t - float(n[spec.aux_task])
            n_aux = extra_count
        tm = metrics.get(t) if metrics else None
        records.append(
            TaskRecord(
                task=int(t),
                n_t=n_t,
                n_sigma=n_sigma,
                n_aux=n_aux,
                auroc=tm.auroc if tm else None,
                aupr=tm.aupr if tm else None,
                n_test_pos=tm.n_pos if tm else 0,
                n_test_neg=tm.n_neg if tm else 0,
            )
        )
    return tuple(records)


def run_entry(spec: GridPointSpec, plan: GridPlan, ds: Dataset, fa: FoldAssignment) -> GridObservation:
    """Train and evaluate one grid entry (pure; safe to run anywhere)."""
    seed = plan.entry_seed(spec)
    with threadpool_limits(limits=1):
        sel, extra_count = _selection_for(spec, ds, fa)
        settings = plan.settings_for(spec)
        cfg = ModelConfig(
            d=ds.features.shape[1],
            r=settings.r,
            K=ds.n_tasks,
            learning_rate=settings.learning_rate,
            epochs=settings.epochs,
            batch_size=settings.batch_size,
            seed=seed,
        )
        try:
            model = train(ds, sel, cfg)
            preds = predict(model, ds.features[sel.test_rows])
            tasks = [spec.target_task] if spec.kind == KIND_STL else None
            tm = task_metrics(preds, ds.labels, ds.mask, tasks=tasks, rows=sel.test_rows)
            return GridObservation(
                spec=spec, seed=seed, records=_records_for(spec, sel, extra_count, tm)
            )
        except MtlcError as exc:
            logger.warning("grid entry %s failed: %s", spec.key(), exc)
            return GridObservation(
                spec=spec,
                seed=seed,
                records=_records_for(spec, sel, extra_count, None),
                error=f"{type(exc).__name__}: {exc}",
            )


def _run_entry_star(args):
    return run_entry(*args)


def execute_grid(
    plan: GridPlan,
    ds: Dataset,
    fa: FoldAssignment,
    parallelism: int = 1,
    out_path=None,
    resume: bool = True,
) -> list[GridObservation]:
    """Run every plan entry and return observations in sorted spec order.

    When ``out_path`` is given the grid CSV is (re)written there and,
    with ``resume=True``, entries whose complete rows already exist
    with the current config hash are skipped. Failures are isolated:
    a diverged training is recorded with empty metrics and the sweep
    continues.
    """
    if ds.n_tasks != plan.K:
        raise ConfigError("dataset task count differs from plan K")
    if fa.n_folds != plan.n_folds:
        raise ConfigError("fold assignment differs from plan n_folds")
    cfg_hash = grid_config_hash(plan, ds, fa)

    done: dict[GridPointSpec, GridObservation] = {}
    if out_path is not None and resume and os.path.exists(out_path):
        prior, hash_of = _read_grid_rows(out_path)
        planned = set(plan.entries)
        done = {
            o.spec: o
            for o in prior
            if o.spec in planned
            and hash_of[o.spec] == cfg_hash
            and len(o.records) == plan.expected_rows(o.spec)
        }
        if done:
            logger.info("grid resume: %d/%d entries already done", len(done), len(plan.entries))

    todo = [s for s in plan.entries if s not in done]
    results: dict[GridPointSpec, GridObservation] = dict(done)
    if todo:
        if parallelism > 1:
            with ProcessPoolExecutor(max_workers=parallelism) as pool:
                for obs in pool.map(
                    _run_entry_star, [(s, plan, ds, fa) for s in todo], chunksize=1
                ):
                    results[obs.spec] = obs
        else:
            for s in todo:
                results[s] = run_entry(s, plan, ds, fa)

    observations = [results[s] for s in plan.entries]
    if out_path is not None:
        write_grid_csv(observations, out_path, cfg_hash)
    return observations


def write_grid_csv(observations, path, cfg_hash: str) -> None:
    """Bit-exact grid CSV, rows in sorted spec order, atomic replace."""
    tmp = str(path) + ".tmp"
    with open(tmp, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(GRID_COLUMNS)
        for obs in sorted(observations, key=lambda o: o.spec.sort_key()):
            s = obs.spec
            for rec in obs.records:
                writer.writerow(
                    [
                        str(s.shift), s.kind, str(s.m), str(s.target_task),
                        str(s.aux_task), str(rec.task),
                        fmt_float(rec.n_t), fmt_float(rec.n_sigma), fmt_float(rec.n_aux),
                        "" if rec.auroc is None else fmt_float(rec.auroc),
                        "" if rec.aupr is None else fmt_float(rec.aupr),
                        str(rec.n_test_pos), str(rec.n_test_neg),
                        "1" if rec.defined else "0",
                        str(obs.seed), cfg_hash,
                    ]
                )
    os.replace(tmp, path)


def _read_grid_rows(path) -> tuple[list[GridObservation], dict[GridPointSpec, str]]:
    grouped: dict[GridPointSpec, list[TaskRecord]] = {}
    seeds: dict[GridPointSpec, int] = {}
    hash_of: dict[GridPointSpec, str] = {}
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != GRID_COLUMNS:
            raise SpecMismatchError(f"{path}: unexpected grid CSV header")
        for row in reader:
            vals = dict(zip(GRID_COLUMNS, row))
            spec = GridPointSpec(
                shift=int(vals["shift"]), kind=vals["kind"], m=int(vals["m"]),
                target_task=int(vals["target_task"]), aux_task=int(vals["aux_task"]),
            )
            rec = TaskRecord(
                task=int(vals["task"]),
                n_t=float(vals["n_t"]),
                n_sigma=float(vals["n_sigma"]),
                n_aux=float(vals["n_aux"]),
                auroc=float(vals["auroc"]) if vals["auroc"] else None,
                aupr=float(vals["aupr"]) if vals["aupr"] else None,
                n_test_pos=int(vals["n_test_pos"]),
                n_test_neg=int(vals["n_test_neg"]),
            )
            grouped.setdefault(spec, []).append(rec)
            seeds[spec] = int(vals["seed"])
            hash_of[spec] = vals["config_hash"]
    observations = [
        GridObservation(spec=s, seed=seeds[s], records=tuple(recs))
        for s, recs in sorted(grouped.items(), key=lambda kv: kv[0].sort_key())
    ]
    return observations, hash_of


def read_grid_csv(path) -> list[GridObservation]:
    """Parse a grid CSV back into observations (sorted spec order)."""
    return _read_grid_rows(path)[0]


def observation_fit_points(
    observations,
    kind: str,
    metric: str,
    task: int,
    aux_task: int | None = None,
) -> dict[int, list]:
    """Curve-fit points for one task, keyed by shift.

    ``metric`` selects "auroc" or "aupr" values; records where that
    metric is undefined are skipped. For STL the points come from the
    task's own entries; for STAG, from entries whose auxiliary matches
    ``aux_task`` (the target's own records only).
    """
    from .curves import CurveArgs
    from .fitter import FitPoint

    if metric not in ("auroc", "aupr"):
        raise ConfigError(f"metric must be 'auroc' or 'aupr', got {metric!r}")
    out: dict[int, list] = {}
    for obs in observations:
        s = obs.spec
        if s.kind != kind:
            continue
        if kind == KIND_STL and s.target_task != task:
            continue
        if kind == KIND_STAG and (aux_task is None or s.aux_task != aux_task or task == aux_task):
            continue
        for rec in obs.records:
            if rec.task != task:
                continue
            value = getattr(rec, metric)
            if value is None:
                continue
            out.setdefault(s.shift, []).append(
                FitPoint(
                    args=CurveArgs(n_t=rec.n_t, n_sigma=rec.n_sigma, n_aux=rec.n_aux),
                    value=value,
                    fold_count=s.m,
                )
            )
    return out


def stag_pair_points(
    observations,
    metric: str,
    target: int,
    aux: int,
) -> dict[int, list]:
    """Stage-3 fit points for one (target, auxiliary) pair, by shift.

    The augmented-run estimate is a comparison against its reference
    run, so each augmented point (n_aux = the extra fold's labels) is
    paired with the matching reference point recast into the pair's
    argument convention: the auxiliary's base count is removed from the
    complementary sum and n_aux is 0. Without the references the
    pairwise rate would be collinear with the intercept because the
    extra-fold count barely varies.
    """
    from .curves import CurveArgs
    from .fitter import FitPoint

    aug = observation_fit_points(observations, KIND_STAG, metric, target, aux_task=aux)
    stag_ms = {
        (o.spec.shift, o.spec.m)
        for o in observations
        if o.spec.kind == KIND_STAG and o.spec.aux_task == aux
    }
    out = {shift: list(pts) for shift, pts in aug.items()}
    for obs in observations:
        s = obs.spec
        if s.kind != KIND_MTL or (s.shift, s.m) not in stag_ms:
            continue
        rec_t = next((r for r in obs.records if r.task == target), None)
        rec_j = next((r for r in obs.records if r.task == aux), None)
        if rec_t is None or rec_j is None:
            continue
        value = getattr(rec_t, metric)
        if value is None:
            continue
        out.setdefault(s.shift, []).append(
            FitPoint(
                args=CurveArgs(
                    n_t=rec_t.n_t,
                    n_sigma=rec_t.n_sigma - rec_j.n_t,
                    n_aux=0.0,
                ),
                value=value,
                fold_count=s.m,
            )
        )
    return {shift: out[shift] for shift in sorted(out)}


@dataclass(frozen=True)
class ETaskRecord:
    """Shift-averaged record; a metric is defined only when it was
    defined in at least half the shifts."""

    task: int
    n_t: float
    n_sigma: float
    n_aux: float
    auroc: float | None
    aupr: float | None
    auroc_shifts: int
    aupr_shifts: int


@dataclass(frozen=True)
class EObservation:
    kind: str
    m: int
    target_task: int
    aux_task: int
    n_shifts: int
    records: tuple[ETaskRecord, ...] = field(default_factory=tuple)

    def sort_key(self):
        return (_KIND_ORDER[self.kind], self.m, self.target_task, self.aux_task)


def average_over_shifts(observations) -> list[EObservation]:
    """Arithmetic means over permutation shifts per grid setting.

    Metric means use only the shifts where the metric was defined and
    are reported as defined when that happened in at least half the
    shifts; realized counts average over every shift that produced a
    record.
    """
    by_shift: dict[int, set] = {}
    for obs in observations:
        key = (obs.spec.kind, obs.spec.m, obs.spec.target_task, obs.spec.aux_task)
        by_shift.setdefault(obs.spec.shift, set()).add(key)
    if not by_shift:
        return []
    spec_sets = list(by_shift.values())
    if any(s != spec_sets[0] for s in spec_sets[1:]):
        raise SpecMismatchError("observations do not cover identical spec sets per shift")
    n_shifts = len(by_shift)

    grouped: dict[tuple, dict[int, list[TaskRecord]]] = {}
    for obs in observations:
        key = (obs.spec.kind, obs.spec.m, obs.spec.target_task, obs.spec.aux_task)
        tasks = grouped.setdefault(key, {})
        for rec in obs.records:
            tasks.setdefault(rec.task, []).append(rec)

    out = []
    for key in sorted(grouped, key=lambda k: (_KIND_ORDER[k[0]], k[1], k[2], k[3])):
        records = []
        for task in sorted(grouped[key]):
            recs = grouped[key][task]
            rocs = [r.auroc for r in recs if r.auroc is not None]
            aps = [r.aupr for r in recs if r.aupr is not None]
            records.append(
                ETaskRecord(
                    task=task,
                    n_t=float(np.mean([r.n_t for r in recs])),
                    n_sigma=float(np.mean([r.n_sigma for r in recs])),
                    n_aux=float(np.mean([r.n_aux for r in recs])),
                    auroc=float(np.mean(rocs)) if 2 * len(rocs) >= n_shifts and rocs else None,
                    aupr=float(np.mean(aps)) if 2 * len(aps) >= n_shifts and aps else None,
                    auroc_shifts=len(rocs),
                    aupr_shifts=len(aps),
                )
            )
        out.append(
            EObservation(
                kind=key[0], m=key[1], target_task=key[2], aux_task=key[3],
                n_shifts=n_shifts, records=tuple(records),
            )
        )
    return out
