"""Training-time inter-task affinity from gradient lookaheads.

For a source task j, take its loss gradient on the shared trunk only,
step the trunk by the lookahead rate, and measure every other task's
relative batch-loss change: ``z[j][i] = 1 - L_i(trunk') / L_i(trunk)``.
Positive values mean j's update helps i. The domain-wide variant uses
the summed gradient of all tasks except the target as the source,
modeling the whole complementary set acting through the shared
representation. Heads are task-private and never touched by the
lookahead.

Affinities are sampled during an otherwise ordinary training run and
averaged per pair over the sampled steps; sampling never perturbs the
training trajectory.
"""

from __future__ import annotations

import csv
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np
from threadpoolctl import threadpool_limits

from .data import Dataset, FoldAssignment, training_subset
from .errors import ConfigError, MtlcError, NoDefinedPairsError, SpecMismatchError
from .grid import TrainSettings
from .learner import ModelConfig, per_task_losses, train, trunk_grad
from .util import derive_seed, fmt_float

logger = logging.getLogger(__name__)

TAG_COLUMNS = ["shift", "m", "source_task", "target_task", "mean_affinity", "n_records"]
DOMAIN_SOURCE = "SIGMA"


@dataclass(frozen=True)
class AffinityRecord:
    """Affinities measured at one training step.

    ``z[j, i]`` is the effect of source j's lookahead on target i; the
    diagonal and pairs without defined batch losses are NaN. ``z_domain[i]``
    uses the summed gradient of every task except i as the source.
    """

    step: int
    z: np.ndarray
    z_domain: np.ndarray


def affinity_step_arrays(w1, b1, w2, b2, x, y, m, lookahead_lr: float, step: int = 0) -> AffinityRecord:
    """Compute one affinity record from raw parameter arrays."""
    n_tasks = w2.shape[1]
    base_losses, counts = per_task_losses(w1, b1, w2, b2, x, y, m)
    defined = (counts > 0) & (base_losses > 0)
    sources = [j for j in range(n_tasks) if defined[j]]
    if len(sources) < 2:
        raise NoDefinedPairsError("batch defines losses for fewer than two tasks")

    z = np.full((n_tasks, n_tasks), np.nan)
    z_domain = np.full(n_tasks, np.nan)
    grads: dict[int, tuple[np.ndarray, np.ndarray]] = {}
    for j in sources:
        gw1, gb1 = trunk_grad(w1, b1, w2, b2, x, y, m, j)
        grads[j] = (gw1, gb1)
        la_losses, _ = per_task_losses(
            w1 - lookahead_lr * gw1, b1 - lookahead_lr * gb1, w2, b2, x, y, m
        )
        for i in range(n_tasks):
            if i != j and defined[i]:
                z[j, i] = 1.0 - la_losses[i] / base_losses[i]

    total_gw1 = sum(g[0] for g in grads.values())
    total_gb1 = sum(g[1] for g in grads.values())
    for i in range(n_tasks):
        if not defined[i]:
            continue
        gw1 = total_gw1 - grads[i][0] if i in grads else total_gw1
        gb1 = total_gb1 - grads[i][1] if i in grads else total_gb1
        la_losses, _ = per_task_losses(
            w1 - lookahead_lr * gw1, b1 - lookahead_lr * gb1, w2, b2, x, y, m
        )
        z_domain[i] = 1.0 - la_losses[i] / base_losses[i]
    return AffinityRecord(step=step, z=z, z_domain=z_domain)


def affinity_step(model, batch, lookahead_lr: float) -> AffinityRecord:
    """One affinity record for a trained model and a (x, y, mask) batch."""
    x, y, m = batch
    return affinity_step_arrays(
        model.w1, model.b1, model.w2, model.b2,
        np.asarray(x, dtype=float), np.asarray(y, dtype=float),
        np.asarray(m, dtype=float), lookahead_lr,
    )


@dataclass(frozen=True)
class TagResult:
    """Per-pair mean affinities over the sampled steps of one run."""

    z_mean: np.ndarray
    z_count: np.ndarray
    domain_mean: np.ndarray
    domain_count: np.ndarray
    n_records: int


def _mean_records(records, n_tasks: int) -> TagResult:
    z_sum = np.zeros((n_tasks, n_tasks))
    z_cnt = np.zeros((n_tasks, n_tasks), dtype=int)
    d_sum = np.zeros(n_tasks)
    d_cnt = np.zeros(n_tasks, dtype=int)
    for rec in records:
        ok = ~np.isnan(rec.z)
        z_sum[ok] += rec.z[ok]
        z_cnt += ok
        okd = ~np.isnan(rec.z_domain)
        d_sum[okd] += rec.z_domain[okd]
        d_cnt += okd
    with np.errstate(invalid="ignore"):
        z_mean = np.where(z_cnt > 0, z_sum / np.maximum(z_cnt, 1), np.nan)
        d_mean = np.where(d_cnt > 0, d_sum / np.maximum(d_cnt, 1), np.nan)
    return TagResult(
        z_mean=z_mean, z_count=z_cnt, domain_mean=d_mean, domain_count=d_cnt,
        n_records=len(records),
    )


def run_tag(
    ds: Dataset,
    selection,
    cfg: ModelConfig,
    sample_every: int = 10,
    lookahead_lr: float | None = None,
) -> TagResult:
    """Train as usual while recording affinities every ``sample_every``
    steps (at least one record; the final step is recorded when the
    cadence never fired). Deterministic per seed: the recorder consumes
    no randomness."""
    if sample_every < 1:
        raise ConfigError("sample_every must be >= 1")
    la_lr = cfg.learning_rate if lookahead_lr is None else lookahead_lr
    n_rows = int(np.count_nonzero(selection.label_mask.any(axis=1)))
    steps_per_epoch = math.ceil(n_rows / cfg.batch_size)
    total_steps = cfg.epochs * steps_per_epoch
    if total_steps == 0:
        raise ConfigError("training runs zero steps; nothing to record")
    records: list[AffinityRecord] = []

    def recorder(step, params, batch):
        due = step % sample_every == 0 or (step == total_steps and not records)
        if not due:
            return
        w1, b1, w2, b2 = params
        x, y, m = batch
        try:
            records.append(affinity_step_arrays(w1, b1, w2, b2, x, y, m, la_lr, step=step))
        except NoDefinedPairsError:
            logger.debug("step %d: no defined pairs in batch", step)

    train(ds, selection, cfg, on_step=recorder)
    if not records:
        raise NoDefinedPairsError("no training batch defined losses for two tasks")
    return _mean_records(records, ds.n_tasks)


def _run_setting(args):
    ds, fa, shift, m, settings, master_seed, sample_every, lookahead_lr = args
    with threadpool_limits(limits=1):
        sel = training_subset(ds, fa.with_shift(shift), m)
        cfg = ModelConfig(
            d=ds.features.shape[1],
            r=settings.r,
            K=ds.n_tasks,
            learning_rate=settings.learning_rate,
            epochs=settings.epochs,
            batch_size=settings.batch_size,
            seed=derive_seed(master_seed, "tag", shift, m),
        )
        return shift, m, run_tag(ds, sel, cfg, sample_every, lookahead_lr)


def tag_vs_fold_sweep(
    ds: Dataset,
    fa: FoldAssignment,
    fold_counts,
    shifts,
    settings: TrainSettings,
    master_seed: int = 0,
    sample_every: int = 10,
    lookahead_lr: float | None = None,
    parallelism: int = 1,
    out_path=None,
) -> dict[tuple[int, int], TagResult]:
    """One affinity-recording run per (shift, fold count) setting.

    Settings are independent jobs; failures are isolated and logged.
    Results merge in deterministic (shift, m) order regardless of
    completion order.
    """
    jobs = [
        (ds, fa, int(s), int(m), settings, master_seed, sample_every, lookahead_lr)
        for s in shifts
        for m in fold_counts
    ]
    results: dict[tuple[int, int], TagResult] = {}
    if parallelism > 1:
        with ProcessPoolExecutor(max_workers=parallelism) as pool:
            futures = [pool.submit(_run_setting, j) for j in jobs]
            for job, fut in zip(jobs, futures):
                try:
                    shift, m, res = fut.result()
                    results[(shift, m)] = res
                except MtlcError as exc:
                    logger.warning("tag setting (%s, %s) failed: %s", job[2], job[3], exc)
    else:
        for job in jobs:
            try:
                shift, m, res = _run_setting(job)
                results[(shift, m)] = res
            except MtlcError as exc:
                logger.warning("tag setting (%s, %s) failed: %s", job[2], job[3], exc)
    results = dict(sorted(results.items()))
    if out_path is not None:
        write_tag_csv(results, out_path)
    return results


def write_tag_csv(results: dict[tuple[int, int], TagResult], path) -> None:
    """Pairwise rows first per setting, then domain-wide rows."""
    tmp = str(path) + ".tmp"
    with open(tmp, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(TAG_COLUMNS)
        for (shift, m), res in sorted(results.items()):
            n_tasks = res.z_mean.shape[0]
            for j in range(n_tasks):
                for i in range(n_tasks):
                    if i == j:
                        continue
                    val = res.z_mean[j, i]
                    writer.writerow([
                        str(shift), str(m), str(j), str(i),
                        "" if np.isnan(val) else fmt_float(val),
                        str(int(res.z_count[j, i])),
                    ])
            for i in range(n_tasks):
                val = res.domain_mean[i]
                writer.writerow([
                    str(shift), str(m), DOMAIN_SOURCE, str(i),
                    "" if np.isnan(val) else fmt_float(val),
                    str(int(res.domain_count[i])),
                ])
    os.replace(tmp, path)


def read_tag_csv(path, n_tasks: int) -> dict[tuple[int, int], TagResult]:
    per_setting: dict[tuple[int, int], dict] = {}
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != TAG_COLUMNS:
            raise SpecMismatchError(f"{path}: unexpected TAG CSV header")
        for row in reader:
            shift, m = int(row[0]), int(row[1])
            slot = per_setting.setdefault(
                (shift, m),
                {
                    "z": np.full((n_tasks, n_tasks), np.nan),
                    "zc": np.zeros((n_tasks, n_tasks), dtype=int),
                    "d": np.full(n_tasks, np.nan),
                    "dc": np.zeros(n_tasks, dtype=int),
                },
            )
            target = int(row[3])
            val = float(row[4]) if row[4] else np.nan
            cnt = int(row[5])
            if row[2] == DOMAIN_SOURCE:
                slot["d"][target] = val
                slot["dc"][target] = cnt
            else:
                slot["z"][int(row[2]), target] = val
                slot["zc"][int(row[2]), target] = cnt
    return {
        key: TagResult(
            z_mean=s["z"], z_count=s["zc"], domain_mean=s["d"],
            domain_count=s["dc"], n_records=int(s["zc"].max(initial=0)),
        )
        for key, s in sorted(per_setting.items())
    }
