"""Analysis tables over persisted grid, fit and affinity results.

Every report is a pure function of its inputs: identical inputs give
byte-identical CSV and markdown twins. Undefined correlations are
reported with a status, never silently zeroed.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .curves import CurveArgs, CurveFamily, eval_curve, marginal_gain
from .errors import (
    DegenerateInputError,
    InsufficientPairsError,
    InsufficientTasksError,
    MtlcError,
)
from .fitter import FitResult, StagedFit, fit_curve, project_points, select_family
from .grid import KIND_MTL, KIND_STL, observation_fit_points
from .metrics import spearman
from .util import fmt_float

METRICS = ("auroc", "aupr")
PARAMS_COMPARED = ("a", "b", "c")

STATUS_OK = "ok"
STATUS_DEGENERATE = "degenerate"
STATUS_INSUFFICIENT = "insufficient"


@dataclass(frozen=True)
class DecompositionRow:
    """Transfer decomposition for one (target, auxiliary) pair.

    The deltas are derived quantities; they are recomputed from the
    stored stage parameters on every access rather than stored."""

    target: int
    aux: int
    metric: str
    a_i: float
    a_sigma: float
    a_ij: float
    b_i_sigma: float
    b_ij: float
    c_i_sigma: float
    c_ij: float

    @property
    def delta_b(self) -> float:
        return self.b_ij - self.b_i_sigma

    @property
    def delta_c(self) -> float:
        return self.c_ij - self.c_i_sigma


def decomposition_rows(staged_by_metric: dict[str, dict[int, StagedFit]]) -> list[DecompositionRow]:
    """Flatten staged fits into per-(target, aux, metric) rows."""
    rows = []
    for metric in sorted(staged_by_metric):
        for target in sorted(staged_by_metric[metric]):
            fit = staged_by_metric[metric][target]
            for aux in sorted(fit.stage3):
                s3 = fit.stage3[aux]
                rows.append(
                    DecompositionRow(
                        target=target,
                        aux=aux,
                        metric=metric,
                        a_i=fit.stage1.params.a_i,
                        a_sigma=fit.stage2.params.a_sigma,
                        a_ij=s3.params.a_ij,
                        b_i_sigma=fit.stage2.params.b,
                        b_ij=s3.params.b,
                        c_i_sigma=fit.stage2.params.c,
                        c_ij=s3.params.c,
                    )
                )
    return rows


@dataclass(frozen=True)
class CorrRow:
    parameter: str
    metric: str
    variant: str
    r: float | None
    p: float | None
    n: int
    status: str


@dataclass(frozen=True)
class ScatterRow:
    task: int
    metric: str
    a_st: float
    b_st: float
    c_st: float
    a_mt: float
    b_mt: float
    c_mt: float
    metric_st: float | None
    metric_mt: float | None


def _corr_or_status(xs, ys, parameter, metric, variant="") -> CorrRow:
    n = len(xs)
    if n < 3:
        return CorrRow(parameter, metric, variant, None, None, n, STATUS_INSUFFICIENT)
    try:
        res = spearman(np.asarray(xs), np.asarray(ys))
        return CorrRow(parameter, metric, variant, res.r, res.p, res.n, STATUS_OK)
    except DegenerateInputError:
        return CorrRow(parameter, metric, variant, None, None, n, STATUS_DEGENERATE)


def _e_metric_at(e_observations, kind, m, task, metric, target=-1):
    for obs in e_observations:
        if obs.kind != kind or obs.m != m or obs.target_task != target:
            continue
        for rec in obs.records:
            if rec.task == task:
                return getattr(rec, metric)
    return None


def stl_vs_mtl_report(
    staged_by_metric: dict[str, dict[int, StagedFit]],
    mtl_points_by_metric: dict[str, dict[int, list]],
    e_observations,
    m_max: int,
    *,
    seed: int = 0,
) -> tuple[list[CorrRow], list[ScatterRow]]:
    """Correlate per-task parameter changes with performance changes.

    The single-task parameters come from stage 1 of the staged fits; a
    parallel single-argument fit on each task's multi-task points is
    run here. The performance deltas use shift-averaged observations
    at the maximal fold count.
    """
    corr_rows: list[CorrRow] = []
    scatter_rows: list[ScatterRow] = []
    any_sufficient = False
    for metric in METRICS:
        staged = staged_by_metric.get(metric, {})
        mtl_points = mtl_points_by_metric.get(metric, {})
        per_task: dict[int, tuple] = {}
        for task in sorted(staged):
            if task not in mtl_points:
                continue
            try:
                mtl_fit = fit_curve(
                    project_points(mtl_points[task], CurveFamily.EXP3_1),
                    CurveFamily.EXP3_1,
                    seed=seed + task,
                )
            except MtlcError:
                continue
            st = staged[task].stage1.params
            mt = mtl_fit.params
            v_st = _e_metric_at(e_observations, KIND_STL, m_max, task, metric, target=task)
            v_mt = _e_metric_at(e_observations, KIND_MTL, m_max, task, metric)
            per_task[task] = (st, mt, v_st, v_mt)
            scatter_rows.append(
                ScatterRow(
                    task=task, metric=metric,
                    a_st=st.a_i, b_st=st.b, c_st=st.c,
                    a_mt=mt.a_i, b_mt=mt.b, c_mt=mt.c,
                    metric_st=v_st, metric_mt=v_mt,
                )
            )
        usable = {
            t: v for t, v in per_task.items() if v[2] is not None and v[3] is not None
        }
        for parameter in PARAMS_COMPARED:
            attr = {"a": "a_i", "b": "b", "c": "c"}[parameter]
            xs = [getattr(v[1], attr) - getattr(v[0], attr) for v in usable.values()]
            ys = [v[3] - v[2] for v in usable.values()]
            row = _corr_or_status(xs, ys, parameter, metric)
            corr_rows.append(row)
            if row.status != STATUS_INSUFFICIENT:
                any_sufficient = True
    if not any_sufficient:
        raise InsufficientTasksError("fewer than 3 tasks with defined values")
    return corr_rows, scatter_rows


def _mean_tag_matrix(tag_results, keys) -> np.ndarray | None:
    mats = [tag_results[k].z_mean for k in keys if k in tag_results]
    if not mats:
        return None
    stack = np.stack(mats)
    # diagonals are all-NaN by design; nanmean there stays NaN silently
    counts = np.sum(~np.isnan(stack), axis=0)
    sums = np.nansum(np.where(np.isnan(stack), 0.0, stack), axis=0)
    return np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)


def tag_vs_mtlc_report(
    tag_results: dict[tuple[int, int], "TagResult"],
    staged_by_metric: dict[str, dict[int, StagedFit]],
) -> list[CorrRow]:
    """Correlate lookahead affinities with curve-based transfer terms.

    For every (target, auxiliary) pair covered by both sides, the
    affinity of the auxiliary on the target is compared against the
    pairwise rate ``a_ij`` and the stage-3 minus stage-2 differences of
    ``b`` and ``c``. The "1-fold" variant averages affinities at one
    training fold; "averaged" pools every (shift, fold count) setting.
    """
    variants = {
        "1-fold": [k for k in tag_results if k[1] == 1],
        "averaged": list(tag_results),
    }
    rows: list[CorrRow] = []
    any_sufficient = False
    for variant, keys in variants.items():
        z = _mean_tag_matrix(tag_results, keys)
        for metric in METRICS:
            staged = staged_by_metric.get(metric, {})
            xs: dict[str, list] = {p: [] for p in PARAMS_COMPARED}
            ys: dict[str, list] = {p: [] for p in PARAMS_COMPARED}
            if z is not None:
                for target in sorted(staged):
                    fit = staged[target]
                    for aux in sorted(fit.stage3):
                        if aux == target or np.isnan(z[aux, target]):
                            continue
                        s3 = fit.stage3[aux]
                        affinity = float(z[aux, target])
                        xs["a"].append(affinity)
                        ys["a"].append(s3.params.a_ij)
                        xs["b"].append(affinity)
                        ys["b"].append(s3.params.b - fit.stage2.params.b)
                        xs["c"].append(affinity)
                        ys["c"].append(s3.params.c - fit.stage2.params.c)
            for parameter in PARAMS_COMPARED:
                row = _corr_or_status(xs[parameter], ys[parameter], parameter, metric, variant)
                rows.append(row)
                if row.status != STATUS_INSUFFICIENT:
                    any_sufficient = True
    if not any_sufficient:
        raise InsufficientPairsError("no variant had 3 overlapping pairs")
    return rows


@dataclass(frozen=True)
class ForecastRow:
    task: int
    metric: str
    budget: float
    n_t: float
    n_sigma: float
    current_pred: float
    after_pred: float
    gain: float
    gain_per_sample: float
    rank: int


def gain_forecast(
    staged: dict[int, StagedFit],
    current_args: dict[int, CurveArgs],
    budgets,
    metric: str = "auroc",
) -> tuple[list[ForecastRow], dict[int, str]]:
    """Predicted benefit of extra target-task samples, ranked.

    ``budgets`` is a list of candidate extra sample counts (applied to
    every task) or a mapping task -> list. Tasks without a usable
    stage-2 fit or current arguments are skipped with a reason.
    """
    skipped: dict[int, str] = {}
    raw = []
    for task in sorted(staged):
        fit = staged[task]
        if task not in current_args:
            skipped[task] = "no current observation"
            continue
        args = current_args[task]
        task_budgets = budgets[task] if isinstance(budgets, dict) else budgets
        params = fit.stage2.params
        current = eval_curve(CurveFamily.EXP3_2, params, args)
        for budget in task_budgets:
            gain = marginal_gain(CurveFamily.EXP3_2, params, args, float(budget), "target")
            per = gain / budget if budget > 0 else 0.0
            raw.append((task, float(budget), args, current, gain, per))
    raw.sort(key=lambda r: (-r[5], r[0], r[1]))
    rows = [
        ForecastRow(
            task=task, metric=metric, budget=budget,
            n_t=args.n_t, n_sigma=args.n_sigma,
            current_pred=current, after_pred=current + gain,
            gain=gain, gain_per_sample=per, rank=rank,
        )
        for rank, (task, budget, args, current, gain, per) in enumerate(raw, start=1)
    ]
    return rows, skipped


def family_selection_report(observations, families, metric: str = "auroc",
                            kind: str = KIND_MTL, *, seed: int = 0):
    """Family-selection table on one grid kind and metric."""
    tasks = sorted(
        {r.task for o in observations if o.spec.kind == kind for r in o.records}
    )
    points_by_task = {}
    for t in tasks:
        aux = None
        by_shift = observation_fit_points(observations, kind, metric, t, aux)
        if by_shift:
            points_by_task[t] = by_shift
    return select_family(points_by_task, families, seed=seed)


# ---------------------------------------------------------------- rendering


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return fmt_float(v)
    return str(v)


def write_table_csv(path, columns, rows) -> None:
    import csv

    tmp = str(path) + ".tmp"
    with open(tmp, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_cell(v) for v in row])
    os.replace(tmp, path)


def _md_cell(v) -> str:
    if v is None:
        return "-"
    if isinstance(v, float):
        return f"{v:.4g}"
    return str(v)


def write_table_md(path, title, columns, rows) -> None:
    tmp = str(path) + ".tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(f"# {title}\n\n")
        fh.write("| " + " | ".join(columns) + " |\n")
        fh.write("|" + "|".join(" --- " for _ in columns) + "|\n")
        for row in rows:
            fh.write("| " + " | ".join(_md_cell(v) for v in row) + " |\n")
    os.replace(tmp, path)


CORR_COLUMNS = ["parameter", "metric", "variant", "r", "p", "n", "status"]
SCATTER_COLUMNS = [
    "task", "metric", "a_st", "b_st", "c_st", "a_mt", "b_mt", "c_mt",
    "delta_a", "delta_b", "delta_c", "metric_st", "metric_mt", "delta_metric",
]
DECOMP_COLUMNS = [
    "target", "aux", "metric", "a_i", "a_sigma", "a_ij",
    "b_i_sigma", "b_ij", "delta_b", "c_i_sigma", "c_ij", "delta_c",
]
FORECAST_COLUMNS = [
    "rank", "task", "metric", "budget", "n_t", "n_sigma",
    "current_pred", "after_pred", "gain", "gain_per_sample",
]
FAMILY_COLUMNS = [
    "family", "l2", "e_l2", "preq", "e_preq",
    "excluded_l2", "excluded_e_l2", "excluded_preq", "excluded_e_preq",
]


def corr_cells(rows: list[CorrRow]):
    return [[r.parameter, r.metric, r.variant, r.r, r.p, r.n, r.status] for r in rows]


def scatter_cells(rows: list[ScatterRow]):
    out = []
    for r in rows:
        delta_metric = (
            None if r.metric_st is None or r.metric_mt is None else r.metric_mt - r.metric_st
        )
        out.append([
            r.task, r.metric, r.a_st, r.b_st, r.c_st, r.a_mt, r.b_mt, r.c_mt,
            r.a_mt - r.a_st, r.b_mt - r.b_st, r.c_mt - r.c_st,
            r.metric_st, r.metric_mt, delta_metric,
        ])
    return out


def decomposition_cells(rows: list[DecompositionRow]):
    return [
        [
            r.target, r.aux, r.metric, r.a_i, r.a_sigma, r.a_ij,
            r.b_i_sigma, r.b_ij, r.delta_b, r.c_i_sigma, r.c_ij, r.delta_c,
        ]
        for r in rows
    ]


def forecast_cells(rows: list[ForecastRow]):
    return [
        [
            r.rank, r.task, r.metric, r.budget, r.n_t, r.n_sigma,
            r.current_pred, r.after_pred, r.gain, r.gain_per_sample,
        ]
        for r in rows
    ]


def family_cells(rows):
    return [
        [
            r.family.value, r.l2, r.e_l2, r.preq, r.e_preq,
            r.excluded_l2, r.excluded_e_l2, r.excluded_preq, r.excluded_e_preq,
        ]
        for r in rows
    ]
