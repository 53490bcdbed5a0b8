"""Constrained nonlinear least-squares fitting of learning curves.

The optimizer is a damped (Levenberg-Marquardt) iteration with box
constraints enforced by projection, so the reported coefficients keep
their raw interpretation. Every fit is multi-start: the closed-form
heuristic initializer plus perturbed restarts, best squared error wins,
deterministic given the seed.

Bounds at fit time: ``c`` in [0, 1], ``a_i >= 0``, ``alpha`` in
(0, 4]. ``b``, ``a_sigma`` and ``a_ij`` are unconstrained; negative
values of the transfer coefficients represent negative transfer.

The staged protocol fits one target task in three passes: own-task rate
on single-task points, complementary-set rate on multi-task points with
the own rate frozen, then one pairwise rate per auxiliary task with
both earlier rates frozen. Frozen values are carried bit-exactly.
"""

from __future__ import annotations

import csv
import logging
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .curves import (
    FAMILY_ARITY,
    FAMILY_PARAMS,
    CurveArgs,
    CurveFamily,
    ParamSet,
    check_arity,
    deserialize_params,
    eval_arrays,
    free_param_names,
    grad_arrays,
    serialize_params,
)
from .errors import MtlcError, NonFiniteError, UnderDeterminedError
from .util import derive_seed, fmt_float

logger = logging.getLogger(__name__)

MAX_ITER = 200
N_RESTARTS = 15
SSE_REL_TOL = 1e-10
STEP_NORM_TOL = 1e-12
PERTURB_SIGMA = 0.5
ALPHA_MAX = 4.0
ALPHA_MIN = 1e-6
# b is the log performance-gap at zero samples; for metrics on [0, 1]
# the gap cannot exceed 2, and without a cap the exponential family
# admits runaway step-shaped optima on small noisy point sets.
B_MAX = math.log(2.0)
B_MIN = math.log(1e-9)
LAMBDA_INIT = 1e-3
LAMBDA_GROW = 7.0
LAMBDA_SHRINK = 10.0
LAMBDA_CAP = 1e15


@dataclass(frozen=True)
class FitPoint:
    """One observed learning-curve point.

    ``value`` is a performance metric (nominally in [0, 1]; synthetic
    fixtures may step outside), ``fold_count`` the number of training
    folds that produced it, ``weight`` a non-negative fit weight.
    """

    args: CurveArgs
    value: float
    fold_count: int = 1
    weight: float = 1.0

    def __post_init__(self) -> None:
        if self.fold_count < 1:
            raise ValueError("fold_count must be >= 1")
        if self.weight < 0:
            raise ValueError("weight must be non-negative")


@dataclass(frozen=True)
class FitResult:
    params: ParamSet
    sse: float
    n_points: int
    converged: bool
    restarts_used: int


@dataclass(frozen=True)
class StagedFit:
    """Staged fit results for one target task.

    ``stage1`` is the single-task curve, ``stage2`` the contextual
    multi-task curve with the own-task rate frozen, ``stage3`` one
    pairwise curve per auxiliary task with both earlier rates frozen.
    Auxiliary fits that fail are listed in ``failures`` with the reason
    and do not abort the other auxiliaries.
    """

    target_task: int
    stage1: FitResult
    stage2: FitResult
    stage3: dict[int, FitResult] = field(default_factory=dict)
    failures: dict[int, str] = field(default_factory=dict)


def _point_arrays(points) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    nt = np.array([p.args.n_t for p in points], dtype=float)
    ns = np.array([p.args.n_sigma for p in points], dtype=float)
    na = np.array([p.args.n_aux for p in points], dtype=float)
    y = np.array([p.value for p in points], dtype=float)
    w = np.array([p.weight for p in points], dtype=float)
    return nt, ns, na, y, w


def init_heuristic(
    points, family: CurveFamily, n_scale: float | None = None
) -> ParamSet:
    """Closed-form starting point for a curve fit.

    The asymptote starts just above the best observed value, the
    log-gap at the smallest sample count sets ``b``, and the own-task
    rate comes from the log-gap slope between the smallest and largest
    sample counts. Rates for complementary and auxiliary counts start
    at zero. ``n_scale`` defaults to the largest observed target count
    (raw counts for ILOG2, whose domain needs scaled counts > 1).
    """
    nts = sorted({p.args.n_t for p in points})
    if len(nts) < 2:
        raise UnderDeterminedError("need >= 2 points with distinct target counts")
    nt, _, _, y, _ = _point_arrays(points)
    c0 = min(float(y.max()) + 0.01, 1.0)
    n_min, n_max = nts[0], nts[-1]
    v_min = float(y[nt == n_min].mean())
    v_max = float(y[nt == n_max].mean())
    if family is CurveFamily.ILOG2:
        scale = 1.0 if n_scale is None else n_scale
        x_min = n_min / scale
        a0 = max(0.0, (c0 - v_min) * math.log(x_min)) if x_min > 1 else 1.0
        return ParamSet(a_i=a0, c=c0, n_scale=scale)
    scale = float(n_max) if n_scale is None else n_scale
    b0 = math.log(max(c0 - v_min, 1e-6))
    gap_max = math.log(max(c0 - v_max, 1e-6))
    dx = (n_max - n_min) / scale
    a0 = max(0.0, (b0 - gap_max) / dx)
    return ParamSet(a_i=a0, b=b0, c=c0, alpha=1.0, n_scale=scale)


def _project(names: tuple[str, ...], theta: np.ndarray) -> np.ndarray:
    out = theta.copy()
    for j, name in enumerate(names):
        if name == "a_i":
            out[j] = max(0.0, out[j])
        elif name == "c":
            out[j] = min(1.0, max(0.0, out[j]))
        elif name == "alpha":
            out[j] = min(ALPHA_MAX, max(ALPHA_MIN, out[j]))
        elif name == "b":
            out[j] = min(B_MAX, max(B_MIN, out[j]))
    return out


def _with_values(params: ParamSet, names: tuple[str, ...], theta: np.ndarray) -> ParamSet:
    return params.replace(**{name: float(theta[j]) for j, name in enumerate(names)})


def _make_fast_model(
    family: CurveFamily,
    base: ParamSet,
    names: tuple[str, ...],
    nt: np.ndarray,
    ns: np.ndarray,
    na: np.ndarray,
):
    """Specialized value/Jacobian closures for the LM hot loop.

    Equivalent to eval_arrays/grad_arrays but without per-call arity
    checks or ParamSet construction; arity and the ILOG2 domain are
    validated once by fit_curve before fitting starts.
    """
    from .curves import PARAM_ORDER

    scale = base.n_scale
    x = nt / scale
    v = ns / scale
    u = na / scale
    base_vec = np.array([base.value_of(p) for p in PARAM_ORDER])
    free_idx = np.array([PARAM_ORDER.index(n) for n in names], dtype=np.intp)
    ones = np.ones_like(x)

    def full(theta: np.ndarray) -> np.ndarray:
        vec = base_vec.copy()
        vec[free_idx] = theta
        return vec

    if family is CurveFamily.ILOG2:
        lx = np.log(x)

        def value(theta):
            a_i, _, _, _, c, _ = full(theta)
            return c - a_i / lx

        def jac(theta):
            cols = {"a_i": -1.0 / lx, "c": ones}
            return np.column_stack([cols[n] for n in names])

        return value, jac

    def exponent(vec):
        a_i, a_ij, a_sigma, b, _, alpha = vec
        if family is CurveFamily.EXP4:
            return b - a_i * x**alpha
        if family is CurveFamily.EXP3_1:
            return b - a_i * x
        if family is CurveFamily.EXP3_2:
            return b - a_i * x - a_sigma * v
        return b - a_i * x - a_ij * u - a_sigma * v

    def value(theta):
        vec = full(theta)
        return vec[4] - np.exp(exponent(vec))

    if family is CurveFamily.EXP4:
        pos = x > 0
        lx = np.log(np.where(pos, x, 1.0))

        def jac(theta):
            vec = full(theta)
            a_i, _, _, _, _, alpha = vec
            e = np.exp(exponent(vec))
            xa = x**alpha
            xalog = np.where(pos, xa * lx, 0.0)
            cols = {"a_i": xa * e, "b": -e, "c": ones, "alpha": a_i * xalog * e}
            return np.column_stack([cols[n] for n in names])

    else:

        def jac(theta):
            vec = full(theta)
            e = np.exp(exponent(vec))
            cols = {"a_i": x * e, "a_ij": u * e, "a_sigma": v * e, "b": -e, "c": ones}
            return np.column_stack([cols[n] for n in names])

    return value, jac


def _lm_minimize(
    family: CurveFamily,
    base: ParamSet,
    names: tuple[str, ...],
    theta0: np.ndarray,
    nt: np.ndarray,
    ns: np.ndarray,
    na: np.ndarray,
    y: np.ndarray,
    sqrt_w: np.ndarray,
) -> tuple[np.ndarray, float, bool] | None:
    """One projected LM descent. Returns (theta, sse, converged) or
    None when the start itself is unusable. Accepted steps strictly
    decrease the squared error."""

    value_fn, jac_fn = _make_fast_model(family, base, names, nt, ns, na)

    def residuals(theta: np.ndarray) -> tuple[np.ndarray, float]:
        r = sqrt_w * (value_fn(theta) - y)
        return r, float(r @ r)

    # Wild probe candidates may overflow the exponential; they are
    # rejected below, so the numpy warnings are just noise.
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        theta = _project(names, theta0)
        r, sse = residuals(theta)
        if not math.isfinite(sse):
            return None
        if not names:
            return theta, sse, True
        n_free = len(names)
        diag_view = slice(0, n_free * n_free, n_free + 1)
        lam = LAMBDA_INIT
        converged = False
        for _ in range(MAX_ITER):
            jac = sqrt_w[:, None] * jac_fn(theta)
            if not np.all(np.isfinite(jac)):
                break
            a = jac.T @ jac
            g = jac.T @ r
            d = np.maximum(a.flat[diag_view], 1e-12)
            m = a.copy()
            m.flat[diag_view] += lam * d
            try:
                delta = np.linalg.solve(m, -g)
            except np.linalg.LinAlgError:
                lam *= LAMBDA_GROW
                if lam > LAMBDA_CAP:
                    break
                continue
            cand = _project(names, theta + delta)
            step = cand - theta
            if math.sqrt(float(step @ step)) < STEP_NORM_TOL:
                converged = True
                break
            r_cand, sse_cand = residuals(cand)
            if math.isfinite(sse_cand) and sse_cand < sse:
                rel_drop = (sse - sse_cand) / max(sse, 1e-300)
                theta, r, sse = cand, r_cand, sse_cand
                lam = max(lam / LAMBDA_SHRINK, 1e-12)
                if rel_drop < SSE_REL_TOL:
                    converged = True
                    break
            else:
                lam *= LAMBDA_GROW
                if lam > LAMBDA_CAP:
                    break
    return theta, sse, converged


def fit_curve(
    points,
    family: CurveFamily,
    init: ParamSet | None = None,
    freeze_mask: tuple[bool, ...] | None = None,
    *,
    seed: int = 0,
    n_restarts: int = N_RESTARTS,
) -> FitResult:
    """Fit one curve family to observed points by multi-start projected LM.

    ``init`` supplies frozen parameter values and the sample-size scale
    (heuristic when omitted); ``freeze_mask`` overrides the mask carried
    by ``init``. Points outside the ILOG2 domain are dropped with a
    warning before fitting.

    Raises UnderDeterminedError when fewer points than free parameters
    remain and NonFiniteError when the primary start already produces a
    non-finite residual.
    """
    points = list(points)
    for p in points:
        check_arity(family, p.args)
    if init is None:
        init = init_heuristic(points, family)
    if freeze_mask is not None:
        init = init.replace(freeze_mask=tuple(freeze_mask))
    if family is CurveFamily.ILOG2:
        kept = [p for p in points if p.args.n_t / init.n_scale > 1.0]
        if len(kept) < len(points):
            logger.warning(
                "ILOG2 fit dropped %d point(s) at scaled count <= 1",
                len(points) - len(kept),
            )
        points = kept
    names = free_param_names(family, init)
    if len(points) < len(names):
        raise UnderDeterminedError(
            f"{len(points)} points cannot determine {len(names)} free parameters"
        )
    nt, ns, na, y, w = _point_arrays(points)
    sqrt_w = np.sqrt(w)
    theta0 = np.array([init.value_of(p) for p in names], dtype=float)

    rng = np.random.default_rng(seed)
    best: tuple[np.ndarray, float, bool] | None = None
    starts_run = 0
    for start in range(1 + n_restarts):
        if start == 0:
            theta = theta0.copy()
        else:
            z = rng.standard_normal(len(names))
            theta = np.where(
                np.abs(theta0) > 1e-12,
                theta0 * np.exp(PERTURB_SIGMA * z),
                PERTURB_SIGMA * z,
            )
        outcome = _lm_minimize(family, init, names, theta, nt, ns, na, y, sqrt_w)
        if outcome is None:
            if start == 0:
                raise NonFiniteError("non-finite residual at the initial parameters")
            continue
        starts_run += 1
        if best is None or outcome[1] < best[1]:
            best = outcome
    assert best is not None
    theta_best, sse, converged = best
    return FitResult(
        params=_with_values(init, names, theta_best),
        sse=sse,
        n_points=len(points),
        converged=converged,
        restarts_used=starts_run,
    )


def fit_staged(
    stl,
    mtl,
    stag,
    target: int,
    *,
    seed: int = 0,
) -> StagedFit:
    """Three-stage freezing protocol for one target task.

    Stage 1 fits (a_i, b, c) on single-task points; stage 2 freezes
    a_i and fits (a_sigma, b, c) on multi-task points; stage 3 freezes
    a_i and a_sigma and fits (a_ij, b, c) per auxiliary task on the
    augmented points. One shared n_scale keeps the frozen rates
    commensurable across stages.
    """
    stl = list(stl)
    mtl = list(mtl)
    stag = {int(j): list(pts) for j, pts in stag.items()}
    for p in stl:
        if p.args.n_sigma != 0 or p.args.n_aux != 0:
            raise ValueError("single-task points must have zero context counts")
    for p in mtl:
        if p.args.n_aux != 0:
            raise ValueError("multi-task points must have zero auxiliary count")
    all_nt = [p.args.n_t for p in stl + mtl] + [
        p.args.n_t for pts in stag.values() for p in pts
    ]
    n_scale = float(max(all_nt)) if all_nt else 1.0

    init1 = init_heuristic(stl, CurveFamily.EXP3_1, n_scale=n_scale)
    stage1 = fit_curve(stl, CurveFamily.EXP3_1, init1, seed=derive_seed(seed, target, 1))

    init2 = ParamSet(
        a_i=stage1.params.a_i,
        b=stage1.params.b,
        c=stage1.params.c,
        n_scale=n_scale,
    ).with_freeze(("a_i",))
    stage2 = fit_curve(mtl, CurveFamily.EXP3_2, init2, seed=derive_seed(seed, target, 2))

    stage3: dict[int, FitResult] = {}
    failures: dict[int, str] = {}
    for j in sorted(stag):
        pts = stag[j]
        try:
            if not pts:
                raise UnderDeterminedError("no augmented points for this auxiliary")
            na = np.array([p.args.n_aux for p in pts])
            if np.ptp(na) == 0:
                raise UnderDeterminedError(
                    "auxiliary count has no variation across points"
                )
            init3 = ParamSet(
                a_i=stage1.params.a_i,
                a_sigma=stage2.params.a_sigma,
                b=stage2.params.b,
                c=stage2.params.c,
                n_scale=n_scale,
            ).with_freeze(("a_i", "a_sigma"))
            stage3[j] = fit_curve(
                pts, CurveFamily.EXP3_3, init3, seed=derive_seed(seed, target, 3, j)
            )
        except MtlcError as exc:
            failures[j] = f"{type(exc).__name__}: {exc}"
    return StagedFit(
        target_task=target,
        stage1=stage1,
        stage2=stage2,
        stage3=stage3,
        failures=failures,
    )


def project_points(points, family: CurveFamily) -> list[FitPoint]:
    """Adapt points to the family's arity by dropping unused counts.

    Fitting a single-argument family to multi-task grid points means
    regressing the value on the target count alone; the context counts
    are simply not part of that model.
    """
    arity = FAMILY_ARITY[family]
    out = []
    for p in points:
        ns = p.args.n_sigma if arity >= 2 else 0.0
        na = p.args.n_aux if arity >= 3 else 0.0
        if ns == p.args.n_sigma and na == p.args.n_aux:
            out.append(p)
        else:
            out.append(
                FitPoint(
                    args=CurveArgs(n_t=p.args.n_t, n_sigma=ns, n_aux=na),
                    value=p.value,
                    fold_count=p.fold_count,
                    weight=p.weight,
                )
            )
    return out


def prequential_error(points, family: CurveFamily, *, seed: int = 0) -> float:
    """Cumulative squared error of next-fold predictions.

    For each fold count k from p (the free-parameter count) up to the
    largest fold count minus one, a curve is fitted to all points at
    fold counts <= k and evaluated on the points at fold count k + 1.
    Points are projected to the family's arity first.
    """
    points = project_points(points, family)
    p_free = len(FAMILY_PARAMS[family])
    fold_counts = sorted({p.fold_count for p in points})
    if len(fold_counts) < p_free + 1:
        raise UnderDeterminedError(
            f"need >= {p_free + 1} distinct fold counts, got {len(fold_counts)}"
        )
    total = 0.0
    max_fold = fold_counts[-1]
    for k in range(p_free, max_fold):
        train = [p for p in points if p.fold_count <= k]
        test = [p for p in points if p.fold_count == k + 1]
        if not test:
            continue
        res = fit_curve(train, family, seed=derive_seed(seed, "preq", k))
        nt, ns, na, y, _ = _point_arrays(test)
        pred = eval_arrays(family, res.params, nt, ns, na)
        total += float(((pred - y) ** 2).sum())
    return total


FIT_COLUMNS = [
    "task_id", "stage", "aux_task_id", "family",
    "a_i", "a_ij", "a_sigma", "b", "c", "alpha", "n_scale", "freeze",
    "sse", "n_points", "converged",
]
FIT_FAILURE_COLUMNS = ["task_id", "stage", "aux_task_id", "reason"]


def write_staged_csv(staged: dict[int, StagedFit], path, failures_path=None) -> None:
    """One row per (task, stage, aux); stage-3 failures go to a
    companion file because the fit CSV has no reason column."""
    family_of_stage = {1: CurveFamily.EXP3_1, 2: CurveFamily.EXP3_2, 3: CurveFamily.EXP3_3}

    def row(task, stage, aux, fit: FitResult):
        cells = serialize_params(family_of_stage[stage], fit.params)
        return (
            [str(task), str(stage), str(aux)]
            + cells
            + [fmt_float(fit.sse), str(fit.n_points), "1" if fit.converged else "0"]
        )

    tmp = str(path) + ".tmp"
    with open(tmp, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(FIT_COLUMNS)
        for task in sorted(staged):
            fit = staged[task]
            writer.writerow(row(task, 1, -1, fit.stage1))
            writer.writerow(row(task, 2, -1, fit.stage2))
            for aux in sorted(fit.stage3):
                writer.writerow(row(task, 3, aux, fit.stage3[aux]))
    os.replace(tmp, path)

    if failures_path is not None:
        tmp = str(failures_path) + ".tmp"
        with open(tmp, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(FIT_FAILURE_COLUMNS)
            for task in sorted(staged):
                for aux in sorted(staged[task].failures):
                    writer.writerow([str(task), "3", str(aux), staged[task].failures[aux]])
        os.replace(tmp, failures_path)


def read_staged_csv(path, failures_path=None) -> dict[int, StagedFit]:
    parts: dict[int, dict] = {}
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != FIT_COLUMNS:
            raise ValueError(f"{path}: unexpected fit CSV header")
        for row in reader:
            task, stage, aux = int(row[0]), int(row[1]), int(row[2])
            _, params = deserialize_params(row[3:12])
            fit = FitResult(
                params=params,
                sse=float(row[12]),
                n_points=int(row[13]),
                converged=row[14] == "1",
                restarts_used=0,
            )
            slot = parts.setdefault(task, {"stage3": {}, "failures": {}})
            if stage == 1:
                slot["stage1"] = fit
            elif stage == 2:
                slot["stage2"] = fit
            else:
                slot["stage3"][aux] = fit
    if failures_path is not None and os.path.exists(failures_path):
        with open(failures_path, "r", encoding="utf-8", newline="") as fh:
            reader = csv.reader(fh)
            next(reader)
            for row in reader:
                parts.setdefault(int(row[0]), {"stage3": {}, "failures": {}})[
                    "failures"
                ][int(row[2])] = row[3]
    return {
        task: StagedFit(
            target_task=task,
            stage1=slot["stage1"],
            stage2=slot["stage2"],
            stage3=slot["stage3"],
            failures=slot["failures"],
        )
        for task, slot in sorted(parts.items())
    }


@dataclass(frozen=True)
class FamilySelectionRow:
    """Model-selection errors for one family, averaged over tasks.

    ``l2`` and ``preq`` average per-shift task means across shifts;
    ``e_l2`` and ``e_preq`` work on points first averaged over shifts.
    ``excluded`` counts (task, shift) fits that failed per column.
    """

    family: CurveFamily
    l2: float
    e_l2: float
    preq: float
    e_preq: float
    excluded_l2: int
    excluded_e_l2: int
    excluded_preq: int
    excluded_e_preq: int


def average_points_over_shifts(points_by_shift) -> list[FitPoint]:
    """Per-fold-count means of values and realized counts across shifts."""
    grouped: dict[int, list[FitPoint]] = {}
    for pts in points_by_shift.values():
        for p in pts:
            grouped.setdefault(p.fold_count, []).append(p)
    out = []
    for fold_count in sorted(grouped):
        pts = grouped[fold_count]
        out.append(
            FitPoint(
                args=CurveArgs(
                    n_t=float(np.mean([p.args.n_t for p in pts])),
                    n_sigma=float(np.mean([p.args.n_sigma for p in pts])),
                    n_aux=float(np.mean([p.args.n_aux for p in pts])),
                ),
                value=float(np.mean([p.value for p in pts])),
                fold_count=fold_count,
                weight=float(np.mean([p.weight for p in pts])),
            )
        )
    return out


def select_family(
    points_by_task,
    families,
    *,
    seed: int = 0,
) -> list[FamilySelectionRow]:
    """Model-selection table over curve families.

    ``points_by_task`` maps task id -> shift id -> points of a single
    grid kind. Points are projected to each family's arity, so
    single-argument families regress on the target count alone. Four
    error columns are produced per family: squared error and
    prequential error per shift (averaged over tasks, then shifts) and
    the same two on shift-averaged points. Tasks whose fit fails are
    excluded from that column's mean and counted.
    """
    tasks = sorted(points_by_task)
    rows = []
    for family in families:
        per_shift_l2: dict[int, list[float]] = {}
        per_shift_preq: dict[int, list[float]] = {}
        e_l2_vals: list[float] = []
        e_preq_vals: list[float] = []
        excl = {"l2": 0, "e_l2": 0, "preq": 0, "e_preq": 0}
        for task in tasks:
            by_shift = points_by_task[task]
            for shift in sorted(by_shift):
                pts = project_points(by_shift[shift], family)
                try:
                    res = fit_curve(
                        pts, family, seed=derive_seed(seed, "sel", task, shift)
                    )
                    per_shift_l2.setdefault(shift, []).append(res.sse)
                except MtlcError:
                    excl["l2"] += 1
                try:
                    pe = prequential_error(
                        pts, family, seed=derive_seed(seed, "selp", task, shift)
                    )
                    per_shift_preq.setdefault(shift, []).append(pe)
                except MtlcError:
                    excl["preq"] += 1
            e_pts = project_points(average_points_over_shifts(by_shift), family)
            try:
                res = fit_curve(e_pts, family, seed=derive_seed(seed, "sele", task))
                e_l2_vals.append(res.sse)
            except MtlcError:
                excl["e_l2"] += 1
            try:
                e_preq_vals.append(
                    prequential_error(
                        e_pts, family, seed=derive_seed(seed, "selep", task)
                    )
                )
            except MtlcError:
                excl["e_preq"] += 1

        def shift_mean(per_shift: dict[int, list[float]]) -> float:
            means = [float(np.mean(v)) for v in per_shift.values() if v]
            return float(np.mean(means)) if means else float("nan")

        rows.append(
            FamilySelectionRow(
                family=family,
                l2=shift_mean(per_shift_l2),
                e_l2=float(np.mean(e_l2_vals)) if e_l2_vals else float("nan"),
                preq=shift_mean(per_shift_preq),
                e_preq=float(np.mean(e_preq_vals)) if e_preq_vals else float("nan"),
                excluded_l2=excl["l2"],
                excluded_e_l2=excl["e_l2"],
                excluded_preq=excl["preq"],
                excluded_e_preq=excl["e_preq"],
            )
        )
    return rows
