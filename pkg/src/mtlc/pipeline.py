"""Stage composition: split -> grid -> fit -> tag -> report.

One declarative JSON config drives every stage. A stage reruns when
its outputs are missing, the semantic config hash changed, or an
upstream stage ran in this invocation; otherwise it is skipped, so a
rerun over a completed directory is a no-op. The grid stage
additionally resumes row-by-row inside its CSV.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import os
import time
from dataclasses import dataclass

import numpy as np

from . import __version__
from .curves import CurveArgs, CurveFamily
from .data import (
    ROW_LEVEL,
    Dataset,
    FoldAssignment,
    SynthConfig,
    assign_folds,
    load_csv,
    load_folds,
    save_csv,
    save_folds,
    synth_generate,
)
from .errors import ConfigError, MissingInputError, MtlcError
from .fitter import StagedFit, fit_staged, read_staged_csv, write_staged_csv
from .grid import (
    KIND_MTL,
    KIND_STAG,
    KIND_STL,
    TrainSettings,
    average_over_shifts,
    execute_grid,
    observation_fit_points,
    plan_grid,
    read_grid_csv,
    stag_pair_points,
)
from .report import (
    CORR_COLUMNS,
    DECOMP_COLUMNS,
    FAMILY_COLUMNS,
    FORECAST_COLUMNS,
    SCATTER_COLUMNS,
    corr_cells,
    decomposition_cells,
    decomposition_rows,
    family_cells,
    family_selection_report,
    forecast_cells,
    gain_forecast,
    scatter_cells,
    stl_vs_mtl_report,
    tag_vs_mtlc_report,
    write_table_csv,
    write_table_md,
)
from .tag import read_tag_csv, tag_vs_fold_sweep
from .util import canonical_json, config_hash, derive_seed, sha256_file

logger = logging.getLogger(__name__)

NON_SEMANTIC_KEYS = ("out_dir", "parallelism")

DATASET_FILE = "dataset.csv"
SIMILARITY_FILE = "similarity.csv"
FOLDS_FILE = "folds.csv"
GRID_FILE = "grid.csv"
TAG_FILE = "tag.csv"
FIT_FILES = {"auroc": "fits_auroc.csv", "aupr": "fits_aupr.csv"}
FIT_FAILURES_FILE = "fit_failures.csv"
MANIFEST_FILE = "manifest.json"


@dataclass(frozen=True)
class RunConfig:
    """Parsed, validated run configuration."""

    seed: int
    dataset_path: str | None
    synth: SynthConfig | None
    n_folds: int
    grouping: str
    m_max: int
    grid_shifts: tuple[int, ...]
    stl: TrainSettings
    mtl: TrainSettings
    tag_fold_counts: tuple[int, ...]
    tag_shifts: tuple[int, ...]
    tag_sample_every: int
    tag_lookahead_lr: float | None
    tag_settings: TrainSettings
    fit_metrics: tuple[str, ...]
    families: tuple[CurveFamily, ...]
    family_metric: str
    budgets: tuple[float, ...] | None
    forecast_metric: str
    parallelism: int | None
    semantic: dict
    semantic_hash: str


def _settings_from(raw: dict, defaults: TrainSettings) -> TrainSettings:
    known = {f.name for f in dataclasses.fields(TrainSettings)}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown learner settings: {sorted(unknown)}")
    return dataclasses.replace(defaults, **raw)


def parse_config(raw: dict, base_dir: str = ".") -> RunConfig:
    """Validate the JSON config; errors name the offending field."""
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")
    seed = int(raw.get("seed", 0))

    dataset = raw.get("dataset", {})
    path = dataset.get("path")
    if path is not None:
        path = os.path.join(base_dir, path) if not os.path.isabs(path) else path
    synth_raw = dataset.get("synth")
    synth = None
    if synth_raw is not None:
        try:
            synth = SynthConfig(
                n_rows=int(synth_raw["n_rows"]),
                d=int(synth_raw["d"]),
                K=int(synth_raw["K"]),
                group_structure=tuple(
                    tuple(int(t) for t in g) for g in synth_raw["group_structure"]
                ),
                within_group_angle=float(synth_raw.get("within_group_angle", 0.0)),
                label_rate=(
                    tuple(float(v) for v in synth_raw["label_rate"])
                    if isinstance(synth_raw.get("label_rate", 1.0), list)
                    else float(synth_raw.get("label_rate", 1.0))
                ),
                mnar_strength=float(synth_raw.get("mnar_strength", 0.0)),
                noise_sd=float(synth_raw.get("noise_sd", 0.0)),
                seed=int(synth_raw.get("seed", seed)),
            )
        except KeyError as exc:
            raise ConfigError(f"dataset.synth missing field {exc.args[0]!r}") from None
        synth.validate()
    if path is None and synth is None:
        raise ConfigError("dataset must give 'path' or 'synth'")

    folds = raw.get("folds", {})
    n_folds = int(folds.get("n_folds", 10))
    grouping = folds.get("grouping", ROW_LEVEL)

    grid = raw.get("grid", {})
    m_max = int(grid.get("m_max", n_folds - 1))
    grid_shifts = tuple(int(s) for s in grid.get("shifts", [0]))
    stl = _settings_from(grid.get("stl", {}), TrainSettings(epochs=40))
    mtl = _settings_from(grid.get("mtl", {}), TrainSettings(epochs=300))

    tag = raw.get("tag", {})
    tag_fold_counts = tuple(int(m) for m in tag.get("fold_counts", range(1, m_max + 1)))
    tag_shifts = tuple(int(s) for s in tag.get("shifts", grid_shifts))
    tag_sample_every = int(tag.get("sample_every", 10))
    la = tag.get("lookahead_lr")
    tag_lookahead_lr = None if la is None else float(la)
    tag_settings = _settings_from(tag.get("settings", {}), mtl)

    fit = raw.get("fit", {})
    fit_metrics = tuple(fit.get("metrics", ["auroc", "aupr"]))
    if any(m not in ("auroc", "aupr") for m in fit_metrics):
        raise ConfigError("fit.metrics entries must be 'auroc' or 'aupr'")

    rep = raw.get("report", {})
    try:
        families = tuple(
            CurveFamily(name) for name in rep.get("families", ["ILOG2", "EXP3_1", "EXP4"])
        )
    except ValueError as exc:
        raise ConfigError(f"report.families: {exc}") from None
    family_metric = rep.get("family_metric", "auroc")
    budgets_raw = rep.get("budgets")
    budgets = None if budgets_raw is None else tuple(float(b) for b in budgets_raw)
    forecast_metric = rep.get("forecast_metric", "auroc")

    parallelism = raw.get("parallelism")
    if parallelism is not None:
        parallelism = int(parallelism)

    semantic = {k: v for k, v in raw.items() if k not in NON_SEMANTIC_KEYS}
    semantic["seed"] = seed
    semantic.pop("out_dir", None)

    cfg = RunConfig(
        seed=seed,
        dataset_path=path,
        synth=synth,
        n_folds=n_folds,
        grouping=grouping,
        m_max=m_max,
        grid_shifts=grid_shifts,
        stl=stl,
        mtl=mtl,
        tag_fold_counts=tag_fold_counts,
        tag_shifts=tag_shifts,
        tag_sample_every=tag_sample_every,
        tag_lookahead_lr=tag_lookahead_lr,
        tag_settings=tag_settings,
        fit_metrics=fit_metrics,
        families=families,
        family_metric=family_metric,
        budgets=budgets,
        forecast_metric=forecast_metric,
        parallelism=parallelism,
        semantic=semantic,
        semantic_hash=config_hash(semantic),
    )
    if not (1 <= m_max <= n_folds - 1):
        raise ConfigError("grid.m_max must lie in [1, n_folds - 1]")
    if any(not (0 <= s < n_folds) for s in grid_shifts):
        raise ConfigError("grid.shifts must lie in [0, n_folds)")
    return cfg


def load_config(path, overrides: dict | None = None) -> RunConfig:
    if not os.path.exists(path):
        raise MissingInputError(f"config file not found: {path}")
    with open(path, "r", encoding="utf-8") as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    if overrides:
        raw.update(overrides)
    return parse_config(raw, base_dir=os.path.dirname(os.path.abspath(path)))


# -------------------------------------------------------------- stage inputs


def _require(path, what: str):
    if not os.path.exists(path):
        raise MissingInputError(f"{what} not found: {path}")
    return path


def load_dataset(cfg: RunConfig, out_dir: str) -> Dataset:
    if cfg.dataset_path is not None:
        return load_csv(_require(cfg.dataset_path, "dataset CSV"))
    return load_csv(_require(os.path.join(out_dir, DATASET_FILE), "synthesized dataset"))


def load_fold_assignment(cfg: RunConfig, out_dir: str) -> FoldAssignment:
    path = _require(os.path.join(out_dir, FOLDS_FILE), "fold file")
    return load_folds(path, n_folds=cfg.n_folds, grouping=cfg.grouping)


# -------------------------------------------------------------------- stages


def stage_synth(cfg: RunConfig, out_dir: str) -> list[str]:
    if cfg.synth is None:
        raise ConfigError("dataset.synth is not configured")
    ds, sim = synth_generate(cfg.synth)
    save_csv(ds, os.path.join(out_dir, DATASET_FILE))
    write_table_csv(
        os.path.join(out_dir, SIMILARITY_FILE),
        ["task"] + list(ds.task_names),
        [[ds.task_names[i]] + [float(v) for v in sim[i]] for i in range(ds.n_tasks)],
    )
    return [DATASET_FILE, SIMILARITY_FILE]


def stage_split(cfg: RunConfig, out_dir: str) -> list[str]:
    ds = load_dataset(cfg, out_dir)
    fa = assign_folds(ds, cfg.n_folds, cfg.grouping, seed=derive_seed(cfg.seed, "folds"))
    save_folds(fa, ds, os.path.join(out_dir, FOLDS_FILE))
    return [FOLDS_FILE]


def stage_grid(cfg: RunConfig, out_dir: str, parallelism: int, resume: bool) -> list[str]:
    ds = load_dataset(cfg, out_dir)
    fa = load_fold_assignment(cfg, out_dir)
    plan = plan_grid(
        K=ds.n_tasks,
        n_folds=cfg.n_folds,
        m_max=cfg.m_max,
        shifts=cfg.grid_shifts,
        master_seed=cfg.seed,
        stl=cfg.stl,
        mtl=cfg.mtl,
    )
    execute_grid(
        plan, ds, fa,
        parallelism=parallelism,
        out_path=os.path.join(out_dir, GRID_FILE),
        resume=resume,
    )
    return [GRID_FILE]


def compute_staged_fits(observations, metrics, seed: int):
    """Staged fits per metric and task from grid observations.

    Points are pooled across shifts (shift-averaging at desk scale
    would leave stage 3 with zero residual degrees of freedom).
    Returns (fits, failures) where failures maps (metric, task) to a
    reason for tasks whose stage 1 or 2 could not be fitted.
    """
    tasks = sorted(
        {o.spec.target_task for o in observations if o.spec.kind == KIND_STL}
    )
    aux_ids = sorted(
        {o.spec.aux_task for o in observations if o.spec.kind == KIND_STAG}
    )
    fits: dict[str, dict[int, StagedFit]] = {}
    failures: dict[tuple[str, int], str] = {}
    for metric in metrics:
        fits[metric] = {}
        for task in tasks:
            stl = _pool(observation_fit_points(observations, KIND_STL, metric, task))
            mtl = _pool(observation_fit_points(observations, KIND_MTL, metric, task))
            stag = {}
            for j in aux_ids:
                if j == task:
                    continue
                pts = _pool(stag_pair_points(observations, metric, task, j))
                if pts:
                    stag[j] = pts
            try:
                fits[metric][task] = fit_staged(
                    stl, mtl, stag, task, seed=derive_seed(seed, "fit", metric, task)
                )
            except MtlcError as exc:
                failures[(metric, task)] = f"{type(exc).__name__}: {exc}"
                logger.warning("staged fit failed for task %d (%s): %s", task, metric, exc)
    return fits, failures


def _pool(by_shift: dict[int, list]) -> list:
    out = []
    for shift in sorted(by_shift):
        out.extend(by_shift[shift])
    return out


def stage_fit(cfg: RunConfig, out_dir: str) -> list[str]:
    observations = read_grid_csv(_require(os.path.join(out_dir, GRID_FILE), "grid CSV"))
    fits, failures = compute_staged_fits(observations, cfg.fit_metrics, cfg.seed)
    outputs = []
    for metric in cfg.fit_metrics:
        path = os.path.join(out_dir, FIT_FILES[metric])
        write_staged_csv(fits[metric], path)
        outputs.append(FIT_FILES[metric])
    _write_fit_failures(fits, failures, os.path.join(out_dir, FIT_FAILURES_FILE), cfg.fit_metrics)
    outputs.append(FIT_FAILURES_FILE)
    return outputs


def _write_fit_failures(fits, failures, path, metrics) -> None:
    rows = []
    for metric in metrics:
        for (m, task), reason in sorted(failures.items()):
            if m == metric:
                rows.append([metric, task, 0, -1, reason])
        for task in sorted(fits.get(metric, {})):
            for aux, reason in sorted(fits[metric][task].failures.items()):
                rows.append([metric, task, 3, aux, reason])
    write_table_csv(path, ["metric", "task_id", "stage", "aux_task_id", "reason"], rows)


def stage_tag(cfg: RunConfig, out_dir: str, parallelism: int) -> list[str]:
    ds = load_dataset(cfg, out_dir)
    fa = load_fold_assignment(cfg, out_dir)
    tag_vs_fold_sweep(
        ds, fa,
        fold_counts=cfg.tag_fold_counts,
        shifts=cfg.tag_shifts,
        settings=cfg.tag_settings,
        master_seed=cfg.seed,
        sample_every=cfg.tag_sample_every,
        lookahead_lr=cfg.tag_lookahead_lr,
        parallelism=parallelism,
        out_path=os.path.join(out_dir, TAG_FILE),
    )
    return [TAG_FILE]


def _read_fits(cfg: RunConfig, out_dir: str):
    fits = {}
    for metric in cfg.fit_metrics:
        path = _require(os.path.join(out_dir, FIT_FILES[metric]), f"{metric} fit CSV")
        fits[metric] = read_staged_csv(path)
    return fits


def _current_args_from(e_observations, m_max: int) -> dict[int, CurveArgs]:
    out = {}
    for obs in e_observations:
        if obs.kind != KIND_MTL or obs.m != m_max:
            continue
        for rec in obs.records:
            out[rec.task] = CurveArgs(n_t=rec.n_t, n_sigma=rec.n_sigma)
    return out


def _default_budgets(current_args: dict[int, CurveArgs], m_max: int) -> dict[int, list[float]]:
    # one average fold's worth of labels per task
    return {t: [args.n_t / m_max] for t, args in current_args.items()}


def report_names(cfg: RunConfig) -> dict[str, str]:
    h = cfg.semantic_hash[:12]
    names = {}
    for base in ("family_selection", "stl_vs_mtl", "stl_vs_mtl_scatter",
                 "decomposition", "tag_vs_mtlc", "gain_forecast"):
        names[base] = f"{base}.{h}"
    return names


def stage_report(cfg: RunConfig, out_dir: str) -> list[str]:
    observations = read_grid_csv(_require(os.path.join(out_dir, GRID_FILE), "grid CSV"))
    fits = _read_fits(cfg, out_dir)
    e_obs = average_over_shifts(observations)
    names = report_names(cfg)
    outputs = []

    def emit(base, title, columns, cells, md=True):
        csv_name = names[base] + ".csv"
        write_table_csv(os.path.join(out_dir, csv_name), columns, cells)
        outputs.append(csv_name)
        if md:
            md_name = names[base] + ".md"
            write_table_md(os.path.join(out_dir, md_name), title, columns, cells)
            outputs.append(md_name)

    fam_rows = family_selection_report(
        observations, cfg.families, metric=cfg.family_metric,
        seed=derive_seed(cfg.seed, "family"),
    )
    emit("family_selection", "Learning-curve family selection", FAMILY_COLUMNS,
         family_cells(fam_rows))

    mtl_points = {
        metric: {
            task: _pool(observation_fit_points(observations, KIND_MTL, metric, task))
            for task in sorted(fits[metric])
        }
        for metric in cfg.fit_metrics
    }
    corr_rows, scatter_rows = stl_vs_mtl_report(
        fits, mtl_points, e_obs, cfg.m_max, seed=derive_seed(cfg.seed, "stlmtl")
    )
    emit("stl_vs_mtl", "Single-task vs multi-task parameter shifts", CORR_COLUMNS,
         corr_cells(corr_rows))
    emit("stl_vs_mtl_scatter", "Per-task parameter scatter", SCATTER_COLUMNS,
         scatter_cells(scatter_rows), md=False)

    emit("decomposition", "Transfer decomposition", DECOMP_COLUMNS,
         decomposition_cells(decomposition_rows(fits)))

    tag_path = os.path.join(out_dir, TAG_FILE)
    if os.path.exists(tag_path):
        n_tasks = max(max(fits[m]) for m in cfg.fit_metrics if fits[m]) + 1
        tag_results = read_tag_csv(tag_path, n_tasks=n_tasks)
        tag_rows = tag_vs_mtlc_report(tag_results, fits)
        emit("tag_vs_mtlc", "Affinity vs curve-coefficient correlation", CORR_COLUMNS,
             corr_cells(tag_rows))

    outputs.extend(stage_forecast(cfg, out_dir, _precomputed=(fits, e_obs)))
    return outputs


def stage_forecast(cfg: RunConfig, out_dir: str, _precomputed=None) -> list[str]:
    if _precomputed is None:
        observations = read_grid_csv(_require(os.path.join(out_dir, GRID_FILE), "grid CSV"))
        fits = _read_fits(cfg, out_dir)
        e_obs = average_over_shifts(observations)
    else:
        fits, e_obs = _precomputed
    metric = cfg.forecast_metric
    if metric not in fits:
        raise ConfigError(f"forecast metric {metric!r} has no fits")
    current_args = _current_args_from(e_obs, cfg.m_max)
    budgets = (
        list(cfg.budgets) if cfg.budgets is not None
        else _default_budgets(current_args, cfg.m_max)
    )
    rows, skipped = gain_forecast(fits[metric], current_args, budgets, metric=metric)
    for task, reason in sorted(skipped.items()):
        logger.info("forecast skipped task %d: %s", task, reason)
    names = report_names(cfg)
    csv_name = names["gain_forecast"] + ".csv"
    md_name = names["gain_forecast"] + ".md"
    write_table_csv(os.path.join(out_dir, csv_name), FORECAST_COLUMNS, forecast_cells(rows))
    write_table_md(
        os.path.join(out_dir, md_name), "Acquisition ranking by predicted gain",
        FORECAST_COLUMNS, forecast_cells(rows),
    )
    return [csv_name, md_name]


# ------------------------------------------------------------------ manifest


def write_manifest(cfg: RunConfig, out_dir: str, command: str, outputs: list[str],
                   started: float, finished: float) -> None:
    inputs = {}
    if cfg.dataset_path is not None and os.path.exists(cfg.dataset_path):
        inputs[os.path.basename(cfg.dataset_path)] = sha256_file(cfg.dataset_path)
    manifest = {
        "artifact_version": __version__,
        "command": command,
        "config": cfg.semantic,
        "config_hash": cfg.semantic_hash,
        "master_seed": cfg.seed,
        "inputs": inputs,
        "outputs": sorted(set(outputs)),
        "started": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime(started)),
        "finished": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime(finished)),
    }
    path = os.path.join(out_dir, MANIFEST_FILE)
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(canonical_json(manifest))
        fh.write("\n")
    os.replace(tmp, path)


def read_manifest(out_dir: str) -> dict | None:
    path = os.path.join(out_dir, MANIFEST_FILE)
    if not os.path.exists(path):
        return None
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


# ------------------------------------------------------------------ pipeline


def _outputs_exist(out_dir: str, names: list[str]) -> bool:
    return all(os.path.exists(os.path.join(out_dir, n)) for n in names)


def run_pipeline(cfg: RunConfig, out_dir: str, parallelism: int, resume: bool = True) -> list[str]:
    """Run all stages with staleness-based skipping.

    Returns the list of stage names that actually ran (empty means the
    directory was already up to date).
    """
    os.makedirs(out_dir, exist_ok=True)
    manifest = read_manifest(out_dir)
    config_changed = manifest is None or manifest.get("config_hash") != cfg.semantic_hash

    names = report_names(cfg)
    report_files = [names[b] + ".csv" for b in
                    ("family_selection", "stl_vs_mtl", "stl_vs_mtl_scatter",
                     "decomposition", "gain_forecast")]
    report_files += [names["tag_vs_mtlc"] + ".csv"]
    expected = {
        "synth": [DATASET_FILE, SIMILARITY_FILE],
        "split": [FOLDS_FILE],
        "grid": [GRID_FILE],
        "fit": [FIT_FILES[m] for m in cfg.fit_metrics],
        "tag": [TAG_FILE],
        "report": report_files,
    }
    deps = {
        "synth": [],
        "split": ["synth"] if cfg.synth is not None else [],
        "grid": ["split"],
        "fit": ["grid"],
        "tag": ["split"],
        "report": ["grid", "fit", "tag"],
    }
    ran: list[str] = []
    all_outputs: list[str] = []
    started = time.time()
    stages = (["synth"] if cfg.synth is not None and cfg.dataset_path is None else [])
    stages += ["split", "grid", "fit", "tag", "report"]
    for stage in stages:
        needs_run = (
            config_changed
            or not _outputs_exist(out_dir, expected[stage])
            or any(d in ran for d in deps[stage])
        )
        if not needs_run:
            logger.info("stage %s: up to date", stage)
            continue
        logger.info("stage %s: running", stage)
        if stage == "synth":
            all_outputs += stage_synth(cfg, out_dir)
        elif stage == "split":
            all_outputs += stage_split(cfg, out_dir)
        elif stage == "grid":
            all_outputs += stage_grid(cfg, out_dir, parallelism, resume)
        elif stage == "fit":
            all_outputs += stage_fit(cfg, out_dir)
        elif stage == "tag":
            all_outputs += stage_tag(cfg, out_dir, parallelism)
        elif stage == "report":
            all_outputs += stage_report(cfg, out_dir)
        ran.append(stage)
    if ran:
        write_manifest(cfg, out_dir, "pipeline", all_outputs, started, time.time())
    return ran
