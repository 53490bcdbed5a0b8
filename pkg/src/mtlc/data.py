"""Dataset ingestion, synthetic generation and fold scheduling.

Datasets are dense feature matrices with a sparse, maskable multi-task
binary label matrix. Rows may carry a group identifier; group-level
fold assignment keeps all rows of a group in one fold, the stand-in
for scaffold-style splits that avoid series bias.

Fold shifts rotate which folds form the ordered training prefix:
under shift ``s`` the first ``m`` folds are the raw folds
``{s, s+1, ..., s+m-1 mod n_folds}`` and the test fold is the last
position, raw fold ``(s - 1) mod n_folds``.
"""

from __future__ import annotations

import csv
import dataclasses
import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ParseError, SchemaError
from .util import fmt_float

GROUP_COLUMN = "group"
FEATURE_PREFIX = "f_"
TASK_PREFIX = "y_"

ROW_LEVEL = "row-level"
GROUP_LEVEL = "group-level"


@dataclass(frozen=True)
class Dataset:
    """Dense features with a maskable binary label matrix.

    ``mask`` entries that are False mean the label is absent; the
    corresponding ``labels`` values carry no semantics.
    """

    features: np.ndarray
    labels: np.ndarray
    mask: np.ndarray
    task_names: tuple[str, ...]
    feature_names: tuple[str, ...]
    group_id: tuple[str, ...] | None = None

    def __post_init__(self) -> None:
        n, d = self.features.shape
        if self.labels.shape != self.mask.shape or self.labels.shape[0] != n:
            raise ValueError("labels/mask shape inconsistent with features")
        if d != len(self.feature_names) or self.labels.shape[1] != len(self.task_names):
            raise ValueError("column names inconsistent with matrix shapes")
        if self.group_id is not None and len(self.group_id) != n:
            raise ValueError("group_id length inconsistent with row count")

    @property
    def n_rows(self) -> int:
        return self.features.shape[0]

    @property
    def n_tasks(self) -> int:
        return self.labels.shape[1]


def _require_labels(ds: Dataset) -> None:
    counts = ds.mask.sum(axis=0)
    empty = [ds.task_names[t] for t in np.nonzero(counts == 0)[0]]
    if empty:
        raise SchemaError(f"task(s) without any present label: {', '.join(empty)}")


def load_csv(path) -> Dataset:
    """Read a dataset CSV.

    Header columns prefixed ``f_`` are features and ``y_`` are tasks;
    an optional ``group`` column carries row group identifiers. Empty
    label cells mean the label is missing; otherwise labels must be 0
    or 1. Raises SchemaError for bad headers and ParseError naming the
    offending row and column for bad cells.
    """
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        feat_idx, task_idx = [], []
        group_pos = None
        for pos, name in enumerate(header):
            if name.startswith(FEATURE_PREFIX):
                feat_idx.append(pos)
            elif name.startswith(TASK_PREFIX):
                task_idx.append(pos)
            elif name == GROUP_COLUMN:
                group_pos = pos
            else:
                raise SchemaError(f"{path}: unrecognized column {name!r}")
        if not feat_idx:
            raise SchemaError(f"{path}: no feature columns (prefix {FEATURE_PREFIX!r})")
        if not task_idx:
            raise SchemaError(f"{path}: no task columns (prefix {TASK_PREFIX!r})")

        feats: list[list[float]] = []
        labels: list[list[int]] = []
        mask: list[list[bool]] = []
        groups: list[str] = []
        for line_no, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise ParseError(f"{path}: row {line_no} has {len(row)} cells, expected {len(header)}")
            frow = []
            for pos in feat_idx:
                try:
                    frow.append(float(row[pos]))
                except ValueError:
                    raise ParseError(
                        f"{path}: row {line_no}, column {header[pos]!r}: bad feature {row[pos]!r}"
                    ) from None
            lrow, mrow = [], []
            for pos in task_idx:
                cell = row[pos]
                if cell == "":
                    lrow.append(0)
                    mrow.append(False)
                elif cell in ("0", "1"):
                    lrow.append(int(cell))
                    mrow.append(True)
                else:
                    raise ParseError(
                        f"{path}: row {line_no}, column {header[pos]!r}: bad label {cell!r}"
                    )
            feats.append(frow)
            labels.append(lrow)
            mask.append(mrow)
            if group_pos is not None:
                groups.append(row[group_pos])

    ds = Dataset(
        features=np.array(feats, dtype=float).reshape(len(feats), len(feat_idx)),
        labels=np.array(labels, dtype=np.int8).reshape(len(labels), len(task_idx)),
        mask=np.array(mask, dtype=bool).reshape(len(mask), len(task_idx)),
        task_names=tuple(header[pos][len(TASK_PREFIX):] for pos in task_idx),
        feature_names=tuple(header[pos][len(FEATURE_PREFIX):] for pos in feat_idx),
        group_id=tuple(groups) if group_pos is not None else None,
    )
    _require_labels(ds)
    return ds


def save_csv(ds: Dataset, path) -> None:
    """Write the canonical CSV form (LF endings, shortest float repr)."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        header = [FEATURE_PREFIX + n for n in ds.feature_names]
        header += [TASK_PREFIX + n for n in ds.task_names]
        if ds.group_id is not None:
            header.append(GROUP_COLUMN)
        writer.writerow(header)
        for i in range(ds.n_rows):
            row = [fmt_float(v) for v in ds.features[i]]
            row += [
                str(int(ds.labels[i, t])) if ds.mask[i, t] else ""
                for t in range(ds.n_tasks)
            ]
            if ds.group_id is not None:
                row.append(ds.group_id[i])
            writer.writerow(row)


@dataclass(frozen=True)
class SynthConfig:
    """Synthetic multi-task generator settings.

    Tasks are partitioned into latent groups; each task's weight vector
    is cos(angle) times its group's shared direction plus sin(angle)
    times a private direction, so the angle controls within-group
    similarity. ``label_rate`` (scalar or per-task) sets label
    presence; ``mnar_strength`` tilts presence toward rows with high
    task score, making the missingness informative.
    """

    n_rows: int
    d: int
    K: int
    group_structure: tuple[tuple[int, ...], ...]
    within_group_angle: float = 0.0
    label_rate: float | tuple[float, ...] = 1.0
    mnar_strength: float = 0.0
    noise_sd: float = 0.0
    seed: int = 0

    def rates(self) -> np.ndarray:
        if isinstance(self.label_rate, (int, float)):
            return np.full(self.K, float(self.label_rate))
        return np.asarray(self.label_rate, dtype=float)

    def validate(self) -> None:
        if self.n_rows < 1 or self.d < 1 or self.K < 1:
            raise ConfigError("n_rows, d and K must all be >= 1")
        flat = [t for g in self.group_structure for t in g]
        if sorted(flat) != list(range(self.K)):
            raise ConfigError("group_structure must partition tasks 0..K-1")
        if not (0.0 <= self.within_group_angle <= math.pi / 2):
            raise ConfigError("within_group_angle must lie in [0, pi/2]")
        rates = self.rates()
        if rates.shape != (self.K,) or np.any(rates <= 0) or np.any(rates > 1):
            raise ConfigError("label_rate entries must lie in (0, 1]")
        if self.mnar_strength < 0:
            raise ConfigError("mnar_strength must be >= 0")
        if self.noise_sd < 0:
            raise ConfigError("noise_sd must be >= 0")
        if self.d < len(self.group_structure):
            raise ConfigError("d must be >= number of task groups")


def synth_generate(cfg: SynthConfig) -> tuple[Dataset, np.ndarray]:
    """Generate a dataset with known transfer structure.

    Returns the dataset and the ground-truth task-similarity matrix
    (pairwise cosine of the task weight vectors). Group shared
    directions are exactly orthogonal coordinate axes; features are
    i.i.d. standard normal, so this loses no generality.
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    x = rng.standard_normal((cfg.n_rows, cfg.d))

    weights = np.zeros((cfg.K, cfg.d))
    cos_a, sin_a = math.cos(cfg.within_group_angle), math.sin(cfg.within_group_angle)
    for g, tasks in enumerate(cfg.group_structure):
        for t in tasks:
            v = rng.standard_normal(cfg.d)
            v[g] = 0.0  # exactly orthogonal to the shared axis e_g
            norm = np.linalg.norm(v)
            if norm == 0:
                raise ConfigError("degenerate private direction; increase d")
            v /= norm
            weights[t] = sin_a * v
            weights[t, g] += cos_a

    scores = x @ weights.T
    if cfg.noise_sd > 0:
        probs = 1.0 / (1.0 + np.exp(-scores / cfg.noise_sd))
        labels = (rng.random((cfg.n_rows, cfg.K)) < probs).astype(np.int8)
    else:
        labels = (scores > 0).astype(np.int8)

    rates = cfg.rates()
    if cfg.mnar_strength > 0:
        tilt = 2.0 / (1.0 + np.exp(-cfg.mnar_strength * scores))
        present_p = np.clip(rates[None, :] * tilt, 0.0, 1.0)
    else:
        present_p = np.broadcast_to(rates[None, :], (cfg.n_rows, cfg.K))
    mask = rng.random((cfg.n_rows, cfg.K)) < present_p

    counts = mask.sum(axis=0)
    if np.any(counts == 0):
        bad = np.nonzero(counts == 0)[0].tolist()
        raise ConfigError(f"tasks {bad} drew zero present labels; raise label_rate or n_rows")

    norms = np.linalg.norm(weights, axis=1)
    sim = (weights @ weights.T) / np.outer(norms, norms)

    ds = Dataset(
        features=x,
        labels=labels,
        mask=mask,
        task_names=tuple(f"t{i:02d}" for i in range(cfg.K)),
        feature_names=tuple(f"x{j}" for j in range(cfg.d)),
    )
    return ds, sim


@dataclass(frozen=True)
class FoldAssignment:
    """Per-row fold indices plus the active permutation shift."""

    n_folds: int
    fold_of_row: np.ndarray
    shift: int = 0
    grouping: str = ROW_LEVEL

    def with_shift(self, shift: int) -> "FoldAssignment":
        return dataclasses.replace(self, shift=shift % self.n_folds)

    def positions(self) -> np.ndarray:
        """Training-prefix position of each row under the shift."""
        return (self.fold_of_row - self.shift) % self.n_folds

    def test_rows(self) -> np.ndarray:
        """Rows of the held-out fold (last position under the shift)."""
        return np.nonzero(self.positions() == self.n_folds - 1)[0]


def assign_folds(ds: Dataset, n_folds: int, grouping: str = ROW_LEVEL, seed: int = 0) -> FoldAssignment:
    """Uniform random fold per row or per group, deterministic per seed."""
    if n_folds < 2:
        raise ConfigError("n_folds must be >= 2")
    if grouping not in (ROW_LEVEL, GROUP_LEVEL):
        raise ConfigError(f"grouping must be {ROW_LEVEL!r} or {GROUP_LEVEL!r}")
    rng = np.random.default_rng(seed)
    if grouping == ROW_LEVEL:
        folds = rng.integers(0, n_folds, size=ds.n_rows)
    else:
        if ds.group_id is None:
            raise ConfigError("group-level folds require a group column")
        uniq = sorted(set(ds.group_id))
        per_group = dict(zip(uniq, rng.integers(0, n_folds, size=len(uniq))))
        folds = np.array([per_group[g] for g in ds.group_id])
    return FoldAssignment(
        n_folds=n_folds, fold_of_row=folds.astype(np.int64), grouping=grouping
    )


def save_folds(fa: FoldAssignment, ds: Dataset, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["row_index", "group_id", "fold"])
        for i in range(ds.n_rows):
            gid = ds.group_id[i] if ds.group_id is not None else ""
            writer.writerow([str(i), gid, str(int(fa.fold_of_row[i]))])


def load_folds(path, n_folds: int | None = None, grouping: str = ROW_LEVEL) -> FoldAssignment:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != ["row_index", "group_id", "fold"]:
            raise SchemaError(f"{path}: bad fold file header {header}")
        folds = []
        for line_no, row in enumerate(reader, start=2):
            try:
                idx, fold = int(row[0]), int(row[2])
            except (ValueError, IndexError):
                raise ParseError(f"{path}: row {line_no}: bad fold row {row!r}") from None
            if idx != len(folds):
                raise ParseError(f"{path}: row {line_no}: non-contiguous row_index")
            folds.append(fold)
    arr = np.array(folds, dtype=np.int64)
    return FoldAssignment(
        n_folds=int(arr.max()) + 1 if n_folds is None else n_folds,
        fold_of_row=arr,
        grouping=grouping,
    )


@dataclass(frozen=True)
class TrainingSelection:
    """Rows and labels chosen for one training run.

    ``label_mask[i, t]`` is True when row i's label for task t is both
    present and inside the selected folds; ``n_per_task`` holds the
    realized labeled-outcome counts that become curve arguments.
    """

    label_mask: np.ndarray
    n_per_task: np.ndarray
    train_rows: np.ndarray
    test_rows: np.ndarray


def training_subset(
    ds: Dataset,
    fa: FoldAssignment,
    fold_counts,
    extra: tuple[int, int] | None = None,
) -> TrainingSelection:
    """Select each task's labels from its leading folds under the shift.

    ``fold_counts`` gives the number of training folds per task (a
    scalar applies to all tasks). ``extra=(task, fold_position)`` adds
    one more fold of labels for a single auxiliary task. The last fold
    position is always held out for testing.
    """
    if np.isscalar(fold_counts):
        fold_counts = np.full(ds.n_tasks, int(fold_counts))
    else:
        fold_counts = np.asarray(fold_counts, dtype=int)
    if fold_counts.shape != (ds.n_tasks,):
        raise ConfigError("fold_counts must give one entry per task")
    if np.any(fold_counts < 0) or np.any(fold_counts > fa.n_folds - 1):
        raise ConfigError("fold_counts must lie in [0, n_folds - 1]")
    positions = fa.positions()
    sel = ds.mask & (positions[:, None] < fold_counts[None, :])
    if extra is not None:
        aux, pos = int(extra[0]), int(extra[1])
        if not (0 <= aux < ds.n_tasks):
            raise ConfigError(f"auxiliary task {aux} out of range")
        if pos < fold_counts[aux]:
            raise ConfigError("extra fold already included in the training prefix")
        if pos >= fa.n_folds - 1:
            raise ConfigError("extra fold would consume the test fold")
        sel[:, aux] |= ds.mask[:, aux] & (positions == pos)
    return TrainingSelection(
        label_mask=sel,
        n_per_task=sel.sum(axis=0).astype(np.int64),
        train_rows=np.nonzero(sel.any(axis=1))[0],
        test_rows=np.nonzero(positions == fa.n_folds - 1)[0],
    )
