"""Synthetic clustered regression tasks (Settings 1-4) and CSV ingestion.

Every task draws from its own child of ``np.random.SeedSequence(seed)``, so
task m's data does not depend on how many tasks are generated or in which
order they are built.
"""

import logging
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd
from sklearn.model_selection import train_test_split

from .errors import IngestionError, ParameterError, ShapeError
from .huber import TaskDataset

logger = logging.getLogger(__name__)

SETTINGS = ('S1', 'S2', 'S3', 'S4')
NOISES = ('normal', 't2', 'cauchy')
CAUCHY_SCALE = 1.5
EQUICORRELATION = 0.3
FIRST_GROUP_SHARE = 0.6

# Nonzero leading coordinates of the two group centers
CENTER_HEADS = (np.array([2.0, 3.0, 4.0]), np.array([-1.0, 2.0, 3.0]))


@dataclass(frozen=True)
class ScenarioConfig:
    setting: str = 'S1'
    n: int = 100
    p: int = 100
    m: int = 10
    noise: str = None
    h: float = 1.0
    delta: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.setting not in SETTINGS:
            raise ParameterError(f"Unknown setting '{self.setting}', expected one of {SETTINGS}")
        if self.noise is None:
            object.__setattr__(self, 'noise', 'normal' if self.setting == 'S2' else 't2')
        if self.noise not in NOISES:
            raise ParameterError(f"Unknown noise '{self.noise}', expected one of {NOISES}")
        if self.n < 1 or self.p < 1 or self.m < 1:
            raise ParameterError(f"n, p and m must be positive, got n={self.n}, p={self.p}, m={self.m}")
        if self.p < len(CENTER_HEADS[0]):
            raise ParameterError(f"Settings need p >= {len(CENTER_HEADS[0])}, got p={self.p}")
        if self.h < 0 or self.delta < 0:
            raise ParameterError(f"h and delta must be nonnegative, got h={self.h}, delta={self.delta}")
        if self.seed < 0:
            raise ParameterError(f"seed must be nonnegative, got {self.seed}")

    @property
    def perturbation_scale(self):
        return 0.1 if self.setting == 'S2' else 0.3


@dataclass(frozen=True)
class GroundTruth:
    betas_true: np.ndarray
    labels_true: np.ndarray
    centers_true: np.ndarray
    s0: int
    q0: int
    h: float
    delta: float

    def group_supports(self):
        """Union support I*_k of the true coefficients in each group"""
        supports = []
        for k in range(self.centers_true.shape[0]):
            members = self.betas_true[self.labels_true == k]
            supports.append(np.flatnonzero(np.any(members != 0, axis=0)).tolist())
        return supports


def gen_design(n, p, seed):
    """n x p design with unit variances and pairwise correlation 0.3.

    ``seed`` may be an int, a SeedSequence or a Generator.
    """
    rng = np.random.default_rng(seed)
    shared = rng.standard_normal((n, 1))
    own = rng.standard_normal((n, p))
    if p == 1:
        return own
    return np.sqrt(EQUICORRELATION) * shared + np.sqrt(1.0 - EQUICORRELATION) * own


def _draw_noise(rng, kind, n):
    if kind == 'normal':
        return rng.standard_normal(n)
    if kind == 't2':
        return rng.standard_t(2, size=n)
    return CAUCHY_SCALE * rng.standard_cauchy(n)


def base_centers(p):
    centers = np.zeros((len(CENTER_HEADS), p))
    for k, head in enumerate(CENTER_HEADS):
        centers[k, :head.size] = head
    return centers


def _task_beta(cfg, rng, center):
    head = len(CENTER_HEADS[0])
    beta = center.copy()
    perturbation = rng.normal(0.0, cfg.perturbation_scale, size=head)
    if cfg.setting == 'S3':
        norm = np.linalg.norm(perturbation)
        while norm == 0.0:
            perturbation = rng.normal(0.0, cfg.perturbation_scale, size=head)
            norm = np.linalg.norm(perturbation)
        perturbation = cfg.h * perturbation / norm
    beta[:head] += perturbation
    return beta


def true_labels(m):
    first = int(round(FIRST_GROUP_SHARE * m))
    return np.array([0] * first + [1] * (m - first), dtype=np.int64)


def gen_setting(cfg):
    """Generate M tasks for the configured setting and their ground truth"""
    centers = base_centers(cfg.p)
    if cfg.setting == 'S4':
        centers = cfg.delta * centers
    labels = true_labels(cfg.m)
    streams = np.random.SeedSequence(cfg.seed).spawn(cfg.m)

    datasets, betas = [], []
    for task, stream in enumerate(streams):
        rng = np.random.default_rng(stream)
        beta = _task_beta(cfg, rng, centers[labels[task]])
        x = gen_design(cfg.n, cfg.p, rng)
        y = x @ beta + _draw_noise(rng, cfg.noise, cfg.n)
        datasets.append(TaskDataset(x, y, task_id=task))
        betas.append(beta)

    betas = np.array(betas)
    spread = np.linalg.norm(betas - centers[labels], axis=1)
    separation = min(
        np.linalg.norm(centers[a] - centers[b])
        for a in range(len(centers)) for b in range(a + 1, len(centers))
    )
    head = len(CENTER_HEADS[0])
    truth = GroundTruth(
        betas_true=betas,
        labels_true=labels,
        centers_true=centers,
        s0=head,
        q0=head,
        h=float(spread.max()),
        delta=float(separation),
    )
    logger.debug(
        f"Generated {cfg.setting}: M={cfg.m}, n={cfg.n}, p={cfg.p}, noise={cfg.noise}, "
        f"h={truth.h:.4g}, delta={truth.delta:.4g}"
    )
    return datasets, truth


def _read_frame(path):
    try:
        return pd.read_csv(
            path,
            dtype=str,
            keep_default_na=False,
            skip_blank_lines=False,
            skipinitialspace=True,
        )
    except FileNotFoundError as e:
        raise IngestionError(f"File not found: {path}", path=str(path)) from e
    except pd.errors.EmptyDataError as e:
        raise IngestionError(f"{path}: file is empty (a header row is required)", path=str(path)) from e
    except pd.errors.ParserError as e:
        found = re.search(r"line (\d+)", str(e))
        line = int(found.group(1)) if found else None
        raise IngestionError(f"{path}: {e}", path=str(path), line=line) from e


def _parse_frame(frame, path):
    if frame.shape[1] < 2:
        raise IngestionError(
            f"{path}: expected a response column and at least one covariate", path=str(path), line=1
        )
    if frame.shape[0] == 0:
        raise IngestionError(f"{path}: no data rows", path=str(path), line=2)

    cells = frame.to_numpy(dtype=object)
    missing = frame.isna().to_numpy()
    values = np.empty(cells.shape, dtype=np.float64)
    for row in range(cells.shape[0]):
        line = row + 2
        if missing[row].any():
            raise IngestionError(
                f"{path}, line {line}: expected {cells.shape[1]} fields", path=str(path), line=line
            )
        for col in range(cells.shape[1]):
            cell = cells[row, col]
            try:
                values[row, col] = float(cell)
            except ValueError as e:
                problem = "missing field" if cell == "" else f"non-numeric value '{cell}'"
                raise IngestionError(
                    f"{path}, line {line}: {problem} in column '{frame.columns[col]}'",
                    path=str(path),
                    line=line,
                ) from e
        if not np.all(np.isfinite(values[row])):
            raise IngestionError(f"{path}, line {line}: non-finite value", path=str(path), line=line)
    return values


def load_csv_tasks(paths):
    """Read one task per CSV file: header row, response first, then covariates"""
    if not paths:
        raise IngestionError("No CSV files given")
    datasets = []
    p = None
    for task, path in enumerate(paths):
        values = _parse_frame(_read_frame(path), path)
        if p is None:
            p = values.shape[1] - 1
        elif values.shape[1] - 1 != p:
            raise IngestionError(
                f"{path}: {values.shape[1] - 1} covariates, expected {p} like the first file",
                path=str(path),
                line=1,
            )
        datasets.append(TaskDataset(values[:, 1:], values[:, 0], task_id=task))
        logger.debug(f"Loaded {path}: n={values.shape[0]}, p={p}")
    logger.info(f"Loaded {len(datasets)} tasks from CSV (p={p})")
    return datasets


def write_csv_task(d, path):
    """Write a dataset in the ingestion format, with exactly round-tripping floats"""
    columns = ['y'] + [f"x{j + 1}" for j in range(d.p)]
    frame = pd.DataFrame(np.column_stack([d.y, d.x]), columns=columns)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format='%.17g', lineterminator='\n')
    return path


def split_task(d, test_fraction, seed):
    """Random (train, test) split of one task"""
    if not 0 < test_fraction < 1:
        raise ParameterError(f"test_fraction must lie in (0, 1), got {test_fraction}")
    n_test = int(np.ceil(test_fraction * d.n))
    if n_test < 1 or n_test >= d.n:
        raise ShapeError(f"Task {d.task_id}: cannot split n={d.n} with test_fraction={test_fraction}")
    x_train, x_test, y_train, y_test = train_test_split(
        d.x, d.y, test_size=n_test, random_state=int(seed) % (2 ** 32)
    )
    return TaskDataset(x_train, y_train, d.task_id), TaskDataset(x_test, y_test, d.task_id)

