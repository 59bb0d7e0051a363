"""Cycle-life prediction: closed-form Ridge, MPE scoring, nested CV.

The evaluation protocol holds out a random 20% of cells per run, picks the
regularization strength by 4-fold cross-validation inside the remaining 80%,
refits there, and scores both partitions with signed mean percent error.
Runs are independent and seeded individually (base_seed + run index), so any
parallel schedule reproduces the serial result bit for bit.
"""

from __future__ import annotations

import json
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DomainError, ValidationError

__all__ = [
    "Dataset",
    "CvConfig",
    "RidgeModel",
    "PredictionReport",
    "ridge_fit",
    "mpe",
    "nested_cv",
    "default_alpha_grid",
]

MIN_CELLS = 5


def default_alpha_grid(n_points: int = 25) -> tuple[float, ...]:
    """Log-spaced regularization grid spanning twelve decades."""
    return tuple(np.logspace(-6.0, 6.0, n_points))


@dataclass(frozen=True)
class Dataset:
    """Feature matrix with named columns plus a positive cycle-life target."""

    features: np.ndarray
    target: np.ndarray
    feature_names: tuple
    cell_ids: tuple = ()
    target_name: str = "cycle_life"

    def __post_init__(self):
        x = np.asarray(self.features, dtype=float)
        y = np.asarray(self.target, dtype=float)
        if x.ndim != 2:
            raise ValidationError(f"features must be 2-D, got shape {x.shape}")
        if y.ndim != 1 or y.size != x.shape[0]:
            raise ValidationError("target length must match feature rows")
        if x.shape[0] < MIN_CELLS:
            raise ValidationError(
                f"need at least {MIN_CELLS} cells, got {x.shape[0]}"
            )
        names = tuple(str(n) for n in self.feature_names)
        if len(names) != x.shape[1]:
            raise ValidationError(
                f"{len(names)} feature names for {x.shape[1]} columns"
            )
        if len(set(names)) != len(names):
            raise ValidationError("feature names must be unique")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise ValidationError("features and target must be finite (no gaps)")
        if np.any(y <= 0):
            raise ValidationError("target must be positive")
        ids = tuple(str(c) for c in self.cell_ids)
        if not ids:
            ids = tuple(f"cell-{i:02d}" for i in range(x.shape[0]))
        elif len(ids) != x.shape[0]:
            raise ValidationError("cell_ids length must match feature rows")
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "target", y)
        object.__setattr__(self, "feature_names", names)
        object.__setattr__(self, "cell_ids", ids)

    @property
    def n_cells(self) -> int:
        return self.features.shape[0]

    def column(self, name: str) -> np.ndarray:
        if name not in self.feature_names:
            raise ConfigError(f"unknown feature {name!r}")
        return self.features[:, self.feature_names.index(name)]

    def subset(self, names) -> "Dataset":
        names = tuple(names)
        idx = [self.feature_names.index(n) if n in self.feature_names else -1
               for n in names]
        missing = [n for n, i in zip(names, idx) if i < 0]
        if missing:
            raise ConfigError(f"unknown features: {missing}")
        return Dataset(
            features=self.features[:, idx],
            target=self.target,
            feature_names=names,
            cell_ids=self.cell_ids,
            target_name=self.target_name,
        )


@dataclass(frozen=True)
class CvConfig:
    validation_fraction: float = 0.20
    inner_folds: int = 4
    n_runs: int = 1000
    alpha_grid: tuple = field(default_factory=default_alpha_grid)
    base_seed: int = 0

    def __post_init__(self):
        if not (0.0 < self.validation_fraction < 1.0):
            raise ValidationError("validation_fraction must lie in (0, 1)")
        if self.inner_folds < 2:
            raise ValidationError("inner_folds must be at least 2")
        if self.n_runs < 1:
            raise ValidationError("n_runs must be at least 1")
        grid = tuple(float(a) for a in self.alpha_grid)
        if not grid:
            raise ValidationError("alpha_grid must be non-empty")
        if any(a <= 0 for a in grid):
            raise ValidationError("alpha_grid entries must be positive")
        if any(b <= a for a, b in zip(grid, grid[1:])):
            raise ValidationError("alpha_grid must be strictly ascending")
        object.__setattr__(self, "alpha_grid", grid)


@dataclass(frozen=True)
class RidgeModel:
    """Standardize-then-solve linear model. Intercept is unpenalized (it is
    the target mean in standardized feature space)."""

    weights: np.ndarray
    intercept: float
    feature_means: np.ndarray
    feature_sds: np.ndarray
    kept_columns: np.ndarray
    alpha: float

    def predict(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x[None, :]
        z = (x[:, self.kept_columns] - self.feature_means) / self.feature_sds
        return self.intercept + z @ self.weights


def ridge_fit(x, y, alpha: float) -> RidgeModel:
    """Closed-form penalized least squares on z-scored features.

    Constant columns carry no information once standardized; they are dropped
    with a warning rather than rejected, since small CV folds can easily make
    a feature degenerate.
    """
    if alpha < 0:
        raise ValidationError(f"alpha must be non-negative, got {alpha}")
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.ndim != 2 or y.ndim != 1 or y.size != x.shape[0]:
        raise ValidationError("x must be (n, p) and y length n")
    if y.size < 2:
        raise ValidationError("need at least 2 rows to fit")
    means = x.mean(axis=0)
    sds = x.std(axis=0)
    kept = np.flatnonzero(sds > 0.0)
    if kept.size < x.shape[1]:
        warnings.warn(
            f"dropping {x.shape[1] - kept.size} zero-variance feature column(s)",
            stacklevel=2,
        )
    intercept = float(y.mean())
    if kept.size == 0:
        return RidgeModel(
            weights=np.zeros(0),
            intercept=intercept,
            feature_means=means[kept],
            feature_sds=sds[kept],
            kept_columns=kept,
            alpha=float(alpha),
        )
    z = (x[:, kept] - means[kept]) / sds[kept]
    lhs = z.T @ z + alpha * np.eye(kept.size)
    rhs = z.T @ (y - intercept)
    try:
        w = np.linalg.solve(lhs, rhs)
    except np.linalg.LinAlgError as exc:
        raise DomainError(
            "singular design with alpha = 0; add regularization or drop "
            "collinear features"
        ) from exc
    return RidgeModel(
        weights=w,
        intercept=intercept,
        feature_means=means[kept],
        feature_sds=sds[kept],
        kept_columns=kept,
        alpha=float(alpha),
    )


def mpe(predicted, actual) -> float:
    """Signed mean percent error, in percent."""
    p = np.asarray(predicted, dtype=float)
    a = np.asarray(actual, dtype=float)
    if p.shape != a.shape:
        raise ValidationError(f"shape mismatch: {p.shape} vs {a.shape}")
    if np.any(a == 0):
        raise DomainError("actual values must be nonzero for percent error")
    return float(np.mean((p - a) / a) * 100.0)


@dataclass(frozen=True)
class PredictionReport:
    model: str
    feature_names: tuple
    target_name: str
    config: CvConfig
    train_mpe: np.ndarray
    test_mpe: np.ndarray
    alpha_star: np.ndarray

    def __post_init__(self):
        for name in ("train_mpe", "test_mpe", "alpha_star"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != (self.config.n_runs,):
                raise ValidationError(f"{name} must have one entry per run")
            object.__setattr__(self, name, arr)

    # Aggregates follow the absolute-error convention (headline numbers);
    # the per-run arrays stay signed so either summary can be recomputed.
    @property
    def train_mpe_mean(self) -> float:
        return float(np.mean(np.abs(self.train_mpe)))

    @property
    def train_mpe_sd(self) -> float:
        return float(np.std(np.abs(self.train_mpe), ddof=1)) if self.train_mpe.size > 1 else 0.0

    @property
    def test_mpe_mean(self) -> float:
        return float(np.mean(np.abs(self.test_mpe)))

    @property
    def test_mpe_sd(self) -> float:
        return float(np.std(np.abs(self.test_mpe), ddof=1)) if self.test_mpe.size > 1 else 0.0

    def to_json(self, path=None) -> str:
        payload = {
            "model": self.model,
            "feature_names": list(self.feature_names),
            "target_name": self.target_name,
            "config": {
                "validation_fraction": self.config.validation_fraction,
                "inner_folds": self.config.inner_folds,
                "n_runs": self.config.n_runs,
                "alpha_grid": list(self.config.alpha_grid),
                "base_seed": self.config.base_seed,
            },
            "runs": {
                "train_mpe": self.train_mpe.tolist(),
                "test_mpe": self.test_mpe.tolist(),
                "alpha_star": self.alpha_star.tolist(),
            },
            "aggregate": {
                "train_mpe_mean": self.train_mpe_mean,
                "train_mpe_sd": self.train_mpe_sd,
                "test_mpe_mean": self.test_mpe_mean,
                "test_mpe_sd": self.test_mpe_sd,
            },
        }
        text = json.dumps(payload, indent=2)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text + "\n")
        return text


def _one_run(run, x, y, config, model):
    rng = np.random.default_rng(config.base_seed + run)
    n = y.size
    n_val = int(round(config.validation_fraction * n))
    perm = rng.permutation(n)
    val_idx = perm[:n_val]
    train_idx = perm[n_val:]
    x_tr, y_tr = x[train_idx], y[train_idx]
    x_va, y_va = x[val_idx], y[val_idx]

    if model == "dummy":
        pred = float(y_tr.mean())
        return (
            mpe(np.full(y_tr.size, pred), y_tr),
            mpe(np.full(y_va.size, pred), y_va),
            math.nan,
        )

    folds = np.array_split(np.arange(train_idx.size), config.inner_folds)
    best_alpha, best_score = None, math.inf
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")  # tiny folds may drop constant columns
        for alpha in config.alpha_grid:
            sq_sum, count = 0.0, 0
            for fold in folds:
                mask = np.ones(train_idx.size, dtype=bool)
                mask[fold] = False
                fit = ridge_fit(x_tr[mask], y_tr[mask], alpha)
                resid = fit.predict(x_tr[fold]) - y_tr[fold]
                sq_sum += float(resid @ resid)
                count += fold.size
            score = sq_sum / count
            if score < best_score:
                best_score, best_alpha = score, alpha
        final = ridge_fit(x_tr, y_tr, best_alpha)
    return (
        mpe(final.predict(x_tr), y_tr),
        mpe(final.predict(x_va), y_va),
        best_alpha,
    )


def nested_cv(
    dataset: Dataset,
    feature_subset=None,
    config: CvConfig | None = None,
    model: str = "ridge",
    *,
    threads: int | None = None,
) -> PredictionReport:
    """Repeated 80/20 evaluation with an inner alpha search on the 80%."""
    if model not in ("ridge", "dummy"):
        raise ValidationError(f"model must be 'ridge' or 'dummy', got {model!r}")
    config = config or CvConfig()
    data = dataset if feature_subset is None else dataset.subset(feature_subset)
    n = data.n_cells
    n_val = int(round(config.validation_fraction * n))
    n_train = n - n_val
    if n_val < 1:
        raise ConfigError("validation split is empty; raise validation_fraction")
    if n_train < config.inner_folds:
        raise ConfigError(
            f"{n_train} training rows cannot feed {config.inner_folds} inner folds"
        )
    x, y = data.features, data.target

    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(
                pool.map(lambda r: _one_run(r, x, y, config, model),
                         range(config.n_runs))
            )
    else:
        rows = [_one_run(r, x, y, config, model) for r in range(config.n_runs)]
    train = np.array([r[0] for r in rows])
    test = np.array([r[1] for r in rows])
    alphas = np.array([r[2] for r in rows])
    return PredictionReport(
        model=model,
        feature_names=data.feature_names,
        target_name=data.target_name,
        config=config,
        train_mpe=train,
        test_mpe=test,
        alpha_star=alphas,
    )
