"""Data traffic map: per-grid periodic regression and occurrence probabilities."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .env import GridMap, TrafficGroundTruth, traffic_volume

PERIOD_DAY = 24.0
PERIOD_WEEK = 168.0


@dataclass(frozen=True)
class TrafficRecord:
    grid_id: int
    time: float
    volume: float
    active_count: int = 0


@dataclass(frozen=True)
class TrafficModel:
    """Ridge regression on daily and weekly Fourier features.

    Coefficients are ordered ``[1, (sin, cos) daily k=1..H, (sin, cos) weekly
    k=1..H]``.
    """

    grid_id: int
    harmonics: int
    coefficients: np.ndarray
    residual_var: float
    ridge_weight: float = 1e-6
    period_day: float = PERIOD_DAY
    period_week: float = PERIOD_WEEK


def fourier_features(t, harmonics: int, period_day: float = PERIOD_DAY,
                     period_week: float = PERIOD_WEEK) -> np.ndarray:
    t = np.atleast_1d(np.asarray(t, dtype=float))
    cols = [np.ones_like(t)]
    for period in (period_day, period_week):
        for k in range(1, harmonics + 1):
            w = 2 * np.pi * k * t / period
            cols.extend([np.sin(w), np.cos(w)])
    return np.column_stack(cols)


def fit_traffic_model(records: Sequence[TrafficRecord], harmonics: int = 2,
                      ridge_weight: float = 1e-6) -> TrafficModel:
    """Fit one grid's model; too few records fall back to the mean (H=0).

    The intercept is not penalized.
    """
    if len(records) == 0:
        raise ValueError("cannot fit a traffic model without records")
    if len(records) < 1 + 4 * harmonics:
        harmonics = 0
    t = np.array([r.time for r in records])
    y = np.array([r.volume for r in records], dtype=float)
    X = fourier_features(t, harmonics)
    penalty = np.full(X.shape[1], ridge_weight)
    penalty[0] = 0.0
    coef = np.linalg.solve(X.T @ X + np.diag(penalty), X.T @ y)
    resid = y - X @ coef
    return TrafficModel(grid_id=int(records[0].grid_id), harmonics=harmonics,
                        coefficients=coef, residual_var=float(np.mean(resid**2)),
                        ridge_weight=ridge_weight)


def zero_model(grid_id: int) -> TrafficModel:
    return TrafficModel(grid_id, 0, np.zeros(1), 0.0)


def predict_traffic(model: TrafficModel, t: float) -> tuple[float, float]:
    """Return ``(mean, variance)`` at hour ``t``; the mean is clipped at zero."""
    X = fourier_features(t, model.harmonics, model.period_day, model.period_week)
    mean = float(max((X @ model.coefficients)[0], 0.0))
    return mean, model.residual_var


def predict_means(models: Mapping[int, TrafficModel], t: float, n_grids: int) -> np.ndarray:
    """Clipped predicted means for every grid; grids without a model get 0."""
    out = np.zeros(n_grids)
    by_h: dict = {}
    for g, m in models.items():
        by_h.setdefault((m.harmonics, m.period_day, m.period_week), []).append((g, m))
    for (h, pd, pw), group in by_h.items():
        x = fourier_features(t, h, pd, pw)[0]
        ids = np.array([g for g, _ in group])
        coefs = np.array([m.coefficients for _, m in group])
        out[ids] = np.maximum(coefs @ x, 0.0)
    return out


def occurrence_map(models: Mapping[int, TrafficModel], t: float, n_grids: int) -> np.ndarray:
    """User occurrence probability per grid at hour ``t``."""
    means = predict_means(models, t, n_grids)
    total = means.sum()
    if not total > 0:
        raise ValueError("no demand")
    return means / total


def generate_traffic_records(tg: TrafficGroundTruth, grid_map: GridMap, horizon_h: float,
                             step_h: float, rng: np.random.Generator,
                             users_per_unit: float = 1.0) -> list[TrafficRecord]:
    """Traffic samples every ``step_h`` hours for every grid from the ground truth."""
    times = np.arange(0.0, horizon_h, step_h)
    records = []
    for t in times:
        vol = traffic_volume(tg, grid_map.centers, float(t), rng)
        counts = rng.poisson(users_per_unit * vol)
        for g in range(grid_map.n_grids):
            records.append(TrafficRecord(g, float(t), float(vol[g]), int(counts[g])))
    return records


def write_traffic_csv(path, records: Sequence[TrafficRecord], comments=()):
    with open(path, "w", newline="") as fh:
        for line in comments:
            fh.write(f"# {line}\n")
        writer = csv.writer(fh)
        writer.writerow(["grid_id", "time_h", "volume", "active_count"])
        for r in records:
            writer.writerow([r.grid_id, repr(float(r.time)), repr(float(r.volume)), r.active_count])


def read_traffic_csv(path) -> list[TrafficRecord]:
    with open(path, newline="") as fh:
        rows = csv.reader(line for line in fh if not line.startswith("#"))
        next(rows)
        return [TrafficRecord(int(r[0]), float(r[1]), float(r[2]), int(r[3])) for r in rows]


def write_models_csv(path, models: Mapping[int, TrafficModel], comments=()):
    width = max((len(m.coefficients) for m in models.values()), default=1)
    with open(path, "w", newline="") as fh:
        for line in comments:
            fh.write(f"# {line}\n")
        writer = csv.writer(fh)
        writer.writerow(["grid_id", "H"] + [f"coef_{i}" for i in range(width)] + ["residual_var"])
        for g in sorted(models):
            m = models[g]
            coefs = [repr(float(c)) for c in m.coefficients]
            coefs += [""] * (width - len(coefs))
            writer.writerow([g, m.harmonics] + coefs + [repr(float(m.residual_var))])


def read_models_csv(path, ridge_weight: float = 1e-6) -> dict:
    models = {}
    with open(path, newline="") as fh:
        rows = csv.reader(line for line in fh if not line.startswith("#"))
        next(rows)
        for row in rows:
            g, h = int(row[0]), int(row[1])
            coefs = np.array([float(v) for v in row[2:2 + 1 + 4 * h]])
            models[g] = TrafficModel(g, h, coefs, float(row[-1]), ridge_weight)
    return models
