"""Location-free spatial features: clustering RSRP fingerprints into virtual grids."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .meas import RsrpRecord


@dataclass(frozen=True)
class GridizationModel:
    centroids: np.ndarray  # (n_virtual, M)
    floor_db: float = -30.0

    @property
    def n_virtual(self) -> int:
        return self.centroids.shape[0]


@dataclass(frozen=True)
class GridizationResult:
    model: GridizationModel
    assignments: np.ndarray
    objective_trace: list
    n_iters: int


def fingerprint(record: RsrpRecord | np.ndarray, floor_db: float = -30.0) -> np.ndarray:
    """Peak-normalized beam powers in dB, clamped below at ``floor_db``."""
    if floor_db >= 0:
        raise ValueError("floor_db must be negative")
    rsrp = np.asarray(getattr(record, "rsrp", record), dtype=float)
    peak = rsrp.max(initial=0.0)
    if not peak > 0:
        raise ValueError("empty measurement")
    with np.errstate(divide="ignore"):
        f = 10 * np.log10(rsrp / peak)
    return np.maximum(f, floor_db)


def _sq_dists(X, C):
    return np.sum((X[:, None, :] - C[None, :, :]) ** 2, axis=-1)


def _farthest_point_init(X, k, rng):
    n = len(X)
    idx = [int(rng.integers(n))]
    d2 = np.sum((X - X[idx[0]]) ** 2, axis=1)
    for _ in range(1, k):
        nxt = int(np.argmax(d2))
        idx.append(nxt)
        d2 = np.minimum(d2, np.sum((X - X[nxt]) ** 2, axis=1))
    return X[idx].copy()


def gridize(records: Sequence[RsrpRecord], n_virtual: int, max_iters: int,
            rng: np.random.Generator, floor_db: float = -30.0) -> GridizationResult:
    """Lloyd clustering of fingerprints with farthest-point seeding.

    The recorded objective is the within-cluster sum of squares after each
    assignment step; it never increases.
    """
    if max_iters < 1:
        raise ValueError("max_iters must be >= 1")
    X = np.array([fingerprint(r, floor_db) for r in records])
    if len(X) < n_virtual:
        raise ValueError("need at least n_virtual records")
    C = _farthest_point_init(X, n_virtual, rng)
    trace = []
    it = 0
    for it in range(1, max_iters + 1):
        d2 = _sq_dists(X, C)
        labels = np.argmin(d2, axis=1)
        trace.append(float(d2[np.arange(len(X)), labels].sum()))
        newC = C.copy()
        for j in range(n_virtual):
            members = labels == j
            if members.any():
                newC[j] = X[members].mean(axis=0)
        empty = [j for j in range(n_virtual) if not np.any(labels == j)]
        if empty:
            # re-seed each empty cluster at the currently worst-served point
            own = np.sum((X - newC[labels]) ** 2, axis=1)
            for j in empty:
                far = int(np.argmax(own))
                newC[j] = X[far]
                own[far] = 0.0
        if np.array_equal(newC, C):
            break
        C = newC
    d2 = _sq_dists(X, C)
    labels = np.argmin(d2, axis=1)
    final = float(d2[np.arange(len(X)), labels].sum())
    if final != trace[-1]:
        trace.append(final)
    model = GridizationModel(C, floor_db)
    return GridizationResult(model, labels, trace, it)


def assign_stf(record: RsrpRecord | np.ndarray, model: GridizationModel) -> int:
    f = fingerprint(record, model.floor_db)
    d2 = np.sum((model.centroids - f) ** 2, axis=1)
    return int(np.argmin(d2))


def purity(assignments, truth) -> float:
    """Fraction of records whose cluster's majority true label matches their own."""
    assignments = np.asarray(assignments)
    truth = np.asarray(truth)
    total = 0
    for j in np.unique(assignments):
        _, counts = np.unique(truth[assignments == j], return_counts=True)
        total += counts.max()
    return total / len(truth)


def write_assignments_csv(path, record_ids, virtual, truth, comments=()):
    with open(path, "w", newline="") as fh:
        for line in comments:
            fh.write(f"# {line}\n")
        writer = csv.writer(fh)
        writer.writerow(["record_id", "virtual_grid", "true_grid"])
        for row in zip(record_ids, virtual, truth):
            writer.writerow([int(v) for v in row])
