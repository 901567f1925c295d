"""Channel knowledge map: APS recovery from beam RSRP, interpolation, covariances."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .env import GridMap, steering_matrix
from .meas import BeamCodebook

MEASURED = "measured"
INTERPOLATED = "interpolated"


@dataclass(frozen=True)
class AngularGrid:
    n_angles: int

    @property
    def sines(self) -> np.ndarray:
        return -1.0 + (2 * np.arange(self.n_angles) + 1) / self.n_angles

    @property
    def angles(self) -> np.ndarray:
        return np.arcsin(self.sines)


@dataclass(frozen=True)
class ApsEstimate:
    weights: np.ndarray
    grid_id: int
    time_interval: int = 0
    provenance: str = MEASURED


@dataclass(frozen=True)
class SolverTrace:
    objective: list
    n_iters: int
    lipschitz: float


@dataclass
class CkmStore:
    """APS estimates keyed by ``(grid_id, interval)``."""

    angular_grid: AngularGrid
    entries: dict = field(default_factory=dict)

    def put(self, aps: ApsEstimate):
        key = (aps.grid_id, aps.time_interval)
        if key in self.entries:
            raise KeyError(f"duplicate CKM entry for {key}")
        self.entries[key] = aps

    def get(self, grid_id: int, interval: int) -> ApsEstimate:
        return self.entries[(grid_id, interval)]

    def __contains__(self, key):
        return key in self.entries

    def __len__(self):
        return len(self.entries)

    def measured_grids(self, interval: int) -> list[int]:
        return sorted(g for (g, i), e in self.entries.items()
                      if i == interval and e.provenance == MEASURED)

    def count(self, provenance: str) -> int:
        return sum(e.provenance == provenance for e in self.entries.values())


def build_beam_dictionary(codebook: BeamCodebook, angular_grid: AngularGrid) -> np.ndarray:
    """A[m, n] = |b_m^H a(theta_n)|^2."""
    S = steering_matrix(angular_grid.angles, codebook.n_tx)
    return np.abs(codebook.beams.conj() @ S) ** 2


def largest_sq_singular_value(A, max_iters: int = 1000, tol: float = 1e-12) -> float:
    """Power iteration on A^T A from the all-ones vector."""
    x = np.ones(A.shape[1])
    x /= np.linalg.norm(x)
    est = 0.0
    for _ in range(max_iters):
        y = A.T @ (A @ x)
        new = float(np.linalg.norm(y))
        if new == 0.0:
            return 0.0
        x = y / new
        if abs(new - est) <= tol * new:
            est = new
            break
        est = new
    return est


def default_lambda(A, rsrp, factor: float = 1e-3):
    """1e-3 * ||A^T rsrp||_inf (per column for a batch)."""
    return factor * np.max(np.abs(A.T @ rsrp), axis=0)


def recover_aps_batch(rsrp, A, lam=None, tol: float = 1e-9, max_iters: int = 5000,
                      lam_factor: float = 1e-3):
    """Non-negative LASSO by projected gradient, one problem per column of ``rsrp``.

    Minimizes 0.5*||A p - r||^2 + lam * sum(p) subject to p >= 0 with step 1/L.
    Returns ``(P, traces)`` where ``traces[j]`` is the objective history of
    column j. A column stops once its relative objective change drops below
    ``tol``.
    """
    R = np.asarray(rsrp, dtype=float)
    single = R.ndim == 1
    R = R.reshape(R.shape[0], -1)
    if np.any(R < 0):
        raise ValueError("rsrp must be non-negative")
    if not np.any(A):
        raise ValueError("zero dictionary")
    lam = default_lambda(A, R, lam_factor) if lam is None else np.broadcast_to(
        np.asarray(lam, dtype=float), (R.shape[1],)).copy()
    if np.any(lam < 0):
        raise ValueError("lambda must be non-negative")

    L = largest_sq_singular_value(A)
    n, k = A.shape[1], R.shape[1]
    P = np.zeros((n, k))
    resid = -R  # A @ P - R, carried so each step costs two products with A
    obj = 0.5 * np.sum(resid**2, axis=0)
    traces = [[float(v)] for v in obj]
    active = np.ones(k, dtype=bool)
    for _ in range(max_iters):
        if not active.any():
            break
        idx = np.flatnonzero(active)
        Pa = P[:, idx]
        grad = A.T @ resid[:, idx] + lam[idx]
        cand = np.maximum(Pa - grad / L, 0.0)
        cres = A @ cand - R[:, idx]
        new = 0.5 * np.sum(cres**2, axis=0) + lam[idx] * np.sum(cand, axis=0)
        # power iteration approaches L from below; back off if a step overshoots.
        # An increase at rounding level means the column has converged: keep it.
        bad = new > obj[idx]
        while bad.any():
            rounding = bad & (new - obj[idx] <= 1e-12 * np.abs(obj[idx]))
            cand[:, rounding] = Pa[:, rounding]
            cres[:, rounding] = resid[:, idx[rounding]]
            new[rounding] = obj[idx[rounding]]
            bad &= ~rounding
            if not bad.any():
                break
            L *= 2.0
            cand[:, bad] = np.maximum(Pa[:, bad] - grad[:, bad] / L, 0.0)
            cres[:, bad] = A @ cand[:, bad] - R[:, idx[bad]]
            new[bad] = (0.5 * np.sum(cres[:, bad]**2, axis=0)
                        + lam[idx[bad]] * np.sum(cand[:, bad], axis=0))
            bad = new > obj[idx]
        P[:, idx] = cand
        resid[:, idx] = cres
        for j, col in enumerate(idx):
            traces[col].append(float(new[j]))
        change = np.abs(obj[idx] - new) / np.maximum(np.abs(obj[idx]), np.finfo(float).tiny)
        obj[idx] = new
        active[idx[(change < tol) | (new == 0.0)]] = False

    if single:
        return P[:, 0], SolverTrace(traces[0], len(traces[0]) - 1, L)
    return P, [SolverTrace(t, len(t) - 1, L) for t in traces]


def recover_aps(rsrp, A, lam=None, tol: float = 1e-9, max_iters: int = 5000):
    """Single-vector form of :func:`recover_aps_batch`; returns ``(p, trace)``."""
    return recover_aps_batch(np.asarray(rsrp, dtype=float).ravel(), A, lam, tol, max_iters)


def interpolate_aps(store: CkmStore, target_grid: int, grid_map: GridMap,
                    bandwidth: float, interval: int = 0) -> ApsEstimate:
    """Gaussian-kernel regression over measured grids of the target's cell."""
    cell = grid_map.cell_of_grid[target_grid]
    donors = [g for g in store.measured_grids(interval) if grid_map.cell_of_grid[g] == cell]
    if not donors:
        raise ValueError(f"uninterpolatable: no measured grid in cell {cell}, interval {interval}")
    if target_grid in donors:
        # a measured target is its own estimate
        return ApsEstimate(store.get(target_grid, interval).weights.copy(), int(target_grid),
                           interval, INTERPOLATED)
    d2 = np.sum((grid_map.centers[donors] - grid_map.centers[target_grid]) ** 2, axis=1)
    logw = -(d2 - d2.min()) / (2 * bandwidth**2)
    w = np.exp(logw)
    w /= w.sum()
    stack = np.array([store.get(g, interval).weights for g in donors])
    return ApsEstimate(w @ stack, int(target_grid), interval, INTERPOLATED)


def aps_to_covariance(weights, angular_grid: AngularGrid, n_tx: int) -> np.ndarray:
    """R = sum_n p_n a(theta_n) a(theta_n)^H."""
    p = np.asarray(getattr(weights, "weights", weights), dtype=float)
    if np.any(p < 0):
        raise ValueError("APS weights must be non-negative")
    S = steering_matrix(angular_grid.angles, n_tx)
    R = (S * p) @ S.conj().T
    return 0.5 * (R + R.conj().T)


def write_ckm_csv(path, store: CkmStore, comments=()):
    n_a = store.angular_grid.n_angles
    with open(path, "w", newline="") as fh:
        for line in comments:
            fh.write(f"# {line}\n")
        writer = csv.writer(fh)
        writer.writerow(["grid_id", "interval", "provenance"] + [f"p_{i}" for i in range(n_a)])
        for key in sorted(store.entries):
            e = store.entries[key]
            writer.writerow([e.grid_id, e.time_interval, e.provenance]
                            + [repr(float(v)) for v in e.weights])


def read_ckm_csv(path, angular_grid: AngularGrid) -> CkmStore:
    store = CkmStore(angular_grid)
    with open(path, newline="") as fh:
        rows = csv.reader(line for line in fh if not line.startswith("#"))
        next(rows)
        for row in rows:
            store.put(ApsEstimate(np.array([float(v) for v in row[3:]]),
                                  int(row[0]), int(row[1]), row[2]))
    return store
