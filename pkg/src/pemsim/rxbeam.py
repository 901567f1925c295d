"""Receive beamspace from the occurrence-weighted covariance of a site map.

The summary capture of a beamspace ``V`` is the energy fraction of the
weighted covariance it keeps, ``trace(V^H R_w V) / trace(R_w)``; by Ky Fan's
theorem the dominant eigenvectors of ``R_w`` maximize it over all subspaces
of the same dimension.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .ckm import AngularGrid, aps_to_covariance
from .meas import dft_codebook
from .pem import Pem


@dataclass(frozen=True)
class Beamspace:
    columns: np.ndarray  # (n_tx, d), orthonormal

    @property
    def d(self) -> int:
        return self.columns.shape[1]

    @property
    def n_tx(self) -> int:
        return self.columns.shape[0]


@dataclass
class RxbeamResult:
    d: int
    n_tx: int
    occurrence: np.ndarray
    capture_pem: np.ndarray
    capture_dft: np.ndarray
    mean_capture_pem: float
    mean_capture_dft: float
    pem_beams: Beamspace
    dft_beams: Beamspace


def weighted_covariance(pem: Pem, t: float, occurrence=None) -> np.ndarray:
    """R_w = sum_g q_g(t) R_g over every grid of the map.

    ``occurrence`` overrides the map's own weights. Covariance is linear in
    the APS, so the sum is formed on the weights first.
    """
    q = pem.occurrence(t) if occurrence is None else np.asarray(occurrence, dtype=float)
    if len(q) != pem.grid_map.n_grids:
        raise ValueError("occurrence length must equal the grid count")
    interval = pem.interval_of(t)
    W = np.array([pem.ckm.get(g, interval).weights for g in range(pem.grid_map.n_grids)])
    return aps_to_covariance(q @ W, pem.angular_grid, pem.n_tx)


def _fix_phase(V, tol=1e-12):
    """Rotate each column so its first non-negligible entry is real positive."""
    V = V.copy()
    for j in range(V.shape[1]):
        col = V[:, j]
        idx = np.flatnonzero(np.abs(col) > tol * max(np.abs(col).max(), 1e-300))
        if len(idx):
            V[:, j] = col * np.exp(-1j * np.angle(col[idx[0]]))
    return V


def dominant_beamspace(R, d: int) -> Beamspace:
    R = np.asarray(R)
    n = R.shape[0]
    if not 1 <= d <= n:
        raise ValueError(f"need 1 <= d <= {n}, got {d}")
    lam, U = np.linalg.eigh(0.5 * (R + R.conj().T))
    order = np.argsort(-lam, kind="stable")[:d]
    return Beamspace(_fix_phase(U[:, order]))


def _columns(beams):
    return beams.columns if isinstance(beams, Beamspace) else np.asarray(beams)


def subspace_capture(beams, R) -> float:
    """trace(V^H R V) / trace(R) for orthonormal ``V``."""
    V = _columns(beams)
    total = np.real(np.trace(R))
    if not total > 0:
        raise ValueError("covariance has zero energy")
    kept = np.real(np.einsum("ij,ik,kj->", V.conj(), R, V))
    return float(np.clip(kept / total, 0.0, 1.0))


def capture_ratio(beams, aps, angular_grid: AngularGrid) -> float:
    """Fraction of the energy of ``aps`` that falls inside the beamspace."""
    p = np.asarray(getattr(aps, "weights", aps), dtype=float)
    if np.any(p < 0):
        raise ValueError("APS weights must be non-negative")
    if not np.any(p > 0):
        raise ValueError("zero APS has no energy to capture")
    V = _columns(beams)
    return subspace_capture(V, aps_to_covariance(p, angular_grid, V.shape[0]))


def best_dft_subset(R, d: int, n_beams: int | None = None) -> Beamspace:
    """The ``d`` beams of an orthogonal DFT codebook with the most energy of ``R``."""
    n = R.shape[0]
    B = dft_codebook(n, n_beams or n).beams.T  # (n_tx, M)
    energy = np.real(np.einsum("im,ik,km->m", B.conj(), R, B))
    top = np.sort(np.argsort(-energy, kind="stable")[:d])
    return Beamspace(B[:, top])


def compare_beamspaces(pem: Pem, d: int, t: float) -> RxbeamResult:
    q = pem.occurrence(t)
    R = weighted_covariance(pem, t, q)
    V_pem = dominant_beamspace(R, d)
    V_dft = best_dft_subset(R, d)
    interval = pem.interval_of(t)
    cap_pem = np.full(pem.grid_map.n_grids, np.nan)
    cap_dft = np.full(pem.grid_map.n_grids, np.nan)
    for g in range(pem.grid_map.n_grids):
        w = pem.ckm.get(g, interval).weights
        if np.any(w > 0):
            cap_pem[g] = capture_ratio(V_pem, w, pem.angular_grid)
            cap_dft[g] = capture_ratio(V_dft, w, pem.angular_grid)
    return RxbeamResult(d, pem.n_tx, q, cap_pem, cap_dft,
                        subspace_capture(V_pem, R), subspace_capture(V_dft, R), V_pem, V_dft)


def run_rxbeam_experiment(config, d_list=None, pem: Pem | None = None):
    """Compare PEM and DFT beamspaces for every ``d`` in ``d_list``.

    Builds the single-site scenario of ``config.rxbeam`` unless a ready
    ``pem`` is given. Returns ``(pem, results)``.
    """
    from .pipeline import build_site_maps, make_world

    rx = config.rxbeam
    d_list = tuple(rx.d_list if d_list is None else d_list)
    if pem is None:
        world = make_world(config, rx.scenario, rx.traffic, rx.measurement)
        pem = build_site_maps(world)[0]
    for d in d_list:
        if not 1 <= d <= pem.n_tx:
            raise ValueError(f"beamspace dimension {d} outside [1, {pem.n_tx}]")
    return pem, [compare_beamspaces(pem, d, rx.time_h) for d in d_list]


def write_rxbeam_map_csv(path, result: RxbeamResult, grid_map, comments=()):
    with open(path, "w", newline="") as fh:
        for c in comments:
            fh.write(f"# {c}\n")
        w = csv.writer(fh)
        w.writerow(["grid_x_m", "grid_y_m", "occurrence", "capture_pem", "capture_dft"])
        for g, (x, y) in enumerate(grid_map.centers):
            w.writerow([repr(float(x)), repr(float(y)), repr(float(result.occurrence[g])),
                        repr(float(result.capture_pem[g])), repr(float(result.capture_dft[g]))])


def write_rxbeam_summary_csv(path, results, comments=()):
    with open(path, "w", newline="") as fh:
        for c in comments:
            fh.write(f"# {c}\n")
        w = csv.writer(fh)
        w.writerow(["d", "n_tx", "mean_capture_pem", "mean_capture_dft"])
        for r in results:
            w.writerow([r.d, r.n_tx, repr(r.mean_capture_pem), repr(r.mean_capture_dft)])
