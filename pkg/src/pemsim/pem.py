"""The site database: a CKM and a DTM behind one ``query(z, t)`` call."""

from __future__ import annotations

import csv
import math
import os
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from .ckm import (INTERPOLATED, MEASURED, AngularGrid, ApsEstimate, CkmStore,
                  aps_to_covariance, build_beam_dictionary, interpolate_aps,
                  read_ckm_csv, recover_aps_batch, write_ckm_csv)
from .dtm import (TrafficModel, fit_traffic_model, occurrence_map, predict_traffic,
                  read_models_csv, write_models_csv, zero_model)
from .env import GridMap
from .meas import UNKNOWN, BeamCodebook


@dataclass(frozen=True)
class PemConfig:
    n_angles: int | None = None  # defaults to angle_oversampling * n_tx
    angle_oversampling: int = 4
    lam_factor: float = 1e-3
    tol: float = 1e-9
    max_iters: int = 5000
    bandwidth: float = 20.0
    harmonics: int = 2
    ridge_weight: float = 1e-6
    interval_hours: float = 24.0

    @property
    def n_intervals(self) -> int:
        return int(math.ceil(24.0 / self.interval_hours - 1e-12))

    def interval_of(self, t: float) -> int:
        return min(int((t % 24.0) // self.interval_hours), self.n_intervals - 1)


@dataclass(frozen=True)
class PemResponse:
    aps: ApsEstimate
    covariance: np.ndarray
    traffic_mean: float
    traffic_var: float
    occurrence_weight: float
    provenance: dict


@dataclass(frozen=True)
class Pem:
    """Per-site map from (grid, hour) to APS and traffic knowledge.

    Treated as immutable after :func:`build_pem`; rebuilding returns a new
    instance.
    """

    cell_id: int
    n_tx: int
    ckm: CkmStore
    dtm: dict
    grid_map: GridMap
    angular_grid: AngularGrid
    config: PemConfig
    build_metadata: dict
    report: dict = field(default_factory=dict, compare=False)

    def interval_of(self, t: float) -> int:
        return self.config.interval_of(t)

    def aps(self, z: int, t: float) -> ApsEstimate:
        self._check_grid(z)
        return self.ckm.get(int(z), self.interval_of(t))

    def occurrence(self, t: float) -> np.ndarray:
        return occurrence_map(self.dtm, t, self.grid_map.n_grids)

    def covariance(self, z: int, t: float) -> np.ndarray:
        return aps_to_covariance(self.aps(z, t), self.angular_grid, self.n_tx)

    def _check_grid(self, z):
        if not (0 <= int(z) < self.grid_map.n_grids) or int(z) != z:
            raise KeyError(f"unknown grid id {z}")

    def __eq__(self, other):
        if not isinstance(other, Pem):
            return NotImplemented
        if (self.cell_id, self.n_tx, self.config, self.build_metadata) != (
                other.cell_id, other.n_tx, other.config, other.build_metadata):
            return False
        if self.ckm.entries.keys() != other.ckm.entries.keys():
            return False
        for key, e in self.ckm.entries.items():
            o = other.ckm.entries[key]
            if e.provenance != o.provenance or not np.array_equal(e.weights, o.weights):
                return False
        if self.dtm.keys() != other.dtm.keys():
            return False
        return all(np.array_equal(m.coefficients, other.dtm[g].coefficients)
                   and m.residual_var == other.dtm[g].residual_var for g, m in self.dtm.items())

    __hash__ = None


def build_pem(mr_records, traffic_records, grid_map: GridMap, codebook: BeamCodebook,
              config: PemConfig = PemConfig(), cell_id: int = 0,
              metadata: dict | None = None) -> Pem:
    """Build the map of one site from its MR records and grid traffic logs.

    RSRP records of ``cell_id`` with a known grid are averaged per
    (grid, interval) and inverted to an APS; every other grid is filled by
    kernel interpolation within its serving cell. Grids without traffic
    records get an all-zero traffic model.
    """
    mr = [r for r in mr_records if r.cell_id == cell_id and r.grid_id != UNKNOWN]
    if not mr:
        raise ValueError(f"no located MR records for cell {cell_id}")
    n_tx = codebook.n_tx
    ag = AngularGrid(config.n_angles or config.angle_oversampling * n_tx)
    A = build_beam_dictionary(codebook, ag)

    groups = defaultdict(list)
    for r in mr:
        groups[(r.grid_id, config.interval_of(r.time))].append(r.rsrp)
    keys = sorted(groups)
    R = np.column_stack([np.mean(groups[k], axis=0) for k in keys])
    P, traces = recover_aps_batch(R, A, tol=config.tol, max_iters=config.max_iters,
                                  lam_factor=config.lam_factor)
    resid = np.linalg.norm(A @ P - R, axis=0) / np.maximum(np.linalg.norm(R, axis=0), 1e-300)

    store = CkmStore(ag)
    for j, (g, i) in enumerate(keys):
        store.put(ApsEstimate(P[:, j], int(g), int(i), MEASURED))
    fills = []
    for i in range(config.n_intervals):
        for g in range(grid_map.n_grids):
            if (g, i) not in store:
                fills.append(interpolate_aps(store, g, grid_map, config.bandwidth, i))
    for aps in fills:
        store.put(aps)

    by_grid = defaultdict(list)
    for rec in traffic_records:
        by_grid[rec.grid_id].append(rec)
    dtm = {}
    rmse = []
    for g in range(grid_map.n_grids):
        if by_grid.get(g):
            dtm[g] = fit_traffic_model(by_grid[g], config.harmonics, config.ridge_weight)
            rmse.append(dtm[g].residual_var)
        else:
            dtm[g] = zero_model(g)

    meta = {"cell_id": cell_id, "n_tx": n_tx, "n_angles": ag.n_angles,
            "n_grids": grid_map.n_grids, "n_intervals": config.n_intervals,
            "interval_hours": config.interval_hours,
            # build clock is simulated time, so serialized maps stay reproducible
            "build_time_h": max(r.time for r in mr)}
    meta.update(metadata or {})
    report = {"n_measured": store.count(MEASURED),
              "n_interpolated": store.count(INTERPOLATED),
              "aps_residual_mean": float(np.mean(resid)),
              "aps_residual_max": float(np.max(resid)),
              "solver_iters_max": max(t.n_iters for t in traces),
              "dtm_train_rmse": float(np.sqrt(np.mean(rmse))) if rmse else 0.0}
    return Pem(cell_id, n_tx, store, dtm, grid_map, ag, config, meta, report)


def rebuild(pem: Pem, mr_records, traffic_records, codebook: BeamCodebook) -> Pem:
    """Batch rebuild with new data; ``pem`` itself is left untouched."""
    extra = {k: v for k, v in pem.build_metadata.items()
             if k not in ("cell_id", "n_tx", "n_angles", "n_grids", "n_intervals",
                          "interval_hours", "build_time_h")}
    return build_pem(mr_records, traffic_records, pem.grid_map, codebook, pem.config,
                     pem.cell_id, extra)


def query(pem: Pem, z: int, t: float) -> PemResponse:
    aps = pem.aps(z, t)
    model: TrafficModel = pem.dtm[int(z)]
    mean, var = predict_traffic(model, t)
    q = pem.occurrence(t)[int(z)]
    cov = aps_to_covariance(aps, pem.angular_grid, pem.n_tx)
    provenance = {"aps": aps.provenance,
                  "traffic": "fitted" if np.any(model.coefficients) else "zero"}
    return PemResponse(aps, cov, mean, var, float(q), provenance)


def save_pem(pem: Pem, directory, comments=()):
    os.makedirs(directory, exist_ok=True)
    write_ckm_csv(os.path.join(directory, "ckm.csv"), pem.ckm, comments)
    write_models_csv(os.path.join(directory, "dtm.csv"), pem.dtm, comments)
    _write_grid_csv(os.path.join(directory, "grid.csv"), pem.grid_map, comments)
    meta = dict(pem.build_metadata)
    cfg = pem.config
    gm = pem.grid_map
    meta.update({"grid_n_x": gm.n_x, "grid_n_y": gm.n_y, "grid_size": gm.grid_size,
                 "bandwidth": cfg.bandwidth, "harmonics": cfg.harmonics,
                 "ridge_weight": cfg.ridge_weight, "lam_factor": cfg.lam_factor,
                 "tol": cfg.tol, "max_iters": cfg.max_iters,
                 "angle_oversampling": cfg.angle_oversampling, "pem_n_angles": cfg.n_angles})
    with open(os.path.join(directory, "meta.txt"), "w") as fh:
        for key in sorted(meta):
            value = meta[key]
            fh.write(f"{key}={repr(value) if isinstance(value, float) else value}\n")


_STRING_KEYS = {"config_hash"}


def _parse(value: str):
    for cast in (int, float):
        try:
            return cast(value)
        except ValueError:
            pass
    return value


def _write_grid_csv(path, grid_map: GridMap, comments=()):
    with open(path, "w", newline="") as fh:
        for line in comments:
            fh.write(f"# {line}\n")
        writer = csv.writer(fh)
        writer.writerow(["grid_id", "center_x_m", "center_y_m", "cell_id"])
        for g, (x, y) in enumerate(grid_map.centers):
            writer.writerow([g, repr(float(x)), repr(float(y)), int(grid_map.cell_of_grid[g])])


def _read_grid_csv(path, n_x, n_y, grid_size) -> GridMap:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(line for line in fh if not line.startswith("#")))
    centers = np.array([[float(r["center_x_m"]), float(r["center_y_m"])] for r in rows])
    cells = np.array([int(r["cell_id"]) for r in rows], dtype=int)
    return GridMap(int(n_x), int(n_y), float(grid_size), centers, cells)


def load_pem(directory, grid_map: GridMap | None = None) -> Pem:
    """Read a map written by :func:`save_pem`.

    The grid geometry is stored alongside the map; passing ``grid_map``
    checks it against the stored one and reuses the given object.
    """
    meta = {}
    with open(os.path.join(directory, "meta.txt")) as fh:
        for line in fh:
            key, _, value = line.rstrip("\n").partition("=")
            meta[key] = value if key in _STRING_KEYS else _parse(value)
    fixed = meta.pop("pem_n_angles")
    cfg = PemConfig(n_angles=None if fixed == "None" else int(fixed),
                    angle_oversampling=int(meta.pop("angle_oversampling")),
                    lam_factor=float(meta["lam_factor"]),
                    tol=float(meta["tol"]), max_iters=int(meta["max_iters"]),
                    bandwidth=float(meta["bandwidth"]), harmonics=int(meta["harmonics"]),
                    ridge_weight=float(meta["ridge_weight"]),
                    interval_hours=float(meta["interval_hours"]))
    stored = _read_grid_csv(os.path.join(directory, "grid.csv"), meta.pop("grid_n_x"),
                            meta.pop("grid_n_y"), meta.pop("grid_size"))
    if grid_map is None:
        grid_map = stored
    elif (grid_map.n_grids != stored.n_grids
          or not np.allclose(grid_map.centers, stored.centers)
          or not np.array_equal(grid_map.cell_of_grid, stored.cell_of_grid)):
        raise ValueError("grid map does not match the stored map")
    ag = AngularGrid(int(meta["n_angles"]))
    store = read_ckm_csv(os.path.join(directory, "ckm.csv"), ag)
    dtm = read_models_csv(os.path.join(directory, "dtm.csv"), cfg.ridge_weight)
    for key in ("bandwidth", "harmonics", "ridge_weight", "lam_factor", "tol", "max_iters"):
        meta.pop(key)
    meta["interval_hours"] = float(meta["interval_hours"])
    meta["build_time_h"] = float(meta["build_time_h"])
    return Pem(int(meta["cell_id"]), int(meta["n_tx"]), store, dtm, grid_map, ag, cfg, meta)
