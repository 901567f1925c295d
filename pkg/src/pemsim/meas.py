"""Multi-beam RSRP measurement synthesis (MR-like reports)."""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from typing import Iterable

import numpy as np

from .env import GridMap, PathProfile, steering_matrix

UNKNOWN = -1


@dataclass(frozen=True)
class BeamCodebook:
    beams: np.ndarray  # (m_beams, n_tx), unit-norm rows

    @property
    def m_beams(self) -> int:
        return self.beams.shape[0]

    @property
    def n_tx(self) -> int:
        return self.beams.shape[1]


@dataclass(frozen=True)
class RsrpRecord:
    record_id: int
    grid_id: int
    cell_id: int
    time: float
    rsrp: np.ndarray
    n_snapshots: int


@dataclass(frozen=True)
class MrSampling:
    records_per_grid_mean: float = 2.0
    coverage_fraction: float = 1.0
    n_snapshots: int = 200
    meas_noise_std: float = 0.0
    horizon_h: float = 168.0


def dft_codebook(n_tx: int, m_beams: int) -> BeamCodebook:
    """Beams uniform in sin-angle: u_m = -1 + (2m+1)/m_beams."""
    if m_beams < 1:
        raise ValueError("m_beams must be >= 1")
    u = -1.0 + (2 * np.arange(m_beams) + 1) / m_beams
    beams = np.exp(1j * np.pi * np.outer(u, np.arange(n_tx))) / np.sqrt(n_tx)
    return BeamCodebook(beams)


def beam_gains(profile: PathProfile, codebook: BeamCodebook) -> np.ndarray:
    """b_m^H a(theta_p) for every beam and path, shape (m_beams, n_paths)."""
    return codebook.beams.conj() @ steering_matrix(profile.angles, codebook.n_tx)


def expected_rsrp(profile: PathProfile, codebook: BeamCodebook) -> np.ndarray:
    """E[rsrp_m] = sum_p beta_p |b_m^H a(theta_p)|^2."""
    return np.abs(beam_gains(profile, codebook)) ** 2 @ profile.powers


def synthesize_rsrp(profile: PathProfile, codebook: BeamCodebook, n_snapshots: int,
                    meas_noise_std: float, rng: np.random.Generator) -> np.ndarray:
    """Snapshot-averaged beam powers plus clipped Gaussian measurement noise.

    b_m^H h_s expands to sum_p sqrt(beta_p) e^{j phi_ps} b_m^H a(theta_p), so
    only the (beam x path) gain table is needed, not full channel vectors.
    """
    if n_snapshots < 1:
        raise ValueError("n_snapshots must be >= 1")
    gains = beam_gains(profile, codebook)  # (M, n_p)
    phases = rng.uniform(0.0, 2 * np.pi, size=(n_snapshots, profile.n_paths))
    coeffs = np.sqrt(profile.powers) * np.exp(1j * phases)  # (S, n_p)
    rx = coeffs @ gains.T  # (S, M)
    rsrp = np.mean(np.abs(rx) ** 2, axis=0)
    if meas_noise_std > 0:
        rsrp = rsrp + rng.normal(0.0, meas_noise_std, size=rsrp.shape)
    return np.maximum(rsrp, 0.0)


def generate_mr_dataset(profiles: list[list[PathProfile]], grid_map: GridMap,
                        codebook: BeamCodebook, sampling: MrSampling,
                        rng: np.random.Generator) -> list[RsrpRecord]:
    """Irregularly covered MR dataset.

    A random ``coverage_fraction`` of grids is covered. Each covered grid
    gets ``max(1, Poisson(mean))`` reports; every report carries one RSRP
    vector per cell (serving and neighbours), each as its own record.
    """
    if not (0 < sampling.coverage_fraction <= 1):
        raise ValueError("coverage_fraction must lie in (0, 1]")
    n_grids = grid_map.n_grids
    covered = np.flatnonzero(rng.random(n_grids) < sampling.coverage_fraction)
    counts = np.maximum(rng.poisson(sampling.records_per_grid_mean, size=len(covered)), 1)

    records = []
    rid = 0
    for g, count in zip(covered, counts):
        for _ in range(count):
            t = float(rng.uniform(0.0, sampling.horizon_h))
            for c in range(len(profiles)):
                rsrp = synthesize_rsrp(profiles[c][g], codebook, sampling.n_snapshots,
                                       sampling.meas_noise_std, rng)
                records.append(RsrpRecord(rid, int(g), c, t, rsrp, sampling.n_snapshots))
                rid += 1
    return records


def hide_locations(records: Iterable[RsrpRecord]) -> list[RsrpRecord]:
    """Copies of ``records`` with the grid tag withheld."""
    return [replace(r, grid_id=UNKNOWN) for r in records]


def write_mr_csv(path, records: list[RsrpRecord], comments: Iterable[str] = ()):
    m = len(records[0].rsrp) if records else 0
    with open(path, "w", newline="") as fh:
        for line in comments:
            fh.write(f"# {line}\n")
        writer = csv.writer(fh)
        writer.writerow(["record_id", "cell_id", "grid_id", "time_h", "n_snapshots"]
                        + [f"rsrp_{i}" for i in range(m)])
        for r in records:
            writer.writerow([r.record_id, r.cell_id, r.grid_id, repr(float(r.time)),
                             r.n_snapshots] + [repr(float(v)) for v in r.rsrp])


def read_mr_csv(path) -> list[RsrpRecord]:
    records = []
    with open(path, newline="") as fh:
        rows = csv.reader(line for line in fh if not line.startswith("#"))
        header = next(rows)
        n_fixed = header.index("rsrp_0") if "rsrp_0" in header else len(header)
        for row in rows:
            records.append(RsrpRecord(
                record_id=int(row[0]), cell_id=int(row[1]), grid_id=int(row[2]),
                time=float(row[3]), n_snapshots=int(row[4]),
                rsrp=np.array([float(v) for v in row[n_fixed:]])))
    return records
