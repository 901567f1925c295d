"""Multi-cell coordinated beamforming with and without map-assisted CSI.

Channels are stored as ``H[c, k]``: the length-``n_tx`` downlink channel from
cell ``c`` to UE ``k``; UE ``k`` receives ``h^H x``.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, replace

import numpy as np

from .ckm import aps_to_covariance
from .env import place_active_users, realize_channel, steering_matrix, true_occurrence
from .pem import Pem

log = logging.getLogger(__name__)

SCHEMES = ("MCBF_IDEAL", "MCBF_CONV", "PCBF_CONV", "PEMNET_MCBF", "PEMNET_PCBF", "PEMNET_SALINR")
_COORDINATED = {"MCBF_IDEAL", "MCBF_CONV", "PEMNET_MCBF"}


class SolverError(RuntimeError):
    pass


@dataclass(frozen=True)
class NetworkInstance:
    channels: np.ndarray  # (C, K, n_tx)
    serving: np.ndarray  # (K,)
    ue_grids: np.ndarray  # (K,)
    tx_power: float
    noise_power: float
    time_h: float = 0.0

    @property
    def n_cells(self) -> int:
        return self.channels.shape[0]

    @property
    def n_ues(self) -> int:
        return self.channels.shape[1]

    @property
    def n_tx(self) -> int:
        return self.channels.shape[2]


@dataclass(frozen=True)
class SchemeSpec:
    name: str
    n1: int


@dataclass(frozen=True)
class EvalResult:
    scheme: str
    sinr: np.ndarray
    sum_rate: float
    esr: float
    n1: int
    cell_power: np.ndarray


def pilot_overhead(scheme: str, n_cells: int, n_tx: int, n_paths: int) -> int:
    """Pilot symbols spent on channel estimation in one coherence block."""
    return {"MCBF_IDEAL": 0,
            "MCBF_CONV": n_cells * n_tx,
            "PCBF_CONV": n_tx,
            "PEMNET_MCBF": n_cells * n_paths,
            "PEMNET_PCBF": n_paths,
            "PEMNET_SALINR": n_paths}[scheme]


def effective_sum_rate(sum_rate: float, n0: int, n1: int) -> float:
    if not 0 <= n1 <= n0:
        raise ValueError("need 0 <= n1 <= n0")
    return (n0 - n1) / n0 * sum_rate


def _cn(rng, shape, var):
    return np.sqrt(var / 2) * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def aps_peak_bins(weights, k: int) -> np.ndarray:
    """Indices of the ``k`` largest local maxima of an APS, in angle order.

    A path between two grid angles spreads over adjacent bins; ranking local
    maxima instead of raw bins keeps one hypothesis per path. An all-zero
    APS yields its first bin.
    """
    w = np.asarray(weights, dtype=float)
    left = np.concatenate(([-np.inf], w[:-1]))
    right = np.concatenate((w[1:], [-np.inf]))
    peaks = np.flatnonzero((w > 0) & (w >= left) & (w > right))
    if len(peaks) == 0:
        return np.array([int(np.argmax(w))])
    order = np.argsort(-w[peaks], kind="stable")[:k]
    return np.sort(peaks[order])


def map_assisted_estimate(h, angles, pilot_noise_var, rng):
    """Least-squares path gains from noisy projections onto hypothesized paths.

    One pilot per hypothesized angle observes ``a(theta_p)^H h + noise``;
    the gains solve the resulting ``n_p x n_p`` normal equations and the
    channel is rebuilt as ``sum_p g_p a(theta_p)``.
    """
    S = steering_matrix(angles, len(h))
    y = S.conj().T @ h
    if pilot_noise_var > 0:
        y = y + _cn(rng, y.shape, pilot_noise_var)
    g = np.linalg.lstsq(S.conj().T @ S, y, rcond=None)[0]
    return S @ g


def estimate_csi(instance: NetworkInstance, scheme: str, pems=None,
                 pilot_noise_var: float = 0.0, rng=None, n_paths: int = 4):
    """Estimated channels seen by ``scheme`` and its pilot overhead ``n1``.

    Uncoordinated schemes only estimate serving links; the other entries of
    the returned array stay zero.
    """
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme}")
    C, K, n = instance.channels.shape
    n1 = pilot_overhead(scheme, C, n, n_paths)
    if scheme == "MCBF_IDEAL":
        return instance.channels.copy(), n1
    rng = np.random.default_rng() if rng is None else rng
    links = [(c, k) for c in range(C) for k in range(K)
             if scheme in _COORDINATED or instance.serving[k] == c]
    H_hat = np.zeros_like(instance.channels)
    for c, k in links:
        h = instance.channels[c, k]
        if scheme.endswith("_CONV"):
            H_hat[c, k] = h + _cn(rng, n, pilot_noise_var)
        else:
            pem = pems[c]
            z = int(instance.ue_grids[k])
            if not 0 <= z < pem.grid_map.n_grids:
                raise KeyError(f"grid {z} unknown to the map of cell {c}")
            bins = aps_peak_bins(pem.aps(z, instance.time_h).weights, n_paths)
            angles = pem.angular_grid.angles[bins]
            H_hat[c, k] = map_assisted_estimate(h, angles, pilot_noise_var, rng)
    return H_hat, n1


def cross_gains(H, serving, V):
    """G[k, j] = h_{s_j -> k}^H v_j."""
    return np.einsum("jkn,jn->kj", H[serving].conj(), V)


def sinr(H, serving, V, noise_power) -> np.ndarray:
    G = np.abs(cross_gains(H, serving, V)) ** 2
    signal = np.diag(G)
    return signal / (G.sum(axis=1) - signal + noise_power)


def cell_powers(V, serving, n_cells):
    return np.bincount(serving, weights=np.sum(np.abs(V) ** 2, axis=1), minlength=n_cells)


def _power_limited_solve(A, B, P):
    """Solve (A + mu I) X = B with the smallest mu >= 0 giving ||X||_F^2 <= P."""
    lam, U = np.linalg.eigh(A)
    lam = np.maximum(lam, 0.0)
    Bt = np.sum(np.abs(U.conj().T @ B) ** 2, axis=1)

    def power(mu):
        with np.errstate(divide="ignore", invalid="ignore"):
            terms = np.where(Bt > 0, Bt / (lam + mu) ** 2, 0.0)
        return float(np.sum(terms))

    scale = max(lam.max(initial=0.0), 1e-300)
    if lam.min() > 1e-12 * scale and power(0.0) <= P:
        mu = 0.0
    else:
        lo, hi = 0.0, np.sqrt(Bt.sum() / P)
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if power(mid) > P:
                lo = mid
            else:
                hi = mid
            if hi - lo <= 1e-15 * hi:
                break
        mu = hi
    X = U @ ((U.conj().T @ B) / (lam + mu)[:, None])
    got = float(np.sum(np.abs(X) ** 2))
    if not got <= P * (1 + 1e-6):
        raise SolverError(f"power bisection failed: power {got:.6g} > budget {P:.6g} (mu={mu:.3g})")
    return X


def wmmse_beamforming(channels, serving, tx_power: float, noise_power: float,
                      max_iters: int = 100, tol: float = 1e-4, return_trace: bool = False):
    """Sum-rate WMMSE for multi-cell MISO downlink with per-cell power budgets.

    ``channels[c, k]`` is the channel from cell ``c`` to UE ``k``; each UE is
    served by ``serving[k]``. Starts from matched-filter beams with an equal
    per-user power split and stops when the relative change of the sum rate
    falls below ``tol``.
    """
    H = np.asarray(channels)
    serving = np.asarray(serving, dtype=int)
    C, K, n = H.shape
    own = H[serving, np.arange(K)]
    norms = np.linalg.norm(own, axis=1)
    if np.any(norms == 0):
        raise ValueError("serving channels must be nonzero")
    per_cell = np.bincount(serving, minlength=C)
    V = own / norms[:, None] * np.sqrt(tx_power / per_cell[serving])[:, None]

    trace = []
    for _ in range(max_iters + 1):
        G = cross_gains(H, serving, V)
        total = np.sum(np.abs(G) ** 2, axis=1) + noise_power
        signal = np.diag(G)
        u = signal / total
        e = np.clip(1.0 - np.abs(signal) ** 2 / total, np.finfo(float).tiny, None)
        w = 1.0 / e
        rate = float(np.sum(-np.log2(e)))
        trace.append(rate)
        if len(trace) > 1 and abs(trace[-1] - trace[-2]) <= tol * max(abs(trace[-2]), 1e-300):
            break
        if len(trace) == max_iters + 1:
            break
        coef = w * np.abs(u) ** 2
        newV = np.empty_like(V)
        for c in range(C):
            users = np.flatnonzero(serving == c)
            if len(users) == 0:
                continue
            Hc = H[c]  # (K, n)
            A = (Hc.T * coef) @ Hc.conj()
            B = (Hc[users] * (w[users] * u[users])[:, None]).T
            newV[users] = _power_limited_solve(A, B, tx_power).T
        V = newV
    if return_trace:
        return V, trace
    return V


def per_cell_wmmse(H_hat, serving, tx_power, noise_power, max_iters=100, tol=1e-4):
    """Each cell designs for its own UEs only; cross-cell interference is ignored."""
    C, K, n = H_hat.shape
    V = np.zeros((K, n), dtype=complex)
    for c in range(C):
        users = np.flatnonzero(serving == c)
        if len(users) == 0:
            continue
        Hc = H_hat[c:c + 1, users]
        V[users] = wmmse_beamforming(Hc, np.zeros(len(users), dtype=int), tx_power,
                                     noise_power, max_iters, tol)
    return V


def leakage_covariance(pem: Pem, victim_cell: int, t: float, n_active: float) -> np.ndarray:
    """Expected covariance of the observer's leakage into ``victim_cell``.

    The observer is the owner of ``pem``. Occurrence weights are renormalized
    inside the victim cell and scaled by the expected number of its active
    UEs, ``n_active`` times the cell's share of demand.
    """
    grids = pem.grid_map.grids_of_cell(victim_cell)
    n = pem.n_tx
    q = pem.occurrence(t)[grids]
    mass = q.sum()
    if not mass > 0:
        return np.zeros((n, n), dtype=complex)
    interval = pem.interval_of(t)
    weights = np.array([pem.ckm.get(int(g), interval).weights for g in grids])
    # sum_g q_g R_g equals the covariance of the q-weighted APS
    agg = (q / mass) @ weights
    return n_active * mass * aps_to_covariance(agg, pem.angular_grid, n)


def slnr_beamforming(H_own, leakage, tx_power: float, noise_power: float) -> np.ndarray:
    """Regularized signal-to-leakage beamformers for one cell, equal power split.

    ``H_own`` holds the estimated channels of the cell's UEs (rows);
    ``leakage`` is the summed leakage covariance towards other cells.
    """
    H_own = np.atleast_2d(H_own)
    Kc, n = H_own.shape
    if Kc == 0:
        raise ValueError("at least one served UE is required")
    M = H_own.T @ H_own.conj() + leakage + (noise_power * Kc / tx_power) * np.eye(n)
    # (M - h_k h_k^H)^{-1} h_k is parallel to M^{-1} h_k (Sherman-Morrison)
    V = np.linalg.solve(M, H_own.T).T
    V *= np.sqrt(tx_power / Kc) / np.linalg.norm(V, axis=1, keepdims=True)
    return V


def design_beamformers(instance: NetworkInstance, scheme: str, H_hat, pems=None,
                       max_iters=100, tol=1e-4, n_active=None):
    P, s2 = instance.tx_power, instance.noise_power
    serving = instance.serving
    if scheme in _COORDINATED:
        return wmmse_beamforming(H_hat, serving, P, s2, max_iters, tol)
    if scheme in ("PCBF_CONV", "PEMNET_PCBF"):
        return per_cell_wmmse(H_hat, serving, P, s2, max_iters, tol)
    n_active = instance.n_ues if n_active is None else n_active
    V = np.zeros((instance.n_ues, instance.n_tx), dtype=complex)
    for c in range(instance.n_cells):
        users = np.flatnonzero(serving == c)
        if len(users) == 0:
            continue
        L = sum(leakage_covariance(pems[c], v, instance.time_h, n_active)
                for v in range(instance.n_cells) if v != c)
        V[users] = slnr_beamforming(H_hat[c, users], L, P, s2)
    return V


def evaluate_scheme(instance: NetworkInstance, scheme: str, pems=None, n0: int = 500,
                    rng=None, pilot_noise_var: float = 0.0, n_paths: int = 4,
                    max_iters: int = 100, tol: float = 1e-4, n_active=None) -> EvalResult:
    """Estimate CSI, design beams, and score them on the true channels."""
    H_hat, n1 = estimate_csi(instance, scheme, pems, pilot_noise_var, rng, n_paths)
    V = design_beamformers(instance, scheme, H_hat, pems, max_iters, tol, n_active)
    gamma = sinr(instance.channels, instance.serving, V, instance.noise_power)
    sum_rate = float(np.sum(np.log2(1.0 + gamma)))
    return EvalResult(scheme, gamma, sum_rate, effective_sum_rate(sum_rate, n0, n1), n1,
                      cell_powers(V, instance.serving, instance.n_cells))


def draw_instance(profiles, grid_map, occurrence, n_ues, n_tx, tx_power, noise_power,
                  time_h, rng) -> NetworkInstance:
    """Drop UEs by occurrence, attach them to the nearest BS, realize all links."""
    placed = place_active_users(occurrence, n_ues, rng, grid_map)
    grids = np.array([g for g, _ in placed], dtype=int)
    C = len(profiles)
    H = np.empty((C, n_ues, n_tx), dtype=complex)
    for k, g in enumerate(grids):
        for c in range(C):
            H[c, k] = realize_channel(profiles[c][g], n_tx, rng)
    return NetworkInstance(H, grid_map.cell_of_grid[grids], grids, tx_power, noise_power, time_h)


def run_mcbf_experiment(config, n_tx_list=None, n_trials=None, schemes=None, pems_by_ntx=None):
    """Effective sum rate of every scheme versus array size.

    Returns ``(rows, summary)``: one row per (scheme, n_tx, trial) and one
    summary entry per (scheme, n_tx). Randomness per n_tx and trial is drawn
    from streams keyed by the master seed, so results do not depend on the
    order or subset of schemes requested.
    """
    from .pipeline import build_site_maps, make_world

    bf = config.bf
    n_tx_list = tuple(bf.n_tx_list if n_tx_list is None else n_tx_list)
    n_trials = bf.n_trials if n_trials is None else n_trials
    if n_trials < 1:
        raise ValueError("n_trials must be >= 1")
    schemes = tuple(bf.schemes if schemes is None else schemes)
    seed = config.seed
    rows = []
    for n_tx in n_tx_list:
        scen = replace(config.scenario, n_tx=n_tx)
        world = make_world(replace(config, scenario=scen))
        pems = (pems_by_ntx or {}).get(n_tx) or build_site_maps(world)
        occ = true_occurrence(world.traffic_truth, world.grid_map, bf.time_h)
        for trial in range(n_trials):
            rng = np.random.default_rng([seed, 3, n_tx, trial])
            inst = draw_instance(world.profiles, world.grid_map, occ, scen.n_ues, n_tx,
                                 scen.tx_power, scen.noise_power, bf.time_h, rng)
            for name in schemes:
                srng = np.random.default_rng([seed, 4, n_tx, trial, SCHEMES.index(name)])
                try:
                    res = evaluate_scheme(inst, name, pems, bf.n0, srng, bf.pilot_noise_var,
                                          scen.n_paths, bf.wmmse_max_iters, bf.wmmse_tol,
                                          scen.n_ues)
                except SolverError as exc:
                    raise SolverError(f"{name}, n_tx={n_tx}, trial={trial}: {exc}") from exc
                rows.append({"scheme": name, "n_tx": n_tx, "trial": trial, "n1": res.n1,
                             "sum_rate": res.sum_rate, "esr": res.esr})
            log.debug("n_tx=%d trial=%d done", n_tx, trial)
    return rows, summarize(rows)


def summarize(rows):
    groups = {}
    for r in rows:
        groups.setdefault((r["scheme"], r["n_tx"]), []).append(r)
    summary = []
    for (scheme, n_tx), rs in groups.items():
        esr = np.array([r["esr"] for r in rs])
        rate = np.array([r["sum_rate"] for r in rs])
        m = len(rs)
        summary.append({"scheme": scheme, "n_tx": n_tx, "mean_esr": float(esr.mean()),
                        "stderr_esr": float(esr.std(ddof=1) / np.sqrt(m)) if m > 1 else 0.0,
                        "n_trials": m, "mean_sum_rate": float(rate.mean()),
                        "stderr_sum_rate": float(rate.std(ddof=1) / np.sqrt(m)) if m > 1 else 0.0})
    return summary


def write_results_csv(path, rows, comments=()):
    with open(path, "w", newline="") as fh:
        for line in comments:
            fh.write(f"# {line}\n")
        writer = csv.writer(fh)
        writer.writerow(["scheme", "n_tx", "trial", "n1", "sum_rate", "esr"])
        for r in rows:
            writer.writerow([r["scheme"], r["n_tx"], r["trial"], r["n1"],
                             repr(r["sum_rate"]), repr(r["esr"])])


def write_summary_csv(path, summary, comments=()):
    with open(path, "w", newline="") as fh:
        for line in comments:
            fh.write(f"# {line}\n")
        writer = csv.writer(fh)
        writer.writerow(["scheme", "n_tx", "mean_esr", "stderr_esr", "n_trials"])
        for s in summary:
            writer.writerow([s["scheme"], s["n_tx"], repr(s["mean_esr"]),
                             repr(s["stderr_esr"]), s["n_trials"]])


@dataclass(frozen=True)
class Verdict:
    name: str
    passed: bool
    detail: str


def _paired(rows, metric):
    table = {}
    for r in rows:
        table.setdefault(r["n_tx"], {}).setdefault(r["scheme"], {})[r["trial"]] = r[metric]
    return table


def _margin(a: dict, b: dict, z: float):
    trials = sorted(set(a) & set(b))
    d = np.array([a[t] - b[t] for t in trials])
    se = d.std(ddof=1) / np.sqrt(len(d)) if len(d) > 1 else 0.0
    return d.mean() > z * se and d.mean() > 0, d.mean(), se


def ordering_verdicts(rows, z: float = 2.0) -> list[Verdict]:
    """Check the expected scheme orderings on per-trial results.

    A difference counts when its mean over paired trials (same network draw)
    exceeds ``z`` standard errors of the per-trial differences. The ideal
    bound is checked on sum rate with the same margin. Comparisons whose
    schemes are absent from ``rows`` are skipped.
    """
    esr, rate = _paired(rows, "esr"), _paired(rows, "sum_rate")
    out = []
    pairs = [("PEMNET_MCBF", "MCBF_CONV"), ("PEMNET_PCBF", "PCBF_CONV"),
             ("PEMNET_SALINR", "PCBF_CONV"), ("PEMNET_SALINR", "PEMNET_PCBF")]
    gaps = []
    for n_tx in sorted(esr):
        per = esr[n_tx]
        for a, b in pairs:
            if a in per and b in per:
                ok, diff, se = _margin(per[a], per[b], z)
                out.append(Verdict(f"esr {a} > {b} @ n_tx={n_tx}", bool(ok),
                                   f"diff={diff:.4g} se={se:.3g}"))
        if "MCBF_IDEAL" in rate[n_tx]:
            ideal = rate[n_tx]["MCBF_IDEAL"]
            for s in rate[n_tx]:
                if s == "MCBF_IDEAL":
                    continue
                ok, diff, se = _margin(ideal, rate[n_tx][s], z)
                out.append(Verdict(f"sum rate MCBF_IDEAL >= {s} @ n_tx={n_tx}", bool(ok),
                                   f"diff={diff:.4g} se={se:.3g}"))
        if "PEMNET_MCBF" in per and "MCBF_CONV" in per:
            gaps.append((n_tx, np.mean([per["PEMNET_MCBF"][t] - per["MCBF_CONV"][t]
                                        for t in per["PEMNET_MCBF"]])))
    if len(gaps) > 1:
        vals = [g for _, g in gaps]
        out.append(Verdict("esr gap PEMNET_MCBF - MCBF_CONV non-decreasing in n_tx",
                           bool(np.all(np.diff(vals) >= 0)),
                           " ".join(f"{n}:{g:.4g}" for n, g in gaps)))
    return out
