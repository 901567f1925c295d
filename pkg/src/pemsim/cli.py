"""Command line entry point: ``pemsim <subcommand> [--config PATH] [--out DIR] ...``.

Exit codes: 0 success, 1 configuration or usage error, 2 runtime failure.
Every CSV written starts with ``#`` comment lines carrying the config hash
and seed.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from collections import Counter
from dataclasses import replace

import numpy as np

from .bf import SCHEMES, ordering_verdicts, run_mcbf_experiment, write_results_csv, write_summary_csv
from .config import ConfigError, RunConfig, config_hash, dump_config, load_config, with_seed
from .dtm import write_traffic_csv
from .meas import write_mr_csv
from .pem import load_pem, save_pem
from .pipeline import build_site_maps, gridize_dataset, make_world
from .rxbeam import run_rxbeam_experiment, write_rxbeam_map_csv, write_rxbeam_summary_csv
from .stf import gridize, purity, write_assignments_csv

log = logging.getLogger("pemsim")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def _header(config, command: str) -> list[str]:
    return [f"command={command}", f"config_hash={config_hash(config)}", f"seed={config.seed}"]


def _resolve(args) -> tuple[RunConfig, str]:
    config = load_config(args.config) if args.config else RunConfig()
    config = with_seed(config, args.seed)
    if args.trials is not None:
        if args.trials < 1:
            raise ConfigError("--trials must be >= 1")
        config = replace(config, bf=replace(config.bf, n_trials=args.trials))
    out = args.out or config.output_dir
    try:
        os.makedirs(out, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"output directory {out} is not writable: {exc}") from exc
    if not os.access(out, os.W_OK):
        raise ConfigError(f"output directory {out} is not writable")
    return config, out


def _pem_dirs(path):
    """Map directories inside ``path``; ``path`` itself if it is one."""
    if os.path.exists(os.path.join(path, "meta.txt")):
        return [path]
    subs = sorted(d for d in os.listdir(path) if d.startswith("cell_"))
    if not subs:
        raise FileNotFoundError(f"no site maps under {path}")
    return [os.path.join(path, d) for d in subs]


def cmd_build_pem(config: RunConfig, out: str, study: str = "mcbf") -> int:
    if study == "rxbeam":
        rx = config.rxbeam
        world = make_world(config, rx.scenario, rx.traffic, rx.measurement)
    else:
        world = make_world(config)
    pems = build_site_maps(world)
    header = _header(config, "build-pem")
    dump_config(config, os.path.join(out, "config.yaml"))
    write_mr_csv(os.path.join(out, "mr_records.csv"), world.mr_records, header)
    write_traffic_csv(os.path.join(out, "traffic_records.csv"), world.traffic_records, header)
    lines = [f"grids={world.grid_map.n_grids}", f"cells={len(pems)}",
             f"n_tx={world.scenario.n_tx}", f"mr_records={len(world.mr_records)}",
             f"traffic_records={len(world.traffic_records)}"]
    for pem in pems:
        save_pem(pem, os.path.join(out, f"cell_{pem.cell_id}"), header)
        r = pem.report
        total = r["n_measured"] + r["n_interpolated"]
        lines.append(f"cell {pem.cell_id}: measured={r['n_measured']} "
                     f"interpolated={r['n_interpolated']} "
                     f"interpolated_fraction={r['n_interpolated'] / total:.4f} "
                     f"aps_residual_mean={r['aps_residual_mean']:.6g} "
                     f"aps_residual_max={r['aps_residual_max']:.6g} "
                     f"solver_iters_max={r['solver_iters_max']} "
                     f"dtm_train_rmse={r['dtm_train_rmse']:.6g}")
    with open(os.path.join(out, "build_report.txt"), "w") as fh:
        fh.write("".join(f"# {h}\n" for h in header))
        fh.write("\n".join(lines) + "\n")
    print("\n".join(lines))
    return 0


def cmd_eval_mcbf(config: RunConfig, out: str, schemes=None, pem_dir=None) -> int:
    schemes = tuple(config.bf.schemes if schemes is None else schemes)
    unknown = [s for s in schemes if s not in SCHEMES]
    if unknown:
        raise ConfigError(f"unknown schemes {unknown}; choose from {', '.join(SCHEMES)}")
    given = {}
    if pem_dir:
        pems = [load_pem(d) for d in _pem_dirs(pem_dir)]
        given[pems[0].n_tx] = sorted(pems, key=lambda p: p.cell_id)
    rows, summary = run_mcbf_experiment(config, schemes=schemes, pems_by_ntx=given)
    header = _header(config, "eval-mcbf")
    write_results_csv(os.path.join(out, "mcbf_results.csv"), rows, header)
    write_summary_csv(os.path.join(out, "mcbf_summary.csv"), summary, header)
    for s in summary:
        print(f"{s['scheme']:>14s} n_tx={s['n_tx']:<3d} esr={s['mean_esr']:.4f} "
              f"+/- {s['stderr_esr']:.4f} (n={s['n_trials']})")
    for v in ordering_verdicts(rows):
        print(f"{'PASS' if v.passed else 'FAIL'} {v.name} [{v.detail}]")
    return 0


def cmd_eval_rxbeam(config: RunConfig, out: str, pem_dir=None) -> int:
    pem = load_pem(_pem_dirs(pem_dir)[0]) if pem_dir else None
    pem, results = run_rxbeam_experiment(config, pem=pem)
    header = _header(config, "eval-rxbeam")
    by_d = {r.d: r for r in results}
    map_d = config.rxbeam.map_d if config.rxbeam.map_d in by_d else results[0].d
    write_rxbeam_map_csv(os.path.join(out, "rxbeam_map.csv"), by_d[map_d], pem.grid_map,
                         header + [f"d={map_d}"])
    write_rxbeam_summary_csv(os.path.join(out, "rxbeam_summary.csv"), results, header)
    for r in results:
        verdict = "PEM >= DFT" if r.mean_capture_pem >= r.mean_capture_dft else "PEM < DFT"
        print(f"d={r.d} n_tx={r.n_tx} capture_pem={r.mean_capture_pem:.4f} "
              f"capture_dft={r.mean_capture_dft:.4f} {verdict}")
    return 0


def cmd_eval_gridize(config: RunConfig, out: str) -> int:
    gc = config.gridize
    world = make_world(config)
    records, truth = gridize_dataset(world, gc)
    result = gridize(records, gc.n_virtual, gc.max_iters,
                     np.random.default_rng([config.seed, 6]), gc.floor_db)
    score = purity(result.assignments, truth)
    header = _header(config, "eval-gridize")
    write_assignments_csv(os.path.join(out, "gridize_assignments.csv"),
                          [r.record_id for r in records], result.assignments, truth, header)
    sizes = Counter(int(a) for a in result.assignments)
    lines = [f"records={len(records)}", f"true_grids={sorted(set(truth.tolist()))}",
             f"n_virtual={gc.n_virtual}", f"iterations={result.n_iters}",
             f"purity={score:.6f}"]
    lines += [f"cluster {j}: size={sizes.get(j, 0)}" for j in range(gc.n_virtual)]
    with open(os.path.join(out, "gridize_report.txt"), "w") as fh:
        fh.write("".join(f"# {h}\n" for h in header))
        fh.write("\n".join(lines) + "\n")
    print("\n".join(lines))
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML run configuration (defaults when omitted)")
    common.add_argument("--out", help="output directory (config output_dir when omitted)")
    common.add_argument("--seed", type=int, help="master seed overriding the config")
    common.add_argument("--trials", type=int, help="trials per array size (eval-mcbf)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="pemsim", description="Site map construction and beamforming studies.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    p = sub.add_parser("build-pem", parents=[common], help="build and store per-cell site maps")
    p.add_argument("--study", choices=("mcbf", "rxbeam"), default="mcbf",
                   help="scenario to build: the multi-cell network or the receive-beam site")
    p = sub.add_parser("eval-mcbf", parents=[common], help="effective sum rate versus n_tx")
    p.add_argument("--schemes", help="comma separated subset of " + ",".join(SCHEMES))
    p.add_argument("--pem", help="site maps from build-pem, used at their own n_tx")
    p = sub.add_parser("eval-rxbeam", parents=[common], help="PEM versus DFT receive beamspace")
    p.add_argument("--pem", help="site map from build-pem --study rxbeam")
    sub.add_parser("eval-gridize", parents=[common], help="cluster location-free RSRP records")
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        config, out = _resolve(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    try:
        if args.command == "build-pem":
            return cmd_build_pem(config, out, args.study)
        if args.command == "eval-mcbf":
            schemes = args.schemes.split(",") if args.schemes else None
            return cmd_eval_mcbf(config, out, schemes, args.pem)
        if args.command == "eval-rxbeam":
            return cmd_eval_rxbeam(config, out, args.pem)
        return cmd_eval_gridize(config, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - every runtime failure maps to exit code 2
        log.debug("failure", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
