"""Command line interface: ``run``, ``sweep``, ``fit-omega`` and ``eval``.

Configs are JSON files with the fields of
:class:`beamprecode.harness.ScenarioConfig`; any omitted field keeps its
default.  Exit code is nonzero when any cell of a run fails.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace

from . import harness as hn
from . import stats as st


def _load_config(path: str, seed=None, methods=None) -> hn.ScenarioConfig:
    cfg = hn.ScenarioConfig.from_json(path)
    if seed is not None:
        cfg = replace(cfg, seed=seed)
    if methods:
        cfg = replace(cfg, methods=tuple(methods))
    return cfg


def _emit_report(report: hn.RunReport, out: str | None, out_csv: str | None) -> int:
    if out:
        hn.emit(report, "json", out)
    if out_csv:
        hn.emit(report, "csv", out_csv)
    for cell in report.cells:
        status = f"FAILED ({cell.error})" if cell.error else \
            f"{cell.sum_rate:.4f} +/- {cell.stderr:.4f}"
        print(f"{cell.method:>10s}  snr={cell.snr_db:g} dB  beta={cell.beta:.3f}  "
              f"sum-rate {status}")
    return 1 if report.failed else 0


def _cmd_run(args) -> int:
    cfg = _load_config(args.config, args.seed, args.methods)
    report = hn.run_scenario(cfg)
    return _emit_report(report, args.out, args.csv)


def _cmd_sweep(args) -> int:
    cfg = _load_config(args.config, args.seed, args.methods)
    reports = hn.sweep(cfg, args.axis, values=args.values, out_csv=args.out)
    code = 0
    for value, report in zip(args.values, reports):
        print(f"== {args.axis} = {value:g} ==")
        code |= _emit_report(report, None, None)
    if args.json:
        merged = {"schema_version": hn.SCHEMA_VERSION, "axis": args.axis,
                  "values": list(args.values),
                  "reports": [r.to_dict() for r in reports]}
        with open(args.json, "w") as fh:
            json.dump(merged, fh, indent=2)
    return code


def _cmd_fit_omega(args) -> int:
    cfg = _load_config(args.config, args.seed)
    if args.slots:
        cfg = replace(cfg, phi_slots=args.slots)
    snr_db = cfg.snr_db[0] if args.snr_db is None else args.snr_db
    sigma2 = 10.0 ** (-snr_db / 10.0)
    scen = hn._Scenario(cfg)
    if args.dump:
        h = hn.load_channel_dump(args.dump)
        pilot = st.unitary_pilots([scen.geom.m_k] * cfg.n_users, cfg.pilot_length(), sigma2)
        rng = hn.stream(cfg.seed, "fit-omega-dump", snr_db)
        fits = hn.fit_power_from_channels(h, pilot, scen.steering, rng)
        powers = [f.power for f in fits]
        nmse = float("nan")
    else:
        powers, nmse = scen.fit_powers(sigma2, snr_db)
    hn.save_power_matrices(args.out, powers, scen.grid)
    print(f"fitted {len(powers)} power matrices at snr={snr_db:g} dB "
          f"(mean NMSE {nmse:.4g}) -> {args.out}")
    return 0


def _cmd_eval(args) -> int:
    cfg = _load_config(args.config, args.seed, args.methods)
    powers = None
    if args.omega:
        powers, _ = hn.load_power_matrices(args.omega)
        if len(powers) != cfg.n_users:
            raise SystemExit("power matrix file does not match the user count")
        grid = hn.build_grids(cfg.geometry(), (cfg.f_k, cfg.f_z, cfg.f_x))
        expected = (grid.n_k, grid.n_t)
        if powers[0].omega.shape != expected:
            raise SystemExit(f"power matrices have shape {powers[0].omega.shape}, "
                             f"config grid needs {expected}")
    report = hn.run_scenario(cfg, powers_hat=powers)
    return _emit_report(report, args.out, args.csv)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="beamprecode",
                                     description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run the scenario grid from a config file")
    run.add_argument("--config", required=True)
    run.add_argument("--out", help="write the full report as JSON")
    run.add_argument("--csv", help="write the flat cell table as CSV")
    run.add_argument("--seed", type=int)
    run.add_argument("--methods", nargs="+")
    run.set_defaults(func=_cmd_run)

    swp = sub.add_parser("sweep", help="sweep one axis of the scenario")
    swp.add_argument("--config", required=True)
    swp.add_argument("--axis", required=True, choices=["snr", "speed", "fine_factor"])
    swp.add_argument("--values", nargs="+", type=float, required=True)
    swp.add_argument("--out", help="merged CSV path")
    swp.add_argument("--json", help="merged JSON path")
    swp.add_argument("--seed", type=int)
    swp.add_argument("--methods", nargs="+")
    swp.set_defaults(func=_cmd_sweep)

    fit = sub.add_parser("fit-omega", help="fit beam-domain power matrices")
    fit.add_argument("--config", required=True)
    fit.add_argument("--out", required=True, help="output .npz path")
    fit.add_argument("--slots", type=int, help="override the pilot slot count")
    fit.add_argument("--snr-db", type=float, dest="snr_db")
    fit.add_argument("--dump", help="replay channels from a .npz dump instead "
                                    "of the synthetic generator")
    fit.add_argument("--seed", type=int)
    fit.set_defaults(func=_cmd_fit_omega)

    ev = sub.add_parser("eval", help="evaluate methods, optionally with "
                                     "precomputed power matrices")
    ev.add_argument("--config", required=True)
    ev.add_argument("--omega", help="fitted power matrices (.npz) to reuse")
    ev.add_argument("--out", help="write the full report as JSON")
    ev.add_argument("--csv", help="write the flat cell table as CSV")
    ev.add_argument("--seed", type=int)
    ev.add_argument("--methods", nargs="+")
    ev.set_defaults(func=_cmd_eval)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
