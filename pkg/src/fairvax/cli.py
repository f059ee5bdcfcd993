"""Command-line interface.

Subcommands: generate, select, simulate, evaluate, experiment, export.
Exit codes: 0 success, 1 configuration error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .disease import DiseaseParams, run
from .experiment import (
    ConfigError,
    evaluate_selection,
    export_plot_data,
    load_config,
    run_experiment,
)
from .metrics import pct_decrease
from .network import (
    NetworkValidationError,
    SyntheticSpec,
    generate_synthetic,
    load_network,
    save_network,
)
from .selection import StrategySpec, select

logger = logging.getLogger(__name__)


class _Parser(argparse.ArgumentParser):
    # argparse exits with code 2 on usage errors; those are config errors here
    def error(self, message):
        raise ConfigError(message)


def _add_disease_flags(p: argparse.ArgumentParser):
    p.add_argument("--beta-home", type=float, default=0.02)
    p.add_argument("--psi", type=float, default=300.0)
    p.add_argument("--p0", type=float, default=0.001)
    p.add_argument("--delta-e-hours", type=float, default=96.0)
    p.add_argument("--delta-i-hours", type=float, default=84.0)
    p.add_argument("--params", type=Path, default=None,
                   help="TOML file with a [disease] table (flags override)")


def _disease_params(args) -> DiseaseParams:
    values = {
        "beta_home": args.beta_home,
        "psi": args.psi,
        "p0": args.p0,
        "delta_e_hours": args.delta_e_hours,
        "delta_i_hours": args.delta_i_hours,
    }
    if args.params is not None:
        try:
            import tomllib
        except ModuleNotFoundError:  # pragma: no cover - version-dependent
            import tomli as tomllib
        try:
            with open(args.params, "rb") as fh:
                table = tomllib.load(fh).get("disease", {})
        except FileNotFoundError:
            raise ConfigError(f"params file not found: {args.params}") from None
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"params file {args.params}: {exc}") from None
        # explicit flags override file values only when non-default
        defaults = {
            "beta_home": 0.02, "psi": 300.0, "p0": 0.001,
            "delta_e_hours": 96.0, "delta_i_hours": 84.0,
        }
        for key, file_val in table.items():
            if key in values and values[key] == defaults.get(key):
                values[key] = file_val
    try:
        return DiseaseParams(**values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad disease parameters: {exc}") from None


def _load_network_dir(path: Path):
    return load_network(path / "cbgs.csv", path / "pois.csv",
                        path / "visits.csv")


def _cmd_generate(args) -> int:
    spec = SyntheticSpec(
        n_cbgs=args.cbgs,
        n_pois=args.pois,
        n_race_groups=args.race_groups,
        horizon_hours=args.horizon_hours,
        visits_per_resident_day=args.visits_per_resident_day,
        pois_per_cbg=args.pois_per_cbg,
        mixing=args.mixing,
        income_mobility_gradient=args.income_mobility_gradient,
        age_income_correlation=args.age_income_correlation,
        min_population=args.min_population,
        max_population=args.max_population,
    )
    network = generate_synthetic(spec, args.seed)
    save_network(network, args.out)
    print(f"wrote network ({network.n_cbgs} CBGs, {network.n_pois} POIs, "
          f"{network.total_population} residents) to {args.out}")
    return 0


def _cmd_select(args) -> int:
    network = _load_network_dir(args.network)
    params = _disease_params(args)
    spec = StrategySpec(
        kind=args.strategy,
        budget_fraction=args.budget_fraction,
        lazy_eval=not args.no_lazy,
        sigma_replicates=args.sigma_replicates,
        selection_window=args.selection_window_hours,
        mean_field=args.mean_field,
    )
    result = select(network, params, spec, rng_seed=args.seed)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    args.out.write_text(json.dumps(result.to_dict(), indent=1, sort_keys=True),
                        encoding="utf-8")
    print(f"selected {len(result.v)} communities "
          f"({result.budget_used:.0f}/{result.budget:.0f} budget) -> {args.out}")
    return 0


def _cmd_simulate(args) -> int:
    network = _load_network_dir(args.network)
    params = _disease_params(args)
    vaccinated: list[int] = []
    if args.selection is not None:
        vaccinated = json.loads(args.selection.read_text(encoding="utf-8"))["V"]
    result = run(
        network, params,
        seeded=[c.id for c in network.cbgs],
        vaccinated=vaccinated,
        vaccination_hour=args.vaccination_hour,
        horizon=args.horizon_hours,
        rng_seed=args.seed,
        collect_trajectory=args.trajectory,
    )
    payload = {
        "eir_total": result.eir_total,
        "eir_by_race": [float(x) for x in result.eir_by_race],
        "eir_by_income": [float(x) for x in result.eir_by_income],
        "vaccinated_total": result.vaccinated_total,
    }
    if result.trajectory is not None:
        payload["trajectory"] = result.trajectory.tolist()
    args.out.parent.mkdir(parents=True, exist_ok=True)
    args.out.write_text(json.dumps(payload, indent=1, sort_keys=True),
                        encoding="utf-8")
    print(f"eir_total={result.eir_total:.0f} -> {args.out}")
    return 0


def _cmd_evaluate(args) -> int:
    network = _load_network_dir(args.network)
    params = _disease_params(args)
    v = json.loads(args.selection.read_text(encoding="utf-8"))["V"]
    eval_seeds = [args.seed_base + s for s in range(args.seeds)]
    records = evaluate_selection(network, params, v, args.vaccination_hour,
                                 args.horizon_hours, eval_seeds)
    baseline = evaluate_selection(network, params, [], args.vaccination_hour,
                                  args.horizon_hours, eval_seeds)
    for rec, base in zip(records, baseline):
        rec["pct_decrease"] = pct_decrease(base["eir_total"], rec["eir_total"])
        rec["risk_weighted_pct_decrease"] = pct_decrease(
            base["risk_weighted_eir"], rec["risk_weighted_eir"])
    keys = ("eir_total", "risk_weighted_eir", "pct_decrease",
            "risk_weighted_pct_decrease", "outcome_kl_race",
            "outcome_kl_income")
    summary = {}
    for key in keys:
        arr = np.array([r[key] for r in records])
        summary[f"{key}_mean"] = float(arr.mean())
        summary[f"{key}_std"] = float(arr.std())
    payload = {"V": v, "n_seeds": args.seeds, "summary": summary,
               "records": records}
    args.out.parent.mkdir(parents=True, exist_ok=True)
    args.out.write_text(json.dumps(payload, indent=1, sort_keys=True),
                        encoding="utf-8")
    print(f"pct_decrease={summary['pct_decrease_mean']:.2f}% "
          f"(+/- {summary['pct_decrease_std']:.2f}) -> {args.out}")
    return 0


def _cmd_experiment(args) -> int:
    overrides = {}
    if args.out_dir is not None:
        overrides["out_dir"] = str(args.out_dir)
    if args.n_seeds is not None:
        overrides["n_seeds"] = args.n_seeds
    if args.budget_fraction is not None:
        overrides["budget_fraction"] = args.budget_fraction
    if args.strategies:
        overrides["strategies"] = tuple(args.strategies)
    config = load_config(args.config, overrides)
    report = run_experiment(config)
    print(f"report ({len(report.records)} records, "
          f"{len(report.failures)} failures) -> "
          f"{Path(config.out_dir) / 'report.json'}")
    return 0 if not report.failures else 2


def _cmd_export(args) -> int:
    data = json.loads(args.report.read_text(encoding="utf-8"))
    perf, fair = export_plot_data(data, args.out_dir)
    print(f"wrote {perf} and {fair}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fairvax", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="generate a synthetic network")
    g.add_argument("--cbgs", type=int, required=True)
    g.add_argument("--pois", type=int, required=True)
    g.add_argument("--race-groups", type=int, default=3)
    g.add_argument("--horizon-hours", type=int, default=840)
    g.add_argument("--visits-per-resident-day", type=float, default=1.0)
    g.add_argument("--pois-per-cbg", type=int, default=8)
    g.add_argument("--mixing", choices=["segregated", "uniform"],
                   default="segregated")
    g.add_argument("--income-mobility-gradient", type=float, default=0.5)
    g.add_argument("--age-income-correlation", type=float, default=0.3)
    g.add_argument("--min-population", type=int, default=600)
    g.add_argument("--max-population", type=int, default=3000)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", type=Path, required=True)
    g.set_defaults(func=_cmd_generate)

    s = sub.add_parser("select", help="select communities to vaccinate")
    s.add_argument("--strategy", required=True,
                   choices=["none", "rand", "cs", "im", "im-r", "im-i",
                            "im-a", "im-ra", "im-ia"])
    s.add_argument("--budget-fraction", type=float, default=0.05)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--network", type=Path, required=True)
    s.add_argument("--out", type=Path, required=True)
    s.add_argument("--selection-window-hours", type=int, default=336)
    s.add_argument("--sigma-replicates", type=int, default=5)
    s.add_argument("--mean-field", action="store_true")
    s.add_argument("--no-lazy", action="store_true",
                   help="disable lazy re-evaluation")
    _add_disease_flags(s)
    s.set_defaults(func=_cmd_select)

    m = sub.add_parser("simulate", help="run one simulation")
    m.add_argument("--network", type=Path, required=True)
    m.add_argument("--selection", type=Path, default=None)
    m.add_argument("--vaccination-hour", type=int, default=336)
    m.add_argument("--horizon-hours", type=int, default=840)
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--trajectory", action="store_true")
    m.add_argument("--out", type=Path, required=True)
    _add_disease_flags(m)
    m.set_defaults(func=_cmd_simulate)

    e = sub.add_parser("evaluate",
                       help="evaluate one selection over many seeds")
    e.add_argument("--selection", type=Path, required=True)
    e.add_argument("--network", type=Path, required=True)
    e.add_argument("--seeds", type=int, default=30)
    e.add_argument("--seed-base", type=int, default=0)
    e.add_argument("--vaccination-hour", type=int, default=336)
    e.add_argument("--horizon-hours", type=int, default=840)
    e.add_argument("--out", type=Path, required=True)
    _add_disease_flags(e)
    e.set_defaults(func=_cmd_evaluate)

    x = sub.add_parser("experiment", help="run the full strategy matrix")
    x.add_argument("--config", type=Path, required=True)
    x.add_argument("--out-dir", type=Path, default=None)
    x.add_argument("--n-seeds", type=int, default=None)
    x.add_argument("--budget-fraction", type=float, default=None)
    x.add_argument("--strategies", nargs="*", default=None)
    x.set_defaults(func=_cmd_experiment)

    p = sub.add_parser("export", help="export plot-ready CSVs from a report")
    p.add_argument("--report", type=Path, required=True)
    p.add_argument("--out-dir", type=Path, required=True)
    p.set_defaults(func=_cmd_export)

    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except (ConfigError, NetworkValidationError, FileNotFoundError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        logger.exception("runtime failure")
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
