"""Config-driven experiment harness: strategies x seeds on one network.

For every strategy a selection is computed once (the stochastic influence
evaluations see only the selection window), then evaluated over a shared
set of full-horizon seeds with vaccination applied at the window boundary.
The no-vaccination strategy runs under the same seeds and serves as the
paired baseline for percentage decreases.  The random baseline averages
over several selection seeds.

Cells (one per strategy and selection seed) are persisted as JSON keyed by
a config hash, written atomically and skipped on rerun when already
present, so experiments are resumable and byte-deterministic regardless
of the worker count.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any

import numpy as np

from . import __version__
from .disease import DiseaseParams, run_many
from .metrics import (
    fairness_report,
    kl_divergence,
    pct_decrease,
    reference_distribution,
    risk_weighted_eir,
    treatment_distribution,
)
from .network import MobilityNetwork, SyntheticSpec, generate_synthetic, load_network
from .selection import STRATEGY_KINDS, SelectionResult, StrategySpec, select

logger = logging.getLogger(__name__)

WORKERS_ENV = "FAIRVAX_WORKERS"


class ConfigError(ValueError):
    """Invalid experiment configuration or config file."""


# Used when a config file omits [disease] keys (matches the CLI defaults).
DEFAULT_DISEASE = {"beta_home": 0.02, "psi": 300.0, "p0": 0.001}


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything needed to reproduce one experiment run."""

    params: DiseaseParams
    strategies: tuple[str, ...]
    network_dir: str | None = None
    synthetic: SyntheticSpec | None = None
    synthetic_seed: int = 0
    budget_fraction: float = 0.05
    selection_window_hours: int = 336
    horizon_hours: int = 840
    n_seeds: int = 30
    sigma_replicates: int = 5
    mean_field_selection: bool = False
    lazy_eval: bool = True
    master_seed: int = 0
    rand_selection_seeds: int = 3
    out_dir: str = "experiment_out"

    def __post_init__(self):
        if (self.network_dir is None) == (self.synthetic is None):
            raise ConfigError("configure exactly one network source "
                              "(files dir or synthetic spec)")
        if self.selection_window_hours > self.horizon_hours:
            raise ConfigError("selection window must not exceed the horizon")
        if self.n_seeds < 1:
            raise ConfigError("n_seeds must be >= 1")
        if self.rand_selection_seeds < 1:
            raise ConfigError("rand_selection_seeds must be >= 1")
        bad = [s for s in self.strategies if s not in STRATEGY_KINDS]
        if bad or not self.strategies:
            raise ConfigError(f"unknown or empty strategies: {bad}")

    def config_hash(self) -> str:
        payload = asdict(self)
        payload.pop("out_dir")  # relocating outputs must not invalidate cells
        blob = json.dumps(payload, sort_keys=True, default=str)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    @property
    def eval_seeds(self) -> list[int]:
        base = self.master_seed * 1_000_000
        return [base + s for s in range(self.n_seeds)]

    def selection_seeds(self, strategy: str) -> list[int]:
        base = self.master_seed * 1_000_000
        if strategy == "rand":
            return [base + 600_000 + k for k in range(self.rand_selection_seeds)]
        return [base + 500_000]


def load_network_from_config(config: ExperimentConfig) -> MobilityNetwork:
    if config.synthetic is not None:
        return generate_synthetic(config.synthetic, config.synthetic_seed)
    d = Path(config.network_dir)
    return load_network(d / "cbgs.csv", d / "pois.csv", d / "visits.csv")


@dataclass
class ExperimentReport:
    """Per-strategy aggregates plus the flat per-run records behind them."""

    config_hash: str
    code_version: str
    eval_seeds: list[int]
    strategies: dict[str, dict]
    records: list[dict]
    failures: dict[str, str] = field(default_factory=dict)
    generated_at: str | None = None

    def to_dict(self) -> dict:
        return {
            "config_hash": self.config_hash,
            "code_version": self.code_version,
            "eval_seeds": self.eval_seeds,
            "strategies": self.strategies,
            "records": self.records,
            "failures": self.failures,
            "generated_at": self.generated_at,
        }


def _canonical_json(payload: Any) -> str:
    return json.dumps(payload, sort_keys=True, indent=1)


def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def evaluate_selection(
    network: MobilityNetwork,
    params: DiseaseParams,
    v: list[int],
    vaccination_hour: int,
    horizon: int,
    eval_seeds: list[int],
) -> list[dict]:
    """Full-horizon evaluation records for one vaccination set."""
    results = run_many(
        network, params,
        seeded=[c.id for c in network.cbgs],
        vaccinated=v,
        vaccination_hour=vaccination_hour,
        horizon=horizon,
        rng_seeds=eval_seeds,
    )
    records = []
    for seed, res in zip(eval_seeds, results):
        rep = fairness_report(network, v, res)
        records.append({
            "eval_seed": seed,
            "eir_total": res.eir_total,
            "risk_weighted_eir": risk_weighted_eir(res, network),
            "eir_by_race": [float(x) for x in res.eir_by_race],
            "eir_by_income": [float(x) for x in res.eir_by_income],
            "vaccinated_total": res.vaccinated_total,
            "outcome_kl_race": rep.outcome_kl_race,
            "outcome_kl_income": rep.outcome_kl_income,
        })
    return records


def _compute_cell(network: MobilityNetwork, config: ExperimentConfig,
                  strategy: str, selection_seed: int) -> dict:
    spec = StrategySpec(
        kind=strategy,
        budget_fraction=config.budget_fraction,
        lazy_eval=config.lazy_eval,
        sigma_replicates=config.sigma_replicates,
        selection_window=config.selection_window_hours,
        mean_field=config.mean_field_selection,
    )
    selection: SelectionResult = select(network, config.params, spec,
                                        rng_seed=selection_seed)
    records = evaluate_selection(
        network, config.params, selection.v,
        vaccination_hour=config.selection_window_hours,
        horizon=config.horizon_hours,
        eval_seeds=config.eval_seeds,
    )
    treatment_kl = {"race": None, "income": None}
    if selection.v:
        for grouping in ("race", "income"):
            treatment_kl[grouping] = kl_divergence(
                treatment_distribution(network, selection.v, grouping),
                reference_distribution(network, grouping),
            )
    return {
        "config_hash": config.config_hash(),
        "strategy": strategy,
        "selection_seed": selection_seed,
        "selection": selection.to_dict(),
        "treatment_kl": treatment_kl,
        "records": records,
    }


def _cell_path(out: Path, strategy: str, selection_seed: int) -> Path:
    return out / "cells" / f"{strategy}__sel{selection_seed}.json"


def _mean_std(values) -> tuple[float | None, float | None]:
    vals = [v for v in values if v is not None]
    if not vals:
        return None, None
    arr = np.asarray(vals, dtype=np.float64)
    return float(arr.mean()), float(arr.std())


def run_experiment(config: ExperimentConfig) -> ExperimentReport:
    """Run (or resume) the full strategy matrix and persist all artifacts."""
    out = Path(config.out_dir)
    (out / "cells").mkdir(parents=True, exist_ok=True)
    network = load_network_from_config(config)
    cfg_hash = config.config_hash()

    cells = [(s, sel_seed) for s in config.strategies
             for sel_seed in config.selection_seeds(s)]
    failures: dict[str, str] = {}
    done: dict[tuple[str, int], dict] = {}

    def _cell(job):
        strategy, sel_seed = job
        path = _cell_path(out, strategy, sel_seed)
        if path.exists():
            cached = json.loads(path.read_text(encoding="utf-8"))
            if cached.get("config_hash") == cfg_hash:
                logger.info("cell %s/sel%d already complete, skipping",
                            strategy, sel_seed)
                return job, cached
        cell = _compute_cell(network, config, strategy, sel_seed)
        _atomic_write(path, _canonical_json(cell))
        return job, cell

    workers = max(1, int(os.environ.get(WORKERS_ENV, "1")))
    if workers == 1:
        outcomes = []
        for job in cells:
            try:
                outcomes.append(_cell(job))
            except Exception as exc:  # noqa: BLE001 - cell isolation
                failures[job[0]] = f"{type(exc).__name__}: {exc}"
                logger.exception("strategy cell %s failed", job)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = {pool.submit(_cell, job): job for job in cells}
            outcomes = []
            for fut, job in futures.items():
                try:
                    outcomes.append(fut.result())
                except Exception as exc:  # noqa: BLE001 - cell isolation
                    failures[job[0]] = f"{type(exc).__name__}: {exc}"
                    logger.exception("strategy cell %s failed", job)
    for job, cell in outcomes:
        done[job] = cell

    report = _aggregate(config, done, failures)
    _atomic_write(out / "report.json", _canonical_json(report.to_dict()))
    return report


def _aggregate(config: ExperimentConfig, done: dict, failures: dict
               ) -> ExperimentReport:
    none_eir: dict[int, float] = {}
    none_rw: dict[int, float] = {}
    none_cell = done.get(("none", config.selection_seeds("none")[0]))
    if none_cell:
        for rec in none_cell["records"]:
            none_eir[rec["eval_seed"]] = rec["eir_total"]
            none_rw[rec["eval_seed"]] = rec["risk_weighted_eir"]

    flat_records: list[dict] = []
    strategies: dict[str, dict] = {}
    for strategy in config.strategies:
        cells = [done[(strategy, s)] for s in config.selection_seeds(strategy)
                 if (strategy, s) in done]
        if not cells:
            continue
        recs = []
        for cell in cells:
            for rec in cell["records"]:
                row = dict(rec)
                row["strategy"] = strategy
                row["selection_seed"] = cell["selection_seed"]
                base = none_eir.get(rec["eval_seed"])
                base_rw = none_rw.get(rec["eval_seed"])
                row["pct_decrease"] = (
                    pct_decrease(base, rec["eir_total"])
                    if base else None
                )
                row["risk_weighted_pct_decrease"] = (
                    pct_decrease(base_rw, rec["risk_weighted_eir"])
                    if base_rw else None
                )
                recs.append(row)
        recs.sort(key=lambda r: (r["selection_seed"], r["eval_seed"]))
        flat_records.extend(recs)

        agg: dict[str, Any] = {"n_records": len(recs)}
        for key in ("eir_total", "risk_weighted_eir", "pct_decrease",
                    "risk_weighted_pct_decrease", "outcome_kl_race",
                    "outcome_kl_income"):
            mean, std = _mean_std(r[key] for r in recs)
            agg[f"{key}_mean"] = mean
            agg[f"{key}_std"] = std
        for grouping in ("race", "income"):
            mean, std = _mean_std(c["treatment_kl"][grouping] for c in cells)
            agg[f"treatment_kl_{grouping}_mean"] = mean
            agg[f"treatment_kl_{grouping}_std"] = std
        agg["mean_vaccinated"] = float(np.mean(
            [r["vaccinated_total"] for r in recs]))
        agg["selections"] = {
            str(c["selection_seed"]): c["selection"]["V"] for c in cells
        }
        strategies[strategy] = agg

    return ExperimentReport(
        config_hash=config.config_hash(),
        code_version=__version__,
        eval_seeds=config.eval_seeds,
        strategies=strategies,
        records=flat_records,
        failures=failures,
        generated_at=datetime.now(timezone.utc).isoformat(),
    )


def export_plot_data(report: ExperimentReport | dict, out_dir: str | Path
                     ) -> tuple[Path, Path]:
    """Write plot-ready performance.csv and fairness.csv for a report."""
    data = report.to_dict() if isinstance(report, ExperimentReport) else report
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    perf = out / "performance.csv"
    fair = out / "fairness.csv"

    with open(perf, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["strategy", "pct_decrease_mean", "pct_decrease_std",
                    "risk_weighted_pct_decrease_mean",
                    "risk_weighted_pct_decrease_std"])
        for strategy, agg in data["strategies"].items():
            w.writerow([
                strategy,
                _fmt(agg["pct_decrease_mean"]),
                _fmt(agg["pct_decrease_std"]),
                _fmt(agg["risk_weighted_pct_decrease_mean"]),
                _fmt(agg["risk_weighted_pct_decrease_std"]),
            ])

    with open(fair, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["strategy", "grouping", "metric", "kl_mean", "kl_std"])
        for strategy, agg in data["strategies"].items():
            for grouping in ("race", "income"):
                w.writerow([strategy, grouping, "treatment",
                            _fmt(agg[f"treatment_kl_{grouping}_mean"]),
                            _fmt(agg[f"treatment_kl_{grouping}_std"])])
                w.writerow([strategy, grouping, "outcome",
                            _fmt(agg[f"outcome_kl_{grouping}_mean"]),
                            _fmt(agg[f"outcome_kl_{grouping}_std"])])
    return perf, fair


def _fmt(value) -> str:
    return "" if value is None else repr(float(value))


# ---------------------------------------------------------------------------
# TOML config file
# ---------------------------------------------------------------------------

def load_config(path: str | Path, overrides: dict | None = None
                ) -> ExperimentConfig:
    """Parse an experiment config file; overrides win over file keys.

    Schema (TOML):

      [network]            source = "synthetic" | "files"; dir = "..." (files)
      [network.synthetic]  SyntheticSpec fields plus `seed`
      [disease]            DiseaseParams fields
      [experiment]         remaining ExperimentConfig fields
    """
    try:
        import tomllib  # Python >= 3.11
    except ModuleNotFoundError:  # pragma: no cover - version-dependent
        import tomli as tomllib

    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config file {path}: {exc}") from None

    overrides = overrides or {}
    net = raw.get("network", {})
    exp = dict(raw.get("experiment", {}))
    exp.update({k: v for k, v in overrides.items() if v is not None})

    try:
        params = DiseaseParams(**{**DEFAULT_DISEASE,
                                  **raw.get("disease", {}),
                                  **overrides.get("disease", {})})
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad [disease] section: {exc}") from None

    synthetic = None
    network_dir = None
    synthetic_seed = 0
    source = net.get("source", "synthetic" if "synthetic" in net else "files")
    if source == "synthetic":
        syn = dict(net.get("synthetic", {}))
        synthetic_seed = syn.pop("seed", 0)
        try:
            synthetic = SyntheticSpec(**syn)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad [network.synthetic] section: {exc}") from None
    elif source == "files":
        network_dir = net.get("dir")
        if not network_dir:
            raise ConfigError("[network] source='files' requires dir")
    else:
        raise ConfigError(f"unknown network source {source!r}")

    exp.pop("disease", None)
    allowed = {
        "strategies", "budget_fraction", "selection_window_hours",
        "horizon_hours", "n_seeds", "sigma_replicates",
        "mean_field_selection", "lazy_eval", "master_seed",
        "rand_selection_seeds", "out_dir",
    }
    unknown = set(exp) - allowed
    if unknown:
        raise ConfigError(f"unknown [experiment] keys: {sorted(unknown)}")
    if "strategies" in exp:
        exp["strategies"] = tuple(exp["strategies"])

    try:
        return ExperimentConfig(
            params=params,
            network_dir=network_dir,
            synthetic=synthetic,
            synthetic_seed=synthetic_seed,
            **exp,
        )
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
