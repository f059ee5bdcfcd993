"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with `pytest tests/test_acceptance.py -v -s`.  The heavyweight
selection fixtures (K=200 segregated network) are session-scoped and
shared between the equal-treatment and directional-performance criteria.
"""

import json
from itertools import combinations

import numpy as np
import pytest

from fairvax import (
    CoverageInfluence,
    DiseaseParams,
    ExperimentConfig,
    StrategySpec,
    SyntheticSpec,
    celf_greedy,
    compute_group_budgets,
    generate_synthetic,
    init_state,
    kl_divergence,
    pct_decrease,
    reference_distribution,
    risk_weighted_eir,
    run_experiment,
    run_many,
    run_mean_field,
    select,
    sigma,
    step,
    treatment_distribution,
)
from fairvax.disease import _sigma_batch
from fairvax.metrics import GroupDistribution

from conftest import build_network


def _criterion(name: str, ok: bool, detail: str = ""):
    print(f"\nACCEPTANCE {name}: {'PASS' if ok else 'FAIL'}  {detail}")
    assert ok, f"{name} failed: {detail}"


# ---------------------------------------------------------------------------
# shared K=200 fixture for the reproduction criteria
# ---------------------------------------------------------------------------

ACCEPT_SPEC = SyntheticSpec(
    n_cbgs=200, n_pois=400, horizon_hours=840,
    min_population=100, max_population=3000,
    income_mobility_gradient=0.8, age_income_correlation=0.0,
    retiree_fraction=0.12, mixing="segregated",
)
ACCEPT_PARAMS = DiseaseParams(beta_home=0.005, psi=10.0, p0=0.003)
ACCEPT_NET_SEED = 42
SELECTION_WINDOW = 336
HORIZON = 840
BUDGET_FRACTION = 0.05
EVAL_SEEDS = list(range(30))


@pytest.fixture(scope="session")
def accept_net():
    return generate_synthetic(ACCEPT_SPEC, ACCEPT_NET_SEED)


@pytest.fixture(scope="session")
def selections(accept_net):
    """Memoized strategy selections on the shared network."""
    cache = {}

    def get(kind, rng_seed=999):
        key = (kind, rng_seed)
        if key not in cache:
            spec = StrategySpec(kind=kind, budget_fraction=BUDGET_FRACTION,
                                selection_window=SELECTION_WINDOW)
            cache[key] = select(accept_net, ACCEPT_PARAMS, spec,
                                rng_seed=rng_seed)
        return cache[key]

    return get


@pytest.fixture(scope="session")
def evaluations(accept_net, selections):
    """Paired-seed full-horizon evaluations per strategy."""
    cache = {}
    ids = [c.id for c in accept_net.cbgs]

    def get(kind, rng_seed=999):
        key = (kind, rng_seed)
        if key not in cache:
            v = selections(kind, rng_seed).v if kind != "none" else []
            runs = run_many(accept_net, ACCEPT_PARAMS, seeded=ids,
                            vaccinated=v, vaccination_hour=SELECTION_WINDOW,
                            horizon=HORIZON, rng_seeds=EVAL_SEEDS)
            cache[key] = {
                "eir": np.array([r.eir_total for r in runs]),
                "rw": np.array([risk_weighted_eir(r, accept_net)
                                for r in runs]),
            }
        return cache[key]

    return get


# ---------------------------------------------------------------------------
# criterion 1: conservation suite
# ---------------------------------------------------------------------------

def test_conservation_suite():
    rng = np.random.default_rng(2024)
    zero_cases = 0
    for trial in range(1000):
        k = int(rng.integers(2, 51))
        pops = rng.integers(50, 3000, size=k)
        zero_transmission = trial % 3 == 0
        if zero_transmission:
            visits, beta = [], 0.0
        else:
            visits = [(int(t), int(rng.integers(0, k)), 0,
                       float(rng.uniform(0.5, 30.0)))
                      for t in range(24) for _ in range(min(k, 8))]
            beta = float(rng.uniform(0.0, 0.05))
        net = build_network(pops=pops.tolist(), visits=visits, horizon=24)
        params = DiseaseParams(
            beta_home=beta, psi=float(rng.uniform(0.0, 500.0)),
            p0=float(rng.uniform(0.001, 0.3)),
            delta_e_hours=float(rng.uniform(1.0, 120.0)),
            delta_i_hours=float(rng.uniform(1.0, 120.0)),
        )
        seeded = [c.id for c in net.cbgs if rng.random() < 0.5]
        state = init_state(net, seeded, params.p0)
        initial_e = int(state.e.sum())
        step_rng = np.random.default_rng(trial)
        prev_r = state.r
        for hour in range(24):
            state = step(state, net, params, None, hour, step_rng)
            assert np.array_equal(
                state.s + state.e + state.i + state.r, net.populations), \
                f"conservation broke on trial {trial} hour {hour}"
            assert np.all(state.r >= prev_r)
            assert np.all(state.s >= 0)
            prev_r = state.r
        if zero_transmission:
            zero_cases += 1
            eir = int((state.e + state.i + state.r).sum())
            assert eir == initial_e, f"zero-transmission leak on trial {trial}"
    _criterion("conservation-suite", True,
               f"1000 runs, {zero_cases} zero-transmission cases")


# ---------------------------------------------------------------------------
# criterion 2: Monte Carlo vs mean-field
# ---------------------------------------------------------------------------

def test_monte_carlo_vs_mean_field():
    spec = SyntheticSpec(n_cbgs=20, n_pois=50, horizon_hours=168,
                         min_population=800, max_population=2500)
    net = generate_synthetic(spec, seed=20)
    params = DiseaseParams(beta_home=0.01, psi=80.0, p0=0.01)
    ids = [c.id for c in net.cbgs]
    mf = run_mean_field(net, params, seeded=ids, horizon=168).eir_total
    runs = run_many(net, params, seeded=ids, horizon=168,
                    rng_seeds=list(range(10_000)))
    mc = float(np.mean([r.eir_total for r in runs]))
    gap = abs(mc - mf) / mf
    _criterion("monte-carlo-vs-mean-field", gap <= 0.02,
               f"mean-field={mf:.1f} monte-carlo={mc:.1f} gap={gap:.4%}")


# ---------------------------------------------------------------------------
# criterion 3: greedy oracle on exhaustively enumerable fixtures
# ---------------------------------------------------------------------------

def _stepwise_greedy(net, params, budget, window):
    pops = {c.id: c.population for c in net.cbgs}
    chosen, used = [], 0.0
    while True:
        spread = (sigma(net, params, chosen, window=window, mean_field=True)
                  if chosen else 0.0)
        gains = {
            c.id: (sigma(net, params, chosen + [c.id], window=window,
                         mean_field=True) - spread) / pops[c.id]
            for c in net.cbgs
            if c.id not in chosen and used + pops[c.id] <= budget + 1e-9
        }
        if not gains:
            return chosen
        best = min(gains, key=lambda i: (-gains[i], i))
        chosen.append(best)
        used += pops[best]


def test_greedy_oracle():
    params = DiseaseParams(beta_home=0.01, psi=40.0, p0=0.02)
    ratios = []
    for k, net_seed in [(6, 1), (7, 2), (8, 3), (9, 4), (10, 5)]:
        spec = SyntheticSpec(n_cbgs=k, n_pois=12, horizon_hours=72,
                             min_population=500, max_population=2000)
        net = generate_synthetic(spec, seed=net_seed)
        strategy = StrategySpec(kind="im", budget_fraction=0.4,
                                selection_window=72, mean_field=True)
        res = select(net, params, strategy, rng_seed=0)
        budget = res.budget
        assert res.v == _stepwise_greedy(net, params, budget, 72), \
            f"K={k}: stepwise greedy mismatch"
        ids = [c.id for c in net.cbgs]
        pops = {c.id: c.population for c in net.cbgs}
        subsets = [z for r in range(1, k + 1) for z in combinations(ids, r)
                   if sum(pops[c] for c in z) <= budget]
        idx_sets = [np.array([net.index_of(c) for c in z]) for z in subsets]
        vals = _sigma_batch(net, params, idx_sets, 72, 1, 0, mean_field=True)
        achieved = sigma(net, params, res.v, window=72, mean_field=True)
        ratios.append(achieved / vals.max())
    ok = all(r >= 0.63 for r in ratios)
    _criterion("greedy-oracle", ok,
               "ratios " + " ".join(f"{r:.3f}" for r in ratios))


# ---------------------------------------------------------------------------
# criterion 4: CELF equivalence on a submodular surrogate
# ---------------------------------------------------------------------------

def test_celf_equivalence():
    rng = np.random.default_rng(7)
    k, elements = 30, 250
    cover = [frozenset(rng.choice(elements, size=int(rng.integers(4, 25)),
                                  replace=False).tolist()) for _ in range(k)]
    weights = {e: float(rng.uniform(0.5, 2.0)) for e in range(elements)}
    pops = rng.integers(500, 3000, size=k).astype(np.float64)
    budget = pops.sum() * 0.35
    lazy_sel, _, _, lazy_calls = celf_greedy(
        CoverageInfluence(cover, weights), pops, budget, lazy=True)
    full_sel, _, _, full_calls = celf_greedy(
        CoverageInfluence(cover, weights), pops, budget, lazy=False)
    ok = lazy_sel == full_sel and lazy_calls < full_calls
    _criterion("celf-equivalence", ok,
               f"|V|={len(lazy_sel)} lazy_evals={lazy_calls} "
               f"full_evals={full_calls}")


# ---------------------------------------------------------------------------
# criterion 5: budget feasibility over random networks
# ---------------------------------------------------------------------------

def test_budget_feasibility_property():
    rng = np.random.default_rng(99)
    kinds = ["none", "rand", "cs", "im", "im-r", "im-i",
             "im-a", "im-ra", "im-ia"]
    for trial in range(200):
        spec = SyntheticSpec(
            n_cbgs=int(rng.integers(6, 16)),
            n_pois=int(rng.integers(8, 30)),
            horizon_hours=24,
            min_population=int(rng.integers(80, 400)),
            max_population=int(rng.integers(800, 3000)),
            mixing="segregated" if trial % 2 else "uniform",
            retiree_fraction=float(rng.uniform(0.0, 0.3)),
        )
        net = generate_synthetic(spec, seed=trial)
        params = DiseaseParams(
            beta_home=float(rng.uniform(0.0, 0.05)),
            psi=float(rng.uniform(1.0, 300.0)),
            p0=float(rng.uniform(0.005, 0.2)),
        )
        fraction = float(rng.uniform(0.05, 0.6))
        for kind in kinds:
            strategy = StrategySpec(kind=kind, budget_fraction=fraction,
                                    selection_window=12, sigma_replicates=1)
            res = select(net, params, strategy, rng_seed=trial)
            budget = fraction * net.total_population
            assert res.budget_used <= budget + 1e-9, \
                f"trial {trial} {kind}: total budget overflow"
            grouping = strategy.grouping
            if grouping is not None:
                gb = compute_group_budgets(net, grouping, budget)
                used = np.array(res.per_group_used[grouping])
                assert np.all(used <= gb.budgets + 0.5), \
                    f"trial {trial} {kind}: group budget overflow"
    _criterion("budget-feasibility", True,
               "200 networks x 9 strategies within budgets")


# ---------------------------------------------------------------------------
# criterion 6: equal-treatment reproduction
# ---------------------------------------------------------------------------

def test_equal_treatment_reproduction(accept_net, selections):
    scores = {}
    for kind, grouping, bound in [("im-i", "income", 1e-3),
                                  ("im-ia", "income", 1e-3),
                                  ("im-r", "race", 5e-3),
                                  ("im-ra", "race", 5e-3)]:
        res = selections(kind)
        kl = kl_divergence(
            treatment_distribution(accept_net, res.v, grouping),
            reference_distribution(accept_net, grouping),
        )
        scores[kind] = (kl, bound)
    ok = all(kl <= bound for kl, bound in scores.values())
    detail = "  ".join(f"{k}:{kl:.2e}(<= {b:g})"
                       for k, (kl, b) in scores.items())
    _criterion("equal-treatment", ok, detail)


# ---------------------------------------------------------------------------
# criterion 7: directional performance
# ---------------------------------------------------------------------------

def test_directional_performance(evaluations):
    base = evaluations("none")

    def pct(kind, seeds=(999,)):
        vals = [100.0 * (base["eir"] - evaluations(kind, s)["eir"])
                / base["eir"] for s in seeds]
        return float(np.mean(vals))

    def rw_pct(kind, seeds=(999,)):
        vals = [100.0 * (base["rw"] - evaluations(kind, s)["rw"])
                / base["rw"] for s in seeds]
        return float(np.mean(vals))

    rand_seeds = (600, 601, 602)  # baseline protocol averages 3 selections
    means = {
        "im": pct("im"),
        "rand": pct("rand", rand_seeds),
        "cs": pct("cs"),
    }
    rw_means = {
        "cs": rw_pct("cs"),
        "im-a": rw_pct("im-a"),
        "im-ra": rw_pct("im-ra"),
        "im-ia": rw_pct("im-ia"),
    }
    ok = (means["im"] > means["rand"] and means["im"] > means["cs"]
          and all(rw_means[k] > rw_means["cs"]
                  for k in ("im-a", "im-ra", "im-ia")))
    detail = ("pct " + " ".join(f"{k}={v:.2f}" for k, v in means.items())
              + " | rw_pct " + " ".join(f"{k}={v:.2f}"
                                        for k, v in rw_means.items()))
    _criterion("directional-performance", ok, detail)


# ---------------------------------------------------------------------------
# criterion 8: metric closed forms
# ---------------------------------------------------------------------------

def test_metric_closed_forms():
    import math
    p1 = GroupDistribution("race", np.array([1.0, 0.0]))
    q1 = GroupDistribution("race", np.array([0.5, 0.5]))
    ok1 = abs(kl_divergence(p1, q1) - math.log(2.0)) <= 1e-12
    p2 = GroupDistribution("race", np.array([0.5, 0.5]))
    q2 = GroupDistribution("race", np.array([0.25, 0.75]))
    expected2 = 0.5 * math.log(2.0) + 0.5 * math.log(2.0 / 3.0)
    ok2 = abs(kl_divergence(p2, q2) - expected2) <= 1e-12
    ok3 = kl_divergence(p2, p2) == 0.0

    ok4 = pct_decrease(360_000.0, 342_000.0) == 5.0
    ok5 = pct_decrease(100.0, 0.0) == 100.0

    net = build_network(pops=[1000, 1000, 1000], ages=[22.0, 45.0, 70.0])
    from fairvax.disease import SeirState, SimulationResult
    eir = np.array([10.0, 20.0, 5.0])
    zeros = np.zeros(3)
    result = SimulationResult(
        final_state=SeirState(zeros, zeros, zeros, eir, 0),
        eir_total=35.0, eir_by_cbg=eir, eir_by_race=net.alpha.T @ eir,
        eir_by_income=np.zeros(4), vaccinated_total=0.0,
        vaccinated_by_cbg=zeros)
    ok6 = risk_weighted_eir(result, net) == 510.0  # 10*1 + 20*10 + 5*60

    ok = all([ok1, ok2, ok3, ok4, ok5, ok6])
    _criterion("metric-closed-forms", ok,
               f"kl/pct/risk-weighted exact: {[ok1, ok2, ok3, ok4, ok5, ok6]}")


# ---------------------------------------------------------------------------
# criterion 9: experiment determinism
# ---------------------------------------------------------------------------

def test_experiment_determinism(tmp_path, monkeypatch):
    def config(out):
        return ExperimentConfig(
            params=DiseaseParams(beta_home=0.02, psi=300.0, p0=0.01),
            strategies=("none", "rand", "cs", "im"),
            synthetic=SyntheticSpec(n_cbgs=12, n_pois=25, horizon_hours=96),
            synthetic_seed=4,
            budget_fraction=0.2,
            selection_window_hours=48,
            horizon_hours=96,
            n_seeds=3,
            sigma_replicates=2,
            rand_selection_seeds=2,
            out_dir=str(out),
        )

    monkeypatch.setenv("FAIRVAX_WORKERS", "1")
    run_experiment(config(tmp_path / "a"))
    monkeypatch.setenv("FAIRVAX_WORKERS", "4")
    run_experiment(config(tmp_path / "b"))

    names_a = sorted(p.name for p in (tmp_path / "a" / "cells").iterdir())
    names_b = sorted(p.name for p in (tmp_path / "b" / "cells").iterdir())
    identical = names_a == names_b and all(
        (tmp_path / "a" / "cells" / n).read_bytes()
        == (tmp_path / "b" / "cells" / n).read_bytes()
        for n in names_a
    )
    rep_a = json.loads((tmp_path / "a" / "report.json").read_text())
    rep_b = json.loads((tmp_path / "b" / "report.json").read_text())
    rep_a.pop("generated_at"), rep_b.pop("generated_at")
    ok = identical and rep_a == rep_b
    _criterion("experiment-determinism", ok,
               f"{len(names_a)} cells byte-identical across worker counts")
