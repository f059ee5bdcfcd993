"""Greedy community selection for vaccination under budget constraints.

The core is a lazy-evaluation greedy (CELF): a first pass scores every
community by influence normalized by its population, then communities are
accepted best-gain-first.  With lazy evaluation on, only the head of the
candidate list is re-scored each round and accepted once it stays on top
after a re-sort; with it off, every remaining candidate is re-scored each
round.  Risk-weighted variants disable lazy evaluation (the weighted
influence shows too many submodularity violations for the shortcut).

Fairness variants add per-group knapsack budgets sized by group population
share; a candidate is feasible only if charging it would not overflow the
total budget or any group budget.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from . import disease
from .network import MobilityNetwork

logger = logging.getLogger(__name__)

STRATEGY_KINDS = ("none", "rand", "cs", "im", "im-r", "im-i",
                  "im-a", "im-ra", "im-ia")

# Feasibility slack for fractional group charges: deviations stay sub-person.
GROUP_BUDGET_SLACK = 0.5
TOTAL_BUDGET_TOL = 1e-9


@dataclass(frozen=True)
class StrategySpec:
    """Which selection strategy to run, plus its budget/influence knobs."""

    kind: str
    budget_fraction: float = 0.05
    lazy_eval: bool = True
    sigma_replicates: int = 5
    selection_window: int = 336
    mean_field: bool = False

    def __post_init__(self):
        object.__setattr__(self, "kind", self.kind.lower())
        if self.kind not in STRATEGY_KINDS:
            raise ValueError(f"unknown strategy kind {self.kind!r}")
        if not 0.0 < self.budget_fraction <= 1.0:
            raise ValueError("budget_fraction must be in (0, 1]")
        if self.sigma_replicates < 1:
            raise ValueError("sigma_replicates must be >= 1")

    @property
    def risk_weighted(self) -> bool:
        return self.kind in ("im-a", "im-ra", "im-ia")

    @property
    def grouping(self) -> str | None:
        if self.kind in ("im-r", "im-ra"):
            return "race"
        if self.kind in ("im-i", "im-ia"):
            return "income"
        return None

    @property
    def lazy(self) -> bool:
        # lazy evaluation is unconditionally off for risk-weighted variants
        return self.lazy_eval and not self.risk_weighted


@dataclass
class GroupBudgets:
    """Per-group vaccine budgets B_j and consumed amounts, in persons."""

    grouping: str
    budgets: np.ndarray
    consumed: np.ndarray
    charges: np.ndarray  # (K, M) per-community charge against each group

    def feasible(self, cbg_index: int) -> bool:
        return bool(np.all(self.consumed + self.charges[cbg_index]
                           <= self.budgets + GROUP_BUDGET_SLACK))

    def charged(self, cbg_index: int) -> "GroupBudgets":
        if not self.feasible(cbg_index):
            raise ValueError(
                f"charge for community index {cbg_index} overflows a "
                f"{self.grouping} budget"
            )
        return replace(self, consumed=self.consumed + self.charges[cbg_index])


def compute_group_budgets(network: MobilityNetwork, grouping: str,
                          budget: float) -> GroupBudgets:
    """Split a total budget across groups by population share: B_j = (N_j/N) B."""
    if budget > network.total_population:
        raise ValueError("budget exceeds total population")
    group_pops = network.group_populations(grouping)
    budgets = group_pops / network.total_population * budget
    return GroupBudgets(
        grouping=grouping,
        budgets=budgets,
        consumed=np.zeros_like(budgets),
        charges=network.group_charges(grouping),
    )


def charge_selection(budgets: GroupBudgets, network: MobilityNetwork,
                     cbg_id: int) -> GroupBudgets:
    """Charge one selected community against the group budgets."""
    return budgets.charged(network.index_of(cbg_id))


@dataclass
class SelectionResult:
    """Ordered vaccination set with budget accounting and a gain trace."""

    strategy: str
    v: list[int]  # CBG ids in acceptance order
    budget: float
    budget_used: float
    per_group_used: dict[str, list[float]]
    gain_trace: list[tuple[int, float]] = field(default_factory=list)
    evaluation_count: int = 0

    def to_dict(self) -> dict:
        return {
            "strategy": self.strategy,
            "V": list(self.v),
            "budget": self.budget,
            "budget_used": self.budget_used,
            "per_group_used": self.per_group_used,
            "gain_trace": [[c, g] for c, g in self.gain_trace],
            "evaluation_count": self.evaluation_count,
        }


class SimulationInfluence:
    """Epidemic influence oracle for the greedy selector.

    Evaluations share one base seed so every candidate sees common random
    numbers; a value depends only on (seed set, base seed), never on which
    other candidates were batched alongside.
    """

    def __init__(self, network: MobilityNetwork, params: disease.DiseaseParams,
                 window: int, replicates: int, rng_seed: int,
                 weighted: bool = False, mean_field: bool = False):
        self.network = network
        self.params = params
        self.window = window
        self.replicates = replicates
        self.rng_seed = rng_seed
        self.weighted = weighted
        self.mean_field = mean_field
        self.calls = 0

    def evaluate_many(self, index_sets: Sequence[tuple[int, ...]]) -> np.ndarray:
        self.calls += len(index_sets)
        sets = [np.array(s, dtype=np.int64) for s in index_sets]
        return disease._sigma_batch(
            self.network, self.params, sets, self.window, self.replicates,
            self.rng_seed, weighted=self.weighted, mean_field=self.mean_field,
        )

    def evaluate(self, index_set: tuple[int, ...]) -> float:
        return float(self.evaluate_many([index_set])[0])


class CoverageInfluence:
    """Weighted set-coverage influence: the value of a seed set is the total
    weight of elements covered by any member.  Monotone and submodular by
    construction; handy for validating the selector itself."""

    def __init__(self, cover_sets: Sequence[frozenset[int]], weights):
        self.cover_sets = [frozenset(s) for s in cover_sets]
        self.weights = dict(weights)
        self.calls = 0

    def evaluate(self, index_set) -> float:
        self.calls += 1
        covered = set()
        for i in index_set:
            covered |= self.cover_sets[i]
        return sum(self.weights[e] for e in covered)

    def evaluate_many(self, index_sets) -> np.ndarray:
        return np.array([self.evaluate(s) for s in index_sets])


def celf_greedy(
    influence,
    populations: np.ndarray,
    total_budget: float,
    group_budgets: GroupBudgets | None = None,
    lazy: bool = True,
) -> tuple[list[int], list[tuple[int, float]], GroupBudgets | None, int]:
    """Greedy selection of community indices under budget feasibility.

    Returns (selected indices in order, gain trace, final group budgets,
    evaluation count).  The gain recorded for each acceptance is the
    population-normalized marginal influence at the moment of acceptance.
    """
    k = populations.shape[0]
    used = 0.0
    budgets = group_budgets

    def fits(i: int) -> bool:
        if used + populations[i] > total_budget + TOTAL_BUDGET_TOL:
            return False
        return budgets is None or budgets.feasible(i)

    first = influence.evaluate_many([(i,) for i in range(k)])
    # entries: [index, normalized gain, |Z| when the gain was computed]
    entries = [[i, first[i] / populations[i], 0] for i in range(k)]
    entries.sort(key=lambda e: (-e[1], e[0]))

    selected: list[int] = []
    trace: list[tuple[int, float]] = []
    spread = 0.0

    while entries:
        entries = [e for e in entries if fits(e[0])]
        if not entries:
            break
        if lazy:
            # re-score the head until it survives a re-sort with a fresh gain
            while entries[0][2] != len(selected):
                head = entries[0]
                val = influence.evaluate(tuple(selected) + (head[0],))
                head[1] = (val - spread) / populations[head[0]]
                head[2] = len(selected)
                entries.sort(key=lambda e: (-e[1], e[0]))
        elif entries[0][2] != len(selected):
            # the very first pick comes straight from the first pass
            vals = influence.evaluate_many(
                [tuple(selected) + (e[0],) for e in entries])
            for e, v in zip(entries, vals):
                e[1] = (v - spread) / populations[e[0]]
                e[2] = len(selected)
            entries.sort(key=lambda e: (-e[1], e[0]))

        best, gain, _ = entries.pop(0)
        selected.append(best)
        trace.append((best, float(gain)))
        spread += gain * populations[best]
        used += populations[best]
        if budgets is not None:
            budgets = budgets.charged(best)

    if not selected:
        logger.warning("no community fits the budget %.1f; selection is empty",
                       total_budget)
    return selected, trace, budgets, influence.calls


def _group_usage(network: MobilityNetwork, indices: Sequence[int]) -> dict:
    usage = {}
    for grouping in ("race", "income"):
        charges = network.group_charges(grouping)
        total = np.zeros(charges.shape[1])
        for i in indices:
            total += charges[i]
        usage[grouping] = [float(x) for x in total]
    return usage


def _result(network, strategy, indices, budget, trace=(), evals=0):
    pops = network.populations
    return SelectionResult(
        strategy=strategy,
        v=[network.cbgs[i].id for i in indices],
        budget=float(budget),
        budget_used=float(sum(int(pops[i]) for i in indices)),
        per_group_used=_group_usage(network, indices),
        gain_trace=list(trace),
        evaluation_count=evals,
    )


def select_im(
    network: MobilityNetwork,
    params: disease.DiseaseParams,
    spec: StrategySpec,
    rng_seed: int = 0,
    influence=None,
) -> SelectionResult:
    """Influence-maximization selection (any im* strategy kind).

    `influence` may be supplied to swap the epidemic oracle for another
    influence function over community indices.
    """
    if not spec.kind.startswith("im"):
        raise ValueError(f"select_im cannot run strategy {spec.kind!r}")
    budget = spec.budget_fraction * network.total_population
    if influence is None:
        influence = SimulationInfluence(
            network, params, window=spec.selection_window,
            replicates=spec.sigma_replicates, rng_seed=rng_seed,
            weighted=spec.risk_weighted, mean_field=spec.mean_field,
        )
    budgets = None
    if spec.grouping is not None:
        budgets = compute_group_budgets(network, spec.grouping, budget)
    indices, trace, _, evals = celf_greedy(
        influence, network.populations.astype(np.float64), budget,
        group_budgets=budgets, lazy=spec.lazy,
    )
    gain_trace = [(network.cbgs[i].id, g) for i, g in trace]
    result = _result(network, spec.kind, indices, budget, gain_trace, evals)
    return result


def select_random(network: MobilityNetwork, budget: float,
                  rng_seed: int = 0) -> SelectionResult:
    """Budget-filling random baseline: shuffled order, skip what cannot fit."""
    rng = np.random.default_rng(rng_seed)
    order = rng.permutation(network.n_cbgs)
    indices = _fill_budget(network.populations, order, budget)
    return _result(network, "rand", indices, budget)


def select_oldest(network: MobilityNetwork, budget: float) -> SelectionResult:
    """Oldest-first baseline (median age descending, ties by id ascending)."""
    ids = np.array([c.id for c in network.cbgs])
    order = sorted(range(network.n_cbgs), key=lambda i: (-network.ages[i], ids[i]))
    indices = _fill_budget(network.populations, order, budget)
    return _result(network, "cs", indices, budget)


def _fill_budget(populations, order, budget) -> list[int]:
    used = 0.0
    chosen = []
    for i in order:
        if used + populations[i] <= budget + TOTAL_BUDGET_TOL:
            chosen.append(int(i))
            used += populations[i]
    return chosen


def select(
    network: MobilityNetwork,
    params: disease.DiseaseParams,
    spec: StrategySpec,
    rng_seed: int = 0,
) -> SelectionResult:
    """Dispatch any strategy kind to its selector."""
    budget = spec.budget_fraction * network.total_population
    if spec.kind == "none":
        return _result(network, "none", [], budget)
    if spec.kind == "rand":
        return select_random(network, budget, rng_seed)
    if spec.kind == "cs":
        return select_oldest(network, budget)
    return select_im(network, params, spec, rng_seed)
