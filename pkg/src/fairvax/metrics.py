"""Fairness and performance evaluation metrics.

Fairness is audited by comparing an observed demographic distribution p
against the network's reference shares q(j) = N_j / N with the discrete
KL-divergence (natural log, nats):

  - equal treatment: p(j) = share of group j among vaccinated residents
  - equal outcome:   p(j) = share of infections borne by group j

Performance is the percentage decrease in exposed-or-worse counts
relative to no vaccination, optionally with each community's count scaled
by its age-risk weight.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .disease import SimulationResult
from .network import MobilityNetwork

logger = logging.getLogger(__name__)

_SUM_TOL = 1e-9


@dataclass(frozen=True)
class GroupDistribution:
    """A normalized distribution over the groups of one grouping."""

    grouping: str
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        if np.any(vals < 0):
            raise ValueError("distribution values must be >= 0")
        if abs(vals.sum() - 1.0) > _SUM_TOL:
            raise ValueError(f"distribution sums to {vals.sum()!r}, must be 1")
        object.__setattr__(self, "values", vals)

    @classmethod
    def from_counts(cls, grouping: str, counts) -> "GroupDistribution":
        counts = np.asarray(counts, dtype=np.float64)
        total = counts.sum()
        if total <= 0:
            raise ValueError(f"cannot normalize all-zero {grouping} counts")
        return cls(grouping, counts / total)


def kl_divergence(p: GroupDistribution, q: GroupDistribution) -> float:
    """Discrete KL-divergence D(p || q) in nats, with 0 ln(0/q) = 0.

    Groups absent from both distributions are dropped (with a warning);
    p(j) > 0 where q(j) = 0 is undefined and rejected.
    """
    if p.grouping != q.grouping:
        raise ValueError("distributions use different groupings")
    if p.values.shape != q.values.shape:
        raise ValueError("distributions have different group counts")
    pv, qv = p.values, q.values
    bad = (pv > 0) & (qv == 0)
    if np.any(bad):
        raise ValueError(
            f"KL undefined: {p.grouping} group(s) {np.nonzero(bad)[0].tolist()} "
            f"have p > 0 but q = 0"
        )
    dropped = (pv == 0) & (qv == 0)
    if np.any(dropped):
        logger.warning("excluding %d empty %s group(s) from KL support",
                       int(dropped.sum()), p.grouping)
    support = pv > 0
    return float(np.sum(pv[support] * np.log(pv[support] / qv[support])))


def reference_distribution(network: MobilityNetwork,
                           grouping: str) -> GroupDistribution:
    """The 'fair' distribution: each group's share of the network population."""
    return GroupDistribution.from_counts(grouping,
                                         network.group_populations(grouping))


def treatment_distribution(network: MobilityNetwork, v: Sequence[int],
                           grouping: str) -> GroupDistribution:
    """Demographic shares among vaccinated residents of the communities in v."""
    ids = list(v)
    if not ids:
        raise ValueError("treatment distribution undefined for an empty selection")
    charges = network.group_charges(grouping)
    counts = np.zeros(charges.shape[1])
    for cid in ids:
        counts += charges[network.index_of(cid)]
    return GroupDistribution.from_counts(grouping, counts)


def outcome_distribution(result: SimulationResult, network: MobilityNetwork,
                         grouping: str) -> GroupDistribution:
    """Shares of exposed-or-worse residents borne by each group."""
    if result.eir_total <= 0:
        raise ValueError("outcome distribution undefined with zero infections")
    counts = result.eir_by_race if grouping == "race" else result.eir_by_income
    return GroupDistribution.from_counts(grouping, counts)


def pct_decrease(baseline_eir: float, strategy_eir: float) -> float:
    """Percentage decrease vs the no-vaccination baseline (negative = worse)."""
    if baseline_eir <= 0:
        raise ValueError("baseline must be positive")
    return 100.0 * (baseline_eir - strategy_eir) / baseline_eir


def risk_weighted_eir(result: SimulationResult,
                      network: MobilityNetwork) -> float:
    """Exposed-or-worse count with each community scaled by its risk weight."""
    return float(np.sum(network.risk_weights * result.eir_by_cbg))


def mobility_reduction(network_pre: MobilityNetwork,
                       network_post: MobilityNetwork,
                       grouping: str) -> np.ndarray:
    """Per-group reduction in total visit weight from `pre` to `post`.

    Visits are apportioned to groups by the originating community's
    composition (race) or quartile (income); 0 means unchanged, 1 means
    all mobility gone.
    """
    if [c.id for c in network_pre.cbgs] != [c.id for c in network_post.cbgs]:
        raise ValueError("networks must share the same community nodes")
    charges = network_pre.group_charges(grouping)
    shares = charges / network_pre.populations[:, None]  # rows sum to 1
    pre = shares.T @ network_pre.visits.total_outgoing_by_cbg
    post = shares.T @ network_post.visits.total_outgoing_by_cbg
    if np.any(pre <= 0):
        raise ValueError("a group has zero pre-period mobility")
    return 1.0 - post / pre


@dataclass
class FairnessReport:
    """Treatment and outcome KL scores with the audited distributions."""

    treatment_kl_race: float | None
    treatment_kl_income: float | None
    outcome_kl_race: float
    outcome_kl_income: float
    p_treatment_race: GroupDistribution | None
    p_treatment_income: GroupDistribution | None
    p_outcome_race: GroupDistribution
    p_outcome_income: GroupDistribution
    q_race: GroupDistribution
    q_income: GroupDistribution


def fairness_report(network: MobilityNetwork, v: Sequence[int],
                    result: SimulationResult) -> FairnessReport:
    """All four KL scores for one selection and one simulation outcome.

    Treatment scores are None for an empty selection (undefined).
    """
    q_race = reference_distribution(network, "race")
    q_income = reference_distribution(network, "income")
    p_out_race = outcome_distribution(result, network, "race")
    p_out_income = outcome_distribution(result, network, "income")
    p_tr_race = p_tr_income = None
    kl_tr_race = kl_tr_income = None
    if len(list(v)) > 0:
        p_tr_race = treatment_distribution(network, v, "race")
        p_tr_income = treatment_distribution(network, v, "income")
        kl_tr_race = kl_divergence(p_tr_race, q_race)
        kl_tr_income = kl_divergence(p_tr_income, q_income)
    return FairnessReport(
        treatment_kl_race=kl_tr_race,
        treatment_kl_income=kl_tr_income,
        outcome_kl_race=kl_divergence(p_out_race, q_race),
        outcome_kl_income=kl_divergence(p_out_income, q_income),
        p_treatment_race=p_tr_race,
        p_treatment_income=p_tr_income,
        p_outcome_race=p_out_race,
        p_outcome_income=p_out_income,
        q_race=q_race,
        q_income=q_income,
    )
