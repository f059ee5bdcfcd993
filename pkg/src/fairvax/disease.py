"""Stochastic metapopulation SEIR propagation on a mobility network.

Hourly transitions per community i with population n_i:

    new exposures   N_SE ~ Pois( (S_i/n_i) * sum_p lam_p(t) w[t][i,p] )
                           + Binom(S_i, lam_i(t))
    new infectious  N_EI ~ Binom(E_i, 1/delta_E)
    new removals    N_IR ~ Binom(I_i, 1/delta_I)

with venue infection rate lam_p(t) = psi * d_p^2 / a_p * sum_i w[t][i,p] I_i/n_i
and home rate lam_i(t) = beta_home * I_i/n_i.  Draws are clamped so S -> E
transfers never exceed S_i; compartments are integer counts in stochastic
mode and reals in mean-field mode (every draw replaced by its expectation).

Independent runs are batched into (B, K) arrays; each batch row owns an RNG
stream derived from its seed entropy, so results are identical whether rows
run alone or batched together.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .network import MobilityNetwork

# Per-metro parameters calibrated against observed case counts.
CALIBRATED_PARAMS = {
    "philadelphia": {"beta_home": 0.02, "psi": 300.0, "p0": 0.001},
    "new_york": {"beta_home": 0.02, "psi": 100.0, "p0": 0.005},
    "chicago": {"beta_home": 0.02, "psi": 500.0, "p0": 0.0005},
}


@dataclass(frozen=True)
class DiseaseParams:
    """Propagation model parameters (rates are per hour)."""

    beta_home: float
    psi: float
    p0: float
    delta_e_hours: float = 96.0
    delta_i_hours: float = 84.0

    def __post_init__(self):
        if self.beta_home < 0 or self.psi < 0:
            raise ValueError("beta_home and psi must be >= 0")
        if not 0.0 < self.p0 <= 1.0:
            raise ValueError("p0 must be in (0, 1]")
        if self.delta_e_hours < 1.0 or self.delta_i_hours < 1.0:
            raise ValueError("exposure/infectious periods must be >= 1 hour")


@dataclass
class SeirState:
    """Per-community compartment counts at hour t (fractions on demand)."""

    s: np.ndarray
    e: np.ndarray
    i: np.ndarray
    r: np.ndarray
    t: int = 0

    def fractions(self, populations: np.ndarray) -> np.ndarray:
        """Stacked (4, K) array of S/E/I/R fractions."""
        return np.stack([self.s, self.e, self.i, self.r]) / populations

    def copy(self) -> "SeirState":
        return SeirState(self.s.copy(), self.e.copy(), self.i.copy(),
                         self.r.copy(), self.t)


@dataclass
class SimulationResult:
    """Outcome of one simulation run.

    eir_* count residents exposed-or-worse at the final hour; residents
    protected by vaccination are excluded even though they sit in R.
    """

    final_state: SeirState
    eir_total: float
    eir_by_cbg: np.ndarray
    eir_by_race: np.ndarray
    eir_by_income: np.ndarray
    vaccinated_total: float
    vaccinated_by_cbg: np.ndarray
    trajectory: np.ndarray | None = None  # (horizon+1, 4) aggregate S/E/I/R


def _rng_for(entropy) -> np.random.Generator:
    if isinstance(entropy, (tuple, list)):
        return np.random.default_rng(np.random.SeedSequence(list(entropy)))
    return np.random.default_rng(np.random.SeedSequence(int(entropy)))


def _initial_exposed(populations: np.ndarray, indices: np.ndarray,
                     p0: float) -> np.ndarray:
    e0 = np.zeros(populations.shape[0], dtype=np.int64)
    if indices.size:
        # round-half-up keeps tiny communities seedable at small p0
        e0[indices] = np.floor(populations[indices] * p0 + 0.5).astype(np.int64)
    return e0


def init_state(network: MobilityNetwork, seeded: Iterable[int],
               p0: float) -> SeirState:
    """Seed initial exposures: E_i(0) = round(n_i * p0) on seeded communities."""
    idx = network.indices_of(seeded)
    e0 = _initial_exposed(network.populations, idx, p0)
    s0 = network.populations.astype(np.int64) - e0
    zeros = np.zeros_like(e0)
    return SeirState(s=s0, e=e0, i=zeros.copy(), r=zeros.copy(), t=0)


class _Engine:
    """Precomputed per-network quantities shared by all runs."""

    def __init__(self, network: MobilityNetwork, params: DiseaseParams):
        self.network = network
        self.params = params
        self.pops = network.populations.astype(np.float64)
        self.inv_pop = 1.0 / self.pops
        # venue transmission factor psi * d^2 / a
        self.poi_factor = params.psi * network.poi_dwell**2 / network.poi_areas
        self.p_ei = 1.0 / params.delta_e_hours
        self.p_ir = 1.0 / params.delta_i_hours

    def step_batch(self, S, E, I, R, active, hour, rngs):
        """Advance all rows one hour in place.  rngs is None in mean-field."""
        net, params = self.network, self.params
        i_frac = I * self.inv_pop * active
        w_pk = net.visits.hour_transposed(hour)
        if w_pk.nnz:
            poi_inf = (w_pk @ i_frac.T).T  # infectious visitors per venue
            lam_poi = poi_inf * self.poi_factor
            w_kp = net.visits.hour(hour)
            poi_mean = (S * self.inv_pop) * ((w_kp @ lam_poi.T).T) * active
        else:
            poi_mean = np.zeros_like(i_frac)
        lam_home = np.minimum(params.beta_home * i_frac, 1.0)

        if rngs is None:
            n_se = np.minimum(poi_mean + S * lam_home, S)
            n_ei = E * self.p_ei
            n_ir = I * self.p_ir
            S -= n_se
            E += n_se - n_ei
            I += n_ei - n_ir
            R += n_ir
            return

        # Draw only on each row's active support, one Poisson plus one
        # concatenated Binomial call per row.  Sizes depend only on the
        # row's own state, so every row remains a pure function of its
        # seed entropy no matter how rows are batched.
        for b, rng in enumerate(rngs):
            sb, eb, ib = S[b], E[b], I[b]
            pz = np.nonzero(poi_mean[b])[0]
            hz = np.nonzero(lam_home[b])[0]
            ez = np.nonzero(eb)[0]
            iz = np.nonzero(ib)[0]
            n_se = np.zeros_like(sb)
            if pz.size:
                n_se[pz] = rng.poisson(poi_mean[b][pz])
            if hz.size or ez.size or iz.size:
                n_draw = np.concatenate((sb[hz], eb[ez], ib[iz]))
                p_draw = np.concatenate((
                    lam_home[b][hz],
                    np.full(ez.size, self.p_ei),
                    np.full(iz.size, self.p_ir),
                ))
                draws = rng.binomial(n_draw, p_draw)
                o1, o2 = hz.size, hz.size + ez.size
                if hz.size:
                    n_se[hz] += draws[:o1]
                np.minimum(n_se, sb, out=n_se)
                sb -= n_se
                eb += n_se
                if ez.size:
                    n_ei = draws[o1:o2]
                    eb[ez] -= n_ei
                    ib[ez] += n_ei
                if iz.size:
                    n_ir = draws[o2:]
                    ib[iz] -= n_ir
                    R[b][iz] += n_ir
            else:
                np.minimum(n_se, sb, out=n_se)
                sb -= n_se
                eb += n_se


def step(state: SeirState, network: MobilityNetwork, params: DiseaseParams,
         vaccinated_mask: np.ndarray | None, hour: int,
         rng: np.random.Generator) -> SeirState:
    """One stochastic hour; vaccinated communities neither emit nor receive
    new exposures (their E/I residents still progress internally)."""
    eng = _Engine(network, params)
    active = np.ones(network.n_cbgs)
    if vaccinated_mask is not None:
        active[np.asarray(vaccinated_mask, dtype=bool)] = 0.0
    new = state.copy()
    S, E, I, R = (a[None, :] for a in (new.s, new.e, new.i, new.r))
    eng.step_batch(S, E, I, R, active, hour, [rng])
    new.t = state.t + 1
    return new


def _simulate_batch(
    network: MobilityNetwork,
    params: DiseaseParams,
    init_e: np.ndarray,  # (B, K) initial exposed counts per row
    vaccinated_idx: np.ndarray | None,
    vaccination_hour: int,
    horizon: int,
    entropies: Sequence | None,  # None -> mean-field
    collect_trajectory: bool = False,
):
    mean_field = entropies is None
    b, k = init_e.shape
    pops = network.populations.astype(np.int64)
    dtype = np.float64 if mean_field else np.int64
    E = init_e.astype(dtype)
    S = np.broadcast_to(pops, (b, k)).astype(dtype) - E
    I = np.zeros((b, k), dtype=dtype)
    R = np.zeros((b, k), dtype=dtype)
    vacc = np.zeros((b, k), dtype=dtype)
    active = np.ones(k)

    eng = _Engine(network, params)
    rngs = None if mean_field else [_rng_for(e) for e in entropies]

    traj = None
    if collect_trajectory:
        traj = np.zeros((b, horizon + 1, 4))

    def _record(t):
        traj[:, t, 0] = S.sum(axis=1)
        traj[:, t, 1] = E.sum(axis=1)
        traj[:, t, 2] = I.sum(axis=1)
        traj[:, t, 3] = R.sum(axis=1)

    def _vaccinate():
        cols = vaccinated_idx
        moved = S[:, cols].copy()
        vacc[:, cols] += moved
        R[:, cols] += moved
        S[:, cols] = 0
        active[cols] = 0.0

    if collect_trajectory:
        _record(0)
    has_vacc = vaccinated_idx is not None and vaccinated_idx.size > 0
    for t in range(horizon):
        if has_vacc and t == vaccination_hour:
            _vaccinate()
        eng.step_batch(S, E, I, R, active, t, rngs)
        if collect_trajectory:
            _record(t + 1)
    if has_vacc and vaccination_hour == horizon:
        _vaccinate()

    return S, E, I, R, vacc, traj


def _result_from_row(network, S, E, I, R, vacc, t, traj) -> SimulationResult:
    eir_by_cbg = (E + I + R) - vacc
    eir_by_race = network.alpha.T @ eir_by_cbg.astype(np.float64)
    eir_by_income = np.zeros(4)
    np.add.at(eir_by_income, network.income_groups - 1,
              eir_by_cbg.astype(np.float64))
    return SimulationResult(
        final_state=SeirState(S, E, I, R, t),
        eir_total=float(eir_by_cbg.sum()),
        eir_by_cbg=eir_by_cbg,
        eir_by_race=eir_by_race,
        eir_by_income=eir_by_income,
        vaccinated_total=float(vacc.sum()),
        vaccinated_by_cbg=vacc,
        trajectory=traj,
    )


def run_many(
    network: MobilityNetwork,
    params: DiseaseParams,
    seeded: Iterable[int],
    vaccinated: Iterable[int] = (),
    vaccination_hour: int = 0,
    horizon: int = 168,
    rng_seeds: Sequence = (0,),
    collect_trajectory: bool = False,
) -> list[SimulationResult]:
    """Run one configuration under several RNG seeds as a single batch."""
    if vaccination_hour > horizon:
        raise ValueError("vaccination_hour must be <= horizon")
    seed_idx = network.indices_of(seeded)
    vacc_idx = network.indices_of(vaccinated)
    e_row = _initial_exposed(network.populations, seed_idx, params.p0)
    init_e = np.tile(e_row, (len(rng_seeds), 1))
    S, E, I, R, vacc, traj = _simulate_batch(
        network, params, init_e, vacc_idx, vaccination_hour, horizon,
        entropies=list(rng_seeds), collect_trajectory=collect_trajectory,
    )
    return [
        _result_from_row(network, S[b], E[b], I[b], R[b], vacc[b], horizon,
                         traj[b] if traj is not None else None)
        for b in range(len(rng_seeds))
    ]


def run(
    network: MobilityNetwork,
    params: DiseaseParams,
    seeded: Iterable[int],
    vaccinated: Iterable[int] = (),
    vaccination_hour: int = 0,
    horizon: int = 168,
    rng_seed=0,
    collect_trajectory: bool = False,
) -> SimulationResult:
    """One stochastic run; deterministic for a fixed rng_seed."""
    return run_many(network, params, seeded, vaccinated, vaccination_hour,
                    horizon, rng_seeds=[rng_seed],
                    collect_trajectory=collect_trajectory)[0]


def run_mean_field(
    network: MobilityNetwork,
    params: DiseaseParams,
    seeded: Iterable[int],
    vaccinated: Iterable[int] = (),
    vaccination_hour: int = 0,
    horizon: int = 168,
    collect_trajectory: bool = False,
) -> SimulationResult:
    """Deterministic variant: every random draw replaced by its expectation."""
    if vaccination_hour > horizon:
        raise ValueError("vaccination_hour must be <= horizon")
    seed_idx = network.indices_of(seeded)
    vacc_idx = network.indices_of(vaccinated)
    init_e = _initial_exposed(network.populations, seed_idx, params.p0)[None, :]
    S, E, I, R, vacc, traj = _simulate_batch(
        network, params, init_e, vacc_idx, vaccination_hour, horizon,
        entropies=None, collect_trajectory=collect_trajectory,
    )
    return _result_from_row(network, S[0], E[0], I[0], R[0], vacc[0], horizon,
                            traj[0] if traj is not None else None)


def _sigma_batch(
    network: MobilityNetwork,
    params: DiseaseParams,
    index_sets: Sequence[np.ndarray],
    window: int,
    replicates: int,
    rng_seed: int,
    weighted: bool = False,
    mean_field: bool = False,
) -> np.ndarray:
    """Influence of several candidate seed sets, evaluated as one batch.

    Replicate r of every set shares the entropy (rng_seed, r): common
    random numbers across candidates, and each value is independent of
    which other sets happen to be in the batch.
    """
    reps = 1 if mean_field else replicates
    rows_e = []
    entropies = [] if not mean_field else None
    for idx in index_sets:
        e_row = _initial_exposed(network.populations, idx, params.p0)
        for r in range(reps):
            rows_e.append(e_row)
            if not mean_field:
                entropies.append((rng_seed, r))
    init_e = np.array(rows_e, dtype=np.int64)
    S, E, I, R, vacc, _ = _simulate_batch(
        network, params, init_e, None, 0, window, entropies=entropies,
    )
    eir = (E + I + R).astype(np.float64)
    if weighted:
        eir = eir * network.risk_weights
    totals = eir.sum(axis=1).reshape(len(index_sets), reps)
    return totals.mean(axis=1)


def sigma(
    network: MobilityNetwork,
    params: DiseaseParams,
    z: Iterable[int],
    window: int,
    replicates: int = 5,
    rng_seed: int = 0,
    mean_field: bool = False,
) -> float:
    """Influence of seed set z: mean exposed-or-worse count at the end of
    `window` hours, averaged over replicates, with no vaccination."""
    idx = network.indices_of(z)
    if idx.size == 0:
        raise ValueError("seed set must be nonempty")
    if replicates < 1:
        raise ValueError("replicates must be >= 1")
    return float(_sigma_batch(network, params, [idx], window, replicates,
                              rng_seed, weighted=False, mean_field=mean_field)[0])


def sigma_a(
    network: MobilityNetwork,
    params: DiseaseParams,
    z: Iterable[int],
    window: int,
    replicates: int = 5,
    rng_seed: int = 0,
    mean_field: bool = False,
) -> float:
    """Age-risk-weighted influence: exposed-or-worse counts scaled by each
    community's risk weight before summing."""
    idx = network.indices_of(z)
    if idx.size == 0:
        raise ValueError("seed set must be nonempty")
    if replicates < 1:
        raise ValueError("replicates must be >= 1")
    return float(_sigma_batch(network, params, [idx], window, replicates,
                              rng_seed, weighted=True, mean_field=mean_field)[0])
