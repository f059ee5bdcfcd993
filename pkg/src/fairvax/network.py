"""Temporal bipartite mobility networks of communities (CBGs) and venues (POIs).

A network holds K community nodes with static demographic attributes
(population, racial composition, median household income, median age),
P venue nodes with physical attributes (area, dwell fraction), and a
sparse hourly visit matrix w[t][i, p] counting residents of community i
present at venue p during hour t.  Node sets are fixed over time; only
edge weights vary hour to hour.

Networks are immutable after construction and safe to share across
concurrent workers.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
from scipy import sparse

FRACTION_TOL = 1e-9

# Death-rate multipliers per median-age bracket, relative to ages 18-29
# (CDC published rates).  Brackets are [lower, upper) in years.
DEFAULT_RISK_TABLE: tuple[tuple[float, float, float], ...] = (
    (0.0, 30.0, 1.0),
    (30.0, 40.0, 3.5),
    (40.0, 50.0, 10.0),
    (50.0, 65.0, 25.0),
    (65.0, 75.0, 60.0),
    (75.0, 85.0, 140.0),
    (85.0, math.inf, 350.0),
)

N_INCOME_GROUPS = 4
INCOME_LABELS = ("q1", "q2", "q3", "q4")


class NetworkValidationError(ValueError):
    """Raised when input data violates a network invariant."""


@dataclass(frozen=True)
class Cbg:
    """One census-block-group community node."""

    id: int
    population: int
    racial_fractions: tuple[float, ...]
    median_income: float
    median_age: float
    income_group: int | None = None  # 1..4, assigned from income quartiles
    risk_weight: float = 1.0

    def __post_init__(self):
        if self.population < 1:
            raise NetworkValidationError(f"CBG {self.id}: population must be >= 1")
        if not 0.0 <= self.median_age <= 120.0:
            raise NetworkValidationError(f"CBG {self.id}: median_age out of [0, 120]")
        if any(f < 0 for f in self.racial_fractions):
            raise NetworkValidationError(f"CBG {self.id}: negative racial fraction")
        total = sum(self.racial_fractions)
        if abs(total - 1.0) > FRACTION_TOL:
            raise NetworkValidationError(
                f"CBG {self.id}: racial fractions sum to {total!r}, must be 1"
            )


@dataclass(frozen=True)
class Poi:
    """One point-of-interest venue node."""

    id: int
    area: float  # square feet
    dwell_fraction: float  # median fraction of an hour spent inside, (0, 1]

    def __post_init__(self):
        if not self.area > 0:
            raise NetworkValidationError(f"POI {self.id}: area must be > 0")
        if not 0.0 < self.dwell_fraction <= 1.0:
            raise NetworkValidationError(
                f"POI {self.id}: dwell_fraction must be in (0, 1]"
            )


class VisitMatrix:
    """Hourly sparse visit weights, stored as one CSR block per hour.

    Both orientations (community x venue and its transpose) are kept so
    the simulation can run csr @ dense products in either direction.
    """

    def __init__(
        self,
        horizon: int,
        n_cbgs: int,
        n_pois: int,
        hours: np.ndarray,
        cbg_idx: np.ndarray,
        poi_idx: np.ndarray,
        weights: np.ndarray,
    ):
        if horizon < 0:
            raise NetworkValidationError("horizon must be >= 0")
        weights = np.asarray(weights, dtype=np.float64)
        hours = np.asarray(hours, dtype=np.int64)
        cbg_idx = np.asarray(cbg_idx, dtype=np.int64)
        poi_idx = np.asarray(poi_idx, dtype=np.int64)
        if weights.size:
            if not np.all(np.isfinite(weights)) or np.any(weights < 0):
                raise NetworkValidationError("visit weights must be finite and >= 0")
            if hours.min() < 0 or hours.max() >= horizon:
                raise NetworkValidationError("visit hour out of range")
            if cbg_idx.min() < 0 or cbg_idx.max() >= n_cbgs:
                raise NetworkValidationError("visit CBG index out of range")
            if poi_idx.min() < 0 or poi_idx.max() >= n_pois:
                raise NetworkValidationError("visit POI index out of range")

        self.horizon = int(horizon)
        self.n_cbgs = int(n_cbgs)
        self.n_pois = int(n_pois)

        self._by_hour: list[sparse.csr_matrix] = []
        self._by_hour_t: list[sparse.csr_matrix] = []
        empty = self._empty = sparse.csr_matrix((n_cbgs, n_pois))
        empty_t = self._empty_t = sparse.csr_matrix((n_pois, n_cbgs))
        order = np.argsort(hours, kind="stable") if weights.size else np.array([], int)
        hours, cbg_idx, poi_idx, weights = (
            hours[order], cbg_idx[order], poi_idx[order], weights[order],
        )
        bounds = np.searchsorted(hours, np.arange(horizon + 1))
        for t in range(horizon):
            lo, hi = bounds[t], bounds[t + 1]
            if lo == hi:
                self._by_hour.append(empty)
                self._by_hour_t.append(empty_t)
                continue
            m = sparse.coo_matrix(
                (weights[lo:hi], (cbg_idx[lo:hi], poi_idx[lo:hi])),
                shape=(n_cbgs, n_pois),
            ).tocsr()
            self._by_hour.append(m)
            self._by_hour_t.append(m.T.tocsr())
        self.nnz = int(sum(m.nnz for m in self._by_hour))
        out = np.zeros(n_cbgs)
        for m in self._by_hour:
            out += np.asarray(m.sum(axis=1)).ravel()
        out.flags.writeable = False
        self.total_outgoing_by_cbg = out

    def hour(self, t: int) -> sparse.csr_matrix:
        """Visit weights at hour t, shape (K, P); empty past the data horizon."""
        return self._by_hour[t] if t < self.horizon else self._empty

    def hour_transposed(self, t: int) -> sparse.csr_matrix:
        """Visit weights at hour t, shape (P, K); empty past the data horizon."""
        return self._by_hour_t[t] if t < self.horizon else self._empty_t

    def iter_triplets(self) -> Iterator[tuple[int, int, int, float]]:
        """Yield (hour, cbg_index, poi_index, weight) in deterministic order."""
        for t, m in enumerate(self._by_hour):
            coo = m.tocoo()
            for i, j, w in zip(coo.row, coo.col, coo.data):
                yield t, int(i), int(j), float(w)


class MobilityNetwork:
    """Validated, immutable mobility network with derived demographic arrays."""

    def __init__(
        self,
        cbgs: Sequence[Cbg],
        pois: Sequence[Poi],
        visits: VisitMatrix,
        race_labels: Sequence[str] | None = None,
        income_labels: Sequence[str] = INCOME_LABELS,
    ):
        if not cbgs:
            raise NetworkValidationError("network must contain at least one CBG")
        n_race = len(cbgs[0].racial_fractions)
        if any(len(c.racial_fractions) != n_race for c in cbgs):
            raise NetworkValidationError("inconsistent racial fraction lengths")
        if visits.n_cbgs != len(cbgs) or visits.n_pois != len(pois):
            raise NetworkValidationError("visit matrix shape does not match node sets")
        if any(c.income_group is None for c in cbgs):
            raise NetworkValidationError("CBGs must carry income groups; "
                                         "run assign_income_groups first")
        ids = [c.id for c in cbgs]
        if len(set(ids)) != len(ids):
            raise NetworkValidationError("duplicate CBG ids")
        poi_ids = [p.id for p in pois]
        if len(set(poi_ids)) != len(poi_ids):
            raise NetworkValidationError("duplicate POI ids")

        self.cbgs = tuple(cbgs)
        self.pois = tuple(pois)
        self.visits = visits
        self.race_labels = tuple(race_labels or (f"race_{k+1}" for k in range(n_race)))
        self.income_labels = tuple(income_labels)
        if len(self.race_labels) != n_race:
            raise NetworkValidationError("race_labels length mismatch")

        self._index_of = {c.id: i for i, c in enumerate(self.cbgs)}
        self.populations = _frozen(np.array([c.population for c in cbgs], np.int64))
        self.alpha = _frozen(np.array([c.racial_fractions for c in cbgs], np.float64))
        self.incomes = _frozen(np.array([c.median_income for c in cbgs], np.float64))
        self.ages = _frozen(np.array([c.median_age for c in cbgs], np.float64))
        self.income_groups = _frozen(np.array([c.income_group for c in cbgs], np.int64))
        self.risk_weights = _frozen(np.array([c.risk_weight for c in cbgs], np.float64))
        self.poi_areas = _frozen(np.array([p.area for p in pois], np.float64))
        self.poi_dwell = _frozen(np.array([p.dwell_fraction for p in pois], np.float64))

        self.n_cbgs = len(self.cbgs)
        self.n_pois = len(self.pois)
        self.n_race_groups = n_race
        self.total_population = int(self.populations.sum())
        race_pops = self.alpha.T @ self.populations
        income_pops = np.zeros(N_INCOME_GROUPS)
        for g in range(1, N_INCOME_GROUPS + 1):
            income_pops[g - 1] = self.populations[self.income_groups == g].sum()
        self._group_pops = {"race": _frozen(race_pops), "income": _frozen(income_pops)}

    def index_of(self, cbg_id: int) -> int:
        try:
            return self._index_of[cbg_id]
        except KeyError:
            raise NetworkValidationError(f"unknown CBG id {cbg_id}") from None

    def indices_of(self, cbg_ids) -> np.ndarray:
        return np.array(sorted(self.index_of(c) for c in cbg_ids), dtype=np.int64)

    def group_populations(self, grouping: str) -> np.ndarray:
        """Total residents per group (race apportioned by fractions)."""
        _check_grouping(grouping)
        return self._group_pops[grouping]

    def group_labels(self, grouping: str) -> tuple[str, ...]:
        _check_grouping(grouping)
        return self.race_labels if grouping == "race" else self.income_labels

    def group_charges(self, grouping: str) -> np.ndarray:
        """Per-CBG vaccine charges against each group budget, shape (K, M).

        Race: a CBG charges every group by population x fraction.
        Income: a CBG charges only its own quartile by full population.
        """
        _check_grouping(grouping)
        if grouping == "race":
            return self.alpha * self.populations[:, None]
        charges = np.zeros((self.n_cbgs, N_INCOME_GROUPS))
        charges[np.arange(self.n_cbgs), self.income_groups - 1] = self.populations
        return charges


def _frozen(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


def _check_grouping(grouping: str):
    if grouping not in ("race", "income"):
        raise ValueError(f"grouping must be 'race' or 'income', got {grouping!r}")


def assign_income_groups(cbgs: Sequence[Cbg]) -> list[Cbg]:
    """Label each CBG 1..4 by quartile of the median-income distribution.

    Quartile boundaries are the 25/50/75 percentiles over CBGs (unweighted
    by population); incomes equal to a boundary go to the lower quartile.
    """
    incomes = np.array([c.median_income for c in cbgs], dtype=np.float64)
    bounds = np.percentile(incomes, [25.0, 50.0, 75.0])
    groups = 1 + np.searchsorted(bounds, incomes, side="left")
    # searchsorted(left) counts bounds strictly below income only when
    # income > bound; equality inserts before the bound -> lower group.
    return [replace(c, income_group=int(g)) for c, g in zip(cbgs, groups)]


def assign_risk_weights(
    cbgs: Sequence[Cbg],
    risk_table: Sequence[tuple[float, float, float]] = DEFAULT_RISK_TABLE,
) -> list[Cbg]:
    """Set each CBG's risk weight from the age bracket of its median age."""
    out = []
    for c in cbgs:
        for lo, hi, mult in risk_table:
            if lo <= c.median_age < hi:
                out.append(replace(c, risk_weight=float(mult)))
                break
        else:
            raise NetworkValidationError(
                f"CBG {c.id}: median_age {c.median_age} not covered by risk table"
            )
    return out


# ---------------------------------------------------------------------------
# CSV ingestion
#
# cbgs.csv   : id,population,median_income,median_age,race_frac_1,...,race_frac_M
# pois.csv   : id,area_sqft,dwell_fraction
# visits.csv : hour,cbg_id,poi_id,weight        (hour 0-based)
# ---------------------------------------------------------------------------

def load_network(
    cbg_file: str | Path,
    poi_file: str | Path,
    visits_file: str | Path,
    risk_table: Sequence[tuple[float, float, float]] = DEFAULT_RISK_TABLE,
) -> MobilityNetwork:
    """Load and validate a network from the three CSV files."""
    cbgs = _load_cbgs(Path(cbg_file))
    pois = _load_pois(Path(poi_file))
    cbgs = assign_income_groups(cbgs)
    cbgs = assign_risk_weights(cbgs, risk_table)
    cbg_index = {c.id: i for i, c in enumerate(cbgs)}
    poi_index = {p.id: i for i, p in enumerate(pois)}
    visits = _load_visits(Path(visits_file), cbg_index, poi_index, len(pois))
    n_race = len(cbgs[0].racial_fractions) if cbgs else 0
    labels = tuple(f"race_{k+1}" for k in range(n_race))
    return MobilityNetwork(cbgs, pois, visits, race_labels=labels)


def _parse(row: dict, col: str, cast, path: Path, line: int):
    raw = row.get(col)
    if raw is None or raw == "":
        raise NetworkValidationError(f"{path.name} row {line}: missing column {col!r}")
    try:
        return cast(raw)
    except ValueError:
        raise NetworkValidationError(
            f"{path.name} row {line}: column {col!r} has invalid value {raw!r}"
        ) from None


def _load_cbgs(path: Path) -> list[Cbg]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        fields = reader.fieldnames or []
        race_cols = [f for f in fields if f.startswith("race_frac_")]
        required = ["id", "population", "median_income", "median_age"]
        missing = [c for c in required if c not in fields]
        if missing or not race_cols:
            raise NetworkValidationError(
                f"{path.name}: header must contain {required} and race_frac_* "
                f"columns, got {fields}"
            )
        race_cols.sort(key=lambda c: int(c.rsplit("_", 1)[1]))
        cbgs = []
        for line, row in enumerate(reader, start=2):
            fracs = tuple(_parse(row, c, float, path, line) for c in race_cols)
            try:
                cbgs.append(Cbg(
                    id=_parse(row, "id", int, path, line),
                    population=_parse(row, "population", int, path, line),
                    racial_fractions=fracs,
                    median_income=_parse(row, "median_income", float, path, line),
                    median_age=_parse(row, "median_age", float, path, line),
                ))
            except NetworkValidationError as exc:
                raise NetworkValidationError(f"{path.name} row {line}: {exc}") from None
    if not cbgs:
        raise NetworkValidationError(f"{path.name}: no CBG rows")
    return cbgs


def _load_pois(path: Path) -> list[Poi]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if set(reader.fieldnames or []) < {"id", "area_sqft", "dwell_fraction"}:
            raise NetworkValidationError(
                f"{path.name}: header must be id,area_sqft,dwell_fraction"
            )
        pois = []
        for line, row in enumerate(reader, start=2):
            try:
                pois.append(Poi(
                    id=_parse(row, "id", int, path, line),
                    area=_parse(row, "area_sqft", float, path, line),
                    dwell_fraction=_parse(row, "dwell_fraction", float, path, line),
                ))
            except NetworkValidationError as exc:
                raise NetworkValidationError(f"{path.name} row {line}: {exc}") from None
    return pois


def _load_visits(
    path: Path, cbg_index: dict, poi_index: dict, n_pois: int
) -> VisitMatrix:
    hours, cbg_idx, poi_idx, weights = [], [], [], []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if set(reader.fieldnames or []) < {"hour", "cbg_id", "poi_id", "weight"}:
            raise NetworkValidationError(
                f"{path.name}: header must be hour,cbg_id,poi_id,weight"
            )
        for line, row in enumerate(reader, start=2):
            t = _parse(row, "hour", int, path, line)
            cid = _parse(row, "cbg_id", int, path, line)
            pid = _parse(row, "poi_id", int, path, line)
            w = _parse(row, "weight", float, path, line)
            if t < 0:
                raise NetworkValidationError(f"{path.name} row {line}: hour < 0")
            if cid not in cbg_index:
                raise NetworkValidationError(
                    f"{path.name} row {line}: column 'cbg_id' references "
                    f"unknown CBG {cid}"
                )
            if pid not in poi_index:
                raise NetworkValidationError(
                    f"{path.name} row {line}: column 'poi_id' references "
                    f"unknown POI {pid}"
                )
            if not math.isfinite(w) or w < 0:
                raise NetworkValidationError(
                    f"{path.name} row {line}: column 'weight' must be finite "
                    f"and >= 0, got {w}"
                )
            hours.append(t)
            cbg_idx.append(cbg_index[cid])
            poi_idx.append(poi_index[pid])
            weights.append(w)
    horizon = (max(hours) + 1) if hours else 0
    return VisitMatrix(
        horizon, len(cbg_index), n_pois,
        np.array(hours), np.array(cbg_idx), np.array(poi_idx), np.array(weights),
    )


def save_network(network: MobilityNetwork, out_dir: str | Path) -> None:
    """Write cbgs.csv, pois.csv and visits.csv for a network."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    m = network.n_race_groups
    with open(out / "cbgs.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "population", "median_income", "median_age"]
                   + [f"race_frac_{k+1}" for k in range(m)])
        for c in network.cbgs:
            w.writerow([c.id, c.population, repr(float(c.median_income)),
                        repr(float(c.median_age))]
                       + [repr(float(f)) for f in c.racial_fractions])
    with open(out / "pois.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "area_sqft", "dwell_fraction"])
        for p in network.pois:
            w.writerow([p.id, repr(p.area), repr(p.dwell_fraction)])
    with open(out / "visits.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["hour", "cbg_id", "poi_id", "weight"])
        for t, i, j, wt in network.visits.iter_triplets():
            w.writerow([t, network.cbgs[i].id, network.pois[j].id, repr(wt)])


# ---------------------------------------------------------------------------
# Synthetic generator (desk-scale substitute for proprietary visit feeds)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SyntheticSpec:
    """Knobs for the synthetic network generator.

    mixing='segregated' ties racial composition to income rank (majority
    group dominates richer communities); 'uniform' draws compositions
    independently.  income_mobility_gradient > 0 makes lower-income
    communities proportionally more mobile.  retiree_fraction marks that
    share of communities as retirement areas with median ages 65-92.
    """

    n_cbgs: int
    n_pois: int
    n_race_groups: int = 3
    horizon_hours: int = 840
    visits_per_resident_day: float = 1.0
    pois_per_cbg: int = 8
    mixing: str = "segregated"
    income_mobility_gradient: float = 0.5
    age_income_correlation: float = 0.3
    retiree_fraction: float = 0.1
    min_population: int = 600
    max_population: int = 3000

    def __post_init__(self):
        if min(self.n_cbgs, self.n_pois, self.horizon_hours) <= 0:
            raise NetworkValidationError("sizes must be positive")
        if self.n_race_groups < 2:
            raise NetworkValidationError("need at least two racial groups")
        if self.mixing not in ("segregated", "uniform"):
            raise NetworkValidationError("mixing must be 'segregated' or 'uniform'")
        if not 0.0 <= self.retiree_fraction <= 1.0:
            raise NetworkValidationError("retiree_fraction must be in [0, 1]")
        if not 1 <= self.min_population <= self.max_population:
            raise NetworkValidationError("bad population range")


# Hour-of-day activity profile: venues near-idle overnight.
_DIURNAL = np.array([0.1] * 7 + [0.6] + [1.0] * 13 + [0.6, 0.3, 0.1])


def generate_synthetic(spec: SyntheticSpec, seed: int) -> MobilityNetwork:
    """Generate a network; a pure function of (spec, seed)."""
    rng = np.random.default_rng(seed)
    k, p = spec.n_cbgs, spec.n_pois

    populations = rng.integers(spec.min_population, spec.max_population + 1, size=k)
    incomes = np.round(np.exp(rng.normal(np.log(60_000.0), 0.5, size=k)), 2)
    # Income percentile rank drives segregation and mobility gradients.
    pct = np.empty(k)
    pct[np.argsort(incomes, kind="stable")] = (
        (np.arange(k) + 0.5) / k if k > 1 else 0.5
    )

    if spec.mixing == "segregated":
        # fat tails: near-single-group communities are common in real data
        major = np.clip(0.10 + 0.85 * pct + rng.normal(0, 0.08, size=k),
                        0.005, 0.998)
        rest = rng.dirichlet(np.ones(spec.n_race_groups - 1) * 0.5, size=k)
        fractions = np.column_stack([major, rest * (1.0 - major)[:, None]])
    else:
        fractions = rng.dirichlet(np.ones(spec.n_race_groups) * 5.0, size=k)
    fractions /= fractions.sum(axis=1, keepdims=True)

    ages = np.clip(
        38.0
        + 25.0 * spec.age_income_correlation * (pct - 0.5)
        + rng.normal(0, 8.0, size=k),
        18.0, 95.0,
    )
    retirees = rng.random(k) < spec.retiree_fraction
    ages[retirees] = rng.uniform(65.0, 92.0, size=int(retirees.sum()))

    cbgs = [
        Cbg(
            id=i + 1,
            population=int(populations[i]),
            racial_fractions=tuple(float(x) for x in fractions[i]),
            median_income=float(incomes[i]),
            median_age=float(np.round(ages[i], 1)),
        )
        for i in range(k)
    ]
    cbgs = assign_risk_weights(assign_income_groups(cbgs))

    pois = [
        Poi(
            id=j + 1,
            area=float(np.round(np.exp(rng.normal(np.log(1500.0), 0.8)), 1)),
            dwell_fraction=float(np.round(rng.uniform(0.1, 1.0), 3)),
        )
        for j in range(p)
    ]

    # Each community frequents a fixed venue set, sampled by popularity.
    popularity = rng.pareto(2.0, size=p) + 1.0
    n_edges = min(spec.pois_per_cbg, p)
    targets = np.empty((k, n_edges), dtype=np.int64)
    for i in range(k):
        targets[i] = rng.choice(p, size=n_edges, replace=False,
                                p=popularity / popularity.sum())
    shares = popularity[targets]
    shares /= shares.sum(axis=1, keepdims=True)

    groups = np.array([c.income_group for c in cbgs])
    mobility = 1.0 + spec.income_mobility_gradient * (2.5 - groups) / 1.5
    hourly_rate = populations * (spec.visits_per_resident_day / 24.0) * mobility
    edge_rate = hourly_rate[:, None] * shares  # (K, n_edges)

    hours, cbg_idx, poi_idx, weights = [], [], [], []
    flat_cbg = np.repeat(np.arange(k), n_edges)
    flat_poi = targets.ravel()
    flat_rate = edge_rate.ravel()
    for t in range(spec.horizon_hours):
        w = rng.poisson(flat_rate * _DIURNAL[t % 24])
        nz = np.nonzero(w)[0]
        if nz.size == 0:
            continue
        hours.append(np.full(nz.size, t, dtype=np.int64))
        cbg_idx.append(flat_cbg[nz])
        poi_idx.append(flat_poi[nz])
        weights.append(w[nz].astype(np.float64))

    visits = VisitMatrix(
        spec.horizon_hours, k, p,
        np.concatenate(hours) if hours else np.array([], np.int64),
        np.concatenate(cbg_idx) if cbg_idx else np.array([], np.int64),
        np.concatenate(poi_idx) if poi_idx else np.array([], np.int64),
        np.concatenate(weights) if weights else np.array([], np.float64),
    )
    labels = tuple(f"race_{k_+1}" for k_ in range(spec.n_race_groups))
    return MobilityNetwork(cbgs, pois, visits, race_labels=labels)
