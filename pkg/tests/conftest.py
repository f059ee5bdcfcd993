import numpy as np
import pytest

from fairvax import (
    Cbg,
    DiseaseParams,
    MobilityNetwork,
    Poi,
    SyntheticSpec,
    VisitMatrix,
    assign_income_groups,
    assign_risk_weights,
    generate_synthetic,
)


def build_network(
    pops,
    alphas=None,
    incomes=None,
    ages=None,
    pois=None,
    visits=(),
    horizon=24,
):
    """Hand-build a small validated network.

    visits are (hour, cbg_position, poi_position, weight) triplets with
    0-based positions; ids are position + 1.
    """
    k = len(pops)
    if alphas is None:
        alphas = [(1.0, 0.0)] * k
    if incomes is None:
        incomes = [10_000.0 * (i + 1) for i in range(k)]
    if ages is None:
        ages = [40.0] * k
    cbgs = [
        Cbg(id=i + 1, population=int(pops[i]),
            racial_fractions=tuple(alphas[i]),
            median_income=float(incomes[i]), median_age=float(ages[i]))
        for i in range(k)
    ]
    cbgs = assign_risk_weights(assign_income_groups(cbgs))
    if pois is None:
        pois = [Poi(id=1, area=1000.0, dwell_fraction=0.5)]
    visits = list(visits)
    vm = VisitMatrix(
        horizon, k, len(pois),
        np.array([v[0] for v in visits], dtype=np.int64),
        np.array([v[1] for v in visits], dtype=np.int64),
        np.array([v[2] for v in visits], dtype=np.int64),
        np.array([v[3] for v in visits], dtype=np.float64),
    )
    return MobilityNetwork(cbgs, pois, vm)


@pytest.fixture
def isolated_net():
    """Three communities, no venue visits: home transmission only."""
    return build_network(pops=[1000, 2000, 500], horizon=48)


@pytest.fixture
def shared_poi_net():
    """Two communities meeting at one venue every hour."""
    visits = [(t, 0, 0, 20.0) for t in range(48)] + \
             [(t, 1, 0, 20.0) for t in range(48)]
    return build_network(pops=[1000, 1000], visits=visits, horizon=48)


@pytest.fixture(scope="session")
def small_synthetic():
    spec = SyntheticSpec(n_cbgs=20, n_pois=40, horizon_hours=96)
    return generate_synthetic(spec, seed=11)


@pytest.fixture
def hot_params():
    """Parameters that spread briskly on desk-scale fixtures."""
    return DiseaseParams(beta_home=0.02, psi=300.0, p0=0.01)
