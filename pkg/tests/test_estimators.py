import numpy as np
import pytest
from sklearn.base import clone

from hydroschro.estimators import (BridgeEstimator, CurrentEstimator, StaticSinkhornEstimator,
                                   StationaryCurrentEstimator, TaggedDiffusionEstimator)
from hydroschro.fields import Grid

from .conftest import cosine


def test_params_round_trip_and_clone():
    est = BridgeEstimator(model="kmp", n_cells=16, n_steps=10)
    params = est.get_params()
    assert params["model"] == "kmp" and params["n_cells"] == 16
    c = clone(est).set_params(n_steps=20)
    assert c.n_steps == 20 and est.n_steps == 10


def test_bridge_estimator_fit():
    g = Grid(16)
    est = BridgeEstimator(n_cells=16, n_steps=10).fit(cosine(g), cosine(g, sign=-1))
    assert est.converged_ and est.value_ > 0
    assert est.rho_.shape == (11, 16)
    assert est.score() == -est.value_


def test_current_estimators_agree_for_independent():
    est = CurrentEstimator(n_cells=16, n_steps=8, t_final=0.5).fit(1.0)
    u = StationaryCurrentEstimator(n_cells=16).fit(1.0)
    assert est.value_ == pytest.approx(u.value_, rel=1e-2)
    assert u.value_ == pytest.approx(0.25, rel=1e-8)


def test_sinkhorn_estimator():
    g = Grid(16)
    est = StaticSinkhornEstimator(n_cells=16).fit(cosine(g), cosine(g, sign=-1))
    assert est.plan_.converged and est.value_ > 0


def test_tagged_estimator():
    est = TaggedDiffusionEstimator(model_kind="independent_rw", ell=64, T_msd=20.0, replicas=8, seed=1).fit(1.0)
    assert est.ci_[0] <= 1.0 <= est.ci_[1]
