import math

import numpy as np
import pytest

from hydroschro.bridge import BridgeProblem, solve_hsp
from hydroschro.fields import Grid, SpaceTimeField
from hydroschro.micro import (DriveSpec, MicroError, coarse, driven_bridge_experiment, l1_distance,
                              lln_sweep, make_rng, mean_density, run_replicas, sample_initial,
                              simulate, tagged_diffusion, write_report)
from hydroschro.models import independent

from .conftest import cosine

PROFILE = lambda x: 1 + 0.5 * np.cos(2 * np.pi * x)


def test_single_walker_jump_count():
    # one unit-rate walker per direction over microscopic time ell^2 T:
    # jump count is Poisson with mean 2 ell^2 T
    ell, T = 32, 0.5
    counts = [simulate("independent_rw", ell, 0.0, T, occupation0=np.eye(1, ell, 3)[0],
                       seed=5, replica=r).jumps for r in range(40)]
    mean = 2 * ell**2 * T
    assert abs(np.mean(counts) - mean) <= 4 * math.sqrt(mean / 40)


def test_undriven_current_is_symmetric():
    recs = run_replicas(8, 11, model_kind="independent_rw", ell=32, rho0=2.0, t_final=0.2)
    cur = np.mean([r.time_averaged_current() for r in recs], axis=0)
    # per-edge std of the time-averaged current ~ sqrt(2 rho ell^2 T) * dx / T / sqrt(reps)
    sd = math.sqrt(2 * 2.0 * 32**2 * 0.2) / 32 / 0.2 / math.sqrt(8)
    assert np.max(np.abs(cur)) <= 5 * sd


@pytest.mark.parametrize("kind", ["independent_rw", "zero_range", "ssep", "stirring"])
def test_continuity_bookkeeping_exact(kind):
    rho = 0.4 if kind in ("ssep", "stirring") else PROFILE
    r = simulate(kind, 16, rho, 0.1, seed=1)
    assert r.continuity_defect() == 0
    assert np.all(r.occupation.sum(axis=1) == r.n_particles)


def test_stirring_and_ssep_share_density_and_current():
    a = simulate("ssep", 64, 0.5, 0.05, seed=3)
    b = simulate("stirring", 64, 0.5, 0.05, seed=3)
    assert np.array_equal(a.occupation, b.occupation)
    assert np.array_equal(a.counts, b.counts)
    assert not np.array_equal(a.displacement, b.displacement)


def test_zero_range_linear_equals_independent():
    a = simulate("zero_range", 64, PROFILE, 0.05, seed=1)
    b = simulate("independent_rw", 64, PROFILE, 0.05, seed=1)
    assert np.array_equal(a.occupation, b.occupation)
    assert np.array_equal(a.counts, b.counts)


def test_reproducible_and_replica_order_independent(monkeypatch):
    a = run_replicas(3, 9, model_kind="zero_range", ell=32, rho0=PROFILE, t_final=0.02)
    monkeypatch.setenv("HYDROSCHRO_THREADS", "3")
    b = run_replicas(3, 9, model_kind="zero_range", ell=32, rho0=PROFILE, t_final=0.02)
    for x, y in zip(a, b):
        assert np.array_equal(x.occupation, y.occupation)
        assert np.array_equal(x.counts, y.counts)
    c = simulate("zero_range", 32, PROFILE, 0.02, seed=9, replica=2)
    assert np.array_equal(c.occupation, a[2].occupation)


def test_make_rng_streams_differ():
    assert make_rng(1, 0).random() != make_rng(1, 1).random()
    assert make_rng(1, 0).random() == make_rng(1, 0).random()


def test_initial_sampling_means():
    rng = np.random.default_rng(0)
    occ = sample_initial(rng, "ssep", np.full(20000, 0.3))
    assert abs(occ.mean() - 0.3) <= 0.02
    # g(k) = 1 (constant rate): the invariant marginal is geometric with mean rho
    g_tab = np.concatenate([[0.0], np.ones(200)])
    occ = sample_initial(rng, "zero_range", np.full(20000, 1.5), g_tab)
    assert abs(occ.mean() - 1.5) <= 0.06
    assert abs(occ.var() - 1.5 * 2.5) <= 0.3
    with pytest.raises(MicroError):
        sample_initial(rng, "ssep", np.full(4, 1.2))


def test_bad_inputs():
    with pytest.raises(MicroError):
        simulate("inclusion", 16, 1.0, 0.1)
    with pytest.raises(MicroError):
        simulate("zero_range", 16, 1.0, 0.1, g=lambda k: -k)
    with pytest.raises(MicroError):
        coarse(np.ones(10), 3)


def test_drive_on_sites_interpolates():
    g = Grid(8)
    H = SpaceTimeField(g, 1.0, np.tile(np.arange(8.0), (2, 1)))
    sites = DriveSpec(H).on_sites(8)
    assert np.allclose(sites, np.arange(8.0))


def test_drive_pushes_particles():
    # particles drift up the gradient of H
    g = Grid(16)
    H = SpaceTimeField(g, 0.1, np.tile(0.5 * np.sin(2 * np.pi * g.centers), (3, 1)))
    recs = run_replicas(8, 2, model_kind="independent_rw", ell=32, rho0=1.0, t_final=0.1,
                        drive=DriveSpec(H))
    cur = np.mean([r.time_averaged_current() for r in recs], axis=0)
    # the field gradient is largest at x = 0 and most negative at x = 1/2
    assert cur[:4].mean() > 0 > cur[14:18].mean()


def test_lln_sweep_trend():
    rows = lln_sweep([16, 64], PROFILE, 0.05, 8, 3, independent(), n_bins=8)
    assert rows[1]["l1_per_replica"] < rows[0]["l1_per_replica"]
    assert rows[1]["l1_mean_density"] < rows[0]["l1_mean_density"]


def test_driven_bridge_refuses_ssep_and_mismatch():
    g = Grid(16)
    s = solve_hsp(BridgeProblem(independent(), g, 0.1, 10, np.ones(16), np.ones(16)))
    with pytest.raises(MicroError):
        driven_bridge_experiment("ssep", 32, s, 1, 0)
    with pytest.raises(MicroError):
        driven_bridge_experiment("stirring", 32, s, 1, 0)


def test_equilibrium_driven_bridge_noise_shrinks():
    g = Grid(16)
    s = solve_hsp(BridgeProblem(independent(), g, 0.05, 10, np.ones(16), np.ones(16)))
    small = driven_bridge_experiment("independent_rw", 32, s, 8, 4, n_bins=8)
    big = driven_bridge_experiment("independent_rw", 256, s, 8, 4, n_bins=8)
    assert big["metrics"]["endpoint_l1"] < small["metrics"]["endpoint_l1"]
    assert big["metrics"]["continuity_defect"] == 0


def test_tagged_independent_walk():
    est = tagged_diffusion("independent_rw", 64, 1.0, 20.0, 8, 1)
    assert est.ci[0] <= 1.0 <= est.ci[1]
    assert not est.subdiffusive


def test_report_writer(tmp_path):
    write_report(tmp_path / "r.json", {"a": np.arange(3), "b": np.float64(1.5)})
    assert '"b": 1.5' in (tmp_path / "r.json").read_text()


def test_l1_and_mean_density():
    assert l1_distance(np.ones(4), np.zeros(4), 2.0) == pytest.approx(2.0)
    recs = run_replicas(2, 0, model_kind="ssep", ell=16, rho0=0.5, t_final=0.01)
    md = mean_density(recs, 4)
    assert md.shape == (11, 4)
