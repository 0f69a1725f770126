import math

import numpy as np
import pytest

from hydroschro.bridge import BridgeProblem, solve_hsp
from hydroschro.colehopf import (ColeHopfError, XiEtaPair, akns_hamiltonian, akns_residual,
                                 akns_transform, ch_forward, ch_inverse, heat_flow,
                                 homogeneous_akns, solve_independent_bridge,
                                 solve_static_sinkhorn, torus_heat_kernel)
from hydroschro.fields import Grid, GridError, SpaceTimeField, continuity_residual
from hydroschro.hydro import solve_nde
from hydroschro.models import independent, kmp

from .conftest import cosine


def test_ch_examples():
    xi, eta = ch_forward(2.0, 0.0)
    assert (xi, eta) == (2.0, 1.0)
    rho = np.linspace(0.5, 3, 7)
    xi, eta = ch_forward(rho, np.log(rho))
    assert np.allclose(xi, 1.0) and np.allclose(eta, rho)
    r, H = ch_inverse(*ch_forward(rho, np.sin(rho)))
    assert np.allclose(r, rho) and np.allclose(H, np.sin(rho))
    with pytest.raises(ColeHopfError):
        ch_forward(-1.0, 0.0)


def test_heat_flow_matches_solver():
    # exact propagator vs the trapezoid nonlinear-diffusion solver with tiny steps
    g = Grid(64)
    u0 = cosine(g, 1.0, 0.4)
    exact = heat_flow(u0, [0.02], g)[0]
    traj = solve_nde(independent(), u0, g, 0.02, 400)
    assert np.max(np.abs(exact - traj.rho.values[-1])) <= 1e-6


def test_heat_kernel_normalised_and_symmetric():
    g = Grid(128)
    for t in (1e-3, 0.05, 1.0):
        p = torus_heat_kernel(g.centers - g.centers[0], t, 1.0)
        assert np.sum(p) * g.dx == pytest.approx(1.0, abs=1e-10)
    # oracle: a brute-force sum of Gaussian images
    d = np.linspace(-0.5, 0.5, 11)
    for t in (1e-3, 0.05):
        z = d[:, None] + np.arange(-20, 21)
        images = np.exp(-z**2 / (4 * t)).sum(axis=1) / math.sqrt(4 * math.pi * t)
        assert np.allclose(torus_heat_kernel(d, t, 1.0), images, rtol=1e-10, atol=1e-13)


def test_uniform_bridge_is_trivial():
    g = Grid(32)
    s = solve_independent_bridge(np.ones(32), np.ones(32), g, 0.1, 10)
    assert s.value == pytest.approx(0.0, abs=1e-20)
    assert np.ptp(s.H_star.values) <= 1e-12


def test_oracle_marginals_and_continuity():
    g = Grid(64)
    s = solve_independent_bridge(cosine(g), cosine(g, sign=-1), g, 0.1, 50)
    assert s.converged
    assert max(s.diagnostics["marginal_errors"]) <= 1e-10
    # discrete current is exact for the semi-discrete heat flows; the trapezoid
    # time stencil leaves an O(dt^2) defect
    d1 = continuity_residual(s.rho_star, s.j_star)
    s2 = solve_independent_bridge(cosine(g), cosine(g, sign=-1), g, 0.1, 100)
    d2 = continuity_residual(s2.rho_star, s2.j_star)
    assert d1 / d2 == pytest.approx(4.0, rel=0.05)


def test_oracle_agrees_with_fixed_point_at_small_size():
    g = Grid(32)
    mu0, mu1 = cosine(g), cosine(g, sign=-1)
    dyn = solve_hsp(BridgeProblem(independent(), g, 0.1, 100, mu0, mu1))
    ch = solve_independent_bridge(mu0, mu1, g, 0.1, 100)
    assert np.max(np.abs(dyn.rho_star.values - ch.rho_star.values)) <= 1e-3
    assert dyn.value == pytest.approx(ch.value, rel=1e-3)


def test_sinkhorn_uniform_and_large_time():
    g = Grid(32)
    plan = solve_static_sinkhorn(np.ones(32), np.ones(32), g, 0.05)
    assert plan.converged
    assert np.ptp(plan.a + plan.b[::-1]) <= 1e-8 or np.ptp(plan.a) <= 1e-8
    p = torus_heat_kernel(np.subtract.outer(g.centers, g.centers), 0.05, 1.0)
    assert np.allclose(plan.plan, p * g.dx**2, rtol=1e-8)
    big = solve_static_sinkhorn(np.ones(32), np.ones(32), g, 5.0)
    assert abs(big.entropy) <= 1e-10
    assert np.allclose(big.plan, g.dx**2, rtol=1e-8)


def test_sinkhorn_value_matches_entropic_oracle():
    # identical continuum problem: static value equals the continuous-spectrum
    # Cole-Hopf potential value
    g = Grid(64)
    mu0, mu1 = cosine(g), cosine(g, sign=-1)
    plan = solve_static_sinkhorn(mu0, mu1, g, 0.1, tol=1e-11)
    ch = solve_independent_bridge(mu0, mu1, g, 0.1, 10, spectrum="continuous")
    assert plan.value == pytest.approx(ch.diagnostics["value_entropic"], rel=1e-8)
    assert np.allclose(plan.plan.sum(axis=1), mu0 * g.dx, atol=1e-11)


def test_sinkhorn_plan_to_csv(tmp_path):
    g = Grid(16)
    plan = solve_static_sinkhorn(cosine(g), cosine(g, sign=-1), g, 0.1)
    plan.to_csv(tmp_path)
    back = np.loadtxt(tmp_path / "plan.csv", delimiter=",")
    assert np.array_equal(back, plan.plan)


def test_sinkhorn_rejects_line_grid():
    with pytest.raises(GridError):
        solve_static_sinkhorn(np.ones(16), np.ones(16), Grid(16).line(), 0.1)


# -- AKNS -----------------------------------------------------------------------

def test_akns_needs_line_grid():
    g = Grid(16)
    f = SpaceTimeField(g, 0.1, np.ones((3, 16)))
    with pytest.raises(GridError):
        akns_transform(kmp(), f, f)


def test_akns_constant_pairs():
    g = Grid(32).line()
    rho = SpaceTimeField(g, 0.1, np.full((5, 32), 1.3))
    H = SpaceTimeField(g, 0.1, np.full((5, 32), 0.2))
    for model in (kmp(), independent()):
        pair = akns_transform(model, rho, H)
        assert np.ptp(pair.xi.values) <= 1e-14 and np.ptp(pair.eta.values) <= 1e-14


def test_akns_flat_tail_check():
    g = Grid(32).line()
    rho = SpaceTimeField(g, 0.1, np.tile(1 + 0.1 * np.linspace(0, 1, 32), (3, 1)))
    with pytest.raises(ColeHopfError):
        akns_transform(kmp(), rho, rho)


def test_akns_residual_trivial_and_homogeneous():
    g = Grid(16).line()
    z = SpaceTimeField(g, 1.0, np.zeros((11, 16)))
    assert akns_residual(XiEtaPair(z, z, "akns")) == (0.0, 0.0)
    errs = []
    for N in (100, 200):
        pair = homogeneous_akns(0.7, 0.4, g, 0.5, N)
        errs.append(max(akns_residual(pair)))
    assert errs[0] <= 1e-4
    assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.05)


def test_akns_hamiltonian_constant_fields():
    g = Grid(16).line()
    pair = homogeneous_akns(0.7, 0.4, g, 0.5, 10)
    K = akns_hamiltonian(pair)
    assert np.allclose(K, -(0.7 * 0.4) ** 2 * g.length)


def _kmp_window(n, N, L=16.0, T=0.1):
    g = Grid(n, L)
    x = g.centers
    gauss = lambda s: np.exp(-(x - L / 2) ** 2 / (2 * s * s))
    mu0 = 1 + 0.3 * gauss(0.6)
    mu1 = 1 + 0.24 * gauss(0.75)
    mu1 *= mu0.sum() / mu1.sum()
    s = solve_hsp(BridgeProblem(kmp(), g, T, N, mu0, mu1))
    lg = g.line()
    return akns_transform(kmp(), SpaceTimeField(lg, T, s.rho_star.values),
                          SpaceTimeField(lg, T, s.H_star.values))


def test_akns_residual_of_kmp_bridge_decreases():
    r1 = _kmp_window(64, 10)
    r2 = _kmp_window(128, 20)
    a, b = akns_residual(r1), akns_residual(r2)
    assert b[0] < a[0] and b[1] < a[1]
    K1, K2 = akns_hamiltonian(r1), akns_hamiltonian(r2)
    assert np.ptp(K2) < np.ptp(K1)
