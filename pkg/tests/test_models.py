import json
import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hydroschro.fields import Grid
from hydroschro.models import (BUILTIN_NAMES, DomainError, ModelError, ZeroRangeSpec, builtin,
                               custom, einstein_residual, f_second, free_energy_difference,
                               independent, kmp, load_json, ssep, zero_range)

RHO = np.linspace(0.05, 10.0, 200)


def samples(model):
    lo, hi = model.rho_domain
    if math.isfinite(hi):
        return np.linspace(lo + 0.01, hi - 0.01, 99)
    return RHO


def test_independent_coefficients():
    m = builtin("independent")
    assert np.allclose(m.D_h(RHO), 1.0)
    assert np.allclose(m.sigma(RHO), RHO)
    assert np.allclose(m.D_s(RHO), 1.0)
    # f = rho log rho up to an affine term; compare second differences
    f_exact = RHO * np.log(RHO)
    d2 = np.diff(m.f(RHO), 2)
    assert np.allclose(d2, np.diff(f_exact, 2), atol=1e-12)


def test_zero_range_identity_equals_independent():
    zr, ind = builtin("zero_range"), independent()
    for name in ("D_h", "sigma", "D_s", "f", "f_prime"):
        assert np.array_equal(getattr(zr, name)(RHO), getattr(ind, name)(RHO)), name


def test_kmp_coefficients():
    m = kmp()
    assert np.allclose(m.sigma(RHO), RHO**2)
    assert np.allclose(m.D_h(RHO), 1.0)
    assert np.allclose(f_second(m, RHO), 1 / RHO**2, rtol=1e-8)
    assert m.D_s is None


@pytest.mark.parametrize("name", BUILTIN_NAMES)
def test_einstein_relation_builtins(name):
    m = builtin(name)
    assert einstein_residual(m, samples(m)) <= 1e-8


def test_einstein_independent_tight():
    assert einstein_residual(independent(), np.linspace(0.01, 10, 300)) <= 1e-10


@settings(max_examples=25, deadline=None)
@given(st.floats(0.2, 5.0), st.floats(0.3, 3.0))
def test_einstein_zero_range_power(c, p):
    m = zero_range(ZeroRangeSpec.from_power(c, p))
    assert einstein_residual(m, np.linspace(0.05, 10, 50)) <= 1e-8


def test_einstein_detects_doubled_diffusion():
    m = independent()
    bad = replace(m, D_h=lambda r: 2.0 * np.ones_like(np.asarray(r, dtype=float)))
    rho = np.linspace(0.1, 5, 20)
    assert einstein_residual(bad, rho) == pytest.approx(np.max(np.abs(f_second(m, rho) * rho)),
                                                        rel=1e-8)


def test_einstein_samples_outside_domain():
    with pytest.raises(DomainError):
        einstein_residual(builtin("ssep"), [0.5, 1.0])


def test_free_energy_examples():
    g = Grid(32)
    assert free_energy_difference(independent(), np.full(32, 1.3), 1.3, g) == pytest.approx(0, abs=1e-14)
    val = free_energy_difference(independent(), np.full(32, 2.0), 1.0, g)
    assert val == pytest.approx(2 * math.log(2) - 1, rel=1e-12)


@pytest.mark.parametrize("name", BUILTIN_NAMES)
def test_free_energy_positive(name):
    m = builtin(name)
    g = Grid(32)
    base = 0.5 if name in ("ssep", "stirring") else 1.0
    rho0 = base + 0.2 * np.sin(2 * np.pi * g.centers)
    assert free_energy_difference(m, rho0, base, g) > 0


def test_zero_range_spec_validation():
    with pytest.raises(ModelError):
        ZeroRangeSpec.from_power(-1.0, 1.0)
    with pytest.raises(ModelError):
        zero_range(ZeroRangeSpec(lambda r: 1.0 + np.asarray(r)))
    with pytest.raises(ModelError):
        zero_range(ZeroRangeSpec(lambda r: -np.asarray(r, dtype=float)))


def test_generic_zero_range_spec():
    # phi(rho) = rho / (1 + rho): bounded rates, no closed-form power
    spec = ZeroRangeSpec(lambda r: np.asarray(r, float) / (1 + np.asarray(r, float)))
    m = zero_range(spec)
    rho = np.linspace(0.1, 5, 30)
    assert np.allclose(m.D_s(rho), 1 / (1 + rho))
    assert einstein_residual(m, rho) <= 1e-8


def test_ssep_without_table_has_no_self_diffusion():
    assert ssep().D_s is None
    m = ssep({"rho": [0.1, 0.5, 0.9], "value": [0.0, 0.0, 0.0]})
    assert m.has_self_diffusion


def test_custom_model_round_trip(tmp_path):
    doc = {"name": "quad", "D_h": 1.0, "sigma": {"family": "power", "c": 1.0, "p": 2.0}}
    (tmp_path / "m.json").write_text(json.dumps(doc))
    m = load_json(tmp_path / "m.json")
    k = kmp()
    rho = np.linspace(0.3, 3, 9)
    assert np.allclose(m.sigma(rho), k.sigma(rho))
    assert np.allclose(np.diff(m.f_prime(rho)), np.diff(k.f_prime(rho)), atol=1e-8)
    with pytest.raises(ModelError):
        custom({"D_h": 1.0})


def test_unknown_builtin():
    with pytest.raises(ModelError):
        builtin("inclusion")


def test_f_prime_inverse():
    for m in (independent(), kmp(), builtin("ssep")):
        r = samples(m)[::10]
        assert np.allclose(m.f_prime_inverse(m.f_prime(r)), r, rtol=1e-10)
