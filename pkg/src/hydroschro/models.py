"""Transport-coefficient sets for the lattice gases handled by the package.

A :class:`TransportModel` bundles the hydrodynamic diffusion ``D_h``, the
mobility ``sigma``, the self-diffusion ``D_s`` (when known in closed form)
and the free energy ``f`` of the underlying Gibbs measure.  Every builtin
satisfies the Einstein relation ``D_h = f'' sigma``; :func:`einstein_residual`
checks it numerically.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np
from scipy import integrate, interpolate, optimize
from scipy.special import xlogy

from .fields import Grid

Coefficient = Callable[[np.ndarray], np.ndarray]


class ModelError(ValueError):
    pass


class DomainError(ModelError):
    pass


def _const(c):
    return lambda rho: np.full_like(np.asarray(rho, dtype=float), c)


def _numeric_derivative(fun: Coefficient, h: float = 1e-6) -> Coefficient:
    def d(rho):
        rho = np.asarray(rho, dtype=float)
        step = h * np.maximum(1.0, np.abs(rho))
        return (fun(rho + step) - fun(rho - step)) / (2 * step)
    return d


@dataclass(frozen=True)
class TransportModel:
    """Immutable coefficient set.

    ``f`` and ``f_prime`` are normalised so that ``f(m_ref) = 0`` and
    ``f'(m_ref) = 0``; only differences of ``f`` and gradients of ``f'``
    ever enter the functionals.
    """

    name: str
    D_h: Coefficient
    sigma: Coefficient
    f: Coefficient
    f_prime: Coefficient
    D_s: Coefficient | None = None
    sigma_prime: Coefficient | None = None
    D_h_prime: Coefficient | None = None
    rho_domain: tuple[float, float] = (0.0, math.inf)
    m_ref: float = 1.0
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.sigma_prime is None:
            object.__setattr__(self, "sigma_prime", _numeric_derivative(self.sigma))
        if self.D_h_prime is None:
            object.__setattr__(self, "D_h_prime", _numeric_derivative(self.D_h))

    @property
    def has_self_diffusion(self) -> bool:
        return self.D_s is not None

    def check_domain(self, rho, what: str = "density", *, open_: bool = False):
        rho = np.asarray(rho, dtype=float)
        lo, hi = self.rho_domain
        if not np.all(np.isfinite(rho)):
            raise DomainError(f"{what} has non-finite entries")
        bad = (rho <= lo) | (rho >= hi) if open_ else (rho < lo) | (rho > hi)
        if np.any(bad):
            raise DomainError(
                f"{what} leaves the domain {self.rho_domain} of model {self.name!r}: "
                f"range [{rho.min():.6g}, {rho.max():.6g}]"
            )

    def f_prime_inverse(self, h):
        """Invert the strictly increasing ``f'`` pointwise (bracketing)."""
        h = np.atleast_1d(np.asarray(h, dtype=float))
        lo, hi = self.rho_domain
        lo_b = lo + 1e-300 if lo == 0 else lo
        hi_b = hi if math.isfinite(hi) else max(10.0, 10 * self.m_ref)
        out = np.empty_like(h)
        for i, target in enumerate(h.ravel()):
            g = lambda r: float(self.f_prime(np.array(r))) - target
            b = hi_b
            while math.isinf(hi) and g(b) < 0:
                b *= 2.0
            out.ravel()[i] = optimize.brentq(g, lo_b, b - (0 if math.isinf(hi) else 1e-15),
                                             xtol=1e-15, rtol=4 * np.finfo(float).eps)
        return out


def _normalised(f_raw, fp_raw, m_ref):
    f0 = float(np.ravel(f_raw(np.array(m_ref)))[0])
    fp0 = float(np.ravel(fp_raw(np.array(m_ref)))[0])
    f = lambda rho: f_raw(np.asarray(rho, dtype=float)) - f0 - fp0 * (np.asarray(rho) - m_ref)
    fp = lambda rho: fp_raw(np.asarray(rho, dtype=float)) - fp0
    return f, fp


def independent() -> TransportModel:
    return TransportModel(
        name="independent",
        D_h=_const(1.0),
        sigma=lambda r: np.asarray(r, dtype=float) * 1.0,
        D_s=_const(1.0),
        f=lambda r: xlogy(r, r) - np.asarray(r, dtype=float) + 1.0,
        f_prime=lambda r: np.log(np.asarray(r, dtype=float)),
        sigma_prime=_const(1.0),
        D_h_prime=_const(0.0),
        rho_domain=(0.0, math.inf),
        metadata={"source": "paper"},
    )


def _exclusion_f(r):
    r = np.asarray(r, dtype=float)
    return xlogy(r, r) + xlogy(1.0 - r, 1.0 - r)


def _exclusion(name: str, D_s, source: str, m_ref: float = 0.5) -> TransportModel:
    f, fp = _normalised(_exclusion_f, lambda r: np.log(r) - np.log1p(-r), m_ref)
    return TransportModel(
        name=name,
        D_h=_const(1.0),
        sigma=lambda r: np.asarray(r, dtype=float) * (1.0 - np.asarray(r, dtype=float)),
        D_s=D_s,
        f=f,
        f_prime=fp,
        sigma_prime=lambda r: 1.0 - 2.0 * np.asarray(r, dtype=float),
        D_h_prime=_const(0.0),
        rho_domain=(0.0, 1.0),
        m_ref=m_ref,
        metadata={"source": source},
    )


def stirring() -> TransportModel:
    return _exclusion("stirring", _const(1.0), "paper")


def ssep(D_s_table: dict | None = None) -> TransportModel:
    """Nearest-neighbour exclusion.

    ``D_s`` has no closed form; pass ``{"rho": [...], "value": [...]}`` to
    attach a tabulated one.  Without it, drift construction is refused.
    """
    D_s = _table(D_s_table) if D_s_table else None
    return _exclusion("ssep", D_s, "literature")


def kmp() -> TransportModel:
    f, fp = _normalised(lambda r: -np.log(np.asarray(r, dtype=float)),
                        lambda r: -1.0 / np.asarray(r, dtype=float), 1.0)
    return TransportModel(
        name="kmp",
        D_h=_const(1.0),
        sigma=lambda r: np.asarray(r, dtype=float) ** 2,
        D_s=None,
        f=f,
        f_prime=fp,
        sigma_prime=lambda r: 2.0 * np.asarray(r, dtype=float),
        D_h_prime=_const(0.0),
        rho_domain=(0.0, math.inf),
        metadata={"source": "paper"},
    )


@dataclass(frozen=True)
class ZeroRangeSpec:
    """Zero-range process described by its fugacity function ``phi``."""

    phi: Coefficient
    phi_prime: Coefficient | None = None
    label: str = "custom"
    power: tuple[float, float] | None = None  # (c, p) for phi = c * rho**p

    @classmethod
    def from_power(cls, c: float = 1.0, p: float = 1.0) -> "ZeroRangeSpec":
        if c <= 0 or p <= 0:
            raise ModelError("phi = c rho^p needs c > 0 and p > 0 to be increasing")
        if p == 1.0:
            phi = lambda r: c * np.asarray(r, dtype=float)
            dphi = _const(c)
        else:
            phi = lambda r: c * np.asarray(r, dtype=float) ** p
            dphi = lambda r: c * p * np.asarray(r, dtype=float) ** (p - 1)
        label = "identity" if (c, p) == (1.0, 1.0) else f"{c:g}*rho^{p:g}"
        return cls(phi, dphi, label, (float(c), float(p)))

    def derivative(self) -> Coefficient:
        return self.phi_prime or _numeric_derivative(self.phi)

    def validate(self, rho_max: float = 10.0):
        grid = np.linspace(0.0, rho_max, 401)
        vals = self.phi(grid)
        if abs(float(vals[0])) > 1e-12:
            raise ModelError("phi(0) must vanish")
        if np.any(np.diff(vals) <= 0):
            raise ModelError("phi must be strictly increasing")


def zero_range(spec: ZeroRangeSpec | None = None) -> TransportModel:
    """Coefficients ``D_h = phi'``, ``sigma = phi``, ``D_s = phi/rho``."""
    spec = spec or ZeroRangeSpec.from_power()
    spec.validate()
    phi, dphi = spec.phi, spec.derivative()

    if spec.power is not None:
        c, p = spec.power
        if p == 1.0:
            D_s = _const(c)
            if c == 1.0:
                f_raw = lambda r: xlogy(r, r) - np.asarray(r, dtype=float) + 1.0
                fp_raw = lambda r: np.log(np.asarray(r, dtype=float))
            else:
                f_raw = lambda r: xlogy(r, c * np.asarray(r, dtype=float)) - np.asarray(r, dtype=float)
                fp_raw = lambda r: np.log(c * np.asarray(r, dtype=float))
        else:
            D_s = lambda r: c * np.asarray(r, dtype=float) ** (p - 1)
            # f' = log(c) + p log(rho); f = rho (log c + p log rho - p)
            f_raw = lambda r: (xlogy(np.asarray(r, dtype=float) * p, r)
                               + np.asarray(r, dtype=float) * (math.log(c) - p))
            fp_raw = lambda r: math.log(c) + p * np.log(np.asarray(r, dtype=float))
        sigma_prime = dphi
        if p == 1.0:
            D_h_prime = _const(0.0)
        elif p == 2.0:
            D_h_prime = _const(2.0 * c)
        else:
            D_h_prime = lambda r: c * p * (p - 1) * np.asarray(r, dtype=float) ** (p - 2)
    else:
        def D_s(r):
            r = np.asarray(r, dtype=float)
            safe = np.where(r > 0, r, 1.0)
            return np.where(r > 0, phi(safe) / safe, dphi(np.zeros_like(r)))

        fp_raw = lambda r: np.log(phi(np.asarray(r, dtype=float)))

        def f_raw(r):
            r = np.atleast_1d(np.asarray(r, dtype=float))
            out = np.array([integrate.quad(lambda s: math.log(float(phi(np.array(s)))), 1.0, x,
                                           limit=200)[0] if x > 0 else
                            -integrate.quad(lambda s: math.log(float(phi(np.array(s)))), 0.0, 1.0,
                                            limit=200)[0]
                            for x in r.ravel()]).reshape(r.shape)
            return out
        sigma_prime = dphi
        D_h_prime = None

    if spec.label == "identity":
        # coefficient-set equality with the independent model
        base = independent()
        return replace(base, name="zero_range", metadata={"source": "paper", "phi": "identity"})
    f, fp = _normalised(f_raw, fp_raw, 1.0)
    return TransportModel(
        name="zero_range",
        D_h=dphi,
        sigma=phi,
        D_s=D_s,
        f=f,
        f_prime=fp,
        sigma_prime=sigma_prime,
        D_h_prime=D_h_prime,
        rho_domain=(0.0, math.inf),
        metadata={"source": "paper", "phi": spec.label},
    )


# -- custom models -----------------------------------------------------------

def _table(spec: dict) -> Coefficient:
    rho = np.asarray(spec["rho"], dtype=float)
    val = np.asarray(spec["value"], dtype=float)
    if rho.ndim != 1 or rho.shape != val.shape or np.any(np.diff(rho) <= 0):
        raise ModelError("table needs increasing 'rho' and matching 'value'")
    spline = interpolate.CubicSpline(rho, val, bc_type="natural")

    def fun(r):
        r = np.asarray(r, dtype=float)
        if np.any((r < rho[0] - 1e-12) | (r > rho[-1] + 1e-12)):
            raise DomainError("table evaluated outside its rho range")
        return spline(r)
    fun.derivative = lambda r: spline(np.asarray(r, dtype=float), 1)
    return fun


def _family(spec) -> Coefficient:
    if isinstance(spec, (int, float)):
        return _const(float(spec))
    if "rho" in spec:
        return _table(spec)
    kind = spec.get("family")
    if kind == "power":
        a, p = float(spec.get("a", 1.0)), float(spec["p"])
        fun = lambda r: a * np.asarray(r, dtype=float) ** p
        fun.derivative = lambda r: a * p * np.asarray(r, dtype=float) ** (p - 1)
        return fun
    if kind in ("polynomial-degree-2", "poly2"):
        c0, c1, c2 = (float(c) for c in spec["coefficients"])
        fun = lambda r: c0 + c1 * np.asarray(r, dtype=float) + c2 * np.asarray(r, dtype=float) ** 2
        fun.derivative = lambda r: c1 + 2 * c2 * np.asarray(r, dtype=float)
        return fun
    raise ModelError(f"unknown coefficient family {kind!r}")


def custom(doc: dict) -> TransportModel:
    """Build a model from a JSON-style document.

    Keys: ``name``, ``D_h``, ``sigma`` (required), ``D_s``, ``f_second``
    (optional, defaults to ``D_h / sigma``), ``rho_domain``, ``m_ref``.
    Each coefficient is a number, a ``{"rho": [...], "value": [...]}`` table
    or ``{"family": "power" | "polynomial-degree-2", ...}``.
    """
    try:
        D_h = _family(doc["D_h"])
        sigma = _family(doc["sigma"])
    except KeyError as exc:
        raise ModelError(f"custom model is missing {exc}") from None
    D_s = _family(doc["D_s"]) if doc.get("D_s") is not None else None
    lo, hi = (float(v) for v in doc.get("rho_domain", [0.0, math.inf]))
    m_ref = float(doc.get("m_ref", 1.0 if hi > 1 else 0.5 * (lo + hi)))
    f2 = _family(doc["f_second"]) if "f_second" in doc else (lambda r: D_h(r) / sigma(r))

    def fp_raw(r):
        r = np.atleast_1d(np.asarray(r, dtype=float))
        return np.array([integrate.quad(lambda s: float(f2(np.array(s))), m_ref, x, limit=200)[0]
                         for x in r.ravel()]).reshape(r.shape)

    def f_raw(r):
        r = np.atleast_1d(np.asarray(r, dtype=float))
        return np.array([integrate.quad(lambda s: float(fp_raw(np.array(s))[0]), m_ref, x,
                                        limit=200)[0]
                         for x in r.ravel()]).reshape(r.shape)

    return TransportModel(
        name=str(doc.get("name", "custom")),
        D_h=D_h,
        sigma=sigma,
        D_s=D_s,
        f=f_raw,
        f_prime=fp_raw,
        sigma_prime=getattr(sigma, "derivative", None),
        D_h_prime=getattr(D_h, "derivative", None),
        rho_domain=(lo, hi),
        m_ref=m_ref,
        metadata={"source": "custom"},
    )


def load_json(path) -> TransportModel:
    return custom(json.loads(Path(path).read_text()))


def builtin(name: str, **kwargs) -> TransportModel:
    """Look up a builtin model.

    ``zero_range`` takes ``phi`` (a :class:`ZeroRangeSpec`) or ``power``
    ``(c, p)``; ``ssep`` takes an optional ``D_s_table``; ``custom`` takes
    ``doc``.
    """
    if name == "independent":
        return independent()
    if name == "stirring":
        return stirring()
    if name == "ssep":
        return ssep(kwargs.get("D_s_table"))
    if name == "kmp":
        return kmp()
    if name == "zero_range":
        spec = kwargs.get("phi")
        if spec is None:
            spec = ZeroRangeSpec.from_power(*kwargs.get("power", (1.0, 1.0)))
        return zero_range(spec)
    if name == "custom":
        return custom(kwargs["doc"])
    raise ModelError(f"unknown model {name!r}")


BUILTIN_NAMES = ("independent", "stirring", "zero_range", "kmp", "ssep")


def f_second(model: TransportModel, rho) -> np.ndarray:
    """Five-point centred difference of ``f'``."""
    rho = np.asarray(rho, dtype=float)
    lo, hi = model.rho_domain
    # step proportional to the distance to the nearest singular point of f'
    dist = np.minimum(np.abs(rho), np.minimum(rho - lo, hi - rho))
    h = 1e-3 * np.maximum(dist, 1e-6)
    fp = model.f_prime
    return (-fp(rho + 2 * h) + 8 * fp(rho + h) - 8 * fp(rho - h) + fp(rho - 2 * h)) / (12 * h)


def einstein_residual(model: TransportModel, rho_samples) -> float:
    """``max |D_h - f'' sigma|`` over the samples."""
    rho = np.asarray(rho_samples, dtype=float)
    lo, hi = model.rho_domain
    if np.any((rho <= lo) | (rho >= hi)):
        raise DomainError("Einstein samples must lie strictly inside the model domain")
    return float(np.max(np.abs(model.D_h(rho) - f_second(model, rho) * model.sigma(rho))))


def free_energy_difference(model: TransportModel, rho0, m: float, grid: Grid) -> float:
    """Gibbs initial-condition cost ``int f(rho0) - f(m) - f'(m)(rho0 - m)``."""
    rho0 = np.asarray(rho0, dtype=float)
    model.check_domain(rho0, "rho0")
    model.check_domain(np.array([m]), "m", open_=True)
    m_arr = np.array(m, dtype=float)
    integrand = model.f(rho0) - model.f(m_arr) - model.f_prime(m_arr) * (rho0 - m)
    return float(np.sum(integrand) * grid.dx)
