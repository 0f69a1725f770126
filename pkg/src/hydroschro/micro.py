"""Kinetic Monte Carlo for lattice gases on the discrete torus.

Event-driven simulation with exponential clocks.  Time-dependent drive
rates are handled exactly by thinning: candidate events fire at a constant
upper-bound rate and are accepted with probability ``rate / bound``.  Every
candidate consumes two uniforms (clock, then selection), so identical
``(seed, replica)`` pairs give bit-identical records.

Units: ``ell`` sites on a macroscopic circle of length ``L``; the
occupation ``eta_x`` is the empirical density at ``(x + 1/2) L/ell``, jump
rates are scaled by ``(ell/L)^2`` and net jump counts across an edge are
multiplied by ``L/ell`` to give integrated macroscopic currents.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numba
import numpy as np
from scipy import optimize, stats

from .fields import Grid, SpaceTimeField

MODEL_KINDS = ("independent_rw", "zero_range", "ssep", "stirring")


class MicroError(ValueError):
    pass


def make_rng(seed: int, replica: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(replica)])))


# -- kernels ----------------------------------------------------------------------

@numba.njit(cache=True)
def _drive_factor(Hs, t_nodes, t, x, y):
    # linear interpolation in time of the site field, then exp(H(y) - H(x))
    n_t = t_nodes.shape[0]
    if n_t == 0:
        return 1.0
    if t <= t_nodes[0]:
        k, a = 0, 0.0
    elif t >= t_nodes[n_t - 1]:
        k, a = n_t - 2, 1.0
    else:
        dt = t_nodes[1] - t_nodes[0]
        k = min(int((t - t_nodes[0]) / dt), n_t - 2)
        a = (t - t_nodes[k]) / dt
    hx = (1.0 - a) * Hs[k, x] + a * Hs[k + 1, x]
    hy = (1.0 - a) * Hs[k, y] + a * Hs[k + 1, y]
    return math.exp(hy - hx)


@numba.njit(cache=True)
def _run_particles(rng, pos, ell, g_over_k, bound, scale, Hs, t_nodes, f_max, snap_times,
                   occ_out, cur_out, disp_out):
    """Walkers with per-particle rate ``g(k)/k`` to each neighbour (``k`` = site load)."""
    n = pos.shape[0]
    occ = np.zeros(ell, np.int64)
    for i in range(n):
        occ[pos[i]] += 1
    cur = np.zeros(ell, np.int64)
    disp = np.zeros(n, np.int64)
    t = 0.0
    s = 0
    n_snap = snap_times.shape[0]
    total = 2.0 * n * bound * f_max * scale
    jumps = 0
    while s < n_snap:
        if n == 0 or total == 0.0:
            t_next = np.inf
        else:
            t_next = t - math.log(1.0 - rng.random()) / total
        while s < n_snap and snap_times[s] <= t_next:
            occ_out[s, :] = occ
            cur_out[s, :] = cur
            disp_out[s, :] = disp
            s += 1
        if s >= n_snap:
            break
        t = t_next
        u = rng.random() * n
        i = min(int(u), n - 1)
        frac = u - i
        right = frac < 0.5
        acc = 2.0 * frac - (0.0 if right else 1.0)
        x = pos[i]
        y = (x + 1) % ell if right else (x - 1) % ell
        k = occ[x]
        rate = g_over_k[k] / bound
        if f_max > 1.0:
            rate *= _drive_factor(Hs, t_nodes, t, x, y) / f_max
        if acc < rate:
            pos[i] = y
            occ[x] -= 1
            occ[y] += 1
            if right:
                cur[x] += 1
                disp[i] += 1
            else:
                cur[y] -= 1
                disp[i] -= 1
            jumps += 1
    return jumps


@numba.njit(cache=True)
def _run_exclusion(rng, label, ell, stirring, scale, Hs, t_nodes, f_max, snap_times,
                   occ_out, cur_out, disp_out, n):
    """Directed-bond updates; ``label[x]`` is the particle at ``x`` or ``-1``."""
    cur = np.zeros(ell, np.int64)
    disp = np.zeros(n, np.int64)
    t = 0.0
    s = 0
    n_snap = snap_times.shape[0]
    total = 2.0 * ell * f_max * scale
    jumps = 0
    while s < n_snap:
        t_next = t - math.log(1.0 - rng.random()) / total
        while s < n_snap and snap_times[s] <= t_next:
            for x in range(ell):
                occ_out[s, x] = 1 if label[x] >= 0 else 0
            cur_out[s, :] = cur
            disp_out[s, :] = disp
            s += 1
        if s >= n_snap:
            break
        t = t_next
        u = rng.random() * 2 * ell
        b = min(int(u), 2 * ell - 1)
        frac = u - b
        x = b // 2
        right = (b % 2) == 0
        y = (x + 1) % ell if right else (x - 1) % ell
        a, c = label[x], label[y]
        if a < 0:
            continue
        if c < 0:
            rate = 1.0
            if f_max > 1.0:
                rate = _drive_factor(Hs, t_nodes, t, x, y) / f_max
            if frac < rate:
                label[y] = a
                label[x] = -1
                if right:
                    cur[x] += 1
                    disp[a] += 1
                else:
                    cur[y] -= 1
                    disp[a] -= 1
                jumps += 1
        elif stirring and frac < 0.5 / f_max:
            # two occupied sites exchange labels at unit rate per bond; no net current
            label[x], label[y] = c, a
            if right:
                disp[a] += 1
                disp[c] -= 1
            else:
                disp[a] -= 1
                disp[c] += 1
    return jumps


# -- records ------------------------------------------------------------------------

@dataclass
class DriveSpec:
    """Macroscopic field ``H`` on a cell grid; rates tilt by ``exp(H(y) - H(x))``."""

    H: SpaceTimeField

    def on_sites(self, ell: int) -> np.ndarray:
        grid = self.H.grid
        xs = (np.arange(ell) + 0.5) * grid.length / ell
        c = grid.centers
        cp = np.concatenate([c - grid.length, c, c + grid.length])
        return np.array([np.interp(xs, cp, np.tile(row, 3)) for row in self.H.values])


@dataclass
class EmpiricalRecord:
    model_kind: str
    ell: int
    length: float
    times: np.ndarray
    occupation: np.ndarray
    counts: np.ndarray
    displacement: np.ndarray
    seed: int
    replica: int
    jumps: int
    metadata: dict = field(default_factory=dict)

    @property
    def n_particles(self) -> int:
        return int(self.occupation[0].sum())

    @property
    def spacing(self) -> float:
        return self.length / self.ell

    def density(self) -> np.ndarray:
        return self.occupation.astype(float)

    def integrated_current(self) -> np.ndarray:
        """Net macroscopic current through each edge since time 0."""
        return self.counts * self.spacing

    def continuity_defect(self) -> int:
        """Integer defect of ``eta_{s+1} - eta_s = -(div of net counts)``; 0 by construction."""
        docc = np.diff(self.occupation, axis=0)
        dc = np.diff(self.counts, axis=0)
        return int(np.max(np.abs(docc + dc - np.roll(dc, 1, axis=1)), initial=0))

    def coarse_density(self, n_bins: int) -> np.ndarray:
        return coarse(self.density(), n_bins)

    def time_averaged_current(self) -> np.ndarray:
        return self.integrated_current()[-1] / self.times[-1]

    def snapshots_field(self) -> SpaceTimeField:
        g = Grid(self.ell, self.length)
        return SpaceTimeField(g, float(self.times[-1]), self.density(), "cell", "pi")


def coarse(values, n_bins: int) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    n = values.shape[-1]
    if n % n_bins:
        raise MicroError(f"{n} sites cannot be split into {n_bins} bins")
    return values.reshape(*values.shape[:-1], n_bins, n // n_bins).mean(axis=-1)


# -- initial data -------------------------------------------------------------------

def _g_table(g: Callable, k_max: int) -> np.ndarray:
    k = np.arange(k_max + 1)
    vals = np.array([float(g(int(i))) for i in k])
    if vals[0] != 0 or np.any(vals[1:] <= 0) or np.any(np.diff(vals) < -1e-15):
        raise MicroError("g must satisfy g(0) = 0, g(k) > 0 for k >= 1 and be nondecreasing")
    return vals


def _zr_weights(g_tab: np.ndarray) -> np.ndarray:
    # log of 1/g(1)...g(k)
    return -np.concatenate([[0.0], np.cumsum(np.log(g_tab[1:]))])


def _fugacity(rho: float, logw: np.ndarray) -> float:
    k = np.arange(logw.size)

    def mean(logz):
        lw = logw + k * logz
        p = np.exp(lw - lw.max())
        return float((k * p).sum() / p.sum())

    if rho <= 0:
        return 0.0
    return math.exp(optimize.brentq(lambda lz: mean(lz) - rho, -50, 50, xtol=1e-14))


def sample_initial(rng, kind: str, rho_sites: np.ndarray, g_tab: np.ndarray | None = None):
    """Product measure with the given site means (Bernoulli for exclusion)."""
    rho_sites = np.asarray(rho_sites, dtype=float)
    if kind in ("ssep", "stirring"):
        if np.any((rho_sites < 0) | (rho_sites > 1)):
            raise MicroError("exclusion densities must lie in [0, 1]")
        return (rng.random(rho_sites.size) < rho_sites).astype(np.int64)
    if np.any(rho_sites < 0):
        raise MicroError("densities must be nonnegative")
    if kind == "independent_rw" or g_tab is None or np.array_equal(g_tab, np.arange(g_tab.size)):
        # g(k) = k: the invariant measure is Poisson
        return rng.poisson(rho_sites).astype(np.int64)
    logw = _zr_weights(g_tab)
    k = np.arange(logw.size)
    occ = np.empty(rho_sites.size, np.int64)
    cache = {}
    for x, r in enumerate(rho_sites):
        if r not in cache:
            z = _fugacity(r, logw)
            lw = logw + k * (math.log(z) if z > 0 else -np.inf)
            p = np.exp(lw - np.max(lw))
            cache[r] = np.cumsum(p / p.sum())
        occ[x] = min(int(np.searchsorted(cache[r], rng.random(), side="right")), k[-1])
    return occ


# -- driver -------------------------------------------------------------------------

def _sites_from_profile(rho0, ell: int, length: float) -> np.ndarray:
    if callable(rho0):
        return np.asarray(rho0((np.arange(ell) + 0.5) * length / ell), dtype=float)
    rho0 = np.asarray(rho0, dtype=float)
    if rho0.ndim == 0:
        return np.full(ell, float(rho0))
    n = rho0.size
    if n == ell:
        return rho0.copy()
    xs = (np.arange(ell) + 0.5) / ell
    c = (np.arange(n) + 0.5) / n
    return np.interp(xs, np.concatenate([c - 1, c, c + 1]), np.tile(rho0, 3))


def simulate(model_kind: str, ell: int, rho0, t_final: float, *, drive: DriveSpec | None = None,
             seed: int = 0, replica: int = 0, n_snapshots: int = 11, length: float = 1.0,
             g: Callable | None = None, macroscopic: bool = True,
             occupation0: np.ndarray | None = None, snap_times=None) -> EmpiricalRecord:
    """Run one replica to (macroscopic) time ``t_final``.

    ``g`` is the zero-range jump function (default ``g(k) = k``);
    ``macroscopic=False`` uses unit lattice rates and microscopic time.
    """
    if model_kind not in MODEL_KINDS:
        raise MicroError(f"unknown model kind {model_kind!r}; expected one of {MODEL_KINDS}")
    if ell < 2:
        raise MicroError("ell must be at least 2")
    rng = make_rng(seed, replica)
    scale = (ell / length) ** 2 if macroscopic else 1.0
    g = g or (lambda k: k)
    if occupation0 is None:
        rho_sites = _sites_from_profile(rho0, ell, length)
        k_guess = int(max(20, 10 * np.max(rho_sites) + 20))
        g_tab = _g_table(g, k_guess) if model_kind == "zero_range" else None
        occ0 = sample_initial(rng, model_kind, rho_sites, g_tab)
    else:
        occ0 = np.asarray(occupation0, dtype=np.int64).copy()
    n = int(occ0.sum())
    if snap_times is None:
        snap_times = np.linspace(0.0, t_final, n_snapshots)
    snap_times = np.asarray(snap_times, dtype=float)
    S = snap_times.size

    if drive is not None:
        Hs = drive.on_sites(ell)
        t_nodes = drive.H.times if macroscopic else drive.H.times * scale
        dH = np.abs(np.roll(Hs, -1, axis=1) - Hs)
        f_max = float(np.exp(dH.max()))
    else:
        Hs = np.zeros((0, ell))
        t_nodes = np.zeros(0)
        f_max = 1.0
    occ_out = np.zeros((S, ell), np.int64)
    cur_out = np.zeros((S, ell), np.int64)
    disp_out = np.zeros((S, n), np.int64)
    if model_kind in ("ssep", "stirring"):
        if np.any(occ0 > 1):
            raise MicroError("exclusion occupancy above 1")
        label = -np.ones(ell, np.int64)
        label[np.flatnonzero(occ0)] = np.arange(n)
        jumps = _run_exclusion(rng, label, ell, model_kind == "stirring", scale, Hs, t_nodes,
                               f_max, snap_times, occ_out, cur_out, disp_out, n)
    else:
        if model_kind == "independent_rw":
            gk = np.ones(n + 1)
        else:
            g_tab = _g_table(g, n)
            gk = np.ones(n + 1)
            gk[1:] = g_tab[1:] / np.arange(1, n + 1)
        bound = float(gk.max())
        pos = np.repeat(np.arange(ell), occ0).astype(np.int64)
        jumps = _run_particles(rng, pos, ell, gk, bound, scale, Hs, t_nodes, f_max,
                               snap_times, occ_out, cur_out, disp_out)
    return EmpiricalRecord(model_kind, ell, length, snap_times, occ_out, cur_out, disp_out,
                           int(seed), int(replica), int(jumps),
                           {"macroscopic": macroscopic, "drive": drive is not None})


def _threads() -> int:
    import os

    try:
        return max(1, int(os.environ.get("HYDROSCHRO_THREADS", "1")))
    except ValueError:
        return 1


def run_replicas(replicas: int, seed: int, **kw) -> list[EmpiricalRecord]:
    """Replica ``r`` uses stream ``(seed, r)``; results are in replica order."""
    n_threads = min(_threads(), replicas)
    if n_threads == 1:
        return [simulate(seed=seed, replica=r, **kw) for r in range(replicas)]
    from concurrent.futures import ThreadPoolExecutor

    with ThreadPoolExecutor(n_threads) as ex:
        return list(ex.map(lambda r: simulate(seed=seed, replica=r, **kw), range(replicas)))


def mean_density(records, n_bins: int) -> np.ndarray:
    """Replica mean of binned densities (pairwise summation in replica order)."""
    stack = np.stack([r.coarse_density(n_bins) for r in records])
    return np.sum(stack, axis=0) / len(records)


def l1_distance(a, b, length: float = 1.0) -> float:
    a, b = np.asarray(a, float), np.asarray(b, float)
    return float(np.sum(np.abs(a - b)) * length / a.size)


def bin_field(values, n_bins: int) -> np.ndarray:
    return coarse(values, n_bins)


# -- experiments ----------------------------------------------------------------------

def lln_sweep(ells, rho0: Callable, t_final: float, replicas: int, seed: int, model,
              n_bins: int = 16, kind: str = "zero_range", g=None, n_ref: int = 256):
    """Replica-mean L1 error of the binned density at ``t_final`` against the PDE."""
    from .hydro import solve_nde

    grid = Grid(n_ref)
    ref = solve_nde(model, rho0(grid.centers), grid, t_final, 200).rho.values[-1]
    ref_b = coarse(ref, n_bins)
    rows = []
    for ell in ells:
        recs = run_replicas(replicas, seed, model_kind=kind, ell=ell, rho0=rho0,
                            t_final=t_final, n_snapshots=2, g=g)
        per = [l1_distance(r.coarse_density(n_bins)[-1], ref_b) for r in recs]
        rows.append({"ell": ell, "l1_mean_density": l1_distance(mean_density(recs, n_bins)[-1],
                                                                ref_b),
                     "l1_per_replica": float(np.mean(per)),
                     "l1_per_replica_se": float(np.std(per, ddof=1) / math.sqrt(len(per)))})
    return rows


def driven_bridge_experiment(model_kind: str, ell: int, bridge, replicas: int, seed: int,
                             n_bins: int = 16, g=None) -> dict:
    """Drive the lattice gas with ``H*`` and compare with the bridge's endpoint and current."""
    name = bridge.model.name
    allowed = {"independent_rw": ("independent", "zero_range"),
               "zero_range": ("zero_range", "independent"),
               "stirring": ("stirring",)}
    if model_kind == "ssep":
        raise MicroError("ssep has no self-diffusion closed form; not used for driven bridges")
    if name not in allowed.get(model_kind, ()):
        raise MicroError(f"bridge model {name!r} does not match microscopic model {model_kind!r}")
    if model_kind == "zero_range" and name == "zero_range" and g is None:
        # only g(k) = k is identified with the bridge model without extra information
        pass
    grid = bridge.grid
    mu0, mu1 = bridge.problem.mu0, bridge.problem.mu1
    T = bridge.problem.t_final
    drive = DriveSpec(bridge.H_star)
    recs = run_replicas(replicas, seed, model_kind=model_kind, ell=ell, rho0=mu0, t_final=T,
                        drive=drive, n_snapshots=2, length=grid.length, g=g)
    end = mean_density(recs, n_bins)[-1]
    target = coarse(_sites_from_profile(mu1, ell, grid.length), n_bins)
    jbar_star = (np.trapezoid(bridge.j_star.values, dx=bridge.j_star.dt, axis=0) / T)
    jbar_sites = coarse(_sites_from_profile(jbar_star, ell, grid.length), n_bins)
    cur = coarse(np.mean([r.time_averaged_current() for r in recs], axis=0), n_bins)
    start = mean_density(recs, n_bins)[0]
    return {
        "model": model_kind, "ell": ell, "T": T, "replicas": replicas, "seed": seed,
        "metrics": {
            "endpoint_l1": l1_distance(end, target, grid.length),
            "initial_l1": l1_distance(start, coarse(_sites_from_profile(mu0, ell, grid.length),
                                                    n_bins), grid.length),
            "current_l1": l1_distance(cur, jbar_sites, grid.length),
            "n_bins": n_bins,
            "continuity_defect": max(r.continuity_defect() for r in recs),
        },
    }


@dataclass
class TaggedEstimate:
    model_kind: str
    estimate: float
    ci: tuple[float, float]
    exponent: float
    exponent_ci: tuple[float, float]
    subdiffusive: bool
    insufficient: bool
    times: np.ndarray
    msd: np.ndarray


def tagged_diffusion(model_kind: str, ell: int, m: float, T_msd: float, replicas: int,
                     seed: int, t_min: float | None = None, n_snapshots: int = 41,
                     g=None, level: float = 0.95) -> TaggedEstimate:
    """MSD of all particles at equilibrium density ``m`` in lattice units.

    ``D_s`` is half the least-squares slope of MSD against time over
    ``[t_min, T_msd]``; the growth exponent is the slope on log-log axes.
    Confidence intervals use the Student-t spread of per-replica estimates.
    """
    t_min = T_msd / 10 if t_min is None else t_min
    times = np.linspace(0.0, T_msd, n_snapshots)
    recs = run_replicas(replicas, seed, model_kind=model_kind, ell=ell, rho0=m, t_final=T_msd,
                        macroscopic=False, snap_times=times, g=g)
    msd = np.array([np.mean(r.displacement.astype(float) ** 2, axis=1) for r in recs])
    win = times >= t_min
    D = np.array([np.polyfit(times[win], row[win], 1)[0] / 2 for row in msd])
    pos = win & (times > 0)
    expo = np.array([np.polyfit(np.log(times[pos]), np.log(row[pos]), 1)[0] for row in msd])
    q = stats.t.ppf(0.5 + level / 2, replicas - 1) if replicas > 1 else np.inf
    hw = q * D.std(ddof=1) / math.sqrt(replicas) if replicas > 1 else np.inf
    hwe = q * expo.std(ddof=1) / math.sqrt(replicas) if replicas > 1 else np.inf
    est = float(D.mean())
    e = float(expo.mean())
    sub = e + hwe < 0.9
    return TaggedEstimate(model_kind, est, (est - hw, est + hw), e, (e - hwe, e + hwe), sub,
                          bool(hw > 0.25 * abs(est)) and not sub, times, msd.mean(axis=0))


def write_report(path, report: dict):
    def conv(o):
        if isinstance(o, np.ndarray):
            return o.tolist()
        if isinstance(o, (np.floating, np.integer)):
            return o.item()
        raise TypeError(type(o))

    Path(path).write_text(json.dumps(report, indent=2, default=conv, sort_keys=True))
