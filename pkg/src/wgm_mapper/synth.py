"""Synthetic taper-transmission scans.

Generates the two experiment geometries:

  * linear z-scan of a sphere: the taper stays in one horizontal plane and
    the sphere is raised through it, so the gap grows as g0 + z^2/2a while
    the contact point slides along the meridian;
  * circular theta-scan of a toroid: the taper follows a circle around the
    tube cross-section, keeping a nearly constant gap; an off-center circle
    makes the gap (and the loaded linewidths) asymmetric in theta.

Noise is additive white Gaussian on transmission, seeded per position with
spawned substreams so serial and parallel synthesis produce bit-identical
waterfalls.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np

from .physics import C_VACUUM, ModeId, ResonanceState, SphereGeometry, \
    TaperCoupling, coupling_efficiency, estimate_ell, multiplet_frequencies

THREADS_ENV = "WGM_MAPPER_THREADS"


class ScanKind(Enum):
    LINEAR_Z = "linear_z"
    CIRCULAR_THETA = "circular_theta"


@dataclass(frozen=True)
class ScanPlan:
    """Scan positions plus the common frequency grid.

    Positions are meters for linear scans and radians for circular ones, and
    must be strictly monotone.  The frequency grid must be uniform and
    ascending.
    """

    kind: ScanKind
    positions: tuple[float, ...]
    frequency_grid: np.ndarray
    laser_power_T0: float = 1.0

    def __post_init__(self) -> None:
        if len(self.positions) == 0:
            raise ValueError("scan needs at least one position")
        d = np.diff(self.positions)
        if len(d) and not (np.all(d > 0) or np.all(d < 0)):
            raise ValueError("positions must be strictly monotone")
        grid = np.asarray(self.frequency_grid, dtype=float)
        if grid.ndim != 1 or grid.size < 2:
            raise ValueError("frequency grid must be a 1-d array of >= 2 points")
        dg = np.diff(grid)
        if not np.all(dg > 0):
            raise ValueError("frequency grid must be ascending")
        if np.max(np.abs(dg - dg[0])) > 1e-9 * dg[0]:
            raise ValueError("frequency grid must be uniform")
        if self.laser_power_T0 <= 0:
            raise ValueError("baseline transmission must be positive")
        object.__setattr__(self, "frequency_grid", grid)

    @property
    def grid_step(self) -> float:
        return float(self.frequency_grid[1] - self.frequency_grid[0])

    @classmethod
    def linear(cls, z_start: float, z_stop: float, n_positions: int,
               grid: np.ndarray, t0: float = 1.0) -> "ScanPlan":
        zs = tuple(np.linspace(z_start, z_stop, n_positions))
        return cls(ScanKind.LINEAR_Z, zs, grid, t0)

    @classmethod
    def circular(cls, theta_start: float, theta_stop: float, n_positions: int,
                 grid: np.ndarray, t0: float = 1.0) -> "ScanPlan":
        ths = tuple(np.linspace(theta_start, theta_stop, n_positions))
        return cls(ScanKind.CIRCULAR_THETA, ths, grid, t0)


@dataclass(frozen=True)
class ToroidMode:
    """Empirical toroid mode: no analytic (n, ell) structure is available,
    so the polar intensity is parameterized directly as a Hermite-Gauss
    lobe pattern H_q^2(theta/w) exp(-theta^2/w^2) of configurable width."""

    frequency_offset: float
    polar_width_w: float
    polar_order_q: int
    gamma0: float
    gammaC0: float

    def __post_init__(self) -> None:
        if self.polar_width_w <= 0:
            raise ValueError("polar width must be positive")
        if self.polar_order_q < 0:
            raise ValueError("polar order must be non-negative")
        if self.gamma0 <= 0 or self.gammaC0 <= 0:
            raise ValueError("linewidths must be positive")


@dataclass(frozen=True)
class ToroidGeometry:
    """Toroid tube cross-section plus the taper's circular scan path.

    The tube cross-section is a circle of radius d/2 at the origin of the
    meridian plane (y toward the outside, z up; theta = 0 is the equator).
    The taper path is a circle of radius ``scan_radius_rho`` whose center
    sits at ``center_offset`` = (eps_y, eps_z) from the tube center.
    Positive eps_z (scan center above the tube center) shrinks the gap on
    the theta < 0 (below-toroid) half of the scan.
    """

    minor_diameter_d: float
    scan_radius_rho: float
    center_offset: tuple[float, float] = (0.0, 0.0)
    mode_profiles: tuple[ToroidMode, ...] = ()

    def __post_init__(self) -> None:
        if self.minor_diameter_d <= 0:
            raise ValueError("minor diameter must be positive")
        if self.scan_radius_rho <= self.minor_diameter_d / 2.0:
            raise ValueError("scan radius must exceed the tube radius")


@dataclass(frozen=True)
class NoiseModel:
    """Additive white Gaussian transmission noise with a 64-bit seed."""

    sigma_T: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.sigma_T < 0:
            raise ValueError("noise sigma must be non-negative")


@dataclass
class Waterfall:
    """One transmission trace per scan position on a common grid."""

    plan: ScanPlan
    traces: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.traces = np.asarray(self.traces, dtype=float)
        if self.traces.shape != (len(self.plan.positions),
                                 self.plan.frequency_grid.size):
            raise ValueError(
                f"traces shape {self.traces.shape} does not match plan "
                f"({len(self.plan.positions)} positions x "
                f"{self.plan.frequency_grid.size} grid points)")


def synth_spectrum(modes: Sequence[ResonanceState], grid: np.ndarray,
                   t0: float = 1.0) -> np.ndarray:
    """Transmission trace with one Lorentzian dip per resonance.

    Dips multiply, T = T0 prod_k [1 - C_k L(nu; nu_k, gamma_k)], so
    overlapping resonances can never drive the transmission negative; for
    well-separated dips this is indistinguishable from summing them and the
    floor at each resonance is exactly T0 (1 - C_k).
    """
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size == 0:
        raise ValueError("grid must be a non-empty 1-d array")
    t = np.full(grid.shape, float(t0))
    for state in modes:
        if state.gamma_loaded <= 0:
            raise ValueError("loaded linewidth must be positive")
        u = 2.0 * (grid - state.frequency) / state.gamma_loaded
        t *= 1.0 - state.dip_depth_C / (1.0 + u * u)
    return t


def _thread_count(n_tasks: int) -> int:
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        cap = int(raw)
    except ValueError:
        cap = 1
    return max(1, min(cap, n_tasks))


def _run_positions(worker, n: int) -> list[np.ndarray]:
    """Evaluate ``worker(i)`` for each position, optionally threaded.

    Results are ordered by position index regardless of scheduling, and the
    per-position noise substreams make threaded output identical to serial.
    """
    workers = _thread_count(n)
    if workers == 1:
        return [worker(i) for i in range(n)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(worker, range(n)))


def _noise_streams(noise: NoiseModel, n: int) -> list[np.random.SeedSequence]:
    return np.random.SeedSequence(noise.seed).spawn(n)


def _apply_noise(trace: np.ndarray, noise: NoiseModel,
                 stream: np.random.SeedSequence, t0: float) -> np.ndarray:
    if noise.sigma_T == 0.0:
        return trace
    rng = np.random.default_rng(stream)
    noisy = trace + rng.normal(0.0, noise.sigma_T, trace.shape)
    return np.clip(noisy, 0.0, t0 + 5.0 * noise.sigma_T)


def linear_scan_gap(geom: SphereGeometry, taper: TaperCoupling, z: float) -> float:
    """Air gap of a straight taper at height z: g0 + z^2 / 2a."""
    return taper.gap_g0 + z * z / (2.0 * geom.radius_a)


def _polar_angle(geom: SphereGeometry, taper: TaperCoupling, z: float) -> float:
    """Polar angle of the taper's closest approach at height z."""
    r = geom.radius_a + linear_scan_gap(geom, taper, z)
    return math.acos(z / r)


def synth_waterfall_linear(geom: SphereGeometry, taper: TaperCoupling,
                           plan: ScanPlan, noise: NoiseModel,
                           nu_ref: float | None = None,
                           q_max: int = 5) -> Waterfall:
    """Sphere multiplet waterfall over a linear z-scan.

    The q = 0..q_max multiplet is split off ``nu_ref`` (defaulting to the
    center of the frequency grid); at each height z the gap grows
    quadratically and each mode couples through its polar intensity at the
    taper's closest-approach angle.
    """
    if plan.kind is not ScanKind.LINEAR_Z:
        raise ValueError(f"plan kind must be LINEAR_Z, got {plan.kind}")
    if nu_ref is None:
        nu_ref = float(0.5 * (plan.frequency_grid[0] + plan.frequency_grid[-1]))
    lines = multiplet_frequencies(geom, nu_ref, q_max)
    ell = estimate_ell(geom, C_VACUUM / nu_ref)
    modes = [ModeId.from_q(n=1, ell=ell, q=q) for q, _ in lines]
    streams = _noise_streams(noise, len(plan.positions))

    def worker(i: int) -> np.ndarray:
        z = plan.positions[i]
        gap = linear_scan_gap(geom, taper, z)
        theta = _polar_angle(geom, taper, z)
        states = []
        for (q, freq), mode in zip(lines, modes):
            depth, gamma_l = coupling_efficiency(mode, taper, gap, theta)
            states.append(ResonanceState(mode=mode, frequency=freq,
                                         gamma_intrinsic=taper.gamma0,
                                         gamma_loaded=gamma_l,
                                         dip_depth_C=depth))
        trace = synth_spectrum(states, plan.frequency_grid, plan.laser_power_T0)
        return _apply_noise(trace, noise, streams[i], plan.laser_power_T0)

    traces = np.array(_run_positions(worker, len(plan.positions)))
    meta = {
        "kind": plan.kind.value,
        "geometry": {"radius_a_m": geom.radius_a,
                     "ellipticity_e": geom.ellipticity_e,
                     "refractive_index": geom.refractive_index_nS},
        "taper": _taper_meta(taper),
        "nu_ref_hz": nu_ref,
        "q_max": q_max,
        "line_frequencies_hz": [f for _, f in lines],
        "noise": {"sigma_T": noise.sigma_T, "seed": noise.seed},
    }
    return Waterfall(plan=plan, traces=traces, metadata=meta)


def circular_scan_gap(toroid: ToroidGeometry, theta: float) -> float:
    """Gap between the circular taper path and the tube surface at theta.

    The taper sits at p(theta) = (eps_y + rho cos(theta), eps_z + rho
    sin(theta)) in the meridian plane; the gap is |p| - d/2, exact in the
    offset (no first-order truncation).
    """
    eps_y, eps_z = toroid.center_offset
    py = eps_y + toroid.scan_radius_rho * math.cos(theta)
    pz = eps_z + toroid.scan_radius_rho * math.sin(theta)
    gap = math.hypot(py, pz) - toroid.minor_diameter_d / 2.0
    if gap < 0:
        raise ValueError(
            f"taper path intersects the cavity at theta={theta:.4f} "
            f"(gap {gap:.3e} m)")
    return gap


def toroid_polar_intensity(mode: ToroidMode, theta: float | np.ndarray):
    """Hermite-Gauss lobe pattern of an empirical toroid mode."""
    from .physics import hermite_polynomial

    u = np.asarray(theta, dtype=float) / mode.polar_width_w
    h = hermite_polynomial(mode.polar_order_q, u)
    out = h * h * np.exp(-u * u)
    return float(out) if np.isscalar(theta) else out


def synth_waterfall_circular(toroid: ToroidGeometry, taper: TaperCoupling,
                             plan: ScanPlan, noise: NoiseModel) -> Waterfall:
    """Toroid waterfall over a circular theta-scan in [-pi/2, pi/2].

    Each empirical mode couples as gammaC0 * profile(theta) *
    exp(-2 kappa gap(theta)); a nonzero scan-center offset makes the gap,
    and with it depth and loaded linewidth, asymmetric between the two
    halves of the scan.
    """
    if plan.kind is not ScanKind.CIRCULAR_THETA:
        raise ValueError(f"plan kind must be CIRCULAR_THETA, got {plan.kind}")
    if not all(-math.pi / 2 - 1e-12 <= t <= math.pi / 2 + 1e-12
               for t in plan.positions):
        raise ValueError("theta positions must lie within [-pi/2, pi/2]")
    if not toroid.mode_profiles:
        raise ValueError("toroid has no mode profiles to synthesize")
    streams = _noise_streams(noise, len(plan.positions))

    def worker(i: int) -> np.ndarray:
        theta = plan.positions[i]
        gap = circular_scan_gap(toroid, theta)
        states = []
        for k, tm in enumerate(toroid.mode_profiles):
            gamma_c = (tm.gammaC0 * toroid_polar_intensity(tm, theta)
                       * math.exp(-2.0 * taper.kappa * gap))
            gamma_l = tm.gamma0 + gamma_c
            depth = 4.0 * tm.gamma0 * gamma_c / gamma_l**2
            mode = ModeId.from_q(n=1, ell=max(tm.polar_order_q + 1, 1),
                                 q=tm.polar_order_q)
            states.append(ResonanceState(mode=mode, frequency=tm.frequency_offset,
                                         gamma_intrinsic=tm.gamma0,
                                         gamma_loaded=gamma_l,
                                         dip_depth_C=depth))
        trace = synth_spectrum(states, plan.frequency_grid, plan.laser_power_T0)
        return _apply_noise(trace, noise, streams[i], plan.laser_power_T0)

    traces = np.array(_run_positions(worker, len(plan.positions)))
    meta = {
        "kind": plan.kind.value,
        "geometry": {"minor_diameter_d_m": toroid.minor_diameter_d,
                     "scan_radius_rho_m": toroid.scan_radius_rho,
                     "center_offset_m": list(toroid.center_offset)},
        "taper": _taper_meta(taper),
        "modes": [{"frequency_offset_hz": tm.frequency_offset,
                   "polar_width_rad": tm.polar_width_w,
                   "q": tm.polar_order_q,
                   "gamma0_hz": tm.gamma0,
                   "gammaC0_hz": tm.gammaC0} for tm in toroid.mode_profiles],
        "noise": {"sigma_T": noise.sigma_T, "seed": noise.seed},
    }
    return Waterfall(plan=plan, traces=traces, metadata=meta)


def _taper_meta(taper: TaperCoupling) -> dict:
    return {"wavelength_m": taper.wavelength_lambda,
            "kappa_per_m": taper.kappa,
            "gap_g0_m": taper.gap_g0,
            "gamma0_hz": taper.gamma0,
            "gammaC0_hz": taper.gammaC0,
            "Kq": list(taper.Kq)}
