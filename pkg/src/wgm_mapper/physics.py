"""Closed-form physics of whispering-gallery modes in near-spherical cavities.

Covers the mode bookkeeping (radial order n, angular momentum ell, azimuthal
order m, polar order q = ell - |m|), the ellipticity-induced splitting of the
m-degenerate multiplet, evanescent taper coupling, and the polar intensity
profiles used both for synthesizing scans and for fitting them:

  * exact splitting    dnu/nu = -(e/6) (1 - 3 m^2 / (l(l+1)))
  * its large-l form   dnu/nu ~  e/3 - (e/l) q
  * coupling rate      gamma_c ~ |Y_l^(l-q)(theta)|^2 exp(-2 kappa g)
  * polar profile      H_q^2(sqrt(l) z/a) exp[-(l/a^2 + kappa/a) z^2]

All functions are pure and safe to call from concurrent contexts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

# Speed of light in vacuum [m/s], exact.
C_VACUUM = 299_792_458.0


class Polarization(Enum):
    """Polarization label. Carried through unchanged; no physics attached."""

    TE = "TE"
    TM = "TM"


@dataclass(frozen=True)
class ModeId:
    """Identity of a whispering-gallery mode.

    The radial order ``n`` is an opaque tag (radial structure is out of
    scope). ``ell`` and ``m`` are the angular momentum numbers; the polar
    order ``q = ell - |m|`` counts intensity nodes along the meridian, so the
    fundamental mode is exactly the ``q = 0`` member.
    """

    n: int
    ell: int
    m: int
    polarization: Polarization = Polarization.TE

    def __post_init__(self) -> None:
        if self.n < 1:
            raise ValueError(f"radial order n must be >= 1, got {self.n}")
        if self.ell < 1:
            raise ValueError(f"angular order ell must be >= 1, got {self.ell}")
        if abs(self.m) > self.ell:
            raise ValueError(f"|m| <= ell required, got m={self.m}, ell={self.ell}")

    @property
    def q(self) -> int:
        """Polar order q = ell - |m| (number of polar intensity nodes)."""
        return self.ell - abs(self.m)

    @property
    def is_fundamental(self) -> bool:
        return self.q == 0

    @classmethod
    def from_q(cls, n: int, ell: int, q: int,
               polarization: Polarization = Polarization.TE) -> "ModeId":
        """Build the |m| = ell - q member (m taken positive)."""
        if q < 0 or q > ell:
            raise ValueError(f"polar order q must be in [0, ell], got {q}")
        return cls(n=n, ell=ell, m=ell - q, polarization=polarization)


@dataclass(frozen=True)
class SphereGeometry:
    """Near-spherical cavity: radius [m], ellipticity, refractive index.

    Positive ellipticity means prolate (elongated along the symmetry axis).
    The splitting formula is a first-order result; |e| is capped at 0.1 to
    stay inside its validity range.
    """

    radius_a: float
    ellipticity_e: float
    refractive_index_nS: float

    def __post_init__(self) -> None:
        if self.radius_a <= 0:
            raise ValueError(f"radius must be positive, got {self.radius_a}")
        if self.refractive_index_nS <= 1:
            raise ValueError(
                f"refractive index must exceed 1, got {self.refractive_index_nS}")
        if abs(self.ellipticity_e) >= 0.1:
            raise ValueError(
                f"|ellipticity| must be < 0.1 (small-deformation regime), "
                f"got {self.ellipticity_e}")


@dataclass(frozen=True)
class TaperCoupling:
    """Taper coupler parameters.

    ``kappa`` is the evanescent decay rate [1/m] outside the cavity surface,
    ``gap_g0`` the minimum air gap at the scan apex [m].  ``gamma0`` and
    ``gammaC0`` are intrinsic and zero-gap coupling linewidths (FWHM, Hz);
    ``Kq`` holds optional per-q scaling coefficients (taper dispersion makes
    the launch efficiency q-dependent), defaulting to 1.
    """

    wavelength_lambda: float
    kappa: float
    gap_g0: float
    gamma0: float
    gammaC0: float
    Kq: tuple[float, ...] = field(default=())

    def __post_init__(self) -> None:
        if self.wavelength_lambda <= 0:
            raise ValueError("wavelength must be positive")
        if self.kappa <= 0:
            raise ValueError("kappa must be positive")
        if self.gap_g0 < 0:
            raise ValueError("gap must be non-negative")
        if self.gamma0 <= 0 or self.gammaC0 <= 0:
            raise ValueError("linewidths must be positive")
        if any(k < 0 for k in self.Kq):
            raise ValueError("Kq coefficients must be non-negative")

    @classmethod
    def from_index(cls, wavelength: float, refractive_index: float, gap_g0: float,
                   gamma0: float, gammaC0: float,
                   Kq: tuple[float, ...] = ()) -> "TaperCoupling":
        """Derive kappa from the cavity index at the given wavelength."""
        kappa = 1.0 / evanescent_depth(refractive_index, wavelength)
        return cls(wavelength_lambda=wavelength, kappa=kappa, gap_g0=gap_g0,
                   gamma0=gamma0, gammaC0=gammaC0, Kq=tuple(Kq))

    def k_for(self, q: int) -> float:
        """Per-q scaling coefficient; 1.0 where not configured."""
        return self.Kq[q] if 0 <= q < len(self.Kq) else 1.0


@dataclass(frozen=True)
class ResonanceState:
    """A single resonance ready for spectrum synthesis."""

    mode: ModeId
    frequency: float
    gamma_intrinsic: float
    gamma_loaded: float
    dip_depth_C: float

    def __post_init__(self) -> None:
        if self.gamma_intrinsic <= 0:
            raise ValueError("intrinsic linewidth must be positive")
        if self.gamma_loaded < self.gamma_intrinsic:
            raise ValueError("loaded linewidth cannot be below intrinsic")
        if not 0.0 <= self.dip_depth_C <= 1.0:
            raise ValueError(f"dip depth must lie in [0, 1], got {self.dip_depth_C}")


def free_spectral_range(geom: SphereGeometry) -> float:
    """Azimuthal free spectral range c / (2 pi n_S a) [Hz]."""
    return C_VACUUM / (2.0 * math.pi * geom.refractive_index_nS * geom.radius_a)


def estimate_ell(geom: SphereGeometry, wavelength: float) -> int:
    """Angular order of the mode closest to ``wavelength``.

    Round-trip phase matching gives ell ~ 2 pi n_S a / lambda, i.e. the
    resonance frequency divided by the free spectral range.
    """
    if wavelength <= 0:
        raise ValueError(f"wavelength must be positive, got {wavelength}")
    return round(2.0 * math.pi * geom.refractive_index_nS * geom.radius_a / wavelength)


def ellipticity_shift_exact(mode: ModeId, e: float) -> float:
    """Relative frequency shift of mode (ell, m) for ellipticity e.

    Exact first-order-in-e expression -(e/6) (1 - 3 m^2 / (l(l+1))).
    """
    ell, m = mode.ell, mode.m
    return -(e / 6.0) * (1.0 - 3.0 * m * m / (ell * (ell + 1.0)))


def ellipticity_shift_approx(q: int, ell: int, e: float) -> float:
    """Large-ell form of the splitting, e/3 - (e/ell) q.

    Accurate to |exact - approx| <= e / (2(ell+1)) for q << ell, so the two
    expressions agree to better than 0.5% of e for ell >= 100.
    """
    if not 0 <= q <= ell:
        raise ValueError(f"need 0 <= q <= ell, got q={q}, ell={ell}")
    return e / 3.0 - (e / ell) * q


def multiplet_frequencies(geom: SphereGeometry, nu_ref: float,
                          q_max: int) -> list[tuple[int, float]]:
    """Frequencies of the q = 0..q_max members split off the reference line.

    ``nu_ref`` is the unshifted degenerate frequency of the (n, ell)
    multiplet; ell is inferred from it via the free spectral range.  For a
    prolate cavity (e > 0) the fundamental has the largest frequency and the
    list is strictly decreasing; adjacent members are separated by roughly
    e * nu_ref / ell.
    """
    if nu_ref <= 0:
        raise ValueError(f"reference frequency must be positive, got {nu_ref}")
    ell = estimate_ell(geom, C_VACUUM / nu_ref)
    if q_max >= ell:
        raise ValueError(f"q_max must be below ell={ell}, got {q_max}")
    if q_max < 0:
        raise ValueError(f"q_max must be non-negative, got {q_max}")
    out = []
    for q in range(q_max + 1):
        mode = ModeId.from_q(n=1, ell=ell, q=q)
        out.append((q, nu_ref * (1.0 + ellipticity_shift_exact(mode, geom.ellipticity_e))))
    return out


def evanescent_depth(nS: float, wavelength: float) -> float:
    """Characteristic decay length of the external evanescent field [m].

    1/kappa = lambda / (2 pi sqrt(n_S^2 - 1)); no decay exists for n_S <= 1.
    """
    if nS <= 1.0:
        raise ValueError(f"refractive index must exceed 1, got {nS}")
    if wavelength <= 0:
        raise ValueError(f"wavelength must be positive, got {wavelength}")
    return wavelength / (2.0 * math.pi * math.sqrt(nS * nS - 1.0))


def hermite_polynomial(q: int, x: float | np.ndarray) -> float | np.ndarray:
    """Physicists' Hermite polynomial H_q(x) by upward recurrence.

    H_{k+1} = 2x H_k - 2k H_{k-1} with H_0 = 1, H_1 = 2x.  Vectorized in x.
    """
    if q < 0:
        raise ValueError(f"order must be non-negative, got {q}")
    scalar = np.isscalar(x)
    xa = np.asarray(x, dtype=float)
    h0 = np.ones_like(xa)
    if q == 0:
        return float(h0) if scalar else h0
    h1 = 2.0 * xa
    for k in range(1, q):
        h0, h1 = h1, 2.0 * xa * h1 - 2.0 * k * h0
    return float(h1) if scalar else h1


def spherical_harmonic_intensity(ell: int, m: int,
                                 theta: float | np.ndarray) -> float | np.ndarray:
    """|Y_ell^m(theta)|^2 for the orthonormal spherical harmonic.

    Evaluated through the fully normalized associated Legendre recurrence so
    that degrees of several hundred (and up to at least 1000) neither
    overflow nor lose the normalization integral(|Y|^2 dOmega) = 1.  The
    sin(theta)^m seed factor is folded into the diagonal recurrence step by
    step; where it underflows the true value is below double precision and 0
    is returned.
    """
    if ell < 0:
        raise ValueError(f"degree must be non-negative, got {ell}")
    if abs(m) > ell:
        raise ValueError(f"|m| <= ell required, got m={m}, ell={ell}")
    scalar = np.isscalar(theta)
    th = np.asarray(theta, dtype=float)
    mm = abs(m)
    x = np.cos(th)
    s = np.sin(th)
    p = np.full_like(x, math.sqrt(1.0 / (4.0 * math.pi)))
    for k in range(1, mm + 1):
        p = p * s * math.sqrt((2.0 * k + 1.0) / (2.0 * k))
    if ell > mm:
        prev = p
        p = math.sqrt(2.0 * mm + 3.0) * x * prev
        for j in range(mm + 2, ell + 1):
            aj = math.sqrt((4.0 * j * j - 1.0) / (j * j - mm * mm))
            bj = math.sqrt(((j - 1.0) ** 2 - mm * mm) / (4.0 * (j - 1.0) ** 2 - 1.0))
            p, prev = aj * (x * p - bj * prev), p
    out = p * p
    return float(out) if scalar else out


def hg_profile(q: int, ell: int, a: float, kappa: float,
               z: float | np.ndarray) -> float | np.ndarray:
    """Polar excitation profile along the meridian coordinate z.

    Large-ell asymptote of the polar mode intensity combined with the
    second-order gap growth g(z) = g0 + z^2/2a of a straight coupler next to
    a sphere of radius a:

        H_q^2(sqrt(ell) z / a) * exp[-(ell/a^2 + kappa/a) z^2]

    Unnormalized; callers supply the amplitude.
    """
    if ell < 1:
        raise ValueError(f"ell must be >= 1, got {ell}")
    za = np.asarray(z, dtype=float)
    arg = math.sqrt(ell) * za / a
    h = hermite_polynomial(q, arg)
    out = h * h * np.exp(-(ell / a**2 + kappa / a) * za * za)
    return float(out) if np.isscalar(z) else out


def coupling_efficiency(mode: ModeId, taper: TaperCoupling, gap: float,
                        theta: float) -> tuple[float, float]:
    """Dip depth C and loaded linewidth for a taper at (gap, theta).

    The coupling rate scales with the polar intensity (normalized to the
    equatorial value of the fundamental, so gammaC0 and Kq carry all
    absolute scale) and decays as exp(-2 kappa gap):

        gamma_c = K_q gammaC0 * |Y_l^(l-q)(theta)|^2 / |Y_l^l(pi/2)|^2
                  * exp(-2 kappa gap)

    Depth and loading follow the coupled-mode closure C = 4 g0 gc/(g0+gc)^2,
    gamma_L = g0 + gc, which handles over-coupling and reduces to
    C ~ (g0/gamma_L) |Y|^2 exp(-2 kappa gap) when under-coupled.
    """
    if gap < 0:
        raise ValueError(f"gap must be non-negative, got {gap}")
    y = spherical_harmonic_intensity(mode.ell, mode.m, theta)
    y_eq = spherical_harmonic_intensity(mode.ell, mode.ell, math.pi / 2.0)
    gamma_c = (taper.k_for(mode.q) * taper.gammaC0 * (y / y_eq)
               * math.exp(-2.0 * taper.kappa * gap))
    gamma_loaded = taper.gamma0 + gamma_c
    depth = 4.0 * taper.gamma0 * gamma_c / gamma_loaded**2
    return depth, gamma_loaded
