"""Inverse pipeline: recover mode structure from transmission waterfalls.

The stages mirror how the measurement is read by hand:

  1. find absorption dips in each trace and fit a Lorentzian to each;
  2. group the fitted centers into spectral lines across scan positions;
  3. identify the polar orders: the multiplet is nearly equally spaced and,
     for a prolate cavity, the member missing one spacing above the
     highest-frequency line pins that line as the fundamental (q = 0);
  4. re-fit every line at every position (tracked fits, with the width
     constrained near the line's typical value so empty windows cannot
     return runaway widths) and convert depths and linewidths into per-q
     excitation profiles versus position.

The default profile quantity is C * gamma_L / gamma_0, which is
proportional to the polar intensity times the evanescent gap factor under
the coupled-mode model when under-coupled; ``convention="text"`` switches
to the reciprocal weighting C * gamma_0 / gamma_L.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import least_squares
from scipy.signal import find_peaks

from .errors import InsufficientLinesError, UnrecognizableMultipletError
from .synth import ScanKind, Waterfall

#: Detection threshold below which noise dips dominate at typical noise.
DEFAULT_MIN_DEPTH = 0.03

#: Maximum relative spread of adjacent gaps still accepted as a multiplet.
SPACING_DISPERSION_LIMIT = 0.20


@dataclass(frozen=True)
class DipCandidate:
    """Coarse dip location plus the grid window to refine it in."""

    index: int
    lo: int
    hi: int
    center_frequency: float
    depth_estimate: float
    fwhm_estimate: float


@dataclass(frozen=True)
class DipRecord:
    """Fitted Lorentzian dip parameters at one scan position."""

    center: float
    fwhm: float
    depth_C: float
    area: float
    position: float
    fit_residual_rms: float
    converged: bool = True


@dataclass(frozen=True)
class MultipletAssignment:
    """q labels for a set of line frequencies (descending order)."""

    line_frequencies: tuple[float, ...]
    q_of_line: dict[int, int]
    spacing_hat: float
    q0_frequency: float


@dataclass
class ProfileSeries:
    """Excitation profile of one line versus scan position."""

    q: int | None
    line_frequency: float
    positions: np.ndarray
    values: np.ndarray
    gamma_loaded: np.ndarray
    gamma_intrinsic_hat: float
    converged: np.ndarray
    convention: str = "eq2"
    dropout_spans: tuple[tuple[float, float], ...] = ()

    @property
    def samples(self) -> list[tuple[float, float, float]]:
        return [(float(p), float(v), float(g))
                for p, v, g in zip(self.positions, self.values, self.gamma_loaded)]


@dataclass
class LineTrack:
    """One spectral line followed across every scan position."""

    line_index: int
    q: int | None
    frequency: float
    fwhm_hint: float
    records: tuple[DipRecord, ...]


@dataclass
class AnalysisReport:
    kind: ScanKind
    positions: tuple[float, ...]
    dip_tables: list[list[DipRecord]]
    assignment: MultipletAssignment | None
    tracks: list[LineTrack]
    profiles: list[ProfileSeries]
    convention: str


def baseline_t0(trace: np.ndarray) -> float:
    """Out-of-resonance transmission: median of the upper quartile."""
    trace = np.asarray(trace, dtype=float)
    upper = trace[trace >= np.quantile(trace, 0.75)]
    return float(np.median(upper))


def detect_dips(trace: np.ndarray, grid: np.ndarray,
                min_depth: float = DEFAULT_MIN_DEPTH) -> list[DipCandidate]:
    """Coarse dip candidates: local minima deeper than min_depth * T0.

    Each candidate carries a refinement window of about four estimated
    linewidths; of two candidates closer than half a window only the deeper
    one survives.
    """
    trace = np.asarray(trace, dtype=float)
    grid = np.asarray(grid, dtype=float)
    if trace.size == 0:
        raise ValueError("empty trace")
    if trace.shape != grid.shape:
        raise ValueError("trace and grid must have matching shapes")
    if not 0.0 < min_depth < 1.0:
        raise ValueError(f"min_depth must lie in (0, 1), got {min_depth}")
    t0 = baseline_t0(trace)
    depth = t0 - trace
    threshold = min_depth * t0
    idx, props = find_peaks(depth, height=threshold, width=1, rel_height=0.5)
    if idx.size == 0:
        return []
    step = float(grid[1] - grid[0]) if grid.size > 1 else 1.0
    order = np.argsort(props["peak_heights"])[::-1]
    kept: list[DipCandidate] = []
    for k in order:
        i = int(idx[k])
        halfwidth = int(max(math.ceil(4.0 * props["widths"][k]), 10))
        if any(abs(i - c.index) < max(halfwidth, (c.hi - c.lo) // 2) // 1
               and abs(i - c.index) < max(halfwidth, (c.hi - c.lo) // 2)
               for c in kept):
            continue
        lo = max(0, i - halfwidth)
        hi = min(trace.size, i + halfwidth + 1)
        kept.append(DipCandidate(index=i, lo=lo, hi=hi,
                                 center_frequency=float(grid[i]),
                                 depth_estimate=float(depth[i] / t0),
                                 fwhm_estimate=float(props["widths"][k] * step)))
    kept.sort(key=lambda c: c.index)
    return kept


def fit_lorentzian_dip(freqs: np.ndarray, values: np.ndarray,
                       position: float = math.nan,
                       center_guess: float | None = None,
                       fwhm_guess: float | None = None,
                       fwhm_bounds: tuple[float, float] | None = None) -> DipRecord:
    """Least-squares fit of T0 (1 - C L(nu; nu0, gamma)) over one window.

    The frequency axis is shifted and scaled by the width guess before
    fitting so all four parameters are O(1).  A fit whose depth does not
    clear the residual noise floor is returned flagged rather than raised,
    so empty windows degrade to near-zero-depth records.
    """
    freqs = np.asarray(freqs, dtype=float)
    values = np.asarray(values, dtype=float)
    if freqs.size < 8:
        raise ValueError("window too short to fit a dip")
    t0_init = baseline_t0(values)
    step = float(freqs[1] - freqs[0])
    span = float(freqs[-1] - freqs[0])
    c_init = float(np.clip(1.0 - values.min() / t0_init, 1e-3, 1.2))
    nu0_init = float(freqs[int(np.argmin(values))]) if center_guess is None \
        else float(center_guess)
    if fwhm_guess is None:
        half = t0_init * (1.0 - 0.5 * c_init)
        below = freqs[values < half]
        fwhm_guess = float(below[-1] - below[0]) if below.size >= 2 else 10.0 * step
    fwhm_guess = float(np.clip(fwhm_guess, step, span))
    lo_g, hi_g = fwhm_bounds if fwhm_bounds is not None else (0.2 * step, span)
    scale = fwhm_guess

    def resid(p: np.ndarray) -> np.ndarray:
        t0, c, x0, w = p
        u = 2.0 * ((freqs - nu0_init) / scale - x0) / w
        return t0 * (1.0 - c / (1.0 + u * u)) - values

    p0 = np.array([t0_init, c_init, 0.0, fwhm_guess / scale])
    lower = [0.3 * t0_init, 0.0, (freqs[0] - nu0_init) / scale, lo_g / scale]
    upper = [3.0 * t0_init, 1.5, (freqs[-1] - nu0_init) / scale, hi_g / scale]
    p0 = np.clip(p0, lower, upper)
    sol = least_squares(resid, p0, bounds=(lower, upper),
                        xtol=1e-14, ftol=1e-14, gtol=1e-14)
    t0, c, x0, w = sol.x
    rms = float(np.sqrt(np.mean(sol.fun**2)))
    center = nu0_init + x0 * scale
    fwhm = w * scale
    converged = bool(sol.success) and c >= max(4.0 * rms, 1e-9)
    return DipRecord(center=float(center), fwhm=float(fwhm), depth_C=float(c),
                     area=float(c * fwhm * math.pi / 2.0), position=position,
                     fit_residual_rms=rms, converged=converged)


def label_multiplet(line_frequencies: Sequence[float]) -> MultipletAssignment:
    """Assign polar orders to an approximately equally spaced multiplet.

    The spacing is estimated as the median adjacent gap.  Extrapolating one
    spacing above the highest-frequency line lands where no line was
    detected, so that line is the fundamental: q = 0 at the top, counting up
    toward lower frequencies.  Labeling is invariant under input permutation
    and global frequency shifts.
    """
    freqs = sorted((float(f) for f in line_frequencies), reverse=True)
    if len(freqs) < 3:
        raise InsufficientLinesError(
            f"need at least 3 lines to identify a multiplet, got {len(freqs)}")
    gaps = -np.diff(freqs)
    spacing = float(np.median(gaps))
    if spacing <= 0:
        raise UnrecognizableMultipletError("degenerate line spacing")
    dispersion = float((gaps.max() - gaps.min()) / spacing)
    if dispersion >= SPACING_DISPERSION_LIMIT:
        raise UnrecognizableMultipletError(
            f"adjacent spacings spread by {dispersion:.1%} "
            f"(limit {SPACING_DISPERSION_LIMIT:.0%}); not a recognizable multiplet")
    return MultipletAssignment(line_frequencies=tuple(freqs),
                               q_of_line={i: i for i in range(len(freqs))},
                               spacing_hat=spacing,
                               q0_frequency=freqs[0])


def _cluster_lines(records: list[DipRecord], split_hz: float,
                   min_members: int) -> list[tuple[float, float]]:
    """Group fitted centers into lines; returns (frequency, fwhm) medians."""
    centers = sorted((r.center, r.fwhm) for r in records if r.converged)
    lines: list[tuple[float, float]] = []
    bucket: list[tuple[float, float]] = []
    for c, w in centers:
        if bucket and c - bucket[-1][0] > split_hz:
            if len(bucket) >= min_members:
                lines.append((float(np.median([b[0] for b in bucket])),
                              float(np.median([b[1] for b in bucket]))))
            bucket = []
        bucket.append((c, w))
    if len(bucket) >= min_members:
        lines.append((float(np.median([b[0] for b in bucket])),
                      float(np.median([b[1] for b in bucket]))))
    return lines


def extract_profiles(tracks: Sequence[LineTrack], convention: str = "eq2",
                     max_dropout: int = 2) -> list[ProfileSeries]:
    """Per-line excitation profiles from tracked dip records.

    The intrinsic linewidth of each line is estimated as the smallest
    converged loaded linewidth across the scan (largest gap means least
    loading).  Runs of more than ``max_dropout`` consecutive lost positions
    are reported in ``dropout_spans``.
    """
    if convention not in ("eq2", "text"):
        raise ValueError(f"unknown profile convention {convention!r}")
    out = []
    for track in tracks:
        recs = track.records
        positions = np.array([r.position for r in recs])
        depth = np.array([r.depth_C for r in recs])
        gamma_l = np.array([r.fwhm for r in recs])
        conv = np.array([r.converged for r in recs], dtype=bool)
        if conv.any():
            gamma0_hat = float(gamma_l[conv].min())
        else:
            gamma0_hat = float(np.median(gamma_l))
        if convention == "eq2":
            values = depth * gamma_l / gamma0_hat
        else:
            values = depth * gamma0_hat / gamma_l
        values = np.maximum(values, 0.0)
        spans = []
        run_start = None
        for i, ok in enumerate(conv):
            if not ok and run_start is None:
                run_start = i
            if ok and run_start is not None:
                if i - run_start > max_dropout:
                    spans.append((float(positions[run_start]), float(positions[i - 1])))
                run_start = None
        if run_start is not None and len(conv) - run_start > max_dropout:
            spans.append((float(positions[run_start]), float(positions[-1])))
        out.append(ProfileSeries(q=track.q, line_frequency=track.frequency,
                                 positions=positions, values=values,
                                 gamma_loaded=gamma_l,
                                 gamma_intrinsic_hat=gamma0_hat,
                                 converged=conv, convention=convention,
                                 dropout_spans=tuple(spans)))
    return out


def analyze_waterfall(wf: Waterfall, min_depth: float = DEFAULT_MIN_DEPTH,
                      convention: str = "eq2", line_split_hz: float = 1e9,
                      label: bool | None = None) -> AnalysisReport:
    """Full analysis of a waterfall: detect, label, track, extract.

    ``label`` defaults to multiplet labeling for linear scans only (a toroid
    spectrum carries no equal-spacing structure to label).  Labeling errors
    propagate so callers can distinguish an unrecognizable multiplet from an
    I/O problem.
    """
    grid = wf.plan.frequency_grid
    step = wf.plan.grid_step
    positions = wf.plan.positions
    if label is None:
        label = wf.plan.kind is ScanKind.LINEAR_Z

    dip_tables: list[list[DipRecord]] = []
    for i, pos in enumerate(positions):
        trace = wf.traces[i]
        records = []
        for cand in detect_dips(trace, grid, min_depth):
            rec = fit_lorentzian_dip(grid[cand.lo:cand.hi],
                                     trace[cand.lo:cand.hi],
                                     position=pos,
                                     center_guess=cand.center_frequency,
                                     fwhm_guess=cand.fwhm_estimate)
            records.append(rec)
        dip_tables.append(records)

    all_records = [r for table in dip_tables for r in table]
    min_members = max(2, len(positions) // 10)
    lines = _cluster_lines(all_records, line_split_hz, min_members)

    assignment = None
    if label:
        assignment = label_multiplet([f for f, _ in lines])

    # Tracked refit of every line at every position.  The window is a few
    # typical linewidths but never reaches a neighboring line; the width is
    # bounded near the line's own median so empty windows stay finite.
    tol = assignment.spacing_hat / 4.0 if assignment else None
    freq_sorted = sorted(f for f, _ in lines)
    tracks: list[LineTrack] = []
    order = np.argsort([-f for f, _ in lines]) if label else np.arange(len(lines))
    for rank, k in enumerate(order):
        f_line, w_line = lines[int(k)]
        sep = min((abs(f_line - other) for other in freq_sorted
                   if other != f_line), default=math.inf)
        halfwidth_hz = max(4.0 * w_line, 15.0 * step)
        halfwidth_hz = min(halfwidth_hz, 0.4 * sep)
        hw = max(int(round(halfwidth_hz / step)), 8)
        j = int(round((f_line - grid[0]) / step))
        lo = max(0, j - hw)
        hi = min(grid.size, j + hw + 1)
        wb = (w_line / 2.5, w_line * 2.5)
        recs = []
        for i, pos in enumerate(positions):
            rec = fit_lorentzian_dip(grid[lo:hi], wf.traces[i][lo:hi],
                                     position=pos, center_guess=f_line,
                                     fwhm_guess=w_line, fwhm_bounds=wb)
            if tol is not None and abs(rec.center - f_line) > tol:
                rec = DipRecord(center=rec.center, fwhm=rec.fwhm,
                                depth_C=rec.depth_C, area=rec.area,
                                position=rec.position,
                                fit_residual_rms=rec.fit_residual_rms,
                                converged=False)
            recs.append(rec)
        q = assignment.q_of_line[rank] if assignment else None
        tracks.append(LineTrack(line_index=rank, q=q, frequency=f_line,
                                fwhm_hint=w_line, records=tuple(recs)))

    profiles = extract_profiles(tracks, convention=convention)
    return AnalysisReport(kind=wf.plan.kind, positions=tuple(positions),
                          dip_tables=dip_tables, assignment=assignment,
                          tracks=tracks, profiles=profiles,
                          convention=convention)


def count_profile_extrema(values: np.ndarray, prominence_frac: float = 0.01,
                          node_ceiling: float = 0.2) -> tuple[int, int]:
    """Count antinodes and interior nodes of a sampled profile.

    Antinodes are local maxima with prominence above ``prominence_frac`` of
    the profile peak; nodes are equally prominent local minima whose value
    stays below ``node_ceiling`` of the peak.
    """
    v = np.asarray(values, dtype=float)
    if v.size < 3:
        return (0, 0)
    peak = float(v.max())
    if peak <= 0:
        return (0, 0)
    vn = v / peak
    maxima, _ = find_peaks(vn, prominence=prominence_frac)
    minima, _ = find_peaks(-vn, prominence=prominence_frac)
    nodes = [i for i in minima if vn[i] < node_ceiling]
    return (len(maxima), len(nodes))
