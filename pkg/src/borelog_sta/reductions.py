"""Reductions from raw geotechnical test readings to reported values.

Covers the standard penetration test (N, N60, N1,60), Atterberg limits
(LL, PL, PI via the multipoint Casagrande method), cone penetration test
friction ratio, and the pressuremeter creep and limit pressures.
"""

from __future__ import annotations

import math
from dataclasses import dataclass


class ReductionError(ValueError):
    """Raised when raw readings cannot be reduced."""


def round_half_away(value: float) -> int:
    """Round to the nearest integer, ties away from zero."""
    if value >= 0:
        return int(math.floor(value + 0.5))
    return -int(math.floor(-value + 0.5))


# ---------------------------------------------------------------------------
# Standard penetration test


@dataclass(frozen=True)
class DriveSet:
    """One increment of an SPT test.

    Parameters
    ----------
    index : int
        1-based counter of the increment.
    blow_count : int
        Hammer blows recorded for the increment.
    penetration : float
        Distance the sampler advanced during the increment, in the same
        length unit as the increment length.
    weight_of_rods : bool
        Sampler advanced under the weight of the rods alone.
    weight_of_hammer : bool
        Sampler advanced under the weight of rods plus hammer.
    """

    index: int
    blow_count: int
    penetration: float
    weight_of_rods: bool = False
    weight_of_hammer: bool = False


@dataclass(frozen=True)
class SptResult:
    n_value: int | None = None
    sentinel: str | None = None
    termination_reason: str | None = None
    n60: int | None = None
    n1_60: int | None = None


def spt_reduce(drive_sets: list[DriveSet], increment_length: float) -> SptResult:
    """Reduce SPT drive sets to the standard penetration resistance.

    N is the sum of the blow counts of the second and third increments when
    all three increments reached full penetration.  Termination conditions
    (50 blows in an increment, 100 blows total, no advance after 10
    consecutive blows) or weight-of-rods / weight-of-hammer advance yield a
    sentinel instead of a numeric N.

    Parameters
    ----------
    drive_sets : list of DriveSet
        One to three increments with contiguous indexes starting at 1.
    increment_length : float
        Full advance per increment (0.5 ft for the standard test).

    Returns
    -------
    SptResult
        n_value set when the test completed normally, sentinel otherwise.
    """
    if not drive_sets:
        raise ReductionError("no drive sets")
    if len(drive_sets) > 3:
        raise ReductionError("more than 3 drive sets")
    if increment_length <= 0:
        raise ReductionError("increment length must be positive")
    for offset, ds in enumerate(drive_sets):
        if ds.index != offset + 1:
            raise ReductionError(f"drive set indexes not contiguous at {ds.index}")
        if ds.blow_count < 0:
            raise ReductionError("negative blow count")
        if ds.penetration < 0:
            raise ReductionError("negative penetration")

    for ds in drive_sets:
        if ds.weight_of_rods:
            return SptResult(sentinel="weightOfRods")
        if ds.weight_of_hammer:
            return SptResult(sentinel="weightOfHammer")

    reason = None
    if any(ds.blow_count >= 50 for ds in drive_sets):
        reason = "blows-in-increment"
    elif sum(ds.blow_count for ds in drive_sets) >= 100:
        reason = "total-blows"
    elif any(ds.blow_count >= 10 and ds.penetration == 0 for ds in drive_sets):
        reason = "no-advance"
    if reason is not None:
        return SptResult(sentinel="refusal", termination_reason=reason)

    if len(drive_sets) < 3 or any(ds.penetration < increment_length for ds in drive_sets):
        # partial drive without a recorded termination: no N for this depth
        return SptResult(sentinel="indeterminate")

    n = drive_sets[1].blow_count + drive_sets[2].blow_count
    return SptResult(n_value=n)


def spt_energy_correct(
    n_value: int, energy_transfer_ratio: float, overburden_factor: float = 1.0
) -> tuple[int, int]:
    """Energy-corrected blow counts.

    Parameters
    ----------
    n_value : int
        Measured standard penetration resistance.
    energy_transfer_ratio : float
        Hammer energy transfer ratio in percent (0 < ETR <= 150).
    overburden_factor : float
        cN applied on top of the energy correction for N1,60.

    Returns
    -------
    (n60, n1_60) : tuple of int
        n60 = round(N * ETR / 60); n1_60 = round(N * ETR / 60 * cN),
        both rounded half away from zero.
    """
    if n_value is None:
        raise ReductionError("n_value is a sentinel, cannot energy-correct")
    if not 0 < energy_transfer_ratio <= 150:
        raise ReductionError(f"energy transfer ratio {energy_transfer_ratio} out of (0, 150]")
    n60 = round_half_away(n_value * energy_transfer_ratio / 60.0)
    n1_60 = round_half_away(n_value * energy_transfer_ratio / 60.0 * overburden_factor)
    return n60, n1_60


def reduce_spt(
    drive_sets: list[DriveSet],
    increment_length: float,
    energy_transfer_ratio: float | None = None,
    overburden_factor: float = 1.0,
) -> SptResult:
    """spt_reduce plus the energy corrections when an ETR is supplied."""
    result = spt_reduce(drive_sets, increment_length)
    if result.n_value is None or energy_transfer_ratio is None:
        return result
    n60, n1_60 = spt_energy_correct(result.n_value, energy_transfer_ratio, overburden_factor)
    return SptResult(n_value=result.n_value, n60=n60, n1_60=n1_60)


# ---------------------------------------------------------------------------
# Atterberg limits


@dataclass(frozen=True)
class AtterbergResult:
    liquid_limit: int | None
    plastic_limit: int | None
    plasticity_index: int | None

    @property
    def non_plastic(self) -> bool:
        return self.plasticity_index is None


def liquid_limit_water_content(points: list[tuple[float, float]]) -> float | None:
    """Unrounded water content at 25 blows on the flow curve.

    Fits water content as linear in log10(blow count) through the two points
    bracketing 25 blows.  Returns None when 25 blows is not bracketed.

    Parameters
    ----------
    points : list of (blow_count, water_content_percent)
    """
    if len(points) < 2:
        raise ReductionError("liquid limit needs at least 2 points")
    counts = [bc for bc, _ in points]
    if len(set(counts)) != len(counts):
        raise ReductionError("duplicate blow counts")
    if any(bc <= 0 for bc in counts):
        raise ReductionError("blow counts must be positive")
    ordered = sorted(points)
    for bc, w in ordered:
        if bc == 25:
            return float(w)
    for (bc0, w0), (bc1, w1) in zip(ordered, ordered[1:]):
        if bc0 < 25 < bc1:
            t = (math.log10(25) - math.log10(bc0)) / (math.log10(bc1) - math.log10(bc0))
            return w0 + (w1 - w0) * t
    return None


def atterberg_liquid_limit(points: list[tuple[float, float]]) -> int | None:
    """Liquid limit reported as a whole number, or None when undetermined."""
    w = liquid_limit_water_content(points)
    return None if w is None else round_half_away(w)


def atterberg_plastic_limit(water_contents: list[float]) -> int:
    """Plastic limit: mean of the container water contents, rounded."""
    if not water_contents:
        raise ReductionError("plastic limit needs at least one water content")
    return round_half_away(sum(water_contents) / len(water_contents))


def atterberg_reduce(liquid_limit: int | None, plastic_limit: int | None) -> AtterbergResult:
    """Combine LL and PL into the reported result.

    PI = LL - PL when both are determined and LL > PL; otherwise the soil is
    non-plastic (NP) and the plasticity index is None.
    """
    if liquid_limit is None or plastic_limit is None or plastic_limit >= liquid_limit:
        return AtterbergResult(liquid_limit, plastic_limit, None)
    return AtterbergResult(liquid_limit, plastic_limit, liquid_limit - plastic_limit)


# ---------------------------------------------------------------------------
# Cone penetration test


@dataclass(frozen=True)
class CptPoint:
    """One sounding row: depth plus the three measured channels.

    qc and fs must share a stress unit; friction_ratio is filled in percent
    by cpt_derive.
    """

    depth: float
    qc: float
    fs: float
    u2: float = 0.0
    friction_ratio: float | None = None


def cpt_derive(point: CptPoint) -> CptPoint:
    """Return the point with the friction ratio Rf = 100 * fs / qc.

    qc = 0 with fs = 0 gives Rf = 0; qc = 0 with fs > 0 is an error.
    """
    if point.qc == 0:
        if point.fs == 0:
            rf = 0.0
        else:
            raise ReductionError("friction ratio undefined: qc = 0 with nonzero fs")
    else:
        rf = 100.0 * point.fs / point.qc
    return CptPoint(point.depth, point.qc, point.fs, point.u2, rf)


def cpt_derive_series(points: list[CptPoint]) -> list[CptPoint]:
    """Derive Rf for a sounding, checking that depths strictly increase."""
    for p0, p1 in zip(points, points[1:]):
        if p1.depth <= p0.depth:
            raise ReductionError(f"depths not strictly increasing at {p1.depth}")
    return [cpt_derive(p) for p in points]


# ---------------------------------------------------------------------------
# Pressuremeter


@dataclass(frozen=True)
class PressuremeterReading:
    pressure: float
    injected_volume: float
    creep_volume: float = 0.0
    group: int = 2


@dataclass(frozen=True)
class PressuremeterResult:
    creep_pressure: float | None
    limit_pressure: float | None


def _ols_line(points: list[tuple[float, float]]) -> tuple[float, float]:
    # returns (slope, intercept)
    n = len(points)
    sx = sum(x for x, _ in points)
    sy = sum(y for _, y in points)
    sxx = sum(x * x for x, _ in points)
    sxy = sum(x * y for x, y in points)
    denom = n * sxx - sx * sx
    if denom == 0:
        raise ReductionError("degenerate group: all pressures equal")
    slope = (n * sxy - sx * sy) / denom
    intercept = (sy - slope * sx) / n
    return slope, intercept


def pressuremeter_creep_pressure(
    group2: list[tuple[float, float]], group3: list[tuple[float, float]]
) -> float | None:
    """Creep pressure p_f from the (p, V60/30) creep diagram.

    Fits an ordinary-least-squares line through each group of readings and
    returns the abscissa of their intersection.  Undetermined (None) when the
    slopes agree within 1e-9 relative or the intersection falls outside
    [min p of group2, max p of group3].

    Parameters
    ----------
    group2, group3 : lists of (pressure, creep_volume)
        The pseudo-elastic and creep groups of readings; each needs at least
        two points.
    """
    if len(group2) < 2 or len(group3) < 2:
        raise ReductionError("creep pressure needs at least 2 points in each group")
    slope2, int2 = _ols_line(group2)
    slope3, int3 = _ols_line(group3)
    scale = max(abs(slope2), abs(slope3), 1.0)
    if abs(slope2 - slope3) <= 1e-9 * scale:
        return None
    p_f = (int3 - int2) / (slope2 - slope3)
    low = min(p for p, _ in group2)
    high = max(p for p, _ in group3)
    if not low <= p_f <= high:
        return None
    return p_f


def pressuremeter_limit_pressure(
    readings: list[tuple[float, float]], initial_pocket_volume: float
) -> float | None:
    """Limit pressure p_LM: pressure at which injected volume reaches V0.

    The pocket volume has doubled when the injected volume equals the initial
    pocket volume.  Linear interpolation between the two readings bracketing
    V0; None when the target volume is never reached.

    Parameters
    ----------
    readings : list of (pressure, injected_volume), sorted by pressure
    initial_pocket_volume : V0 in the same volume unit as the readings
    """
    if not readings:
        raise ReductionError("no readings")
    pressures = [p for p, _ in readings]
    if any(p1 <= p0 for p0, p1 in zip(pressures, pressures[1:])):
        raise ReductionError("readings not sorted by pressure")
    if readings[0][1] >= initial_pocket_volume:
        raise ReductionError("first reading already at or past the doubled volume")
    for (p0, v0), (p1, v1) in zip(readings, readings[1:]):
        if v0 < initial_pocket_volume <= v1:
            t = (initial_pocket_volume - v0) / (v1 - v0)
            return p0 + (p1 - p0) * t
    return None


def pressuremeter_reduce(
    readings: list[PressuremeterReading], initial_pocket_volume: float
) -> PressuremeterResult:
    """Reduce grouped pressuremeter readings to p_f and p_LM."""
    group2 = [(r.pressure, r.creep_volume) for r in readings if r.group == 2]
    group3 = [(r.pressure, r.creep_volume) for r in readings if r.group == 3]
    p_f = pressuremeter_creep_pressure(group2, group3)
    p_lm = pressuremeter_limit_pressure(
        [(r.pressure, r.injected_volume) for r in readings], initial_pocket_volume
    )
    return PressuremeterResult(creep_pressure=p_f, limit_pressure=p_lm)
