"""Linear referencing along borehole trajectories.

Positions along a trajectory (depths) are mapped to geographic geometry by
taking the position as a fraction of the declared borehole length and
interpolating at that fraction of the cumulative chord length of the
trajectory linestring.  Interpolation happens in a local east-north-up
tangent frame anchored at the first vertex, so endpoints round-trip exactly
and sub-kilometre geometry stays well below survey noise.
"""

from __future__ import annotations

import math
from fractions import Fraction

# Exact metre factors per supported unit code.  ftUS is the US survey foot.
UNIT_TO_METRE = {
    "m": Fraction(1),
    "cm": Fraction(1, 100),
    "mm": Fraction(1, 1000),
    "ft": Fraction(3048, 10000),
    "ftUS": Fraction(1200, 3937),
}

LENGTH_UNITS = tuple(UNIT_TO_METRE)

_EARTH_RADIUS = 6378137.0  # WGS84 semi-major axis


class LinearReferencingError(ValueError):
    """Raised for unit or geometry problems in linear referencing."""


def convert_length(value: float, from_unit: str, to_unit: str) -> float:
    """Convert a length between unit codes using exact rational factors."""
    try:
        factor = UNIT_TO_METRE[from_unit] / UNIT_TO_METRE[to_unit]
    except KeyError as exc:
        raise LinearReferencingError(f"unknown length unit {exc.args[0]!r}") from None
    if factor == 1:
        return value
    return value * float(factor)


def _to_enu(vertex, origin):
    lon0, lat0, h0 = origin
    lon, lat = vertex[0], vertex[1]
    h = vertex[2] if len(vertex) > 2 else 0.0
    scale = _EARTH_RADIUS * math.pi / 180.0
    east = (lon - lon0) * scale * math.cos(math.radians(lat0))
    north = (lat - lat0) * scale
    return east, north, h - h0


def _from_enu(east, north, up, origin):
    lon0, lat0, h0 = origin
    scale = _EARTH_RADIUS * math.pi / 180.0
    lon = lon0 + east / (scale * math.cos(math.radians(lat0)))
    lat = lat0 + north / scale
    return [lon, lat, h0 + up]


def _origin(coordinates):
    first = coordinates[0]
    h = first[2] if len(first) > 2 else 0.0
    return first[0], first[1], h


def _chord_lengths(enu_vertices):
    lengths = [0.0]
    for (e0, n0, u0), (e1, n1, u1) in zip(enu_vertices, enu_vertices[1:]):
        step = math.sqrt((e1 - e0) ** 2 + (n1 - n0) ** 2 + (u1 - u0) ** 2)
        lengths.append(lengths[-1] + step)
    return lengths


def _vertex_point(vertex):
    if len(vertex) > 2:
        return list(vertex[:3])
    return list(vertex[:2])


def point_at_fraction(coordinates, fraction: float):
    """Point on the linestring at the given fraction of cumulative chord length.

    ``fraction`` 0 and 1 return the first and last vertex bit-exactly.
    """
    if len(coordinates) < 2:
        raise LinearReferencingError("trajectory geometry needs at least 2 vertices")
    if not 0.0 <= fraction <= 1.0:
        raise LinearReferencingError(f"fraction {fraction} out of [0, 1]")
    if fraction == 0.0:
        return _vertex_point(coordinates[0])
    if fraction == 1.0:
        return _vertex_point(coordinates[-1])
    origin = _origin(coordinates)
    enu = [_to_enu(v, origin) for v in coordinates]
    lengths = _chord_lengths(enu)
    total = lengths[-1]
    if total == 0.0:
        raise LinearReferencingError("degenerate trajectory: all vertices coincide")
    target = fraction * total
    for i in range(1, len(lengths)):
        if target <= lengths[i]:
            span = lengths[i] - lengths[i - 1]
            t = 0.0 if span == 0.0 else (target - lengths[i - 1]) / span
            e0, n0, u0 = enu[i - 1]
            e1, n1, u1 = enu[i]
            return _from_enu(
                e0 + (e1 - e0) * t,
                n0 + (n1 - n0) * t,
                u0 + (u1 - u0) * t,
                origin,
            )
    return _vertex_point(coordinates[-1])


def point_at_position(
    coordinates,
    declared_length: float,
    declared_uom: str,
    position: float,
    position_uom: str | None = None,
):
    """Geographic point for a 1-D position along the trajectory.

    Parameters
    ----------
    coordinates : list of [lon, lat(, height)] WGS84 vertices
    declared_length : borehole length in ``declared_uom``
    position : distance from the collar in ``position_uom`` (defaults to
        ``declared_uom``)
    """
    if declared_length <= 0:
        raise LinearReferencingError("declared length must be positive")
    pos = convert_length(position, position_uom or declared_uom, declared_uom)
    if not 0.0 <= pos <= declared_length:
        raise LinearReferencingError(
            f"position {pos} {declared_uom} outside [0, {declared_length}]"
        )
    return point_at_fraction(coordinates, pos / declared_length)


def segment_geometry(
    coordinates,
    declared_length: float,
    declared_uom: str,
    from_position: float,
    to_position: float,
    position_uom: str | None = None,
):
    """Sub-linestring between two positions, keeping intervening vertices."""
    uom = position_uom or declared_uom
    start = convert_length(from_position, uom, declared_uom)
    end = convert_length(to_position, uom, declared_uom)
    if not 0.0 <= start < end <= declared_length:
        raise LinearReferencingError(
            f"segment [{start}, {end}] {declared_uom} invalid for length {declared_length}"
        )
    first = point_at_fraction(coordinates, start / declared_length)
    last = point_at_fraction(coordinates, end / declared_length)
    origin = _origin(coordinates)
    enu = [_to_enu(v, origin) for v in coordinates]
    lengths = _chord_lengths(enu)
    total = lengths[-1]
    points = [first]
    for vertex, dist in zip(coordinates, lengths):
        f = dist / total
        if start / declared_length < f < end / declared_length:
            points.append(_vertex_point(vertex))
    points.append(last)
    return points


def sampling_geometry(sampling: dict, trajectory: dict, coordinates, *, offset_kind: str = "hole"):
    """Geometry for a sampling record against its trajectory.

    ``sampling`` carries atPosition or fromPosition/toPosition plus
    positionUom; ``trajectory`` carries lengthHole, uom and the offsets.
    Offsets shift the position origin (added to the position) before the
    fraction is computed.  A sampling without positions spans the entire
    trajectory.
    """
    declared_uom = trajectory.get("uom", "m")
    declared_length = trajectory.get("lengthHole")
    if declared_length is None:
        raise LinearReferencingError("trajectory has no lengthHole")
    offset = trajectory.get("offsetCore" if offset_kind == "core" else "offsetHole") or 0.0
    uom = sampling.get("positionUom", declared_uom)

    def shifted(value):
        return convert_length(value, uom, declared_uom) + offset

    if sampling.get("atPosition") is not None:
        point = point_at_position(
            coordinates, declared_length, declared_uom, shifted(sampling["atPosition"]), declared_uom
        )
        return {"type": "Point", "coordinates": point}
    if sampling.get("fromPosition") is not None and sampling.get("toPosition") is not None:
        coords = segment_geometry(
            coordinates,
            declared_length,
            declared_uom,
            shifted(sampling["fromPosition"]),
            shifted(sampling["toPosition"]),
            declared_uom,
        )
        return {"type": "LineString", "coordinates": coords}
    return {"type": "LineString", "coordinates": [_vertex_point(v) for v in coordinates]}
