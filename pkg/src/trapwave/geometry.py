"""Channel-junction and grating geometries, and their truncation at z = R.

A junction geometry is a compact scattering region with straight semi-infinite
channels attached.  Each channel carries local coordinates: ``z`` along its axis
(outward to infinity) and ``s`` in ``[0, width]`` across it, measured from the
right-hand wall (looking outward) to the left-hand wall.

The outer boundary is traversed counter-clockwise.  For channel ``j`` that means:
out along its right wall, across the cut, back along its left wall, then along
the junction wall that joins its left corner to the right corner of the next
channel.  Junction walls are therefore given as polylines from
``channel[j].left_corner(start)`` to ``channel[j+1].right_corner(start)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import shapely
from shapely.geometry import LineString, Polygon

from .errors import (
    GeometryError,
    HoleOutsideDomain,
    OpenBoundary,
    OverlappingChannels,
    RTooSmall,
)

WALL_CONDITIONS = ("dirichlet", "neumann")
_TOL = 1e-12


def _as_points(points) -> np.ndarray:
    arr = np.asarray(points, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise GeometryError(f"expected an (n, 2) array of points, got shape {arr.shape}")
    return arr


def arc_points(center, radius, angle0, angle1, eps_geo=1e-4):
    """Polyline approximation of a circular arc, both endpoints included.

    The number of chords is chosen so that the sagitta stays below ``eps_geo``.
    Angles are in radians; the arc runs from ``angle0`` to ``angle1`` (either way).
    """
    span = abs(angle1 - angle0)
    if radius <= 0 or span == 0:
        return np.asarray([center], dtype=float) + radius * np.array(
            [[np.cos(angle0), np.sin(angle0)]]
        )
    ratio = min(1.0, eps_geo / radius)
    max_step = 2.0 * np.arccos(1.0 - ratio)
    n = max(2, int(np.ceil(span / max_step)))
    ang = np.linspace(angle0, angle1, n + 1)
    return np.column_stack([center[0] + radius * np.cos(ang), center[1] + radius * np.sin(ang)])


@dataclass(frozen=True, eq=False)
class ChannelSpec:
    """A straight semi-infinite channel of constant cross-section.

    ``profile`` is the cross-section refractive index n(s) for the Helmholtz
    equation or the potential V(s) for the Schrodinger equation; ``None`` means
    the background medium.
    """

    id: int
    width: float
    origin: tuple
    direction: tuple
    start: float = 0.0
    wall: str = "dirichlet"
    profile: Optional[Callable] = None

    def __post_init__(self):
        if not self.width > 0:
            raise GeometryError(f"channel {self.id}: width must be positive, got {self.width}")
        if abs(np.hypot(*self.direction) - 1.0) >= _TOL:
            raise GeometryError(f"channel {self.id}: axis direction {self.direction} is not a unit vector")
        if self.wall not in WALL_CONDITIONS + ("periodic",):
            raise GeometryError(f"channel {self.id}: unknown wall condition {self.wall!r}")
        object.__setattr__(self, "origin", tuple(float(v) for v in self.origin))
        object.__setattr__(self, "direction", tuple(float(v) for v in self.direction))

    @property
    def e(self) -> np.ndarray:
        return np.asarray(self.direction)

    @property
    def t(self) -> np.ndarray:
        """Left-hand unit normal of the axis."""
        return np.array([-self.direction[1], self.direction[0]])

    def right_corner(self, z: float) -> np.ndarray:
        return np.asarray(self.origin) + z * self.e - 0.5 * self.width * self.t

    def left_corner(self, z: float) -> np.ndarray:
        return np.asarray(self.origin) + z * self.e + 0.5 * self.width * self.t

    def to_local(self, points):
        """Return ``(z, s)`` channel coordinates of an ``(n, 2)`` point array."""
        rel = np.asarray(points, dtype=float) - np.asarray(self.origin)
        z = rel @ self.e
        s = rel @ self.t + 0.5 * self.width
        return z, s

    def strip(self, z0: float, z1: float) -> Polygon:
        return Polygon(
            [self.right_corner(z0), self.right_corner(z1), self.left_corner(z1), self.left_corner(z0)]
        )


@dataclass(frozen=True, eq=False)
class Wall:
    """Boundary polyline with a single boundary condition."""

    points: np.ndarray
    condition: str = "dirichlet"
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "points", _as_points(self.points))
        if self.condition not in WALL_CONDITIONS:
            raise GeometryError(f"wall {self.name!r}: unknown condition {self.condition!r}")


@dataclass(frozen=True, eq=False)
class Hole:
    """Closed interior boundary (the first point is not repeated)."""

    points: np.ndarray
    condition: str = "dirichlet"
    name: str = ""

    def __post_init__(self):
        pts = _as_points(self.points)
        if np.allclose(pts[0], pts[-1]):
            pts = pts[:-1]
        object.__setattr__(self, "points", pts)
        if self.condition not in WALL_CONDITIONS:
            raise GeometryError(f"hole {self.name!r}: unknown condition {self.condition!r}")


@dataclass(frozen=True, eq=False)
class JunctionSpec:
    """Compact scattering region.

    ``walls[j]`` joins channel ``j``'s left corner to channel ``j+1``'s right
    corner (cyclically).  ``medium`` maps ``(x, y)`` arrays to n(x) or V(x); it
    must equal the background outside radius ``R0`` of every channel.
    """

    walls: Sequence[Wall]
    R0: float = 0.0
    holes: Sequence[Hole] = ()
    medium: Optional[Callable] = None


@dataclass(frozen=True, eq=False)
class GratingSpec:
    """One period of a grating, normalised to the strip y in [-pi, pi].

    Coordinates are ``(y, z)``: ``y`` along the grating (periodic), ``z`` normal
    to it.  With ``sides == ("above",)`` the strip is bounded below by the
    ``profile`` polyline running from y = -pi to y = pi; with both sides the
    grating consists of the ``obstacles`` and the strip is open in both
    directions.  Either ``alpha`` or the incidence angle ``theta`` is given.
    """

    profile: Optional[np.ndarray] = None
    obstacles: Sequence[Hole] = ()
    sides: tuple = ("above",)
    theta: Optional[float] = None
    alpha: Optional[float] = None
    R0: float = 0.0
    wall: str = "dirichlet"
    period: float = 2 * np.pi
    medium: Optional[Callable] = None

    def __post_init__(self):
        if self.profile is not None:
            object.__setattr__(self, "profile", _as_points(self.profile))
        if (self.theta is None) == (self.alpha is None):
            raise GeometryError("grating: give exactly one of alpha or theta")
        if self.theta is not None and not abs(self.theta) < np.pi / 2:
            raise GeometryError(f"grating: |theta| must be below pi/2, got {self.theta}")
        if tuple(self.sides) not in (("above",), ("above", "below")):
            raise GeometryError(f"grating: sides must be ('above',) or ('above', 'below'), got {self.sides}")

    def alpha_for(self, k: float) -> float:
        from .modes import grating_alpha

        if self.alpha is not None:
            return float(self.alpha)
        return grating_alpha(k, self.theta)


@dataclass(frozen=True, eq=False)
class PlanarDomain:
    """Polygon with holes whose boundary edges carry string tags.

    ``rings[0]`` is the outer boundary (counter-clockwise), the others are holes.
    ``ring_tags[i][e]`` tags the edge from vertex ``e`` to ``e + 1``.  Embedded
    polylines are interior constraint curves (e.g. electrodes).
    """

    rings: tuple
    ring_tags: tuple
    embedded: tuple = ()
    embedded_tags: tuple = ()

    @property
    def polygon(self) -> Polygon:
        return Polygon(self.rings[0], holes=list(self.rings[1:]))

    @property
    def area(self) -> float:
        return float(self.polygon.area)

    def tags(self) -> set:
        out = {t for tags in self.ring_tags for t in tags}
        out.update(self.embedded_tags)
        return out


@dataclass(frozen=True, eq=False)
class Geometry:
    """Validated junction geometry (see :func:`build_geometry`)."""

    channels: tuple
    junction: JunctionSpec

    @property
    def R0(self) -> float:
        return self.junction.R0

    @property
    def medium(self):
        return self.junction.medium

    @property
    def holes(self):
        return tuple(self.junction.holes)

    def channel(self, cid: int) -> ChannelSpec:
        for ch in self.channels:
            if ch.id == cid:
                return ch
        raise KeyError(cid)


@dataclass(frozen=True, eq=False)
class GratingGeometry:
    spec: GratingSpec
    channels: tuple

    @property
    def R0(self) -> float:
        return self.spec.R0

    @property
    def medium(self):
        return self.spec.medium

    def channel(self, cid: int) -> ChannelSpec:
        return self.channels[cid]


@dataclass(frozen=True, eq=False)
class TruncatedDomain:
    geometry: object
    R: float
    domain: PlanarDomain
    cuts: dict = field(default_factory=dict)

    @property
    def channels(self):
        return self.geometry.channels

    @property
    def is_grating(self) -> bool:
        return isinstance(self.geometry, GratingGeometry)

    def cut_length(self, cid: int) -> float:
        a, b = self.cuts[cid]
        return float(np.hypot(*(b - a)))


def _dedupe_ring(points, tags):
    """Drop zero-length edges, keeping the tag of the surviving edge."""
    pts, tg = [], []
    n = len(points)
    for i in range(n):
        a, b = points[i], points[(i + 1) % n]
        if np.hypot(*(b - a)) <= _TOL * max(1.0, np.abs(a).max()):
            continue
        pts.append(a)
        tg.append(tags[i])
    return np.asarray(pts), tuple(tg)


def _junction_ring(channels, walls, R):
    pts, tags = [], []
    for j, ch in enumerate(channels):
        wall_tag = ch.wall
        pts.append(ch.right_corner(ch.start))
        tags.append(wall_tag)
        pts.append(ch.right_corner(R))
        tags.append(f"cut:{ch.id}")
        pts.append(ch.left_corner(R))
        tags.append(wall_tag)
        wall = walls[j]
        # the wall polyline starts at this left corner; skip its first point
        pts.append(ch.left_corner(ch.start))
        tags.append(wall.condition)
        for p in wall.points[1:-1]:
            pts.append(np.asarray(p))
            tags.append(wall.condition)
    return _dedupe_ring(np.asarray(pts), tags)


def build_geometry(channels: Sequence[ChannelSpec], junction: JunctionSpec) -> Geometry:
    """Validate a channel junction: watertight walls, non-overlapping channels, holes inside."""
    channels = tuple(channels)
    if not channels:
        raise GeometryError("at least one channel is required")
    if len(junction.walls) != len(channels):
        raise OpenBoundary(
            f"need one junction wall per channel ({len(channels)}), got {len(junction.walls)}"
        )
    ids = [ch.id for ch in channels]
    if len(set(ids)) != len(ids):
        raise GeometryError(f"duplicate channel ids {ids}")
    for ch in channels:
        if ch.wall == "periodic":
            raise GeometryError(f"channel {ch.id}: periodic walls are only allowed for gratings")
        if junction.R0 < ch.start - _TOL:
            raise GeometryError(
                f"channel {ch.id}: R0={junction.R0} lies before the channel start {ch.start}"
            )

    n = len(channels)
    for j, ch in enumerate(channels):
        nxt = channels[(j + 1) % n]
        wall = junction.walls[j]
        name = wall.name or f"wall {j}"
        scale = max(1.0, float(np.abs(wall.points).max()))
        if np.hypot(*(wall.points[0] - ch.left_corner(ch.start))) > _TOL * scale:
            raise OpenBoundary(f"{name} does not start at the left corner of channel {ch.id}")
        if np.hypot(*(wall.points[-1] - nxt.right_corner(nxt.start))) > _TOL * scale:
            raise OpenBoundary(f"{name} does not end at the right corner of channel {nxt.id}")

    span = 50.0 * max(ch.width for ch in channels) + junction.R0
    strips = [ch.strip(ch.start, ch.start + span) for ch in channels]
    for i in range(n):
        for j in range(i + 1, n):
            inter = strips[i].intersection(strips[j]).area
            if inter > 1e-12 * span:
                raise OverlappingChannels(
                    f"channels {channels[i].id} and {channels[j].id} overlap (area {inter:.3g})"
                )

    R_test = junction.R0 + max(ch.width for ch in channels)
    ring, _ = _junction_ring(channels, junction.walls, R_test)
    outer = Polygon(ring)
    if not outer.is_valid or not LineString(np.vstack([ring, ring[:1]])).is_simple:
        raise OpenBoundary("junction boundary is not a simple closed curve: " + shapely.is_valid_reason(outer))
    if shapely.is_ccw(shapely.LinearRing(ring)) is False:
        raise OpenBoundary("junction boundary must run counter-clockwise (check channel order)")
    for k, hole in enumerate(junction.holes):
        hp = Polygon(hole.points)
        if not hp.is_valid:
            raise OpenBoundary(f"hole {hole.name or k} is not a simple closed curve")
        if not outer.contains(hp):
            raise HoleOutsideDomain(f"hole {hole.name or k} is not strictly inside the junction")
    return Geometry(channels=channels, junction=junction)


def build_grating(spec: GratingSpec) -> GratingGeometry:
    """Validate a grating period and attach its above/below channels."""
    half = 0.5 * spec.period
    if abs(spec.period - 2 * np.pi) > 1e-12:
        raise GeometryError("grating period must be normalised to 2*pi")
    channels = [ChannelSpec(0, spec.period, (0.0, 0.0), (0.0, 1.0), wall="periodic")]
    if "below" in spec.sides:
        channels.append(ChannelSpec(1, spec.period, (0.0, 0.0), (0.0, -1.0), wall="periodic"))
        if spec.profile is not None:
            raise GeometryError("two-sided gratings are described by obstacles, not a profile")
    else:
        if spec.profile is None:
            raise GeometryError("one-sided grating needs a profile")
        p = spec.profile
        if abs(p[0, 0] + half) > _TOL or abs(p[-1, 0] - half) > _TOL:
            raise GeometryError("grating profile must run from y=-pi to y=pi")
        if abs(p[0, 1] - p[-1, 1]) > _TOL:
            raise GeometryError("grating profile endpoints must have equal height")
        if np.any(np.abs(p[:, 0]) > half + _TOL):
            raise GeometryError("grating profile leaves the period strip")
        if np.any(p[:, 1] > spec.R0 + _TOL):
            raise GeometryError("grating profile rises above R0")
    for k, ob in enumerate(spec.obstacles):
        if np.any(np.abs(ob.points[:, 0]) >= half) or np.any(np.abs(ob.points[:, 1]) > spec.R0 + _TOL):
            raise HoleOutsideDomain(f"obstacle {ob.name or k} leaves the period strip or |z| <= R0")
    return GratingGeometry(spec=spec, channels=tuple(channels))


def truncate(geometry, R: float) -> TruncatedDomain:
    """Cut every channel at z = R and return the tagged finite domain."""
    if not R > geometry.R0:
        raise RTooSmall(f"R={R} must exceed R0={geometry.R0}")
    if isinstance(geometry, GratingGeometry):
        return _truncate_grating(geometry, R)
    ring, tags = _junction_ring(geometry.channels, geometry.junction.walls, R)
    rings = [ring]
    ring_tags = [tags]
    for hole in geometry.junction.holes:
        pts = hole.points
        if shapely.is_ccw(shapely.LinearRing(pts)):
            pts = pts[::-1]
        rings.append(pts)
        ring_tags.append((hole.condition,) * len(pts))
    cuts = {ch.id: (ch.right_corner(R), ch.left_corner(R)) for ch in geometry.channels}
    dom = PlanarDomain(rings=tuple(rings), ring_tags=tuple(ring_tags))
    return TruncatedDomain(geometry=geometry, R=float(R), domain=dom, cuts=cuts)


def _truncate_grating(geometry: GratingGeometry, R: float) -> TruncatedDomain:
    spec = geometry.spec
    half = 0.5 * spec.period
    ch_up = geometry.channels[0]
    if "below" in spec.sides:
        ch_dn = geometry.channels[1]
        ring = np.array([[-half, -R], [half, -R], [half, R], [-half, R]])
        tags = (f"cut:{ch_dn.id}", "qp_slave", f"cut:{ch_up.id}", "qp_master")
        cuts = {ch_up.id: (ch_up.right_corner(R), ch_up.left_corner(R)),
                ch_dn.id: (ch_dn.right_corner(R), ch_dn.left_corner(R))}
    else:
        prof = spec.profile
        pts = list(prof) + [np.array([half, R]), np.array([-half, R])]
        tags = (spec.wall,) * (len(prof) - 1) + ("qp_slave", f"cut:{ch_up.id}", "qp_master")
        ring = np.asarray(pts)
        cuts = {ch_up.id: (ch_up.right_corner(R), ch_up.left_corner(R))}
    ring, tags = _dedupe_ring(ring, tags)
    rings, ring_tags = [ring], [tags]
    for ob in spec.obstacles:
        pts = ob.points
        if shapely.is_ccw(shapely.LinearRing(pts)):
            pts = pts[::-1]
        rings.append(pts)
        ring_tags.append((ob.condition,) * len(pts))
    dom = PlanarDomain(rings=tuple(rings), ring_tags=tuple(ring_tags))
    return TruncatedDomain(geometry=geometry, R=float(R), domain=dom, cuts=cuts)
