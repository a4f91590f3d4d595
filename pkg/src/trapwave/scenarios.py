"""Parametrised example geometries and the electrostatic handling potential.

All lengths are in units of the guide width ``d``.  Each ``make_*`` function
returns a validated :class:`~trapwave.geometry.Geometry`.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from matplotlib.tri import LinearTriInterpolator, Triangulation
from scipy.sparse.linalg import spsolve

from .errors import ConfigError
from .geometry import (
    ChannelSpec,
    GratingSpec,
    Hole,
    JunctionSpec,
    PlanarDomain,
    Wall,
    arc_points,
    build_geometry,
    build_grating,
)
from .mesh import generate_mesh
from .solver import DiscreteField, stiffness_matrix

EPS_GEO = 1e-4


def _unit(angle):
    return (float(np.cos(angle)), float(np.sin(angle)))


def _two_channel(c0, c1, wall0, wall1, R0=0.0, medium=None, holes=()):
    walls = [Wall(np.asarray(wall0), "dirichlet", "lower"), Wall(np.asarray(wall1), "dirichlet", "upper")]
    return build_geometry([c0, c1], JunctionSpec(walls, R0=R0, holes=holes, medium=medium))


@dataclass(frozen=True)
class StripParams:
    d: float = 1.0
    L: float = 1.0
    wall: str = "dirichlet"


@dataclass(frozen=True)
class StepParams:
    d: float = 1.0
    ratio: float = 2.0


@dataclass(frozen=True)
class GratingParams:
    width: float = np.pi
    depth: float = 1.0
    theta: float = np.pi / 6
    wall: str = "dirichlet"


def make_straight_strip(d=1.0, L=1.0, wall="dirichlet"):
    """Strip of width ``d``; the two channel origins are ``L`` apart."""
    c0 = ChannelSpec(0, d, (-L / 2, 0.0), (-1.0, 0.0), wall=wall)
    c1 = ChannelSpec(1, d, (L / 2, 0.0), (1.0, 0.0), wall=wall)
    walls = [Wall(np.array([c0.left_corner(0), c1.right_corner(0)]), wall),
             Wall(np.array([c1.left_corner(0), c0.right_corner(0)]), wall)]
    return build_geometry([c0, c1], JunctionSpec(walls, R0=0.0))


def make_width_step(d=1.0, ratio=2.0):
    """Symmetric step from width ``d`` (channel 0, x < 0) to ``ratio * d`` (channel 1, x > 0)."""
    if not ratio >= 1:
        raise ConfigError(f"width ratio must be at least 1, got {ratio}")
    c0 = ChannelSpec(0, d, (0.0, 0.0), (-1.0, 0.0))
    c1 = ChannelSpec(1, ratio * d, (0.0, 0.0), (1.0, 0.0))
    return _two_channel(c0, c1, [c0.left_corner(0), c1.right_corner(0)],
                        [c1.left_corner(0), c0.right_corner(0)])


@dataclass(frozen=True)
class IndentationParams:
    d: float = 1.0
    b: float = 2.0
    depth: float = 1.0
    smooth: bool = False

    def __post_init__(self):
        if self.b < 0 or self.depth < 0:
            raise ConfigError("indentation length and depth must be non-negative")


def make_indented_waveguide(p: IndentationParams = IndentationParams()):
    """Strip ``|y| < d/2`` with a one-sided outward bump of length b and height ``depth`` on top.

    Channel origins sit at the ends of the bump, so ``R0 = 0``.  ``smooth``
    replaces the rectangle by the profile ``d/2 + depth cos^2(pi x / b)``.
    """
    d, b, depth = p.d, p.b, p.depth
    if b == 0 or depth == 0:
        return make_straight_strip(d, b)
    c0 = ChannelSpec(0, d, (-b / 2, 0.0), (-1.0, 0.0))
    c1 = ChannelSpec(1, d, (b / 2, 0.0), (1.0, 0.0))
    lower = [c0.left_corner(0), c1.right_corner(0)]
    if p.smooth:
        x = np.linspace(b / 2, -b / 2, max(65, int(np.ceil(b / 0.01)) + 1))
        top = np.column_stack([x, d / 2 + depth * np.cos(np.pi * x / b) ** 2])
        top[0] = c1.left_corner(0)
        top[-1] = c0.right_corner(0)
        upper = top
    else:
        upper = [c1.left_corner(0), (b / 2, d / 2 + depth), (-b / 2, d / 2 + depth), c0.right_corner(0)]
    return _two_channel(c0, c1, lower, upper)


@dataclass(frozen=True)
class BentWaveguideParams:
    """Two-arc S-bend: turn left by ``beta`` then right by ``beta`` on centre-line radius ``rho``.

    ``lead`` is the straight length of width ``d`` between the bend and each
    wide lead of width ``H`` (leads are only attached when requested).
    """

    d: float = 1.0
    rho: float = 0.75
    beta: float = np.pi
    H: float = 2.0
    lead: float = 4.0

    def __post_init__(self):
        if not self.rho > self.d / 2:
            raise ConfigError(f"bend radius must exceed d/2, got {self.rho}")
        if not self.H >= self.d:
            raise ConfigError(f"lead width H must be at least d, got {self.H}")
        if not 0 < self.beta <= np.pi:
            raise ConfigError(f"turn angle must lie in (0, pi], got {self.beta}")


def _bend_walls(p: BentWaveguideParams):
    """Right-hand and left-hand wall polylines of the S-bend, both from start to end."""
    d, rho, beta = p.d, p.rho, p.beta
    c1 = np.array([0.0, rho])
    a_start = -np.pi / 2
    a_mid = a_start + beta
    e1 = c1 + rho * np.array(_unit(a_mid))
    c2 = e1 + (e1 - c1)
    b_start = a_mid + np.pi
    b_end = b_start - beta
    right = np.vstack([arc_points(c1, rho + d / 2, a_start, a_mid, EPS_GEO),
                       arc_points(c2, rho - d / 2, b_start, b_end, EPS_GEO)[1:]])
    left = np.vstack([arc_points(c1, rho - d / 2, a_start, a_mid, EPS_GEO),
                      arc_points(c2, rho + d / 2, b_start, b_end, EPS_GEO)[1:]])
    end = c2 + rho * np.array(_unit(b_end))
    heading = b_end - np.pi / 2  # clockwise motion: tangent is radius rotated by -90 deg
    return right, left, end, heading


def make_bent_waveguide(p: BentWaveguideParams = BentWaveguideParams(), with_leads=False):
    """S-bend of width d; optionally with straight pieces of length ``lead`` and wide leads of width H."""
    d = p.d
    right, left, end, heading = _bend_walls(p)
    e_out = np.array(_unit(heading))
    if not with_leads:
        c0 = ChannelSpec(0, d, (0.0, 0.0), (-1.0, 0.0))
        c1 = ChannelSpec(1, d, tuple(end), tuple(e_out))
        lower = right
        upper = left[::-1]
        return _two_channel(c0, c1, _snap(lower, c0.left_corner(0), c1.right_corner(0)),
                            _snap(upper, c1.left_corner(0), c0.right_corner(0)))
    ell, H = p.lead, p.H
    o0 = np.array([-ell, 0.0])
    o1 = end + ell * e_out
    n_out = np.array([-e_out[1], e_out[0]])
    c0 = ChannelSpec(0, H, tuple(o0), (-1.0, 0.0))
    c1 = ChannelSpec(1, H, tuple(o1), tuple(e_out))
    lower = np.vstack([c0.left_corner(0), o0 + [0, -d / 2], right,
                       o1 - d / 2 * n_out, c1.right_corner(0)])
    upper = np.vstack([c1.left_corner(0), o1 + d / 2 * n_out, left[::-1],
                       o0 + [0, d / 2], c0.right_corner(0)])
    return _two_channel(c0, c1, _clean(lower), _clean(upper))


def _snap(poly, first, last):
    poly = np.array(poly, dtype=float)
    poly[0] = first
    poly[-1] = last
    return poly


def _clean(poly):
    keep = [0]
    for i in range(1, len(poly)):
        if np.hypot(*(poly[i] - poly[keep[-1]])) > 1e-12:
            keep.append(i)
    return np.asarray(poly)[keep]


@dataclass(frozen=True)
class TriggerParams:
    """Disk resonator with three channels and charged walls.

    ``V[j]`` is the potential of the resonator arc opposite channel ``j``.
    ``B`` is the shield radius; the Laplace region is truncated at ``B + 2 d``.
    """

    rho0: float = 3.0
    d: float = 1.0
    V: tuple = (0.0, (1.5 * np.pi) ** 2, (1.5 * np.pi) ** 2)
    B: float = 4.0
    angles: tuple = (0.0, 2 * np.pi / 3, 4 * np.pi / 3)
    gap: float = 0.1

    def __post_init__(self):
        if not self.rho0 > self.d:
            raise ConfigError(f"resonator radius must exceed d, got {self.rho0}")
        if not self.B > self.rho0:
            raise ConfigError(f"shield radius B must exceed rho0, got {self.B}")
        if len(self.V) != 3 or len(self.angles) != 3:
            raise ConfigError("trigger needs three wall potentials and three channel angles")

    @property
    def B_t(self) -> float:
        return self.B + 2 * self.d


def _trigger_channels(p: TriggerParams):
    start = float(np.sqrt(p.rho0**2 - p.d**2 / 4))
    return [ChannelSpec(j, p.d, (0.0, 0.0), _unit(a), start=start) for j, a in enumerate(p.angles)]


def _wall_arc(center, radius, p_from, p_to):
    """Counter-clockwise arc from ``p_from`` to ``p_to``."""
    a0 = np.arctan2(*(p_from - center)[::-1])
    a1 = np.arctan2(*(p_to - center)[::-1])
    while a1 <= a0:
        a1 += 2 * np.pi
    pts = arc_points(center, radius, a0, a1, EPS_GEO)
    pts[0], pts[-1] = p_from, p_to
    return pts


def make_trigger(p: TriggerParams = TriggerParams(), medium=None, R0=None):
    """Disk of radius rho0 joined to three straight channels (default 120 deg apart)."""
    chans = _trigger_channels(p)
    walls = []
    for j, ch in enumerate(chans):
        nxt = chans[(j + 1) % 3]
        walls.append(Wall(_wall_arc(np.zeros(2), p.rho0, ch.left_corner(ch.start),
                                    nxt.right_corner(nxt.start)), "dirichlet", f"A{j}"))
    R0 = chans[0].start if R0 is None else R0
    return build_geometry(chans, JunctionSpec(walls, R0=R0, medium=medium))


def electrode_index(p: TriggerParams, wall_index: int) -> int:
    """Channel opposite to junction wall ``wall_index`` (the wall between channels j and j+1)."""
    mid = 0.5 * (p.angles[wall_index] + p.angles[(wall_index + 1) % 3]
                 + (2 * np.pi if wall_index == 2 else 0.0))
    opp = (mid + np.pi) % (2 * np.pi)
    diffs = [abs((a - opp + np.pi) % (2 * np.pi) - np.pi) for a in p.angles]
    return int(np.argmin(diffs))


def laplace_domain(p: TriggerParams) -> PlanarDomain:
    """Shielded region: disk of radius B plus channel strips widened by the gap, cut at B + 2d."""
    chans = _trigger_channels(p)
    half = p.d / 2 + p.gap
    pts, tags = [], []
    for j, ch in enumerate(chans):
        e, t = ch.e, ch.t
        zb = float(np.sqrt(p.B**2 - half**2))
        r_in = zb * e - half * t
        r_out = p.B_t * e - half * t
        l_out = p.B_t * e + half * t
        l_in = zb * e + half * t
        pts += [r_in, r_out, l_out]
        tags += ["shield", "shield", "shield"]
        nxt = chans[(j + 1) % 3]
        n_in = zb * nxt.e - half * nxt.t
        arc = _wall_arc(np.zeros(2), p.B, l_in, n_in)
        pts += list(arc[:-1])
        tags += ["shield"] * (len(arc) - 1)
    emb, emb_tags = [], []
    for j, ch in enumerate(chans):
        nxt = chans[(j + 1) % 3]
        arc = _wall_arc(np.zeros(2), p.rho0, ch.left_corner(ch.start), nxt.right_corner(nxt.start))
        emb.append(arc)
        emb_tags.append(f"electrode:{electrode_index(p, j)}")
    return PlanarDomain((np.asarray(pts),), (tuple(tags),), tuple(emb), tuple(emb_tags))


def handling_potential(p: TriggerParams, h: float, mesh=None) -> DiscreteField:
    """P1 solution of the Laplace problem: V_j on the arcs, 0 on the shields and truncation."""
    if mesh is None:
        mesh = generate_mesh(laplace_domain(p), h)
    n = mesh.n_nodes
    K = stiffness_matrix(mesh.points, mesh.triangles).tocsr()
    value = np.zeros(n)
    fixed = np.zeros(n, dtype=bool)
    fixed[mesh.nodes_with_tag("shield")] = True
    for j in range(3):
        ids = mesh.nodes_with_tag(f"electrode:{j}")
        value[ids] = p.V[j]
        fixed[ids] = True
    free = ~fixed
    rhs = -K[free][:, fixed] @ value[fixed]
    value[free] = spsolve(K[free][:, free].tocsc(), rhs)
    return DiscreteField(mesh, value, {"kind": "handling potential", "V": tuple(p.V)})


def potential_function(field: DiscreteField):
    """Piecewise-linear interpolant ``V(x, y)`` of a nodal field, zero outside its mesh."""
    tri = Triangulation(field.mesh.points[:, 0], field.mesh.points[:, 1], field.mesh.triangles)
    interp = LinearTriInterpolator(tri, np.real(field.values))

    def V(x, y):
        out = interp(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
        return np.ma.filled(out, 0.0)

    return V


def make_trigger_with_potential(p: TriggerParams = TriggerParams(), h=0.05):
    """Scattering geometry of the trigger with the handling potential as Schrodinger medium.

    ``R0`` is placed at the end of the Laplace region, beyond which V = 0.
    """
    field = handling_potential(p, h)
    V = potential_function(field)
    return make_trigger(p, medium=V, R0=p.B_t), field


@dataclass(frozen=True)
class ThreeChannelHoleParams:
    """Three channels 120 deg apart joined by circular fillets of radius ``fillet``; Neumann hole radius ``a``."""

    d: float = 1.0
    a: float = 0.0
    fillet: float = 1.0

    def __post_init__(self):
        if self.a < 0:
            raise ConfigError("hole radius must be non-negative")
        if not self.a < inradius(self):
            raise ConfigError(f"hole radius {self.a} must stay below the junction inradius {inradius(self):.4f}")


def _fillet_center(p, bisector):
    dist = p.d / np.sqrt(3.0) + p.fillet / np.sin(np.pi / 3)
    return dist * np.array(_unit(bisector))


def inradius(p) -> float:
    return float(p.d / np.sqrt(3.0) + p.fillet / np.sin(np.pi / 3) - p.fillet)


def make_three_channel_hole(p: ThreeChannelHoleParams = ThreeChannelHoleParams()):
    z_t = p.d / (2 * np.sqrt(3.0)) + p.fillet / np.sqrt(3.0)
    angles = (0.0, 2 * np.pi / 3, 4 * np.pi / 3)
    chans = [ChannelSpec(j, p.d, (0.0, 0.0), _unit(a), start=z_t) for j, a in enumerate(angles)]
    walls = []
    for j, ch in enumerate(chans):
        nxt = chans[(j + 1) % 3]
        c = _fillet_center(p, angles[j] + np.pi / 3)
        a_from = ch.left_corner(z_t)
        a_to = nxt.right_corner(nxt.start)
        # the fillet is traversed clockwise about its centre (it bulges towards the origin)
        arc = _wall_arc(c, p.fillet, a_to, a_from)[::-1]
        walls.append(Wall(arc, "dirichlet", f"fillet{j}"))
    holes = ()
    if p.a > 0:
        circ = arc_points(np.zeros(2), p.a, 0.0, 2 * np.pi, EPS_GEO)[:-1]
        holes = (Hole(circ, "neumann", "hole"),)
    return build_geometry(chans, JunctionSpec(walls, R0=z_t, holes=holes))


def make_lamellar_grating(width=np.pi, depth=1.0, theta=np.pi / 6, wall="dirichlet"):
    """One period of a lamellar (rectangular-groove) reflection grating, groove centred at y = 0."""
    if not 0 < width < 2 * np.pi:
        raise ConfigError(f"groove width must lie in (0, 2 pi), got {width}")
    w = width / 2
    prof = np.array([[-np.pi, 0.0], [-w, 0.0], [-w, -depth], [w, -depth], [w, 0.0], [np.pi, 0.0]])
    return build_grating(GratingSpec(profile=prof, theta=theta, R0=0.0, wall=wall))
