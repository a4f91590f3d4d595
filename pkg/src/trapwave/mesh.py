"""Conforming triangular meshes of tagged planar domains.

The mesher places nodes along every boundary edge with spacing at most ``h``,
fills the interior with a hexagonal lattice anchored at the global origin,
triangulates with Delaunay and recovers missing boundary segments by midpoint
splitting (conforming Delaunay).  A few sweeps of Laplacian smoothing with
re-triangulation clean up the boundary layer.  Because the lattice is anchored
globally, two domains that share a region get (nearly) identical meshes there.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import shapely
from scipy.spatial import Delaunay
from shapely.geometry import MultiLineString

from .errors import MeshFailure
from .geometry import PlanarDomain, TruncatedDomain

MIN_CUT_SEGMENTS = 7
_MAX_REPAIR = 40


@dataclass(frozen=True, eq=False)
class Mesh:
    points: np.ndarray
    triangles: np.ndarray
    edges: np.ndarray
    edge_tags: tuple
    h: float
    cut_nodes: dict = field(default_factory=dict)
    cut_s: dict = field(default_factory=dict)
    domain: object = None

    @property
    def n_nodes(self) -> int:
        return len(self.points)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    def signed_areas(self) -> np.ndarray:
        p = self.points[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    @property
    def area(self) -> float:
        return float(self.signed_areas().sum())

    def angles(self) -> np.ndarray:
        """Interior angles (degrees), shape (n_triangles, 3)."""
        p = self.points[self.triangles]
        out = np.empty((len(p), 3))
        for i in range(3):
            a = p[:, (i + 1) % 3] - p[:, i]
            b = p[:, (i + 2) % 3] - p[:, i]
            cos = np.einsum("ij,ij->i", a, b) / (np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1))
            out[:, i] = np.degrees(np.arccos(np.clip(cos, -1.0, 1.0)))
        return out

    def edges_with_tag(self, tag: str) -> np.ndarray:
        mask = np.array([t == tag for t in self.edge_tags], dtype=bool)
        return self.edges[mask]

    def nodes_with_tag(self, tag: str) -> np.ndarray:
        e = self.edges_with_tag(tag)
        return np.unique(e.ravel()) if len(e) else np.zeros(0, dtype=int)

    def nodes_with_prefix(self, prefix: str) -> np.ndarray:
        mask = np.array([t.startswith(prefix) for t in self.edge_tags], dtype=bool)
        e = self.edges[mask]
        return np.unique(e.ravel()) if len(e) else np.zeros(0, dtype=int)

    def boundary_nodes(self) -> np.ndarray:
        return np.unique(self.edges.ravel())

    def export_text(self, path) -> None:
        """Plain-text dump: vertex list then triangle list (debugging aid)."""
        with open(path, "w") as fh:
            fh.write(f"# vertices {self.n_nodes}\n")
            for x, y in self.points:
                fh.write(f"{x:.15g} {y:.15g}\n")
            fh.write(f"# triangles {self.n_triangles}\n")
            for a, b, c in self.triangles:
                fh.write(f"{a} {b} {c}\n")


def _segments_of(domain: PlanarDomain):
    """Yield ``(a, b, tag)`` for every ring edge and embedded edge."""
    for ring, tags in zip(domain.rings, domain.ring_tags):
        n = len(ring)
        for i in range(n):
            yield np.asarray(ring[i], float), np.asarray(ring[(i + 1) % n], float), tags[i], True
    for line, tag in zip(domain.embedded, domain.embedded_tags):
        for i in range(len(line) - 1):
            yield np.asarray(line[i], float), np.asarray(line[i + 1], float), tag, False


def _chains(domain: PlanarDomain, corner_deg=8.0, anchors=()):
    """Split every ring / embedded polyline into runs of equal tag without sharp corners.

    Vertices listed in ``anchors`` always end a run, so that straight channel
    walls are resampled independently of the junction outline.
    """
    out = []
    anchors = np.asarray(anchors, dtype=float).reshape(-1, 2)

    def split(pts, tags, closed):
        n = len(pts)
        m = n if closed else n - 1
        corner = np.zeros(n, dtype=bool)
        for i in range(n):
            if not closed and i in (0, n - 1):
                corner[i] = True
                continue
            a, b, c = pts[i - 1], pts[i], pts[(i + 1) % n]
            u, v = b - a, c - b
            turn = np.degrees(abs(np.arctan2(u[0] * v[1] - u[1] * v[0], u @ v)))
            if turn > corner_deg or tags[i - 1] != tags[i % m]:
                corner[i] = True
            elif len(anchors) and np.min(np.hypot(*(anchors - b).T)) < 1e-9 * (1 + np.abs(b).max()):
                corner[i] = True
        if not corner.any():
            corner[0] = True
        starts = np.flatnonzero(corner)
        for k, i0 in enumerate(starts):
            if not closed and i0 == n - 1:
                break
            i1 = starts[(k + 1) % len(starts)] if (closed or k + 1 < len(starts)) else n - 1
            idx = [i0]
            j = i0
            while True:
                j = (j + 1) % n
                idx.append(j)
                if j == i1:
                    break
            out.append((pts[idx], tags[i0 % m]))

    for ring, tags in zip(domain.rings, domain.ring_tags):
        split(np.asarray(ring, float), list(tags), True)
    for line, tag in zip(domain.embedded, domain.embedded_tags):
        line = np.asarray(line, float)
        split(line, [tag] * (len(line) - 1), False)
    return out


def _resample(chain, h, min_pieces=1):
    """Points along a polyline at (nearly) uniform arclength spacing at most ``h``.

    Single straight edges are split exactly; on curved chains the new nodes
    are placed on the polyline itself.
    """
    seg = np.hypot(*np.diff(chain, axis=0).T)
    total = seg.sum()
    n = max(min_pieces, int(np.ceil(total / h - 1e-9)))
    if len(chain) == 2:
        t = np.arange(n + 1) / n
        return chain[0] + t[:, None] * (chain[1] - chain[0])
    # keep polyline vertices when they are already finer than h
    if seg.max() <= h * (1 + 1e-9) and len(seg) <= n * 1.5:
        return chain
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    targets = np.linspace(0.0, total, n + 1)
    x = np.interp(targets, cum, chain[:, 0])
    y = np.interp(targets, cum, chain[:, 1])
    out = np.column_stack([x, y])
    out[0], out[-1] = chain[0], chain[-1]
    return out


def _check_features(domain: PlanarDomain, h: float) -> None:
    for ring in domain.rings:
        n = len(ring)
        for i in range(n):
            a, b = ring[i - 1], ring[i]
            c = ring[(i + 1) % n]
            length = np.hypot(*(c - b))
            if length < h / 10:
                u, v = b - a, c - b
                turn = np.degrees(abs(np.arctan2(u[0] * v[1] - u[1] * v[0], u @ v)))
                if turn > 30.0:
                    raise MeshFailure(
                        f"boundary feature of size {length:.3g} at {tuple(np.round(b, 6))} "
                        f"is smaller than h/10 = {h / 10:.3g}"
                    )


class _NodeSet:
    def __init__(self, scale):
        self.points = []
        self._index = {}
        self._q = 1e-9 * max(1.0, scale)

    def add(self, p) -> int:
        key = (round(p[0] / self._q), round(p[1] / self._q))
        idx = self._index.get(key)
        if idx is None:
            idx = len(self.points)
            self.points.append(np.asarray(p, float))
            self._index[key] = idx
        return idx


def _hex_lattice(bounds, h):
    x0, y0, x1, y1 = bounds
    dy = h * np.sqrt(3.0) / 2
    j0, j1 = int(np.floor(y0 / dy)) - 1, int(np.ceil(y1 / dy)) + 1
    i0, i1 = int(np.floor(x0 / h)) - 1, int(np.ceil(x1 / h)) + 1
    jj, ii = np.meshgrid(np.arange(j0, j1 + 1), np.arange(i0, i1 + 1), indexing="ij")
    x = (ii + 0.5 * (jj % 2)) * h
    y = jj * dy
    return np.column_stack([x.ravel(), y.ravel()])


def _tiebreak(points, h):
    """Tiny position-hashed offsets that make Delaunay choices among cocircular points local.

    Identical points get identical offsets in every mesh, so overlapping parts
    of two domains are triangulated alike.
    """
    q = np.round(points / (1e-9 * h)).astype(np.int64)
    key = (q[:, 0] * 73856093) ^ (q[:, 1] * 19349663)
    u = ((key * 2654435761) % 1000003) / 1000003.0
    v = ((key * 40503) % 999983) / 999983.0
    return points + 1e-7 * h * np.column_stack([u - 0.5, v - 0.5])


def _triangulate(points, polygon, min_area, h):
    tri = Delaunay(_tiebreak(points, h))
    simp = tri.simplices
    cen = points[simp].mean(axis=1)
    keep = shapely.contains_xy(polygon, cen[:, 0], cen[:, 1])
    simp = simp[keep]
    p = points[simp]
    d1 = p[:, 1] - p[:, 0]
    d2 = p[:, 2] - p[:, 0]
    area = 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])
    simp = simp[np.abs(area) > min_area]
    area = area[np.abs(area) > min_area]
    flip = area < 0
    simp[flip] = simp[flip][:, [0, 2, 1]]
    return simp


def _edge_keys(tris, n):
    e = np.vstack([tris[:, [0, 1]], tris[:, [1, 2]], tris[:, [2, 0]]])
    e.sort(axis=1)
    return np.unique(e[:, 0].astype(np.int64) * n + e[:, 1])


def generate_mesh(domain, h: float, smoothing: int = 6) -> Mesh:
    """Mesh a :class:`TruncatedDomain` (or bare :class:`PlanarDomain`) with target size ``h``."""
    if not h > 0:
        raise MeshFailure(f"mesh size must be positive, got {h}")
    trunc = domain if isinstance(domain, TruncatedDomain) else None
    pdom: PlanarDomain = trunc.domain if trunc is not None else domain
    if trunc is not None:
        wmin = min(ch.width for ch in trunc.channels)
        if not h < wmin / 4:
            raise MeshFailure(f"h={h} must be below a quarter of the narrowest channel width ({wmin})")
    _check_features(pdom, h)

    polygon = pdom.polygon
    if not polygon.is_valid:
        raise MeshFailure("domain polygon is invalid: " + shapely.is_valid_reason(polygon))
    shapely.prepare(polygon)
    bounds = polygon.bounds
    scale = max(abs(v) for v in bounds) + 1.0
    nodes = _NodeSet(scale)

    # constrained segments: list of [i, j, tag]
    segs = []
    anchors = []
    if trunc is not None:
        for ch in trunc.channels:
            anchors += [ch.right_corner(ch.start), ch.left_corner(ch.start)]
    for chain, tag in _chains(pdom, anchors=anchors):
        ids = [nodes.add(p) for p in _resample(chain, h, MIN_CUT_SEGMENTS if tag.startswith("cut:") else 1)]
        segs.extend([ids[i], ids[i + 1], tag] for i in range(len(ids) - 1))

    lines = MultiLineString([[a, b] for a, b, _, _ in _segments_of(pdom)])
    shapely.prepare(lines)
    lat = _hex_lattice(bounds, h)
    inside = shapely.contains_xy(polygon, lat[:, 0], lat[:, 1])
    lat = lat[inside]
    dist = shapely.distance(shapely.points(lat), lines)
    interior = lat[dist > 0.55 * h]

    for sweep in range(smoothing + 1):
        tris, interior, segs = _conform(nodes, segs, interior, polygon, h)
        if sweep == smoothing:
            break
        interior = _smooth(np.asarray(nodes.points), interior, tris, polygon, lines, h)
    bpts = np.asarray(nodes.points)

    pts = np.vstack([bpts, interior]) if len(interior) else bpts
    used = np.zeros(len(pts), dtype=bool)
    used[tris.ravel()] = True
    nb = len(bpts)
    if not used[:nb].all():
        raise MeshFailure("some boundary nodes are not attached to any triangle")
    remap = -np.ones(len(pts), dtype=int)
    remap[used] = np.arange(used.sum())
    pts = pts[used]
    tris = remap[tris]
    edges = np.array([[remap[i], remap[j]] for i, j, _ in segs], dtype=int)
    tags = tuple(t for _, _, t in segs)

    cut_nodes, cut_s = {}, {}
    if trunc is not None:
        for cid, (a, b) in trunc.cuts.items():
            ids = np.unique(edges[np.array([t == f"cut:{cid}" for t in tags])].ravel())
            ch = trunc.geometry.channel(cid)
            z, s = ch.to_local(pts[ids])
            order = np.argsort(s)
            cut_nodes[cid] = ids[order]
            cut_s[cid] = s[order]
    mesh = Mesh(points=pts, triangles=tris, edges=edges, edge_tags=tags, h=float(h),
                cut_nodes=cut_nodes, cut_s=cut_s, domain=domain)
    return mesh


def _conform(nodes, segs, interior, polygon, h):
    """Triangulate and split constrained segments until all are mesh edges."""
    min_area = 1e-12 * h * h
    for _ in range(_MAX_REPAIR):
        bpts = np.asarray(nodes.points)
        pts = np.vstack([bpts, interior]) if len(interior) else bpts
        tris = _triangulate(pts, polygon, min_area, h)
        have = _edge_keys(tris, len(pts))
        sg = np.array([s[:2] for s in segs], dtype=np.int64)
        sg.sort(axis=1)
        found = np.isin(sg[:, 0] * len(pts) + sg[:, 1], have)
        if found.all():
            return tris, interior, segs
        missing = set(np.flatnonzero(~found).tolist())
        new_segs = []
        drop = np.zeros(len(interior), dtype=bool)
        for k, (i, j, tag) in enumerate(segs):
            if k not in missing:
                new_segs.append([i, j, tag])
                continue
            pi, pj = bpts[i], bpts[j]
            mid = 0.5 * (pi + pj)
            m = nodes.add(mid)
            new_segs.append([i, m, tag])
            new_segs.append([m, j, tag])
            if len(interior):
                r = 0.5 * np.hypot(*(pj - pi))
                drop |= np.hypot(*(interior - mid).T) < r * (1 + 1e-9)
        # keep periodic partners congruent: split the matching slave/master segment too
        new_segs = _sync_periodic(nodes, new_segs)
        segs = new_segs
        interior = interior[~drop]
    raise MeshFailure("boundary recovery did not converge")


def _sync_periodic(nodes, segs):
    pts = np.asarray(nodes.points)
    master = [s for s in segs if s[2] == "qp_master"]
    slave = [s for s in segs if s[2] == "qp_slave"]
    if not master:
        return segs
    zm = np.unique(np.round(pts[np.unique([i for s in master for i in s[:2]])][:, 1], 12))
    zs = np.unique(np.round(pts[np.unique([i for s in slave for i in s[:2]])][:, 1], 12))
    if len(zm) == len(zs) and np.allclose(zm, zs, atol=1e-12):
        return segs
    xm = pts[master[0][0]][0]
    xs = pts[slave[0][0]][0]
    znew = np.union1d(zm, zs)
    out = [s for s in segs if s[2] not in ("qp_master", "qp_slave")]
    for tag, x in (("qp_master", xm), ("qp_slave", xs)):
        ids = [nodes.add(np.array([x, z])) for z in znew]
        for a, b in zip(ids[:-1], ids[1:]):
            out.append([a, b, tag] if tag == "qp_slave" else [b, a, tag])
    return out


def _smooth(bpts, interior, tris, polygon, lines, h):
    """One Laplacian sweep over interior nodes; moves that leave the domain are rejected."""
    nb = len(bpts)
    n = nb + len(interior)
    keys = _edge_keys(tris, n)
    e = np.column_stack([keys // n, keys % n])
    e = np.vstack([e, e[:, ::-1]])
    pts = np.vstack([bpts, interior])
    acc = np.zeros((n, 2))
    cnt = np.zeros(n)
    np.add.at(acc, e[:, 0], pts[e[:, 1]])
    np.add.at(cnt, e[:, 0], 1.0)
    new = pts.copy()
    ok = cnt > 0
    new[ok] = acc[ok] / cnt[ok, None]
    cand = new[nb:]
    inside = shapely.contains_xy(polygon, cand[:, 0], cand[:, 1])
    dist = np.zeros(len(cand))
    if inside.any():
        dist[inside] = shapely.distance(shapely.points(cand[inside]), lines)
    accept = inside & (dist > 0.3 * h)
    out = interior.copy()
    out[accept] = cand[accept]
    return out


def check_mesh(mesh: Mesh, min_angle: float = 15.0) -> dict:
    """Evaluate the mesh validity predicates; raise :class:`MeshFailure` on violation."""
    areas = mesh.signed_areas()
    if not (areas > 0).all():
        raise MeshFailure(f"{(areas <= 0).sum()} triangles with non-positive signed area")
    tri = mesh.triangles
    e = np.vstack([tri[:, [0, 1]], tri[:, [1, 2]], tri[:, [2, 0]]])
    e.sort(axis=1)
    uniq, counts = np.unique(e, axis=0, return_counts=True)
    if counts.max() > 2:
        raise MeshFailure("an edge is shared by more than two triangles")
    once = {tuple(x) for x in uniq[counts == 1]}
    be = np.sort(mesh.edges[[not t.startswith("embedded") for t in mesh.edge_tags]], axis=1)
    ring_edges = {tuple(x) for x in be}
    emb = {tuple(x) for x, t in zip(np.sort(mesh.edges, axis=1), mesh.edge_tags)
           if t.startswith("electrode") or t.startswith("embedded")}
    ring_edges -= emb
    if once != ring_edges:
        raise MeshFailure(
            f"boundary mismatch: {len(once - ring_edges)} free edges untagged, "
            f"{len(ring_edges - once)} tagged edges not on the boundary"
        )
    amin = float(mesh.angles().min())
    if amin <= min_angle:
        raise MeshFailure(f"minimum angle {amin:.2f} deg is below {min_angle} deg")
    info = {"n_nodes": mesh.n_nodes, "n_triangles": mesh.n_triangles, "min_angle": amin,
            "area": mesh.area}
    dom = mesh.domain
    if isinstance(dom, TruncatedDomain):
        for cid, ids in mesh.cut_nodes.items():
            a, b = dom.cuts[cid]
            d = b - a
            L = np.hypot(*d)
            rel = mesh.points[ids] - a
            off = np.abs(rel[:, 0] * d[1] - rel[:, 1] * d[0]) / L
            w = dom.geometry.channel(cid).width
            if off.max() > 1e-10 * w:
                raise MeshFailure(f"cut {cid} trace node off the cut by {off.max():.3g}")
            if not np.all(np.diff(mesh.cut_s[cid]) > 0):
                raise MeshFailure(f"cut {cid} trace nodes are not strictly ordered")
        info["cut_nodes"] = {cid: len(ids) for cid, ids in mesh.cut_nodes.items()}
    return info
