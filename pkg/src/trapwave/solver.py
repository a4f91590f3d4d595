"""P1 finite-element assembly and the auxiliary difference problems.

For a mode ``u`` with cutoff ``eta`` the difference ``w = u_hat - eta u`` solves

    -Laplace(w) + (q - omega) w = 2 eta' du/dz + eta'' u       in the domain,
    dw/dz + i zeta w = 0                                      on every cut,

with homogeneous wall conditions.  The source lives only where ``eta`` varies,
so no data grows with the truncation length.  The bilinear (not sesquilinear)
weak form gives a complex-symmetric matrix; Dirichlet nodes are eliminated and
quasi-periodic slave nodes are expressed through their masters.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import norm as spnorm
from scipy.sparse.linalg import splu

from .errors import CutNotMeshAligned, SingularSystem, ZetaNonPositive

# degree-5 seven-point rule on the reference triangle (barycentric, weights sum to 1)
_A1, _B1 = 0.059715871789770, 0.470142064105115
_A2, _B2 = 0.797426985353087, 0.101286507323456
TRI_QUAD_BARY = np.array([
    [1 / 3, 1 / 3, 1 / 3],
    [_A1, _B1, _B1], [_B1, _A1, _B1], [_B1, _B1, _A1],
    [_A2, _B2, _B2], [_B2, _A2, _B2], [_B2, _B2, _A2],
])
TRI_QUAD_W = np.array([0.225] + [0.132394152788506] * 3 + [0.125939180544827] * 3)

RESIDUAL_TOL = 1e-10
REFINE_STEPS = 3
DIRICHLET_TAGS = ("dirichlet",)
# Consistent/lumped mass blend used by the Helmholtz operator.
MASS_LUMP = 0.5


def _geometry(points, tris):
    p = points[tris]
    x, y = p[..., 0], p[..., 1]
    b = np.stack([y[:, 1] - y[:, 2], y[:, 2] - y[:, 0], y[:, 0] - y[:, 1]], axis=1)
    c = np.stack([x[:, 2] - x[:, 1], x[:, 0] - x[:, 2], x[:, 1] - x[:, 0]], axis=1)
    area = 0.5 * (b[:, 0] * c[:, 1] - b[:, 1] * c[:, 0])
    return b, c, area


def _scatter(tris, local, n):
    rows = np.repeat(tris, 3, axis=1).ravel()
    cols = np.tile(tris, (1, 3)).ravel()
    return sp.csr_matrix((local.ravel(), (rows, cols)), shape=(n, n))


def stiffness_matrix(points, tris):
    b, c, area = _geometry(points, tris)
    local = (b[:, :, None] * b[:, None, :] + c[:, :, None] * c[:, None, :]) / (4 * area[:, None, None])
    return _scatter(tris, local, len(points))


def mass_matrix(points, tris, weight=None, lump=0.0):
    """P1 mass matrix, optionally weighted by ``weight(x, y)`` (7-point rule).

    ``lump`` blends the consistent matrix with its row-sum diagonal; the even
    blend ``lump=0.5`` cancels the leading phase error of plane waves.
    """
    _, _, area = _geometry(points, tris)
    if weight is None:
        local = area[:, None, None] * (np.ones((3, 3)) + np.eye(3))[None] / 12.0
    else:
        xq = np.einsum("qk,tkd->tqd", TRI_QUAD_BARY, points[tris])
        wq = np.asarray(weight(xq[..., 0].ravel(), xq[..., 1].ravel()), dtype=float).reshape(xq.shape[:2])
        lam = TRI_QUAD_BARY
        local = np.einsum("q,tq,qi,qj->tij", TRI_QUAD_W, wq, lam, lam) * area[:, None, None]
    M = _scatter(tris, local, len(points))
    if lump:
        diag = sp.diags(np.asarray(M.sum(axis=1)).ravel())
        M = ((1.0 - lump) * M + lump * diag).tocsr()
    return M


def edge_mass_matrix(points, edges, n):
    L = np.hypot(*(points[edges[:, 1]] - points[edges[:, 0]]).T)
    local = L[:, None, None] * np.array([[2.0, 1.0], [1.0, 2.0]])[None] / 6.0
    rows = np.repeat(edges, 2, axis=1).ravel()
    cols = np.tile(edges, (1, 2)).ravel()
    return sp.csr_matrix((local.ravel(), (rows, cols)), shape=(n, n))


def constraint_map(mesh, alpha=None, dirichlet_tags=DIRICHLET_TAGS, period=2 * np.pi):
    """Elimination matrix ``P`` (n_nodes x n_free): ``u_all = P u_free``.

    Dirichlet rows are zero; quasi-periodic slaves are ``exp(i alpha period)``
    times their master column.
    """
    n = mesh.n_nodes
    fixed = np.zeros(n, dtype=bool)
    for tag in dirichlet_tags:
        fixed[mesh.nodes_with_tag(tag)] = True
    master = np.zeros(n, dtype=int) - 1
    phase = 1.0 + 0j
    masters = mesh.nodes_with_tag("qp_master")
    slaves = mesh.nodes_with_tag("qp_slave")
    if len(slaves):
        if alpha is None:
            raise CutNotMeshAligned("quasi-periodic mesh requires alpha")
        zm = mesh.points[masters, 1]
        zs = mesh.points[slaves, 1]
        om, os_ = np.argsort(zm), np.argsort(zs)
        if len(zm) != len(zs) or np.abs(zm[om] - zs[os_]).max() > 1e-12 * period:
            raise CutNotMeshAligned("qp_master and qp_slave nodes are not congruent")
        dx = mesh.points[slaves[os_], 0] - mesh.points[masters[om], 0]
        if np.abs(dx - period).max() > 1e-12 * period:
            raise CutNotMeshAligned("qp_slave nodes are not one period from their masters")
        master[slaves[os_]] = masters[om]
        phase = np.exp(1j * alpha * period)
    free = ~fixed & (master < 0)
    col = -np.ones(n, dtype=int)
    col[free] = np.arange(free.sum())
    rows = np.flatnonzero(free)
    data = [np.ones(len(rows), dtype=complex)]
    cols = [col[rows]]
    rr = [rows]
    sl = np.flatnonzero((master >= 0) & ~fixed)
    if len(sl):
        ok = col[master[sl]] >= 0
        sl = sl[ok]
        rr.append(sl)
        cols.append(col[master[sl]])
        data.append(np.full(len(sl), phase, dtype=complex))
    P = sp.csr_matrix((np.concatenate(data), (np.concatenate(rr), np.concatenate(cols))),
                      shape=(n, int(free.sum())))
    return P, fixed


@dataclass(eq=False)
class PreparedMesh:
    """Frequency-independent matrices of a mesh: stiffness, mass, weighted mass, cut mass."""

    mesh: object
    K: sp.csr_matrix
    M: sp.csr_matrix
    Mw: object
    Mcut: sp.csr_matrix
    cut_edges: dict
    zone_triangles: np.ndarray

    @classmethod
    def build(cls, mesh, weight=None, zone=None):
        pts, tris = mesh.points, mesh.triangles
        K = stiffness_matrix(pts, tris)
        M = mass_matrix(pts, tris, lump=MASS_LUMP)
        Mw = mass_matrix(pts, tris, weight, lump=MASS_LUMP) if weight is not None else None
        cut_edges = {}
        all_cut = []
        for tag in sorted({t for t in mesh.edge_tags if t.startswith("cut:")}):
            e = mesh.edges_with_tag(tag)
            cut_edges[int(tag[4:])] = e
            all_cut.append(e)
        ecut = np.vstack(all_cut) if all_cut else np.zeros((0, 2), dtype=int)
        Mcut = edge_mass_matrix(pts, ecut, mesh.n_nodes)
        zt = np.arange(len(tris)) if zone is None else zone
        return cls(mesh, K, M, Mw, Mcut, cut_edges, zt)


@dataclass(eq=False)
class DiscreteOperator:
    """Reduced system ``A_red = P^H (K + q M - omega M + i zeta M_cut) P``."""

    mesh: object
    A: sp.csr_matrix
    P: sp.csr_matrix
    omega: float
    zeta: float
    alpha: object = None
    _lu: object = field(default=None, repr=False)

    @property
    def full(self) -> sp.csr_matrix:
        return self.A

    @property
    def reduced(self) -> sp.csc_matrix:
        return (self.P.conj().T @ self.A @ self.P).tocsc()

    def factor(self):
        if self._lu is None:
            try:
                self._Ared = self.reduced
                self._lu = splu(self._Ared, permc_spec="COLAMD")
            except RuntimeError as exc:
                raise SingularSystem(f"factorization failed: {exc}") from exc
        return self._lu

    def solve(self, b_full):
        """Solve for right-hand side(s) given as full nodal load vectors; returns full nodal values."""
        lu = self.factor()
        b = np.asarray(b_full, dtype=complex)
        one = b.ndim == 1
        b = b[:, None] if one else b
        rhs = self.P.conj().T @ b
        x = lu.solve(rhs)
        if not np.all(np.isfinite(x)):
            raise SingularSystem("non-finite solution: omega is (close to) an eigenvalue of the auxiliary problem")
        bn = np.linalg.norm(rhs, axis=0)
        bn = np.where(bn > 0, bn, 1.0)
        for _ in range(1 + REFINE_STEPS):
            res = self._Ared @ x - rhs
            rel = np.linalg.norm(res, axis=0) / bn
            if rel.max() <= RESIDUAL_TOL:
                break
            # iterative refinement: near-resonant systems lose digits in one pass
            x = x - lu.solve(res)
        if rel.max() > RESIDUAL_TOL:
            # near a trapped mode the residual floor is eps * cond(A); accept a backward-stable solve
            an = spnorm(self._Ared, 1)
            bwd = np.linalg.norm(res, 1, axis=0) / (an * np.linalg.norm(x, 1, axis=0) + np.linalg.norm(rhs, 1, axis=0))
            if bwd.max() > RESIDUAL_TOL:
                raise SingularSystem(f"relative residual {rel.max():.2e} exceeds {RESIDUAL_TOL:g}")
        u = self.P @ x
        return u[:, 0] if one else u

    def dump(self, path):
        """Write the reduced matrix as ``row col re im`` lines."""
        A = self.reduced.tocoo()
        with open(path, "w") as fh:
            fh.write(f"# {A.shape[0]} {A.shape[1]} {A.nnz}\n")
            for r, c, v in zip(A.row, A.col, A.data):
                fh.write(f"{r} {c} {v.real:.17g} {v.imag:.17g}\n")


def assemble(mesh, equation, zeta, alpha=None, prepared=None, dirichlet_tags=DIRICHLET_TAGS):
    """Assemble the Robin-truncated operator for ``equation`` on ``mesh``."""
    if not zeta > 0:
        raise ZetaNonPositive(f"zeta must be positive, got {zeta}")
    if prepared is None:
        weight = equation.q_weight if equation.medium is not None else None
        prepared = PreparedMesh.build(mesh, weight)
    omega = equation.omega
    A = prepared.K - omega * prepared.M + 1j * zeta * prepared.Mcut
    if prepared.Mw is not None:
        A = A + equation.q_factor * prepared.Mw
    P, _ = constraint_map(mesh, alpha, dirichlet_tags)
    return DiscreteOperator(mesh, A.tocsr(), P, omega, float(zeta), alpha)


def transition_triangles(mesh, selection):
    """Triangles that touch the cutoff transition zone of some channel."""
    pts = mesh.points
    tri = mesh.triangles
    mask = np.zeros(len(tri), dtype=bool)
    for ch in {s.channel for s in selection.slots}:
        z, s = ch.to_local(pts)
        in_z = (z > selection.R0 - 1e-12) & (z < selection.R0 + selection.delta + 1e-12)
        in_s = (s > -1e-9) & (s < ch.width + 1e-9)
        node = in_z & in_s
        zt = z[tri]
        span = (zt.max(axis=1) > selection.R0) & (zt.min(axis=1) < selection.R0 + selection.delta)
        mask |= node[tri].any(axis=1) | (span & in_s[tri].any(axis=1))
    return np.flatnonzero(mask)


def difference_loads(mesh, modes, triangles):
    """Load vectors of ``2 eta' du/dz + eta'' u`` for each mode (columns)."""
    tri = mesh.triangles[triangles]
    _, _, area = _geometry(mesh.points, tri)
    xq = np.einsum("qk,tkd->tqd", TRI_QUAD_BARY, mesh.points[tri]).reshape(-1, 2)
    F = np.zeros((mesh.n_nodes, len(modes)), dtype=complex)
    wa = (TRI_QUAD_W[None, :] * area[:, None])
    for k, mode in enumerate(modes):
        z, _, _ = mode.local(xq)
        _, d1, d2 = mode.cutoff(z)
        u, uz = mode.field(xq)
        f = (2 * d1 * uz + d2 * u).reshape(len(tri), -1) * wa
        local = np.einsum("tq,qi->ti", f, TRI_QUAD_BARY)
        np.add.at(F[:, k], tri.ravel(), local.ravel())
    return F


@dataclass(frozen=True, eq=False)
class DiscreteField:
    """Complex nodal values on a mesh plus free-form metadata."""

    mesh: object
    values: np.ndarray
    meta: dict = field(default_factory=dict)

    def rows(self):
        """``(x, y, re, im, abs)`` per node."""
        v = self.values
        return np.column_stack([self.mesh.points, v.real, v.imag, np.abs(v)])


def solve_difference(op: DiscreteOperator, mode, triangles=None):
    """Difference field ``u_hat - eta u`` for one mode (or a list of modes)."""
    modes = mode if isinstance(mode, (list, tuple)) else [mode]
    if triangles is None:
        triangles = np.arange(op.mesh.n_triangles)
    F = difference_loads(op.mesh, modes, triangles)
    W = op.solve(F)
    meta = {"omega": op.omega, "zeta": op.zeta}
    fields = [DiscreteField(op.mesh, W[:, k], dict(meta, mode=m)) for k, m in enumerate(modes)]
    return fields if isinstance(mode, (list, tuple)) else fields[0]


@dataclass(frozen=True, eq=False)
class CutTrace:
    """Values of a field on one cut, ordered by the cross coordinate ``s``."""

    cut: int
    s: np.ndarray
    values: np.ndarray
    weights: np.ndarray
    mass: np.ndarray

    def inner(self, other) -> complex:
        """``integral conj(self) * other`` with the P1-exact cut mass matrix."""
        return complex(np.conj(self.values) @ (self.mass @ other.values))

    def norm_sq(self) -> float:
        return float(self.inner(self).real)


def cut_mass(s):
    """Tridiagonal P1 mass matrix on a 1-D grid ``s``."""
    L = np.diff(s)
    n = len(s)
    M = np.zeros((n, n))
    idx = np.arange(n - 1)
    M[idx, idx] += L / 3
    M[idx + 1, idx + 1] += L / 3
    M[idx, idx + 1] += L / 6
    M[idx + 1, idx] += L / 6
    return M


def trapezoid_weights(s):
    L = np.diff(s)
    w = np.zeros(len(s))
    w[:-1] += L / 2
    w[1:] += L / 2
    return w


def extract_trace(field_or_values, mesh, cut: int) -> CutTrace:
    values = field_or_values.values if isinstance(field_or_values, DiscreteField) else field_or_values
    if cut not in mesh.cut_nodes:
        raise CutNotMeshAligned(f"mesh has no trace nodes for cut {cut}")
    ids = mesh.cut_nodes[cut]
    s = mesh.cut_s[cut]
    if len(ids) < 2 or not np.all(np.diff(s) > 0):
        raise CutNotMeshAligned(f"cut {cut} nodes are not an ordered mesh line")
    return CutTrace(cut, s, np.asarray(values)[ids], trapezoid_weights(s), cut_mass(s))
