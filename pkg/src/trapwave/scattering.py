"""Gram matrix of cut traces, coefficient extraction, S-matrix and trapped-mode criterion.

Every mode ``u_q`` (q runs over the M incoming modes then the M outgoing
modes) gets a difference field ``w_q``.  A combination ``sum c_q (eta u_q + w_q)``
is close to an exact solution exactly when ``sum c_q w_q`` is small on the
cuts, so the M-dimensional solution space is the span of the eigenvectors of
the Gram matrix ``G_pq = sum_cuts integral conj(w_p) w_q`` with the M smallest
eigenvalues.

Traces of growing and decaying modes differ by orders of magnitude, so ``G``
is equilibrated with its diagonal before the eigensolve.  That is the same as
renormalising the modes; the S-matrix is mapped back to the original
normalisation and the zero set of the trapped-mode criterion is unchanged.
"""
from __future__ import annotations

import multiprocessing as mp
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy.optimize import minimize_scalar

from .equations import Helmholtz, Schrodinger, default_zeta
from .errors import (
    EigendecompositionFailure,
    IllConditionedCminus,
    NoEvanescentModes,
    NoMinimumInBracket,
    PropagatingLeak,
    TraceCountMismatch,
    TrapwaveError,
)
from .mesh import generate_mesh
from .modes import EPS_THR, INCOMING, OUTGOING, select_modes
from .solver import (
    DIRICHLET_TAGS,
    DiscreteField,
    PreparedMesh,
    assemble,
    difference_loads,
    extract_trace,
    transition_triangles,
)

COND_MAX = 1e8
TOL_S = 1e-3
# Largest kept growth exponent |Im lam| (R - R0): the zone loads of faster modes
# exceed the solution on the cuts by more than double precision can absorb.
MAX_GROWTH = 25.0


@dataclass(frozen=True, eq=False)
class GramMatrix:
    G: np.ndarray
    M: int

    @property
    def hermitian_defect(self) -> float:
        return float(np.abs(self.G - self.G.conj().T).max()) if self.G.size else 0.0


def assemble_gram(traces, M: Optional[int] = None) -> GramMatrix:
    """``traces[p]`` is the list of :class:`CutTrace` (one per cut) of difference ``p``.

    Rows/columns are ordered [incoming modes, outgoing modes]; ``len(traces)``
    must be ``2 M``.
    """
    if M is not None and len(traces) != 2 * M:
        raise TraceCountMismatch(f"expected {2 * M} difference traces, got {len(traces)}")
    if len(traces) % 2:
        raise TraceCountMismatch(f"need an even number of traces, got {len(traces)}")
    n = len(traces)
    G = np.zeros((n, n), dtype=complex)
    if n == 0:
        return GramMatrix(G, 0)
    ncut = len(traces[0])
    for c in range(ncut):
        V = np.column_stack([tr[c].values for tr in traces])
        Mc = traces[0][c].mass
        G += V.conj().T @ (Mc @ V)
    G = 0.5 * (G + G.conj().T)
    return GramMatrix(G, n // 2)


def gram_from_values(W, mesh, cuts, M):
    """Gram matrix directly from nodal difference fields ``W`` (n_nodes x 2M)."""
    n = W.shape[1]
    if n != 2 * M:
        raise TraceCountMismatch(f"expected {2 * M} difference fields, got {n}")
    G = np.zeros((n, n), dtype=complex)
    for c in cuts:
        tr = extract_trace(W[:, 0], mesh, c)
        V = W[mesh.cut_nodes[c]]
        G += V.conj().T @ (tr.mass @ V)
    return GramMatrix(0.5 * (G + G.conj().T), M)


@dataclass(frozen=True, eq=False)
class CoefficientSet:
    """``Cm``/``Cp`` hold the equilibrated rows; ``D`` maps them back to mode coefficients."""

    Cm: np.ndarray
    Cp: np.ndarray
    D: np.ndarray
    residuals: np.ndarray
    eigenvalues: np.ndarray
    N: int
    M: int
    Gs: Optional[np.ndarray] = None

    @property
    def rows(self) -> np.ndarray:
        return np.hstack([self.Cm, self.Cp])

    @property
    def raw_rows(self) -> np.ndarray:
        return self.rows * self.D[None, :]

    def in_out(self):
        """Equilibrated in/out blocks and their diagonal scalings.

        In: incoming propagating and growing evanescent modes (must vanish for a
        physical wave except the chosen incident one).  Out: outgoing
        propagating and decaying evanescent modes.
        """
        N, M = self.N, self.M
        Cin = np.hstack([self.Cm[:, :N], self.Cp[:, N:]])
        Cout = np.hstack([self.Cp[:, :N], self.Cm[:, N:]])
        Din = np.concatenate([self.D[:N], self.D[M + N:]])
        Dout = np.concatenate([self.D[M:M + N], self.D[N:M]])
        return Cin, Cout, Din, Dout


def extract_coefficients(G, M: Optional[int] = None, N: Optional[int] = None) -> CoefficientSet:
    Gm = G.G if isinstance(G, GramMatrix) else np.asarray(G, dtype=complex)
    M = (G.M if isinstance(G, GramMatrix) else Gm.shape[0] // 2) if M is None else M
    N = M if N is None else N
    if Gm.shape != (2 * M, 2 * M):
        raise TraceCountMismatch(f"Gram matrix of shape {Gm.shape} does not match M={M}")
    if not np.all(np.isfinite(Gm)):
        raise EigendecompositionFailure("Gram matrix has non-finite entries")
    d = np.real(np.diag(Gm)).copy()
    D = np.ones(2 * M)
    ok = d > 1e-280
    D[ok] = 1.0 / np.sqrt(d[ok])
    Gs = D[:, None] * Gm * D[None, :]
    Gs = 0.5 * (Gs + Gs.conj().T)
    try:
        w, v = np.linalg.eigh(Gs)
    except np.linalg.LinAlgError as exc:
        raise EigendecompositionFailure(str(exc)) from exc
    rows = v[:, :M].T
    return CoefficientSet(rows[:, :M].copy(), rows[:, M:].copy(), D, w[:M].copy(), w, N, M, Gs)


@dataclass(frozen=True, eq=False)
class ScatteringMatrix:
    S: np.ndarray
    defect: float
    omega: float = np.nan
    labels: tuple = ()
    flagged: bool = False
    cond: float = np.nan

    @property
    def N(self) -> int:
        return self.S.shape[0]


def scattering_matrix(coeffs: CoefficientSet, cond_max=COND_MAX, tol_S=TOL_S, omega=np.nan,
                      labels=()) -> ScatteringMatrix:
    """``S[m, n]``: outgoing amplitude in propagating mode n for unit incidence in mode m."""
    Cin, Cout, Din, Dout = coeffs.in_out()
    N = coeffs.N
    cond = float(np.linalg.cond(Cin)) if Cin.size else 1.0
    if not cond < cond_max:
        raise IllConditionedCminus(f"incoming coefficient block has condition number {cond:.3g}", cond)
    T = np.linalg.solve(Cin, Cout) if Cin.size else np.zeros((0, 0))
    St = T[:N, :N]
    S = St * Dout[None, :N] / Din[:N, None]
    defect = float(np.linalg.norm(S.conj().T @ S - np.eye(N))) if N else 0.0
    return ScatteringMatrix(S, defect, omega, tuple(labels), defect > tol_S, cond)


def decaying_columns(N, M):
    """Gram indices of the decaying evanescent modes (the incoming copies of modes N..M-1)."""
    return np.arange(N, M)


def trapped_criterion(coeffs: CoefficientSet):
    """Trapped-mode indicator from the decaying evanescent block of the Gram matrix.

    A trapped mode is a combination of decaying evanescent modes alone whose
    difference traces vanish.  The indicator is the square root of the
    smallest eigenvalue of the equilibrated Gram block of those modes (the
    smallest attainable residual, on the same scale as a singular value); it
    vanishes exactly when such a combination exists.  Returns
    ``(sigma_min, logabsdet, coefficients)`` with ``logabsdet`` the log of the
    product of all such square roots and ``coefficients`` the equilibrated
    coefficients of all 2M differences (zero outside the block).
    """
    if coeffs.M == coeffs.N:
        raise NoEvanescentModes("no evanescent modes in the basis; increase gamma")
    idx = decaying_columns(coeffs.N, coeffs.M)
    B = coeffs.Gs[np.ix_(idx, idx)]
    w, v = np.linalg.eigh(0.5 * (B + B.conj().T))
    w = np.clip(w, 0.0, None)
    c = np.zeros(2 * coeffs.M, dtype=complex)
    c[idx] = v[:, 0]
    with np.errstate(divide="ignore"):
        logdet = float(0.5 * np.sum(np.log(w)))
    return float(np.sqrt(w[0])), logdet, c


def conductance(S, inlet: int, outlet_channel: int) -> float:
    """``sum |S[m, n]|^2`` over the propagating modes n of ``outlet_channel``."""
    mat = S.S if isinstance(S, ScatteringMatrix) else np.asarray(S)
    labels = S.labels if isinstance(S, ScatteringMatrix) else ()
    if labels:
        cols = [i for i, (cid, _) in enumerate(labels) if cid == outlet_channel]
    else:
        cols = [outlet_channel]
    return float(np.sum(np.abs(mat[inlet, cols]) ** 2))


# ----------------------------------------------------------------------------
# problem pipeline


@dataclass(eq=False)
class PointResult:
    x: float
    omega: float
    N: int = 0
    M: int = 0
    S: Optional[ScatteringMatrix] = None
    sigma_min: float = np.nan
    logabsdet: float = np.nan
    residuals: np.ndarray = field(default_factory=lambda: np.zeros(0))
    threshold: bool = False
    error: str = ""
    warnings: list = field(default_factory=list)
    selection: object = None
    coeffs: Optional[CoefficientSet] = None
    null_vector: Optional[np.ndarray] = None
    W: Optional[np.ndarray] = None
    alpha: Optional[float] = None

    @property
    def ok(self) -> bool:
        return not self.error


class Problem:
    """A truncated domain, its mesh and the numerical options of a frequency sweep.

    The sweep variable ``x`` is the wavenumber k for Helmholtz problems and
    the energy E for Schrodinger problems.
    """

    def __init__(self, domain, h, equation="helmholtz", medium=None, gamma=8.0, zeta=None,
                 eps_thr=EPS_THR, cond_max=COND_MAX, tol_S=TOL_S, mesh=None,
                 dirichlet_tags=DIRICHLET_TAGS, mode_scales=None, smoothing=6):
        if equation not in ("helmholtz", "schrodinger"):
            raise ValueError(f"unknown equation {equation!r}")
        self.domain = domain
        self.h = float(h)
        self.equation = equation
        self.medium = medium if medium is not None else domain.geometry.medium
        self.gamma = float(gamma)
        self.zeta = zeta
        self.eps_thr = float(eps_thr)
        self.cond_max = float(cond_max)
        self.tol_S = float(tol_S)
        self.dirichlet_tags = tuple(dirichlet_tags)
        self.mode_scales = dict(mode_scales or {})
        self.mesh = mesh if mesh is not None else generate_mesh(domain, h, smoothing=smoothing)
        self.R0 = float(domain.geometry.R0)
        self.R = float(domain.R)
        self.cuts = sorted(self.mesh.cut_nodes)
        eq = self.make_equation(1.0)
        weight = eq.q_weight if self.medium is not None else None
        self._zone = None
        self.prepared = PreparedMesh.build(self.mesh, weight)

    # -- helpers
    def make_equation(self, x):
        if self.equation == "helmholtz":
            return Helmholtz(float(x) ** 2, self.medium)
        return Schrodinger(float(x), self.medium)

    def omega(self, x) -> float:
        return float(x) ** 2 if self.equation == "helmholtz" else float(x)

    def zeta_for(self, x) -> float:
        om = self.omega(x)
        if self.zeta is None:
            return default_zeta(om)
        if callable(self.zeta):
            return float(self.zeta(x))
        return float(self.zeta)

    def alpha_for(self, x):
        if not self.domain.is_grating:
            return None
        return self.domain.geometry.spec.alpha_for(np.sqrt(max(self.omega(x), 0.0)))

    @property
    def gamma_eff(self) -> float:
        """``gamma`` capped so that ``exp(|Im lam| (R - R0))`` stays resolvable in double precision."""
        return min(self.gamma, MAX_GROWTH / (self.R - self.R0))

    def select(self, x):
        eq = self.make_equation(x)
        alpha = self.alpha_for(x)
        sel = select_modes(self.omega(x), self.domain.channels, self.gamma_eff, self.eps_thr,
                           self.R0, self.R, profile_q=lambda ch: eq.profile_q(ch.profile),
                           alpha=alpha, ds=self.h / 10)
        if self.mode_scales:
            sel = replace(sel, scales=dict(self.mode_scales))
        return sel

    def zone(self, selection):
        if self._zone is None:
            self._zone = transition_triangles(self.mesh, selection)
        return self._zone

    # -- pipeline
    def solve(self, x, keep=False) -> PointResult:
        """Run modes -> differences -> Gram -> coefficients -> S and criterion at one point."""
        om = self.omega(x)
        res = PointResult(float(x), om)
        try:
            sel = self.select(x)
            res.selection = sel
            res.N, res.M = sel.N, sel.M
            res.threshold = sel.has_threshold
            res.alpha = self.alpha_for(x)
            if res.threshold:
                res.warnings.append("threshold: standing-mode basis used")
            op = assemble(self.mesh, self.make_equation(x), self.zeta_for(x), res.alpha,
                          self.prepared, self.dirichlet_tags)
            modes = sel.modes(INCOMING) + sel.modes(OUTGOING)
            F = difference_loads(self.mesh, modes, self.zone(sel))
            W = op.solve(F)
            G = gram_from_values(W, self.mesh, self.cuts, sel.M)
            co = extract_coefficients(G, sel.M, sel.N)
            res.coeffs = co
            res.residuals = co.residuals
            if keep:
                res.W = W
            if sel.M > sel.N:
                res.sigma_min, res.logabsdet, res.null_vector = trapped_criterion(co)
            labels = tuple((s.channel.id, s.n) for s in sel.slots[:sel.N])
            res.S = scattering_matrix(co, self.cond_max, self.tol_S, om, labels)
            if res.S.flagged:
                res.warnings.append(f"unitarity defect {res.S.defect:.2e} above tol_S")
        except TrapwaveError as exc:
            res.error = f"{type(exc).__name__}: {exc}"
        return res

    def field(self, res: PointResult, coefficients) -> DiscreteField:
        """Nodal values of ``sum_q c_q (eta u_q + w_q)`` for mode coefficients ``c`` (length 2M)."""
        if res.W is None:
            res = self.solve(res.x, keep=True)
        sel = res.selection
        modes = sel.modes(INCOMING) + sel.modes(OUTGOING)
        U = np.column_stack([m.evaluate(self.mesh.points) for m in modes])
        psi = (U + res.W) @ np.asarray(coefficients)
        return DiscreteField(self.mesh, psi, {"x": res.x, "omega": res.omega})

    def scattering_field(self, res: PointResult, inlet: int) -> DiscreteField:
        """Total field for unit incidence in propagating mode ``inlet``."""
        if res.W is None:
            res = self.solve(res.x, keep=True)
        co = res.coeffs
        Cin, _, Din, _ = co.in_out()
        rhs = np.zeros(co.M, dtype=complex)
        rhs[inlet] = 1.0 / Din[inlet]
        a = np.linalg.solve(Cin.T, rhs)
        return self.field(res, (a @ co.rows) * co.D)


def reconstruct_trapped_field(problem: Problem, res: PointResult) -> DiscreteField:
    """Trapped-mode field from the trapped-criterion coefficients, normalised to max |psi| = 1.

    The coefficients are first projected on the extracted solution space; the
    outgoing propagating part of that projection must stay below 10 sigma_min.
    """
    if res.W is None:
        res = problem.solve(res.x, keep=True)
    if res.null_vector is None:
        raise NoEvanescentModes("point has no trapped-mode criterion")
    co = res.coeffs
    c = res.null_vector
    rows = co.rows
    a, *_ = np.linalg.lstsq(rows.T, c, rcond=None)
    proj = a @ rows
    out_prop = proj[co.M:co.M + co.N]
    if co.N and np.abs(out_prop).max() > 10 * max(res.sigma_min, 1e-300):
        raise PropagatingLeak(
            f"outgoing propagating coefficients {np.abs(out_prop).max():.2e} exceed 10*sigma_min"
        )
    f = problem.field(res, c * co.D)
    v = f.values
    peak = v[np.argmax(np.abs(v))]
    return DiscreteField(f.mesh, v / peak, dict(f.meta, sigma_min=res.sigma_min))


# ----------------------------------------------------------------------------
# sweeps


@dataclass(eq=False)
class SweepResult:
    xs: np.ndarray
    points: list
    roots: list = field(default_factory=list)

    @property
    def sigma(self) -> np.ndarray:
        return np.array([p.sigma_min for p in self.points])

    @property
    def N(self) -> np.ndarray:
        return np.array([p.N for p in self.points])

    def tol_trap(self, factor=1e-3) -> float:
        s = self.sigma
        s = s[np.isfinite(s)]
        return factor * float(np.median(s)) if s.size else np.nan

    def dips(self):
        """Indices of strict interior local minima of sigma_min on the grid."""
        s = self.sigma
        return [i for i in range(1, len(s) - 1)
                if np.isfinite(s[i - 1:i + 2]).all() and s[i] < s[i - 1] and s[i] < s[i + 1]]

    def conductance(self, inlet=0, outlet=1) -> np.ndarray:
        out = []
        for p in self.points:
            if p.S is None or p.S.N <= inlet:
                out.append(np.nan)
            else:
                out.append(conductance(p.S, inlet, outlet))
        return np.array(out)


_WORKER_PROBLEM = None


def _solve_point(x):
    return _strip(_WORKER_PROBLEM.solve(x))


def _strip(res):
    # drop heavy / unpicklable members before crossing process boundaries
    res.selection = None
    res.W = None
    return res


def sweep(problem: Problem, xs, jobs=1) -> SweepResult:
    """Evaluate ``problem`` at every grid point; failures are recorded per point."""
    global _WORKER_PROBLEM
    xs = np.asarray(xs, dtype=float)
    if xs.size > 1 and not np.all(np.diff(xs) > 0):
        raise ValueError("sweep grid must be strictly increasing")
    jobs = os.cpu_count() if jobs is None or jobs <= 0 else jobs
    if jobs == 1 or len(xs) < 2:
        points = [_strip(problem.solve(x)) for x in xs]
    else:
        _WORKER_PROBLEM = problem
        try:
            with ProcessPoolExecutor(max_workers=min(jobs, len(xs)),
                                     mp_context=mp.get_context("fork")) as ex:
                points = list(ex.map(_solve_point, xs))
        finally:
            _WORKER_PROBLEM = None
    return SweepResult(xs, points)


def _golden(func, bracket, xtol):
    a, b = bracket[0], bracket[-1]
    if len(bracket) == 3:
        m = bracket[1]
        fm = func(m)
    else:
        m = 0.5 * (a + b)
        fm = func(m)
    fa, fb = func(a), func(b)
    if not (fm < fa and fm < fb):
        raise NoMinimumInBracket(f"no interior minimum in [{a}, {b}]")
    out = minimize_scalar(func, bracket=(a, m, b), method="golden", tol=xtol)
    return float(out.x), float(out.fun)


def refine_root(func, bracket, tol_trap, xtol=1e-6):
    """Golden-section minimisation of ``func`` (sigma_min) inside ``bracket``.

    Returns ``(x*, sigma(x*))``; raises :class:`NoMinimumInBracket` when the
    bracket has no interior minimum or the minimum stays above ``tol_trap``.
    """
    x, f = _golden(func, tuple(bracket), xtol)
    if not f < tol_trap:
        raise NoMinimumInBracket(f"minimum {f:.3g} at {x:.8g} is above tol_trap {tol_trap:.3g}")
    return x, f


def refine_peak(func, bracket, xtol=1e-6):
    """Golden-section maximisation of ``func`` (conductance) inside ``bracket``."""
    x, f = _golden(lambda t: -func(t), tuple(bracket), xtol)
    return x, -f


def sigma_function(problem: Problem):
    def f(x):
        r = problem.solve(x)
        return r.sigma_min if np.isfinite(r.sigma_min) else np.inf
    return f


def _narrow(func, a, b, levels=4, pieces=8):
    """Shrink ``[a, b]`` around the lowest sampled value; guards against close double dips."""
    for _ in range(levels):
        xs = np.linspace(a, b, pieces + 1)
        fs = np.array([func(x) for x in xs])
        i = int(np.clip(np.argmin(fs), 1, pieces - 1))
        a, m, b = xs[i - 1], xs[i], xs[i + 1]
    return a, m, b


def find_trapped(problem: Problem, result: SweepResult, tol_trap=None, xtol=1e-6):
    """Refine every grid dip of sigma_min; dips that stay above ``tol_trap`` are dropped."""
    tol = result.tol_trap() if tol_trap is None else tol_trap
    f = sigma_function(problem)
    roots = []
    for i in result.dips():
        try:
            bracket = _narrow(f, result.xs[i - 1], result.xs[i + 1])
            x, s = refine_root(f, bracket, tol, xtol)
        except NoMinimumInBracket:
            continue
        roots.append((x, s))
    result.roots = roots
    return roots
