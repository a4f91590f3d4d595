"""Independent reference solvers used by the tests.

Nothing here imports the package: these are separate discretisations of the
same physics, written from scratch.
"""
import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import eigsh


def fd_dirichlet_eigenvalues(inside, bounds, hg, count=1, shift=0.0):
    """Smallest Dirichlet eigenvalues of -Laplace on a grid-aligned domain (5-point stencil).

    ``inside(x, y)`` marks open-domain points; grid nodes outside are zero.
    """
    x0, x1, y0, y1 = bounds
    nx = int(round((x1 - x0) / hg)) + 1
    ny = int(round((y1 - y0) / hg)) + 1
    X, Y = np.meshgrid(x0 + hg * np.arange(nx), y0 + hg * np.arange(ny), indexing="ij")
    mask = inside(X, Y)
    idx = -np.ones(mask.shape, dtype=int)
    idx[mask] = np.arange(mask.sum())
    rows, cols, vals = [], [], []
    I, J = np.nonzero(mask)
    me = idx[I, J]
    rows.append(me)
    cols.append(me)
    vals.append(np.full(len(me), 4.0 / hg**2))
    for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
        In, Jn = I + di, J + dj
        ok = (In >= 0) & (In < nx) & (Jn >= 0) & (Jn < ny)
        nb = np.full(len(I), -1)
        nb[ok] = idx[In[ok], Jn[ok]]
        good = nb >= 0
        rows.append(me[good])
        cols.append(nb[good])
        vals.append(np.full(good.sum(), -1.0 / hg**2))
    n = mask.sum()
    A = sp.csc_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))
    w = eigsh(A, k=count, sigma=shift, which="LM", return_eigenvectors=False)
    return np.sort(w)


def indentation_eigenvalue(b, depth, d=1.0, arm=8.0, hg=1 / 80):
    """Lowest Dirichlet eigenvalue of the indented strip with arms of length ``arm``."""
    tol = 1e-9

    def inside(x, y):
        strip = (np.abs(x) < b / 2 + arm - tol) & (np.abs(y) < d / 2 - tol)
        bump = (np.abs(x) < b / 2 - tol) & (y > -d / 2 + tol) & (y < d / 2 + depth - tol)
        return strip | bump

    bounds = (-(b / 2 + arm), b / 2 + arm, -d / 2, d / 2 + depth)
    return fd_dirichlet_eigenvalues(inside, bounds, hg, 1, shift=0.0)[0]


def _interval_modes(width, count, neumann=False):
    n = np.arange(1, count + 1)
    if neumann:
        return ((n - 1) * np.pi / width) ** 2
    return (n * np.pi / width) ** 2


def mode_matching_step(k, d1=1.0, d2=2.0, n1=15, n2=30, nquad=400):
    """S-matrix of a symmetric Dirichlet width step d1 -> d2 at x = 0 by mode matching.

    Narrow guide |y| < d1/2 for x < 0, wide guide |y| < d2/2 for x > 0.
    Modes use the flux normalisation phi/sqrt(lam) with phases referenced at
    x = 0, so propagating entries are directly comparable with a unitary S.
    Returns (S, n_prop_narrow, n_prop_wide), S ordered [narrow modes, wide modes].
    """
    mu1 = _interval_modes(d1, n1)
    mu2 = _interval_modes(d2, n2)

    def branch(m):
        dlt = k * k - m
        return np.where(dlt >= 0, np.sqrt(np.abs(dlt)) + 0j, 1j * np.sqrt(np.abs(dlt)))

    # Im >= 0 branch for exp(i lam |x|) outgoing / decaying
    a = branch(mu1)
    bt = branch(mu2)
    # coupling W_mn = int_{-d1/2}^{d1/2} chi_m (narrow) phi_n (wide)
    yq, wq = np.polynomial.legendre.leggauss(nquad)
    y = 0.5 * d1 * yq
    w = 0.5 * d1 * wq
    chi = np.array([np.sqrt(2 / d1) * np.sin(m * np.pi * (y + d1 / 2) / d1) for m in range(1, n1 + 1)])
    phi = np.array([np.sqrt(2 / d2) * np.sin(m * np.pi * (y + d2 / 2) / d2) for m in range(1, n2 + 1)])
    W = (chi * w) @ phi.T  # n1 x n2
    # W[m, n] couples narrow mode m to wide mode n over the aperture.  The field
    # is projected onto the wide basis (it vanishes on the step walls) and its
    # x-derivative onto the narrow basis (defined on the aperture only).
    Lam = np.diag(a)
    WBW = W @ np.diag(bt) @ W.T
    np1 = int(np.sum(mu1 < k * k))
    np2 = int(np.sum(mu2 < k * k))
    sq1, sq2 = np.sqrt(a), np.sqrt(bt)
    S = np.zeros((np1 + np2, np1 + np2), dtype=complex)
    lhs = Lam + WBW
    for m in range(np1):
        x = np.zeros(n1, dtype=complex)
        x[m] = 1.0 / sq1[m]
        r = np.linalg.solve(lhs, (Lam - WBW) @ x)
        t = W.T @ (x + r)
        S[m, :np1] = (r * sq1)[:np1]
        S[m, np1:] = (t * sq2)[:np2]
    for n in range(np2):
        y = np.zeros(n2, dtype=complex)
        y[n] = 1.0 / sq2[n]
        r = np.linalg.solve(lhs, 2 * W @ (bt * y))
        t = W.T @ r - y
        S[np1 + n, :np1] = (r * sq1)[:np1]
        S[np1 + n, np1:] = (t * sq2)[:np2]
    return S, np1, np2
