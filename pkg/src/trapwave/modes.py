"""Channel and grating mode bases.

A channel mode is ``u(z, s) = eta(z) phi_n(s) g(z)`` with the longitudinal
factor ``g = exp(+-i lam z) / sqrt(lam)`` (``+`` outgoing, ``-`` incoming) and
``lam = sqrt(omega - mu_n)`` taken on the branch ``Im lam <= 0``.  At a
threshold (``lam = 0``) the standing factor ``(1 -+ z) / sqrt(2)`` is used.
``eta`` is a quintic smoothstep that switches the mode on between R0 and
R0 + delta.

Evanescent factors are referenced to the cut, ``exp(+-i lam (z - R))``, which
only rescales the mode by a constant and keeps every trace O(1).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.linalg import eigh_tridiagonal

from .errors import ConfigError, GammaTooLarge

EPS_THR = 1e-8
MAX_MODES = 64
PROPAGATING, EVANESCENT, THRESHOLD = "propagating", "evanescent", "threshold"
OUTGOING, INCOMING = +1, -1


def longitudinal_wavenumber(k_sq, mu):
    """``sqrt(k_sq - mu)`` with ``Im <= 0``: real positive above cutoff, ``-i sqrt(mu - k_sq)`` below."""
    d = np.asarray(k_sq, dtype=float) - np.asarray(mu, dtype=float)
    lam = np.where(d >= 0, np.sqrt(np.abs(d)) + 0j, -1j * np.sqrt(np.abs(d)))
    return complex(lam) if lam.ndim == 0 else lam


def classify(k_sq, mu, eps_thr=EPS_THR) -> str:
    d = float(k_sq) - float(mu)
    if abs(d) <= eps_thr * max(1.0, abs(float(k_sq))):
        return THRESHOLD
    return PROPAGATING if d > 0 else EVANESCENT


def grating_alpha(k: float, theta: float) -> float:
    if not abs(theta) < np.pi / 2:
        raise ConfigError(f"incidence angle must satisfy |theta| < pi/2, got {theta}")
    return -k * np.sin(theta)


def cutoff(z, R0, delta):
    """Quintic smoothstep and its first two derivatives: 0 below R0, 1 above R0 + delta."""
    t = np.clip((np.asarray(z, dtype=float) - R0) / delta, 0.0, 1.0)
    eta = np.clip(t**3 * (10 - 15 * t + 6 * t * t), 0.0, 1.0)
    d1 = 30 * t * t * (1 - t) ** 2 / delta
    d2 = 60 * t * (1 - t) * (1 - 2 * t) / delta**2
    return eta, d1, d2


@dataclass(frozen=True, eq=False)
class CrossSectionEigenpair:
    """``mu`` and a callable ``phi(s)`` normalised to unit L2 norm on the cross-section."""

    n: int
    mu: float
    phi: Callable
    analytic: bool = True
    samples: Optional[tuple] = None


def _analytic_pairs(width, wall, count):
    out = []
    for n in range(1, count + 1):
        if wall == "dirichlet":
            c = n * np.pi / width
            amp = np.sqrt(2.0 / width)
            phi = lambda s, c=c, amp=amp: amp * np.sin(c * np.asarray(s, dtype=float))
        else:
            c = (n - 1) * np.pi / width
            amp = np.sqrt((1.0 if n == 1 else 2.0) / width)
            phi = lambda s, c=c, amp=amp: amp * np.cos(c * np.asarray(s, dtype=float))
        out.append(CrossSectionEigenpair(n, c * c, phi, True))
    return out


def _numeric_pairs(width, wall, q, count, ds):
    if wall == "dirichlet":
        m = max(int(np.ceil(width / ds)) - 1, count + 2)
        hs = width / (m + 1)
        s = hs * np.arange(1, m + 1)
        diag = 2.0 / hs**2 + q(s)
        off = -np.ones(m - 1) / hs**2
        s_full = np.concatenate([[0.0], s, [width]])
    else:
        # cell-centred grid; reflecting end rows are second order for Neumann walls
        m = max(int(np.ceil(width / ds)), count + 2)
        hs = width / m
        s = hs * (np.arange(m) + 0.5)
        diag = 2.0 / hs**2 + q(s)
        diag[0] -= 1.0 / hs**2
        diag[-1] -= 1.0 / hs**2
        off = -np.ones(m - 1) / hs**2
        s_full = np.concatenate([[0.0], s, [width]])
    w, v = eigh_tridiagonal(diag, off, select="i", select_range=(0, count - 1))
    out = []
    for n in range(count):
        vec = v[:, n] / np.sqrt(hs * np.sum(v[:, n] ** 2))
        if vec[np.argmax(np.abs(vec) > 1e-8 * np.abs(vec).max())] < 0:
            vec = -vec
        if wall == "dirichlet":
            full = np.concatenate([[0.0], vec, [0.0]])
        else:
            full = np.concatenate([[vec[0]], vec, [vec[-1]]])
        phi = lambda x, sf=s_full, f=full: np.interp(np.asarray(x, dtype=float), sf, f)
        out.append(CrossSectionEigenpair(n + 1, float(w[n]), phi, False, (s_full, full)))
    return out


def cross_section_eigen(channel, count: int, q: Optional[Callable] = None, ds: Optional[float] = None):
    """First ``count`` cross-section eigenpairs of ``-phi'' + q(s) phi = mu phi``.

    Constant profiles (``q is None``) use the closed-form sine/cosine bases.
    Otherwise the problem is discretised by second-order differences with
    spacing ``ds`` (default width/2000) and solved as a tridiagonal eigenproblem.
    """
    if count < 1:
        raise ConfigError(f"count must be at least 1, got {count}")
    wall = channel.wall
    if q is None:
        return _analytic_pairs(channel.width, wall, count)
    ds = channel.width / 2000 if ds is None else ds
    return _numeric_pairs(channel.width, wall, q, count, ds)


class _Mode:
    """Shared longitudinal/cutoff logic; subclasses supply the transverse factor."""

    def longitudinal(self, z):
        z = np.asarray(z, dtype=float)
        if self.kind == THRESHOLD:
            g = (1.0 - self.direction * z) / np.sqrt(2.0) + 0j
            dg = np.full_like(z, -self.direction / np.sqrt(2.0)) + 0j
        else:
            sgn = 1j * self.direction * self.lam
            g = np.exp(sgn * (z - self.ref)) / np.sqrt(self.lam)
            dg = sgn * g
        return self.scale * g, self.scale * dg

    def cutoff(self, z):
        return cutoff(z, self.R0, self.delta)

    def local(self, points):
        z, s = self.channel.to_local(points)
        inside = (z >= self.R0 - 1e-12) & (s >= -1e-9) & (s <= self.channel.width + 1e-9)
        return z, s, inside

    def field(self, points):
        """``(u, du/dz)`` of the mode without cutoff; zero outside the channel strip."""
        z, s, inside = self.local(points)
        g, dg = self.longitudinal(z)
        tr = self.transverse(points, s)
        u = np.where(inside, tr * g, 0.0)
        uz = np.where(inside, tr * dg, 0.0)
        return u, uz

    def evaluate(self, points):
        points = np.atleast_2d(np.asarray(points, dtype=float))
        z, _, _ = self.local(points)
        u, _ = self.field(points)
        return self.cutoff(z)[0] * u

    def flux(self, z=None, n_quad=64):
        """Signed flux of ``Im(du/dz conj(u))`` through the cross-section at ``z``."""
        ch = self.channel
        z = self.R0 + self.delta if z is None else z
        x, w = np.polynomial.legendre.leggauss(n_quad)
        s = 0.5 * ch.width * (x + 1.0)
        w = 0.5 * ch.width * w
        pts = np.asarray(ch.origin) + z * ch.e[None, :] + (s - 0.5 * ch.width)[:, None] * ch.t[None, :]
        u, uz = self.field(pts)
        return float(np.sum(w * np.imag(uz * np.conj(u))))


@dataclass(frozen=True, eq=False)
class ChannelMode(_Mode):
    """One mode ``u_n^+-`` of a channel, including its cutoff extension."""

    channel: object
    n: int
    pair: CrossSectionEigenpair
    lam: complex
    kind: str
    direction: int
    R0: float
    delta: float
    ref: float = 0.0
    scale: complex = 1.0

    @property
    def mu(self) -> float:
        return self.pair.mu

    def transverse(self, points, s):
        return self.pair.phi(s)


@dataclass(frozen=True, eq=False)
class GratingMode(_Mode):
    """Rayleigh order ``exp(+-i lam z + i (n + alpha) y) / sqrt(4 pi lam)``."""

    channel: object
    n: int
    alpha: float
    lam: complex
    kind: str
    direction: int
    R0: float
    delta: float
    ref: float = 0.0
    scale: complex = 1.0

    @property
    def mu(self) -> float:
        return (self.n + self.alpha) ** 2

    @property
    def side(self) -> str:
        return "above" if self.channel.direction[1] > 0 else "below"

    def transverse(self, points, s):
        y = np.asarray(points, dtype=float)[:, 0]
        return np.exp(1j * (self.n + self.alpha) * y) / np.sqrt(2.0)

    def longitudinal(self, z):
        g, dg = super().longitudinal(z)
        c = 1.0 / np.sqrt(2.0 * np.pi)
        return c * g, c * dg


@dataclass(frozen=True, eq=False)
class ModeSlot:
    """A selected (channel, n) pair; ``mode(direction)`` builds ``u_n^+-``."""

    channel: object
    n: int
    mu: float
    lam: complex
    kind: str
    pair: Optional[CrossSectionEigenpair] = None
    alpha: Optional[float] = None

    def mode(self, direction, R0, delta, R, scale=1.0):
        ref = R if self.kind == EVANESCENT else 0.0
        if self.alpha is not None:
            return GratingMode(self.channel, self.n, self.alpha, self.lam, self.kind, direction,
                               R0, delta, ref, scale)
        return ChannelMode(self.channel, self.n, self.pair, self.lam, self.kind, direction,
                           R0, delta, ref, scale)


@dataclass(frozen=True, eq=False)
class ModeSelection:
    """Modes kept in the expansion: propagating/threshold first (channel-major), then evanescent."""

    omega: float
    gamma: float
    eps_thr: float
    slots: tuple
    N: int
    M: int
    R0: float = 0.0
    R: float = 1.0
    scales: dict = field(default_factory=dict)

    @property
    def delta(self) -> float:
        return 0.5 * (self.R - self.R0)

    @property
    def has_threshold(self) -> bool:
        return any(s.kind == THRESHOLD for s in self.slots)

    def per_channel(self) -> dict:
        out = {}
        for s in self.slots:
            out.setdefault(s.channel.id, []).append(s)
        return out

    def modes(self, direction):
        return [s.mode(direction, self.R0, self.delta, self.R, self.scales.get((i, direction), 1.0))
                for i, s in enumerate(self.slots)]

    def table(self):
        """Rows ``(channel, n, mu, Re lam, Im lam, kind)``."""
        return [(s.channel.id, s.n, s.mu, s.lam.real, s.lam.imag, s.kind) for s in self.slots]


def _channel_slots(ch, omega, gamma, eps_thr, q, ds, cap):
    count = 4
    while True:
        pairs = cross_section_eigen(ch, count, q, ds)
        slots = []
        done = False
        for p in pairs:
            lam = longitudinal_wavenumber(omega, p.mu)
            kind = classify(omega, p.mu, eps_thr)
            if kind == EVANESCENT and not abs(lam.imag) < gamma:
                done = True
                break
            if kind == THRESHOLD:
                lam = 0j
            slots.append(ModeSlot(ch, p.n, p.mu, lam, kind, pair=p))
        if done:
            return slots
        if count > cap:
            raise GammaTooLarge(f"channel {ch.id}: more than {cap} modes satisfy |Im lam| < {gamma}")
        count *= 2


def _grating_slots(ch, omega, alpha, gamma, eps_thr, cap):
    kmax = np.sqrt(max(omega, 0.0) + gamma * gamma)
    nmax = int(np.ceil(kmax + abs(alpha))) + 1
    orders = np.arange(-nmax, nmax + 1)
    mu = (orders + alpha) ** 2
    order = np.lexsort((orders, mu))
    slots = []
    for i in order:
        n = int(orders[i])
        lam = longitudinal_wavenumber(omega, mu[i])
        kind = classify(omega, mu[i], eps_thr)
        if kind == EVANESCENT and not abs(lam.imag) < gamma:
            continue
        if kind == THRESHOLD:
            lam = 0j
        slots.append(ModeSlot(ch, n, float(mu[i]), lam, kind, alpha=float(alpha)))
    return slots


def select_modes(omega, channels, gamma, eps_thr=EPS_THR, R0=0.0, R=1.0, profile_q=None,
                 alpha=None, ds=None, cap=MAX_MODES) -> ModeSelection:
    """Collect all modes with ``|Im lam| < gamma`` in every channel.

    ``profile_q(channel)`` returns the cross-section coefficient q(s) of a
    channel (or None).  ``alpha`` switches to grating (Rayleigh) orders.
    """
    if not gamma > 0:
        raise ConfigError(f"gamma must be positive, got {gamma}")
    prop, evan = [], []
    for ch in channels:
        if alpha is not None:
            slots = _grating_slots(ch, omega, alpha, gamma, eps_thr, cap)
        else:
            q = profile_q(ch) if profile_q is not None else None
            slots = _channel_slots(ch, omega, gamma, eps_thr, q, ds, cap)
        prop.extend(s for s in slots if s.kind != EVANESCENT)
        evan.extend(s for s in slots if s.kind == EVANESCENT)
    slots = tuple(prop + evan)
    if len(slots) > cap:
        raise GammaTooLarge(f"{len(slots)} modes selected, cap is {cap}; lower gamma")
    return ModeSelection(float(omega), float(gamma), float(eps_thr), slots, len(prop), len(slots),
                         float(R0), float(R))
