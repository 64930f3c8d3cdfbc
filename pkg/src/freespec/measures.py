"""Compactly supported spectral measures and their Cauchy transforms.

A measure is a list of atoms plus a list of absolutely continuous pieces.
Each piece is either a named family (semicircle, marchenko_pastur, arcsine,
uniform) or a tabulated density (linearly interpolated).  Named families get
closed-form Cauchy transforms and CDFs; everything falls back to
Gauss-Legendre quadrature with edge-adapted substitutions.

All square roots of the form sqrt(z^2 - r^2) are taken on the branch that
behaves like z at infinity, so every Cauchy transform satisfies G(z) ~ 1/z.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.optimize import brentq


@lru_cache(maxsize=256)
def _cached_leggauss(n: int):
    x, w = leggauss(n)
    x.flags.writeable = False
    w.flags.writeable = False
    return x, w

__all__ = [
    "MeasureDomainError",
    "SpectralMeasure",
    "semicircle",
    "marchenko_pastur",
    "arcsine",
    "uniform",
    "point_mass",
    "finite_atomic",
    "from_density_table",
    "mixture",
    "cauchy_scalar",
    "cauchy_matrix",
    "quantiles",
    "sample",
]

_MASS_TOL = 1e-12
_REAL_AXIS_CLEARANCE = 1e-9

_FAMILIES = ("semicircle", "marchenko_pastur", "arcsine", "uniform", "table")


class MeasureDomainError(ValueError):
    """Evaluation point too close to (or inside) the support."""


@dataclass(frozen=True)
class DensityPiece:
    family: str
    a: float
    b: float
    mass: float
    params: tuple = ()
    table_x: tuple = ()
    table_y: tuple = ()

    def __post_init__(self):
        if self.family not in _FAMILIES:
            raise ValueError(f"unknown density family {self.family!r}")
        if not (np.isfinite(self.a) and np.isfinite(self.b) and self.a < self.b):
            raise ValueError("density piece needs a bounded interval a < b")
        if self.mass < 0:
            raise ValueError("piece mass must be nonnegative")

    # density value of the *normalized* (mass-1) shape at t
    def shape_density(self, t):
        t = np.asarray(t, dtype=float)
        a, b = self.a, self.b
        inside = (t > a) & (t < b)
        out = np.zeros_like(t, dtype=float)
        if self.family == "semicircle":
            mean, var = self.params
            s = (t - mean) / np.sqrt(var)
            vals = np.sqrt(np.clip(4.0 - s * s, 0.0, None)) / (2.0 * np.pi * np.sqrt(var))
            out = np.where(inside, vals, 0.0)
        elif self.family == "marchenko_pastur":
            with np.errstate(divide="ignore", invalid="ignore"):
                vals = np.sqrt(np.clip((4.0 - t) * t, 0.0, None)) / (2.0 * np.pi * np.where(t != 0, t, 1.0))
            out = np.where(inside, vals, 0.0)
        elif self.family == "arcsine":
            with np.errstate(divide="ignore", invalid="ignore"):
                vals = 1.0 / (np.pi * np.sqrt(np.clip((t - a) * (b - t), 1e-300, None)))
            out = np.where(inside, vals, 0.0)
        elif self.family == "uniform":
            out = np.where(inside, 1.0 / (b - a), 0.0)
        elif self.family == "table":
            xs = np.asarray(self.table_x)
            ys = np.asarray(self.table_y)
            out = np.where(inside, np.interp(t, xs, ys), 0.0)
        return out

    def density(self, t):
        return self.mass * self.shape_density(t)

    # quadrature rule with sum(weights) = mass; substitutions remove the
    # square-root edge behaviour of the named families
    def rule(self, n_nodes: int):
        return _piece_rule(self, n_nodes)

    def _build_rule(self, n_nodes: int):
        if self.family == "table":
            return self._table_rule(n_nodes)
        u, du = _gauss01(n_nodes)
        if self.family == "semicircle":
            mean, var = self.params
            sigma = np.sqrt(var)
            t = mean - 2.0 * sigma * np.cos(np.pi * u)
            w = 2.0 * np.sin(np.pi * u) ** 2 * du
        elif self.family == "marchenko_pastur":
            t = 2.0 - 2.0 * np.cos(np.pi * u)
            w = 2.0 * np.cos(np.pi * u / 2.0) ** 2 * du
        elif self.family == "arcsine":
            t = self.a + (self.b - self.a) * np.sin(np.pi * u / 2.0) ** 2
            w = du
        else:  # uniform
            t = self.a + (self.b - self.a) * u
            w = du
        return t, self.mass * w

    def _table_rule(self, n_nodes: int):
        xs = np.asarray(self.table_x)
        ys = np.asarray(self.table_y)
        nseg = len(xs) - 1
        per = max(4, int(np.ceil(n_nodes / nseg)))
        gl_x, gl_w = _cached_leggauss(per)
        ts, ws = [], []
        for j in range(nseg):
            lo, hi = xs[j], xs[j + 1]
            half = 0.5 * (hi - lo)
            t = 0.5 * (lo + hi) + half * gl_x
            ts.append(t)
            ws.append(gl_w * half * np.interp(t, xs, ys) * self.mass)
        return np.concatenate(ts), np.concatenate(ws)

    # map from the smooth integration variable u in [0,1] to t, used by the
    # singularity-splitting quadrature
    def u_of_t(self, t: float) -> float:
        if self.family == "semicircle":
            mean, var = self.params
            s = np.clip((t - mean) / (2.0 * np.sqrt(var)), -1.0, 1.0)
            return float(np.arccos(-s) / np.pi)
        if self.family == "marchenko_pastur":
            return float(np.arccos(np.clip(1.0 - t / 2.0, -1.0, 1.0)) / np.pi)
        if self.family == "arcsine":
            r = np.clip((t - self.a) / (self.b - self.a), 0.0, 1.0)
            return float(2.0 * np.arcsin(np.sqrt(r)) / np.pi)
        return float(np.clip((t - self.a) / (self.b - self.a), 0.0, 1.0))

    def t_and_weight_of_u(self, u):
        """t(u) and the smooth weight w(u) with integral = mass."""
        u = np.asarray(u, dtype=float)
        if self.family == "semicircle":
            mean, var = self.params
            sigma = np.sqrt(var)
            return mean - 2.0 * sigma * np.cos(np.pi * u), self.mass * 2.0 * np.sin(np.pi * u) ** 2
        if self.family == "marchenko_pastur":
            return 2.0 - 2.0 * np.cos(np.pi * u), self.mass * 2.0 * np.cos(np.pi * u / 2.0) ** 2
        if self.family == "arcsine":
            return self.a + (self.b - self.a) * np.sin(np.pi * u / 2.0) ** 2, self.mass * np.ones_like(u)
        if self.family == "uniform":
            return self.a + (self.b - self.a) * u, self.mass * np.ones_like(u)
        t = self.a + (self.b - self.a) * u
        dens = np.interp(t, np.asarray(self.table_x), np.asarray(self.table_y))
        return t, self.mass * (self.b - self.a) * dens

    def shape_cdf(self, t: float) -> float:
        """CDF of the normalized shape (0 at a, 1 at b)."""
        if t <= self.a:
            return 0.0
        if t >= self.b:
            return 1.0
        if self.family == "semicircle":
            mean, var = self.params
            s = (t - mean) / np.sqrt(var)
            return 0.5 + s * np.sqrt(4.0 - s * s) / (4.0 * np.pi) + np.arcsin(s / 2.0) / np.pi
        if self.family == "marchenko_pastur":
            u = np.arccos(1.0 - t / 2.0) / np.pi
            return u + np.sin(np.pi * u) / np.pi
        if self.family == "arcsine":
            return self.u_of_t(t)
        if self.family == "uniform":
            return (t - self.a) / (self.b - self.a)
        xs = np.asarray(self.table_x)
        ys = np.asarray(self.table_y)
        total = np.trapezoid(ys, xs)
        j = np.searchsorted(xs, t) - 1
        j = min(max(j, 0), len(xs) - 2)
        partial = np.trapezoid(ys[: j + 1], xs[: j + 1]) if j >= 1 else 0.0
        y_t = np.interp(t, xs, ys)
        partial += 0.5 * (ys[j] + y_t) * (t - xs[j])
        return float(partial / total)


@dataclass(frozen=True)
class SpectralMeasure:
    atoms: tuple = ()          # ((location, mass), ...)
    pieces: tuple = ()         # (DensityPiece, ...)

    def __post_init__(self):
        total = sum(m for _, m in self.atoms) + sum(p.mass for p in self.pieces)
        if any(m < 0 for _, m in self.atoms):
            raise ValueError("atom masses must be nonnegative")
        if abs(total - 1.0) > _MASS_TOL:
            raise ValueError(f"measure masses sum to {total!r}, expected 1")

    # -- support ----------------------------------------------------------

    def support_intervals(self):
        return [(p.a, p.b) for p in self.pieces]

    def support_points(self):
        return [loc for loc, _ in self.atoms]

    def support_radius(self) -> float:
        vals = [abs(loc) for loc, _ in self.atoms]
        vals += [max(abs(p.a), abs(p.b)) for p in self.pieces]
        return max(vals) if vals else 0.0

    def support_distance(self, x: float) -> float:
        d = np.inf
        for loc, _ in self.atoms:
            d = min(d, abs(x - loc))
        for p in self.pieces:
            if p.a <= x <= p.b:
                return 0.0
            d = min(d, abs(x - p.a), abs(x - p.b))
        return d

    def density(self, t):
        t = np.asarray(t, dtype=float)
        out = np.zeros_like(t, dtype=float)
        for p in self.pieces:
            out = out + p.density(t)
        return out

    def is_single_semicircle(self):
        """(mean, variance) if the measure is exactly one full-mass semicircle."""
        if not self.atoms and len(self.pieces) == 1 and self.pieces[0].family == "semicircle" \
                and abs(self.pieces[0].mass - 1.0) <= _MASS_TOL:
            return self.pieces[0].params
        return None

    def is_atomic(self) -> bool:
        return not self.pieces

    # -- CDF / quantiles ---------------------------------------------------

    def cdf(self, t: float) -> float:
        total = 0.0
        for loc, m in self.atoms:
            if loc <= t:
                total += m
        for p in self.pieces:
            total += p.mass * p.shape_cdf(t)
        return total


def _gauss01(n: int):
    x, w = _cached_leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


@lru_cache(maxsize=512)
def _piece_rule(piece: "DensityPiece", n_nodes: int):
    t, w = piece._build_rule(n_nodes)
    t.flags.writeable = False
    w.flags.writeable = False
    return t, w


# ---------------------------------------------------------------------------
# constructors
# ---------------------------------------------------------------------------

def semicircle(mean: float = 0.0, variance: float = 1.0) -> SpectralMeasure:
    """Semicircle of given mean and variance; support [mean-2s, mean+2s]."""
    if variance <= 0:
        raise ValueError("variance must be positive")
    sigma = float(np.sqrt(variance))
    piece = DensityPiece("semicircle", mean - 2 * sigma, mean + 2 * sigma, 1.0,
                         params=(float(mean), float(variance)))
    return SpectralMeasure(pieces=(piece,))


def marchenko_pastur() -> SpectralMeasure:
    """Marchenko-Pastur with ratio 1: density sqrt((4-x)x)/(2 pi x) on (0,4)."""
    return SpectralMeasure(pieces=(DensityPiece("marchenko_pastur", 0.0, 4.0, 1.0),))


def arcsine(a: float = -2.0, b: float = 2.0) -> SpectralMeasure:
    return SpectralMeasure(pieces=(DensityPiece("arcsine", float(a), float(b), 1.0),))


def uniform(a: float = 0.0, b: float = 1.0) -> SpectralMeasure:
    return SpectralMeasure(pieces=(DensityPiece("uniform", float(a), float(b), 1.0),))


def point_mass(location: float) -> SpectralMeasure:
    return SpectralMeasure(atoms=((float(location), 1.0),))


def finite_atomic(pairs: Sequence) -> SpectralMeasure:
    return SpectralMeasure(atoms=tuple((float(t), float(m)) for t, m in pairs))


def from_density_table(xs: Sequence[float], ys: Sequence[float], mass: float = 1.0) -> SpectralMeasure:
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if len(xs) < 2 or np.any(np.diff(xs) <= 0):
        raise ValueError("table abscissae must be strictly increasing, length >= 2")
    if np.any(ys < 0):
        raise ValueError("table densities must be nonnegative")
    total = np.trapezoid(ys, xs)
    if total <= 0:
        raise ValueError("table density integrates to zero")
    ys = ys * (mass / total)
    piece = DensityPiece("table", float(xs[0]), float(xs[-1]), float(mass),
                         table_x=tuple(xs), table_y=tuple(ys))
    return SpectralMeasure(pieces=(piece,))


def mixture(components: Sequence) -> SpectralMeasure:
    """Convex combination [(measure, weight), ...]; weights must sum to 1."""
    atoms = []
    pieces = []
    for m, w in components:
        for loc, mass in m.atoms:
            atoms.append((loc, mass * w))
        for p in m.pieces:
            pieces.append(DensityPiece(p.family, p.a, p.b, p.mass * w,
                                       params=p.params, table_x=p.table_x, table_y=p.table_y))
    return SpectralMeasure(atoms=tuple(atoms), pieces=tuple(pieces))


# ---------------------------------------------------------------------------
# scalar Cauchy transform
# ---------------------------------------------------------------------------

def _sqrt_like_z(z, r2):
    """sqrt(z^2 - r2) on the branch asymptotic to z at infinity."""
    return z * np.sqrt(1.0 - r2 / (z * z))


def _piece_cauchy_closed(piece: DensityPiece, z: complex):
    if piece.family == "semicircle":
        mean, var = piece.params
        y = z - mean
        return (y - _sqrt_like_z(y, 4.0 * var)) / (2.0 * var)
    if piece.family == "marchenko_pastur":
        # (z - sqrt(z^2-4z))/(2z), branch positive for z > 4
        return (1.0 - np.sqrt(1.0 - 4.0 / z)) / 2.0
    if piece.family == "arcsine":
        c = 0.5 * (piece.a + piece.b)
        h = 0.5 * (piece.b - piece.a)
        y = z - c
        return 1.0 / _sqrt_like_z(y, h * h)
    if piece.family == "uniform":
        return np.log((z - piece.a) / (z - piece.b)) / (piece.b - piece.a)
    return None


def _check_real_clearance(m: SpectralMeasure, z: complex):
    if abs(np.imag(z)) < _REAL_AXIS_CLEARANCE / 10:
        if m.support_distance(float(np.real(z))) <= _REAL_AXIS_CLEARANCE:
            raise MeasureDomainError(
                f"z = {z} is within {_REAL_AXIS_CLEARANCE} of the support; "
                "approach the real axis with an explicit imaginary part")


def cauchy_scalar(m: SpectralMeasure, z: complex, n_nodes: int = 256,
                  force_quadrature: bool = False) -> complex:
    """G_m(z) = sum mass/(z-atom) + integral density(t)/(z-t) dt."""
    z = complex(z)
    _check_real_clearance(m, z)
    out = 0.0 + 0.0j
    for loc, mass in m.atoms:
        out += mass / (z - loc)
    for piece in m.pieces:
        closed = None if force_quadrature else _piece_cauchy_closed(piece, z)
        if closed is not None:
            out += piece.mass * closed
        else:
            out += _piece_cauchy_quad(piece, z, n_nodes)
    return out


def _piece_cauchy_quad(piece: DensityPiece, z: complex, n_nodes: int) -> complex:
    prev = None
    n = n_nodes
    while True:
        t, w = piece.rule(n)
        val = np.sum(w / (z - t))
        if prev is not None and abs(val - prev) < 1e-12 * max(1.0, abs(val)):
            return val
        if n >= 32 * n_nodes:
            return val
        prev = val
        n *= 2


# ---------------------------------------------------------------------------
# matrix Cauchy transform  G(beta) = sum mass (beta - t gamma)^-1 + integral
# ---------------------------------------------------------------------------

def _batched_resolvent_sum(beta, gamma, ts, ws):
    mats = beta[None, :, :] - ts[:, None, None] * gamma[None, :, :]
    try:
        inv = np.linalg.inv(mats)
    except np.linalg.LinAlgError as exc:
        raise MeasureDomainError(f"singular beta - t*gamma at a quadrature node: {exc}") from exc
    return np.einsum("k,kij->ij", ws, inv)


def _det_poly_real_roots(beta_r, gamma, a, b):
    """Real t in [a,b] (with margin) where det(beta_r - t*gamma) vanishes."""
    n = beta_r.shape[0]
    ts = np.cos(np.pi * (np.arange(n + 1) + 0.5) / (n + 1))  # Chebyshev nodes
    ts = 0.5 * (a + b) + 0.5 * (b - a) * ts
    dets = np.array([np.linalg.det(beta_r - t * gamma) for t in ts])
    scale = np.abs(dets).max()
    if scale == 0:
        return []
    coeffs = np.polynomial.polynomial.polyfit(ts, dets / scale, n)
    roots = np.polynomial.polynomial.polyroots(coeffs)
    width = b - a
    out = []
    for r in roots:
        if abs(r.imag) < 0.05 * width and a - 0.01 * width <= r.real <= b + 0.01 * width:
            out.append(float(r.real))
    return sorted(out)


def _graded_u_panels(u_stars, widths, per_panel=12):
    """Composite Gauss-Legendre nodes on [0,1], geometrically refined toward
    each u_star down to the given local width."""
    cuts = {0.0, 1.0}
    for u0, wmin in zip(u_stars, widths):
        w = max(wmin, 1e-9)
        while w < 0.6:
            cuts.add(min(1.0, max(0.0, u0 - w)))
            cuts.add(min(1.0, max(0.0, u0 + w)))
            w *= 2.0
        cuts.add(min(1.0, max(0.0, u0)))
    cuts = sorted(cuts)
    gl_x, gl_w = _cached_leggauss(per_panel)
    us, dus = [], []
    for lo, hi in zip(cuts[:-1], cuts[1:]):
        if hi - lo < 1e-15:
            continue
        half = 0.5 * (hi - lo)
        us.append(0.5 * (lo + hi) + half * gl_x)
        dus.append(half * gl_w)
    return np.concatenate(us), np.concatenate(dus)


def _piece_cauchy_matrix(piece: DensityPiece, gamma, beta, n_nodes: int):
    n = beta.shape[0]
    gnorm = np.linalg.norm(gamma, 2)
    # locate near-singular t inside the piece; split the quadrature there
    beta_r = 0.5 * (beta + beta.conj().T)
    stars = _det_poly_real_roots(beta_r, gamma, piece.a, piece.b) if gnorm > 0 else []
    deltas = []
    keep = []
    for t0 in stars:
        sv = np.linalg.svd(beta - t0 * gamma, compute_uv=False)[-1]
        delta = sv / max(gnorm, 1e-300)
        if delta < 0.05 * (piece.b - piece.a):
            keep.append(t0)
            deltas.append(delta)
    if not keep:
        prev = None
        k = n_nodes
        while True:
            ts, ws = piece.rule(k)
            val = _batched_resolvent_sum(beta, gamma, ts, ws)
            if prev is not None and np.linalg.norm(val - prev) < 1e-10 * max(1.0, np.linalg.norm(val)):
                return val
            if k >= 32 * n_nodes:
                return val
            prev = val
            k *= 2
    # graded composite rule in the smooth variable u
    u_stars = [piece.u_of_t(t0) for t0 in keep]
    # convert the t-clearance into a u-width via |dt/du| ~ (b-a)
    widths = [max(d / (piece.b - piece.a) / 4.0, 1e-9) for d in deltas]
    us, dus = _graded_u_panels(u_stars, widths)
    ts, wfun = piece.t_and_weight_of_u(us)
    ws = wfun * dus
    return _batched_resolvent_sum(beta, gamma, ts, ws)


def cauchy_matrix(m: SpectralMeasure, gamma, beta, n_nodes: int = 256):
    """Matrix Cauchy transform of gamma (x) a for a with distribution m.

    Requires beta - t*gamma invertible along the support (always true when the
    imaginary part of beta is positive definite).
    """
    gamma = np.asarray(gamma, dtype=complex)
    beta = np.asarray(beta, dtype=complex)
    n = beta.shape[0]
    if gamma.shape != (n, n):
        raise ValueError("gamma and beta must be square matrices of equal size")
    out = np.zeros((n, n), dtype=complex)
    for loc, mass in m.atoms:
        try:
            out += mass * np.linalg.inv(beta - loc * gamma)
        except np.linalg.LinAlgError as exc:
            raise MeasureDomainError(f"singular beta - t*gamma at atom t={loc}") from exc
    for piece in m.pieces:
        out += _piece_cauchy_matrix(piece, gamma, beta, n_nodes)
    return out


# ---------------------------------------------------------------------------
# quantiles and sampling
# ---------------------------------------------------------------------------

def _invert_cdf(m: SpectralMeasure, q: float) -> float:
    """Generalized inverse CDF at q in (0,1)."""
    events = []  # (sort key, kind, payload)
    for loc, mass in m.atoms:
        events.append((loc, "atom", (loc, mass)))
    for p in m.pieces:
        events.append((p.a, "piece", p))
    events.sort(key=lambda e: e[0])

    # walk components in increasing order of their left edge; pieces may
    # overlap, in which case brentq on the global cdf below still works
    overlapping = False
    for i in range(len(events) - 1):
        if events[i][1] == "piece" and events[i + 1][0] < events[i][2].b:
            overlapping = True
            break
    if not overlapping:
        acc = 0.0
        for _, kind, payload in events:
            if kind == "atom":
                loc, mass = payload
                if q <= acc + mass + 1e-15:
                    return loc
                acc += mass
            else:
                p = payload
                if q <= acc + p.mass + 1e-15:
                    local = min(max((q - acc) / p.mass, 0.0), 1.0)
                    return _invert_piece(p, local)
                acc += p.mass
        return events[-1][0] if events else 0.0

    lo = min(e[0] for e in events)
    hi = max([loc for loc, _ in m.atoms] + [p.b for p in m.pieces])
    f = lambda t: m.cdf(t) - q
    if f(lo) >= 0:
        return lo
    if f(hi) <= 0:
        return hi
    return brentq(f, lo, hi, xtol=1e-12)


def _invert_piece(p: DensityPiece, q: float) -> float:
    if q <= 0:
        return p.a
    if q >= 1:
        return p.b
    if p.family == "uniform":
        return p.a + (p.b - p.a) * q
    if p.family == "arcsine":
        return p.a + (p.b - p.a) * np.sin(np.pi * q / 2.0) ** 2
    return brentq(lambda t: p.shape_cdf(t) - q, p.a, p.b, xtol=1e-12)


def quantiles(m: SpectralMeasure, N: int):
    """Inverse CDF at (i - 1/2)/N for i = 1..N; sorted, inside the support."""
    if N < 1:
        raise ValueError("N must be >= 1")
    qs = (np.arange(N) + 0.5) / N
    return np.array([_invert_cdf(m, q) for q in qs])


def sample(m: SpectralMeasure, N: int, seed) -> np.ndarray:
    """N i.i.d. draws via inverse-CDF of a seeded uniform stream."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    us = rng.uniform(size=N)
    return np.array([_invert_cdf(m, u) for u in us])
