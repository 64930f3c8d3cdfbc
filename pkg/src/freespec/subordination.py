"""Operator-valued subordination for pencils of two free elements.

The model is c + d with c = gamma1 (x) a and d = gamma2 (x) b, where a and b
are free selfadjoint elements with laws mu and nu, and the gammas come from a
linearization pencil.  For a spectral parameter beta in M_n(C) with positive
(semi)definite imaginary part, the subordination matrix omega = omega1(beta)
satisfies

    G(beta) = G1(omega1),   omega1 = beta + H2(beta + H1(omega1)),

where Gj is the matrix Cauchy transform of gammaj (x) (a or b), Fj = Gj^{-1}
is the reciprocal transform, and Hj(w) = Fj(w) - w.  Two solution routes:

  * general: damped fixed-point iteration of T(w) = beta + H2(beta + H1(w)),
    which is a half-space self-map;
  * semicircular nu: the R-transform of gamma2 (x) b is linear, so omega
    solves omega = beta - m*gamma2 - var*gamma2 G1(omega) gamma2; this is
    solved by a damped Newton method and remains accurate arbitrarily close
    to the real axis (no quadrature on the b side).

continue_to_real chases a real spectral parameter down a descending schedule
of imaginary offsets with warm starts, extrapolates linearly in eta, and also
returns the regularized matrix u0 = (omega + i*I)^{-1}, which stays bounded
even when omega itself has poles between spectral outliers.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .linearize import LinearizationPencil
from .measures import MeasureDomainError, SpectralMeasure, cauchy_matrix

__all__ = [
    "FreeModel",
    "SubordinationSolution",
    "SubordinationError",
    "solve_omega",
    "pencil_resolvent_expectation",
    "continue_to_real",
    "DEFAULT_ETA_SCHEDULE",
]

DEFAULT_TOL = 1e-11
DEFAULT_MAX_ITER = 20000
DEFAULT_ETA_SCHEDULE = (1e-1, 1e-2, 1e-3, 1e-4, 1e-5)

_PSD_SLACK = 1e-12


class SubordinationError(RuntimeError):
    """Fixed-point iteration failed to converge or hit a singular transform."""


@dataclass
class FreeModel:
    """Pencil plus the two spectral laws; nu_kind picks the solver route."""

    pencil: LinearizationPencil
    mu: SpectralMeasure
    nu: SpectralMeasure
    nu_kind: str = "auto"

    def __post_init__(self):
        if self.pencil.arity != 2:
            raise ValueError("free model needs a pencil in two letters")
        if self.nu_kind == "auto":
            self.nu_kind = "semicircular" if self.nu.is_single_semicircle() else "general"
        if self.nu_kind not in ("general", "semicircular"):
            raise ValueError(f"unknown nu_kind {self.nu_kind!r}")
        if self.nu_kind == "semicircular" and self.nu.is_single_semicircle() is None:
            raise ValueError("nu_kind=semicircular but nu is not a single semicircle")

    @property
    def n(self) -> int:
        return self.pencil.n

    def beta_of_z(self, z: complex) -> np.ndarray:
        return self.pencil.beta_of_z(z)


@dataclass
class SubordinationSolution:
    beta: np.ndarray
    omega: np.ndarray
    F: np.ndarray
    iterations: int
    residual: float
    route: str
    omega2: Optional[np.ndarray] = None
    u0: Optional[np.ndarray] = None
    pole_proximity: bool = False
    eta_used: Optional[tuple] = None
    f11_chain: tuple = ()  # (eta, F[0,0]) pairs from the descent, smallest eta last


def _imag_part(beta):
    return (beta - beta.conj().T) / 2j


def _single_atom(law: SpectralMeasure):
    if not law.pieces and len(law.atoms) == 1:
        return law.atoms[0][0]
    return None


def _h_transform(law, gamma, w):
    """H(w) = G(w)^{-1} - w; exact (-t*gamma) for a unit point mass."""
    t0 = _single_atom(law)
    if t0 is not None:
        return -t0 * gamma
    G = cauchy_matrix(law, gamma, w)
    return np.linalg.inv(G) - w


def solve_omega(model: FreeModel, beta, tol: float = DEFAULT_TOL,
                max_iter: int = DEFAULT_MAX_ITER, warm_start=None,
                force_route: Optional[str] = None) -> SubordinationSolution:
    """Solve the subordination fixed point at spectral parameter beta.

    beta may have positive semidefinite imaginary part (the pencil parameter
    z*e11 - gamma0 with Im z > 0 is the typical boundary case); negative
    semidefinite imaginary parts are handled through omega(beta*) = omega(beta)*.
    """
    beta = np.asarray(beta, dtype=complex)
    n = model.n
    if beta.shape != (n, n):
        raise ValueError(f"beta must be {n} x {n}")
    ims = np.linalg.eigvalsh(_imag_part(beta))
    if ims.min() >= -_PSD_SLACK:
        pass
    elif ims.max() <= _PSD_SLACK:
        warm = None if warm_start is None else np.asarray(warm_start).conj().T
        upper = solve_omega(model, beta.conj().T, tol, max_iter, warm, force_route)
        return SubordinationSolution(
            beta=beta, omega=upper.omega.conj().T, F=upper.F.conj().T,
            iterations=upper.iterations, residual=upper.residual,
            route=upper.route,
            omega2=None if upper.omega2 is None else upper.omega2.conj().T)
    else:
        raise SubordinationError("imaginary part of beta is indefinite")

    route = force_route or model.nu_kind
    if route == "semicircular":
        if model.nu.is_single_semicircle() is None:
            raise ValueError("semicircular route requires a single-semicircle nu")
        omega, iters, residual = _solve_semicircular(model, beta, tol, max_iter, warm_start)
    elif route == "general":
        omega, iters, residual = _solve_general(model, beta, tol, max_iter, warm_start)
    else:
        raise ValueError(f"unknown route {route!r}")

    g1 = model.pencil.gammas[1]
    try:
        F = cauchy_matrix(model.mu, g1, omega)
        omega2 = beta + _h_transform(model.mu, g1, omega)
    except (MeasureDomainError, np.linalg.LinAlgError) as exc:
        raise SubordinationError(f"transform evaluation failed at the solution: {exc}") from exc
    return SubordinationSolution(beta=beta, omega=omega, F=F, iterations=iters,
                                 residual=residual, route=route, omega2=omega2)


def _solve_general(model, beta, tol, max_iter, warm_start):
    g1, g2 = model.pencil.gammas[1], model.pencil.gammas[2]

    def step(w):
        inner = beta + _h_transform(model.mu, g1, w)
        return beta + _h_transform(model.nu, g2, inner)

    w = np.array(beta if warm_start is None else warm_start, dtype=complex)
    lam = 1.0
    window = deque(maxlen=10)
    res = np.inf
    for it in range(1, max_iter + 1):
        try:
            tw = step(w)
        except (MeasureDomainError, np.linalg.LinAlgError) as exc:
            raise SubordinationError(f"singular transform during iteration {it}: {exc}") from exc
        res = float(np.linalg.norm(tw - w))
        if res <= tol:
            return tw, it, res
        window.append(res)
        if lam == 1.0 and len(window) == window.maxlen:
            diffs = np.diff(np.array(window))
            if np.any(diffs > 0):
                lam = 0.5
        w = w + lam * (tw - w)
    raise SubordinationError(
        f"no convergence after {max_iter} iterations (residual {res:.3g})")


def _g1_and_nodes(model, omega):
    """G1(omega) along with the (t, weight) node set that produced it."""
    g1 = model.pencil.gammas[1]
    nodes = [(loc, mass) for loc, mass in model.mu.atoms]
    for piece in model.mu.pieces:
        ts, ws = piece.rule(256)
        nodes.extend(zip(ts, ws))
    G = cauchy_matrix(model.mu, g1, omega)
    return G, nodes


def _solve_semicircular(model, beta, tol, max_iter, warm_start):
    mean, var = model.nu.is_single_semicircle()
    g1, g2 = model.pencil.gammas[1], model.pencil.gammas[2]
    n = model.n
    shift = beta - mean * g2

    def phi(om):
        G = cauchy_matrix(model.mu, g1, om)
        return om - shift + var * (g2 @ G @ g2), G

    om = np.array(beta if warm_start is None else warm_start, dtype=complex)
    try:
        r, _ = phi(om)
    except (MeasureDomainError, np.linalg.LinAlgError):
        om = np.array(beta, dtype=complex) + 1j * np.eye(n)
        r, _ = phi(om)
    rn = float(np.linalg.norm(r))
    evals = 1
    g2t_kron = np.kron(g2.T, g2)
    eye_vec = np.eye(n * n)

    while evals < max_iter:
        if rn <= tol:
            return om, evals, rn
        # Newton direction: (I + var*(g2^T (x) g2) K) vec(delta) = -vec(phi)
        _, nodes = _g1_and_nodes(model, om)
        K = np.zeros((n * n, n * n), dtype=complex)
        for t, wgt in nodes:
            R = np.linalg.inv(om - t * g1)
            K -= wgt * np.kron(R.T, R)
        J = eye_vec + var * (g2t_kron @ K)
        try:
            delta = np.linalg.solve(J, -r.flatten(order="F")).reshape((n, n), order="F")
        except np.linalg.LinAlgError as exc:
            raise SubordinationError(f"singular Newton system: {exc}") from exc
        alpha = 1.0
        accepted = False
        while alpha >= 1.0 / 64:
            cand = om + alpha * delta
            try:
                r_new, _ = phi(cand)
            except (MeasureDomainError, np.linalg.LinAlgError):
                alpha /= 2
                continue
            rn_new = float(np.linalg.norm(r_new))
            evals += 1
            if rn_new < (1 - alpha / 4) * rn or rn_new <= tol:
                om, r, rn = cand, r_new, rn_new
                accepted = True
                break
            alpha /= 2
        if not accepted:
            # fall back to damped Picard steps until Newton can restart
            for _ in range(50):
                if evals >= max_iter:
                    break
                try:
                    G = cauchy_matrix(model.mu, g1, om)
                except (MeasureDomainError, np.linalg.LinAlgError) as exc:
                    raise SubordinationError(f"singular transform in fallback: {exc}") from exc
                target = shift - var * (g2 @ G @ g2)
                om = om + 0.5 * (target - om)
                evals += 1
            r, _ = phi(om)
            rn = float(np.linalg.norm(r))
    if rn <= tol:
        return om, evals, rn
    raise SubordinationError(
        f"semicircular route: no convergence after {evals} evaluations (residual {rn:.3g})")


def pencil_resolvent_expectation(model: FreeModel, beta, **kwargs) -> np.ndarray:
    """F(beta) = G1(omega(beta)): the expected pencil resolvent over M_n."""
    return solve_omega(model, beta, **kwargs).F


def continue_to_real(model: FreeModel, z: float,
                     eta_schedule: Sequence[float] = DEFAULT_ETA_SCHEDULE,
                     tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER,
                     force_route: Optional[str] = None) -> SubordinationSolution:
    """Warm-started descent to the real axis at z, with linear extrapolation.

    omega and F are extrapolated to eta = 0 from the last two schedule points;
    when the chain is diverging (norm at least doubling into the last step and
    far above the natural scale -- an atom or hard edge under the grid point)
    the smallest-eta values are returned instead: trust the data, not the
    model, near poles.  u0 = (omega(eta_min) + i I)^{-1} is always formed from
    the unextrapolated solution.
    """
    etas = tuple(float(e) for e in eta_schedule)
    if len(etas) < 2 or any(e <= 0 for e in etas) or any(np.diff(etas) >= 0):
        raise ValueError("eta_schedule must be >= 2 strictly decreasing positive values")
    warm = None
    history = []
    total_iters = 0
    for eta in etas:
        beta = model.beta_of_z(z + 1j * eta)
        sol = solve_omega(model, beta, tol=tol, max_iter=max_iter,
                          warm_start=warm, force_route=force_route)
        warm = sol.omega
        total_iters += sol.iterations
        history.append((eta, sol))

    (e1, s1), (e2, s2) = history[-2], history[-1]
    omega0 = s2.omega - (e2 / (e1 - e2)) * (s1.omega - s2.omega)
    f0 = s2.F - (e2 / (e1 - e2)) * (s1.F - s2.F)

    scale = 1.0 + abs(z) + np.linalg.norm(model.pencil.gammas[0], 2)
    n_last = np.linalg.norm(s2.omega)
    n_prev = np.linalg.norm(s1.omega)
    pole = bool(n_last >= 2.0 * n_prev and n_last > 10.0 * scale)
    if pole:
        # omega is running off to infinity along the chain (atom or hard
        # spectral edge under the grid point): the linear model is garbage
        # there, so keep the smallest-eta data instead
        omega0, f0 = s2.omega, s2.F
    u0 = np.linalg.inv(s2.omega + 1j * np.eye(model.n))
    return SubordinationSolution(
        beta=model.beta_of_z(z), omega=omega0, F=f0,
        iterations=total_iters, residual=s2.residual, route=s2.route,
        omega2=s2.omega2, u0=u0, pole_proximity=pole, eta_used=etas,
        f11_chain=tuple((e, complex(s.F[0, 0])) for e, s in history))
