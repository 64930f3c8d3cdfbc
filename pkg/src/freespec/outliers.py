"""Outlier location, multiplicity and overlap residues for spiked models.

A spike theta of the input matrix a produces outlier eigenvalues of
P(A_N, Y_N) at the real zeros t (outside the bulk support) of the
determinant criterion

    plain:        h_theta(z) = det[theta gamma1 - u(z)]
    regularized:  H_theta(z) = det[(theta gamma1 + i I) u0(z) - I]

where u(z) is the subordination matrix continued to the real axis and
u0(z) = (u(z at eta_min) + i I)^{-1} stays bounded even where u has a
pole.  The two criteria differ by the nonvanishing analytic factor
det u0, so they vanish together wherever u is finite.

Multiplicities are winding numbers of the criterion around a small
circle, evaluated by direct upper-half-plane solves (lower nodes come
for free from u(conj z) = u(z)^H); overlap residues are contour
integrals of [(u(z) - theta gamma1)^{-1}]_{1,1}.  Candidates whose
contour nodes fail to converge are rejected rather than guessed -- the
subordination fixed point only ever converges to the Herglotz branch,
which is what rules out spurious algebraic roots of the determinant.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .measures import SpectralMeasure
from .subordination import (
    DEFAULT_ETA_SCHEDULE,
    FreeModel,
    SubordinationError,
    continue_to_real,
    solve_omega,
)

__all__ = [
    "OutlierError",
    "SpikeSet",
    "OutlierZero",
    "OutlierReport",
    "u_and_u0",
    "detect",
    "residues",
    "finite_n_determinant",
    "serialize_report",
    "parse_report",
]

DELTA_MIN_FLOOR = 1e-2
CONTOUR_NODES = 64
SCAN_POINTS = 256
BISECT_TOL = 1e-10
MINIMUM_DIP = 1e-3      # |criterion| local minima below this x median are candidates


class OutlierError(Exception):
    pass


@dataclass(frozen=True)
class SpikeSet:
    """Spike eigenvalues theta_1 >= ... >= theta_p of the input matrix a."""

    thetas: tuple
    distinct: bool

    @classmethod
    def from_values(cls, values: Sequence[float],
                    mu: Optional[SpectralMeasure] = None) -> "SpikeSet":
        ths = tuple(sorted((float(v) for v in values), reverse=True))
        if mu is not None:
            for th in ths:
                if mu.support_distance(th) <= 0.0:
                    raise ValueError(
                        f"spike {th} lies in the support of the input law")
        distinct = all(a > b for a, b in zip(ths, ths[1:]))
        return cls(thetas=ths, distinct=distinct)

    @property
    def p(self) -> int:
        return len(self.thetas)


@dataclass
class OutlierZero:
    t: float
    m: int
    m_per_spike: tuple
    contour_radius: float
    residues: Optional[tuple] = None    # per spike, filled by residues()


@dataclass
class OutlierReport:
    zeros: list
    undecidable: list                   # (approximate t, reason)
    criterion: str
    thetas: tuple
    distinct: bool
    diagnostics: list = field(default_factory=list)


# ---------------------------------------------------------------------------
# pointwise machinery
# ---------------------------------------------------------------------------

def u_and_u0(model: FreeModel, z: float,
             eta_schedule: Sequence[float] = DEFAULT_ETA_SCHEDULE):
    """(u(z), u0(z), pole flag) at real z assumed outside the bulk support.

    u is the real-axis continuation of the subordination matrix (at a pole
    the smallest-eta data is returned and the flag is set); u0 is built from
    the unextrapolated smallest-eta solve and is always finite.
    """
    sol = continue_to_real(model, float(z), eta_schedule=eta_schedule)
    return sol.omega, sol.u0, sol.pole_proximity


def _crit_plain(u, theta, g1):
    return complex(np.linalg.det(theta * g1 - u))


def _crit_regularized(u, theta, g1):
    n = g1.shape[0]
    u0 = np.linalg.inv(u + 1j * np.eye(n))
    return complex(np.linalg.det((theta * g1 + 1j * np.eye(n)) @ u0 - np.eye(n)))


def _crit_regularized_from_u0(u0, theta, g1):
    n = g1.shape[0]
    return complex(np.linalg.det((theta * g1 + 1j * np.eye(n)) @ u0 - np.eye(n)))


def _criterion_fn(criterion):
    if criterion == "plain":
        return _crit_plain
    if criterion == "regularized":
        return _crit_regularized
    raise ValueError(f"criterion must be 'plain' or 'regularized', got {criterion!r}")


# ---------------------------------------------------------------------------
# contours
# ---------------------------------------------------------------------------

def _contour_us(model, t, r, nodes=CONTOUR_NODES):
    """Subordination u at the upper-half nodes of the circle |z - t| = r.

    Node angles are offset by half a step so none sits on the real axis;
    the lower half follows from u(conj z) = u(z)^H.  Any non-convergent
    node aborts the whole contour (spurious-root defense).
    """
    phis = 2.0 * np.pi * (np.arange(nodes) + 0.5) / nodes
    upper = phis[: nodes // 2]
    us = []
    warm = None
    for phi in upper:
        z = t + r * np.exp(1j * phi)
        sol = solve_omega(model, model.beta_of_z(z), warm_start=warm)
        warm = sol.omega
        us.append(sol.omega)
    return phis, us


def _contour_values(phis, us, fn):
    """fn(u) around the full circle, in increasing-angle order."""
    nodes = len(phis)
    vals = [fn(u) for u in us]
    for k in range(nodes // 2, nodes):
        mirror = nodes - 1 - k
        vals.append(fn(us[mirror].conj().T))
    return vals


def _winding_number(vals) -> float:
    total = 0.0
    m = len(vals)
    for k in range(m):
        a, b = vals[k], vals[(k + 1) % m]
        if a == 0 or b == 0 or not (np.isfinite(a) and np.isfinite(b)):
            raise OutlierError("criterion vanished or overflowed on the contour")
        total += np.angle(b / a)
    return total / (2.0 * np.pi)


# ---------------------------------------------------------------------------
# detection
# ---------------------------------------------------------------------------

def _h_plain_real(model, t, theta, g1, etas):
    u, _, _ = u_and_u0(model, t, etas)
    return np.linalg.det(theta * g1 - u).real


def _bisect_zero(model, a, b, fa, fb, theta, g1, etas, tol=BISECT_TOL):
    while b - a > tol:
        mid = 0.5 * (a + b)
        fm = _h_plain_real(model, mid, theta, g1, etas)
        if fm == 0.0:
            return mid
        if (fa < 0) != (fm < 0):
            b, fb = mid, fm
        else:
            a, fa = mid, fm
    return 0.5 * (a + b)


def _golden_minimum(model, a, b, theta, g1, etas, crit, tol=BISECT_TOL):
    """Golden-section minimum of |criterion| (even-order zero candidates)."""
    inv_phi = (np.sqrt(5.0) - 1.0) / 2.0

    def f(t):
        u, _, _ = u_and_u0(model, t, etas)
        return abs(crit(u, theta, g1))

    c = b - inv_phi * (b - a)
    d = a + inv_phi * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - inv_phi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + inv_phi * (b - a)
            fd = f(d)
    return 0.5 * (a + b)


def _support_distance(t, support_intervals):
    d = np.inf
    for a, b in support_intervals:
        if a <= t <= b:
            return 0.0
        d = min(d, abs(t - a), abs(t - b))
    return d


def detect(model: FreeModel, spikes: SpikeSet, search_intervals,
           criterion: str = "regularized",
           support_intervals=None, grid_step: Optional[float] = None,
           scan_points: int = SCAN_POINTS,
           eta_schedule: Sequence[float] = DEFAULT_ETA_SCHEDULE,
           contour_nodes: int = CONTOUR_NODES) -> OutlierReport:
    """Scan real intervals for outlier zeros of the chosen criterion.

    Each interval is scanned on a grid; sign changes of the (real) plain
    determinant are bisected to 1e-10 and sub-threshold |criterion| minima
    are refined by golden section.  Multiplicities come from winding
    numbers around each candidate; zeros closer than delta_min to the
    given support, or with a failing contour, land in the undecidable
    list instead of being guessed.
    """
    crit = _criterion_fn(criterion)
    g1 = model.pencil.gammas[1]
    etas = tuple(eta_schedule)
    delta_min = max(DELTA_MIN_FLOOR,
                    2.0 * grid_step if grid_step else 0.0)

    if support_intervals is not None:
        for a, b in search_intervals:
            for sa, sb in support_intervals:
                if a <= sb and sa <= b:
                    raise OutlierError(
                        f"search interval ({a}, {b}) touches support ({sa}, {sb})")

    candidates = []     # (t, spike index, scan cell width)
    diagnostics = []
    for a, b in search_intervals:
        a, b = float(a), float(b)
        if not b > a:
            raise ValueError("search interval must have positive length")
        ts = np.linspace(a, b, scan_points)
        cell = ts[1] - ts[0]
        us = []
        for t in ts:
            u, _, _ = u_and_u0(model, t, etas)
            us.append(u)
        crit_abs = np.empty((spikes.p, scan_points))
        h_real = np.empty((spikes.p, scan_points))
        for j, theta in enumerate(spikes.thetas):
            for k, u in enumerate(us):
                crit_abs[j, k] = abs(crit(u, theta, g1))
                h_real[j, k] = np.linalg.det(theta * g1 - u).real
        diagnostics.append({"interval": (a, b), "ts": ts, "crit_abs": crit_abs})

        for j, theta in enumerate(spikes.thetas):
            h = h_real[j]
            scale = max(float(np.median(crit_abs[j])), 1e-300)
            for k in range(scan_points - 1):
                if h[k] == 0.0:
                    candidates.append((float(ts[k]), j, cell))
                elif (h[k] < 0) != (h[k + 1] < 0):
                    t0 = _bisect_zero(model, ts[k], ts[k + 1], h[k], h[k + 1],
                                      theta, g1, etas)
                    candidates.append((float(t0), j, cell))
            for k in range(1, scan_points - 1):
                dip = (crit_abs[j, k] < crit_abs[j, k - 1]
                       and crit_abs[j, k] < crit_abs[j, k + 1]
                       and crit_abs[j, k] < MINIMUM_DIP * scale)
                straddles = (h[k - 1] < 0) != (h[k + 1] < 0)
                if dip and not straddles:
                    t0 = _golden_minimum(model, ts[k - 1], ts[k + 1],
                                         theta, g1, etas, crit)
                    candidates.append((float(t0), j, cell))

    # cluster candidates within one scan cell: same zero, possibly multi-spike
    candidates.sort()
    clusters = []
    for t0, j, cell in candidates:
        if clusters and t0 - clusters[-1][-1][0] <= cell:
            clusters[-1].append((t0, j, cell))
        else:
            clusters.append([(t0, j, cell)])

    centers = [float(np.mean([t for t, _, _ in c])) for c in clusters]
    zeros = []
    undecidable = []
    for idx, cluster in enumerate(clusters):
        t0 = centers[idx]
        if support_intervals is not None:
            if _support_distance(t0, support_intervals) < delta_min:
                undecidable.append((t0, "edge proximity"))
                continue
        gaps = [abs(t0 - c) for i, c in enumerate(centers) if i != idx]
        r = delta_min / 2.0
        if gaps:
            r = min(r, 0.45 * min(gaps))
        if support_intervals is not None:
            r = min(r, 0.8 * _support_distance(t0, support_intervals))
        try:
            phis, us = _contour_us(model, t0, r, contour_nodes)
            m_per_spike = []
            for theta in spikes.thetas:
                vals = _contour_values(phis, us,
                                       lambda u: crit(u, theta, g1))
                w = _winding_number(vals)
                m_j = int(round(w))
                if m_j < 0 or abs(w - m_j) > 0.1:
                    raise OutlierError(
                        f"non-integral winding {w:.3f} at t={t0:.6f}")
                m_per_spike.append(m_j)
        except (SubordinationError, OutlierError) as exc:
            undecidable.append((t0, f"contour solve failure: {exc}"))
            continue
        m = int(sum(m_per_spike))
        if m == 0:
            continue        # near-miss minimum, not a zero
        zeros.append(OutlierZero(t=t0, m=m, m_per_spike=tuple(m_per_spike),
                                 contour_radius=float(r)))

    zeros.sort(key=lambda z: z.t)
    return OutlierReport(zeros=zeros, undecidable=undecidable,
                         criterion=criterion, thetas=spikes.thetas,
                         distinct=spikes.distinct, diagnostics=diagnostics)


# ---------------------------------------------------------------------------
# residues
# ---------------------------------------------------------------------------

def residues(model: FreeModel, spikes: SpikeSet, report: OutlierReport,
             contour_nodes: int = CONTOUR_NODES) -> OutlierReport:
    """Fill per-spike overlap residues C_i(t) into a detection report.

    C_i(t) = (1/2 pi i) contour integral of [(u(z) - theta_i gamma1)^{-1}]_{1,1}
    around each zero; the imaginary part must die at 1e-6 and simple zeros
    must land in [-1e-6, 1 + 1e-6].
    """
    if not spikes.distinct:
        raise OutlierError("residues need distinct spikes")
    g1 = model.pencil.gammas[1]
    out = []
    for zero in report.zeros:
        r = zero.contour_radius
        phis, us = _contour_us(model, zero.t, r, contour_nodes)
        res = []
        for theta in spikes.thetas:
            vals = _contour_values(
                phis, us, lambda u: complex(np.linalg.inv(u - theta * g1)[0, 0]))
            c = (r / contour_nodes) * sum(
                v * np.exp(1j * phi) for v, phi in zip(vals, phis))
            if abs(c.imag) > 1e-6:
                raise OutlierError(
                    f"residue at t={zero.t:.6f} has imaginary part {c.imag:.2e}")
            value = float(c.real)
            if zero.m == 1 and not -1e-6 <= value <= 1 + 1e-6:
                raise OutlierError(
                    f"residue {value:.6f} at simple zero t={zero.t:.6f} "
                    "outside [0, 1]")
            res.append(value)
        out.append(replace(zero, residues=tuple(res)))
    return OutlierReport(zeros=out, undecidable=report.undecidable,
                         criterion=report.criterion, thetas=report.thetas,
                         distinct=report.distinct, diagnostics=report.diagnostics)


# ---------------------------------------------------------------------------
# finite-N diagnostic determinant
# ---------------------------------------------------------------------------

def finite_n_determinant(pencil, spikes: SpikeSet, a_matrix, y_matrix,
                         z: float, flatten: float = 0.0) -> complex:
    """det(I_np - (gamma1 x T) . restricted resolvent) for one sample.

    a_matrix must carry the p spike eigenvalues on its leading diagonal
    entries (the builder in the simulation module does); they are flattened
    to the bulk value `flatten', T = diag(theta_j - flatten), and the
    resolvent of the flattened pencil is compressed to the spike block.
    Zeros in z near the predictions approximate the finite-N outliers.
    """
    p = spikes.p
    if p == 0:
        return complex(1.0)
    a = np.array(a_matrix, dtype=complex)
    y = np.asarray(y_matrix)
    big_n = a.shape[0]
    n = pencil.n
    g0, g1, g2 = pencil.gammas[:3]
    for j in range(p):
        a[j, j] = flatten
    beta = np.zeros((n, n), dtype=complex)
    beta[0, 0] = z
    beta = beta - g0
    eye_n = np.eye(big_n)
    big = (np.kron(beta, eye_n) - np.kron(g1, a) - np.kron(g2, y))
    resolvent = np.linalg.inv(big)
    block = resolvent.reshape(n, big_n, n, big_n)[:, :p, :, :p].reshape(n * p, n * p)
    t_mat = np.diag([th - flatten for th in spikes.thetas])
    f = np.eye(n * p) - np.kron(g1, t_mat) @ block
    return complex(np.linalg.det(f))


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def serialize_report(report: OutlierReport) -> str:
    lines = ["# freespec outlier-report v1",
             f"# criterion {report.criterion}",
             "# thetas " + " ".join(repr(float(t)) for t in report.thetas),
             f"# distinct {int(report.distinct)}"]
    for z in report.zeros:
        row = f"zero {z.t!r} m {z.m} radius {z.contour_radius!r} mj " + \
              " ".join(str(m) for m in z.m_per_spike)
        if z.residues is not None:
            row += " res " + " ".join(repr(v) for v in z.residues)
        lines.append(row)
    for t, reason in report.undecidable:
        lines.append(f"undecidable {t!r} {reason}")
    for diag in report.diagnostics:
        a, b = diag["interval"]
        lines.append(f"# diagnostic-interval {a!r} {b!r}")
        lines.append("t," + ",".join(f"absH_{k+1}" for k in range(len(report.thetas))))
        for row in range(len(diag["ts"])):
            cells = [repr(float(diag["ts"][row]))]
            cells += [repr(float(v)) for v in diag["crit_abs"][:, row]]
            lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def parse_report(text: str) -> OutlierReport:
    criterion = None
    thetas = ()
    distinct = True
    zeros = []
    undecidable = []
    diagnostics = []
    pending = None      # (interval, ts, rows)

    def flush():
        nonlocal pending
        if pending is not None:
            (a, b), ts, rows = pending
            arr = np.array(rows).T if rows else np.empty((len(thetas), 0))
            diagnostics.append({"interval": (a, b), "ts": np.array(ts),
                                "crit_abs": arr})
            pending = None

    for ln in text.splitlines():
        ln = ln.strip()
        if not ln:
            continue
        if ln.startswith("# criterion"):
            criterion = ln.split()[2]
        elif ln.startswith("# thetas"):
            thetas = tuple(float(v) for v in ln.split()[2:])
        elif ln.startswith("# distinct"):
            distinct = bool(int(ln.split()[2]))
        elif ln.startswith("# diagnostic-interval"):
            flush()
            parts = ln.split()
            pending = ((float(parts[2]), float(parts[3])), [], [])
        elif ln.startswith("zero "):
            parts = ln.split()
            t = float(parts[1])
            m = int(parts[3])
            radius = float(parts[5])
            mj_at = parts.index("mj")
            res = None
            if "res" in parts:
                res_at = parts.index("res")
                mj = tuple(int(v) for v in parts[mj_at + 1:res_at])
                res = tuple(float(v) for v in parts[res_at + 1:])
            else:
                mj = tuple(int(v) for v in parts[mj_at + 1:])
            zeros.append(OutlierZero(t=t, m=m, m_per_spike=mj,
                                     contour_radius=radius, residues=res))
        elif ln.startswith("undecidable "):
            parts = ln.split(maxsplit=2)
            undecidable.append((float(parts[1]), parts[2]))
        elif ln.startswith("#") or ln.startswith("t,"):
            continue
        elif pending is not None and "," in ln:
            cells = [float(v) for v in ln.split(",")]
            pending[1].append(cells[0])
            pending[2].append(cells[1:])
    flush()
    if criterion is None:
        raise ValueError("missing criterion line in outlier report")
    return OutlierReport(zeros=zeros, undecidable=undecidable,
                         criterion=criterion, thetas=thetas,
                         distinct=distinct, diagnostics=diagnostics)
