"""Finite-N Monte Carlo for spiked polynomial random-matrix models.

Samples of P(A_N, Y_N) are drawn with A_N a deterministic diagonal matrix
carrying the spikes in its leading entries and bulk values from mu in the
rest, and Y_N either a unitarily invariant matrix U D U^H (U Haar unitary,
D the nu-quantile diagonal) or a Wigner matrix X/sqrt(N).  The output is
the sorted spectrum of the Hermitian sample, the empirical outliers
relative to a predicted support, and--for the unitarily invariant model--
the overlaps between spike eigenvectors of A_N and the spectral window of
P around each predicted outlier, which converge to the predicted residues.

Randomness is fully determined by an integer seed: bulk i.i.d. placement
and the random matrix draw use disjoint child streams tagged off the seed,
so identical (spec, seed) pairs give bit-identical results.
"""

from __future__ import annotations

import ast
import time
from dataclasses import dataclass, replace
from concurrent.futures import ProcessPoolExecutor
from functools import partial
from typing import Optional, Sequence

import numpy as np

from .measures import SpectralMeasure, quantiles, sample, semicircle
from .ncpoly import NCPolynomial
from .outliers import OutlierReport, SpikeSet
from .spectrum import DensityProfile

__all__ = [
    "SimulationError", "ModelSpec", "SimResult",
    "haar_unitary", "wigner", "build_A", "build_Y", "assemble",
    "run", "run_many", "empirical_stieltjes", "bulk_ks",
    "serialize_result", "parse_result",
]

ENSEMBLES = ("unitary_invariant", "wigner_gue", "wigner_rademacher")

# child-stream tags so bulk placement and the matrix draw never share a stream
_STREAM_BULK = 1
_STREAM_MATRIX = 2

_MARGIN_FLOOR = 0.05
_EDGE_NEIGHBORS = 10
_OVERLAP_CAP = 0.25
_HERMITICITY_TOL = 1e-10


class SimulationError(Exception):
    """Simulation assembly or post-processing failed."""


# ---------------------------------------------------------------------------
# random matrix generators
# ---------------------------------------------------------------------------

def haar_unitary(N: int, seed) -> np.ndarray:
    """Haar-distributed N x N unitary.

    QR of a complex Ginibre matrix, with each column of Q divided by the
    phase of the corresponding diagonal entry of R; plain QR output is not
    Haar because the factorization is only unique up to those phases.
    """
    if N < 1:
        raise ValueError("N must be >= 1")
    rng = np.random.default_rng(seed)
    g = (rng.standard_normal((N, N)) + 1j * rng.standard_normal((N, N)))
    q, r = np.linalg.qr(g)
    d = np.diagonal(r)
    return q * (np.abs(d) / d)


def _entries_gue(rng: np.random.Generator, n: int) -> np.ndarray:
    return rng.standard_normal(n)


def _entries_rademacher(rng: np.random.Generator, n: int) -> np.ndarray:
    return 2.0 * rng.integers(0, 2, n).astype(float) - 1.0


_ENTRY_LAWS = {"gue": _entries_gue, "rademacher": _entries_rademacher}


def wigner(N: int, law="gue", seed=None) -> np.ndarray:
    """Hermitian Wigner matrix with i.i.d. centered unit-variance entries.

    ``law`` draws real scalars of mean 0 and variance 1: ``"gue"`` is
    standard normal, ``"rademacher"`` is +/-1.  The diagonal is real with
    that law; off-diagonal entries take independent draws for sqrt(2) times
    their real and imaginary parts, so each entry has total variance 1.
    A callable ``law(rng, n) -> array`` is accepted as a custom scalar law;
    the mean/variance/fourth-moment conditions are then the caller's
    obligation.
    """
    if callable(law):
        draw = law
    elif law in _ENTRY_LAWS:
        draw = _ENTRY_LAWS[law]
    else:
        raise SimulationError(f"unsupported entry law: {law!r}")
    if N < 1:
        raise ValueError("N must be >= 1")
    rng = np.random.default_rng(seed)
    k = N * (N - 1) // 2
    upper = (draw(rng, k) + 1j * draw(rng, k)) * np.sqrt(0.5)
    diag = draw(rng, N)
    x = np.zeros((N, N), dtype=complex)
    x[np.triu_indices(N, 1)] = upper
    x = x + x.conj().T
    x[np.diag_indices(N)] = diag
    return x


# ---------------------------------------------------------------------------
# model specification
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ModelSpec:
    """One finite-N sampling configuration.

    ``size`` is the matrix dimension N.  For the Wigner ensembles ``nu`` is
    forced to the standard semicircle, since X/sqrt(N) has no other limit.
    """

    poly: NCPolynomial
    mu: SpectralMeasure
    nu: SpectralMeasure
    spikes: SpikeSet
    ensemble: str = "unitary_invariant"
    size: int = 1000
    seed: int = 0
    bulk_placement: str = "quantiles"

    def __post_init__(self):
        if not self.poly.is_selfadjoint():
            raise ValueError("polynomial must be selfadjoint")
        if self.ensemble not in ENSEMBLES:
            raise ValueError(f"unknown ensemble {self.ensemble!r}; "
                             f"choose from {ENSEMBLES}")
        if self.bulk_placement not in ("quantiles", "iid"):
            raise ValueError("bulk_placement must be 'quantiles' or 'iid'")
        if self.size <= self.spikes.p:
            raise ValueError("matrix size must exceed the number of spikes")
        if self.ensemble != "unitary_invariant":
            object.__setattr__(self, "nu", semicircle(0.0, 1.0))


@dataclass(frozen=True)
class SimResult:
    """One simulated sample, post-processed against the predictions."""

    eigenvalues: np.ndarray          # sorted ascending, length = size
    empirical_outliers: tuple        # eigenvalues outside support + margin
    overlaps: Optional[np.ndarray]   # (p, #zeros) spike/window overlaps
    overlap_windows: tuple           # (t, epsilon) per predicted zero
    ensemble: str
    size: int
    seed: object
    elapsed: float                   # wall-clock seconds for this sample


# ---------------------------------------------------------------------------
# sample assembly
# ---------------------------------------------------------------------------

def build_A(spec: ModelSpec) -> np.ndarray:
    """Deterministic diagonal A_N = diag(spikes, bulk values from mu)."""
    for th in spec.spikes.thetas:
        if spec.mu.support_distance(th) <= 0.0:
            raise SimulationError(
                f"spike {th} lies inside the bulk support of mu")
    bulk_n = spec.size - spec.spikes.p
    if spec.bulk_placement == "quantiles":
        bulk = quantiles(spec.mu, bulk_n)
    else:
        bulk = np.sort(sample(spec.mu, bulk_n, [spec.seed, _STREAM_BULK]))
    return np.diag(np.concatenate([np.asarray(spec.spikes.thetas, float),
                                   bulk]))


def build_Y(spec: ModelSpec) -> np.ndarray:
    """Random second argument: U D U^H or X/sqrt(N)."""
    n = spec.size
    if spec.ensemble == "unitary_invariant":
        d = quantiles(spec.nu, n)
        u = haar_unitary(n, [spec.seed, _STREAM_MATRIX])
        return (u * d) @ u.conj().T
    law = "gue" if spec.ensemble == "wigner_gue" else "rademacher"
    return wigner(n, law, [spec.seed, _STREAM_MATRIX]) / np.sqrt(n)


def assemble(spec: ModelSpec):
    """(A, Y, P(A, Y)) with the polynomial value checked and symmetrized."""
    a = build_A(spec)
    y = build_Y(spec)
    m = spec.poly.evaluate([a, y], hermitize="never")
    defect = float(np.max(np.abs(m - m.conj().T)))
    if defect > _HERMITICITY_TOL * max(1.0, float(np.max(np.abs(m)))):
        raise SimulationError(
            f"assembled sample is not Hermitian (defect {defect:.3e})")
    return a, y, 0.5 * (m + m.conj().T)


# ---------------------------------------------------------------------------
# post-processing
# ---------------------------------------------------------------------------

def _support_union(profile: DensityProfile):
    """Closed intervals of predicted spectrum; atoms enter as points."""
    intervals = [(float(a), float(b)) for a, b in profile.support_intervals]
    intervals += [(float(loc), float(loc)) for loc, _ in profile.atoms]
    return sorted(intervals)


def _edge_margin(inside: np.ndarray, endpoint: float) -> float:
    """max(floor, 3 x mean level spacing among the eigenvalues nearest the
    endpoint), the scale separating edge fluctuations from true outliers."""
    if inside.size < 2:
        return _MARGIN_FLOOR
    k = min(_EDGE_NEIGHBORS, inside.size)
    nearest = np.sort(inside[np.argsort(np.abs(inside - endpoint))[:k]])
    spacing = (nearest[-1] - nearest[0]) / (k - 1)
    return max(_MARGIN_FLOOR, 3.0 * spacing)


def _empirical_outliers(eigs: np.ndarray, intervals) -> tuple:
    outside = []
    for lam in eigs:
        if any(a <= lam <= b for a, b in intervals):
            continue
        # distance to the nearest interval and the endpoint facing lam
        best = None
        for a, b in intervals:
            d, e = (a - lam, a) if lam < a else (lam - b, b)
            if best is None or d < best[0]:
                best = (d, e, (a, b))
        d, endpoint, (a, b) = best
        inside = eigs[(eigs >= a) & (eigs <= b)]
        if d > _edge_margin(inside, endpoint):
            outside.append(float(lam))
    return tuple(outside)


def _overlap_windows(report: OutlierReport, intervals) -> tuple:
    """Half-distance to the nearest other zero or support endpoint, capped."""
    ts = [z.t for z in report.zeros]
    endpoints = [e for ab in intervals for e in ab]
    out = []
    for t in ts:
        others = [abs(t - s) for s in ts if s != t]
        others += [abs(t - e) for e in endpoints]
        eps = min([2.0 * _OVERLAP_CAP] + others) / 2.0
        out.append((float(t), float(min(_OVERLAP_CAP, eps))))
    return tuple(out)


def _overlaps(spikes: SpikeSet, windows, w: np.ndarray,
              v: np.ndarray) -> np.ndarray:
    """overlaps[i, j] = Tr[E_A({theta_i}) E_P((t_j - eps, t_j + eps))]."""
    thetas = spikes.thetas
    out = np.zeros((len(thetas), len(windows)))
    for j, (t, eps) in enumerate(windows):
        cols = np.nonzero(np.abs(w - t) < eps)[0]
        if cols.size == 0:
            continue
        weight = np.sum(np.abs(v[:spikes.p, cols]) ** 2, axis=1)
        for i, th in enumerate(thetas):
            coords = [k for k, other in enumerate(thetas) if other == th]
            out[i, j] = float(np.sum(weight[coords]))
    if np.any(out < 0.0) or np.any(out > 1.0 + 1e-10):
        raise SimulationError("overlap outside [0, 1]")
    return out


def run(spec: ModelSpec, profile: Optional[DensityProfile] = None,
        report: Optional[OutlierReport] = None) -> SimResult:
    """Draw one sample and post-process it against the predictions.

    ``profile`` supplies the predicted support for empirical-outlier
    extraction; ``report`` supplies the predicted outlier locations for the
    eigenvector overlaps (unitarily invariant ensemble only).  Either may
    be omitted, dropping the corresponding post-processing.
    """
    if report is not None and tuple(report.thetas) != spec.spikes.thetas:
        raise SimulationError(
            "outlier report was computed for different spikes "
            f"{tuple(report.thetas)} != {spec.spikes.thetas}")
    t0 = time.perf_counter()
    _, _, m = assemble(spec)
    try:
        w, v = np.linalg.eigh(m)
    except np.linalg.LinAlgError as exc:
        raise SimulationError("eigendecomposition failed") from exc
    w = np.ascontiguousarray(w.real)
    if w.size != spec.size:
        raise SimulationError("eigenvalue count does not match matrix size")

    outliers: tuple = ()
    overlaps = None
    windows: tuple = ()
    intervals = _support_union(profile) if profile is not None else None
    if intervals:
        outliers = _empirical_outliers(w, intervals)
    if (report is not None and spec.ensemble == "unitary_invariant"
            and spec.spikes.p > 0 and report.zeros):
        windows = _overlap_windows(report, intervals or [])
        overlaps = _overlaps(spec.spikes, windows, w, v)
    return SimResult(eigenvalues=w, empirical_outliers=outliers,
                     overlaps=overlaps, overlap_windows=windows,
                     ensemble=spec.ensemble, size=spec.size, seed=spec.seed,
                     elapsed=time.perf_counter() - t0)


def run_many(spec: ModelSpec, seeds: Sequence[int],
             profile: Optional[DensityProfile] = None,
             report: Optional[OutlierReport] = None,
             workers: int = 1) -> list:
    """Independent trials across seeds, merged back in seed order."""
    specs = [replace(spec, seed=int(s)) for s in seeds]
    if workers <= 1:
        return [run(s, profile, report) for s in specs]
    fn = partial(run, profile=profile, report=report)
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, specs))


# ---------------------------------------------------------------------------
# empirical transforms and comparison
# ---------------------------------------------------------------------------

def empirical_stieltjes(eigenvalues: np.ndarray, z: complex) -> complex:
    """(1/N) sum 1/(z - lambda_i)."""
    z = complex(z)
    if z.imag == 0.0:
        raise ValueError("z must be non-real")
    return complex(np.mean(1.0 / (z - np.asarray(eigenvalues))))


def bulk_ks(eigenvalues: np.ndarray, profile: DensityProfile,
            exclude: Sequence[float] = ()) -> float:
    """Kolmogorov distance between the empirical spectrum (with ``exclude``
    values removed, e.g. detected outliers) and the predicted profile,
    both normalized over the profile's covered window."""
    kept = np.sort(np.asarray([x for x in eigenvalues
                               if not any(x == e for e in exclude)]))
    if kept.size == 0:
        raise ValueError("no eigenvalues left after exclusion")
    grid = profile.grid
    cdf = profile.cdf
    total = cdf[-1] + sum(mass for _, mass in profile.atoms)

    def predicted(x):
        val = np.interp(x, grid, cdf, left=0.0, right=cdf[-1])
        val += sum(mass for loc, mass in profile.atoms if loc <= x)
        return val / total

    n = kept.size
    worst = 0.0
    for k, x in enumerate(kept):
        f = predicted(x)
        worst = max(worst, abs((k + 1) / n - f), abs(k / n - f))
    return float(worst)


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def serialize_result(res: SimResult) -> str:
    # elapsed stays in memory only: serialized results must be byte-identical
    # across reruns of the same (spec, seed)
    lines = ["# freespec sim-result v1",
             f"# ensemble {res.ensemble}",
             f"# size {res.size}",
             f"# seed {res.seed!r}"]
    for x in res.empirical_outliers:
        lines.append(f"# empirical-outlier {float(x)!r}")
    for t, eps in res.overlap_windows:
        lines.append(f"# overlap-window {float(t)!r} {float(eps)!r}")
    if res.overlaps is not None:
        p, k = res.overlaps.shape
        lines.append(f"# overlap-shape {p} {k}")
        for i in range(p):
            for j in range(k):
                lines.append(f"# overlap {i} {j} {float(res.overlaps[i, j])!r}")
    lines.extend(f"{float(x)!r}" for x in res.eigenvalues)
    return "\n".join(lines) + "\n"


def parse_result(text: str) -> SimResult:
    ensemble = None
    size = None
    seed = None
    elapsed = 0.0
    outliers = []
    windows = []
    shape = None
    entries = {}
    eigs = []
    for raw in text.splitlines():
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            body = line[1:].strip()
            if body.startswith("ensemble "):
                ensemble = body.split(None, 1)[1]
            elif body.startswith("size "):
                size = int(body.split()[1])
            elif body.startswith("seed "):
                seed = ast.literal_eval(body.split(None, 1)[1])
            elif body.startswith("empirical-outlier "):
                outliers.append(float(body.split()[1]))
            elif body.startswith("overlap-window "):
                _, t, eps = body.split()
                windows.append((float(t), float(eps)))
            elif body.startswith("overlap-shape "):
                _, p, k = body.split()
                shape = (int(p), int(k))
            elif body.startswith("overlap "):
                _, i, j, val = body.split()
                entries[(int(i), int(j))] = float(val)
        else:
            eigs.append(float(line))
    if ensemble is None or size is None:
        raise ValueError("not a sim-result document")
    overlaps = None
    if shape is not None:
        overlaps = np.zeros(shape)
        for (i, j), val in entries.items():
            overlaps[i, j] = val
    return SimResult(eigenvalues=np.array(eigs),
                     empirical_outliers=tuple(outliers), overlaps=overlaps,
                     overlap_windows=tuple(windows), ensemble=ensemble,
                     size=size, seed=seed, elapsed=elapsed)
