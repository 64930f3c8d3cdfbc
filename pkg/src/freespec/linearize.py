"""Linearization pencils for noncommutative polynomials.

A pencil of size n for a polynomial P in k letters is a tuple of n x n
matrices (g0, ..., gk) such that, writing

    L(S) = g0 (x) I + g1 (x) S1 + ... + gk (x) Sk,

the corner identity holds: the (1,1) block of (z*e11 (x) I - L(S))^{-1}
equals (z I - P(S))^{-1}, and consequently

    det(z*e11 (x) I - L(S)) = det(-Q(S)) * det(z I - P(S)),

where Q is the lower-right (n-1) x (n-1) block of L.  Writing the pencil
as L = [[0, u], [v, Q]], the corner identity is equivalent to
u Q^{-1} v = -P.

The selfadjoint construction proceeds monomial by monomial:

  * a monomial c X_{i1} ... X_{il} (l >= 2) becomes the size-l pencil with
    c X_{i1} in the upper-right corner, the remaining letters down the
    anti-diagonal, and -1 just below each anti-diagonal letter;
  * sums stack as [[0, u1, u2], [v1, Q1, 0], [v2, 0, Q2]] with
    n = n1 + n2 - 1 (degree <= 1 summands fold into the corner entry);
  * a selfadjoint P = D + P0 + P0* (D of degree <= 1) doubles the P0 stage
    into the Hermitian pencil [[D, u, v*], [u*, 0, Q*], [v, Q, 0]] of size
    2 n0 - 1.

Certification checks the determinant identity, kernel dimensions, and (for
constructed pencils) the "signed permutation times unipotent" structure of
Q^{-1} on random Hermitian tuples.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .ncpoly import NCPolynomial

__all__ = [
    "GeneralPencil",
    "LinearizationPencil",
    "CertificationError",
    "CertificationReport",
    "linearize_monomial",
    "linearize_sum",
    "linearize_selfadjoint",
    "adopt_pencil",
    "certify_pencil",
    "export_pencil",
    "import_pencil",
]

_HERM_TOL = 1e-12


class CertificationError(RuntimeError):
    """A pencil failed numerical certification; the report is attached."""

    def __init__(self, report):
        super().__init__("pencil certification failed:\n" + report.summary())
        self.report = report


class GeneralPencil:
    """Size-n pencil (g0, ..., gk); not necessarily Hermitian."""

    selfadjoint = False
    provenance = "constructed"

    def __init__(self, gammas: Sequence[np.ndarray], poly: Optional[NCPolynomial] = None):
        gammas = tuple(np.array(g, dtype=complex) for g in gammas)
        if not gammas:
            raise ValueError("need at least g0")
        n = gammas[0].shape[0]
        for g in gammas:
            if g.shape != (n, n):
                raise ValueError("all pencil coefficients must be n x n")
            g.flags.writeable = False
        self.gammas = gammas
        self.n = n
        self.poly = poly

    @property
    def arity(self) -> int:
        return len(self.gammas) - 1

    def evaluate(self, mats: Sequence[np.ndarray]) -> np.ndarray:
        """L(S) = g0 (x) I + sum_j gj (x) Sj as an (n N) x (n N) matrix."""
        if len(mats) != self.arity:
            raise ValueError(f"pencil has arity {self.arity}, got {len(mats)} matrices")
        N = mats[0].shape[0] if mats else 1
        out = np.kron(self.gammas[0], np.eye(N, dtype=complex))
        for g, s in zip(self.gammas[1:], mats):
            out += np.kron(g, np.asarray(s, dtype=complex))
        return out

    def beta_of_z(self, z: complex) -> np.ndarray:
        """z e11 - g0, the constant block of the shifted pencil."""
        beta = -np.array(self.gammas[0], dtype=complex)
        beta[0, 0] += z
        return beta

    def q_of(self, mats: Sequence[np.ndarray]) -> np.ndarray:
        """Q(S): the lower-right block of L(S)."""
        N = mats[0].shape[0] if mats else 1
        out = np.kron(self.gammas[0][1:, 1:], np.eye(N, dtype=complex))
        for g, s in zip(self.gammas[1:], mats):
            out += np.kron(g[1:, 1:], np.asarray(s, dtype=complex))
        return out

    def __repr__(self):
        kind = type(self).__name__
        return f"<{kind} n={self.n} arity={self.arity} provenance={self.provenance}>"


class LinearizationPencil(GeneralPencil):
    """Pencil with Hermitian coefficients, for selfadjoint polynomials."""

    selfadjoint = True

    def __init__(self, gammas, poly=None, provenance="constructed"):
        super().__init__(gammas, poly)
        for j, g in enumerate(self.gammas):
            if np.linalg.norm(g - g.conj().T) > _HERM_TOL * max(1.0, np.linalg.norm(g)):
                raise ValueError(f"coefficient {j} of a selfadjoint pencil is not Hermitian")
        self.provenance = provenance


# ---------------------------------------------------------------------------
# construction
# ---------------------------------------------------------------------------

def linearize_monomial(word: Sequence[int], coeff: complex, arity: Optional[int] = None) -> GeneralPencil:
    """Pencil for coeff * X_{word[0]} ... X_{word[-1]} (letters are 1-based).

    Length >= 2 gives the anti-diagonal construction of size len(word);
    length 0 or 1 gives the 1 x 1 pencil equal to the monomial itself.
    """
    word = tuple(int(i) for i in word)
    ell = len(word)
    k = arity if arity is not None else (max(word) if word else 1)
    if word and max(word) > k:
        raise ValueError("letter index exceeds arity")
    poly = NCPolynomial.monomial(k, word, coeff)
    if ell <= 1:
        gammas = [np.zeros((1, 1), dtype=complex) for _ in range(k + 1)]
        if ell == 0:
            gammas[0][0, 0] = coeff
        else:
            gammas[word[0]][0, 0] = coeff
        return GeneralPencil(gammas, poly)
    gammas = [np.zeros((ell, ell), dtype=complex) for _ in range(k + 1)]
    for j, letter in enumerate(word):
        c = coeff if j == 0 else 1.0
        gammas[letter][j, ell - 1 - j] += c
    for j in range(1, ell):
        gammas[0][j, ell - j] = -1.0
    return GeneralPencil(gammas, poly)


def linearize_sum(p1: GeneralPencil, p2: GeneralPencil) -> GeneralPencil:
    """Stack two pencils into one for the sum, of size n1 + n2 - 1."""
    if p1.arity != p2.arity:
        raise ValueError("pencils must share arity")
    if p2.n == 1:
        p1, p2 = (p2, p1) if p1.n > 1 else (p1, p2)
    if p2.n == 1 and p1.n == 1:
        gammas = [g1 + g2 for g1, g2 in zip(p1.gammas, p2.gammas)]
        return GeneralPencil(gammas, _sum_polys(p1, p2))
    if p1.n == 1:
        # degree <= 1 summand: fold the scalar entry into the corner
        gammas = [np.array(g) for g in p2.gammas]
        for g, g1 in zip(gammas, p1.gammas):
            g[0, 0] += g1[0, 0]
        return GeneralPencil(gammas, _sum_polys(p1, p2))
    n1, n2 = p1.n, p2.n
    n = n1 + n2 - 1
    k = p1.arity
    gammas = []
    for j in range(k + 1):
        g1, g2 = p1.gammas[j], p2.gammas[j]
        g = np.zeros((n, n), dtype=complex)
        g[0, 0] = g1[0, 0] + g2[0, 0]
        g[0, 1:n1] = g1[0, 1:]
        g[1:n1, 0] = g1[1:, 0]
        g[1:n1, 1:n1] = g1[1:, 1:]
        g[0, n1:] = g2[0, 1:]
        g[n1:, 0] = g2[1:, 0]
        g[n1:, n1:] = g2[1:, 1:]
        gammas.append(g)
    return GeneralPencil(gammas, _sum_polys(p1, p2))


def _sum_polys(p1, p2):
    if p1.poly is None or p2.poly is None:
        return None
    return p1.poly + p2.poly


def _split_selfadjoint(p: NCPolynomial):
    """P = D + P0 + P0* with D of degree <= 1; returns (D terms, P0 terms).

    Each monomial pair {w, reverse(w)} of degree >= 2 contributes w with its
    full coefficient to P0 when w <= reverse(w) lexicographically; palindromes
    contribute with half the coefficient.
    """
    d_terms = {}
    p0_terms = {}
    for word, c in p.terms.items():
        if len(word) <= 1:
            d_terms[word] = c
            continue
        rev = word[::-1]
        if word == rev:
            p0_terms[word] = c / 2.0
        elif word < rev:
            p0_terms[word] = c
    return d_terms, p0_terms


def linearize_selfadjoint(p: NCPolynomial) -> LinearizationPencil:
    """Hermitian pencil for a selfadjoint polynomial, size 2 n0 - 1."""
    if not p.is_selfadjoint():
        raise ValueError("polynomial is not selfadjoint")
    k = p.arity
    d_terms, p0_terms = _split_selfadjoint(p)

    # defensive: D + P0 + P0* must reproduce P exactly
    d_poly = NCPolynomial(k, dict(d_terms))
    p0 = NCPolynomial(k, dict(p0_terms))
    recomposed = d_poly + p0 + p0.adjoint()
    if (recomposed - p).max_abs_coeff() > 1e-12 * max(1.0, p.max_abs_coeff()):
        raise AssertionError("selfadjoint splitting failed to recompose the input")

    if not p0_terms:
        gammas = [np.zeros((1, 1), dtype=complex) for _ in range(k + 1)]
        gammas[0][0, 0] = d_terms.get((), 0.0)
        for i in range(1, k + 1):
            gammas[i][0, 0] = d_terms.get((i,), 0.0)
        return LinearizationPencil(gammas, p)

    stage = None
    for word in sorted(p0_terms, key=lambda w: (len(w), w)):
        mono = linearize_monomial(word, p0_terms[word], arity=k)
        stage = mono if stage is None else linearize_sum(stage, mono)
    n0 = stage.n
    if n0 == 1:
        raise AssertionError("degree >= 2 stage cannot have size 1")
    m = n0 - 1
    n = 2 * n0 - 1
    gammas = []
    for j in range(k + 1):
        g = stage.gammas[j]
        u = g[0:1, 1:]
        v = g[1:, 0:1]
        q = g[1:, 1:]
        out = np.zeros((n, n), dtype=complex)
        out[0:1, 1:1 + m] = u
        out[0:1, 1 + m:] = v.conj().T
        out[1:1 + m, 0:1] = u.conj().T
        out[1 + m:, 0:1] = v
        out[1:1 + m, 1 + m:] = q.conj().T
        out[1 + m:, 1:1 + m] = q
        gammas.append(out)
    gammas[0][0, 0] += d_terms.get((), 0.0)
    for i in range(1, k + 1):
        gammas[i][0, 0] += d_terms.get((i,), 0.0)
    return LinearizationPencil(gammas, p)


def adopt_pencil(gammas: Sequence[np.ndarray], p: NCPolynomial,
                 trials: int = 20, size: int = 4, seed: int = 0) -> LinearizationPencil:
    """Wrap externally supplied Hermitian coefficients; certify before use."""
    pencil = LinearizationPencil(gammas, p, provenance="user_supplied")
    report = certify_pencil(pencil, p, trials=trials, size=size, seed=seed)
    if not report.ok:
        raise CertificationError(report)
    return pencil


# ---------------------------------------------------------------------------
# certification
# ---------------------------------------------------------------------------

@dataclass
class CertificationReport:
    ok: bool
    sign: Optional[int]
    checks: list = field(default_factory=list)
    failures: list = field(default_factory=list)

    def summary(self) -> str:
        lines = [f"certified: {self.ok}, determinant sign: {self.sign}"]
        lines += [f"  ok: {c}" for c in self.checks]
        lines += [f"  FAIL: {f}" for f in self.failures]
        return "\n".join(lines)


def _rand_hermitian(rng, size):
    a = rng.normal(size=(size, size)) + 1j * rng.normal(size=(size, size))
    return (a + a.conj().T) / 2.0


def _kernel_dim(mat, tol_factor=1e-8):
    if mat.size == 0:
        return 0
    sv = np.linalg.svd(mat, compute_uv=False)
    return int(np.sum(sv < tol_factor * max(sv[0], 1e-300)))


def certify_pencil(pencil: GeneralPencil, p: NCPolynomial,
                   trials: int = 20, size: int = 4, seed: int = 0) -> CertificationReport:
    """Numerically certify det / kernel / Q-structure identities on random
    Hermitian tuples.

    Constructed pencils must realize the sign det(-Q(S)); user-supplied ones
    may have either constant sign in {+1, -1}.
    """
    if trials < 1 or size < 2:
        raise ValueError("need trials >= 1 and size >= 2")
    rng = np.random.default_rng(seed)
    report = CertificationReport(ok=True, sign=None)
    structured = pencil.provenance == "constructed"
    k = pencil.arity

    det_ok = True
    sign_seen = None
    for t in range(trials):
        mats = [_rand_hermitian(rng, size) for _ in range(k)]
        z = complex(rng.normal(), 0.4 + rng.uniform())
        L = pencil.evaluate(mats)
        PS = p.evaluate(mats)
        big = -L
        big[:size, :size] += z * np.eye(size)
        d_pencil = np.linalg.det(big)
        d_poly = np.linalg.det(z * np.eye(size) - PS)
        if structured:
            ratio_target = np.linalg.det(-pencil.q_of(mats))
        else:
            ratio_target = None
        scale = max(abs(d_pencil), abs(d_poly), 1e-300)
        if ratio_target is not None:
            if abs(d_pencil - ratio_target * d_poly) > 1e-8 * max(scale, abs(ratio_target * d_poly)):
                det_ok = False
                report.failures.append(
                    f"determinant identity failed at trial {t}: "
                    f"lhs={d_pencil:.6g}, det(-Q)*rhs={ratio_target * d_poly:.6g}")
                break
            s = np.sign(ratio_target.real) if abs(ratio_target.imag) < 1e-8 * abs(ratio_target) else None
            if s is not None and abs(abs(ratio_target) - 1.0) < 1e-6:
                if sign_seen is None:
                    sign_seen = int(s)
                elif sign_seen != int(s):
                    det_ok = False
                    report.failures.append(f"sign det(-Q) not constant at trial {t}")
                    break
        else:
            ratio = d_pencil / d_poly if abs(d_poly) > 1e-290 else None
            if ratio is None:
                continue
            s = 1 if abs(ratio - 1.0) < 1e-6 else (-1 if abs(ratio + 1.0) < 1e-6 else None)
            if s is None:
                det_ok = False
                report.failures.append(
                    f"determinant ratio {ratio:.6g} not in {{+1,-1}} at trial {t}")
                break
            if sign_seen is None:
                sign_seen = s
            elif sign_seen != s:
                det_ok = False
                report.failures.append(f"determinant sign flipped at trial {t}")
                break
    if det_ok:
        report.checks.append(f"determinant identity on {trials} trials (size {size})")
        report.sign = sign_seen
    else:
        report.ok = False

    # kernel dimensions at sampled real eigenvalues
    kernel_ok = True
    for t in range(min(trials, 5)):
        mats = [_rand_hermitian(rng, size) for _ in range(k)]
        PS = p.evaluate(mats)
        PS = (PS + PS.conj().T) / 2.0
        eigs = np.linalg.eigvalsh(PS)
        L = pencil.evaluate(mats)
        for lam in eigs[:: max(1, len(eigs) // 3)]:
            d_poly = _kernel_dim(lam * np.eye(size) - PS)
            big = -L.copy()
            big[:size, :size] += lam * np.eye(size)
            d_pencil = _kernel_dim(big)
            if d_poly != d_pencil:
                kernel_ok = False
                report.failures.append(
                    f"kernel dimension mismatch at eigenvalue {lam:.6g}: "
                    f"poly {d_poly} vs pencil {d_pencil}")
                break
        if not kernel_ok:
            break
    if kernel_ok:
        report.checks.append("kernel dimensions agree at sampled eigenvalues")
    else:
        report.ok = False

    # Q-structure: Q(0)^{-1} is a signed permutation and Q(S) Q(0)^{-1} - I
    # is nilpotent (constructed pencils only)
    if structured and pencil.n > 1:
        q0 = pencil.gammas[0][1:, 1:]
        struct_ok = True
        try:
            t_inv = np.linalg.inv(q0)
        except np.linalg.LinAlgError:
            struct_ok = False
            report.failures.append("Q(0) singular")
        if struct_ok:
            absvals = np.abs(t_inv)
            is_perm = (np.all((absvals < 1e-12) | (np.abs(absvals - 1.0) < 1e-12))
                       and np.all(np.sum(absvals > 0.5, axis=0) == 1)
                       and np.all(np.sum(absvals > 0.5, axis=1) == 1))
            if not is_perm:
                struct_ok = False
                report.failures.append("Q(0)^{-1} is not a signed permutation")
        if struct_ok:
            m = q0.shape[0]
            for t in range(min(trials, 5)):
                mats = [_rand_hermitian(rng, size) for _ in range(k)]
                qs = pencil.q_of(mats)
                q0_big = np.kron(q0, np.eye(size))
                M = (qs - q0_big) @ np.kron(t_inv, np.eye(size))
                power = np.linalg.matrix_power(M, m)
                bound = 1e-8 * max(1.0, np.linalg.norm(M, 2)) ** m
                if np.linalg.norm(power) > bound:
                    struct_ok = False
                    report.failures.append("Q(S) Q(0)^{-1} - I not nilpotent")
                    break
                dq = np.linalg.det(qs) - np.linalg.det(q0_big)
                if abs(dq) > 1e-8 * max(1.0, abs(np.linalg.det(q0_big))):
                    struct_ok = False
                    report.failures.append("det Q(S) not constant in S")
                    break
        if struct_ok:
            report.checks.append("Q^{-1} = (signed permutation) x (unipotent) structure")
        else:
            report.ok = False

    return report


# ---------------------------------------------------------------------------
# export / import
# ---------------------------------------------------------------------------

def export_pencil(pencil: GeneralPencil) -> str:
    """Structured text form; float repr gives a bit-exact round trip."""
    lines = ["pencil v1",
             f"n {pencil.n}",
             f"k {pencil.arity}",
             f"kind {'linearization' if pencil.selfadjoint else 'general'}",
             f"provenance {pencil.provenance}"]
    if pencil.poly is not None:
        lines.append("poly " + pencil.poly.serialize())
    for j, g in enumerate(pencil.gammas):
        lines.append(f"gamma {j}")
        for row in g:
            lines.append(" ".join(f"{float(c.real)!r} {float(c.imag)!r}" for c in row))
    return "\n".join(lines) + "\n"


def import_pencil(text: str) -> GeneralPencil:
    from . import ncpoly

    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0].strip() != "pencil v1":
        raise ValueError("not a pencil document (missing 'pencil v1' header)")
    header = {}
    poly = None
    i = 1
    while i < len(lines) and not lines[i].startswith("gamma "):
        key, _, val = lines[i].partition(" ")
        if key == "poly":
            poly = ncpoly.parse(val)
        else:
            header[key] = val.strip()
        i += 1
    n = int(header["n"])
    k = int(header["k"])
    gammas = []
    for j in range(k + 1):
        if lines[i].strip() != f"gamma {j}":
            raise ValueError(f"expected 'gamma {j}' at line {i + 1}")
        i += 1
        g = np.zeros((n, n), dtype=complex)
        for r in range(n):
            parts = lines[i].split()
            if len(parts) != 2 * n:
                raise ValueError(f"row {r} of gamma {j} has wrong length")
            g[r] = [complex(float(parts[2 * c]), float(parts[2 * c + 1])) for c in range(n)]
            i += 1
        gammas.append(g)
    if header.get("kind") == "linearization":
        return LinearizationPencil(gammas, poly, provenance=header.get("provenance", "user_supplied"))
    out = GeneralPencil(gammas, poly)
    return out
