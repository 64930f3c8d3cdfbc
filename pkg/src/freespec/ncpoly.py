"""Noncommutative *-polynomials in finitely many selfadjoint letters.

A polynomial is stored as a map from words (tuples of letter indices, 1-based)
to complex coefficients.  Letters are selfadjoint, so the adjoint reverses
words and conjugates coefficients.  Terms whose coefficient drops below
``CANCEL_TOL`` in absolute value are removed after every arithmetic operation,
which keeps cancellation honest without hiding genuinely small inputs.
"""

from __future__ import annotations

import re
from typing import Iterable, Mapping, Sequence

import numpy as np

__all__ = [
    "CANCEL_TOL",
    "NCPolynomial",
    "ParseError",
    "parse",
]

CANCEL_TOL = 1e-14

Word = tuple  # tuple[int, ...], letters are 1-based


def _snap(c: complex) -> complex:
    re = 0.0 if abs(c.real) < CANCEL_TOL else c.real
    im = 0.0 if abs(c.imag) < CANCEL_TOL else c.imag
    return complex(re, im)


def _clean(terms: Mapping[Word, complex]) -> dict:
    out = {}
    for w, c in terms.items():
        c = _snap(complex(c))
        if abs(c) >= CANCEL_TOL:
            out[w] = c
    return out


class NCPolynomial:
    """Element of the free *-algebra on ``arity`` selfadjoint letters."""

    __slots__ = ("arity", "terms")

    def __init__(self, arity: int, terms: Mapping[Word, complex] | None = None):
        if arity < 1:
            raise ValueError("arity must be >= 1")
        self.arity = int(arity)
        terms = _clean(terms or {})
        for w in terms:
            if any(not (1 <= ell <= arity) for ell in w):
                raise ValueError(f"word {w} uses letters outside 1..{arity}")
        self.terms = terms

    # -- constructors ------------------------------------------------------

    @classmethod
    def zero(cls, arity: int) -> "NCPolynomial":
        return cls(arity, {})

    @classmethod
    def one(cls, arity: int) -> "NCPolynomial":
        return cls(arity, {(): 1.0})

    @classmethod
    def constant(cls, arity: int, c: complex) -> "NCPolynomial":
        return cls(arity, {(): c})

    @classmethod
    def letter(cls, arity: int, index: int) -> "NCPolynomial":
        """The generator X_index (1-based)."""
        return cls(arity, {(index,): 1.0})

    @classmethod
    def monomial(cls, arity: int, word: Sequence[int], coeff: complex = 1.0) -> "NCPolynomial":
        return cls(arity, {tuple(word): coeff})

    # -- ring structure ----------------------------------------------------

    def _check_same_arity(self, other: "NCPolynomial") -> None:
        if self.arity != other.arity:
            raise ValueError("polynomials live over different numbers of letters")

    def __add__(self, other):
        if isinstance(other, (int, float, complex)):
            other = NCPolynomial.constant(self.arity, other)
        self._check_same_arity(other)
        out = dict(self.terms)
        for w, c in other.terms.items():
            out[w] = out.get(w, 0.0) + c
        return NCPolynomial(self.arity, out)

    __radd__ = __add__

    def __neg__(self):
        return NCPolynomial(self.arity, {w: -c for w, c in self.terms.items()})

    def __sub__(self, other):
        if isinstance(other, (int, float, complex)):
            other = NCPolynomial.constant(self.arity, other)
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, (int, float, complex)):
            return NCPolynomial(self.arity, {w: c * other for w, c in self.terms.items()})
        self._check_same_arity(other)
        out: dict = {}
        for w1, c1 in self.terms.items():
            for w2, c2 in other.terms.items():
                w = w1 + w2
                out[w] = out.get(w, 0.0) + c1 * c2
        return NCPolynomial(self.arity, out)

    def __rmul__(self, other):
        if isinstance(other, (int, float, complex)):
            return self * other
        return NotImplemented

    def __pow__(self, exponent: int):
        if not isinstance(exponent, int) or exponent < 0:
            raise ValueError("exponents must be nonnegative integers")
        result = NCPolynomial.one(self.arity)
        for _ in range(exponent):
            result = result * self
        return result

    def __eq__(self, other):
        if not isinstance(other, NCPolynomial):
            return NotImplemented
        return self.arity == other.arity and self.terms == other.terms

    def __hash__(self):
        return hash((self.arity, tuple(sorted(self.terms.items(), key=lambda t: (len(t[0]), t[0])))))

    # -- *-structure -------------------------------------------------------

    def adjoint(self) -> "NCPolynomial":
        """(c X_{i1}...X_{in})* = conj(c) X_{in}...X_{i1}; letters are selfadjoint."""
        return NCPolynomial(self.arity, {w[::-1]: np.conj(c) for w, c in self.terms.items()})

    def is_selfadjoint(self, tol: float = 1e-12) -> bool:
        diff = self - self.adjoint()
        scale = max([1.0] + [abs(c) for c in self.terms.values()])
        return all(abs(c) <= tol * scale for c in diff.terms.values())

    # -- queries -----------------------------------------------------------

    def degree(self) -> int:
        """Length of the longest word; -1 for the zero polynomial."""
        if not self.terms:
            return -1
        return max(len(w) for w in self.terms)

    def coefficient(self, word: Sequence[int]) -> complex:
        return self.terms.get(tuple(word), 0.0 + 0.0j)

    def sorted_terms(self) -> list:
        """Terms in canonical order: by word length, then lexicographically."""
        return sorted(self.terms.items(), key=lambda t: (len(t[0]), t[0]))

    def max_abs_coeff(self) -> float:
        return max([0.0] + [abs(c) for c in self.terms.values()])

    def is_real_coefficients(self, tol: float = 1e-12) -> bool:
        return all(abs(c.imag) <= tol * max(1.0, abs(c)) for c in self.terms.values())

    # -- evaluation --------------------------------------------------------

    def evaluate(self, mats: Sequence[np.ndarray], hermitize: str = "auto") -> np.ndarray:
        """Substitute square matrices for the letters.

        ``hermitize`` is one of ``"auto"`` (symmetrize the output when the
        polynomial is selfadjoint and every argument is Hermitian), ``"always"``
        or ``"never"``.
        """
        if len(mats) != self.arity:
            raise ValueError(f"expected {self.arity} matrices, got {len(mats)}")
        mats = [np.asarray(m, dtype=complex) for m in mats]
        dim = mats[0].shape[0]
        for m in mats:
            if m.shape != (dim, dim):
                raise ValueError("all matrices must be square and of equal size")

        eye = np.eye(dim, dtype=complex)
        memo: dict = {(): eye}

        def word_value(w: Word) -> np.ndarray:
            if w not in memo:
                memo[w] = word_value(w[:-1]) @ mats[w[-1] - 1]
            return memo[w]

        out = np.zeros((dim, dim), dtype=complex)
        for w, c in self.terms.items():
            out += c * word_value(w)

        do_herm = hermitize == "always"
        if hermitize == "auto" and self.is_selfadjoint():
            do_herm = all(np.allclose(m, m.conj().T, atol=1e-12 * max(1.0, np.abs(m).max())) for m in mats)
        if do_herm:
            out = 0.5 * (out + out.conj().T)
        return out

    # -- serialization -----------------------------------------------------

    def serialize(self) -> str:
        """Canonical text form, re-parsable by :func:`parse`."""
        if not self.terms:
            return "0"
        chunks = []
        for k, (word, coeff) in enumerate(self.sorted_terms()):
            body = _format_word(word)
            re_c, im_c = coeff.real, coeff.imag
            if abs(im_c) >= CANCEL_TOL:
                coeff_txt = f"({_format_float(re_c)}{'+' if im_c >= 0 else '-'}{_format_float(abs(im_c))}*i)"
                piece = coeff_txt if body is None else f"{coeff_txt}*{body}"
                sign = "+"
            else:
                sign = "-" if re_c < 0 else "+"
                mag = abs(re_c)
                if body is None:
                    piece = _format_float(mag)
                elif abs(mag - 1.0) < CANCEL_TOL:
                    piece = body
                else:
                    piece = f"{_format_float(mag)}*{body}"
            if k == 0:
                chunks.append(piece if sign == "+" else f"-{piece}")
            else:
                chunks.append(f" {sign} {piece}")
        return "".join(chunks)

    def __repr__(self):
        return f"NCPolynomial({self.arity}, {self.serialize()!r})"


def _format_float(x: float) -> str:
    if x == int(x) and abs(x) < 1e15:
        return str(int(x))
    return repr(float(x))


def _format_word(word: Word):
    if not word:
        return None
    parts = []
    run_letter, run_len = word[0], 1
    for ell in word[1:]:
        if ell == run_letter:
            run_len += 1
        else:
            parts.append(f"x{run_letter}" if run_len == 1 else f"x{run_letter}^{run_len}")
            run_letter, run_len = ell, 1
    parts.append(f"x{run_letter}" if run_len == 1 else f"x{run_letter}^{run_len}")
    return "*".join(parts)


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

class ParseError(ValueError):
    """Raised on malformed polynomial text; carries the offending position."""

    def __init__(self, message: str, pos: int):
        super().__init__(f"{message} (at position {pos})")
        self.pos = pos


_TOKEN_RE = re.compile(
    r"\s*(?:"
    r"(?P<number>(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?(?:/\d+(?:\.\d+)?)?)"
    r"|(?P<ident>[a-zA-Z_]\w*)"
    r"|(?P<op>[-+*^()'])"
    r")"
)


def _tokenize(text: str):
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None or m.end() == pos:
            stripped = text[pos:].lstrip()
            if not stripped:
                break
            raise ParseError(f"unexpected character {stripped[0]!r}", pos)
        if m.lastgroup == "number":
            tokens.append(("number", m.group("number"), m.start("number")))
        elif m.lastgroup == "ident":
            tokens.append(("ident", m.group("ident"), m.start("ident")))
        else:
            tokens.append(("op", m.group("op"), m.start("op")))
        pos = m.end()
    tokens.append(("end", "", len(text)))
    return tokens


class _Parser:
    """Recursive descent for:  expr := term (('+'|'-') term)*,
    term := ['-'] factor ('*' factor)*,  factor := atom postfix*,
    postfix := '^' nat | "'",  atom := number | 'i' | letter | '(' expr ')'.
    """

    def __init__(self, tokens, arity: int):
        self.tokens = tokens
        self.k = arity
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def advance(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect_op(self, op: str):
        kind, val, pos = self.peek()
        if kind != "op" or val != op:
            raise ParseError(f"expected {op!r}", pos)
        return self.advance()

    def parse_expr(self) -> NCPolynomial:
        result = self.parse_term()
        while True:
            kind, val, _ = self.peek()
            if kind == "op" and val in "+-":
                self.advance()
                rhs = self.parse_term()
                result = result + rhs if val == "+" else result - rhs
            else:
                return result

    def parse_term(self) -> NCPolynomial:
        sign = 1.0
        while True:
            kind, val, _ = self.peek()
            if kind == "op" and val == "-":
                self.advance()
                sign = -sign
            elif kind == "op" and val == "+":
                self.advance()
            else:
                break
        result = self.parse_factor()
        while True:
            kind, val, _ = self.peek()
            if kind == "op" and val == "*":
                self.advance()
                result = result * self.parse_factor()
            else:
                break
        return result * sign if sign < 0 else result

    def parse_factor(self) -> NCPolynomial:
        result = self.parse_atom()
        while True:
            kind, val, pos = self.peek()
            if kind == "op" and val == "^":
                self.advance()
                kind2, val2, pos2 = self.advance()
                if kind2 != "number" or not re.fullmatch(r"\d+", val2):
                    raise ParseError("exponent must be a nonnegative integer", pos2)
                result = result ** int(val2)
            elif kind == "op" and val == "'":
                self.advance()
                result = result.adjoint()
            else:
                return result

    def parse_atom(self) -> NCPolynomial:
        kind, val, pos = self.advance()
        if kind == "number":
            if "/" in val:
                num, den = val.split("/")
                value = float(num) / float(den)
            else:
                value = float(val)
            return NCPolynomial.constant(self.k, value)
        if kind == "ident":
            if val == "i":
                return NCPolynomial.constant(self.k, 1j)
            index = _letter_index(val, self.k, pos)
            return NCPolynomial.letter(self.k, index)
        if kind == "op" and val == "(":
            inner = self.parse_expr()
            self.expect_op(")")
            return inner
        raise ParseError(f"unexpected token {val!r}" if val else "unexpected end of input", pos)


def _letter_index(name: str, arity: int, pos: int) -> int:
    m = re.fullmatch(r"x(\d+)", name)
    if m:
        index = int(m.group(1))
        if not (1 <= index <= arity):
            raise ParseError(f"letter {name!r} outside x1..x{arity}", pos)
        return index
    if name == "x" and arity >= 1:
        return 1
    if name == "y" and arity >= 2:
        return 2
    raise ParseError(f"unknown letter {name!r} (use x1..x{arity}" + (", or x,y" if arity >= 2 else "") + ")", pos)


def _infer_arity(tokens) -> int:
    arity = 1
    for kind, val, _ in tokens:
        if kind != "ident":
            continue
        m = re.fullmatch(r"x(\d+)", val)
        if m:
            arity = max(arity, int(m.group(1)))
        elif val == "y":
            arity = max(arity, 2)
    return arity


def parse(text: str, arity: int | None = None) -> NCPolynomial:
    """Parse polynomial text into an :class:`NCPolynomial`.

    Letters are ``x1..xk`` (aliases ``x``, ``y`` for the first two when the
    arity allows), operators ``+ - * ^``, postfix ``'`` for the adjoint,
    parentheses, and real rational (``3/2``) or decimal coefficients; ``i`` is
    accepted for imaginary coefficient parts.  When ``arity`` is omitted it is
    inferred from the highest letter mentioned.
    """
    if not text or not text.strip():
        raise ParseError("empty input", 0)
    tokens = _tokenize(text)
    if arity is None:
        arity = _infer_arity(tokens)
    parser = _Parser(tokens, arity)
    poly = parser.parse_expr()
    kind, val, pos = parser.peek()
    if kind != "end":
        raise ParseError(f"trailing input {val!r}", pos)
    return poly
