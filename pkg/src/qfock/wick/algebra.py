"""Generators, words and polynomials of the operator algebra.

Generators refer to one-particle data by name; a :class:`SymbolTable` turns
names into arrays. Two derived-name forms are understood everywhere:
``T~`` is the adjoint of operator ``T`` and ``T.phi`` is ``T`` applied to the
vector ``phi`` (both compose, e.g. ``T1~.S.phi``).
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass
from typing import Iterable, Union

import numpy as np

PRUNE_TOL = 1e-14


class SymbolError(KeyError):
    """A generator refers to a name the symbol table cannot resolve."""

    def __str__(self):
        return str(self.args[0]) if self.args else "unresolved symbol"


@dataclass(frozen=True)
class Create:
    vec: str


@dataclass(frozen=True)
class Annihilate:
    vec: str


@dataclass(frozen=True)
class Lambda:
    mu: complex
    op: str

    def __post_init__(self):
        object.__setattr__(self, "mu", complex(self.mu))


@dataclass(frozen=True)
class Gamma:
    mu: complex

    def __post_init__(self):
        object.__setattr__(self, "mu", complex(self.mu))


Generator = Union[Create, Annihilate, Lambda, Gamma]
Word = tuple

# normal-order rank: a* < λ < γ < a
RANK = {Create: 0, Lambda: 1, Gamma: 2, Annihilate: 3}


def check_generator(g) -> None:
    from ..fock_ops import check_gamma_mu, check_gauge_mu

    if isinstance(g, Lambda):
        check_gauge_mu(g.mu)
    elif isinstance(g, Gamma):
        check_gamma_mu(g.mu)
    elif not isinstance(g, (Create, Annihilate)):
        raise TypeError(f"not a generator: {g!r}")


# --------------------------------------------------------------------------- #
# names
# --------------------------------------------------------------------------- #

def split_top(name: str) -> list[str]:
    """Split on '.' outside of brackets."""
    parts, depth, cur = [], 0, []
    for ch in name:
        if ch == "[":
            depth += 1
        elif ch == "]":
            depth -= 1
        if ch == "." and depth == 0:
            parts.append("".join(cur))
            cur = []
        else:
            cur.append(ch)
    parts.append("".join(cur))
    return parts


def _strip_adjoints(name: str) -> tuple[str, bool]:
    base = name.rstrip("~")
    return base, (len(name) - len(base)) % 2 == 1


def adjoint_name(op: str) -> str:
    base, adj = _strip_adjoints(op)
    return base if adj else base + "~"


def applied_name(op: str, vec: str) -> str:
    return f"{op}.{vec}"


class SymbolTable:
    """Name → one-particle vector / operator, for a fixed dimension ``d``.

    Subclasses extend :meth:`base_vector` / :meth:`base_operator` to
    synthesize families of names (grid indicators, seeded random data).
    """

    def __init__(self, d: int, vectors=None, operators=None):
        self.d = int(d)
        self._vectors = {k: self._check_vec(np.asarray(v, dtype=complex), k)
                         for k, v in (vectors or {}).items()}
        self._operators = {k: self._check_op(np.asarray(v, dtype=complex), k)
                           for k, v in (operators or {}).items()}

    def _check_vec(self, v, name):
        if v.shape != (self.d,):
            raise ValueError(f"vector {name!r} has shape {v.shape}, expected ({self.d},)")
        return v

    def _check_op(self, t, name):
        if t.shape != (self.d, self.d):
            raise ValueError(f"operator {name!r} has shape {t.shape}, expected ({self.d}, {self.d})")
        return t

    def add_vector(self, name: str, v) -> None:
        self._vectors[name] = self._check_vec(np.asarray(v, dtype=complex), name)

    def add_operator(self, name: str, t) -> None:
        self._operators[name] = self._check_op(np.asarray(t, dtype=complex), name)

    def base_vector(self, name: str) -> np.ndarray:
        try:
            return self._vectors[name]
        except KeyError:
            raise SymbolError(f"unknown vector {name!r}") from None

    def base_operator(self, name: str) -> np.ndarray:
        try:
            return self._operators[name]
        except KeyError:
            raise SymbolError(f"unknown operator {name!r}") from None

    def operator(self, name: str) -> np.ndarray:
        parts = split_top(name)
        out = np.eye(self.d, dtype=complex)
        for part in parts:
            base, adj = _strip_adjoints(part)
            t = self.base_operator(base)
            out = out @ (t.conj().T if adj else t)
        return out

    def vector(self, name: str) -> np.ndarray:
        parts = split_top(name)
        v = self.base_vector(parts[-1])
        for part in reversed(parts[:-1]):
            v = self.operator(part) @ v
        return v

    def inner(self, a: str, b: str) -> complex:
        return complex(np.vdot(self.vector(a), self.vector(b)))

    def known_vectors(self) -> list[str]:
        return list(self._vectors)

    def known_operators(self) -> list[str]:
        return list(self._operators)

    def embedded(self, d_new: int) -> "EmbeddedTable":
        return EmbeddedTable(self, d_new)


class EmbeddedTable(SymbolTable):
    """Same names, data padded with zeros into a larger one-particle space."""

    def __init__(self, inner: SymbolTable, d_new: int):
        super().__init__(d_new)
        self.inner_table = inner

    def base_vector(self, name):
        v = self.inner_table.vector(name)
        out = np.zeros(self.d, dtype=complex)
        out[:v.shape[0]] = v
        return out

    def base_operator(self, name):
        t = self.inner_table.operator(name)
        out = np.zeros((self.d, self.d), dtype=complex)
        out[:t.shape[0], :t.shape[1]] = t
        return out


class RandomSymbolTable(SymbolTable):
    """Unknown names resolve to seeded random data.

    Each name gets its own generator seeded by ``(seed, crc32(name))``, so the
    value of ``phi1`` does not depend on which other names were looked up.
    Vectors are normalized; operators have unit spectral norm.
    """

    def __init__(self, d: int, seed: int, vectors=None, operators=None):
        super().__init__(d, vectors, operators)
        self.seed = int(seed)

    def _rng(self, kind: str, name: str):
        return np.random.default_rng([self.seed, zlib.crc32(f"{kind}:{name}".encode())])

    def base_vector(self, name):
        if name not in self._vectors:
            rng = self._rng("vec", name)
            v = rng.standard_normal(self.d) + 1j * rng.standard_normal(self.d)
            self._vectors[name] = v / np.linalg.norm(v)
        return self._vectors[name]

    def base_operator(self, name):
        if name not in self._operators:
            rng = self._rng("op", name)
            t = rng.standard_normal((self.d, self.d)) + 1j * rng.standard_normal((self.d, self.d))
            self._operators[name] = t / np.linalg.norm(t, 2)
        return self._operators[name]


# --------------------------------------------------------------------------- #
# polynomials
# --------------------------------------------------------------------------- #

def _prune(terms: dict) -> dict:
    return {w: c for w, c in terms.items() if abs(c) > PRUNE_TOL}


class Polynomial:
    """Finite linear combination of words; the empty word is the identity.

    Instances are treated as immutable values.
    """

    __slots__ = ("terms",)

    def __init__(self, terms=None):
        clean = {}
        for w, c in (terms or {}).items():
            w = tuple(w)
            clean[w] = clean.get(w, 0j) + complex(c)
        self.terms = _prune(clean)

    @classmethod
    def identity(cls) -> "Polynomial":
        return cls({(): 1.0})

    @classmethod
    def zero(cls) -> "Polynomial":
        return cls()

    @classmethod
    def word(cls, *gens, coeff=1.0) -> "Polynomial":
        return cls({tuple(gens): coeff})

    @classmethod
    def scalar(cls, c) -> "Polynomial":
        return cls({(): c})

    def __iter__(self):
        return iter(self.terms.items())

    def __len__(self):
        return len(self.terms)

    def __bool__(self):
        return bool(self.terms)

    def words(self) -> list:
        return list(self.terms)

    def coeff(self, word) -> complex:
        return self.terms.get(tuple(word), 0j)

    def __add__(self, other):
        other = _lift(other)
        if other is NotImplemented:
            return NotImplemented
        out = dict(self.terms)
        for w, c in other.terms.items():
            out[w] = out.get(w, 0j) + c
        return type(self)._plain(out)

    __radd__ = __add__

    def __neg__(self):
        return Polynomial({w: -c for w, c in self.terms.items()})

    def __sub__(self, other):
        other = _lift(other)
        if other is NotImplemented:
            return NotImplemented
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, (int, float, complex, np.number)):
            return Polynomial({w: c * other for w, c in self.terms.items()})
        if not isinstance(other, Polynomial):
            return NotImplemented
        out: dict = {}
        for w1, c1 in self.terms.items():
            for w2, c2 in other.terms.items():
                w = w1 + w2
                out[w] = out.get(w, 0j) + c1 * c2
        return Polynomial(out)

    def __rmul__(self, other):
        if isinstance(other, (int, float, complex, np.number)):
            return self * other
        return NotImplemented

    @staticmethod
    def _plain(terms):
        return Polynomial(terms)

    def __eq__(self, other):
        if not isinstance(other, Polynomial):
            return NotImplemented
        return self.terms == other.terms

    def __hash__(self):
        return hash(frozenset(self.terms.items()))

    def is_close(self, other: "Polynomial", tol: float = 1e-12) -> bool:
        keys = set(self.terms) | set(other.terms)
        return all(abs(self.coeff(k) - other.coeff(k)) <= tol for k in keys)

    def max_abs_coeff(self) -> float:
        return max((abs(c) for c in self.terms.values()), default=0.0)

    def __repr__(self):
        from .syntax import format_polynomial

        return f"Polynomial({format_polynomial(self)!r})"

    def generators(self) -> Iterable:
        for w in self.terms:
            yield from w


def _lift(x):
    if isinstance(x, Polynomial):
        return x
    if isinstance(x, (int, float, complex, np.number)):
        return Polynomial.scalar(x)
    return NotImplemented


# --------------------------------------------------------------------------- #
# word bookkeeping
# --------------------------------------------------------------------------- #

def counts(word) -> tuple[int, int]:
    """(creators, annihilators)."""
    return (sum(isinstance(g, Create) for g in word),
            sum(isinstance(g, Annihilate) for g in word))


def degree(word) -> int:
    k, l = counts(word)
    return k - l


def max_rise(word) -> int:
    """Largest level increase reached while applying ``word`` right to left."""
    height, top = 0, 0
    for g in reversed(word):
        if isinstance(g, Create):
            height += 1
        elif isinstance(g, Annihilate):
            height -= 1
        top = max(top, height)
    return top


def polynomial_rise(p: Polynomial) -> int:
    return max((max_rise(w) for w in p.terms), default=0)


def exact_level(p: Polynomial, N: int) -> int:
    """Largest source level on which the truncated action of ``p`` is exact."""
    return N - polynomial_rise(p)
