"""Simple biprocesses, their stochastic integrals and seminorms.

The half-line is replaced by ``(0, T_max]`` cut into ``m`` equal cells. The
one-particle space is spanned by the normalized cell indicators
``ê_i = χ_{cell_i}/√h``, so ``d = m`` and the indicator of a grid-aligned
interval ``I`` has coefficient ``√h`` on every cell it covers.

Symbol names understood by :class:`GridSymbolTable`:

``chi[a,b]``
    indicator function of ``(a, b]`` (times in horizon units)
``Pi[a,b]``
    orthogonal projection onto ``L²(a, b)``
``e[i]``
    normalized indicator of cell ``i`` (1-based)

Any other name falls back to seeded random data when the table has a seed.
"""

from __future__ import annotations

import math
import re
import zlib
from dataclasses import dataclass, field

import numpy as np

from .fock_core import QConstants, TruncationConfig
from .fock_ops import FockOperator, annihilation, block_norm, creation, gauge, q_operator_norm
from .wick import (Annihilate, Create, Gamma, Lambda, Polynomial, SymbolError, SymbolTable,
                   evaluate, normal_order, q_adjoint_symbolic, q_k)
from .wick.syntax import _fmt_real, parse_polynomial

ALIGN_TOL = 1e-9


class AlignmentError(ValueError):
    """An interval endpoint is not on the time grid."""


class AdaptednessError(ValueError):
    """A biprocess does not meet the adaptedness an integrator requires."""


# --------------------------------------------------------------------------- #
# grid
# --------------------------------------------------------------------------- #

@dataclass(frozen=True)
class TimeGrid:
    T_max: float
    m: int

    def __post_init__(self):
        if not self.T_max > 0:
            raise ValueError(f"T_max must be positive, got {self.T_max}")
        if int(self.m) != self.m or self.m < 1:
            raise ValueError(f"m must be a positive integer, got {self.m}")

    @property
    def h(self) -> float:
        return self.T_max / self.m

    @property
    def d(self) -> int:
        return self.m

    def index(self, t: float) -> int:
        """Grid index ``k`` with ``t = k·h``; raises if ``t`` is off grid."""
        x = t / self.h
        k = round(x)
        if abs(x - k) > ALIGN_TOL or k < 0 or k > self.m:
            raise AlignmentError(f"time {t} is not a grid point of {self}")
        return int(k)

    def cells(self, a: float, b: float) -> range:
        """0-based indices of cells covering ``(a, b]``."""
        i, j = self.index(a), self.index(b)
        if j < i:
            raise AlignmentError(f"empty or reversed interval ({a}, {b}]")
        return range(i, j)

    def point(self, k: int) -> float:
        return k * self.h

    def chi(self, a: float, b: float) -> np.ndarray:
        v = np.zeros(self.m, dtype=complex)
        v[list(self.cells(a, b))] = math.sqrt(self.h)
        return v

    def projection_diag(self, a: float, b: float) -> np.ndarray:
        v = np.zeros(self.m, dtype=complex)
        v[list(self.cells(a, b))] = 1.0
        return v

    def projection(self, a: float, b: float) -> np.ndarray:
        return np.diag(self.projection_diag(a, b))


def fmt_time(t: float) -> str:
    return _fmt_real(float(t))


def chi_name(a: float, b: float) -> str:
    return f"chi[{fmt_time(a)},{fmt_time(b)}]"


def pi_name(a: float, b: float) -> str:
    return f"Pi[{fmt_time(a)},{fmt_time(b)}]"


_GRID_NAME = re.compile(r"^(chi|Pi)\[\s*([^,\]]+)\s*,\s*([^\]]+)\s*\]$")
_CELL_NAME = re.compile(r"^e\[\s*(\d+)\s*\]$")


class GridSymbolTable(SymbolTable):
    """Symbol table over a :class:`TimeGrid` one-particle space."""

    def __init__(self, grid: TimeGrid, vectors=None, operators=None, seed: int | None = None):
        super().__init__(grid.d, vectors, operators)
        self.grid = grid
        self.seed = seed

    def _random(self, kind, name):
        if self.seed is None:
            raise SymbolError(f"unknown {kind} {name!r}")
        rng = np.random.default_rng([self.seed, zlib.crc32(f"{kind}:{name}".encode())])
        shape = (self.d,) if kind == "vector" else (self.d, self.d)
        x = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
        return x / np.linalg.norm(x, 2)

    def base_vector(self, name):
        if name in self._vectors:
            return self._vectors[name]
        m = _GRID_NAME.match(name)
        if m and m.group(1) == "chi":
            v = self.grid.chi(float(m.group(2)), float(m.group(3)))
        elif _CELL_NAME.match(name):
            i = int(_CELL_NAME.match(name).group(1))
            if not 1 <= i <= self.d:
                raise SymbolError(f"cell index out of range in {name!r}")
            v = np.zeros(self.d, dtype=complex)
            v[i - 1] = 1.0
        else:
            v = self._random("vector", name)
        self._vectors[name] = v
        return v

    def base_operator(self, name):
        if name in self._operators:
            return self._operators[name]
        m = _GRID_NAME.match(name)
        if m and m.group(1) == "Pi":
            t = self.grid.projection(float(m.group(2)), float(m.group(3)))
        elif name in ("I", "1"):
            t = np.eye(self.d, dtype=complex)
        else:
            t = self._random("operator", name)
        self._operators[name] = t
        return t

    def vector_support(self, name: str) -> set:
        return set(np.flatnonzero(np.abs(self.vector(name)) > 1e-14).tolist())

    def operator_support(self, name: str) -> set:
        t = np.abs(self.operator(name)) > 1e-14
        return set(np.flatnonzero(t.any(axis=0) | t.any(axis=1)).tolist())


# --------------------------------------------------------------------------- #
# processes and bioperators
# --------------------------------------------------------------------------- #

_KINDS = ("A", "A*", "Lambda", "T")


@dataclass(frozen=True)
class ProcessKind:
    """One of the basic processes ``A``, ``A*``, ``Λ_μ`` or ``T``."""

    name: str
    mu: complex = 0j

    def __post_init__(self):
        if self.name not in _KINDS:
            raise ValueError(f"unknown process {self.name!r}; expected one of {_KINDS}")
        object.__setattr__(self, "mu", complex(self.mu))
        if self.name == "Lambda" and not abs(self.mu) < 1:
            raise ValueError(f"gauge process needs |mu| < 1, got {self.mu}")

    @classmethod
    def parse(cls, text: str) -> "ProcessKind":
        text = text.strip()
        m = re.fullmatch(r"(?:Lambda|L)\(\s*(?:mu=)?([^)]+)\)", text)
        if m:
            return cls("Lambda", complex(m.group(1).replace(" ", "")))
        if text in ("A", "A*", "T"):
            return cls(text)
        raise ValueError(f"cannot parse process kind {text!r}")

    def __str__(self):
        if self.name == "Lambda":
            from .wick.syntax import format_number

            return f"Lambda({format_number(self.mu)})"
        return self.name

    def increment(self, a: float, b: float) -> Polynomial:
        """Symbolic ``S(b) - S(a)``."""
        if self.name == "A":
            return Polynomial.word(Annihilate(chi_name(a, b)))
        if self.name == "A*":
            return Polynomial.word(Create(chi_name(a, b)))
        if self.name == "Lambda":
            return Polynomial.word(Lambda(self.mu, pi_name(a, b)))
        return Polynomial.scalar(b - a)

    def adjoint(self) -> "ProcessKind":
        if self.name == "A":
            return ProcessKind("A*")
        if self.name == "A*":
            return ProcessKind("A")
        if self.name == "Lambda":
            return ProcessKind("Lambda", self.mu.conjugate())
        return self


def basic_increment(kind: ProcessKind, a: float, b: float, grid: TimeGrid,
                    cfg: TruncationConfig) -> FockOperator:
    """Matrix of ``S(b) - S(a)`` on the truncation."""
    if cfg.d != grid.d:
        raise ValueError(f"truncation has d={cfg.d} but grid has {grid.d} cells")
    if kind.name == "A":
        return annihilation(cfg, grid.chi(a, b))
    if kind.name == "A*":
        return creation(cfg, grid.chi(a, b))
    if kind.name == "Lambda":
        return gauge(cfg, kind.mu, grid.projection(a, b))
    grid.cells(a, b)
    return (b - a) * FockOperator.identity(cfg)


@dataclass(frozen=True)
class Bioperator:
    """``Σ c·F⊗G`` with ``F``, ``G`` polynomials."""

    terms: tuple = ()

    @classmethod
    def identity(cls) -> "Bioperator":
        return cls(((1.0 + 0j, Polynomial.identity(), Polynomial.identity()),))

    @classmethod
    def simple(cls, F, G, coeff=1.0) -> "Bioperator":
        F = parse_polynomial(F) if isinstance(F, str) else F
        G = parse_polynomial(G) if isinstance(G, str) else G
        return cls(((complex(coeff), F, G),))

    def __add__(self, other: "Bioperator") -> "Bioperator":
        return Bioperator(self.terms + other.terms)

    def __mul__(self, c) -> "Bioperator":
        return Bioperator(tuple((c * k, F, G) for k, F, G in self.terms))

    __rmul__ = __mul__

    def left_mul(self, S: Polynomial) -> "Bioperator":
        """``S(F⊗G) = (SF)⊗G``."""
        return Bioperator(tuple((k, S * F, G) for k, F, G in self.terms))

    def right_mul(self, S: Polynomial) -> "Bioperator":
        """``(F⊗G)S = F⊗(GS)``."""
        return Bioperator(tuple((k, F, G * S) for k, F, G in self.terms))

    def convolution(self) -> "Bioperator":
        """``(F⊗G)* = G*⊗F*``."""
        return Bioperator(tuple((k.conjugate(), q_adjoint_symbolic(G), q_adjoint_symbolic(F))
                                for k, F, G in self.terms))

    def polynomials(self):
        for _, F, G in self.terms:
            yield F
            yield G

    def is_zero(self) -> bool:
        return all(k == 0 or not F or not G for k, F, G in self.terms)


def sharp(B: Bioperator, S, table: SymbolTable | None = None, cfg: TruncationConfig | None = None):
    """``(F⊗G)♯S = FSG``, for ``S`` a Polynomial or a FockOperator."""
    if isinstance(S, FockOperator):
        if table is None:
            raise ValueError("sharp with a matrix needs a symbol table")
        cfg = S.cfg
        out = FockOperator.zero(cfg)
        for k, F, G in B.terms:
            out = out + k * (evaluate(F, table, cfg) @ S @ evaluate(G, table, cfg))
        return out
    if not isinstance(S, Polynomial):
        S = Polynomial.scalar(S)
    out = Polynomial.zero()
    for k, F, G in B.terms:
        out = out + (F * S * G) * k
    return out


def biconvolution(B: Bioperator) -> Bioperator:
    return B.convolution()


# --------------------------------------------------------------------------- #
# simple biprocesses
# --------------------------------------------------------------------------- #

ADAPTED, LEFT, RIGHT, NONE = "adapted", "left-adapted", "right-adapted", "none"


@dataclass(frozen=True)
class SimpleBiprocess:
    """``R(t) = Σ B_i χ_{(a_i, b_i]}(t)`` with disjoint grid-aligned pieces."""

    pieces: tuple = field(default=())

    def __post_init__(self):
        pieces = tuple(sorted(((float(a), float(b)), B) for (a, b), B in self.pieces))
        for ((a, b), _) in pieces:
            if not b > a:
                raise ValueError(f"piece ({a}, {b}] is empty")
        for ((_, b0), _), ((a1, _), _) in zip(pieces, pieces[1:]):
            if a1 < b0 - 1e-12:
                raise ValueError(f"pieces overlap near t={a1}")
        object.__setattr__(self, "pieces", pieces)

    @classmethod
    def constant(cls, B: Bioperator, a: float, b: float) -> "SimpleBiprocess":
        return cls((((a, b), B),))

    def check_grid(self, grid: TimeGrid) -> None:
        for (a, b), _ in self.pieces:
            grid.cells(a, b)

    def convolution(self) -> "SimpleBiprocess":
        return SimpleBiprocess(tuple((I, B.convolution()) for I, B in self.pieces))

    def scaled(self, c) -> "SimpleBiprocess":
        return SimpleBiprocess(tuple((I, c * B) for I, B in self.pieces))

    def at(self, t: float) -> Bioperator:
        for (a, b), B in self.pieces:
            if a < t <= b:
                return B
        return Bioperator()

    def breakpoints(self) -> list:
        pts = set()
        for (a, b), _ in self.pieces:
            pts.update((a, b))
        return sorted(pts)

    def refine(self, points) -> "SimpleBiprocess":
        """Split pieces at the given times (same biprocess, finer pieces)."""
        out = []
        pts = sorted(points)
        for (a, b), B in self.pieces:
            cuts = [a] + [p for p in pts if a + 1e-12 < p < b - 1e-12] + [b]
            out.extend(((x, y), B) for x, y in zip(cuts, cuts[1:]))
        return SimpleBiprocess(tuple(out))


def _generator_support(g, table: GridSymbolTable) -> set:
    if isinstance(g, (Create, Annihilate)):
        return table.vector_support(g.vec)
    if isinstance(g, Lambda):
        return table.operator_support(g.op)
    return set()


def polynomial_support(p: Polynomial, table: GridSymbolTable) -> set:
    out: set = set()
    for g in p.generators():
        out |= _generator_support(g, table)
    return out


def piece_adaptedness(a: float, B: Bioperator, table: GridSymbolTable) -> tuple[bool, bool]:
    """(left leg in 𝒜_a, right leg in 𝒜_a) for a piece starting at ``a``.

    ``R(t) ∈ 𝒜_t`` for almost every ``t`` in ``(a, b]`` forces the support into
    ``(0, a]``, the intersection of all ``(0, t]``.
    """
    allowed = set(range(table.grid.index(a)))
    left = all(polynomial_support(F, table) <= allowed for _, F, _ in B.terms)
    right = all(polynomial_support(G, table) <= allowed for _, _, G in B.terms)
    return left, right


def check_adapted(R: SimpleBiprocess, table: GridSymbolTable) -> str:
    """Strongest adaptedness tag valid for every piece."""
    left = right = True
    for (a, _), B in R.pieces:
        lft, rgt = piece_adaptedness(a, B, table)
        left &= lft
        right &= rgt
    if left and right:
        return ADAPTED
    return LEFT if left else RIGHT if right else NONE


_REQUIRED = {"A*": LEFT, "A": RIGHT, "Lambda": ADAPTED, "T": None}


def require_adapted(R: SimpleBiprocess, kind: ProcessKind, table: GridSymbolTable,
                    need: str | None = None) -> None:
    need = _REQUIRED[kind.name] if need is None else need
    if need is None:
        return
    for i, ((a, b), B) in enumerate(R.pieces):
        lft, rgt = piece_adaptedness(a, B, table)
        ok = {ADAPTED: lft and rgt, LEFT: lft, RIGHT: rgt}[need]
        if not ok:
            raise AdaptednessError(
                f"piece {i} on ({fmt_time(a)}, {fmt_time(b)}] is not {need}, "
                f"as integration against {kind} requires")


def integral_polynomial(R: SimpleBiprocess, kind: ProcessKind) -> Polynomial:
    """Symbolic Riemann sum ``Σ_i B_i ♯ [S(b_i) - S(a_i)]``."""
    out = Polynomial.zero()
    for (a, b), B in R.pieces:
        out = out + sharp(B, kind.increment(a, b))
    return out


def integrate(R: SimpleBiprocess, kind: ProcessKind, table: GridSymbolTable,
              cfg: TruncationConfig, check: bool = True) -> FockOperator:
    R.check_grid(table.grid)
    if check:
        require_adapted(R, kind, table)
    return evaluate(integral_polynomial(R, kind), table, cfg)


# --------------------------------------------------------------------------- #
# seminorms
# --------------------------------------------------------------------------- #

def _exact_norm(X: FockOperator) -> float:
    if X.exactness < 0:
        return 0.0
    return q_operator_norm(X.cfg, X, source_levels=range(X.exactness + 1))


def q_k_bioperator(B: Bioperator, k: int, table: SymbolTable, q: float) -> Polynomial:
    """``Q_k(F⊗G) = Q_k(F)·G`` extended linearly."""
    out = Polynomial.zero()
    for c, F, G in B.terms:
        out = out + (q_k(normal_order(F, table, q), k, q) * G) * c
    return out


def _creator_counts(B: Bioperator, table, q) -> set:
    from .wick import creator_counts

    out = set()
    for _, F, _ in B.terms:
        out.update(creator_counts(normal_order(F, table, q)))
    return out


def seminorm_creation(R: SimpleBiprocess, table: GridSymbolTable, cfg: TruncationConfig,
                      constants: QConstants) -> float:
    """``Σ_k (c_k ∫‖Q_k[R(t)]‖² dt)^{1/2}`` over creator counts present."""
    ks = set()
    for _, B in R.pieces:
        ks |= _creator_counts(B, table, cfg.q)
    total = 0.0
    for k in sorted(ks):
        if k >= len(constants.c):
            raise ValueError(f"no constant c_{k} estimated; raise N or K")
        acc = 0.0
        for (a, b), B in R.pieces:
            X = evaluate(q_k_bioperator(B, k, table, cfg.q), table, cfg)
            acc += (b - a) * _exact_norm(X) ** 2
        total += math.sqrt(constants.c[k] * acc)
    return total


def seminorm_annihilation(R: SimpleBiprocess, table: GridSymbolTable, cfg: TruncationConfig,
                          constants: QConstants) -> float:
    return seminorm_creation(R.convolution(), table, cfg, constants)


def seminorm_gauge(R: SimpleBiprocess, mu, table: GridSymbolTable, cfg: TruncationConfig,
                   return_profile: bool = False):
    """``sup_t sup_{n,m ≥ 1} √(nm) ‖R(t)♯λ_μ(Π_(t,T_max])‖_{n→m}``.

    ``t`` runs over the grid points in ``[a_i, b_i)`` of every piece; the
    horizon ``T_max`` stands in for infinity. Blocks are restricted to source
    levels where the evaluated operator is exact.
    """
    grid = table.grid
    best = 0.0
    profile = []
    for (a, b), B in R.pieces:
        vals = []
        for k in range(grid.index(a), grid.index(b)):
            t = grid.point(k)
            lam = Polynomial.word(Lambda(mu, pi_name(t, grid.T_max)))
            X = evaluate(sharp(B, lam), table, cfg)
            v = 0.0
            for n in range(1, X.exactness + 1):
                for m_ in range(1, cfg.N + 1):
                    v = max(v, math.sqrt(n * m_) * block_norm(cfg, X, n, m_))
            vals.append(v)
        profile.append(((a, b), vals))
        best = max([best] + vals)
    return (best, profile) if return_profile else best


def seminorm_time(R: SimpleBiprocess, table: GridSymbolTable, cfg: TruncationConfig) -> float:
    return sum((b - a) * _exact_norm(evaluate(sharp(B, 1.0), table, cfg))
               for (a, b), B in R.pieces)


# --------------------------------------------------------------------------- #
# random adapted biprocesses
# --------------------------------------------------------------------------- #

def _random_generator(rng, lo: int, hi: int, grid: TimeGrid, lam_mu):
    """A generator whose data is supported in cells ``[lo, hi)``."""
    kinds = ["c", "a", "g"] + (["l"] if hi > lo else [])
    if hi <= lo:
        kinds = ["g"]
    kind = kinds[rng.integers(len(kinds))]
    if kind == "g":
        return Gamma(complex(rng.choice([0.5, -0.7, 0.9, 1.0])))
    i = int(rng.integers(lo, hi))
    j = int(rng.integers(i + 1, hi + 1))
    a, b = grid.point(i), grid.point(j)
    if kind == "c":
        return Create(chi_name(a, b))
    if kind == "a":
        return Annihilate(chi_name(a, b))
    return Lambda(complex(lam_mu), pi_name(a, b))


def _random_polynomial(rng, grid, hi_cell, max_len, lam_mu) -> Polynomial:
    n = int(rng.integers(0, max_len + 1))
    word = tuple(_random_generator(rng, 0, hi_cell, grid, lam_mu) for _ in range(n))
    return Polynomial.word(*word)


def random_simple_biprocess(grid: TimeGrid, rng: np.random.Generator, adaptedness: str = ADAPTED,
                            n_pieces: int = 2, max_len: int = 2, n_terms: int = 1,
                            lam_mu: complex = 0.5) -> SimpleBiprocess:
    """Random biprocess on grid-aligned pieces with the requested adaptedness.

    Restricted legs only use data supported before the piece's left endpoint;
    unrestricted legs may use the whole horizon.
    """
    cuts = sorted(rng.choice(np.arange(1, grid.m), size=min(n_pieces - 1, grid.m - 1),
                             replace=False).tolist()) if n_pieces > 1 else []
    bounds = [0] + cuts + [grid.m]
    pieces = []
    for lo, hi in zip(bounds, bounds[1:]):
        if rng.random() < 0.2 and len(bounds) > 2:
            continue
        left_hi = lo if adaptedness in (ADAPTED, LEFT) else grid.m
        right_hi = lo if adaptedness in (ADAPTED, RIGHT) else grid.m
        terms = []
        for _ in range(n_terms):
            c = complex(rng.standard_normal(), rng.standard_normal())
            terms.append((c, _random_polynomial(rng, grid, left_hi, max_len, lam_mu),
                          _random_polynomial(rng, grid, right_hi, max_len, lam_mu)))
        pieces.append(((grid.point(lo), grid.point(hi)), Bioperator(tuple(terms))))
    return SimpleBiprocess(tuple(pieces))


# --------------------------------------------------------------------------- #
# biprocess files
# --------------------------------------------------------------------------- #

def parse_coeff(x) -> complex:
    if isinstance(x, (int, float)):
        return complex(x)
    if isinstance(x, (list, tuple)) and len(x) == 2:
        return complex(float(x[0]), float(x[1]))
    if isinstance(x, str):
        return complex(x.replace(" ", ""))
    raise ValueError(f"cannot read coefficient {x!r}")


def biprocess_from_records(records) -> SimpleBiprocess:
    """Build from ``[{interval: [t1, t2], bioperator: [{left, right, coeff}]}]``."""
    pieces = []
    for i, rec in enumerate(records):
        try:
            t1, t2 = rec["interval"]
            terms = tuple((parse_coeff(term.get("coeff", 1.0)),
                           parse_polynomial(term.get("left", "")),
                           parse_polynomial(term.get("right", "")))
                          for term in rec["bioperator"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ValueError(f"piece {i}: {exc}") from exc
        pieces.append(((float(t1), float(t2)), Bioperator(terms)))
    return SimpleBiprocess(tuple(pieces))


def biprocess_to_records(R: SimpleBiprocess) -> list:
    from .wick import format_polynomial

    out = []
    for (a, b), B in R.pieces:
        out.append({"interval": [a, b],
                    "bioperator": [{"left": format_polynomial(F),
                                    "right": format_polynomial(G),
                                    "coeff": [c.real, c.imag]} for c, F, G in B.terms]})
    return out


def load_biprocess(path) -> SimpleBiprocess:
    from ._toml import load_toml

    data = load_toml(path)
    if "piece" not in data:
        raise ValueError(f"{path}: expected [[piece]] tables")
    return biprocess_from_records(data["piece"])


__all__ = [
    "ADAPTED", "LEFT", "RIGHT", "NONE", "AdaptednessError", "AlignmentError", "Bioperator",
    "GridSymbolTable", "ProcessKind", "SimpleBiprocess", "TimeGrid", "basic_increment",
    "biconvolution", "biprocess_from_records", "biprocess_to_records", "check_adapted",
    "chi_name", "integral_polynomial", "integrate", "load_biprocess", "pi_name",
    "polynomial_support", "random_simple_biprocess", "require_adapted", "seminorm_annihilation",
    "seminorm_creation", "seminorm_gauge", "seminorm_time", "sharp",
]
