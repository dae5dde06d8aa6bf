"""Normal ordering by term rewriting.

Every step rewrites the leftmost adjacent pair that is out of order with
respect to ``a* < λ < γ < a`` (or a pair of adjacent γ's). Rules, oriented
left to right::

    a(φ) a*(ψ)      → q a*(ψ) a(φ) + ⟨φ,ψ⟩
    a(φ) γ_μ        → μ γ_μ a(φ)
    γ_μ a*(φ)       → μ a*(φ) γ_μ
    a(φ) λ_μ(T)     → μ λ_μ(T) a(φ) + μ γ_μ a(T*φ)
    λ_μ(T) a*(φ)    → μ a*(φ) λ_μ(T) + μ a*(Tφ) γ_μ
    γ_μ λ_ν(T)      → λ_ν(T) γ_μ
    γ_μ γ_ν         → γ_{μν}

Each rule either shortens the word or strictly lowers the number of
out-of-order pairs, so rewriting terminates.
"""

from __future__ import annotations

import numpy as np

from .algebra import (RANK, Annihilate, Create, Gamma, Lambda, Polynomial,
                      SymbolTable, adjoint_name, applied_name, check_generator)

DEFAULT_BUDGET = 200_000


class RewriteBudgetError(RuntimeError):
    """Rewriting exceeded its step budget."""


class NormalFormError(ValueError):
    """A polynomial does not have the normal-form word shape."""


def _is_normal_word(word) -> bool:
    ranks = [RANK[type(g)] for g in word]
    if any(b < a for a, b in zip(ranks, ranks[1:])):
        return False
    return sum(isinstance(g, Gamma) for g in word) == 1


class NormalForm(Polynomial):
    """Polynomial whose words all read ``a*…a* λ…λ γ a…a`` with one γ."""

    __slots__ = ()

    def __init__(self, terms=None):
        super().__init__(terms)
        for w in self.terms:
            if not _is_normal_word(w):
                from .syntax import format_word

                raise NormalFormError(f"word not in normal form: {format_word(w)}")

    @classmethod
    def identity(cls) -> "NormalForm":
        return cls({(Gamma(1.0),): 1.0})

    def word_data(self):
        """Yield ``(word, coeff, creators, annihilators, lambda_mus, gamma_mu)``."""
        for w, c in self.terms.items():
            i = sum(isinstance(g, Create) for g in w)
            j = sum(isinstance(g, Annihilate) for g in w)
            nus = [g.mu for g in w if isinstance(g, Lambda)]
            mu = next(g.mu for g in w if isinstance(g, Gamma))
            yield w, c, i, j, nus, mu

    def __eq__(self, other):
        return Polynomial.__eq__(self, other)

    __hash__ = Polynomial.__hash__


def _disordered(x, y) -> bool:
    if isinstance(x, Gamma) and isinstance(y, Gamma):
        return True
    return RANK[type(x)] > RANK[type(y)]


def _rewrite_pair(x, y, table: SymbolTable, q: float):
    """Replacement for the adjacent pair ``x y`` as ``[(coeff, gens), ...]``."""
    if isinstance(x, Annihilate):
        if isinstance(y, Create):
            return [(q, (y, x)), (table.inner(x.vec, y.vec), ())]
        if isinstance(y, Gamma):
            return [(y.mu, (y, x))]
        if isinstance(y, Lambda):
            moved = Annihilate(applied_name(adjoint_name(y.op), x.vec))
            return [(y.mu, (y, x)), (y.mu, (Gamma(y.mu), moved))]
    if isinstance(x, Gamma):
        if isinstance(y, Create):
            return [(x.mu, (y, x))]
        if isinstance(y, Lambda):
            return [(1.0, (y, x))]
        if isinstance(y, Gamma):
            return [(1.0, (Gamma(x.mu * y.mu),))]
    if isinstance(x, Lambda) and isinstance(y, Create):
        moved = Create(applied_name(x.op, y.vec))
        return [(x.mu, (y, x)), (x.mu, (moved, Gamma(x.mu)))]
    raise AssertionError(f"no rule for {x!r} {y!r}")


def _finish(word):
    """Insert γ₁ into an ordered word that has no γ."""
    if any(isinstance(g, Gamma) for g in word):
        return word
    pos = next((i for i, g in enumerate(word) if isinstance(g, Annihilate)), len(word))
    return word[:pos] + (Gamma(1.0),) + word[pos:]


def normal_order(p: Polynomial, table: SymbolTable, q: float,
                 budget: int = DEFAULT_BUDGET) -> NormalForm:
    """Rewrite ``p`` into normal form.

    Parameters
    ----------
    p : Polynomial
    table : SymbolTable
        Resolves the scalar products produced by the ``a a*`` rule.
    q : float
    budget : int
        Maximum number of single-pair rewrites before giving up.

    Raises
    ------
    RewriteBudgetError
        If more than ``budget`` rewrites are needed.
    SymbolError
        If a scalar product refers to an unknown name.
    """
    for g in p.generators():
        check_generator(g)
    pending: dict = dict(p.terms)
    done: dict = {}
    steps = 0
    while pending:
        word, c = pending.popitem()
        if abs(c) <= 1e-14:
            continue
        pos = next((i for i in range(len(word) - 1) if _disordered(word[i], word[i + 1])), None)
        if pos is None:
            w = _finish(word)
            done[w] = done.get(w, 0j) + c
            continue
        steps += 1
        if steps > budget:
            raise RewriteBudgetError(f"normal ordering exceeded {budget} rewrite steps")
        for f, repl in _rewrite_pair(word[pos], word[pos + 1], table, q):
            w = word[:pos] + repl + word[pos + 2:]
            pending[w] = pending.get(w, 0j) + c * f
    return NormalForm(done)


def is_normal_form(p: Polynomial) -> bool:
    return all(_is_normal_word(w) for w in p.terms)


def as_normal_form(p: Polynomial) -> NormalForm:
    return p if isinstance(p, NormalForm) else NormalForm(p.terms)


def absorb_gamma(nf: NormalForm) -> Polynomial:
    """Fold each word's γ into its last λ via ``λ_ν(T) γ_μ = λ_{νμ}(T)``.

    Words without a λ keep their γ. The result is an equal element of the
    algebra, but words that absorbed their γ no longer carry one, so it is
    returned as a plain :class:`Polynomial`.
    """
    out: dict = {}
    for w, c in nf.terms.items():
        g = next(k for k, x in enumerate(w) if isinstance(x, Gamma))
        if g > 0 and isinstance(w[g - 1], Lambda):
            lam = w[g - 1]
            new = Lambda(lam.mu * w[g].mu, lam.op)
            check_generator(new)
            w = w[:g - 1] + (new,) + w[g + 1:]
        out[w] = out.get(w, 0j) + c
    return Polynomial(out)


def swap_commuting_lambdas(p: Polynomial, position: int, table: SymbolTable | None = None,
                           atol: float = 1e-12) -> Polynomial:
    """Swap ``λ_μ(T) λ_ν(S) → λ_ν(S) λ_μ(T)`` at ``position`` in every word.

    Valid only when ``T`` and ``S`` commute; this is the caller's assertion.
    When a ``table`` is given the commutator is checked numerically.
    """
    out: dict = {}
    for w, c in p.terms.items():
        if position + 1 < len(w) and isinstance(w[position], Lambda) \
                and isinstance(w[position + 1], Lambda):
            x, y = w[position], w[position + 1]
            if table is not None:
                T, S = table.operator(x.op), table.operator(y.op)
                if not np.allclose(T @ S, S @ T, atol=atol):
                    raise ValueError(f"{x.op} and {y.op} do not commute")
            w = w[:position] + (y, x) + w[position + 2:]
        out[w] = out.get(w, 0j) + c
    return Polynomial(out)
