"""Turning symbolic polynomials into operators on a truncation."""

from __future__ import annotations

from ..fock_core import FockVector, TruncationConfig
from ..fock_ops import (FockOperator, annihilation, apply_annihilation, apply_creation,
                        apply_gamma, apply_gauge, creation, gamma, gauge)
from .algebra import Annihilate, Create, Gamma, Lambda, Polynomial, SymbolTable


def _check_table(cfg: TruncationConfig, table: SymbolTable) -> None:
    if table.d != cfg.d:
        raise ValueError(f"symbol table has d={table.d}, truncation has d={cfg.d}")


def generator_matrix(g, table: SymbolTable, cfg: TruncationConfig) -> FockOperator:
    if isinstance(g, Create):
        return creation(cfg, table.vector(g.vec))
    if isinstance(g, Annihilate):
        return annihilation(cfg, table.vector(g.vec))
    if isinstance(g, Lambda):
        return gauge(cfg, g.mu, table.operator(g.op))
    if isinstance(g, Gamma):
        return gamma(cfg, g.mu)
    raise TypeError(f"not a generator: {g!r}")


def evaluate(p: Polynomial, table: SymbolTable, cfg: TruncationConfig) -> FockOperator:
    """Dense matrix of ``p``; exactness is the minimum over its words."""
    _check_table(cfg, table)
    cache: dict = {}
    total = None
    for word, c in p.terms.items():
        op = FockOperator.identity(cfg)
        for g in word:
            if g not in cache:
                cache[g] = generator_matrix(g, table, cfg)
            op = op @ cache[g]
        term = c * op
        total = term if total is None else total + term
    return total if total is not None else FockOperator.zero(cfg)


def apply_generator(g, table: SymbolTable, v: FockVector) -> FockVector:
    if isinstance(g, Create):
        return apply_creation(v, table.vector(g.vec))
    if isinstance(g, Annihilate):
        return apply_annihilation(v, table.vector(g.vec))
    if isinstance(g, Lambda):
        return apply_gauge(v, g.mu, table.operator(g.op))
    if isinstance(g, Gamma):
        return apply_gamma(v, g.mu)
    raise TypeError(f"not a generator: {g!r}")


def apply_polynomial(p: Polynomial, table: SymbolTable, v: FockVector) -> FockVector:
    """Matrix-free action of ``p`` on ``v``; shared word suffixes are applied once."""
    _check_table(v.cfg, table)
    # no recursive closure here: a self-referencing closure would keep the
    # (possibly very large) cache alive until the cyclic collector runs
    cache: dict = {(): v}
    out = FockVector.zeros(v.cfg, v.batch)
    for word, c in p.terms.items():
        word = tuple(word)
        i = 0
        while word[i:] not in cache:
            i += 1
        for j in range(i - 1, -1, -1):
            cache[word[j:]] = apply_generator(word[j], table, cache[word[j + 1:]])
        out = out + cache[word] * c
    return out
