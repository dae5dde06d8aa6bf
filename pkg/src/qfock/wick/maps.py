"""Gradings, the maps Q_k and P₀, and the symbolic adjoint.

Q_k and P₀ are defined through an auxiliary unit vector φ orthogonal to the
one-particle space. On normal monomials both reduce to scalar multiples::

    Q_k(S) = q^j ν₁⋯ν_l μ S   if S has exactly k creators, else 0
    P₀(R)  = q^{i+j} ν₁⋯ν_l μ R

with ``i`` creators, ``j`` annihilators, gauge parameters ``ν`` and γ
parameter ``μ``. The ``*_vector_check`` functions test these formulas
against the defining equations on an enlarged space where φ is an extra basis
vector.
"""

from __future__ import annotations

import numpy as np

from ..fock_core import FockVector, TruncationConfig, q_norms
from ..fock_ops import apply_annihilation, apply_creation
from .algebra import (Annihilate, Create, Gamma, Lambda, Polynomial, SymbolTable,
                      adjoint_name, degree, max_rise)
from .evaluate import apply_polynomial
from .rewrite import NormalForm, as_normal_form


def grade_component(p: Polynomial, n: int) -> Polynomial:
    """Words with exactly ``n`` more creators than annihilators."""
    return type(p)({w: c for w, c in p.terms.items() if degree(w) == n}) \
        if isinstance(p, NormalForm) else Polynomial(
            {w: c for w, c in p.terms.items() if degree(w) == n})


def degrees(p: Polynomial) -> list[int]:
    return sorted({degree(w) for w in p.terms})


def _weight(nus, mu) -> complex:
    out = complex(mu)
    for nu in nus:
        out *= nu
    return out


def q_k(nf: NormalForm, k: int, q: float) -> NormalForm:
    nf = as_normal_form(nf)
    return NormalForm({w: c * q**j * _weight(nus, mu)
                       for w, c, i, j, nus, mu in nf.word_data() if i == k})


def p_0(nf: NormalForm, q: float) -> NormalForm:
    nf = as_normal_form(nf)
    return NormalForm({w: c * q**(i + j) * _weight(nus, mu)
                       for w, c, i, j, nus, mu in nf.word_data()})


def creator_counts(nf: NormalForm) -> list[int]:
    return sorted({i for _, _, i, _, _, _ in as_normal_form(nf).word_data()})


def _adjoint_generator(g):
    if isinstance(g, Create):
        return Annihilate(g.vec)
    if isinstance(g, Annihilate):
        return Create(g.vec)
    if isinstance(g, Lambda):
        return Lambda(g.mu.conjugate(), adjoint_name(g.op))
    if isinstance(g, Gamma):
        return Gamma(g.mu.conjugate())
    raise TypeError(f"not a generator: {g!r}")


def q_adjoint_symbolic(p: Polynomial) -> Polynomial:
    return Polynomial({tuple(_adjoint_generator(g) for g in reversed(w)): c.conjugate()
                       for w, c in p.terms.items()})


# --------------------------------------------------------------------------- #
# extended-space oracles
# --------------------------------------------------------------------------- #

def _embed(v: FockVector, cfg_ext: TruncationConfig) -> FockVector:
    pad = cfg_ext.d - v.cfg.d
    nb = len(v.batch)
    levels = []
    for n, x in enumerate(v.levels):
        if n > cfg_ext.N:
            break
        levels.append(np.pad(x, [(0, pad)] * n + [(0, 0)] * nb))
    while len(levels) < cfg_ext.N + 1:
        n = len(levels)
        levels.append(np.zeros((cfg_ext.d,) * n + v.batch, dtype=complex))
    return FockVector(cfg_ext, tuple(levels), v.batch)


def _insert_phi(v: FockVector, k: int) -> FockVector:
    """``φ ⊗_k v`` with φ the last basis vector: φ placed in tensor slot k+1."""
    cfg = v.cfg
    levels = [np.zeros_like(x) for x in v.levels]
    for n in range(cfg.N):
        if n < k:
            continue
        x = v.levels[n]
        y = np.zeros((cfg.d,) * (n + 1) + v.batch, dtype=complex)
        idx = [slice(None)] * (n + 1)
        idx[k] = cfg.d - 1
        y[tuple(idx)] = x
        levels[n + 1] = y
    return FockVector(cfg, tuple(levels), v.batch)


def _project_phi_slot(v: FockVector, k: int) -> FockVector:
    """``(Π_φ ⊗_k 1) v``: keep only components with φ in tensor slot k+1."""
    cfg = v.cfg
    levels = []
    for n, x in enumerate(v.levels):
        y = np.zeros_like(x)
        if n > k:
            idx = [slice(None)] * n
            idx[k] = cfg.d - 1
            y[tuple(idx)] = x[tuple(idx)]
        levels.append(y)
    return FockVector(cfg, tuple(levels), v.batch)


def _source_levels(nf, cfg, extra_rise):
    top = cfg.N - extra_rise - max((max_rise(w) for w in nf.terms), default=0)
    return list(range(0, top + 1))


def q_k_vector_check(nf: NormalForm, k: int, table: SymbolTable, cfg: TruncationConfig) -> float:
    """Defect of ``φ ⊗_k [Q_k(S) Φ] = (Π_φ ⊗_k 1) S a*(φ) Φ`` over basis Φ.

    Φ runs over all basis vectors on which ``S a*(φ)`` acts exactly; the
    defect is the largest q-norm of the difference.
    """
    nf = as_normal_form(nf)
    cfg_ext = cfg.with_(d=cfg.d + 1)
    ext = table.embedded(cfg_ext.d)
    phi = np.zeros(cfg_ext.d, dtype=complex)
    phi[-1] = 1.0
    levels = _source_levels(nf, cfg, 1)
    if not levels:
        return 0.0
    basis = FockVector.basis(cfg, levels)
    lhs = _insert_phi(_embed(apply_polynomial(q_k(nf, k, cfg.q), table, basis), cfg_ext), k)
    rhs = _project_phi_slot(apply_polynomial(nf, ext, apply_creation(_embed(basis, cfg_ext), phi)), k)
    return float(np.max(q_norms(lhs - rhs)))


def p_0_vector_check(nf: NormalForm, table: SymbolTable, cfg: TruncationConfig) -> float:
    """Defect of ``P₀(R) Ψ = a(φ) R a*(φ) Ψ`` over basis Ψ of the exact region."""
    nf = as_normal_form(nf)
    cfg_ext = cfg.with_(d=cfg.d + 1)
    ext = table.embedded(cfg_ext.d)
    phi = np.zeros(cfg_ext.d, dtype=complex)
    phi[-1] = 1.0
    levels = _source_levels(nf, cfg, 1)
    if not levels:
        return 0.0
    basis = FockVector.basis(cfg, levels)
    lhs = _embed(apply_polynomial(p_0(nf, cfg.q), table, basis), cfg_ext)
    inner = apply_polynomial(nf, ext, apply_creation(_embed(basis, cfg_ext), phi))
    rhs = apply_annihilation(inner, phi)
    return float(np.max(q_norms(lhs - rhs)))
