"""Itô product formula: assembly, refinement study and composite processes.

For simple adapted ``R₁``, ``R₂`` refined to a partition ``(I_i)`` the product of
the two integrals splits exactly into three sums::

    X₁X₂ = Σ_i [R₁ᵢ♯S₁(Iᵢ)][R₂ᵢ♯S₂(Iᵢ)]            diagonal D
         + Σ_i Σ_{j<i} [R₁ᵢ♯S₁(Iᵢ)][R₂ⱼ♯S₂(Iⱼ)]     first iterated sum
         + Σ_j Σ_{i<j} [R₁ᵢ♯S₁(Iᵢ)][R₂ⱼ♯S₂(Iⱼ)]     second iterated sum

The iterated sums are the iterated integrals with inner integrals taken up to
the left endpoint of each cell. The diagonal converges to the correction term
of the multiplication table::

    dA·dA* = dT      dΛ_μ·dA* = γ_μ dA*      dA·dΛ_ν = dA γ_ν
    dΛ_μ·dΛ_ν = dΛ_{μν}                      every other pair = 0

Two evaluation paths exist. The dense path builds every sum as a symbolic
polynomial and evaluates matrices; it is for small grids. The batched path
never forms a matrix: cell increments become a trailing batch axis of
FockVectors, so a d = 64, N = 4 study fits in a few hundred megabytes.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .fock_core import FockVector, TruncationConfig, apply_P, q_norms
from .fock_ops import (FockOperator, apply_annihilation, apply_creation, apply_gauge,
                       q_operator_norm)
from .sde import (ADAPTED, AdaptednessError, Bioperator, GridSymbolTable, ProcessKind,
                  SimpleBiprocess, TimeGrid, check_adapted, chi_name, integral_polynomial,
                  pi_name, require_adapted, sharp)
from .wick import (Annihilate, Create, Gamma, Lambda, Polynomial, apply_polynomial, evaluate,
                   max_rise, normal_order, p_0)

SCHEMA_VERSION = 1


KW3_FORMS = ("table", "proof")


class HypothesisError(ValueError):
    """An assumption of the product formula does not hold."""


# --------------------------------------------------------------------------- #
# spec
# --------------------------------------------------------------------------- #

@dataclass(frozen=True)
class ItoSpec:
    R1: SimpleBiprocess
    S1: ProcessKind
    R2: SimpleBiprocess
    S2: ProcessKind
    meshes: tuple = (4, 8, 16, 32, 64)
    n_test_vectors: int = 5
    tolerance: float = 1e-6
    seed: int = 0
    name: str = ""
    kw3_form: str = "table"

    def __post_init__(self):
        if self.kw3_form not in KW3_FORMS:
            raise ValueError(f"kw3_form must be one of {KW3_FORMS}, got {self.kw3_form!r}")
        meshes = tuple(int(m) for m in self.meshes)
        if list(meshes) != sorted(set(meshes)) or not meshes:
            raise ValueError("meshes must be a strictly increasing, nonempty sequence")
        object.__setattr__(self, "meshes", meshes)

    def adjoint(self) -> "ItoSpec":
        """Spec of ``(X₁X₂)*``: the pair ``(S₂*, S₁*)`` with convolved biprocesses."""
        return ItoSpec(self.R2.convolution(), self.S2.adjoint(), self.R1.convolution(),
                       self.S1.adjoint(), self.meshes, self.n_test_vectors, self.tolerance,
                       self.seed, f"adjoint of {self.name}" if self.name else "", self.kw3_form)

    def echo(self) -> dict:
        from .sde import biprocess_to_records

        return {"name": self.name, "S1": str(self.S1), "S2": str(self.S2),
                "R1": biprocess_to_records(self.R1), "R2": biprocess_to_records(self.R2),
                "meshes": list(self.meshes), "n_test_vectors": self.n_test_vectors,
                "tolerance": self.tolerance, "seed": self.seed, "kw3_form": self.kw3_form}


def correction_rule(S1: ProcessKind, S2: ProcessKind) -> str:
    """Name of the table entry for ``dS₁·dS₂``."""
    pair = (S1.name, S2.name)
    return {("A", "A*"): "kw0", ("Lambda", "A*"): "kw1", ("A", "Lambda"): "kw2",
            ("Lambda", "Lambda"): "kw3"}.get(pair, "kw4")


def residual_metric(S1: ProcessKind, S2: ProcessKind) -> str:
    """Topology in which the diagonal sum is known to converge.

    ``op`` operator norm, ``vec`` fixed test vectors, ``weak`` matrix elements.
    """
    a, b = S1.name, S2.name
    if "T" in (a, b) or (a, b) == ("A", "A*") or (a == "A*" and b in ("A", "A*")):
        return "op"
    if b == "A":
        return "weak"
    return "vec"


def segments(spec: ItoSpec):
    """Maximal intervals on which both biprocesses are constant."""
    pts = sorted(set(spec.R1.breakpoints()) | set(spec.R2.breakpoints()))
    out = []
    for a, b in zip(pts, pts[1:]):
        mid = 0.5 * (a + b)
        B1, B2 = spec.R1.at(mid), spec.R2.at(mid)
        if B1.terms or B2.terms:
            out.append(((a, b), B1, B2))
    return out


def check_hypotheses(spec: ItoSpec, table: GridSymbolTable) -> dict:
    """Check the assumptions of the product formula; return grading data.

    Adaptedness of both biprocesses is the substantive check. The grading
    assumptions only ask for a finite bound ``j`` on degrees, which every
    finite polynomial satisfies; the bounds found are returned for reports.
    """
    for label, R in (("R1", spec.R1), ("R2", spec.R2)):
        R.check_grid(table.grid)
        try:
            require_adapted(R, ProcessKind("Lambda", 0.0), table, need=ADAPTED)
        except AdaptednessError as exc:
            raise HypothesisError(f"assumption 3 ({label} adapted): {exc}") from None
    from .wick import counts, degree

    def bound(polys, fn):
        return max((abs(fn(w)) for p in polys for w in p.terms), default=0)

    X1 = integral_polynomial(spec.R1, spec.S1)
    X2 = integral_polynomial(spec.R2, spec.S2)
    return {
        "assumption4_j": bound([X2], degree) if spec.S1.name == "Lambda" else None,
        "assumption5_j": max(bound([G for _, B in spec.R1.pieces for _, _, G in B.terms],
                                   lambda w: counts(w)[1]),
                             bound([X2], lambda w: counts(w)[1])) if spec.S1.name == "A" else None,
        "assumption6_j": bound([X1], degree) if spec.S2.name == "Lambda" else None,
        "assumption7_j": max(bound([F for _, B in spec.R2.pieces for _, F, _ in B.terms],
                                   lambda w: counts(w)[0]),
                             bound([X1], lambda w: counts(w)[0])) if spec.S2.name == "A*" else None,
    }


# --------------------------------------------------------------------------- #
# symbolic pieces
# --------------------------------------------------------------------------- #

def _term_pairs(B1: Bioperator, B2: Bioperator):
    for (c1, F1, G1), (c2, F2, G2) in itertools.product(B1.terms, B2.terms):
        yield c1 * c2, F1, G1, F2, G2


def correction_polynomial(spec: ItoSpec, table: GridSymbolTable, q: float) -> Polynomial:
    """The first summand of the product formula, per the multiplication table.

    For ``dΛ_μ·dΛ_ν`` two forms exist. ``"table"`` is ``F₁G₁F₂ dΛ_{μν} G₂``.
    ``"proof"`` is ``F₁γ_μG₁F₂ dΛ_ν G₂``, the limit reached in the derivation;
    it equals ``μ^k F₁G₁F₂ dΛ_{μν} G₂`` when ``G₁F₂`` has degree ``k``, so the
    two forms agree exactly when the middle leg has degree 0.
    """
    rule = correction_rule(spec.S1, spec.S2)
    out = Polynomial.zero()
    if rule == "kw4":
        return out
    for (a, b), B1, B2 in segments(spec):
        for c, F1, G1, F2, G2 in _term_pairs(B1, B2):
            if rule == "kw0":
                mid = p_0(normal_order(G1 * F2, table, q), q)
                out = out + (F1 * mid * G2) * (c * (b - a))
            elif rule == "kw1":
                inc = Polynomial.word(Create(chi_name(a, b)))
                gam = Polynomial.word(Gamma(spec.S1.mu))
                out = out + (F1 * gam * G1 * F2 * inc * G2) * c
            elif rule == "kw2":
                inc = Polynomial.word(Annihilate(chi_name(a, b)))
                gam = Polynomial.word(Gamma(spec.S2.mu))
                out = out + (F1 * inc * G1 * F2 * gam * G2) * c
            elif spec.kw3_form == "table":
                inc = Polynomial.word(Lambda(spec.S1.mu * spec.S2.mu, pi_name(a, b)))
                out = out + (F1 * G1 * F2 * inc * G2) * c
            else:
                gam = Polynomial.word(Gamma(spec.S1.mu))
                inc = Polynomial.word(Lambda(spec.S2.mu, pi_name(a, b)))
                out = out + (F1 * gam * G1 * F2 * inc * G2) * c
    return out


def mesh_cells(spec: ItoSpec, grid: TimeGrid, m: int):
    """Cells of the mesh-``m`` partition with the bioperators active on each."""
    width = grid.T_max / m
    coarse = TimeGrid(grid.T_max, m)
    segs = segments(spec)
    for (a, b), _, _ in segs:
        coarse.cells(a, b)
    out = []
    for k in range(m):
        a, b = k * width, (k + 1) * width
        grid.cells(a, b)
        mid = 0.5 * (a + b)
        hit = next(((B1, B2) for (s, t), B1, B2 in segs if s < mid < t), None)
        out.append(((a, b),) + (hit if hit else (Bioperator(), Bioperator())))
    return out


def riemann_polynomials(spec: ItoSpec, grid: TimeGrid, m: int) -> dict:
    """Diagonal and both iterated sums at mesh ``m`` as polynomials (dense path)."""
    cells = mesh_cells(spec, grid, m)
    x1 = [sharp(B1, spec.S1.increment(a, b)) for (a, b), B1, _ in cells]
    x2 = [sharp(B2, spec.S2.increment(a, b)) for (a, b), _, B2 in cells]
    D = Polynomial.zero()
    Oa = Polynomial.zero()
    Ob = Polynomial.zero()
    for i in range(m):
        D = D + x1[i] * x2[i]
        for j in range(i):
            Oa = Oa + x1[i] * x2[j]
            Ob = Ob + x1[j] * x2[i]
    return {"diagonal": D, "iterated_first": Oa, "iterated_second": Ob}


def ito_lhs(spec: ItoSpec, table: GridSymbolTable, cfg: TruncationConfig) -> FockOperator:
    """``[∫R₁♯dS₁][∫R₂♯dS₂]`` as a matrix; independent of any mesh."""
    return (evaluate(integral_polynomial(spec.R1, spec.S1), table, cfg)
            @ evaluate(integral_polynomial(spec.R2, spec.S2), table, cfg))


def ito_lhs_riemann(spec: ItoSpec, table: GridSymbolTable, cfg: TruncationConfig,
                    m: int) -> dict:
    """Product of the integrals plus its mesh-``m`` three-way split, as matrices."""
    parts = riemann_polynomials(spec, table.grid, m)
    out = {k: evaluate(p, table, cfg) for k, p in parts.items()}
    out["lhs"] = ito_lhs(spec, table, cfg)
    return out


def ito_rhs(spec: ItoSpec, table: GridSymbolTable, cfg: TruncationConfig,
            m: int | None = None) -> dict:
    """Iterated-integral approximants at mesh ``m`` and the correction term."""
    check_hypotheses(spec, table)
    m = spec.meshes[-1] if m is None else m
    parts = riemann_polynomials(spec, table.grid, m)
    return {"iterated_first": evaluate(parts["iterated_first"], table, cfg),
            "iterated_second": evaluate(parts["iterated_second"], table, cfg),
            "correction": evaluate(correction_polynomial(spec, table, cfg.q), table, cfg)}


# --------------------------------------------------------------------------- #
# batched kernels
# --------------------------------------------------------------------------- #

def _resize(v: FockVector, cfg: TruncationConfig) -> FockVector:
    """Same vector in a truncation with a different N (higher levels dropped)."""
    levels = list(v.levels[:cfg.N + 1])
    while len(levels) < cfg.N + 1:
        n = len(levels)
        levels.append(np.zeros((cfg.d,) * n + v.batch, dtype=complex))
    return FockVector(cfg, tuple(levels), v.batch)


def _add_cell_axis(v: FockVector, M: int) -> FockVector:
    return FockVector(v.cfg, tuple(np.broadcast_to(x[..., None], x.shape + (M,))
                                   for x in v.levels), v.batch + (M,))


def _start_cells(kind: ProcessKind, C, Dg, hs, v: FockVector) -> FockVector:
    """Apply the cell increments, one per entry of the trailing batch axis."""
    if kind.name == "A*":
        return apply_creation(v, C)
    if kind.name == "A":
        return apply_annihilation(v, C)
    if kind.name == "Lambda":
        return apply_gauge(v, kind.mu, diag=Dg)
    return FockVector(v.cfg, tuple(x * hs for x in v.levels), v.batch)


def _fused_sum(kind: ProcessKind, C, Dg, hs, w: FockVector, cfg_out: TruncationConfig) -> FockVector:
    """``Σ_i S(I_i) w_i``: apply each cell increment and sum out the cell axis."""
    q = cfg_out.q
    batch = w.batch[:-1]
    out = [np.zeros((cfg_out.d,) * n + batch, dtype=complex) for n in range(cfg_out.N + 1)]
    for n, x in enumerate(w.levels):
        if not x.any():
            continue
        if kind.name == "A*":
            if n + 1 <= cfg_out.N:
                out[n + 1] += np.tensordot(C, x, axes=([1], [x.ndim - 1]))
        elif kind.name == "A":
            if n >= 1:
                Cc = C.conj()
                for k in range(n):
                    if q == 0.0 and k > 0:
                        break
                    out[n - 1] += q**k * np.tensordot(Cc, x, axes=([0, 1], [k, x.ndim - 1]))
        elif kind.name == "Lambda":
            if n >= 1:
                acc = np.zeros((cfg_out.d,) * n + batch, dtype=complex)
                for k in range(n):
                    shape = [1] * x.ndim
                    shape[k] = Dg.shape[0]
                    shape[-1] = Dg.shape[1]
                    acc += np.sum(x * Dg.reshape(shape), axis=-1)
                out[n] += kind.mu**n * acc
        else:
            out[n] += np.tensordot(x, hs, axes=([x.ndim - 1], [0]))
    return FockVector(cfg_out, tuple(out), batch)


def _cumsum_exclusive(v: FockVector, reverse: bool = False) -> FockVector:
    """``W_i = Σ_{j<i} V_j`` (or ``Σ_{j>i}`` when ``reverse``) along the cell axis."""
    levels = []
    for x in v.levels:
        out = np.empty(x.shape, dtype=complex)
        if reverse:
            out[..., -1] = 0.0
            np.cumsum(x[..., :0:-1], axis=-1, out=out[..., -2::-1])
        else:
            out[..., 0] = 0.0
            np.cumsum(x[..., :-1], axis=-1, out=out[..., 1:])
        levels.append(out)
    return FockVector(v.cfg, tuple(levels), v.batch)


def _take_cells(v: FockVector, sl: slice) -> FockVector:
    n = len(range(*sl.indices(v.batch[-1])))
    if n == v.batch[-1]:
        return v
    return FockVector(v.cfg, tuple(x[..., sl] for x in v.levels), v.batch[:-1] + (n,))


def _concat_cells(parts, cfg, batch) -> FockVector:
    if len(parts) == 1:
        return parts[0]
    return FockVector(cfg, tuple(np.concatenate([p.levels[n] for p in parts], axis=-1)
                                 for n in range(cfg.N + 1)),
                      batch + (sum(p.batch[-1] for p in parts),))


def _apply(p: Polynomial, table, v: FockVector) -> FockVector:
    """:func:`apply_polynomial` without copies for scalar polynomials."""
    if len(p.terms) == 1 and () in p.terms:
        c = p.terms[()]
        return v if c == 1 else v * c
    return apply_polynomial(p, table, v)


def _accumulate(acc, v):
    return v if acc is None else acc + v


def _increment_word(kind: ProcessKind):
    if kind.name == "A*":
        return (Create("_"),)
    if kind.name == "A":
        return (Annihilate("_"),)
    if kind.name == "Lambda":
        return (Lambda(0.0, "_"),)
    return ()


def _words(p: Polynomial):
    return list(p.terms) or [()]


class BatchedIto:
    """Matrix-free evaluation of the product-formula pieces on a fine grid.

    Parameters
    ----------
    spec : ItoSpec
    table : GridSymbolTable
        Symbols on the fine grid.
    cfg : TruncationConfig
    cap : int
        Highest level allowed for tensors that carry the cell axis.
    """

    def __init__(self, spec: ItoSpec, table: GridSymbolTable, cfg: TruncationConfig,
                 cap: int | None = None):
        if cfg.d != table.d:
            raise ValueError("truncation and grid disagree on d")
        self.spec, self.table, self.cfg = spec, table, cfg
        self.grid = table.grid
        self.cap = cfg.N - 1 if cap is None else cap
        self.hyp = check_hypotheses(spec, table)
        self.X1 = integral_polynomial(spec.R1, spec.S1)
        self.X2 = integral_polynomial(spec.R2, spec.S2)
        self.correction = correction_polynomial(spec, table, cfg.q)
        inc1, inc2 = _increment_word(spec.S1), _increment_word(spec.S2)
        segs = segments(spec)
        g1 = [w for _, B1, _ in segs for _, _, G in B1.terms for w in _words(G)] or [()]
        f1 = [w for _, B1, _ in segs for _, F, _ in B1.terms for w in _words(F)] or [()]
        v2 = [wf + inc2 + wg for _, _, B2 in segs for _, F, G in B2.terms
              for wf in _words(F) for wg in _words(G)] or [inc2]
        self.rise_batched = max(max_rise(g + v) for g in g1 for v in v2)
        full = max(max_rise(f + inc1 + g + v) for f in f1 for g in g1 for v in v2)
        lhs = max((max_rise(w) for w in self.X1.terms), default=0) + \
            max((max_rise(w) for w in self.X2.terms), default=0)
        corr = max((max_rise(w) for w in self.correction.terms), default=0)
        self.rise_all = max(full, lhs, corr, 0)

    def max_source_level(self, cap: int | None = None) -> int:
        cap = self.cap if cap is None else cap
        return min(cap - self.rise_batched, self.cfg.N - self.rise_all)

    def configs(self, L: int, cap: int | None = None):
        cap = self.cap if cap is None else cap
        nb = max(1, min(cap, L + self.rise_batched))
        no = max(1, min(self.cfg.N, L + self.rise_all))
        return self.cfg.with_(N=nb), self.cfg.with_(N=no)

    def _cell_data(self, m: int):
        d = self.grid.d
        per = d // m
        if per * m != d:
            raise ValueError(f"mesh {m} does not divide the fine grid of {d} cells")
        C = np.zeros((d, m), dtype=complex)
        Dg = np.zeros((d, m), dtype=complex)
        for k in range(m):
            C[k * per:(k + 1) * per, k] = math.sqrt(self.grid.h)
            Dg[k * per:(k + 1) * per, k] = 1.0
        hs = np.full(m, self.grid.T_max / m)
        return C, Dg, hs

    def parts(self, psi: FockVector, m: int, which=("diagonal",), cap: int | None = None) -> dict:
        """Apply the requested mesh-``m`` sums to ``psi``.

        ``psi`` may carry batch axes; its nonzero levels must not exceed
        :meth:`max_source_level`.
        """
        L = psi.top_level()
        if L > self.max_source_level(cap):
            raise ValueError(f"source level {L} exceeds the exact batched range "
                             f"{self.max_source_level(cap)}")
        cfg_b, cfg_o = self.configs(max(L, 0), cap)
        spec, table = self.spec, self.table
        C, Dg, hs = self._cell_data(m)
        cells = mesh_cells(spec, self.grid, m)
        psi_b = _resize(psi, cfg_b)
        # runs of consecutive cells sharing bioperators
        groups = []
        for k, (_, B1, B2) in enumerate(cells):
            if groups and groups[-1][1] is B1 and groups[-1][2] is B2:
                groups[-1][0] = slice(groups[-1][0].start, k + 1)
            else:
                groups.append([slice(k, k + 1), B1, B2])
        vparts = []
        for sl, _, B2 in groups:
            M = sl.stop - sl.start
            acc = None
            for c, F, G in B2.terms:
                u = _add_cell_axis(_apply(G, table, psi_b), M)
                u = _start_cells(spec.S2, C[:, sl], Dg[:, sl], hs[sl], u)
                acc = _accumulate(acc, _apply(F * c, table, u))
            vparts.append(acc if acc is not None else FockVector.zeros(cfg_b, psi.batch + (M,)))
        V = _concat_cells(vparts, cfg_b, psi.batch)
        del vparts
        out = {}
        for name in which:
            if name == "diagonal":
                W = V
            elif name == "iterated_first":
                W = _cumsum_exclusive(V)
            elif name == "iterated_second":
                W = _cumsum_exclusive(V, reverse=True)
            else:
                raise ValueError(f"unknown sum {name!r}")
            total = None
            for sl, B1, _ in groups:
                Wk = _take_cells(W, sl)
                for c, F, G in B1.terms:
                    z = _fused_sum(spec.S1, C[:, sl], Dg[:, sl], hs[sl],
                                   _apply(G, table, Wk), cfg_o)
                    total = _accumulate(total, _apply(F * c, table, z))
            out[name] = total if total is not None else FockVector.zeros(cfg_o, psi.batch)
            del W
        return out

    def lhs(self, psi: FockVector) -> FockVector:
        _, cfg_o = self.configs(max(psi.top_level(), 0))
        v = _resize(psi, cfg_o)
        return apply_polynomial(self.X1, self.table, apply_polynomial(self.X2, self.table, v))

    def apply_correction(self, psi: FockVector) -> FockVector:
        _, cfg_o = self.configs(max(psi.top_level(), 0))
        return apply_polynomial(self.correction, self.table, _resize(psi, cfg_o))


# --------------------------------------------------------------------------- #
# residual metrics
# --------------------------------------------------------------------------- #

def random_fock_vector(cfg: TruncationConfig, levels, rng: np.random.Generator) -> FockVector:
    """Gaussian vector on the given levels, normalized in the q-norm."""
    lv = []
    for n in range(cfg.N + 1):
        shape = (cfg.d,) * n
        if n in levels:
            lv.append(rng.standard_normal(shape) + 1j * rng.standard_normal(shape))
        else:
            lv.append(np.zeros(shape, dtype=complex))
    v = FockVector(cfg, tuple(lv))
    return v * (1.0 / float(q_norms(v)))


def restricted_q_norm(basis: FockVector, image: FockVector) -> float:
    """q-norm of the operator ``basis_b ↦ image_b`` on the span of ``basis``."""
    def gram(v):
        pv = apply_P(v)
        g = 0.0
        for n, (x, y) in enumerate(zip(v.levels, pv.levels)):
            a = x.reshape(-1, x.shape[-1]) if n else x.reshape(1, -1)
            b = y.reshape(-1, y.shape[-1]) if n else y.reshape(1, -1)
            g = g + a.conj().T @ b
        return (g + np.conj(g).T) / 2

    w = scipy.linalg.eigh(gram(image), gram(basis), eigvals_only=True)
    return float(np.sqrt(max(w[-1], 0.0)))


def q_inner_batched(phi: FockVector, psi: FockVector) -> complex:
    """``⟨φ, Pψ⟩`` for unbatched vectors possibly living in different truncations."""
    pp = apply_P(psi)
    return complex(sum(np.vdot(x, y) for x, y in zip(phi.levels, pp.levels)))


def fit_slope(meshes, residuals) -> float | None:
    """Least-squares slope of log residual against log mesh count."""
    pts = [(math.log(m), math.log(r)) for m, r in zip(meshes, residuals) if r > 0]
    if len(pts) < 2:
        return None
    x, y = np.array(pts).T
    return float(np.polyfit(x, y, 1)[0])


def nonincreasing(values, factor: float = 1.0, floor: float = 1e-12) -> bool:
    """``v[k+1] ≤ factor·v[k]`` for consecutive entries, ignoring values below ``floor``."""
    return all(b <= factor * a * (1 + 1e-9) or b <= floor for a, b in zip(values, values[1:]))


@dataclass
class ItoReport:
    spec: dict
    rule: str
    metric: str
    meshes: list
    residuals_opnorm: list
    residuals_vec: list
    residuals_weak: list
    identity_defect: list
    iterated_first_change: list
    iterated_second_change: list
    source_levels_op: int | None
    source_levels_vec: int
    hypotheses: dict
    slope: float | None = None
    monotone: bool = False
    below_tolerance: bool = False
    verdict: str = "fail"
    extra: dict = field(default_factory=dict)

    @property
    def primary(self) -> list:
        if self.metric == "op" and self.residuals_opnorm and self.residuals_opnorm[0] is not None:
            return self.residuals_opnorm
        if self.metric == "weak":
            return [max(r) for r in self.residuals_weak]
        return [max(r) for r in self.residuals_vec]

    def finalize(self, tolerance: float) -> "ItoReport":
        prim = self.primary
        self.slope = fit_slope(self.meshes, prim)
        self.monotone = nonincreasing(prim, factor=2.0)
        self.below_tolerance = prim[-1] < tolerance
        self.verdict = "pass" if (self.monotone and self.below_tolerance) else "fail"
        return self

    def to_dict(self) -> dict:
        return {"schema_version": SCHEMA_VERSION, "spec": self.spec, "rule": self.rule,
                "metric": self.metric, "meshes": self.meshes,
                "residuals_opnorm": self.residuals_opnorm, "residuals_vec": self.residuals_vec,
                "residuals_weak": self.residuals_weak, "identity_defect": self.identity_defect,
                "iterated_first_change": self.iterated_first_change,
                "iterated_second_change": self.iterated_second_change,
                "source_levels_op": self.source_levels_op,
                "source_levels_vec": self.source_levels_vec, "hypotheses": self.hypotheses,
                "slope": self.slope, "monotone": self.monotone,
                "below_tolerance": self.below_tolerance, "verdict": self.verdict,
                "extra": self.extra}

    def csv_rows(self) -> list:
        rows = [("mesh", "residual_op", "residual_vec_max", "residual_weak_max")]
        for k, m in enumerate(self.meshes):
            op = self.residuals_opnorm[k] if self.residuals_opnorm else None
            rows.append((m, "" if op is None else repr(op), repr(max(self.residuals_vec[k])),
                         repr(max(self.residuals_weak[k]))))
        return rows


def verify_ito(spec: ItoSpec, table: GridSymbolTable, cfg: TruncationConfig,
               op_level: int = 1, vec_level: int = 2, iterated: bool = True,
               op_cap: int = 2) -> ItoReport:
    """Refinement study of the diagonal sum against the correction term.

    Operator-norm residuals use the exact compression to source levels
    ``≤ op_level``; vector and matrix-element residuals use seeded random
    test vectors on levels ``≤ vec_level``. Both level bounds are lowered when
    the batched sums would leave their exact range.
    """
    eng = BatchedIto(spec, table, cfg)
    rng = np.random.default_rng(spec.seed)
    Lv = min(vec_level, eng.max_source_level(), max(0, eng.cap - eng.rise_all))
    if Lv < 0:
        raise HypothesisError("truncation too small: no source level is exact for this spec")
    Lo = min(op_level, eng.max_source_level(op_cap))
    _, cfg_v = eng.configs(Lv)
    tests = [random_fock_vector(cfg.with_(N=max(1, Lv)), range(Lv + 1), rng)
             for _ in range(spec.n_test_vectors)]
    cfg_cap = cfg.with_(N=max(1, eng.cap))
    probes = [random_fock_vector(cfg_cap, range(eng.cap + 1), rng)
              for _ in range(spec.n_test_vectors)]
    meshes = list(spec.meshes)
    n = len(meshes)
    res_vec = [[0.0] * len(tests) for _ in meshes]
    res_weak = [[0.0] * len(tests) for _ in meshes]
    ident = [None] * n
    it1 = [None] * n
    it2 = [None] * n
    which = ("diagonal", "iterated_first", "iterated_second") if iterated else ("diagonal",)
    for t, psi in enumerate(tests):
        corr = eng.apply_correction(psi)
        lhs = eng.lhs(psi) if (iterated and t == 0) else None
        finest = None
        for k in reversed(range(n)):
            parts = eng.parts(psi, meshes[k], which=which)
            diff = parts["diagonal"] - corr
            res_vec[k][t] = float(q_norms(diff))
            res_weak[k][t] = max(abs(q_inner_batched(_resize(ph, diff.cfg), diff))
                                 for ph in probes)
            if iterated and t == 0:
                total = parts["diagonal"] + parts["iterated_first"] + parts["iterated_second"]
                ident[k] = float(q_norms(lhs - total))
                if finest is None:
                    finest = (parts["iterated_first"], parts["iterated_second"])
                it1[k] = float(q_norms(parts["iterated_first"] - finest[0]))
                it2[k] = float(q_norms(parts["iterated_second"] - finest[1]))
            del parts, diff
    res_op = [None] * n
    if Lo >= 0:
        basis = FockVector.basis(cfg.with_(N=max(1, Lo)), range(Lo + 1))
        corr = eng.apply_correction(basis)
        for k, m in enumerate(meshes):
            D = eng.parts(basis, m, which=("diagonal",), cap=op_cap)["diagonal"]
            res_op[k] = restricted_q_norm(basis, D - corr)
    report = ItoReport(spec=spec.echo(), rule=correction_rule(spec.S1, spec.S2),
                       metric=residual_metric(spec.S1, spec.S2), meshes=meshes,
                       residuals_opnorm=res_op if Lo >= 0 else [],
                       residuals_vec=res_vec, residuals_weak=res_weak, identity_defect=ident,
                       iterated_first_change=it1, iterated_second_change=it2,
                       source_levels_op=Lo if Lo >= 0 else None, source_levels_vec=Lv,
                       hypotheses=eng.hyp,
                       extra={"fine_cells": table.d, "N": cfg.N, "q": cfg.q,
                              "T_max": table.grid.T_max, "output_levels": cfg_v.N})
    return report.finalize(spec.tolerance)


_SPEC_FIELDS = ("name", "S1", "S2", "R1", "R2", "meshes", "n_test_vectors", "tolerance")


def ito_spec_from_dict(data: dict, seed: int) -> ItoSpec:
    """Build a spec from parsed TOML.

    Every field is required except ``kw3_form``, which only matters for
    ``Λ·Λ`` specs and defaults to the table form.
    """
    from .sde import biprocess_from_records

    missing = [k for k in _SPEC_FIELDS if k not in data]
    if missing:
        raise ValueError(f"Itô spec is missing fields: {', '.join(missing)}")
    unknown = sorted(set(data) - set(_SPEC_FIELDS) - {"kw3_form"})
    if unknown:
        raise ValueError(f"Itô spec has unknown fields: {', '.join(unknown)}")
    R = {}
    for key in ("R1", "R2"):
        try:
            R[key] = biprocess_from_records(data[key])
        except ValueError as exc:
            raise ValueError(f"{key}: {exc}") from None
    return ItoSpec(R["R1"], ProcessKind.parse(data["S1"]), R["R2"], ProcessKind.parse(data["S2"]),
                   tuple(data["meshes"]), int(data["n_test_vectors"]), float(data["tolerance"]),
                   int(seed), str(data["name"]), str(data.get("kw3_form", "table")))


def load_ito_spec(path, seed: int) -> ItoSpec:
    from ._toml import load_toml

    return ito_spec_from_dict(load_toml(path), seed)


# --------------------------------------------------------------------------- #
# composite processes
# --------------------------------------------------------------------------- #

@dataclass(frozen=True)
class CompositeProcess:
    """``B = A + A*`` or ``P_{μ,l} = √l(γ_μA + A*γ_μ) + Λ_μ/μ + l·t·γ_μ``."""

    kind: str
    mu: complex = 0j
    l: float = 1.0

    def __post_init__(self):
        if self.kind not in ("brownian", "poisson"):
            raise ValueError(f"unknown composite process {self.kind!r}")
        object.__setattr__(self, "mu", complex(self.mu))
        if self.kind == "poisson":
            if not 0 < abs(self.mu) < 1:
                raise ValueError(f"Poisson process needs 0 < |mu| < 1, got {self.mu}")
            if not self.l > 0:
                raise ValueError(f"Poisson intensity must be positive, got {self.l}")

    @classmethod
    def brownian(cls) -> "CompositeProcess":
        return cls("brownian")

    @classmethod
    def poisson(cls, mu, l) -> "CompositeProcess":
        return cls("poisson", mu, l)

    def components(self) -> list:
        """``[(bioperator, basic process)]`` whose integrals sum to the increment."""
        one = Polynomial.identity()
        if self.kind == "brownian":
            return [(Bioperator.identity(), ProcessKind("A")),
                    (Bioperator.identity(), ProcessKind("A*"))]
        g = Polynomial.word(Gamma(self.mu))
        s = math.sqrt(self.l)
        return [(Bioperator(((s, g, one),)), ProcessKind("A")),
                (Bioperator(((s, one, g),)), ProcessKind("A*")),
                (Bioperator(((1.0 / self.mu, one, one),)), ProcessKind("Lambda", self.mu)),
                (Bioperator(((self.l, g, one),)), ProcessKind("T"))]

    def increment_polynomial(self, a: float, b: float) -> Polynomial:
        out = Polynomial.zero()
        for B, kind in self.components():
            out = out + sharp(B, kind.increment(a, b))
        return out


def composite_increment(c: CompositeProcess, a: float, b: float, table: GridSymbolTable,
                        cfg: TruncationConfig) -> FockOperator:
    table.grid.cells(a, b)
    return evaluate(c.increment_polynomial(a, b), table, cfg)


def composite_product_target(c1: CompositeProcess, c2: CompositeProcess,
                             a: float, b: float) -> Polynomial:
    """Right-hand entry of the composite table for ``dX₁·dX₂`` over ``(a, b]``."""
    if c1.kind == c2.kind == "brownian":
        return Polynomial.scalar(b - a)
    if c1.kind == c2.kind == "poisson" and math.isclose(c1.l, c2.l):
        return CompositeProcess.poisson(c1.mu * c2.mu, c1.l).increment_polynomial(a, b)
    raise ValueError("the table covers Brownian·Brownian and Poisson·Poisson of equal intensity")


def composite_specs(c1: CompositeProcess, c2: CompositeProcess, a: float, b: float,
                    **kw) -> list:
    """Basic product-formula specs whose sum is ``[∫dX₁][∫dX₂]`` over ``(a, b]``."""
    out = []
    for (B1, k1), (B2, k2) in itertools.product(c1.components(), c2.components()):
        out.append(ItoSpec(SimpleBiprocess.constant(B1, a, b), k1,
                           SimpleBiprocess.constant(B2, a, b), k2, **kw))
    return out


def composite_correction(c1, c2, a, b, table: GridSymbolTable, q: float) -> Polynomial:
    out = Polynomial.zero()
    for spec in composite_specs(c1, c2, a, b):
        out = out + correction_polynomial(spec, table, q)
    return out


def verify_composite(c1: CompositeProcess, c2: CompositeProcess, a: float, b: float,
                     table: GridSymbolTable, cfg: TruncationConfig, meshes=(4, 8, 16, 32, 64),
                     n_test_vectors: int = 5, seed: int = 0, vec_level: int = 2) -> dict:
    """Diagonal sum of ``dX₁·dX₂`` against the composite table entry."""
    specs = composite_specs(c1, c2, a, b, meshes=tuple(meshes), seed=seed)
    engines = [BatchedIto(s, table, cfg) for s in specs]
    target = composite_product_target(c1, c2, a, b)
    q = cfg.q
    corr = composite_correction(c1, c2, a, b, table, q)
    table_defect = (normal_order(corr, table, q) - normal_order(target, table, q)).max_abs_coeff()
    L = min([vec_level] + [e.max_source_level() for e in engines])
    no = max(1, min(cfg.N, L + max(e.rise_all for e in engines)))
    cfg_o = cfg.with_(N=no)
    rng = np.random.default_rng(seed)
    tests = [random_fock_vector(cfg.with_(N=max(1, L)), range(L + 1), rng)
             for _ in range(n_test_vectors)]
    res = [[0.0] * len(tests) for _ in meshes]
    for t, psi in enumerate(tests):
        tgt = apply_polynomial(target, table, _resize(psi, cfg_o))
        for k, m in enumerate(meshes):
            total = FockVector.zeros(cfg_o)
            for e in engines:
                total = total + _resize(e.parts(psi, m)["diagonal"], cfg_o)
            res[k][t] = float(q_norms(total - tgt))
    worst = [max(r) for r in res]
    return {"meshes": list(meshes), "residuals_vec": res, "table_defect": table_defect,
            "slope": fit_slope(meshes, worst), "monotone": nonincreasing(worst, factor=2.0),
            "source_levels_vec": L}


# --------------------------------------------------------------------------- #
# vacuum moments
# --------------------------------------------------------------------------- #

def pair_partitions(n_points: int):
    """All perfect matchings of ``range(n_points)`` as lists of pairs."""
    if n_points % 2:
        return
    if n_points == 0:
        yield []
        return

    def rec(rest):
        if not rest:
            yield []
            return
        first = rest[0]
        for k in range(1, len(rest)):
            pair = (first, rest[k])
            for tail in rec(rest[1:k] + rest[k + 1:]):
                yield [pair] + tail

    yield from rec(list(range(n_points)))


def crossings(pairing) -> int:
    return sum(1 for (a, b), (c, d) in itertools.combinations(pairing, 2)
               if a < c < b < d or c < a < d < b)


def pair_partition_moment(n: int, q: float, t: float = 1.0) -> float:
    """``Σ_π q^{cr(π)} t^n`` over pair partitions of ``2n`` points."""
    return sum(q ** crossings(p) for p in pair_partitions(2 * n)) * t**n


def brownian_moments(cfg: TruncationConfig, t: float, n_max: int) -> list:
    """``τ(B(t)^{2n})`` for ``n = 0..n_max`` from matrix powers.

    Uses a one-dimensional one-particle space carrying ``χ_(0,t)``, which is
    all the vacuum moments of ``B(t)`` see.
    """
    from .fock_core import TruncationError, vacuum_state
    from .fock_ops import annihilation, creation

    if 2 * n_max > cfg.N:
        raise TruncationError(f"need N ≥ 2·n_max = {2 * n_max}, got N={cfg.N}")
    c1 = cfg.with_(d=1)
    chi = np.array([math.sqrt(t)])
    B = annihilation(c1, chi).matrix + creation(c1, chi).matrix
    out = []
    power = np.eye(c1.dim, dtype=complex)
    for n in range(n_max + 1):
        out.append(vacuum_state(power).real)
        power = power @ B @ B
    return out
