"""Creation, annihilation, gauge and deformed-identity operators.

Two representations live here. :class:`FockOperator` is a dense matrix on the
truncation, used at desk scale where norms and adjoints are computed exactly.
The ``apply_*`` kernels act on :class:`~qfock.fock_core.FockVector` level
tensors without ever forming a matrix; they also accept one-particle data with
a trailing batch axis (``phi`` of shape ``(d, B)``), pairing batch entry ``b``
of the operator with batch entry ``b`` of the vector.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np
import scipy.linalg

from .fock_core import (FockVector, TruncationConfig, TruncationError, _symmetrizer_matrix,
                        apply_P, symmetrizer_roots)


class ParameterError(ValueError):
    """A deformation parameter or one-particle operator is out of bounds."""


def _kron_all(*mats):
    return functools.reduce(np.kron, mats, np.ones((1, 1), dtype=complex))


def _eye(d, n):
    return np.eye(d**n, dtype=complex)


@dataclass(frozen=True, eq=False)
class FockOperator:
    """Dense matrix on the truncation.

    ``exactness`` is the largest level L such that the action on levels ≤ L
    equals the untruncated operator; ``rise`` is the largest level increase any
    component performs (negative for pure lowering operators).
    """

    cfg: TruncationConfig
    matrix: np.ndarray
    exactness: int
    rise: int = 0

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=complex)
        if m.shape != (self.cfg.dim, self.cfg.dim):
            raise TruncationError(f"matrix shape {m.shape} does not match dim {self.cfg.dim}")
        object.__setattr__(self, "matrix", m)
        object.__setattr__(self, "exactness", min(int(self.exactness), self.cfg.N))

    @classmethod
    def identity(cls, cfg: TruncationConfig) -> "FockOperator":
        return cls(cfg, np.eye(cfg.dim, dtype=complex), cfg.N, 0)

    @classmethod
    def zero(cls, cfg: TruncationConfig) -> "FockOperator":
        return cls(cfg, np.zeros((cfg.dim, cfg.dim), dtype=complex), cfg.N, -cfg.N)

    def __matmul__(self, other):
        if isinstance(other, FockOperator):
            exact = min(other.exactness, self.exactness - other.rise, self.cfg.N)
            return FockOperator(self.cfg, self.matrix @ other.matrix, exact, self.rise + other.rise)
        if isinstance(other, FockVector):
            return FockVector.from_flat(self.cfg, self.matrix @ other.flat())
        return NotImplemented

    def __add__(self, other):
        if not isinstance(other, FockOperator):
            return NotImplemented
        return FockOperator(self.cfg, self.matrix + other.matrix,
                            min(self.exactness, other.exactness), max(self.rise, other.rise))

    def __sub__(self, other):
        return self + (-1) * other

    def __mul__(self, c):
        return FockOperator(self.cfg, c * self.matrix, self.exactness, self.rise)

    __rmul__ = __mul__

    def __neg__(self):
        return -1 * self

    def block(self, m: int, n: int) -> np.ndarray:
        """Matrix block mapping level ``n`` into level ``m``."""
        return self.matrix[self.cfg.level_slice(m), self.cfg.level_slice(n)]

    def exact_indices(self) -> np.ndarray:
        return np.arange(self.cfg.offset(self.exactness + 1)) if self.exactness >= 0 \
            else np.arange(0)


# --------------------------------------------------------------------------- #
# dense generators
# --------------------------------------------------------------------------- #

def _as_vector(cfg, phi):
    phi = np.asarray(phi, dtype=complex)
    if phi.shape != (cfg.d,):
        raise TruncationError(f"one-particle vector must have shape ({cfg.d},), got {phi.shape}")
    return phi


def _as_operator(cfg, T):
    T = np.asarray(T, dtype=complex)
    if T.shape != (cfg.d, cfg.d):
        raise TruncationError(f"one-particle operator must be {cfg.d}x{cfg.d}, got {T.shape}")
    return T


def creation(cfg: TruncationConfig, phi) -> FockOperator:
    phi = _as_vector(cfg, phi)
    m = np.zeros((cfg.dim, cfg.dim), dtype=complex)
    col = phi[:, None]
    for n in range(cfg.N):
        m[cfg.level_slice(n + 1), cfg.level_slice(n)] = np.kron(col, _eye(cfg.d, n))
    return FockOperator(cfg, m, cfg.N - 1, 1)


def annihilation(cfg: TruncationConfig, phi) -> FockOperator:
    phi = _as_vector(cfg, phi)
    d, q = cfg.d, cfg.q
    row = phi.conj()[None, :]
    m = np.zeros((cfg.dim, cfg.dim), dtype=complex)
    for n in range(1, cfg.N + 1):
        blk = sum(q ** (i - 1) * _kron_all(_eye(d, i - 1), row, _eye(d, n - i))
                  for i in range(1, n + 1))
        m[cfg.level_slice(n - 1), cfg.level_slice(n)] = blk
    return FockOperator(cfg, m, cfg.N, -1)


def check_gauge_mu(mu) -> complex:
    mu = complex(mu)
    if not abs(mu) < 1.0:
        raise ParameterError(f"gauge operator needs |mu| < 1, got {mu}")
    return mu


def check_gamma_mu(mu) -> complex:
    mu = complex(mu)
    if abs(mu) > 1.0 + 1e-15:
        raise ParameterError(f"gamma needs |mu| <= 1, got {mu}")
    return mu


def gauge(cfg: TruncationConfig, mu, T) -> FockOperator:
    mu = check_gauge_mu(mu)
    T = _as_operator(cfg, T)
    d = cfg.d
    m = np.zeros((cfg.dim, cfg.dim), dtype=complex)
    for n in range(1, cfg.N + 1):
        blk = sum(_kron_all(_eye(d, i - 1), T, _eye(d, n - i)) for i in range(1, n + 1))
        m[cfg.level_slice(n), cfg.level_slice(n)] = mu**n * blk
    return FockOperator(cfg, m, cfg.N, 0)


def gamma(cfg: TruncationConfig, mu) -> FockOperator:
    mu = check_gamma_mu(mu)
    diag = np.concatenate([np.full(cfg.d**n, mu**n, dtype=complex) for n in range(cfg.N + 1)])
    return FockOperator(cfg, np.diag(diag), cfg.N, 0)


# --------------------------------------------------------------------------- #
# matrix-free kernels
# --------------------------------------------------------------------------- #

def _batched(arr, n, pos, nbatch):
    """Reshape one-particle data ``(d,)`` or ``(d, B)`` to broadcast against a
    level-``n`` tensor (``nbatch`` trailing batch axes) at tensor axis ``pos``."""
    shape = [1] * (n + nbatch)
    shape[pos] = arr.shape[0]
    if arr.ndim == 2:
        shape[-1] = arr.shape[1]
    return arr.reshape(shape)


def apply_creation(v: FockVector, phi) -> FockVector:
    phi = np.asarray(phi, dtype=complex)
    cfg, nb = v.cfg, len(v.batch)
    out = [np.zeros((cfg.d,) * n + v.batch, dtype=complex) for n in range(cfg.N + 1)]
    for n in range(cfg.N):
        x = v.levels[n]
        if not x.any():
            continue
        out[n + 1] = _batched(phi, n + 1, 0, nb) * x[None]
    return FockVector(cfg, tuple(out), v.batch)


def apply_annihilation(v: FockVector, phi) -> FockVector:
    phi = np.asarray(phi, dtype=complex).conj()
    cfg, nb, q = v.cfg, len(v.batch), v.cfg.q
    out = [np.zeros((cfg.d,) * n + v.batch, dtype=complex) for n in range(cfg.N + 1)]
    for n in range(1, cfg.N + 1):
        x = v.levels[n]
        if not x.any():
            continue
        acc = out[n - 1]
        for i in range(n):
            if q == 0.0 and i > 0:
                break
            w = q**i
            if phi.ndim == 1:
                acc += w * np.tensordot(phi, x, axes=(0, i))
            else:
                acc += w * np.sum(_batched(phi, n, i, nb) * x, axis=i)
    return FockVector(cfg, tuple(out), v.batch)


def _is_diagonal(T) -> bool:
    return T.ndim == 2 and T.shape[0] == T.shape[1] and not np.any(T - np.diag(np.diagonal(T)))


def apply_gauge(v: FockVector, mu, T=None, diag=None) -> FockVector:
    """``λ_μ(T)``; pass ``diag`` (shape ``(d,)`` or ``(d, B)``) for diagonal T."""
    cfg, nb = v.cfg, len(v.batch)
    if diag is None:
        T = np.asarray(T, dtype=complex)
        if _is_diagonal(T):
            diag = np.diagonal(T).copy()
    out = [np.zeros((cfg.d,) * n + v.batch, dtype=complex) for n in range(cfg.N + 1)]
    for n in range(1, cfg.N + 1):
        x = v.levels[n]
        if not x.any():
            continue
        acc = out[n]
        for i in range(n):
            if diag is not None:
                acc += _batched(np.asarray(diag, dtype=complex), n, i, nb) * x
            else:
                acc += np.moveaxis(np.tensordot(T, x, axes=(1, i)), 0, i)
        acc *= mu**n
    return FockVector(cfg, tuple(out), v.batch)


def apply_gamma(v: FockVector, mu) -> FockVector:
    return FockVector(v.cfg, tuple(mu**n * x for n, x in enumerate(v.levels)), v.batch)


def restrict_levels(v: FockVector, levels) -> FockVector:
    keep = set(levels)
    return FockVector(v.cfg, tuple(x if n in keep else np.zeros_like(x)
                                   for n, x in enumerate(v.levels)), v.batch)


# --------------------------------------------------------------------------- #
# adjoints and norms
# --------------------------------------------------------------------------- #

def q_adjoint(cfg: TruncationConfig, X: FockOperator) -> FockOperator:
    """Adjoint in the q-metric, ``P^{-1} X^H P`` (P is block diagonal)."""
    P = scipy.linalg.block_diag(*[_symmetrizer_matrix(cfg.d, n, cfg.q) for n in range(cfg.N + 1)])
    try:
        adj = scipy.linalg.solve(P, X.matrix.conj().T @ P, assume_a="pos")
    except np.linalg.LinAlgError as exc:  # cannot happen for |q| < 1
        raise RuntimeError("q-symmetrizer is singular") from exc
    return FockOperator(cfg, adj, X.exactness, X.rise)


def _root_blocks(cfg):
    roots = [symmetrizer_roots(cfg, n) for n in range(cfg.N + 1)]
    return (scipy.linalg.block_diag(*[r for r, _ in roots]),
            scipy.linalg.block_diag(*[ir for _, ir in roots]))


def _level_indices(cfg, levels):
    return np.concatenate([np.arange(cfg.offset(n), cfg.offset(n) + cfg.d**n) for n in levels]) \
        if levels else np.arange(0)


def q_operator_norm(cfg: TruncationConfig, X, source_levels=None, target_levels=None) -> float:
    """Operator norm of ``X`` in the q-metric.

    ``X`` may be a :class:`FockOperator` or a bare matrix. With
    ``source_levels``/``target_levels`` the norm of the compression
    ``Π_target X Π_source`` is returned.
    """
    m = X.matrix if isinstance(X, FockOperator) else np.asarray(X, dtype=complex)
    root, inv_root = _root_blocks(cfg)
    t = root @ m @ inv_root
    if source_levels is not None:
        t = t[:, _level_indices(cfg, list(source_levels))]
    if target_levels is not None:
        t = t[_level_indices(cfg, list(target_levels)), :]
    if t.size == 0:
        return 0.0
    return float(np.linalg.norm(t, 2))


def block_norm(cfg: TruncationConfig, X, n: int, m: int) -> float:
    """``‖X‖_{H^{⊗n} → H^{⊗m}}`` in the q-metric."""
    mat = X.matrix if isinstance(X, FockOperator) else np.asarray(X, dtype=complex)
    rn_root, rn_inv = symmetrizer_roots(cfg, n)
    rm_root, _ = symmetrizer_roots(cfg, m)
    blk = mat[cfg.level_slice(m), cfg.level_slice(n)]
    if not blk.any():
        return 0.0
    return float(np.linalg.norm(rm_root @ blk @ rn_inv, 2))


class NormResult(NamedTuple):
    value: float
    exactness: int
    N: int


def exact_norm(cfg: TruncationConfig, X: FockOperator) -> NormResult:
    """q-norm of ``X`` restricted to its exact region, tagged for sweeps over N."""
    return NormResult(q_operator_norm(cfg, X, source_levels=range(X.exactness + 1)),
                      X.exactness, cfg.N)


def lanczos_q_norm(cfg: TruncationConfig, apply: Callable, apply_adj: Callable,
                   source_levels, rng: np.random.Generator, iters: int = 25,
                   start: FockVector | None = None) -> float:
    """Matrix-free q-metric operator norm of ``X`` on the given source levels.

    Lanczos on ``X^† X``, which is self-adjoint for the q-inner product; both
    ``apply`` and ``apply_adj`` map a FockVector to a FockVector. The largest
    Ritz value is a lower bound on ``‖X‖²`` that is tight after a few dozen
    steps for the operators used here.
    """
    levels = sorted(source_levels)
    if start is None:
        start = FockVector(cfg, tuple(
            (rng.standard_normal((cfg.d,) * n) + 1j * rng.standard_normal((cfg.d,) * n))
            if n in levels else np.zeros((cfg.d,) * n, dtype=complex)
            for n in range(cfg.N + 1)))

    def ip(a, b):
        pb = apply_P(b)
        return complex(sum(np.vdot(x, y) for x, y in zip(a.levels, pb.levels)))

    def op(x):
        return restrict_levels(apply_adj(apply(x)), levels)

    beta0 = np.sqrt(ip(start, start).real)
    if beta0 == 0.0:
        return 0.0
    basis = [start * (1.0 / beta0)]
    alphas, betas = [], []
    for _ in range(iters):
        w = op(basis[-1])
        alpha = ip(basis[-1], w).real
        alphas.append(alpha)
        for b in basis:  # full reorthogonalization
            w = w - ip(b, w) * b
        beta = np.sqrt(max(ip(w, w).real, 0.0))
        if beta < 1e-12 * max(1.0, abs(alpha)):
            break
        betas.append(beta)
        basis.append(w * (1.0 / beta))
    k = len(alphas)
    tri = np.diag(alphas) + np.diag(betas[:k - 1], 1) + np.diag(betas[:k - 1], -1)
    top = float(np.linalg.eigvalsh(tri)[-1])
    return float(np.sqrt(max(top, 0.0)))


# --------------------------------------------------------------------------- #
# second quantization
# --------------------------------------------------------------------------- #

def second_quantization(cfg1: TruncationConfig, cfg2: TruncationConfig, U) -> np.ndarray:
    """Matrix of ``Γ(U)``, mapping the cfg1 truncation into the cfg2 truncation."""
    U = np.asarray(U, dtype=complex)
    if U.shape != (cfg2.d, cfg1.d):
        raise ParameterError(f"U must be {cfg2.d}x{cfg1.d}, got {U.shape}")
    if not np.allclose(U.conj().T @ U, np.eye(cfg1.d), atol=1e-12):
        raise ParameterError("U is not an isometry")
    if cfg1.q != cfg2.q or cfg2.N < cfg1.N:
        raise ParameterError("target truncation must share q and reach at least the same N")
    g = np.zeros((cfg2.dim, cfg1.dim), dtype=complex)
    power = np.ones((1, 1), dtype=complex)
    for n in range(cfg1.N + 1):
        g[cfg2.level_slice(n), cfg1.level_slice(n)] = power
        power = np.kron(U, power)
    return g


def extend_operator(cfg1, cfg2, U, X: FockOperator) -> FockOperator:
    """``Γ(U) X Γ(U)*``. Γ(U) commutes with P, so its q-adjoint is its free adjoint."""
    g = second_quantization(cfg1, cfg2, U)
    return FockOperator(cfg2, g @ X.matrix @ g.conj().T, X.exactness, X.rise)
