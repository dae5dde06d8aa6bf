"""Truncated q-deformed Fock space.

The space is ``⊕_{n=0..N} H^{⊗n}`` with ``dim H = d``. Level ``n`` is stored as a
complex tensor of shape ``(d,)*n``; flattening in C order gives the
lexicographic simple-tensor basis, and levels are stacked in ascending order.
Any number of trailing batch axes may follow the ``n`` tensor axes, which is how
whole operator matrices are pushed through the matrix-free kernels.
"""

from __future__ import annotations

import functools
import itertools
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg


class TruncationError(ValueError):
    """A level or parameter lies outside the truncation."""


@dataclass(frozen=True)
class TruncationConfig:
    d: int
    N: int
    q: float

    def __post_init__(self):
        if int(self.d) != self.d or self.d < 1:
            raise TruncationError(f"d must be a positive integer, got {self.d!r}")
        if int(self.N) != self.N or self.N < 1:
            raise TruncationError(f"N must be a positive integer, got {self.N!r}")
        if not isinstance(self.q, (int, float, np.floating)) or not -1.0 < self.q < 1.0:
            raise TruncationError(f"q must be real with |q| < 1, got {self.q!r}")
        object.__setattr__(self, "q", float(self.q))

    def level_dim(self, n: int) -> int:
        return self.d**n

    @property
    def dim(self) -> int:
        return sum(self.d**n for n in range(self.N + 1))

    def offset(self, n: int) -> int:
        """Row index where level ``n`` starts in the flat layout."""
        return sum(self.d**k for k in range(n))

    def level_slice(self, n: int) -> slice:
        start = self.offset(n)
        return slice(start, start + self.d**n)

    def check_level(self, n: int) -> None:
        if not 0 <= n <= self.N:
            raise TruncationError(f"level {n} outside 0..{self.N}")

    def with_(self, **changes) -> "TruncationConfig":
        return TruncationConfig(**{**self.__dict__, **changes})


@dataclass(frozen=True, eq=False)
class FockVector:
    """Per-level coefficient tensors, optionally with trailing batch axes."""

    cfg: TruncationConfig
    levels: tuple
    batch: tuple = field(default=())

    def __post_init__(self):
        levels = tuple(np.asarray(x, dtype=complex) for x in self.levels)
        if len(levels) != self.cfg.N + 1:
            raise TruncationError(
                f"expected {self.cfg.N + 1} levels, got {len(levels)}")
        for n, x in enumerate(levels):
            want = (self.cfg.d,) * n + tuple(self.batch)
            if x.shape != want:
                raise TruncationError(f"level {n} has shape {x.shape}, expected {want}")
        object.__setattr__(self, "levels", levels)
        object.__setattr__(self, "batch", tuple(self.batch))

    @classmethod
    def zeros(cls, cfg: TruncationConfig, batch: tuple = ()) -> "FockVector":
        return cls(cfg, tuple(np.zeros((cfg.d,) * n + tuple(batch), dtype=complex)
                              for n in range(cfg.N + 1)), tuple(batch))

    @classmethod
    def vacuum(cls, cfg: TruncationConfig) -> "FockVector":
        v = cls.zeros(cfg)
        v.levels[0][()] = 1.0
        return v

    @classmethod
    def from_flat(cls, cfg: TruncationConfig, flat) -> "FockVector":
        flat = np.asarray(flat, dtype=complex)
        if flat.shape[0] != cfg.dim:
            raise TruncationError(f"flat vector has length {flat.shape[0]}, expected {cfg.dim}")
        batch = flat.shape[1:]
        return cls(cfg, tuple(flat[cfg.level_slice(n)].reshape((cfg.d,) * n + batch)
                              for n in range(cfg.N + 1)), batch)

    @classmethod
    def basis(cls, cfg: TruncationConfig, levels=None) -> "FockVector":
        """All basis vectors (of the chosen levels) stacked along one batch axis."""
        levels = range(cfg.N + 1) if levels is None else sorted(levels)
        cols = np.concatenate([np.arange(cfg.offset(n), cfg.offset(n) + cfg.d**n)
                               for n in levels])
        eye = np.zeros((cfg.dim, len(cols)), dtype=complex)
        eye[cols, np.arange(len(cols))] = 1.0
        return cls.from_flat(cfg, eye)

    def flat(self) -> np.ndarray:
        return np.concatenate([x.reshape((-1,) + self.batch) for x in self.levels])

    def level(self, n: int) -> np.ndarray:
        return self.levels[n]

    def top_level(self) -> int:
        """Highest level carrying a nonzero coefficient (-1 for the zero vector)."""
        for n in range(self.cfg.N, -1, -1):
            if np.any(self.levels[n]):
                return n
        return -1

    def _combine(self, other, op):
        if not isinstance(other, FockVector):
            return NotImplemented
        if other.cfg != self.cfg:
            raise TruncationError("vectors belong to different truncations")
        return FockVector(self.cfg, tuple(op(a, b) for a, b in zip(self.levels, other.levels)),
                          np.broadcast_shapes(self.batch, other.batch))

    def __add__(self, other):
        return self._combine(other, np.add)

    def __sub__(self, other):
        return self._combine(other, np.subtract)

    def __mul__(self, c):
        return FockVector(self.cfg, tuple(c * x for x in self.levels), self.batch)

    __rmul__ = __mul__

    def __neg__(self):
        return -1 * self


# --------------------------------------------------------------------------- #
# q-symmetrizers
# --------------------------------------------------------------------------- #

def inversions(perm) -> int:
    return sum(1 for i, j in itertools.combinations(range(len(perm)), 2) if perm[i] > perm[j])


def apply_symmetrizer(x: np.ndarray, n: int, q: float) -> np.ndarray:
    """Apply ``P^(n)`` to the first ``n`` axes of ``x``.

    Uses ``P^(n) = D_n (1 ⊗ P^(n-1))`` where ``D_n = Σ_k q^(k-1) c_k`` and
    ``c_k`` moves the first tensor factor to position ``k``.
    """
    if n <= 1 or q == 0.0:
        return np.array(x, dtype=complex, copy=True)
    # 1 ⊗ P^(n-1): park axis 0 at the back so it rides along as a batch axis
    tail = apply_symmetrizer(np.moveaxis(x, 0, -1), n - 1, q)
    y = np.moveaxis(tail, -1, 0)
    out = np.array(y, dtype=complex, copy=True)
    for k in range(2, n + 1):
        out += q ** (k - 1) * np.moveaxis(y, 0, k - 1)
    return out


def brute_force_symmetrizer(d: int, n: int, q: float) -> np.ndarray:
    """Matrix of ``Σ_σ q^inv(σ) σ`` by enumerating the symmetric group."""
    dim = d**n
    eye = np.eye(dim, dtype=complex).reshape((d,) * n + (dim,))
    out = np.zeros((dim, dim), dtype=complex)
    for perm in itertools.permutations(range(n)):
        out += q ** inversions(perm) * eye.transpose(list(perm) + [n]).reshape(dim, dim)
    return out


@dataclass(frozen=True, eq=False)
class QSymmetrizer:
    n: int
    matrix: np.ndarray


@functools.lru_cache(maxsize=64)
def _symmetrizer_matrix(d: int, n: int, q: float) -> np.ndarray:
    dim = d**n
    eye = np.eye(dim, dtype=complex).reshape((d,) * n + (dim,))
    m = apply_symmetrizer(eye, n, q).reshape(dim, dim)
    m.setflags(write=False)
    return m


def build_symmetrizer(cfg: TruncationConfig, n: int) -> QSymmetrizer:
    cfg.check_level(n)
    return QSymmetrizer(n, _symmetrizer_matrix(cfg.d, n, cfg.q))


def partial_symmetrizer_matrix(d: int, n: int, k: int, q: float) -> np.ndarray:
    """``1 ⊗_k P^(n)`` on ``H^{⊗(n+1)}``: slot ``k+1`` (1-based) stays put."""
    dim = d ** (n + 1)
    if n < k:
        return np.zeros((dim, dim), dtype=complex)
    eye = np.eye(dim, dtype=complex).reshape((d,) * (n + 1) + (dim,))
    fixed_last = np.moveaxis(eye, k, n)
    y = apply_symmetrizer(fixed_last, n, q)
    return np.moveaxis(y, n, k).reshape(dim, dim)


def build_partial_symmetrizer(cfg: TruncationConfig, n: int, k: int) -> np.ndarray:
    if k < 0:
        raise TruncationError(f"slot index k must be >= 0, got {k}")
    if n < 0 or n + 1 > cfg.N:
        raise TruncationError(f"1 ⊗_k P^({n}) acts on level {n + 1} > N={cfg.N}")
    return partial_symmetrizer_matrix(cfg.d, n, k, cfg.q)


@functools.lru_cache(maxsize=64)
def _symmetrizer_roots(d: int, n: int, q: float):
    """(P^{1/2}, P^{-1/2}) for level ``n``."""
    w, v = np.linalg.eigh(_symmetrizer_matrix(d, n, q))
    root = (v * np.sqrt(w)) @ v.conj().T
    inv_root = (v / np.sqrt(w)) @ v.conj().T
    root.setflags(write=False)
    inv_root.setflags(write=False)
    return root, inv_root


def symmetrizer_roots(cfg: TruncationConfig, n: int):
    return _symmetrizer_roots(cfg.d, n, cfg.q)


# --------------------------------------------------------------------------- #
# inner product, state, projections
# --------------------------------------------------------------------------- #

def apply_P(v: FockVector) -> FockVector:
    q = v.cfg.q
    return FockVector(v.cfg, tuple(apply_symmetrizer(x, n, q) for n, x in enumerate(v.levels)),
                      v.batch)


def q_inner(cfg: TruncationConfig, phi: FockVector, psi: FockVector) -> complex:
    """``⟨Φ, PΨ⟩_free``, conjugate-linear in the first argument."""
    if phi.cfg != cfg or psi.cfg != cfg:
        raise TruncationError("vectors do not conform to the truncation")
    if phi.batch or psi.batch:
        raise TruncationError("q_inner expects unbatched vectors")
    ppsi = apply_P(psi)
    return complex(sum(np.vdot(a, b) for a, b in zip(phi.levels, ppsi.levels)))


def q_norms(v: FockVector) -> np.ndarray:
    """q-norms of a (possibly batched) vector, one per batch entry."""
    pv = apply_P(v)
    nd = len(v.batch)
    total = 0.0
    for n, (a, b) in enumerate(zip(v.levels, pv.levels)):
        total = total + np.real(np.sum(a.conj() * b, axis=tuple(range(n))))
    return np.sqrt(np.maximum(total, 0.0)) if nd else float(np.sqrt(max(float(total), 0.0)))


def q_norm(v: FockVector) -> float:
    return float(q_norms(v))


def vacuum_state(X) -> complex:
    """``τ(X) = ⟨Ω, XΩ⟩``; level 0 carries the trivial metric."""
    m = X.matrix if hasattr(X, "matrix") else np.asarray(X)
    return complex(m[0, 0])


def level_projection(cfg: TruncationConfig, j: int):
    from .fock_ops import FockOperator

    cfg.check_level(j)
    m = np.zeros((cfg.dim, cfg.dim), dtype=complex)
    s = cfg.level_slice(j)
    m[s, s] = np.eye(cfg.d**j)
    return FockOperator(cfg, m, cfg.N)


def P_matrix(cfg: TruncationConfig) -> np.ndarray:
    return scipy.linalg.block_diag(*[_symmetrizer_matrix(cfg.d, n, cfg.q)
                                     for n in range(cfg.N + 1)])


# --------------------------------------------------------------------------- #
# sandwich constants
# --------------------------------------------------------------------------- #

def _pencil_extremes(a: np.ndarray, b: np.ndarray) -> tuple[float, float]:
    w = scipy.linalg.eigh(a, b, eigvals_only=True)
    return float(w[0]), float(w[-1])


@dataclass(frozen=True)
class QConstants:
    """Numerical sandwich constants on a truncation.

    ``omega`` is the smallest generalized eigenvalue of ``(P^(n+1), 1⊗P^(n))``
    over the levels present, so ``1⊗P^(n) ≤ P^(n+1)/omega`` there. ``c[k]`` and
    ``d[k]`` bound ``P^(n+1) ≤ c_k 1⊗_k P^(n)`` and ``1⊗_k P^(n) ≤ d_k P^(n+1)``.
    ``c_chain`` keeps ``omega^(k-1)/(1-|q|)^(k+1)`` for comparison only; it is
    not a valid bound for k ≥ 2 in general.
    """

    q: float
    d_dim: int
    N: int
    omega: float
    c: tuple
    d: tuple
    c_chain: tuple
    estimated: bool = True

    def as_dict(self) -> dict:
        return {"q": self.q, "d": self.d_dim, "N": self.N, "omega": self.omega,
                "omega_is_estimate": self.estimated, "c": list(self.c),
                "d_k": list(self.d), "c_chain": list(self.c_chain)}


@functools.lru_cache(maxsize=32)
def estimate_constants(d: int, N: int, q: float, K: int | None = None) -> QConstants:
    """Estimate ω(q), c_{k,q} and d_{k,q} on levels ≤ N of a d-dimensional H."""
    K = N - 1 if K is None else K
    gap = 1.0 - abs(q)
    omega = 1.0
    for n in range(N):
        a = _symmetrizer_matrix(d, n + 1, q)
        b = np.kron(np.eye(d), _symmetrizer_matrix(d, n, q))
        omega = min(omega, _pencil_extremes(a, b)[0])
    c, dk, chain = [], [], []
    for k in range(K + 1):
        chain.append(1.0 / gap if k == 0 else omega ** (k - 1) / gap ** (k + 1))
        c_est, d_est = 0.0, 0.0
        for n in range(k, N):
            a = _symmetrizer_matrix(d, n + 1, q)
            b = partial_symmetrizer_matrix(d, n, k, q)
            lo, hi = _pencil_extremes(a, b)
            c_est = max(c_est, hi)
            d_est = max(d_est, 1.0 / lo)
        if c_est == 0.0:
            # no level in the truncation where the k-th constant is exercised
            c_est = omega ** (-k) / gap ** (k + 1)
            d_est = 1.0
        c.append(1.0 / gap if k == 0 else c_est)
        dk.append(d_est)
    return QConstants(q, d, N, omega, tuple(c), tuple(dk), tuple(chain))


# --------------------------------------------------------------------------- #
# serialization
# --------------------------------------------------------------------------- #

_MAGIC = b"QFOCK1"


def save_matrix(path, cfg: TruncationConfig, matrix: np.ndarray) -> None:
    """Write a dense complex matrix.

    Layout: one ASCII header line ``QFOCK1 d=<d> N=<N> q=<q> rows=<r> cols=<c>``
    terminated by ``\\n``, then ``rows*cols`` little-endian complex128 values in
    row-major order (levels ascending, lexicographic within a level).
    """
    m = np.ascontiguousarray(matrix, dtype="<c16")
    header = (f"{_MAGIC.decode()} d={cfg.d} N={cfg.N} q={cfg.q!r} "
              f"rows={m.shape[0]} cols={m.shape[1]}\n").encode()
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(m.tobytes())


def load_matrix(path):
    with open(path, "rb") as fh:
        header = fh.readline().decode().split()
        if header[0] != _MAGIC.decode():
            raise ValueError(f"{path}: not a qfock matrix file")
        meta = dict(kv.split("=") for kv in header[1:])
        cfg = TruncationConfig(int(meta["d"]), int(meta["N"]), float(meta["q"]))
        shape = (int(meta["rows"]), int(meta["cols"]))
        data = np.frombuffer(fh.read(), dtype="<c16").reshape(shape)
    return cfg, data.astype(complex)


def save_matrix_csv(path, cfg: TruncationConfig, matrix: np.ndarray) -> None:
    """CSV twin of :func:`save_matrix`: ``# d=..,N=..,q=..`` header then rows of ``re+imj``."""
    with open(path, "w") as fh:
        fh.write(f"# d={cfg.d},N={cfg.N},q={cfg.q!r}\n")
        for row in np.asarray(matrix, dtype=complex):
            fh.write(",".join(_fmt_complex(z) for z in row) + "\n")


def _fmt_complex(z) -> str:
    re, im = float(z.real), float(z.imag)
    sign = "-" if np.signbit(im) else "+"
    return f"{re!r}{sign}{abs(im)!r}j"


def load_matrix_csv(path):
    with open(path) as fh:
        meta = dict(kv.split("=") for kv in fh.readline()[1:].strip().split(","))
        rows = [[complex(tok) for tok in line.strip().split(",")] for line in fh if line.strip()]
    cfg = TruncationConfig(int(meta["d"]), int(meta["N"]), float(meta["q"]))
    return cfg, np.array(rows, dtype=complex)


def q_factorial(n: int, q: float) -> float:
    """``[n]_q! = Π_{k≤n} (1-q^k)/(1-q)``, the scalar value of ``P^(n)`` at d=1."""
    return math.prod(sum(q**j for j in range(k)) for k in range(1, n + 1))
