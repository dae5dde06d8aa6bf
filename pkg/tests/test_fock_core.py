from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qfock.fock_core import (FockVector, TruncationConfig, TruncationError, _symmetrizer_matrix,
                             apply_P, brute_force_symmetrizer, estimate_constants, load_matrix,
                             load_matrix_csv, partial_symmetrizer_matrix, q_factorial, q_inner,
                             q_norm, q_norms, save_matrix, save_matrix_csv, vacuum_state)


@pytest.mark.parametrize("q", [-0.9, -0.5, 0.0, 0.5, 0.9])
@pytest.mark.parametrize("d,n", [(1, 5), (2, 4), (3, 3), (2, 5)])
def test_symmetrizer_matches_permutation_sum(q, d, n):
    assert np.allclose(_symmetrizer_matrix(d, n, q), brute_force_symmetrizer(d, n, q),
                       atol=1e-12, rtol=0)


@pytest.mark.parametrize("q", [-0.9, 0.0, 0.9])
def test_symmetrizer_positive(q):
    for n in range(1, 5):
        assert np.linalg.eigvalsh(_symmetrizer_matrix(2, n, q)).min() > 0


def test_symmetrizer_q0_is_identity():
    assert np.allclose(_symmetrizer_matrix(3, 3, 0.0), np.eye(27))


def test_symmetrizer_on_symmetric_tensor_is_q_factorial():
    # on a tensor power of one vector P^(n) multiplies by [n]_q!
    q, n = 0.4, 4
    e = np.zeros(2)
    e[0] = 1.0
    x = e
    for _ in range(n - 1):
        x = np.multiply.outer(x, e)
    y = _symmetrizer_matrix(2, n, q) @ x.reshape(-1)
    assert np.allclose(y, q_factorial(n, q) * x.reshape(-1))


def test_q_factorial_values():
    assert q_factorial(0, 0.5) == 1.0
    assert np.isclose(q_factorial(3, 0.5), 1.0 * 1.5 * 1.75)


def test_truncation_config_validation():
    with pytest.raises(ValueError):
        TruncationConfig(2, 3, 1.0)
    with pytest.raises(ValueError):
        TruncationConfig(0, 3, 0.0)
    with pytest.raises(ValueError):
        TruncationConfig(2, 0, 0.0)
    cfg = TruncationConfig(3, 2, 0.5)
    assert cfg.dim == 1 + 3 + 9
    assert cfg.with_(N=3).dim == 40


def test_fock_vector_flat_round_trip():
    cfg = TruncationConfig(2, 3, 0.3)
    flat = np.arange(cfg.dim) + 1j
    v = FockVector.from_flat(cfg, flat)
    assert v.levels[2].shape == (2, 2)
    assert np.allclose(v.flat(), flat)


def test_fock_vector_shape_checked():
    cfg = TruncationConfig(2, 2, 0.3)
    with pytest.raises(TruncationError):
        FockVector(cfg, (np.zeros(()), np.zeros(2), np.zeros(2)))


def test_basis_batch():
    cfg = TruncationConfig(2, 2, 0.0)
    b = FockVector.basis(cfg, [0, 2])
    assert b.batch == (5,)
    assert np.allclose(b.flat()[:, 0], np.eye(cfg.dim)[:, 0])
    assert b.top_level() == 2


def test_vacuum_norm_and_state():
    cfg = TruncationConfig(2, 3, -0.7)
    om = FockVector.vacuum(cfg)
    assert q_norm(om) == 1.0
    assert vacuum_state(np.eye(cfg.dim)) == 1.0


@settings(max_examples=25, deadline=None)
@given(q=st.floats(-0.95, 0.95), seed=st.integers(0, 2**32 - 1))
def test_q_inner_hermitian_positive(q, seed):
    cfg = TruncationConfig(2, 3, q)
    rng = np.random.default_rng(seed)
    u = FockVector.from_flat(cfg, rng.standard_normal(cfg.dim) + 1j * rng.standard_normal(cfg.dim))
    v = FockVector.from_flat(cfg, rng.standard_normal(cfg.dim) + 1j * rng.standard_normal(cfg.dim))
    assert np.isclose(q_inner(cfg, u, v), np.conj(q_inner(cfg, v, u)))
    assert q_inner(cfg, u, u).real > 0
    assert np.isclose(q_inner(cfg, u, u).real, q_norm(u) ** 2)


def test_batched_norms_match_single():
    cfg = TruncationConfig(3, 3, 0.6)
    rng = np.random.default_rng(1)
    flat = rng.standard_normal((cfg.dim, 4))
    norms = q_norms(FockVector.from_flat(cfg, flat))
    single = [q_norm(FockVector.from_flat(cfg, flat[:, k])) for k in range(4)]
    assert np.allclose(norms, single)


def test_apply_P_matches_matrix():
    cfg = TruncationConfig(2, 3, -0.4)
    rng = np.random.default_rng(2)
    x = rng.standard_normal(cfg.dim)
    Px = apply_P(FockVector.from_flat(cfg, x)).flat()
    assert np.allclose(Px[cfg.level_slice(3)], brute_force_symmetrizer(2, 3, -0.4) @ x[cfg.level_slice(3)])


@pytest.mark.parametrize("q", [-0.9, -0.5, 0.0, 0.5, 0.9])
def test_sandwich_constants_hold(q):
    d, N = 2, 5
    K = estimate_constants(d, N, q)
    assert K.c[0] == pytest.approx(1 / (1 - abs(q)))
    for n in range(N):
        big = _symmetrizer_matrix(d, n + 1, q)
        for k in range(min(n, 2) + 1):
            part = partial_symmetrizer_matrix(d, n, k, q)
            assert np.linalg.eigvalsh(K.d[k] * big - part).min() >= -1e-10
        part0 = partial_symmetrizer_matrix(d, n, 0, q)
        assert np.linalg.eigvalsh(part0 / (1 - abs(q)) - big).min() >= -1e-10


def test_omega_is_one_at_q0():
    K = estimate_constants(2, 4, 0.0)
    assert K.omega == pytest.approx(1.0)
    assert all(np.isclose(c, 1.0) for c in K.c)


def test_chain_value_is_not_a_bound():
    # ω^(k-1)/(1-|q|)^(k+1) undershoots a generalized eigenvalue that is attained
    K = estimate_constants(2, 6, 0.5)
    assert K.c_chain[2] < K.c[2]
    assert estimate_constants(2, 6, 0.9).c_chain[2] < 3.0 < estimate_constants(2, 6, 0.9).c[2]


def test_matrix_io_round_trip(tmp_path):
    cfg = TruncationConfig(2, 2, 0.25)
    m = np.arange(cfg.dim**2).reshape(cfg.dim, cfg.dim) * (1 + 0.5j)
    save_matrix(tmp_path / "m.bin", cfg, m)
    cfg2, m2 = load_matrix(tmp_path / "m.bin")
    assert cfg2 == cfg and np.array_equal(m, m2)
    save_matrix_csv(tmp_path / "m.csv", cfg, m)
    cfg3, m3 = load_matrix_csv(tmp_path / "m.csv")
    assert cfg3 == cfg and np.allclose(m, m3)
