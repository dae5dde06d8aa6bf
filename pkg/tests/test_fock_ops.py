from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qfock.cli import relation_residuals
from qfock.fock_core import FockVector, TruncationConfig, TruncationError, q_inner
from qfock.fock_ops import (FockOperator, ParameterError, annihilation, apply_annihilation,
                            apply_creation, apply_gamma, apply_gauge, block_norm, creation,
                            exact_norm, extend_operator, gamma, gauge, lanczos_q_norm,
                            q_adjoint, q_operator_norm, second_quantization)


def _rand(rng, *shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


@pytest.mark.parametrize("q", [-0.9, -0.5, 0.0, 0.5, 0.9])
def test_relations_hold_below_top_levels(q):
    cfg = TruncationConfig(3, 5, q)
    rng = np.random.default_rng(7)
    for _ in range(3):
        res = relation_residuals(cfg, rng)
        assert set(res) == set(range(1, 9))
        assert max(res.values()) <= 1e-10, res


def test_corrupted_q_breaks_first_relation_only():
    cfg = TruncationConfig(3, 5, 0.5)
    res = relation_residuals(cfg, np.random.default_rng(0), corrupt_q=True)
    assert res[1] > 1e-3
    assert all(res[r] <= 1e-10 for r in range(2, 9))


def test_free_relation_at_q0():
    cfg = TruncationConfig(2, 4, 0.0)
    rng = np.random.default_rng(3)
    phi, psi = _rand(rng, 2), _rand(rng, 2)
    prod = annihilation(cfg, phi) @ creation(cfg, psi)
    cols = prod.exact_indices()
    assert np.allclose(prod.matrix[:, cols], np.vdot(phi, psi) * np.eye(cfg.dim)[:, cols])


def test_creation_is_left_tensoring():
    cfg = TruncationConfig(2, 3, 0.3)
    phi = np.array([1.0, 2.0j])
    v = FockVector.from_flat(cfg, np.arange(cfg.dim, dtype=complex))
    w = apply_creation(v, phi)
    assert np.allclose(w.levels[2], np.multiply.outer(phi, v.levels[1]))
    assert np.allclose(w.flat(), creation(cfg, phi).matrix @ v.flat())


@pytest.mark.parametrize("q", [-0.7, 0.0, 0.6])
def test_matrix_free_kernels_match_dense(q):
    cfg = TruncationConfig(3, 3, q)
    rng = np.random.default_rng(11)
    phi, T, mu = _rand(rng, 3), _rand(rng, 3, 3), 0.4 - 0.3j
    x = _rand(rng, cfg.dim, 2)
    v = FockVector.from_flat(cfg, x)
    assert np.allclose(apply_annihilation(v, phi).flat(), annihilation(cfg, phi).matrix @ x)
    assert np.allclose(apply_gauge(v, mu, T).flat(), gauge(cfg, mu, T).matrix @ x)
    assert np.allclose(apply_gauge(v, mu, diag=np.diag(T)).flat(),
                       gauge(cfg, mu, np.diag(np.diag(T))).matrix @ x)
    assert np.allclose(apply_gamma(v, mu).flat(), gamma(cfg, mu).matrix @ x)


@settings(max_examples=20, deadline=None)
@given(q=st.floats(-0.9, 0.9), seed=st.integers(0, 2**32 - 1))
def test_creation_and_annihilation_are_q_adjoint(q, seed):
    cfg = TruncationConfig(2, 3, q)
    rng = np.random.default_rng(seed)
    phi = _rand(rng, 2)
    u = FockVector.from_flat(cfg, _rand(rng, cfg.dim))
    v = FockVector.from_flat(cfg, _rand(rng, cfg.dim))
    # only levels where a*(φ) is exact
    u = FockVector.from_flat(cfg, np.where(np.arange(cfg.dim) < cfg.offset(cfg.N), u.flat(), 0))
    lhs = q_inner(cfg, creation(cfg, phi) @ u, v)
    rhs = q_inner(cfg, u, annihilation(cfg, phi) @ v)
    assert np.isclose(lhs, rhs)


def test_q_adjoint_of_annihilation_is_creation():
    cfg = TruncationConfig(2, 3, -0.4)
    phi = np.array([0.3, 1.0 - 0.5j])
    adj = q_adjoint(cfg, annihilation(cfg, phi))
    # top level column is a truncation artefact of a*
    cols = np.arange(cfg.offset(cfg.N))
    assert np.allclose(adj.matrix[:, cols], creation(cfg, phi).matrix[:, cols])


def test_gauge_parameter_checks():
    cfg = TruncationConfig(2, 2, 0.0)
    with pytest.raises(ParameterError):
        gauge(cfg, 1.0, np.eye(2))
    with pytest.raises(ParameterError):
        gamma(cfg, 1.5)
    with pytest.raises(TruncationError):
        creation(cfg, np.ones(3))


@pytest.mark.parametrize("q", [-0.9, -0.5, 0.0, 0.5, 0.9])
def test_creation_norm_bound_and_limit(q):
    phi = np.array([0.6, 0.8j, 0.0])
    vals = []
    for N in range(2, 7):
        cfg = TruncationConfig(3, N, q)
        vals.append(exact_norm(cfg, creation(cfg, phi)).value)
    bound = 1 / math.sqrt(1 - abs(q))
    assert max(vals) <= bound + 1e-10
    # at q ≥ 0 the norm grows toward the bound as N increases
    if q >= 0:
        assert np.all(np.diff(vals) >= -1e-12)


@pytest.mark.parametrize("mu", [0.3, 0.6, 0.8j])
def test_gauge_and_gamma_norm_bounds(mu):
    rng = np.random.default_rng(5)
    T = _rand(rng, 2, 2)
    r = abs(mu)
    sup = max(n * r**n for n in range(1, 200))
    for q in (-0.9, 0.0, 0.9):
        cfg = TruncationConfig(2, 5, q)
        assert q_operator_norm(cfg, gauge(cfg, mu, T)) <= np.linalg.norm(T, 2) * sup + 1e-10
        assert q_operator_norm(cfg, gamma(cfg, mu)) <= 1 + 1e-12


def test_block_norm_of_creation_level0():
    cfg = TruncationConfig(2, 2, 0.5)
    phi = np.array([3.0, 4.0])
    assert block_norm(cfg, creation(cfg, phi), 0, 1) == pytest.approx(5.0)
    assert block_norm(cfg, creation(cfg, phi), 0, 2) == 0.0


def test_lanczos_matches_exact_norm():
    cfg = TruncationConfig(3, 3, 0.6)
    rng = np.random.default_rng(2)
    phi = _rand(rng, 3)
    X = creation(cfg, phi)
    exact = q_operator_norm(cfg, X, source_levels=range(3))
    est = lanczos_q_norm(cfg, lambda v: apply_creation(v, phi),
                         lambda v: apply_annihilation(v, phi), range(3), rng, iters=40)
    assert est == pytest.approx(exact, rel=1e-8)


def test_operator_algebra_tracks_exactness():
    cfg = TruncationConfig(2, 4, 0.2)
    a, ad = annihilation(cfg, np.ones(2)), creation(cfg, np.ones(2))
    prod = a @ ad
    assert prod.rise == 0 and prod.exactness == 3
    assert (ad @ ad).exactness == 2
    assert isinstance(2 * a + ad, FockOperator)
    assert np.allclose((a - a).matrix, 0)


def test_second_quantization_is_isometric_embedding():
    cfg1, cfg2 = TruncationConfig(2, 3, 0.4), TruncationConfig(3, 3, 0.4)
    U = np.eye(3)[:, :2]
    g = second_quantization(cfg1, cfg2, U)
    phi = np.array([1.0, -1j])
    X = extend_operator(cfg1, cfg2, U, creation(cfg1, phi))
    assert np.allclose(X.matrix @ g, g @ creation(cfg1, phi).matrix)
    with pytest.raises(ParameterError):
        second_quantization(cfg1, cfg2, 2 * U)
