from __future__ import annotations

from importlib import resources

import numpy as np
import pytest

from qfock.fock_core import FockVector, TruncationConfig, TruncationError, q_norms
from qfock.ito import (BatchedIto, CompositeProcess, HypothesisError, ItoSpec, _resize,
                       brownian_moments, composite_correction, composite_product_target,
                       correction_polynomial, correction_rule, crossings, fit_slope,
                       ito_lhs_riemann, ito_rhs, ito_spec_from_dict, load_ito_spec,
                       nonincreasing, pair_partition_moment, pair_partitions,
                       random_fock_vector, residual_metric, riemann_polynomials, verify_ito,
                       verify_composite)
from qfock.sde import (Bioperator, GridSymbolTable, ProcessKind, SimpleBiprocess, TimeGrid,
                       biprocess_from_records)
from qfock.wick import (Polynomial, apply_polynomial, evaluate, normal_order, parse_polynomial,
                        q_adjoint_symbolic)

KINDS = {"A": ProcessKind("A"), "A*": ProcessKind("A*"), "L": ProcessKind("Lambda", 0.5),
         "M": ProcessKind("Lambda", 0.3 + 0.4j), "T": ProcessKind("T")}


def pieces(*items):
    """``(a, b, left, right, coeff)`` tuples to a biprocess."""
    return SimpleBiprocess(tuple(((a, b), Bioperator.simple(F, G, c)) for a, b, F, G, c in items))


ONE = pieces((0.0, 1.0, "", "", 1.0))
R_LEFT = pieces((0.0, 0.5, "", "", 0.7), (0.5, 1.0, "", "a(chi[0,0.5])", 1.0))
R_RIGHT = pieces((0.0, 0.5, "", "", 1.0),
                 (0.5, 1.0, "L(0.5; Pi[0,0.5]) a(chi[0,0.25])", "", 1.0))
# middle leg G1·F2 of degree -2 on (0.5, 1]
R_MISMATCH_1 = pieces((0.0, 0.5, "", "", 0.7), (0.5, 1.0, "a*(chi[0,0.5])", "a(chi[0,0.25])", 1.0))
R_MISMATCH_2 = pieces((0.5, 1.0, "a(chi[0,0.25])", "a*(chi[0.25,0.5])", 1.0))


def table_for(d):
    return GridSymbolTable(TimeGrid(1.0, d), seed=0)


def test_table_rules_and_metrics():
    A, Ad, L, T = KINDS["A"], KINDS["A*"], KINDS["L"], KINDS["T"]
    assert correction_rule(A, Ad) == "kw0"
    assert correction_rule(L, Ad) == "kw1"
    assert correction_rule(A, L) == "kw2"
    assert correction_rule(L, L) == "kw3"
    assert correction_rule(Ad, A) == "kw4"
    assert correction_rule(T, T) == "kw4"
    assert residual_metric(A, Ad) == "op"
    assert residual_metric(Ad, Ad) == "op"
    assert residual_metric(L, T) == "op"
    assert residual_metric(L, A) == "weak"
    assert residual_metric(L, L) == "vec"


def test_constant_corrections():
    table = table_for(4)
    corr = correction_polynomial(ItoSpec(ONE, KINDS["A"], ONE, KINDS["A*"]), table, 0.5)
    assert normal_order(corr, table, 0.5) == normal_order(Polynomial.identity(), table, 0.5)
    corr = correction_polynomial(ItoSpec(ONE, KINDS["L"], ONE, KINDS["A*"]), table, 0.5)
    assert corr == parse_polynomial("G(0.5) a*(chi[0,1])")
    corr = correction_polynomial(ItoSpec(ONE, KINDS["A"], ONE, KINDS["L"]), table, 0.5)
    assert corr == parse_polynomial("a(chi[0,1]) G(0.5)")
    corr = correction_polynomial(ItoSpec(ONE, KINDS["L"], ONE, KINDS["M"]), table, 0.5)
    assert corr == parse_polynomial("L(0.15+0.2j; Pi[0,1])")
    assert not correction_polynomial(ItoSpec(ONE, KINDS["A*"], ONE, KINDS["A"]), table, 0.5)


def test_kw3_forms_differ_by_middle_degree():
    table = table_for(4)
    cfg = TruncationConfig(4, 4, 0.4)
    kw = dict(S1=KINDS["L"], S2=KINDS["M"])

    def gap(R1, R2):
        a, b = (evaluate(correction_polynomial(ItoSpec(R1, R2=R2, kw3_form=f, **kw), table, cfg.q),
                         table, cfg) for f in ("table", "proof"))
        return np.abs(a.matrix - b.matrix).max()

    assert gap(ONE, R_LEFT) < 1e-12
    # the proof form carries μ^deg(G1F2) relative to the table form, here μ^-2 on (0.5, 1]
    assert gap(R_MISMATCH_1, R_MISMATCH_2) > 1e-6
    with pytest.raises(ValueError):
        ItoSpec(ONE, KINDS["L"], ONE, KINDS["L"], kw3_form="other")


def test_riemann_split_is_an_identity():
    table = table_for(4)
    cfg = TruncationConfig(4, 3, 0.5)
    spec = ItoSpec(R_LEFT, KINDS["A"], R_RIGHT, KINDS["A*"])
    for m in (2, 4):
        out = ito_lhs_riemann(spec, table, cfg, m)
        total = out["diagonal"] + out["iterated_first"] + out["iterated_second"]
        assert np.allclose(total.matrix, out["lhs"].matrix)


@pytest.mark.parametrize("pair", [("A", "A*"), ("L", "A*"), ("A", "L"), ("L", "M"),
                                  ("A*", "A"), ("T", "A*")])
def test_batched_matches_dense(pair):
    table = table_for(4)
    cfg = TruncationConfig(4, 4, 0.5)
    spec = ItoSpec(R_LEFT, KINDS[pair[0]], R_RIGHT, KINDS[pair[1]])
    eng = BatchedIto(spec, table, cfg)
    L = max(0, min(2, eng.max_source_level()))
    psi = random_fock_vector(cfg.with_(N=max(1, L)), range(L + 1), np.random.default_rng(0))
    full = _resize(psi, cfg)
    for m in (2, 4):
        parts = eng.parts(psi, m, which=("diagonal", "iterated_first", "iterated_second"))
        dense = riemann_polynomials(spec, table.grid, m)
        for name, v in parts.items():
            ref = _resize(apply_polynomial(dense[name], table, full), v.cfg)
            assert np.allclose(v.flat(), ref.flat(), atol=1e-12)
    corr = eng.apply_correction(psi)
    ref = apply_polynomial(correction_polynomial(spec, table, cfg.q), table, full)
    assert np.allclose(corr.flat(), _resize(ref, corr.cfg).flat())


@pytest.mark.parametrize("pair", [("A", "A*"), ("L", "A*"), ("A", "L"), ("A*", "A*")])
def test_correction_is_adjoint_symmetric(pair):
    table = table_for(4)
    q = 0.3
    spec = ItoSpec(R_LEFT, KINDS[pair[0]], R_RIGHT, KINDS[pair[1]])
    lhs = q_adjoint_symbolic(correction_polynomial(spec, table, q))
    rhs = correction_polynomial(spec.adjoint(), table, q)
    assert normal_order(lhs, table, q).is_close(normal_order(rhs, table, q))


def test_kw3_adjoint_symmetry_needs_proof_form():
    table = table_for(4)
    cfg = TruncationConfig(4, 4, 0.3)
    kw = dict(S1=KINDS["L"], S2=KINDS["M"])

    def defect(form):
        spec = ItoSpec(R_MISMATCH_1, R2=R_MISMATCH_2, kw3_form=form, **kw)
        x = evaluate(q_adjoint_symbolic(correction_polynomial(spec, table, cfg.q)), table, cfg)
        y = evaluate(correction_polynomial(spec.adjoint(), table, cfg.q), table, cfg)
        cols = np.arange(cfg.offset(min(x.exactness, y.exactness) + 1))
        return np.abs(x.matrix - y.matrix)[:, cols].max()

    assert defect("proof") < 1e-12
    assert defect("table") > 1e-6


def test_hypothesis_error_for_non_adapted():
    table = table_for(4)
    bad = pieces((0.0, 0.5, "a*(chi[0.5,1])", "", 1.0))
    spec = ItoSpec(bad, KINDS["A"], ONE, KINDS["A*"])
    with pytest.raises(HypothesisError, match="R1 adapted"):
        ito_rhs(spec, table, TruncationConfig(4, 2, 0.0))
    with pytest.raises(HypothesisError, match="R2 adapted"):
        BatchedIto(ItoSpec(ONE, KINDS["A"], bad, KINDS["A*"]), table, TruncationConfig(4, 3, 0.0))


def test_verify_ito_small_constant_case():
    table = table_for(8)
    cfg = TruncationConfig(8, 4, 0.5)
    spec = ItoSpec(ONE, KINDS["A"], ONE, KINDS["A*"], meshes=(2, 4, 8), n_test_vectors=2)
    rep = verify_ito(spec, table, cfg)
    assert rep.metric == "op" and rep.rule == "kw0"
    assert rep.monotone
    assert max(rep.identity_defect) < 1e-12
    # the diagonal excess is q·Σ a*(χ_i)a(χ_i), which shrinks like the mesh width
    assert rep.residuals_opnorm[0] > rep.residuals_opnorm[-1] > 0
    assert rep.slope == pytest.approx(-1.0, abs=0.2)
    assert rep.csv_rows()[0] == ("mesh", "residual_op", "residual_vec_max", "residual_weak_max")
    assert rep.to_dict()["spec"]["S2"] == "A*"


def test_verify_ito_exact_at_q0():
    table = table_for(8)
    cfg = TruncationConfig(8, 4, 0.0)
    spec = ItoSpec(ONE, KINDS["A"], ONE, KINDS["A*"], meshes=(2, 4, 8), n_test_vectors=2)
    rep = verify_ito(spec, table, cfg)
    assert max(rep.residuals_opnorm) < 1e-12
    assert rep.verdict == "pass"


def test_fit_slope_and_nonincreasing():
    assert fit_slope([4, 8, 16], [1.0, 0.5, 0.25]) == pytest.approx(-1.0)
    assert nonincreasing([1.0, 0.9, 1.5], factor=2.0)
    assert not nonincreasing([1.0, 2.5], factor=2.0)
    assert nonincreasing([1e-14, 5e-13])


def test_composite_table_entries():
    table = table_for(4)
    for q in (0.0, 0.5):
        B = CompositeProcess.brownian()
        corr = composite_correction(B, B, 0.0, 1.0, table, q)
        tgt = composite_product_target(B, B, 0.0, 1.0)
        assert (normal_order(corr, table, q) - normal_order(tgt, table, q)).max_abs_coeff() < 1e-12
        P = CompositeProcess.poisson(0.5, 2.0)
        corr = composite_correction(P, P, 0.0, 1.0, table, q)
        tgt = composite_product_target(P, P, 0.0, 1.0)
        assert (normal_order(corr, table, q) - normal_order(tgt, table, q)).max_abs_coeff() < 1e-12
    with pytest.raises(ValueError):
        CompositeProcess.poisson(1.0, 1.0)
    with pytest.raises(ValueError):
        composite_product_target(CompositeProcess.brownian(), CompositeProcess.poisson(0.5, 1), 0, 1)


def test_verify_composite_brownian_decays():
    table = table_for(8)
    cfg = TruncationConfig(8, 4, 0.0)
    B = CompositeProcess.brownian()
    out = verify_composite(B, B, 0.0, 1.0, table, cfg, meshes=(2, 4, 8), n_test_vectors=2)
    assert out["table_defect"] < 1e-12
    assert out["monotone"]
    # the a*a* and aa cell terms survive at q = 0 and decay like √h
    assert out["slope"] == pytest.approx(-0.5, abs=0.1)


def test_pair_partitions_and_crossings():
    assert len(list(pair_partitions(6))) == 15
    assert list(pair_partitions(3)) == []
    assert crossings([(0, 2), (1, 3)]) == 1
    assert crossings([(0, 3), (1, 2)]) == 0


@pytest.mark.parametrize("q", [-0.5, 0.0, 0.5])
def test_brownian_moments_match_pair_partitions(q):
    vals = brownian_moments(TruncationConfig(1, 8, q), 1.0, 4)
    oracle = [pair_partition_moment(n, q) for n in range(5)]
    assert np.allclose(vals, oracle, atol=1e-9, rtol=0)


def test_moment_values():
    assert [pair_partition_moment(n, 0.0) for n in range(5)] == [1, 1, 2, 5, 14]
    assert pair_partition_moment(2, 0.5) == pytest.approx(2.5)
    assert np.allclose([pair_partition_moment(n, 0.5) for n in (3, 4)], [8.875, 38.265625])
    assert pair_partition_moment(2, 0.3, t=2.0) == pytest.approx(4 * 2.3)
    with pytest.raises(TruncationError):
        brownian_moments(TruncationConfig(1, 5, 0.0), 1.0, 3)


def _records(R):
    from qfock.sde import biprocess_to_records

    return biprocess_to_records(R)


def test_spec_loading(tmp_path):
    base = {"name": "x", "S1": "A", "S2": "A*", "R1": _records(ONE), "R2": _records(ONE),
            "meshes": [4, 8], "n_test_vectors": 2, "tolerance": 1e-6}
    spec = ito_spec_from_dict(base, seed=3)
    assert spec.seed == 3 and spec.kw3_form == "table" and spec.meshes == (4, 8)
    with pytest.raises(ValueError, match="missing fields: tolerance"):
        ito_spec_from_dict({k: v for k, v in base.items() if k != "tolerance"}, 0)
    with pytest.raises(ValueError, match="unknown fields: extra"):
        ito_spec_from_dict(dict(base, extra=1), 0)
    with pytest.raises(ValueError, match="strictly increasing"):
        ito_spec_from_dict(dict(base, meshes=[8, 4]), 0)
    with pytest.raises(ValueError, match="R1"):
        ito_spec_from_dict(dict(base, R1=[{"interval": [0.0]}]), 0)
    for name in ("dAdAstar.toml", "dAstar_dAstar.toml"):
        with resources.as_file(resources.files("qfock") / "data" / name) as path:
            spec = load_ito_spec(path, 0)
        assert spec.meshes == (4, 8, 16, 32, 64)
        assert spec.R1 == biprocess_from_records(_records(ONE))


def test_random_fock_vector_is_q_normalized():
    cfg = TruncationConfig(3, 3, 0.7)
    v = random_fock_vector(cfg, range(3), np.random.default_rng(0))
    assert q_norms(v) == pytest.approx(1.0)
    assert not v.levels[3].any()
    assert isinstance(v, FockVector)
