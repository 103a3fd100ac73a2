"""Construction, interning and simplification of the expression DAG."""

import threading

import pytest
from hypothesis import given, strategies as st

import formlang as fl
from formlang import core
from formlang.errors import (
    BooleanMisuse,
    DivisionByZero,
    DoubleRestriction,
    FreeIndexConflict,
    InvalidTerminal,
    RankError,
    ShapeMismatch,
)


class TestTerminals:
    def test_identity_shape(self):
        assert fl.identity(2).shape == (2, 2)

    def test_permutation_symbol_rank_matches_dimension(self):
        assert fl.permutation_symbol(3).shape == (3, 3, 3)
        assert fl.permutation_symbol(2).shape == (2, 2)

    def test_zero_literal_is_annotated_zero(self):
        z = fl.real_literal(0.0)
        assert z.kind is core.ZERO
        assert z.shape == ()
        assert z.free_indices == {}

    def test_unit_vector_axis_check(self):
        assert fl.unit_vector(2, 1).shape == (2,)
        with pytest.raises(InvalidTerminal):
            fl.unit_vector(2, 2)

    def test_coefficient_interning_is_deterministic(self, P1):
        a = fl.coefficient(P1, count=3)
        b = fl.coefficient(P1, count=3)
        assert a is b

    def test_fresh_counts_strictly_increase(self, P1):
        a = fl.coefficient(P1)
        b = fl.coefficient(P1)
        assert b.payload[1] > a.payload[1]

    def test_spatial_coordinate_shape(self):
        assert fl.spatial_coordinate(fl.triangle).shape == (2,)
        assert fl.facet_normal(fl.tetrahedron).shape == (3,)
        assert fl.cell_volume(fl.triangle).shape == ()

    def test_argument_shapes_follow_element(self, V2):
        assert fl.trial_function(V2).shape == (2,)

    def test_nan_literal_rejected(self):
        with pytest.raises(InvalidTerminal):
            fl.real_literal(float("nan"))


class TestSimplifications:
    def test_multiply_by_one(self, P1):
        x = fl.coefficient(P1)
        assert fl.star(fl.as_expr(1), x) is x
        assert fl.star(x, fl.as_expr(1.0)) is x

    def test_add_zero(self, P1):
        x = fl.coefficient(P1)
        assert fl.as_expr(0) + x is x
        assert x + fl.as_expr(0.0) is x

    def test_multiply_by_zero_keeps_signature(self, P1):
        u = fl.coefficient(P1)
        z = fl.star(fl.as_expr(0), fl.grad(u))
        assert z.kind is core.ZERO
        assert z.shape == (2,)

    def test_zero_times_indexed_keeps_free_indices(self, V2):
        u = fl.coefficient(V2)
        z = fl.build(core.PRODUCT, [fl.as_expr(0), u[fl.i]])
        assert z.kind is core.ZERO
        assert dict(z._free) == {fl.i.id: 2}

    def test_constant_folding_int(self):
        assert fl.star(fl.as_expr(2), fl.as_expr(3)).payload == (6,)
        assert (fl.as_expr(2) + fl.as_expr(3)).payload == (5,)

    def test_constant_folding_functions(self):
        assert fl.sqrt(fl.as_expr(4)).payload == (2.0,)
        assert fl.sign(fl.as_expr(0)).kind is core.ZERO

    def test_folding_large_ints_degrade_to_float(self):
        big = fl.star(fl.as_expr(2**40), fl.as_expr(2**40))
        assert big.kind is core.REAL_LITERAL
        assert big.payload[0] == float(2**80)

    def test_division_by_literal_zero(self):
        with pytest.raises(DivisionByZero):
            fl.divide(fl.as_expr(1), fl.as_expr(0))

    def test_ln_of_negative_literal_stays_symbolic(self):
        e = fl.ln(fl.as_expr(-1))
        assert e.kind is core.LN

    def test_canonical_commutative_ordering(self, P1):
        a = fl.coefficient(P1)
        b = fl.coefficient(P1)
        assert fl.build(core.SUM, [a, b]) is fl.build(core.SUM, [b, a])
        assert fl.build(core.PRODUCT, [a, b]) is fl.build(core.PRODUCT, [b, a])

    def test_canceling_indexing(self):
        A = fl.coefficient(fl.TensorElement("Lagrange", fl.triangle, 1))
        assert fl.as_tensor(A[fl.i, fl.j], (fl.i, fl.j)) is A

    def test_indexed_component_tensor_cancels(self, V2):
        u = fl.coefficient(V2)
        ct = fl.as_tensor(u[fl.i] * fl.as_expr(2), (fl.i,))
        assert ct[fl.i] is fl.star(u[fl.i], 2)

    def test_transpose_involution(self):
        A = fl.coefficient(fl.TensorElement("Lagrange", fl.triangle, 1))
        assert fl.transpose(fl.transpose(A)) is A

    def test_no_polynomial_expansion(self, P1):
        a = fl.coefficient(P1)
        b = fl.coefficient(P1)
        d = a - b
        prod = fl.star(d, d)
        assert prod.kind is core.PRODUCT
        assert prod.operands == (d, d)

    def test_nested_sums_keep_structure(self, P1):
        a, b, c = (fl.coefficient(P1) for _ in range(3))
        inner = a + c
        expr = inner + b
        assert inner in expr.operands


class TestValidation:
    def test_shape_mismatch_in_sum(self, P1, V2):
        with pytest.raises(ShapeMismatch):
            fl.coefficient(P1) + fl.coefficient(V2)

    def test_free_index_mismatch_in_sum(self, V2):
        u = fl.coefficient(V2)
        with pytest.raises(FreeIndexConflict):
            fl.build(core.SUM, [u[fl.i], u[fl.j]])

    def test_scalar_function_rejects_tensor(self):
        A = fl.coefficient(fl.TensorElement("Lagrange", fl.triangle, 1))
        with pytest.raises(ShapeMismatch):
            fl.sin(A)

    def test_scalar_function_rejects_free_indices(self, V2):
        u = fl.coefficient(V2)
        with pytest.raises(FreeIndexConflict):
            fl.sin(u[fl.i])

    def test_det_of_vector_is_rank_error(self, V2):
        with pytest.raises(RankError):
            fl.det(fl.coefficient(V2))

    def test_star_matvec(self, V2):
        A = fl.coefficient(fl.TensorElement("Lagrange", fl.triangle, 1))
        x = fl.coefficient(V2)
        out = fl.star(A, x)
        assert out.shape == (2,)
        assert out.kind is core.DOT

    def test_star_rejects_bad_shapes(self, V2):
        x = fl.coefficient(V2)
        with pytest.raises(ShapeMismatch):
            fl.star(x, fl.coefficient(fl.TensorElement("Lagrange", fl.triangle, 1)))

    def test_star_implicit_summation(self, V2):
        u, v = fl.coefficient(V2), fl.coefficient(V2)
        e = fl.star(u[fl.i], v[fl.i])
        assert e.kind is core.INDEX_SUM
        assert e.free_indices == {}
        assert e.operands[0].kind is core.PRODUCT

    def test_triple_index_rejected(self, V2):
        u, v, w = (fl.coefficient(V2) for _ in range(3))
        raw = fl.build(core.PRODUCT, [u[fl.i], v[fl.i]])
        with pytest.raises(FreeIndexConflict):
            fl.build(core.PRODUCT, [raw, w[fl.i]])

    def test_boolean_misuse(self, P1):
        c = fl.lt(fl.coefficient(P1), 0)
        with pytest.raises(BooleanMisuse):
            fl.coefficient(P1) + c

    def test_conditional_branch_shapes(self, P1, V2):
        c = fl.lt(fl.coefficient(P1), 0)
        with pytest.raises(ShapeMismatch):
            fl.conditional(c, fl.coefficient(V2), fl.coefficient(P1))

    def test_double_restriction(self, P1):
        u = fl.coefficient(P1)
        with pytest.raises(DoubleRestriction):
            fl.restrict(fl.restrict(u, "+"), "-")

    def test_dn_expands_to_dot_with_normal(self, P1):
        g = fl.coefficient(P1)
        e = fl.Dn(g)
        assert e.kind is core.INNER  # grad(g) and n are vectors
        assert fl.grad(g) in e.operands
        assert fl.facet_normal(fl.triangle) in e.operands


class TestCachedSignatures:
    def test_shape_recomputation_matches_cache(self, V2):
        u = fl.coefficient(V2)
        expr = fl.inner(fl.grad(u), fl.grad(u)) + fl.tr(fl.outer(u, u))
        for node in fl.iterate(expr):
            if node.is_terminal:
                continue
            rebuilt = fl.build(node.kind, node.operands, node.payload)
            assert rebuilt is node
            assert rebuilt.shape == node.shape
            assert rebuilt.free_indices == node.free_indices

    def test_signature_function(self, V2):
        A = fl.coefficient(fl.TensorElement("Lagrange", fl.tetrahedron, 1))
        shape, free = fl.signature(A[fl.i, fl.j])
        assert shape == ()
        assert free == {fl.i: 3, fl.j: 3}

    def test_grad_appends_axis(self, P1):
        u = fl.coefficient(P1)
        assert fl.grad(u).shape == (2,)
        assert fl.grad(fl.grad(u)).shape == (2, 2)


class TestConstructionCost:
    def test_linear_intern_count(self, P1):
        x = fl.coefficient(P1)
        before = fl.session_stats()["intern_lookups"]
        e = x
        n = 500
        for k in range(n):
            e = e + fl.as_expr(float(k + 1))
        lookups = fl.session_stats()["intern_lookups"] - before
        # One literal plus one sum per step, with small constant slack.
        assert lookups <= 3 * n + 10

    def test_concurrent_interning_yields_identical_handles(self, P1):
        x = fl.coefficient(P1)
        results = []

        def work():
            e = x
            for k in range(50):
                e = e + fl.as_expr(k + 0.5)
            results.append(e)

        threads = [threading.Thread(target=work) for _ in range(8)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert all(r is results[0] for r in results)


@given(st.integers(min_value=-10**6, max_value=10**6),
       st.integers(min_value=-10**6, max_value=10**6))
def test_literal_sum_folding_matches_python(a, b):
    e = fl.as_expr(a) + fl.as_expr(b)
    assert core.literal_value(e) == a + b


@given(st.floats(min_value=-1e6, max_value=1e6, allow_nan=False),
       st.floats(min_value=-1e6, max_value=1e6, allow_nan=False))
def test_literal_product_folding_matches_python(a, b):
    e = fl.star(fl.as_expr(a), fl.as_expr(b))
    value = core.literal_value(e)
    assert value == pytest.approx(a * b, abs=1e-12, rel=1e-12)
