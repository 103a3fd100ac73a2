"""The two-level derivative elimination and its forward-mode rule sets,
checked against finite differences wherever a numeric value exists."""

import math

import numpy as np
import pytest

import formlang as fl
from formlang import core
from formlang.differentiation import (
    apply_derivatives,
    diff_directional,
    diff_spatial,
    diff_variable,
    mixed_directions,
    pad_direction,
)
from formlang.errors import (
    ComponentOutOfRange,
    NotACoefficient,
    NotAVariable,
    UnsupportedDerivative,
)


def fd_gradient(fn, x, h=1e-6):
    x = np.asarray(x, dtype=float)
    cols = []
    for k in range(len(x)):
        xp, xm = x.copy(), x.copy()
        xp[k] += h
        xm[k] -= h
        cols.append((np.asarray(fn(xp)) - np.asarray(fn(xm))) / (2 * h))
    return np.stack(cols, axis=-1)


class TestTextbookIdentities:
    def test_product_rule_collapses(self, P1_interval):
        f = fl.coefficient(P1_interval)
        g = fl.coefficient(P1_interval)
        d = diff_directional(fl.star(f, g), {f: fl.as_expr(1)})
        assert d is g

    def test_unrelated_expression_gives_zero(self, P1_interval):
        f = fl.coefficient(P1_interval)
        g = fl.coefficient(P1_interval)
        d = diff_directional(fl.sin(g), {f: fl.as_expr(1)})
        assert d.kind is core.ZERO

    def test_diff_of_clean_dag_is_identity(self, P1_interval):
        f = fl.coefficient(P1_interval)
        e = fl.sin(f) + f * f
        assert apply_derivatives(e) is e

    def test_variable_self_derivative(self):
        x = fl.spatial_coordinate(fl.interval)
        w = fl.variable(x[0])
        one = diff_variable(w, w)
        assert core.literal_value(one) == 1

    def test_unannotated_expression_has_zero_variable_derivative(self):
        x = fl.spatial_coordinate(fl.interval)
        w = fl.variable(x[0])
        d = diff_variable(x[0], w)
        assert d.kind is core.ZERO

    def test_diff_requires_variable(self, P1_interval):
        f = fl.coefficient(P1_interval)
        with pytest.raises(NotAVariable):
            diff_variable(f, f)

    def test_directional_requires_coefficient(self, P1_interval):
        u = fl.test_function(P1_interval)
        with pytest.raises(NotACoefficient):
            diff_directional(u, {u: fl.as_expr(1)})

    def test_exterior_derivative_is_unsupported(self, P1_interval):
        f = fl.coefficient(P1_interval)
        with pytest.raises(UnsupportedDerivative):
            apply_derivatives(fl.exterior_derivative(f))


class TestSpatialRules:
    def test_gradient_of_coordinate_is_identity(self):
        x = fl.spatial_coordinate(fl.triangle)
        assert diff_spatial(x) is fl.identity(2)

    def test_gradient_of_constant_is_zero(self):
        c = fl.constant(fl.triangle)
        d = diff_spatial(c)
        assert d.kind is core.ZERO
        assert d.shape == (2,)

    def test_grad_only_on_terminals_after_lowering(self, P1):
        u = fl.coefficient(P1)
        v = fl.coefficient(P1)
        lowered = apply_derivatives(fl.grad(u * v))
        for node in fl.iterate(lowered, filter=core.GRAD):
            operand = node.operands[0]
            assert operand.is_terminal or operand.kind is core.GRAD

    def test_product_rule_numeric(self):
        cell = fl.triangle
        E = fl.FiniteElement("Lagrange", cell, 2)
        u = fl.coefficient(E)
        v = fl.coefficient(E)
        fu = lambda x: math.sin(x[0]) * (1 + x[1])
        fv = lambda x: x[0] ** 2 + math.cos(x[1])
        env = fl.EvalEnv({u: fu, v: fv})
        lowered = apply_derivatives(fl.grad(u * v))
        pt = np.array([0.3, 0.7])
        got = fl.eval_expr(lowered, env, pt)
        want = fd_gradient(lambda x: fu(x) * fv(x), pt)
        assert np.allclose(got, want, atol=1e-7)

    def test_second_derivative_shape(self, P1):
        u = fl.coefficient(P1)
        dd = apply_derivatives(fl.grad(fl.grad(u)))
        assert dd.shape == (2, 2)

    def test_div_grad_of_square(self):
        x = fl.spatial_coordinate(fl.interval)
        e = fl.div(fl.grad(x[0] * x[0]))
        value = fl.eval_expr(apply_derivatives(e), fl.EvalEnv(), [0.4])
        assert float(value) == pytest.approx(2.0, abs=1e-12)

    def test_dx_on_expression_with_that_index(self):
        cell = fl.triangle
        V = fl.VectorElement("Lagrange", cell, 2)
        u = fl.coefficient(V)
        e = fl.Dx(u[fl.i], fl.i)  # implicit contraction: the divergence
        assert e.free_indices == {}
        env = fl.EvalEnv({u: lambda x: np.array([x[0] ** 2, x[0] * x[1]])})
        got = fl.eval_expr(apply_derivatives(e), env, [0.3, 0.5])
        assert float(got) == pytest.approx(2 * 0.3 + 0.3, abs=1e-6)

    def test_curl_numeric(self):
        cell = fl.tetrahedron
        V = fl.VectorElement("Lagrange", cell, 2)
        u = fl.coefficient(V)
        fn = lambda x: np.array([x[1] * x[2], x[0] ** 2, x[1]])
        env = fl.EvalEnv({u: fn})
        pt = np.array([0.2, 0.4, 0.6])
        got = fl.eval_expr(apply_derivatives(fl.curl(u)), env, pt)
        # curl = (d2 u3 - d3 u2, d3 u1 - d1 u3, d1 u2 - d2 u1)
        want = np.array([1.0, pt[1] - 0.0, 2 * pt[0] - pt[2]])
        assert np.allclose(got, want, atol=1e-6)

    def test_rot_2d_scalar(self):
        V = fl.VectorElement("Lagrange", fl.triangle, 2)
        u = fl.coefficient(V)
        fn = lambda x: np.array([x[1] ** 2, 3 * x[0]])
        env = fl.EvalEnv({u: fn})
        got = fl.eval_expr(apply_derivatives(fl.rot(u)), env, [0.2, 0.5])
        assert float(got) == pytest.approx(3.0 - 2 * 0.5, abs=1e-6)

    def test_nabla_grad_is_transposed_grad(self):
        V = fl.VectorElement("Lagrange", fl.triangle, 2)
        u = fl.coefficient(V)
        fn = lambda x: np.array([x[0] * x[1], x[1] ** 2])
        env = fl.EvalEnv({u: fn})
        pt = [0.3, 0.8]
        g = fl.eval_expr(apply_derivatives(fl.grad(u)), env, pt)
        ng = fl.eval_expr(apply_derivatives(fl.nabla_grad(u)), env, pt)
        assert np.allclose(ng, g.T, atol=1e-9)


class TestVariableRules:
    def test_square_rule(self):
        x = fl.spatial_coordinate(fl.interval)
        w = fl.variable(x[0])
        d = apply_derivatives(fl.diff(w * w, w))
        got = fl.eval_expr(d, fl.EvalEnv(), [0.3])
        assert float(got) == pytest.approx(0.6, abs=1e-12)

    def test_chain_through_other_variables(self):
        x = fl.spatial_coordinate(fl.interval)
        w = fl.variable(x[0])
        inner = fl.variable(w * w)
        d = apply_derivatives(fl.diff(fl.sin(inner), w))
        got = float(fl.eval_expr(d, fl.EvalEnv(), [0.3]))
        want = math.cos(0.09) * 0.6
        assert got == pytest.approx(want, rel=1e-12)

    def test_nested_two_pass_example(self):
        # d(c * grad(v*u)) / dv with direction 1 collapses to c * grad(u).
        E = fl.FiniteElement("Lagrange", fl.interval, 2)
        c = fl.constant(fl.interval)
        u = fl.coefficient(E)
        v = fl.coefficient(E)
        expr = fl.star(c, fl.grad(v * u))
        d = diff_directional(expr, {v: fl.as_expr(1)})
        env = fl.EvalEnv({u: lambda x: math.sin(x[0]),
                          v: lambda x: x[0] ** 2, c: 2.5})
        pt = [0.4]
        got = fl.eval_expr(d, env, pt)
        want = 2.5 * math.cos(0.4)
        assert np.allclose(got, want, atol=1e-6)


class TestDirectionalRules:
    def test_grad_of_target_becomes_grad_of_direction(self, P1):
        f = fl.coefficient(P1)
        v = fl.test_function(P1)
        d = diff_directional(fl.grad(f), {f: v})
        assert d is fl.grad(v)

    def test_override_rule(self, P1):
        f = fl.coefficient(P1)
        g = fl.coefficient(P1)
        h = fl.coefficient(P1)
        v = fl.test_function(P1)
        d = diff_directional(g, {f: v}, overrides={g: h})
        assert d is fl.build(core.PRODUCT, [h, v])

    def test_sum_and_product_rules_numeric(self):
        E = fl.FiniteElement("Lagrange", fl.interval, 2)
        f = fl.coefficient(E)
        a = fl.coefficient(E)
        b = fl.coefficient(E)
        v = fl.coefficient(E)
        env = fl.EvalEnv({
            f: lambda x: x[0] + 0.2,
            a: lambda x: math.sin(x[0]),
            b: lambda x: math.exp(0.3 * x[0]),
            v: lambda x: 1.0 + x[0],
        })
        pt = [0.37]
        fa = fl.star(f, a)
        d_sum = diff_directional(fa + b, {f: v})
        d_fa = diff_directional(fa, {f: v})
        d_b = diff_directional(b, {f: v})
        lhs = float(fl.eval_expr(apply_derivatives(d_sum), env, pt))
        rhs = float(fl.eval_expr(apply_derivatives(d_fa), env, pt)) + \
            float(fl.eval_expr(apply_derivatives(d_b), env, pt))
        assert lhs == pytest.approx(rhs, rel=1e-12)

    def test_scalar_function_chain_fd(self):
        E = fl.FiniteElement("Lagrange", fl.interval, 2)
        f = fl.coefficient(E)
        v = fl.coefficient(E)
        fv = lambda x: 0.5 + 0.25 * x[0]
        vv = lambda x: 1.0 - 0.5 * x[0]
        exprs = [
            fl.sin(f), fl.exp(f), fl.ln(f + 1), fl.sqrt(f + 1),
            fl.tan(f), fl.atan(f), fl.erf(f),
            fl.divide(1, f + 2), fl.power(f + 1, 3),
            fl.power(f + 1, f),
        ]
        for expr in exprs:
            d = diff_directional(expr, {f: v})
            env = fl.EvalEnv({f: fv, v: vv})
            pt = [0.3]
            got = float(fl.eval_expr(apply_derivatives(d), env, pt))
            eps = 1e-6

            def value(tau):
                env_t = fl.EvalEnv({f: lambda x: fv(x) + tau * vv(x), v: vv})
                return float(fl.eval_expr(apply_derivatives(expr), env_t, pt))

            want = (value(eps) - value(-eps)) / (2 * eps)
            assert got == pytest.approx(want, rel=1e-6, abs=1e-8), expr.kind.name

    def test_tensor_rules_fd(self):
        cell = fl.triangle
        T = fl.TensorElement("Lagrange", cell, 1)
        A = fl.coefficient(T)
        D = fl.coefficient(T)

        def fa(x):
            return np.array([[2 + x[0], 0.3 * x[1]], [0.1, 3 + x[1]]])

        def fd(x):
            return np.array([[0.2, 0.7 + x[0]], [x[1], 0.4]])

        exprs = [
            fl.det(A), fl.tr(fl.inv(A)), fl.inner(fl.cofac(A), D),
            fl.tr(fl.dot(A, D)), fl.inner(fl.sym(A), fl.skew(D)),
            fl.inner(fl.dev(A), D), fl.tr(fl.transpose(A) * D),
            fl.inner(fl.outer(fl.diag_vector(A), fl.diag_vector(D)),
                     fl.identity(2)),
        ]
        pt = [0.3, 0.6]
        for expr in exprs:
            d = diff_directional(expr, {A: D})
            env = fl.EvalEnv({A: fa, D: fd})
            got = float(fl.eval_expr(apply_derivatives(d), env, pt))
            eps = 1e-6

            def value(tau):
                env_t = fl.EvalEnv({A: lambda x: fa(x) + tau * fd(x), D: fd})
                return float(fl.eval_expr(apply_derivatives(expr), env_t, pt))

            want = (value(eps) - value(-eps)) / (2 * eps)
            assert got == pytest.approx(want, rel=1e-5, abs=1e-7), expr.kind.name

    def test_cross_rule_fd(self):
        cell = fl.tetrahedron
        V = fl.VectorElement("Lagrange", cell, 1)
        a = fl.coefficient(V)
        b = fl.coefficient(V)
        v = fl.coefficient(V)
        expr = fl.inner(fl.cross(a, b), b)
        d = diff_directional(expr, {a: v})
        fa = lambda x: np.array([x[0], 1 + x[1], 2.0])
        fb = lambda x: np.array([0.5, x[2], 1 - x[0]])
        fv = lambda x: np.array([1.0, 0.3, x[1]])
        env = fl.EvalEnv({a: fa, b: fb, v: fv})
        pt = [0.2, 0.4, 0.7]
        got = float(fl.eval_expr(apply_derivatives(d), env, pt))
        eps = 1e-6

        def value(tau):
            env_t = fl.EvalEnv({a: lambda x: fa(x) + tau * fv(x), b: fb, v: fv})
            return float(fl.eval_expr(apply_derivatives(expr), env_t, pt))

        want = (value(eps) - value(-eps)) / (2 * eps)
        assert got == pytest.approx(want, rel=1e-6)

    def test_conditional_keeps_condition_fixed(self):
        E = fl.FiniteElement("Lagrange", fl.interval, 1)
        f = fl.coefficient(E)
        v = fl.coefficient(E)
        x = fl.spatial_coordinate(fl.interval)
        expr = fl.conditional(fl.lt(x[0], 0), -f, f * f)
        d = diff_directional(expr, {f: v})
        assert d.kind is core.CONDITIONAL
        env = fl.EvalEnv({f: lambda x_: x_[0] + 1, v: lambda x_: 2.0})
        got = float(fl.eval_expr(apply_derivatives(d), env, [0.5]))
        assert got == pytest.approx(2 * 1.5 * 2.0)

    def test_abs_uses_sign(self):
        E = fl.FiniteElement("Lagrange", fl.interval, 1)
        f = fl.coefficient(E)
        v = fl.coefficient(E)
        d = diff_directional(fl.abs_(f), {f: v})
        env = fl.EvalEnv({f: lambda x: -0.7, v: lambda x: 3.0})
        assert float(fl.eval_expr(apply_derivatives(d), env, [0.0])) == -3.0

    def test_bessel_recurrence_fd(self):
        from scipy import special

        E = fl.FiniteElement("Lagrange", fl.interval, 1)
        f = fl.coefficient(E)
        v = fl.coefficient(E)
        expr = fl.bessel_J(1, f)
        d = diff_directional(expr, {f: v})
        env = fl.EvalEnv({f: lambda x: 1.3, v: lambda x: 1.0})
        got = float(fl.eval_expr(apply_derivatives(d), env, [0.0]))
        want = special.jvp(1, 1.3)
        assert got == pytest.approx(want, rel=1e-12)


class TestPadding:
    def test_three_vector_selection(self):
        V = fl.VectorElement("Lagrange", fl.tetrahedron, 1)
        u = fl.coefficient(V)
        S = fl.VectorElement("Lagrange", fl.tetrahedron, 1, dim=2)
        vhat = fl.coefficient(S)
        padded = pad_direction(u, [0, 2], vhat)
        assert padded.shape == (3,)
        env = fl.EvalEnv({vhat: lambda x: np.array([5.0, 7.0])})
        got = fl.eval_expr(padded, env, [0, 0, 0])
        assert np.allclose(got, [5.0, 0.0, 7.0])

    def test_full_selection_is_direction(self, P1):
        f = fl.coefficient(P1)
        v = fl.test_function(P1)
        assert pad_direction(f, [0], v) is v

    def test_out_of_range(self, V2):
        u = fl.coefficient(V2)
        with pytest.raises(ComponentOutOfRange):
            pad_direction(u, [5], fl.as_expr(1))

    def test_mixed_direction_slices(self):
        V = fl.VectorElement("Lagrange", fl.triangle, 2)
        Q = fl.FiniteElement("Lagrange", fl.triangle, 1)
        u = fl.coefficient(V)
        p2 = fl.coefficient(Q)
        W = fl.VectorElement("Lagrange", fl.triangle, 1, dim=3)
        w = fl.coefficient(W)
        slices = mixed_directions((u, p2), w)
        env = fl.EvalEnv({w: lambda x: np.array([1.0, 2.0, 3.0])})
        assert np.allclose(fl.eval_expr(slices[u], env, [0, 0]), [1.0, 2.0])
        assert float(fl.eval_expr(slices[p2], env, [0, 0])) == 3.0


class TestSecondDerivativeSymmetry:
    def test_hessian_symmetry_numeric(self):
        E = fl.FiniteElement("Lagrange", fl.interval, 2)
        f = fl.coefficient(E)
        v = fl.coefficient(E)
        w = fl.coefficient(E)
        energy = fl.exp(f) + f * f * f
        d_v = diff_directional(energy, {f: v})
        d_vw = diff_directional(d_v, {f: w})
        d_w = diff_directional(energy, {f: w})
        d_wv = diff_directional(d_w, {f: v})
        env = fl.EvalEnv({f: lambda x: 0.3 + x[0], v: lambda x: 1 + x[0] ** 2,
                          w: lambda x: 2 - x[0]})
        a = float(fl.eval_expr(apply_derivatives(d_vw), env, [0.45]))
        b = float(fl.eval_expr(apply_derivatives(d_wv), env, [0.45]))
        assert a == pytest.approx(b, rel=1e-12)


class TestDeterminism:
    def test_derivative_is_pure_function_of_input(self, P1):
        u = fl.coefficient(P1)
        v = fl.test_function(P1)
        expr = fl.inner(fl.grad(u), fl.grad(u)) + fl.sin(u)
        d1 = diff_directional(expr, {u: v})
        # interleave unrelated fresh-index allocation
        fl.indices(5)
        d2 = diff_directional(expr, {u: v})
        assert d1 is d2
