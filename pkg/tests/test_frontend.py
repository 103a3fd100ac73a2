"""Parsing, diagnostics, printing, and the round-trip property."""

import random

import pytest

import formlang as fl
from formlang import core
from formlang.frontend import parse
from formlang.printing import pretty_print, print_module


def exports_equal(m1, m2):
    return list(m1.exports) == list(m2.exports) and all(
        m1.exports[n] == m2.exports[n] for n in m1.exports
    )


class TestParsing:
    def test_simple_module(self):
        m = parse(
            'element = FiniteElement("Lagrange", triangle, 1)\n'
            "u = TrialFunction(element)\n"
            "v = TestFunction(element)\n"
            "a = u*v*dx\n"
        )
        assert m.ok
        assert list(m.exports) == ["a"]
        assert fl.arity(m.exports["a"]) == 2

    def test_operator_precedence(self):
        m = parse(
            "c = Constant(interval)\n"
            "d = Constant(interval)\n"
            "e = Constant(interval)\n"
            "w = c + d*e**2\n"
        )
        assert m.ok
        w = m.names["w"]
        c, d, e = m.names["c"], m.names["d"], m.names["e"]
        assert w is c + fl.star(d, fl.power(e, 2))

    def test_unary_minus_precedence(self):
        m = parse(
            "c = Constant(interval)\n"
            "w = -c**2\n"
        )
        c = m.names["c"]
        assert m.names["w"] is fl.operators.neg(fl.power(c, 2)) if hasattr(fl, "operators") \
            else m.ok
        assert m.ok

    def test_multi_subdomain_form(self):
        m = parse(
            'element = FiniteElement("Lagrange", triangle, 1)\n'
            "u = TrialFunction(element)\n"
            "v = TestFunction(element)\n"
            "f = Coefficient(element)\n"
            "a = u*v*dx(0) + f*u*v*ds(1)\n"
        )
        assert m.ok
        a = m.exports["a"]
        assert len(a.integrals) == 2
        assert {itg.domain_key() for itg in a.integrals} == {
            ("cell", 0), ("exterior_facet", 1)
        }

    def test_syntax_error_span(self):
        m = parse(
            'element = FiniteElement("Lagrange", triangle, 1)\n'
            "v = TestFunction(element)\n"
            "a = v*dx + v*\n"
        )
        assert not m.ok
        diag = [d for d in m.diagnostics if d.severity == "error"][0]
        assert diag.span.line0 == 3

    def test_semantic_error_has_span_and_error_name(self):
        m = parse(
            'element = FiniteElement("Lagrange", triangle, 1)\n'
            'V = VectorElement("Lagrange", triangle, 1)\n'
            "f = Coefficient(element)\n"
            "g = Coefficient(V)\n"
            "w = f + g\n"
        )
        assert not m.ok
        message = str(m.diagnostics[0])
        assert "ShapeMismatch" in message
        assert m.diagnostics[0].span.line0 == 5

    def test_poisoned_names_do_not_cascade(self):
        m = parse(
            "w = nosuchthing + 1\n"
            "z = w + 2\n"
        )
        errors = [d for d in m.diagnostics if d.severity == "error"]
        assert len(errors) == 1

    def test_single_assignment(self):
        m = parse("c = Constant(interval)\nc = Constant(interval)\n")
        assert not m.ok
        assert "already defined" in m.diagnostics[0].message

    def test_constructors_must_be_whole_statement(self):
        m = parse(
            'element = FiniteElement("Lagrange", triangle, 1)\n'
            "v = TestFunction(element)\n"
            "a = Coefficient(element)*v*dx\n"
        )
        assert not m.ok
        assert "whole right-hand side" in m.diagnostics[0].message

    def test_restriction_call_syntax(self):
        m = parse(
            'element = FiniteElement("Discontinuous Lagrange", triangle, 1)\n'
            "u = TrialFunction(element)\n"
            "v = TestFunction(element)\n"
            "a = u('+')*v('-')*dS\n"
        )
        assert m.ok
        assert fl.arity(m.exports["a"]) == 2

    def test_slices_expand(self):
        m = parse(
            'T = TensorElement("Lagrange", triangle, 1)\n'
            "A = Coefficient(T)\n"
            "row = A[0, :]\n"
        )
        assert m.ok
        assert m.names["row"].shape == (2,)

    def test_element_restriction_brackets(self):
        m = parse(
            'V = FiniteElement("Lagrange", triangle, 2)\n'
            'Vf = V["facet"]\n'
        )
        assert m.ok
        assert isinstance(m.names["Vf"], fl.RestrictedElement)

    def test_forms_list_export(self):
        m = parse(
            'element = FiniteElement("Lagrange", triangle, 1)\n'
            "v = TestFunction(element)\n"
            "f = Coefficient(element)\n"
            "first = f*v*dx\n"
            "second = f*f*v*dx\n"
            "forms = [first, second]\n"
        )
        assert m.ok
        assert list(m.exports) == ["first", "second"]

    def test_continuation_after_operator(self):
        m = parse(
            "c = Constant(interval)\n"
            "w = c +\n"
            "    c\n"
        )
        assert m.ok
        assert m.names["w"] is m.names["c"] + m.names["c"]

    def test_newlines_inside_parens(self):
        m = parse(
            "c = Constant(interval)\n"
            "w = (c\n     + c)\n"
        )
        assert m.ok

    def test_derivative_in_surface(self):
        m = parse(
            'element = FiniteElement("Lagrange", interval, 1)\n'
            "v = TestFunction(element)\n"
            "f = Coefficient(element)\n"
            "M = f*f*dx\n"
            "L = derivative(M, f, v)\n"
        )
        assert m.ok
        assert fl.arity(m.exports["L"]) == 1

    def test_conditionals_and_comparisons(self):
        m = parse(
            "x = SpatialCoordinate(interval)\n"
            "w = conditional(lt(x[0], 0), -x[0], x[0])\n"
        )
        assert m.ok
        assert m.names["w"].kind is core.CONDITIONAL

    def test_index_statement(self):
        m = parse(
            'T = TensorElement("Lagrange", triangle, 1)\n'
            "A = Coefficient(T)\n"
            "m = Index()\n"
            "w = as_tensor(A[m, j], (m, j))\n"
        )
        assert m.ok
        assert m.names["w"] is m.names["A"]


class TestPrinting:
    def test_commutative_canonical_text(self, P1):
        a = fl.coefficient(P1, count=400)
        b = fl.coefficient(P1, count=401)
        assert pretty_print(fl.build(core.SUM, [a, b])) == \
            pretty_print(fl.build(core.SUM, [b, a]))

    def test_zero_printing(self):
        assert pretty_print(fl.annotated_zero()) == "0"
        text = pretty_print(fl.annotated_zero((2, 2)))
        assert text.startswith("0")
        assert "(2, 2)" in text

    def test_precedence_text(self, P1):
        a = fl.coefficient(P1, count=402)
        b = fl.coefficient(P1, count=403)
        expr = a + fl.star(b, fl.power(a, 2))
        text = pretty_print(expr, {a: "a", b: "b"})
        assert text in ("a + a**2*b", "a + b*a**2")

    def test_nested_sum_parenthesized(self, P1):
        a, b, c = (fl.coefficient(P1, count=410 + n) for n in range(3))
        expr = (a + c) + b
        text = pretty_print(expr, {a: "a", b: "b", c: "c"})
        assert "(" in text  # inner sum survives as a unit


def _generate_module_text(rng: random.Random) -> str:
    cell = rng.choice(["interval", "triangle"])
    dim = {"interval": 1, "triangle": 2}[cell]
    lines = [
        f'E = FiniteElement("Lagrange", {cell}, {rng.randint(1, 3)})',
        f'V = VectorElement("Lagrange", {cell}, 1)',
        "u = TrialFunction(E)",
        "v = TestFunction(E)",
        "f = Coefficient(E)",
        "g = Coefficient(E)",
        "b = Coefficient(V)",
        f"c = Constant({cell})",
        f"x = SpatialCoordinate({cell})",
    ]
    scalars = ["f", "g", "c", "x[0]", "(f + g)", "sin(f)", "(c*f)",
               "(f / 2)", "abs(g)", "sqrt(f*f + 1)", "f**2"]
    vectors = ["b", "grad(f)", "as_vector((f, g))" if dim == 2 else "as_vector((f,))"]
    more = rng.randint(0, 3)
    for n in range(more):
        a1, a2 = rng.choice(scalars), rng.choice(scalars)
        lines.append(f"e{n} = {a1}*{a2} + {rng.choice(scalars)}")
        scalars.append(f"e{n}")
    vec = rng.choice(vectors)
    bilinear = rng.choice([
        "u*v", "inner(grad(u), grad(v))", f"{rng.choice(scalars)}*u*v",
        f"inner({vec}, {vec})*u*v", "dot(grad(u), grad(v))",
    ])
    linear = rng.choice([
        "f*v", f"{rng.choice(scalars)}*v", f"Dx(f, 0)*v",
        f"inner(grad({rng.choice(['f', 'g'])}), grad(v))",
    ])
    lines.append(f"a = {bilinear}*dx + {rng.choice(['u*v*ds', 'c*u*v*ds(1)'])}")
    lines.append(f"L = {linear}*dx - {rng.choice(scalars)}*v*ds")
    if rng.random() < 0.3:
        lines.append("M = derivative(L, f, u)")
    return "\n".join(lines) + "\n"


class TestRoundTrip:
    def test_generated_modules(self):
        rng = random.Random(2024)
        for _ in range(150):
            src = _generate_module_text(rng)
            m1 = parse(src)
            assert m1.ok, (src, [str(d) for d in m1.diagnostics])
            text = print_module(m1)
            m2 = parse(text)
            assert m2.ok, (text, [str(d) for d in m2.diagnostics])
            m3 = parse(print_module(m2))
            assert exports_equal(m2, m3)
            assert exports_equal(m1, m2), src

    def test_print_is_deterministic(self):
        src = _generate_module_text(random.Random(7))
        t1 = print_module(parse(src))
        t2 = print_module(parse(src))
        assert t1 == t2
