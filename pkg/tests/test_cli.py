"""The command-line driver: exit codes, diagnostics with spans, DOT export
and numeric evaluation."""

import math

import pytest

from formlang.cli import main

CORPUS = "corpus"


def run(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


class TestCheck:
    def test_valid_file(self, capsys):
        code, out, err = run(capsys, "check", f"{CORPUS}/poisson_h1.form")
        assert code == 0
        assert "ok" in out

    def test_missing_file(self, capsys):
        code, out, err = run(capsys, "check", "no/such/file.form")
        assert code == 2

    def test_shape_mismatch_diag(self, tmp_path, capsys):
        path = tmp_path / "bad.form"
        path.write_text(
            'E = FiniteElement("Lagrange", triangle, 1)\n'
            'V = VectorElement("Lagrange", triangle, 1)\n'
            "f = Coefficient(E)\n"
            "g = Coefficient(V)\n"
            "w = f + g\n"
        )
        code, out, err = run(capsys, "check", str(path))
        assert code == 1
        assert "ShapeMismatch" in err
        assert "5:" in err  # span points into the source

    def test_nonscalar_integrand_diag(self, tmp_path, capsys):
        path = tmp_path / "bad.form"
        path.write_text(
            'V = VectorElement("Lagrange", triangle, 1)\n'
            "f = Coefficient(V)\n"
            "M = f*dx\n"
        )
        code, out, err = run(capsys, "check", str(path))
        assert code == 1
        assert "NonScalarIntegrand" in err

    def test_free_index_diag(self, tmp_path, capsys):
        path = tmp_path / "bad.form"
        path.write_text(
            'V = VectorElement("Lagrange", triangle, 1)\n'
            "f = Coefficient(V)\n"
            "M = f[i]*dx\n"
        )
        code, out, err = run(capsys, "check", str(path))
        assert code == 1
        assert "FreeIndexInIntegrand" in err

    def test_unrestricted_interior_facet_diag(self, tmp_path, capsys):
        path = tmp_path / "bad.form"
        path.write_text(
            'E = FiniteElement("Discontinuous Lagrange", triangle, 1)\n'
            "u = TrialFunction(E)\n"
            "v = TestFunction(E)\n"
            "a = u*v*dS\n"
        )
        code, out, err = run(capsys, "check", str(path))
        assert code == 1
        assert "MissingRestriction" in err

    def test_nonlinear_argument_diag(self, tmp_path, capsys):
        path = tmp_path / "bad.form"
        path.write_text(
            'E = FiniteElement("Lagrange", triangle, 1)\n'
            "u = TrialFunction(E)\n"
            "v = TestFunction(E)\n"
            "a = u*u*v*dx\n"
        )
        code, out, err = run(capsys, "check", str(path))
        assert code == 1
        assert "NonlinearArgument" in err
        assert "4:" in err

    @pytest.mark.parametrize("name", [
        "poisson_h1", "poisson_l2", "poisson_mixed", "stokes",
        "hyperelasticity", "optimization",
    ])
    def test_whole_corpus(self, capsys, name):
        code, out, err = run(capsys, "check", f"{CORPUS}/{name}.form")
        assert code == 0, err


class TestShowAndDiff:
    def test_show_form(self, capsys):
        code, out, err = run(capsys, "show", f"{CORPUS}/poisson_h1.form",
                             "--form", "a")
        assert code == 0
        assert "grad(u)" in out and "dx" in out

    def test_show_module(self, capsys):
        code, out, err = run(capsys, "show", f"{CORPUS}/stokes.form", "--module")
        assert code == 0
        assert "TrialFunction" in out

    def test_diff_produces_bilinear_text(self, capsys):
        code, out, err = run(capsys, "diff", f"{CORPUS}/poisson_h1.form",
                             "--form", "L", "--wrt", "f", "--dir", "u")
        assert code == 0
        assert "u" in out and "v" in out

    def test_diff_unused_coefficient_prints_zero(self, tmp_path, capsys):
        path = tmp_path / "m.form"
        path.write_text(
            'E = FiniteElement("Lagrange", interval, 1)\n'
            "v = TestFunction(E)\n"
            "f = Coefficient(E)\n"
            "g = Coefficient(E)\n"
            "L = g*v*dx\n"
        )
        code, out, err = run(capsys, "diff", str(path), "--form", "L",
                             "--wrt", "f", "--dir", "v")
        assert code == 0
        assert out.strip() == "0"

    def test_diff_unknown_name(self, capsys):
        code, out, err = run(capsys, "diff", f"{CORPUS}/poisson_h1.form",
                             "--form", "L", "--wrt", "nope", "--dir", "u")
        assert code == 1

    def test_hyperelasticity_residual_and_jacobian(self, capsys):
        code, out, err = run(capsys, "diff", f"{CORPUS}/hyperelasticity.form",
                             "--form", "F", "--wrt", "u", "--dir", "du")
        assert code == 0
        assert "grad(du)" in out


class TestGraph:
    def test_seven_vertex_graph(self, tmp_path, capsys):
        path = tmp_path / "fig.form"
        path.write_text(
            "gamma = Constant(triangle)\n"
            "kappa = Constant(triangle)\n"
            "h = Constant(triangle)\n"
            "M = gamma*avg(kappa)/avg(h)*dS\n"
        )
        out_path = tmp_path / "fig.dot"
        code, out, err = run(capsys, "graph", str(path), "--form", "M",
                             "-o", str(out_path))
        assert code == 0
        text = out_path.read_text()
        assert text.count("label=") == 7

    def test_single_terminal_graph(self, tmp_path, capsys):
        path = tmp_path / "m.form"
        path.write_text("c = Constant(interval)\nM = c*dx\n")
        out_path = tmp_path / "m.dot"
        code, out, err = run(capsys, "graph", str(path), "--form", "M",
                             "-o", str(out_path))
        assert code == 0
        text = out_path.read_text()
        assert text.count("label=") == 1
        assert "->" not in text

    def test_deterministic_output(self, tmp_path, capsys):
        src = tmp_path / "m.form"
        src.write_text(
            'E = FiniteElement("Lagrange", triangle, 2)\n'
            "u = TrialFunction(E)\n"
            "v = TestFunction(E)\n"
            "kappa = Coefficient(E)\n"
            "a = kappa*inner(grad(u), grad(v))*dx\n"
        )
        p1, p2 = tmp_path / "a.dot", tmp_path / "b.dot"
        run(capsys, "graph", str(src), "--form", "a", "-o", str(p1))
        run(capsys, "graph", str(src), "--form", "a", "-o", str(p2))
        assert p1.read_bytes() == p2.read_bytes()

    def test_no_dedup_expands_tree(self, tmp_path, capsys):
        path = tmp_path / "m.form"
        path.write_text(
            "c = Constant(interval)\n"
            "d = Constant(interval)\n"
            "M = (c + d)*(c + d)*dx\n"
        )
        dedup, tree = tmp_path / "dedup.dot", tmp_path / "tree.dot"
        run(capsys, "graph", str(path), "--form", "M", "-o", str(dedup))
        run(capsys, "graph", str(path), "--form", "M", "-o", str(tree),
            "--no-dedup")
        assert dedup.read_text().count("label=") == 4
        assert tree.read_text().count("label=") == 7


class TestEval:
    def test_polynomial(self, tmp_path, capsys):
        path = tmp_path / "m.form"
        path.write_text(
            "x = SpatialCoordinate(interval)\n"
            "M = 3*x[0]**2*dx\n"
        )
        code, out, err = run(capsys, "eval", str(path), "--form", "M",
                             "--mesh", "interval:0:1:4")
        assert code == 0
        assert float(out.strip()) == pytest.approx(1.0, abs=1e-14)

    def test_env_bound_derivative(self, tmp_path, capsys):
        path = tmp_path / "m.form"
        path.write_text(
            'E = FiniteElement("Lagrange", interval, 3)\n'
            "f = Coefficient(E)\n"
            "M = Dx(f, 0)*dx\n"
        )
        env = tmp_path / "m.env"
        env.write_text("f = sin(pi*x[0])\n")
        code, out, err = run(capsys, "eval", str(path), "--form", "M",
                             "--env", str(env), "--mesh", "interval:0:1:16",
                             "--degree", "9")
        assert code == 0
        assert abs(float(out.strip())) < 1e-10

    def test_eval_bilinear_errors(self, capsys):
        code, out, err = run(capsys, "eval", f"{CORPUS}/poisson_h1.form",
                             "--form", "a", "--mesh", "unitsquare:1")
        assert code == 1
        assert "ArityError" in err

    def test_unbound_coefficient_reported(self, tmp_path, capsys):
        path = tmp_path / "m.form"
        path.write_text(
            'E = FiniteElement("Lagrange", interval, 1)\n'
            "f = Coefficient(E)\n"
            "M = f*dx\n"
        )
        code, out, err = run(capsys, "eval", str(path), "--form", "M",
                             "--mesh", "interval:0:1:2")
        assert code == 1
        assert "UnboundTerminal" in err

    def test_seventeen_digits(self, tmp_path, capsys):
        path = tmp_path / "m.form"
        path.write_text(
            "x = SpatialCoordinate(interval)\n"
            "M = x[0]*x[0]*x[0]*dx\n"
        )
        code, out, err = run(capsys, "eval", str(path), "--form", "M",
                             "--mesh", "interval:0:1:3", "--degree", "3")
        assert code == 0
        value = float(out.strip())
        assert value == pytest.approx(0.25, abs=1e-15)
