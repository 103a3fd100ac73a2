"""Command-line driver: check, show, diff, graph and eval workflows.

Exit codes: 0 on success, 1 on language or validation errors, 2 on I/O or
usage failures.
"""

from __future__ import annotations

import argparse
import sys

from . import core, forms
from .differentiation import apply_derivatives
from .errors import ArityError, FormLangError, UnboundTerminal
from .evaluator import EvalEnv, integrate_functional
from .dot import dag_to_dot
from .frontend import SourceModule, parse_bindings, parse_file
from .mesh import parse_mesh_spec
from .printing import ExprPrinter, print_module

OK, LANGUAGE_ERROR, USAGE_ERROR = 0, 1, 2


def _emit(module_path, diagnostic, stream=None):
    stream = stream or sys.stderr
    print(f"{module_path}:{diagnostic}", file=stream)


def _load(path):
    try:
        module = parse_file(path)
    except OSError as err:
        print(f"error: cannot read {path}: {err}", file=sys.stderr)
        return None, USAGE_ERROR
    code = OK
    for diag in module.diagnostics:
        _emit(path, diag)
        if diag.severity == "error":
            code = LANGUAGE_ERROR
    return module, code


def _validation_code(path, module: SourceModule) -> int:
    code = OK
    for name, form in module.exports.items():
        report = forms.validate_form(form)
        span = module.span_of(name)
        for issue in report:
            where = span if span is not None else "1:1-1:1"
            print(f"{path}:{where}: error: {issue}", file=sys.stderr)
            code = LANGUAGE_ERROR
    return code


def _resolve_form(module: SourceModule, name, path):
    if name is None:
        if len(module.exports) == 1:
            return next(iter(module.exports.values()))
        print(f"error: {path} exports {sorted(module.exports)}; pick one with --form",
              file=sys.stderr)
        return None
    value = module.names.get(name)
    if not isinstance(value, forms.Form):
        print(f"error: no form named {name!r} in {path}", file=sys.stderr)
        return None
    return value


def _module_names(module: SourceModule) -> dict:
    names = {}
    for stmt in module.statements:
        if isinstance(stmt.value, core.Expr) and stmt.value not in names:
            names[stmt.value] = stmt.name
        from .elements import Element

        if isinstance(stmt.value, Element) and stmt.value not in names:
            names[stmt.value] = stmt.name
    return names


def cmd_check(args) -> int:
    module, code = _load(args.file)
    if module is None:
        return USAGE_ERROR
    if code == OK:
        code = _validation_code(args.file, module)
    if code == OK:
        names = ", ".join(module.exports) or "none"
        print(f"{args.file}: ok (exported forms: {names})")
    return code


def cmd_show(args) -> int:
    module, code = _load(args.file)
    if module is None:
        return USAGE_ERROR
    if code != OK:
        return code
    if args.form is None and not args.module:
        args.form = None
    if args.module:
        sys.stdout.write(print_module(module))
        return OK
    form = _resolve_form(module, args.form, args.file)
    if form is None:
        return USAGE_ERROR
    printer = ExprPrinter(_module_names(module))
    name = args.form or next(iter(module.exports))
    print(f"{name} = {printer.form(form)}")
    return OK


def cmd_diff(args) -> int:
    module, code = _load(args.file)
    if module is None:
        return USAGE_ERROR
    if code != OK:
        return code
    form = _resolve_form(module, args.form, args.file)
    if form is None:
        return USAGE_ERROR
    target = module.names.get(args.wrt)
    direction = module.names.get(args.dir)
    if not isinstance(target, core.Expr) or target.kind not in (
        core.COEFFICIENT, core.CONSTANT
    ):
        print(f"error: {args.wrt!r} is not a coefficient in {args.file}",
              file=sys.stderr)
        return LANGUAGE_ERROR
    if not isinstance(direction, core.Expr) or direction.kind is not core.ARGUMENT:
        print(f"error: {args.dir!r} is not an argument function in {args.file}",
              file=sys.stderr)
        return LANGUAGE_ERROR
    try:
        derived = forms.derivative(form, target, direction)
    except FormLangError as err:
        print(f"error: {type(err).__name__}: {err}", file=sys.stderr)
        return LANGUAGE_ERROR
    printer = ExprPrinter(_module_names(module))
    if derived.is_empty:
        print("0")
    else:
        print(printer.form(derived))
    return OK


def cmd_graph(args) -> int:
    module, code = _load(args.file)
    if module is None:
        return USAGE_ERROR
    if code != OK:
        return code
    form = _resolve_form(module, args.form, args.file)
    if form is None:
        return USAGE_ERROR
    roots = [itg.integrand for itg in form.integrals]
    text = dag_to_dot(roots, dedup=not args.no_dedup)
    try:
        with open(args.output, "w", encoding="utf-8") as handle:
            handle.write(text)
    except OSError as err:
        print(f"error: cannot write {args.output}: {err}", file=sys.stderr)
        return USAGE_ERROR
    print(f"wrote {args.output}")
    return OK


def cmd_eval(args) -> int:
    module, code = _load(args.file)
    if module is None:
        return USAGE_ERROR
    if code != OK:
        return code
    form = _resolve_form(module, args.form, args.file)
    if form is None:
        return USAGE_ERROR
    cell = form.cell()
    if cell is None:
        print("error: the form has no spatial content to integrate", file=sys.stderr)
        return LANGUAGE_ERROR
    try:
        mesh = parse_mesh_spec(args.mesh)
    except FormLangError as err:
        print(f"error: {err}", file=sys.stderr)
        return USAGE_ERROR
    env = EvalEnv()
    if args.env:
        try:
            with open(args.env, "r", encoding="utf-8") as handle:
                source = handle.read()
        except OSError as err:
            print(f"error: cannot read {args.env}: {err}", file=sys.stderr)
            return USAGE_ERROR
        bindings, diags = parse_bindings(source, cell)
        bad = False
        for diag in diags:
            _emit(args.env, diag)
            bad = bad or diag.severity == "error"
        if bad:
            return LANGUAGE_ERROR
        env = _bind_by_name(module, form, bindings, env)
        if env is None:
            return LANGUAGE_ERROR
    try:
        value = integrate_functional(form, mesh, env, degree=args.degree)
    except ArityError as err:
        print(f"error: ArityError: {err}", file=sys.stderr)
        return LANGUAGE_ERROR
    except UnboundTerminal as err:
        print(f"error: UnboundTerminal: {err}", file=sys.stderr)
        return LANGUAGE_ERROR
    except FormLangError as err:
        print(f"error: {type(err).__name__}: {err}", file=sys.stderr)
        return LANGUAGE_ERROR
    print(f"{value:.17g}")
    return OK


def _bind_by_name(module, form, bindings, env):
    named = {stmt.name: stmt.value for stmt in module.statements}
    for name, value in bindings.items():
        terminal = named.get(name)
        if terminal is None or not isinstance(terminal, core.Expr):
            print(f"error: env binds {name!r}, which is not a function in the module",
                  file=sys.stderr)
            return None
        bound = core.as_expr(value) if isinstance(value, (int, float)) else value
        if bound.shape != terminal.shape:
            print(f"error: env binding for {name!r} has shape {bound.shape}, "
                  f"expected {terminal.shape}", file=sys.stderr)
            return None
        env = env.bound(terminal, bound)
    return env


def build_arg_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="formlang",
        description="Check, inspect, differentiate, graph and evaluate "
                    "variational form files.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("check", help="parse and validate every exported form")
    p.add_argument("file")
    p.set_defaults(fn=cmd_check)

    p = sub.add_parser("show", help="print the canonical text of a form")
    p.add_argument("file")
    p.add_argument("--form", default=None)
    p.add_argument("--module", action="store_true",
                   help="print the whole module instead")
    p.set_defaults(fn=cmd_show)

    p = sub.add_parser("diff", help="differentiate a form and print the result")
    p.add_argument("file")
    p.add_argument("--form", required=True)
    p.add_argument("--wrt", required=True, help="coefficient name")
    p.add_argument("--dir", required=True, help="direction argument name")
    p.set_defaults(fn=cmd_diff)

    p = sub.add_parser("graph", help="write a DOT graph of a form's integrands")
    p.add_argument("file")
    p.add_argument("--form", required=True)
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--no-dedup", action="store_true",
                   help="one node per tree occurrence instead of per DAG vertex")
    p.set_defaults(fn=cmd_graph)

    p = sub.add_parser("eval", help="integrate a functional over a mini mesh")
    p.add_argument("file")
    p.add_argument("--form", required=True)
    p.add_argument("--env", default=None, help="file binding coefficients to "
                                               "closed-form expressions of x")
    p.add_argument("--mesh", required=True, help="interval:a:b:n or unitsquare:n")
    p.add_argument("--degree", type=int, default=None)
    p.set_defaults(fn=cmd_eval)

    return parser


def main(argv=None) -> int:
    parser = build_arg_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as err:
        return USAGE_ERROR if err.code else OK
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
