"""Parser for the `.form` surface syntax.

A module is a sequence of single-assignment statements `name = expr`,
with `#` comments, newline-terminated statements (newlines are ignored
inside parentheses/brackets and after a binary operator), and a fixed
builtin namespace of cells, measures, predefined indices and operator
functions. Parsing builds interned expression DAGs directly, so all
shape/index validation and simplification happens at parse time.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from . import core, elements, forms, indexing, operators
from .cells import CELLS
from .core import Expr, FRONTEND_INDEX_POOL_BASE, Index, index_name
from .elements import Element
from .errors import FormLangError
from .forms import Form, Measure

import math


# --- diagnostics ------------------------------------------------------------------

@dataclass(frozen=True)
class Span:
    line0: int
    col0: int
    line1: int
    col1: int

    def __str__(self):
        return f"{self.line0}:{self.col0}-{self.line1}:{self.col1}"


@dataclass(frozen=True)
class Diagnostic:
    severity: str          # "error" or "warning"
    message: str
    span: Span

    def __str__(self):
        return f"{self.span}: {self.severity}: {self.message}"


class _Poisoned:
    """Placeholder bound to names whose definition failed."""


POISONED = _Poisoned()


# --- tokens -----------------------------------------------------------------------

_OPERATORS = ("**", "+", "-", "*", "/", "(", ")", "[", "]", ",", "=", ":")
_CONTINUE_AFTER = {"**", "+", "-", "*", "/", ",", "=", "(", "[", ":"}


@dataclass(frozen=True)
class Token:
    type: str       # NAME INT FLOAT STRING OP NEWLINE EOF
    value: str
    line: int
    col: int

    @property
    def end_col(self):
        return self.col + max(len(str(self.value)), 1)


class SyntaxDiagnostic(FormLangError):
    def __init__(self, message, token: Token):
        super().__init__(message)
        self.token = token


def tokenize(source: str):
    tokens = []
    line, col = 1, 1
    depth = 0
    n = len(source)
    pos = 0

    def previous_allows_newline():
        if not tokens:
            return True
        last = tokens[-1]
        if last.type == "NEWLINE":
            return True
        return last.type == "OP" and last.value in _CONTINUE_AFTER

    while pos < n:
        ch = source[pos]
        if ch == "#":
            while pos < n and source[pos] != "\n":
                pos += 1
            continue
        if ch == "\n":
            if depth == 0 and not previous_allows_newline():
                tokens.append(Token("NEWLINE", "\n", line, col))
            pos += 1
            line += 1
            col = 1
            continue
        if ch in " \t\r":
            pos += 1
            col += 1
            continue
        if ch.isdigit():
            start = pos
            start_col = col
            while pos < n and source[pos].isdigit():
                pos += 1
            is_float = False
            if pos < n and source[pos] == "." and pos + 1 < n and source[pos + 1].isdigit():
                is_float = True
                pos += 1
                while pos < n and source[pos].isdigit():
                    pos += 1
            if pos < n and source[pos] in "eE":
                look = pos + 1
                if look < n and source[look] in "+-":
                    look += 1
                if look < n and source[look].isdigit():
                    is_float = True
                    pos = look
                    while pos < n and source[pos].isdigit():
                        pos += 1
            text = source[start:pos]
            col += len(text)
            tokens.append(Token("FLOAT" if is_float else "INT", text, line, start_col))
            continue
        if ch.isalpha() or ch == "_":
            start = pos
            start_col = col
            while pos < n and (source[pos].isalnum() or source[pos] == "_"):
                pos += 1
            text = source[start:pos]
            col += len(text)
            tokens.append(Token("NAME", text, line, start_col))
            continue
        if ch in "'\"":
            quote = ch
            start_col = col
            pos += 1
            col += 1
            start = pos
            while pos < n and source[pos] != quote:
                if source[pos] == "\n":
                    raise SyntaxDiagnostic("unterminated string",
                                           Token("STRING", "", line, start_col))
                pos += 1
                col += 1
            if pos >= n:
                raise SyntaxDiagnostic("unterminated string",
                                       Token("STRING", "", line, start_col))
            text = source[start:pos]
            pos += 1
            col += 1
            tokens.append(Token("STRING", text, line, start_col))
            continue
        matched = None
        for op in _OPERATORS:
            if source.startswith(op, pos):
                matched = op
                break
        if matched is None:
            raise SyntaxDiagnostic(f"unexpected character {ch!r}",
                                   Token("OP", ch, line, col))
        if matched in "([":
            depth += 1
        elif matched in ")]":
            depth = max(0, depth - 1)
        tokens.append(Token("OP", matched, line, col))
        pos += len(matched)
        col += len(matched)
    tokens.append(Token("EOF", "", line, col))
    return tokens


# --- builtins -----------------------------------------------------------------------

@dataclass(frozen=True)
class Builtin:
    name: str
    fn: object
    ctor: bool = False   # constructors must be a whole statement right side


class _Slice:
    """Sentinel for a full slice ':' inside subscripts."""


FULL_SLICE = _Slice()


def _plain(fn):
    return lambda parser, args: fn(*args)


def _expr_args(fn):
    def call(parser, args):
        return fn(*[core.as_expr(a) if isinstance(a, (int, float)) else a
                    for a in args])
    return call


def _make_builtins():
    table = {}

    def register(name, fn, ctor=False):
        table[name] = Builtin(name, fn, ctor)

    # element constructors
    register("FiniteElement", _plain(elements.FiniteElement))
    register("VectorElement", _plain(elements.VectorElement))
    register("TensorElement", _plain(elements.TensorElement))
    register("MixedElement", _plain(elements.MixedElement))
    register("EnrichedElement", _plain(elements.EnrichedElement))
    register("RestrictedElement", _plain(elements.RestrictedElement))

    # function constructors (parser-managed counts and labels)
    def coefficient(parser, args):
        return parser.make_function(core.coefficient, args)

    def const(parser, args):
        return parser.make_function(core.constant, args)

    register("Coefficient", coefficient, ctor=True)
    register("Constant", const, ctor=True)
    register("TestFunction", _plain(core.test_function), ctor=True)
    register("TrialFunction", _plain(core.trial_function), ctor=True)
    register("Argument", _plain(core.argument), ctor=True)

    def variable(parser, args):
        (e,) = args
        return core.variable(core.as_expr(e), parser.next_label())

    register("variable", variable, ctor=True)

    def index_ctor(parser, args):
        if not args:
            return parser.draw_index()
        (n,) = args
        return Index(int(n))

    register("Index", index_ctor, ctor=True)

    # geometric quantities and literals
    register("SpatialCoordinate", _plain(core.spatial_coordinate))
    register("FacetNormal", _plain(core.facet_normal))
    register("CellVolume", _plain(core.cell_volume))
    register("Circumradius", _plain(core.circumradius))
    register("FacetArea", _plain(core.facet_area))
    register("CellSurfaceArea", _plain(core.cell_surface_area))
    register("Identity", _plain(core.identity))
    register("PermutationSymbol", _plain(core.permutation_symbol))
    register("unit_vector", _plain(core.unit_vector))

    def zeros(parser, args):
        return core.annotated_zero(tuple(int(a) for a in args))

    register("zeros", zeros)

    # index notation
    register("as_vector", _expr_args(indexing.as_vector))
    register("as_matrix", _expr_args(indexing.as_matrix))
    register("as_tensor", _expr_args(indexing.as_tensor))
    register("index_sum", _expr_args(indexing.index_sum))

    # operators
    for name, fn in [
        ("grad", operators.grad), ("nabla_grad", operators.nabla_grad),
        ("div", operators.div), ("nabla_div", operators.nabla_div),
        ("curl", operators.curl), ("rot", operators.rot),
        ("Dn", operators.Dn),
        ("dot", operators.dot), ("inner", operators.inner),
        ("outer", operators.outer), ("cross", operators.cross),
        ("transpose", operators.transpose), ("sym", operators.sym),
        ("skew", operators.skew), ("dev", operators.dev),
        ("tr", operators.tr), ("det", operators.det),
        ("cofac", operators.cofac), ("inv", operators.inv),
        ("diag", operators.diag), ("diag_vector", operators.diag_vector),
        ("elem_mult", operators.elem_mult), ("elem_div", operators.elem_div),
        ("elem_pow", operators.elem_pow),
        ("sqrt", operators.sqrt), ("exp", operators.exp), ("ln", operators.ln),
        ("abs", operators.abs_), ("sign", operators.sign),
        ("cos", operators.cos), ("sin", operators.sin), ("tan", operators.tan),
        ("acos", operators.acos), ("asin", operators.asin),
        ("atan", operators.atan), ("erf", operators.erf),
        ("bessel_J", operators.bessel_J), ("bessel_Y", operators.bessel_Y),
        ("bessel_I", operators.bessel_I), ("bessel_K", operators.bessel_K),
        ("pow", operators.power),
        ("avg", operators.avg), ("jump", operators.jump),
        ("conditional", operators.conditional),
        ("eq", operators.eq), ("ne", operators.ne), ("le", operators.le),
        ("ge", operators.ge), ("lt", operators.lt), ("gt", operators.gt),
        ("And", operators.logical_and), ("Or", operators.logical_or),
        ("Not", operators.logical_not),
        ("diff", operators.diff),
        ("exterior_derivative", operators.exterior_derivative),
    ]:
        register(name, _expr_args(fn))

    # Dx keeps its index argument as an index, not an expression.
    register("Dx", _plain(operators.Dx))

    def elem_op(parser, args):
        fn = args[0]
        if isinstance(fn, Builtin):
            wrapped = lambda *xs: fn.fn(parser, list(xs))
        else:
            raise FormLangError("elem_op expects an operator name first")
        return operators.elem_op(wrapped, *args[1:])

    register("elem_op", elem_op)

    # form operators
    register("derivative", _plain(forms.derivative))
    register("lhs", _plain(forms.lhs))
    register("rhs", _plain(forms.rhs))
    register("action", _plain(forms.action))
    register("adjoint", _plain(forms.adjoint))

    return table


BUILTIN_FUNCTIONS = _make_builtins()

BUILTIN_VALUES = {
    **CELLS,
    "dx": forms.dx,
    "ds": forms.ds,
    "dS": forms.dS,
    "pi": math.pi,
    **core.predefined_indices(),
    **{index_name(n): Index(n) for n in range(FRONTEND_INDEX_POOL_BASE, 64)},
}


# --- modules -------------------------------------------------------------------------

@dataclass
class Statement:
    name: str
    value: object
    span: Span


@dataclass
class SourceModule:
    source: str
    filename: str
    statements: list = field(default_factory=list)
    names: dict = field(default_factory=dict)
    diagnostics: list = field(default_factory=list)
    exports: dict = field(default_factory=dict)
    element_exports: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return not any(d.severity == "error" for d in self.diagnostics)

    def form(self, name: str) -> Form:
        value = self.names.get(name)
        if not isinstance(value, Form):
            raise FormLangError(f"{name!r} is not a form in this module")
        return value

    def span_of(self, name: str) -> Span | None:
        for stmt in self.statements:
            if stmt.name == name:
                return stmt.span
        return None


_EXPORT_NAMES = ("a", "L", "M", "F", "J")


# --- operator dispatch over parser values -----------------------------------------------

def _is_exprish(v):
    return isinstance(v, Expr) or (isinstance(v, (int, float))
                                   and not isinstance(v, bool))


def _binary(op, a, b):
    if isinstance(a, _Poisoned) or isinstance(b, _Poisoned):
        return POISONED
    if op == "+":
        if isinstance(a, Element) and isinstance(b, Element):
            return a + b
        if isinstance(a, Form) and isinstance(b, Form):
            return a + b
        if _is_exprish(a) and _is_exprish(b):
            return operators.add(core.as_expr(a), core.as_expr(b))
    elif op == "-":
        if isinstance(a, Form) and isinstance(b, Form):
            return a - b
        if _is_exprish(a) and _is_exprish(b):
            return operators.sub(core.as_expr(a), core.as_expr(b))
    elif op == "*":
        if isinstance(b, Measure) and _is_exprish(a):
            return forms.make_integral(core.as_expr(a), b)
        if isinstance(a, Element) and isinstance(b, Element):
            return a * b
        if _is_exprish(a) and _is_exprish(b):
            return operators.star(core.as_expr(a), core.as_expr(b))
    elif op == "/":
        if _is_exprish(a) and _is_exprish(b):
            return operators.divide(core.as_expr(a), core.as_expr(b))
    elif op == "**":
        if _is_exprish(a) and _is_exprish(b):
            return operators.power(core.as_expr(a), core.as_expr(b))
    raise FormLangError(
        f"operator {op!r} is not defined for {_type_name(a)} and {_type_name(b)}"
    )


def _type_name(v):
    if isinstance(v, Expr):
        return "expression"
    if isinstance(v, Form):
        return "form"
    if isinstance(v, Element):
        return "element"
    if isinstance(v, Measure):
        return "measure"
    return type(v).__name__


# --- the parser --------------------------------------------------------------------------

class Parser:
    def __init__(self, tokens, module: SourceModule, extra_names=None):
        self.tokens = tokens
        self.pos = 0
        self.module = module
        self.extra_names = dict(extra_names or {})
        self.coefficient_count = 0
        self.label_count = 0
        self.index_pool = FRONTEND_INDEX_POOL_BASE
        self.created = []

    # token plumbing

    def peek(self) -> Token:
        return self.tokens[self.pos]

    def advance(self) -> Token:
        tok = self.tokens[self.pos]
        if tok.type != "EOF":
            self.pos += 1
        return tok

    def match_op(self, *ops):
        tok = self.peek()
        if tok.type == "OP" and tok.value in ops:
            return self.advance()
        return None

    def expect_op(self, op):
        tok = self.peek()
        if tok.type == "OP" and tok.value == op:
            return self.advance()
        raise SyntaxDiagnostic(f"expected {op!r}, found {tok.value!r}", tok)

    # name management

    def make_function(self, ctor, args):
        value = ctor(*args, count=self.coefficient_count)
        self.coefficient_count += 1
        return value

    def next_label(self) -> int:
        label = self.label_count
        self.label_count += 1
        return label

    def draw_index(self) -> Index:
        if self.index_pool >= 64:
            raise FormLangError("too many anonymous indices in one module")
        idx = Index(self.index_pool)
        self.index_pool += 1
        return idx

    def lookup(self, tok: Token):
        name = tok.value
        if name in self.module.names:
            return self.module.names[name]
        if name in self.extra_names:
            return self.extra_names[name]
        if name in BUILTIN_VALUES:
            return BUILTIN_VALUES[name]
        if name in BUILTIN_FUNCTIONS:
            return BUILTIN_FUNCTIONS[name]
        if name.startswith("ii") and name[2:].isdigit():
            # Index names outside the predefined set address their id directly.
            return Index(int(name[2:]))
        raise SyntaxDiagnostic(f"undefined name {name!r}", tok)

    # statements

    def parse_module(self):
        while True:
            while self.match_newline():
                pass
            if self.peek().type == "EOF":
                break
            self.parse_statement()
        self.finish_exports()

    def match_newline(self):
        tok = self.peek()
        if tok.type == "NEWLINE":
            self.advance()
            return True
        return False

    def skip_to_newline(self):
        while self.peek().type not in ("NEWLINE", "EOF"):
            self.advance()

    def diag(self, message, span, severity="error"):
        self.module.diagnostics.append(Diagnostic(severity, message, span))

    def token_span(self, tok: Token) -> Span:
        return Span(tok.line, tok.col, tok.line, tok.end_col)

    def parse_statement(self):
        start = self.peek()
        try:
            name_tok = self.advance()
            if name_tok.type != "NAME":
                raise SyntaxDiagnostic(
                    f"expected a name to assign, found {name_tok.value!r}", name_tok
                )
            self.expect_op("=")
            self.created = []
            value = self.parse_expr()
            end = self.tokens[self.pos - 1]
            tok = self.peek()
            if tok.type not in ("NEWLINE", "EOF"):
                raise SyntaxDiagnostic(
                    f"unexpected {tok.value!r} after the expression", tok
                )
            span = Span(start.line, start.col, end.line, end.end_col)
            if name_tok.value in self.module.names:
                self.diag(f"name {name_tok.value!r} is already defined "
                          "(single assignment only)", span)
                return
            if self.created and not (len(self.created) == 1
                                     and self.created[0] is value):
                self.diag(
                    "function, variable and index constructors must form the "
                    "whole right-hand side of their statement", span,
                )
                return
            if isinstance(value, _Poisoned):
                self.module.names[name_tok.value] = POISONED
                return
            self.module.names[name_tok.value] = value
            self.module.statements.append(Statement(name_tok.value, value, span))
        except SyntaxDiagnostic as err:
            self.diag(str(err), self.token_span(err.token))
            if start.type == "NAME" and start.value not in self.module.names:
                self.module.names[start.value] = POISONED
            self.skip_to_newline()
        except FormLangError as err:
            end = self.tokens[max(self.pos - 1, 0)]
            span = Span(start.line, start.col, end.line, end.end_col)
            self.diag(f"{type(err).__name__}: {err}", span)
            if start.type == "NAME" and start.value not in self.module.names:
                self.module.names[start.value] = POISONED
            self.skip_to_newline()

    # expressions (precedence climbing)

    def parse_expr(self):
        return self.parse_additive()

    def parse_additive(self):
        value = self.parse_multiplicative()
        while True:
            tok = self.match_op("+", "-")
            if tok is None:
                return value
            rhs = self.parse_multiplicative()
            value = _binary(tok.value, value, rhs)

    def parse_multiplicative(self):
        value = self.parse_unary()
        while True:
            tok = self.match_op("*", "/")
            if tok is None:
                return value
            rhs = self.parse_unary()
            value = _binary(tok.value, value, rhs)

    def parse_unary(self):
        tok = self.peek()
        if tok.type == "OP" and tok.value == "-":
            self.advance()
            operand = self.parse_unary()
            if isinstance(operand, _Poisoned):
                return POISONED
            if isinstance(operand, (int, float)):
                return -operand
            if isinstance(operand, Expr):
                return operators.neg(operand)
            if isinstance(operand, Form):
                return -operand
            raise SyntaxDiagnostic(f"cannot negate a {_type_name(operand)}", tok)
        return self.parse_power()

    def parse_power(self):
        base = self.parse_postfix()
        if self.match_op("**"):
            exponent = self.parse_unary()
            return _binary("**", base, exponent)
        return base

    def parse_postfix(self):
        value = self.parse_primary()
        while True:
            tok = self.peek()
            if tok.type != "OP" or tok.value not in ("(", "["):
                return value
            if tok.value == "(":
                value = self.parse_call(value, tok)
            else:
                value = self.parse_subscript(value, tok)

    def parse_call(self, target, tok):
        self.expect_op("(")
        args = []
        if not self.match_op(")"):
            while True:
                args.append(self.parse_tuple_item())
                if self.match_op(","):
                    if self.match_op(")"):
                        break
                    continue
                self.expect_op(")")
                break
        if isinstance(target, _Poisoned) or any(isinstance(a, _Poisoned) for a in args):
            return POISONED
        if isinstance(target, Builtin):
            value = target.fn(self, args)
            if target.ctor:
                self.created.append(value)
            return value
        if isinstance(target, Measure):
            if len(args) != 1 or not isinstance(args[0], int):
                raise SyntaxDiagnostic("a measure takes one integer subdomain id", tok)
            return target(args[0])
        if isinstance(target, Expr):
            if len(args) != 1 or args[0] not in ("+", "-"):
                raise SyntaxDiagnostic(
                    "restriction expects a single side string '+' or '-'", tok
                )
            return operators.restrict(target, args[0])
        raise SyntaxDiagnostic(f"a {_type_name(target)} is not callable", tok)

    def parse_tuple_item(self):
        return self.parse_expr()

    def parse_subscript(self, target, tok):
        self.expect_op("[")
        items = []
        while True:
            if self.match_op(":"):
                items.append(FULL_SLICE)
            else:
                items.append(self.parse_expr())
            if self.match_op(","):
                continue
            self.expect_op("]")
            break
        if isinstance(target, _Poisoned) or any(isinstance(x, _Poisoned) for x in items):
            return POISONED
        if isinstance(target, Element):
            if len(items) != 1 or not isinstance(items[0], (str,)):
                raise SyntaxDiagnostic(
                    "element restriction expects a domain string", tok
                )
            return target[items[0]]
        if isinstance(target, Expr):
            subscripts = [
                slice(None) if isinstance(x, _Slice) else x for x in items
            ]
            return indexing.expand_slices(target, subscripts, fresh=self.draw_index)
        raise SyntaxDiagnostic(f"cannot index a {_type_name(target)}", tok)

    def parse_primary(self):
        tok = self.peek()
        if tok.type == "EOF" or tok.type == "NEWLINE":
            prev = self.tokens[max(self.pos - 1, 0)]
            raise SyntaxDiagnostic(
                f"expression ends unexpectedly after {prev.value!r}", prev
            )
        if tok.type == "NAME":
            self.advance()
            return self.lookup(tok)
        if tok.type == "INT":
            self.advance()
            return int(tok.value)
        if tok.type == "FLOAT":
            self.advance()
            return float(tok.value)
        if tok.type == "STRING":
            self.advance()
            return tok.value
        if tok.type == "OP" and tok.value == "(":
            self.advance()
            first = self.parse_expr()
            if self.match_op(","):
                items = [first]
                if not self.match_op(")"):
                    while True:
                        items.append(self.parse_expr())
                        if self.match_op(","):
                            if self.match_op(")"):
                                break
                            continue
                        self.expect_op(")")
                        break
                return tuple(items)
            self.expect_op(")")
            return first
        if tok.type == "OP" and tok.value == "[":
            self.advance()
            items = []
            if not self.match_op("]"):
                while True:
                    items.append(self.parse_expr())
                    if self.match_op(","):
                        continue
                    self.expect_op("]")
                    break
            return items
        raise SyntaxDiagnostic(f"unexpected {tok.value!r}", tok)

    # exports

    def finish_exports(self):
        names = self.module.names
        if isinstance(names.get("forms"), list):
            value_names = {}
            for stmt in self.module.statements:
                if isinstance(stmt.value, Form) and stmt.value not in value_names:
                    value_names[stmt.value] = stmt.name
            for n, form in enumerate(names["forms"]):
                if not isinstance(form, Form):
                    self.diag("the forms list may only contain forms",
                              self.module.span_of("forms") or Span(1, 1, 1, 1))
                    continue
                self.module.exports[value_names.get(form, f"form{n}")] = form
        else:
            for stmt in self.module.statements:
                if stmt.name in _EXPORT_NAMES and isinstance(stmt.value, Form):
                    self.module.exports[stmt.name] = stmt.value
        if isinstance(names.get("elements"), list):
            for n, elem in enumerate(names["elements"]):
                if isinstance(elem, Element):
                    self.module.element_exports[f"element{n}"] = elem


def parse(source: str, filename: str = "<string>", extra_names=None) -> SourceModule:
    """Parse a `.form` module; diagnostics are collected, not raised."""
    module = SourceModule(source, filename)
    try:
        tokens = tokenize(source)
    except SyntaxDiagnostic as err:
        module.diagnostics.append(
            Diagnostic("error", str(err),
                       Span(err.token.line, err.token.col,
                            err.token.line, err.token.end_col))
        )
        return module
    Parser(tokens, module, extra_names).parse_module()
    return module


def parse_file(path, extra_names=None) -> SourceModule:
    with open(path, "r", encoding="utf-8") as handle:
        source = handle.read()
    return parse(source, filename=str(path), extra_names=extra_names)


def parse_bindings(source: str, cell, filename: str = "<env>") -> tuple:
    """Parse an environment file: names bound to closed-form expressions of
    the spatial coordinate (plus literals and constants)."""
    extra = {"x": core.spatial_coordinate(cell)}
    module = parse(source, filename=filename, extra_names=extra)
    bindings = {}
    for stmt in module.statements:
        if isinstance(stmt.value, (Expr, int, float)):
            bindings[stmt.name] = stmt.value
    return bindings, module.diagnostics
