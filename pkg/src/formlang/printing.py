"""Canonical text for expressions, forms and source modules.

The printed text is deterministic across sessions: commutative operands
are ordered by their printed form, never by interner ids, and parsing the
output reconstructs structurally identical DAGs (sums and products keep
their nesting through explicit parentheses, implicit summation is printed
in the exact shape the `*` operator rebuilds).
"""

from __future__ import annotations

from . import core
from .cells import Cell
from .core import Expr, FixedIndex, Index, index_name
from .elements import (
    Element,
    EnrichedElement,
    FiniteElement,
    MixedElement,
    RestrictedElement,
    TensorElement,
    VectorElement,
)
from .errors import Unsupported
from .forms import Form, Measure

ADD, MUL, UNARY, POW, POSTFIX, ATOM = 1, 2, 3, 4, 5, 6

_FUNCTION_NAMES = {
    core.SQRT: "sqrt", core.EXP: "exp", core.LN: "ln", core.ABS: "abs",
    core.SIGN: "sign", core.COS: "cos", core.SIN: "sin", core.TAN: "tan",
    core.ACOS: "acos", core.ASIN: "asin", core.ATAN: "atan", core.ERF: "erf",
    core.BESSEL_J: "bessel_J", core.BESSEL_Y: "bessel_Y",
    core.BESSEL_I: "bessel_I", core.BESSEL_K: "bessel_K",
    core.DOT: "dot", core.INNER: "inner", core.OUTER: "outer",
    core.CROSS: "cross", core.TRANSPOSE: "transpose", core.SYM: "sym",
    core.SKEW: "skew", core.DEV: "dev", core.TRACE: "tr",
    core.DETERMINANT: "det", core.COFACTOR: "cofac", core.INVERSE: "inv",
    core.DIAG: "diag", core.DIAG_VECTOR: "diag_vector",
    core.GRAD: "grad", core.NABLA_GRAD: "nabla_grad",
    core.DIVERGENCE: "div", core.NABLA_DIV: "nabla_div", core.CURL: "curl",
    core.EXTERIOR_DERIVATIVE: "exterior_derivative",
    core.AVG: "avg", core.CONDITIONAL: "conditional",
    core.EQ: "eq", core.NE: "ne", core.LE: "le", core.GE: "ge",
    core.LT: "lt", core.GT: "gt",
    core.AND: "And", core.OR: "Or", core.NOT: "Not",
}

_GEOMETRY_NAMES = {
    core.SPATIAL_COORDINATE: "SpatialCoordinate",
    core.FACET_NORMAL: "FacetNormal",
    core.CELL_VOLUME: "CellVolume",
    core.CIRCUMRADIUS: "Circumradius",
    core.FACET_AREA: "FacetArea",
    core.CELL_SURFACE_AREA: "CellSurfaceArea",
}


def _neg_operand(e: Expr):
    """The x of (-1) * x, or None."""
    if e.kind is core.PRODUCT:
        a, b = e.operands
        if a.kind is core.INT_LITERAL and a.payload[0] == -1:
            return b
        if b.kind is core.INT_LITERAL and b.payload[0] == -1:
            return a
    return None


class ExprPrinter:
    def __init__(self, names=None):
        self.names = dict(names or {})
        self.memo = {}

    # --- entry points ---

    def expr(self, e: Expr, min_prec: int = 0) -> str:
        text, prec = self._text(e)
        if prec < min_prec:
            return f"({text})"
        return text

    def form(self, form: Form) -> str:
        if not form.integrals:
            # A zero integrand is dropped at construction, so this text
            # parses back to the empty form.
            return "0*dx"
        parts = []
        for itg in form.integrals:
            neg = _neg_operand(itg.integrand)
            if neg is not None:
                parts.append(("-", f"{self.expr(neg, UNARY)}*{itg.measure!r}"))
            else:
                parts.append(("+", f"{self.expr(itg.integrand, MUL)}*{itg.measure!r}"))
        sign, out = parts[0]
        if sign == "-":
            out = f"-{out}"
        for sign, part in parts[1:]:
            out += f" {sign} {part}"
        return out

    def element(self, elem: Element) -> str:
        name = self.names.get(elem)
        if name is not None:
            return name
        return _element_text(elem, self.names)

    # --- node rendering ---

    def _text(self, e: Expr):
        hit = self.memo.get(e)
        if hit is None:
            hit = self._render(e)
            self.memo[e] = hit
        return hit

    def _render(self, e: Expr):
        name = self.names.get(e)
        if name is not None:
            return name, ATOM
        k = e.kind
        if k.is_terminal:
            return self._terminal(e)
        neg = _neg_operand(e)
        if neg is not None:
            return f"-{self.expr(neg, POW)}", UNARY
        if k is core.SUM:
            return self._sum(e)
        if k is core.PRODUCT:
            return self._product(e), MUL
        if k is core.DIVISION:
            a, b = e.operands
            return f"{self.expr(a, UNARY)} / {self.expr(b, UNARY)}", MUL
        if k is core.POWER:
            a, b = e.operands
            return f"{self.expr(a, POSTFIX)}**{self.expr(b, UNARY)}", POW
        if k is core.INDEXED:
            base = self.expr(e.operands[0], POSTFIX)
            terms = ", ".join(_index_term_text(t) for t in e.payload)
            return f"{base}[{terms}]", POSTFIX
        if k is core.COMPONENT_TENSOR:
            body = self.expr(e.operands[0])
            mi = ", ".join(_index_term_text(t) for t in e.payload)
            return f"as_tensor({body}, ({mi},))" if len(e.payload) == 1 \
                else f"as_tensor({body}, ({mi}))", ATOM
        if k is core.LIST_TENSOR:
            comps = ", ".join(self.expr(o) for o in e.operands)
            if len(e.operands) == 1:
                comps += ","
            return f"as_tensor(({comps}))", ATOM
        if k is core.INDEX_SUM:
            return self._index_sum(e)
        if k is core.SPATIAL_DERIVATIVE:
            body = self.expr(e.operands[0])
            return f"Dx({body}, {_index_term_text(e.payload[0])})", ATOM
        if k is core.VARIABLE_DERIVATIVE:
            base, var = e.operands
            return f"diff({self.expr(base)}, {self.expr(var)})", ATOM
        if k is core.VARIABLE:
            return f"variable({self.expr(e.operands[0])})", ATOM
        if k in (core.POSITIVE_RESTRICTED, core.NEGATIVE_RESTRICTED):
            side = "+" if k is core.POSITIVE_RESTRICTED else "-"
            return f"{self.expr(e.operands[0], POSTFIX)}('{side}')", POSTFIX
        fn = _FUNCTION_NAMES.get(k)
        if fn is not None:
            args = ", ".join(self.expr(o) for o in e.operands)
            return f"{fn}({args})", ATOM
        raise Unsupported(f"no canonical text for node kind {k.name}")

    def _terminal(self, e: Expr):
        k = e.kind
        if k is core.INT_LITERAL:
            value = e.payload[0]
            return str(value), (ATOM if value >= 0 else UNARY)
        if k is core.REAL_LITERAL:
            value = e.payload[0]
            return repr(value), (ATOM if value >= 0 else UNARY)
        if k is core.ZERO:
            shape, free_items = e.payload
            if free_items:
                raise Unsupported("a zero with free indices has no surface syntax")
            if shape == ():
                return "0", ATOM
            dims = ", ".join(str(d) for d in shape)
            return f"zeros({dims})", ATOM
        if k is core.IDENTITY:
            return f"Identity({e.payload[0]})", ATOM
        if k is core.PERMUTATION_SYMBOL:
            return f"PermutationSymbol({e.payload[0]})", ATOM
        if k is core.UNIT_VECTOR:
            return f"unit_vector({e.payload[0]}, {e.payload[1]})", ATOM
        if k in _GEOMETRY_NAMES:
            return f"{_GEOMETRY_NAMES[k]}({e.payload[0].name})", ATOM
        if k is core.CONSTANT:
            return f"c{e.payload[1]}", ATOM
        if k is core.COEFFICIENT:
            return f"w{e.payload[1]}", ATOM
        if k is core.ARGUMENT:
            return f"arg{e.payload[1]}", ATOM
        raise Unsupported(f"no canonical text for terminal {k.name}")

    def _sum(self, e: Expr):
        rendered = []
        for o in e.operands:
            neg = _neg_operand(o)
            if neg is not None:
                # Whole-term negation may join as a subtraction.
                rendered.append(("-", self.expr(neg, POW)))
            else:
                rendered.append(("+", self.expr(o, MUL)))
        rendered.sort(key=lambda sv: sv[0] + sv[1] if sv[0] == "-" else sv[1])
        sign, text = rendered[0]
        out = f"-{text}" if sign == "-" else text
        for sign, text in rendered[1:]:
            out += f" {sign} {text}"
        return out, ADD

    def _product(self, e: Expr, allow_shared: bool = False):
        a, b = e.operands
        if not allow_shared:
            shared = set(a.free_index_dims) & set(b.free_index_dims)
            if shared:
                raise Unsupported(
                    "a repeated-index product outside its summation has no "
                    "surface syntax"
                )
        texts = sorted((self.expr(a, UNARY), self.expr(b, UNARY)))
        return "*".join(texts)

    def _index_sum(self, e: Expr):
        # Collect the chain of nested sums around one summand.
        chain = []
        base = e
        while base.kind is core.INDEX_SUM:
            chain.append(base.payload[0].id)
            base = base.operands[0]
        if base.kind is core.PRODUCT:
            a, b = base.operands
            shared = set(a.free_index_dims) & set(b.free_index_dims)
            # The `*` operator wraps sums over all shared ids, ascending
            # innermost-first; print the bare product when that matches.
            if set(chain) == shared and chain == sorted(chain, reverse=True):
                return self._product(base, allow_shared=True), MUL
        if (base.kind is core.SPATIAL_DERIVATIVE and len(chain) == 1
                and isinstance(base.payload[0], Index)
                and base.payload[0].id == chain[0]
                and chain[0] in base.operands[0].free_index_dims):
            body = self.expr(base.operands[0])
            return f"Dx({body}, {_index_term_text(base.payload[0])})", ATOM
        if base.kind is core.PRODUCT:
            a, b = base.operands
            if set(a.free_index_dims) & set(b.free_index_dims):
                raise Unsupported(
                    "partial contraction of a repeated-index product has no "
                    "surface syntax"
                )
        text = self.expr(base)
        for index_id in reversed(chain):
            text = f"index_sum({text}, {index_name(index_id)})"
        return text, ATOM


def _index_term_text(term) -> str:
    if isinstance(term, FixedIndex):
        return str(term.value)
    return index_name(term.id)


def _element_text(elem: Element, names=None) -> str:
    names = names or {}
    hit = names.get(elem)
    if hit is not None:
        return hit

    def sub(e):
        return _element_text(e, names)

    if isinstance(elem, FiniteElement):
        quad = f", {elem.quad_scheme!r}" if elem.quad_scheme else ""
        return f'FiniteElement("{elem.family}", {elem.cell.name}, {elem.degree}{quad})'
    if isinstance(elem, VectorElement):
        base = elem.sub
        return (f'VectorElement("{base.family}", {base.cell.name}, '
                f'{base.degree}, {elem.dim})')
    if isinstance(elem, TensorElement):
        base = elem.sub
        shape = ", ".join(str(s) for s in elem.shape)
        if elem.symmetry is not None:
            raise Unsupported("symmetric tensor elements have no surface syntax")
        return (f'TensorElement("{base.family}", {base.cell.name}, '
                f'{base.degree}, ({shape}{"," if len(elem.shape) == 1 else ""}))')
    if isinstance(elem, MixedElement):
        return f"MixedElement({', '.join(sub(s) for s in elem.subelements)})"
    if isinstance(elem, EnrichedElement):
        return f"EnrichedElement({', '.join(sub(s) for s in elem.subelements)})"
    if isinstance(elem, RestrictedElement):
        return f'RestrictedElement({sub(elem.sub)}, "{elem.entity}")'
    raise Unsupported(f"cannot print element {elem!r}")


def _value_text(value, printer: ExprPrinter) -> str:
    if isinstance(value, Expr):
        return printer.expr(value)
    if isinstance(value, Form):
        return printer.form(value)
    if isinstance(value, Element):
        return _element_text(value, printer.names)
    if isinstance(value, Measure):
        return repr(value)
    if isinstance(value, Cell):
        return value.name
    if isinstance(value, Index):
        return f"Index({value.id})"
    if isinstance(value, str):
        return f'"{value}"'
    if isinstance(value, (int, float)):
        return repr(value)
    if isinstance(value, list):
        return "[" + ", ".join(_value_text(v, printer) for v in value) + "]"
    raise Unsupported(f"cannot print module value {value!r}")


def _statement_text(name, value, printer: ExprPrinter) -> str:
    try:
        alias = printer.names.get(value)
    except TypeError:
        alias = None
    if alias is not None:
        return f"{name} = {alias}"
    if isinstance(value, Expr) and value.kind is core.VARIABLE:
        # Re-emit the annotation so parsing assigns the same label sequence.
        return f"{name} = variable({printer.expr(value.operands[0])})"
    if isinstance(value, Expr) and value.kind in (
        core.COEFFICIENT, core.CONSTANT, core.ARGUMENT
    ):
        return f"{name} = {_function_ctor_text(value, printer)}"
    return f"{name} = {_value_text(value, printer)}"


def _function_ctor_text(value: Expr, printer: ExprPrinter) -> str:
    if value.kind is core.CONSTANT:
        return f"Constant({value.payload[0].name})"
    elem = printer.element(value.payload[0])
    if value.kind is core.COEFFICIENT:
        return f"Coefficient({elem})"
    number = value.payload[1]
    if number == 0:
        return f"TestFunction({elem})"
    if number == 1:
        return f"TrialFunction({elem})"
    return f"Argument({elem}, {number})"


def pretty_print(obj, names=None) -> str:
    """Canonical text for an expression, form, element or module."""
    from .frontend import SourceModule

    if isinstance(obj, SourceModule):
        return print_module(obj)
    printer = ExprPrinter(names)
    if isinstance(obj, Form):
        return printer.form(obj)
    if isinstance(obj, Expr):
        if obj.kind is core.ZERO:
            shape, free_items = obj.payload
            if shape != () or free_items:
                frees = {index_name(i): d for i, d in free_items}
                return f"0  # zero with shape {shape}, free indices {frees}"
            return "0"
        return printer.expr(obj)
    if isinstance(obj, Element):
        return _element_text(obj, names)
    raise Unsupported(f"cannot pretty-print {type(obj).__name__}")


def print_module(module) -> str:
    """Re-emit a parsed module; parsing the output reproduces its exports."""
    lines = []
    names = {}
    for stmt in module.statements:
        # Only earlier statements may be referenced by name.
        printer = ExprPrinter(names)
        lines.append(_statement_text(stmt.name, stmt.value, printer))
        if isinstance(stmt.value, (Expr, Element, Form)) and stmt.value not in names:
            names[stmt.value] = stmt.name
    return "\n".join(lines) + "\n"
