"""Numeric oracle: pointwise evaluation of expression DAGs and quadrature
integration of functionals over minimal 1D/2D meshes.

Values are dense numpy arrays whose axes are the expression's shape axes
followed by one axis per free index (ordered by index id), which keeps all
index machinery expressible with pure post-value handlers. Gradients are
the one context-dependent case: they re-evaluate their operand at shifted
points (central differences) unless an exact gradient is bound.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from itertools import permutations

import numpy as np

from . import core
from .algorithms import DispatchTable, POST, PRE, evaluate, iterate, replace_terminals
from .core import Expr, FixedIndex, Index
from .differentiation import apply_derivatives
from .errors import (
    ArityError,
    MathDomain,
    ShapeMismatch,
    UnboundTerminal,
    UnsupportedMeasure,
    UnsupportedNode,
)
from .forms import Form
from .mesh import IntervalChain, TriangleList
from .quadrature import rule_for

FD_STEP_ENV = "FORMLANG_FD_STEP"


def _fd_step_default() -> float | None:
    raw = os.environ.get(FD_STEP_ENV)
    return float(raw) if raw else None


class EvalEnv:
    """Bindings of non-literal terminals to numeric values.

    A coefficient or argument terminal may be bound to a constant array, a
    callable of the spatial point, or a closed-form expression (which is
    substituted symbolically before evaluation, making its derivatives
    exact). `gradients` optionally binds exact gradient callables, which
    take precedence over finite differences.
    """

    def __init__(self, bindings=None, gradients=None, fd_step=None):
        self.bindings = dict(bindings or {})
        self.gradients = dict(gradients or {})
        self.fd_step = fd_step if fd_step is not None else _fd_step_default()

    def bound(self, terminal: Expr, value) -> "EvalEnv":
        new = dict(self.bindings)
        new[terminal] = value
        return EvalEnv(new, self.gradients, self.fd_step)

    def expression_bindings(self) -> dict:
        return {t: v for t, v in self.bindings.items() if isinstance(v, Expr)}

    def lookup(self, terminal: Expr):
        try:
            return self.bindings[terminal]
        except KeyError:
            kind = terminal.kind.name
            count = terminal.payload[1]
            raise UnboundTerminal(f"no binding for {kind} with count {count}") from None


@dataclass
class GeometryContext:
    """Per-evaluation geometric data; None entries raise when accessed."""

    x: np.ndarray
    dim: int
    cell_volume: float | None = None
    circumradius: float | None = None
    cell_surface_area: float | None = None
    facet_normal: np.ndarray | None = None
    facet_area: float | None = None
    diameter: float = 1.0

    def at(self, x) -> "GeometryContext":
        return GeometryContext(np.asarray(x, dtype=float), self.dim,
                               self.cell_volume, self.circumradius,
                               self.cell_surface_area, self.facet_normal,
                               self.facet_area, self.diameter)

    def require(self, name):
        value = getattr(self, name)
        if value is None:
            raise UnsupportedNode(f"{name} is not defined in this context")
        return value


def _levi_civita(d: int) -> np.ndarray:
    eps = np.zeros((d,) * d)
    for perm in permutations(range(d)):
        parity = 1
        seen = list(perm)
        for a in range(d):
            for b in range(a + 1, d):
                if seen[a] > seen[b]:
                    parity = -parity
        eps[perm] = parity
    return eps


def _free_ids(e: Expr):
    return [i for i, _ in e._free]


def _align(value, rank, src_ids, dst_ids, dst_dims):
    """Reorder/broadcast free axes from src id order to dst id order."""
    arr = np.asarray(value, dtype=float)
    missing = [i for i in dst_ids if i not in src_ids]
    arr = arr.reshape(arr.shape + (1,) * len(missing))
    cur = list(src_ids) + missing
    perm = list(range(rank)) + [rank + cur.index(i) for i in dst_ids]
    arr = np.transpose(arr, perm)
    target = arr.shape[:rank] + tuple(dst_dims[i] for i in dst_ids)
    return np.broadcast_to(arr, target)


def _as_float(value) -> float:
    arr = np.asarray(value, dtype=float)
    if arr.shape != ():
        raise ShapeMismatch(f"expected a scalar value, got shape {arr.shape}")
    return float(arr)


def _domain_checked(name, fn, *values):
    vals = [float(np.asarray(v)) for v in values]
    try:
        out = fn(*vals)
    except (ValueError, ZeroDivisionError, OverflowError) as err:
        raise MathDomain(f"{name}({', '.join(map(str, vals))}): {err}") from None
    if isinstance(out, complex) or (isinstance(out, float) and math.isnan(out)):
        raise MathDomain(f"{name} left its real domain at {vals}")
    return np.float64(out)


def _bessel_value(kind, order, x):
    from scipy import special

    fn = {core.BESSEL_J: special.jv, core.BESSEL_Y: special.yv,
          core.BESSEL_I: special.iv, core.BESSEL_K: special.kv}[kind]
    out = float(fn(order, x))
    if math.isnan(out):
        raise MathDomain(f"{kind.name}({order}, {x}) is undefined")
    return np.float64(out)


_SCALAR_FN = {
    core.SQRT: lambda a: _domain_checked("sqrt", math.sqrt, a),
    core.EXP: lambda a: _domain_checked("exp", math.exp, a),
    core.LN: lambda a: _domain_checked("ln", math.log, a),
    core.ABS: lambda a: np.float64(abs(float(a))),
    core.SIGN: lambda a: np.float64(0.0 if float(a) == 0 else math.copysign(1.0, float(a))),
    core.COS: lambda a: np.float64(math.cos(float(a))),
    core.SIN: lambda a: np.float64(math.sin(float(a))),
    core.TAN: lambda a: _domain_checked("tan", math.tan, a),
    core.ACOS: lambda a: _domain_checked("acos", math.acos, a),
    core.ASIN: lambda a: _domain_checked("asin", math.asin, a),
    core.ATAN: lambda a: np.float64(math.atan(float(a))),
    core.ERF: lambda a: np.float64(math.erf(float(a))),
}


def numeric_dispatch_table(env: EvalEnv, geom: GeometryContext) -> DispatchTable:
    """The numeric evaluation table for one point; values are numpy arrays
    with shape axes followed by sorted free-index axes."""
    table = DispatchTable()

    # --- terminals ---

    def literal(node, _):
        k = node.kind
        if k is core.INT_LITERAL or k is core.REAL_LITERAL:
            return np.float64(node.payload[0])
        if k is core.ZERO:
            shape, free_items = node.payload
            return np.zeros(shape + tuple(d for _, d in free_items))
        if k is core.IDENTITY:
            return np.eye(node.payload[0])
        if k is core.PERMUTATION_SYMBOL:
            return _levi_civita(node.payload[0])
        if k is core.UNIT_VECTOR:
            dim, axis = node.payload
            out = np.zeros(dim)
            out[axis] = 1.0
            return out
        raise UnsupportedNode(f"unhandled literal {k.name}")

    table.register(core.Group.LITERAL, literal)

    def geometric(node, _):
        k = node.kind
        if k is core.SPATIAL_COORDINATE:
            return np.asarray(geom.x, dtype=float)
        if k is core.FACET_NORMAL:
            return np.asarray(geom.require("facet_normal"), dtype=float)
        if k is core.CELL_VOLUME:
            return np.float64(geom.require("cell_volume"))
        if k is core.CIRCUMRADIUS:
            return np.float64(geom.require("circumradius"))
        if k is core.FACET_AREA:
            return np.float64(geom.require("facet_area"))
        if k is core.CELL_SURFACE_AREA:
            return np.float64(geom.require("cell_surface_area"))
        raise UnsupportedNode(f"unhandled geometric quantity {k.name}")

    table.register(core.Group.GEOMETRIC, geometric)

    def bound_function(node, _):
        value = env.lookup(node)
        if isinstance(value, Expr):
            raise UnsupportedNode(
                "expression bindings must be substituted before evaluation"
            )
        if callable(value):
            value = value(np.asarray(geom.x, dtype=float))
        arr = np.asarray(value, dtype=float)
        if node.shape == () and arr.shape == ():
            return np.float64(arr)
        if arr.shape != node.shape:
            raise ShapeMismatch(
                f"binding for {node.kind.name} (count {node.payload[1]}) has shape "
                f"{arr.shape}, terminal expects {node.shape}"
            )
        return arr

    table.register(core.Group.COEFFICIENT, bound_function)
    table.register(core.Group.ARGUMENT, bound_function)

    # --- index machinery ---

    def indexed(node, values):
        (vo,) = values
        e = node.operands[0]
        work = np.asarray(vo, dtype=float)
        rank = e.rank
        free_pos = {i: rank + n for n, i in enumerate(_free_ids(e))}
        consumed = 0
        for t, term in enumerate(node.payload):
            ax = t - consumed
            if isinstance(term, FixedIndex):
                work = np.take(work, term.value, axis=ax)
                consumed += 1
                free_pos = {i: (pos - 1 if pos > ax else pos)
                            for i, pos in free_pos.items()}
            elif term.id in free_pos:
                pos = free_pos[term.id]
                work = np.diagonal(work, axis1=ax, axis2=pos)
                consumed += 1
                updated = {}
                for i, q in free_pos.items():
                    if i == term.id:
                        continue
                    updated[i] = q - (1 if q > ax else 0) - (1 if q > pos else 0)
                updated[term.id] = work.ndim - 1
                free_pos = updated
            else:
                work = np.moveaxis(work, ax, -1)
                consumed += 1
                free_pos = {i: (pos - 1 if pos > ax else pos)
                            for i, pos in free_pos.items()}
                free_pos[term.id] = work.ndim - 1
        order = [free_pos[i] for i in sorted(free_pos)]
        return np.transpose(work, order)

    table.register(core.INDEXED, indexed)

    def component_tensor(node, values):
        (vo,) = values
        e = node.operands[0]
        src = _free_ids(e)
        bound = [term.id for term in node.payload]
        rest = [i for i in src if i not in bound]
        perm = [src.index(i) for i in bound] + [src.index(i) for i in rest]
        return np.transpose(np.asarray(vo, dtype=float), perm)

    table.register(core.COMPONENT_TENSOR, component_tensor)

    def index_sum(node, values):
        (vo,) = values
        e = node.operands[0]
        axis = e.rank + _free_ids(e).index(node.payload[0].id)
        return np.sum(np.asarray(vo, dtype=float), axis=axis)

    table.register(core.INDEX_SUM, index_sum)

    def list_tensor(node, values):
        return np.stack([np.asarray(v, dtype=float) for v in values], axis=0)

    table.register(core.LIST_TENSOR, list_tensor)

    # --- arithmetic ---

    def add(node, values):
        va, vb = values
        return np.asarray(va, dtype=float) + np.asarray(vb, dtype=float)

    table.register(core.SUM, add)

    def product(node, values):
        a, b = node.operands
        dst = _free_ids(node)
        dims = node.free_index_dims
        va = _align(values[0], a.rank, _free_ids(a), dst, dims)
        vb = _align(values[1], b.rank, _free_ids(b), dst, dims)
        if a.rank == 0 and b.rank != 0:
            va = va.reshape((1,) * b.rank + va.shape)
        elif b.rank == 0 and a.rank != 0:
            vb = vb.reshape((1,) * a.rank + vb.shape)
        return va * vb

    table.register(core.PRODUCT, product)

    def division(node, values):
        denom = _as_float(values[1])
        if denom == 0.0:
            raise MathDomain("division by zero")
        return np.float64(_as_float(values[0]) / denom)

    table.register(core.DIVISION, division)

    def power_fn(node, values):
        return _domain_checked("pow", math.pow, _as_float(values[0]), _as_float(values[1]))

    table.register(core.POWER, power_fn)

    def scalar_fn(node, values):
        fn = _SCALAR_FN.get(node.kind)
        if fn is not None:
            return fn(_as_float(values[0]))
        if node.kind in (core.BESSEL_J, core.BESSEL_Y, core.BESSEL_I, core.BESSEL_K):
            return _bessel_value(node.kind, _as_float(values[0]), _as_float(values[1]))
        raise UnsupportedNode(f"unhandled scalar function {node.kind.name}")

    table.register(core.Group.SCALAR_FN, scalar_fn)

    # --- tensor algebra (free-index-free operands) ---

    def tensor_op(node, values):
        if any(o._free for o in node.operands):
            raise UnsupportedNode(
                f"numeric {node.kind.name} does not support free indices"
            )
        vals = [np.asarray(v, dtype=float) for v in values]
        k = node.kind
        if k is core.DOT:
            return np.tensordot(vals[0], vals[1], axes=([-1], [0]))
        if k is core.INNER:
            return np.float64(np.sum(vals[0] * vals[1]))
        if k is core.OUTER:
            return np.multiply.outer(vals[0], vals[1])
        if k is core.CROSS:
            a, b = vals
            return np.array([
                a[1] * b[2] - a[2] * b[1],
                a[2] * b[0] - a[0] * b[2],
                a[0] * b[1] - a[1] * b[0],
            ])
        (v,) = vals
        if k is core.TRANSPOSE:
            return v.T
        if k is core.SYM:
            return (v + v.T) / 2.0
        if k is core.SKEW:
            return (v - v.T) / 2.0
        if k is core.DEV:
            n = v.shape[0]
            return v - np.trace(v) / n * np.eye(n)
        if k is core.TRACE:
            return np.float64(np.trace(v))
        if k is core.DETERMINANT:
            return np.float64(np.linalg.det(v))
        if k is core.COFACTOR:
            try:
                return np.linalg.det(v) * np.linalg.inv(v).T
            except np.linalg.LinAlgError as err:
                raise MathDomain(f"cofactor of a singular matrix: {err}") from None
        if k is core.INVERSE:
            try:
                return np.linalg.inv(v)
            except np.linalg.LinAlgError as err:
                raise MathDomain(f"inverse of a singular matrix: {err}") from None
        if k is core.DIAG:
            return np.diag(np.diag(v)) if v.ndim == 2 else np.diag(v)
        if k is core.DIAG_VECTOR:
            return np.diag(v).copy()
        raise UnsupportedNode(f"unhandled tensor operator {k.name}")

    table.register(core.Group.TENSOR, tensor_op)

    # --- conditionals and booleans ---

    def boolean(node, values):
        k = node.kind
        if k is core.AND:
            return bool(values[0]) and bool(values[1])
        if k is core.OR:
            return bool(values[0]) or bool(values[1])
        if k is core.NOT:
            return not bool(values[0])
        a, b = (_as_float(v) for v in values)
        return {core.EQ: a == b, core.NE: a != b, core.LE: a <= b,
                core.GE: a >= b, core.LT: a < b, core.GT: a > b}[k]

    table.register(core.Group.BOOLEAN, boolean)

    def conditional(node, values):
        return values[1] if bool(values[0]) else values[2]

    table.register(core.CONDITIONAL, conditional)

    def variable_value(node, values):
        return values[0]

    table.register(core.VARIABLE, variable_value)

    # --- gradients: context handlers using central differences ---

    def grad(node, visit):
        (f,) = node.operands
        exact = env.gradients.get(f)
        if exact is not None:
            arr = np.asarray(exact(np.asarray(geom.x, dtype=float)), dtype=float)
            if arr.shape != node.shape:
                raise ShapeMismatch(
                    f"exact gradient binding has shape {arr.shape}, "
                    f"expected {node.shape}"
                )
            return arr
        step = env.fd_step if env.fd_step is not None else 1e-6 * geom.diameter
        cols = []
        for k in range(geom.dim):
            xp = np.array(geom.x, dtype=float)
            xm = np.array(geom.x, dtype=float)
            xp[k] += step
            xm[k] -= step
            vp = eval_expr(f, env, xp, geom.at(xp))
            vm = eval_expr(f, env, xm, geom.at(xm))
            cols.append((vp - vm) / (2.0 * step))
        return np.stack(cols, axis=-1)

    table.register(core.GRAD, grad, PRE)

    def unsupported(node, _):
        raise UnsupportedNode(
            f"{node.kind.name} has no numeric evaluation; apply_derivatives "
            "and keep restrictions out of pointwise evaluation"
        )

    for k in (core.NABLA_GRAD, core.DIVERGENCE, core.NABLA_DIV, core.CURL,
              core.SPATIAL_DERIVATIVE, core.VARIABLE_DERIVATIVE,
              core.EXTERIOR_DERIVATIVE, core.POSITIVE_RESTRICTED,
              core.NEGATIVE_RESTRICTED, core.AVG):
        table.register(k, unsupported)

    return table


def substitute_bindings(e: Expr, env: EvalEnv) -> Expr:
    """Replace expression-bound terminals symbolically and re-lower derivatives."""
    mapping = env.expression_bindings()
    if mapping:
        e = replace_terminals(e, mapping)
    return apply_derivatives(e)


def eval_expr(e: Expr, env: EvalEnv, point, geom: GeometryContext | None = None,
              engine: str = "auto"):
    """Evaluate a derivative-free, restriction-free expression at a point."""
    point = np.atleast_1d(np.asarray(point, dtype=float))
    if geom is None:
        geom = GeometryContext(point, len(point))
    else:
        geom = geom.at(point)
    table = numeric_dispatch_table(env, geom)
    value = evaluate(e, table, engine=engine)
    if isinstance(value, bool):
        return value
    return np.asarray(value, dtype=float)


# --- integration -----------------------------------------------------------------------

def _interval_cell_geometry(x0, x1):
    length = x1 - x0
    return dict(cell_volume=length, circumradius=length / 2.0,
                cell_surface_area=2.0, diameter=length)


def _triangle_cell_geometry(verts):
    v0, v1, v2 = verts
    e1, e2 = v1 - v0, v2 - v0
    area = 0.5 * abs(e1[0] * e2[1] - e1[1] * e2[0])
    a = np.linalg.norm(v1 - v2)
    b = np.linalg.norm(v2 - v0)
    c = np.linalg.norm(v1 - v0)
    return dict(cell_volume=area, circumradius=a * b * c / (4.0 * area),
                cell_surface_area=a + b + c, diameter=max(a, b, c))


def _form_degree(form: Form) -> int:
    degree = 1
    for itg in form.integrals:
        for t in iterate(itg.integrand,
                         filter=lambda n: n.kind in (core.COEFFICIENT, core.ARGUMENT)):
            degree = max(degree, t.payload[0].degree)
    return degree


def integrate_functional(form: Form, mesh, env: EvalEnv,
                         degree: int | None = None) -> float:
    """Quadrature integration of an arity-0 form over a minimal mesh.

    Supports cell and exterior-facet integrals with subdomain id 0; the
    quadrature degree defaults to 2q+1 for the maximal element degree q.
    """
    if form.is_empty:
        return 0.0
    if form.arity() != 0:
        raise ArityError(
            f"only functionals can be integrated numerically (arity {form.arity()})"
        )
    if degree is None:
        degree = 2 * _form_degree(form) + 1

    total = 0.0
    for itg in form.integrals:
        measure = itg.measure
        if measure.domain_type not in ("cell", "exterior_facet"):
            raise UnsupportedMeasure(
                f"cannot integrate over {measure.domain_type!r} numerically"
            )
        if measure.subdomain_id != 0:
            raise UnsupportedMeasure("only subdomain id 0 has oracle geometry")
        integrand = substitute_bindings(itg.integrand, env)
        if isinstance(mesh, IntervalChain):
            total += _integrate_interval(integrand, measure, mesh, env, degree)
        elif isinstance(mesh, TriangleList):
            total += _integrate_triangles(integrand, measure, mesh, env, degree)
        else:
            raise UnsupportedMeasure(f"unsupported mesh {type(mesh).__name__}")
    return total


def _integrate_interval(integrand, measure, mesh: IntervalChain, env, degree):
    total = 0.0
    cells = mesh.cells()
    if measure.domain_type == "cell":
        rule = rule_for("interval", degree)
        pts, wts = rule.arrays()
        for x0, x1 in cells:
            geom = GeometryContext(np.array([x0]), 1, **_interval_cell_geometry(x0, x1),
                                   facet_area=None, facet_normal=None)
            length = x1 - x0
            for (xi,), w in zip(pts, wts):
                x = np.array([x0 + xi * length])
                value = eval_expr(integrand, env, x, geom)
                total += float(w) * length * _as_float(value)
    else:
        for point, normal, owner in mesh.boundary_facets():
            x0, x1 = cells[owner]
            geom = GeometryContext(point, 1, **_interval_cell_geometry(x0, x1),
                                   facet_area=1.0, facet_normal=normal)
            value = eval_expr(integrand, env, point, geom)
            total += _as_float(value)
    return total


def _integrate_triangles(integrand, measure, mesh: TriangleList, env, degree):
    total = 0.0
    if measure.domain_type == "cell":
        rule = rule_for("triangle", degree)
        pts, wts = rule.arrays()
        for index in range(len(mesh.triangles)):
            verts = mesh.cell_vertices(index)
            v0 = verts[0]
            B = np.column_stack([verts[1] - v0, verts[2] - v0])
            detB = abs(np.linalg.det(B))
            geom = GeometryContext(v0, 2, **_triangle_cell_geometry(verts),
                                   facet_area=None, facet_normal=None)
            for xi, w in zip(pts, wts):
                x = v0 + B @ xi
                value = eval_expr(integrand, env, x, geom)
                total += float(w) * detB * _as_float(value)
    else:
        rule = rule_for("interval", degree)
        pts, wts = rule.arrays()
        for endpoints, normal, owner in mesh.boundary_facets():
            verts = mesh.cell_vertices(owner)
            p0, p1 = endpoints
            length = float(np.linalg.norm(p1 - p0))
            geom = GeometryContext(p0, 2, **_triangle_cell_geometry(verts),
                                   facet_area=length, facet_normal=normal)
            for (t,), w in zip(pts, wts):
                x = p0 + t * (p1 - p0)
                value = eval_expr(integrand, env, x, geom)
                total += float(w) * length * _as_float(value)
    return total


def fd_directional(form: Form, target: Expr, direction, eps: float, mesh,
                   env: EvalEnv, degree: int | None = None) -> float:
    """Independent difference-quotient oracle for directional derivatives:
    perturbs the binding of `target` by +/- eps times the direction."""
    base = env.lookup(target)

    def perturbed(sign):
        if isinstance(base, Expr):
            if isinstance(direction, Expr):
                shifted = core.build(
                    core.SUM,
                    (base, core.build(core.PRODUCT,
                                      (core.real_literal(sign * eps), direction))),
                )
            else:
                raise ShapeMismatch(
                    "an expression binding needs an expression direction"
                )
            return env.bound(target, shifted)
        if callable(base):
            dir_fn = direction if callable(direction) else (lambda x: direction)
            return env.bound(
                target, lambda x, s=sign: np.asarray(base(x), dtype=float)
                + s * eps * np.asarray(dir_fn(x), dtype=float)
            )
        dir_val = direction() if callable(direction) else direction
        return env.bound(target, np.asarray(base, dtype=float)
                         + sign * eps * np.asarray(dir_val, dtype=float))

    plus = integrate_functional(form, mesh, perturbed(+1.0), degree)
    minus = integrate_functional(form, mesh, perturbed(-1.0), degree)
    return (plus - minus) / (2.0 * eps)
