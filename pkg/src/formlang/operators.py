"""Public expression operators: arithmetic, tensor algebra, scalar functions,
differential operators, restrictions and conditionals.

Importing this module also attaches the Python operator overloads to Expr.
"""

from __future__ import annotations

from . import core
from .core import Expr, FixedIndex, Index, as_expr, build, fresh_index
from .errors import (
    DoubleRestriction,
    FreeIndexConflict,
    MathDomain,
    RankError,
    ShapeMismatch,
    Unsupported,
)
from .indexing import as_tensor, as_vector, from_components, index_expr, index_sum


# --- arithmetic ---------------------------------------------------------------

def add(a, b) -> Expr:
    return build(core.SUM, (as_expr(a), as_expr(b)))


def neg(a) -> Expr:
    return star(core.int_literal(-1), a)


def sub(a, b) -> Expr:
    return add(a, neg(b))


def star(a, b):
    """The `*` product: scalar scaling, matrix-vector and matrix-matrix
    products, with implicit summation over repeated free indices when a
    scalar operand is involved."""
    a, b = as_expr(a), as_expr(b)
    if a.shape != () and b.shape != ():
        if a.rank == 2 and b.rank in (1, 2) and a.shape[-1] == b.shape[0]:
            if a._free or b._free:
                raise FreeIndexConflict(
                    "free indices are not allowed in matrix products"
                )
            return dot(a, b)
        raise ShapeMismatch(f"cannot multiply shapes {a.shape} and {b.shape}")
    shared = sorted(set(a.free_index_dims) & set(b.free_index_dims))
    if shared and (a.shape != () or b.shape != ()):
        raise FreeIndexConflict(
            "implicit summation requires scalar operands"
        )
    out = build(core.PRODUCT, (a, b))
    for index_id in shared:
        out = index_sum(out, Index(index_id))
    return out


def divide(a, b) -> Expr:
    return build(core.DIVISION, (as_expr(a), as_expr(b)))


def power(a, b) -> Expr:
    return build(core.POWER, (as_expr(a), as_expr(b)))


# --- scalar functions -----------------------------------------------------------

def _unary(kind):
    def fn(a):
        return build(kind, (as_expr(a),))
    fn.__name__ = kind.name
    return fn


sqrt = _unary(core.SQRT)
exp = _unary(core.EXP)
ln = _unary(core.LN)
abs_ = _unary(core.ABS)
sign = _unary(core.SIGN)
cos = _unary(core.COS)
sin = _unary(core.SIN)
tan = _unary(core.TAN)
acos = _unary(core.ACOS)
asin = _unary(core.ASIN)
atan = _unary(core.ATAN)
erf = _unary(core.ERF)


def bessel_J(nu, x) -> Expr:
    return build(core.BESSEL_J, (as_expr(nu), as_expr(x)))


def bessel_Y(nu, x) -> Expr:
    return build(core.BESSEL_Y, (as_expr(nu), as_expr(x)))


def bessel_I(nu, x) -> Expr:
    return build(core.BESSEL_I, (as_expr(nu), as_expr(x)))


def bessel_K(nu, x) -> Expr:
    return build(core.BESSEL_K, (as_expr(nu), as_expr(x)))


# --- tensor algebra ---------------------------------------------------------------

def dot(a, b) -> Expr:
    a, b = as_expr(a), as_expr(b)
    if a.rank == 1 and b.rank == 1:
        # The vector-vector contraction coincides with the inner product.
        return inner(a, b)
    return build(core.DOT, (a, b))


def inner(a, b) -> Expr:
    a, b = as_expr(a), as_expr(b)
    if a.rank == 0 and b.rank == 0:
        return star(a, b)
    return build(core.INNER, (a, b))


def outer(a, b) -> Expr:
    a, b = as_expr(a), as_expr(b)
    if a.rank == 0 or b.rank == 0:
        return star(a, b)
    return build(core.OUTER, (a, b))


def cross(a, b) -> Expr:
    return build(core.CROSS, (as_expr(a), as_expr(b)))


def transpose(a) -> Expr:
    return build(core.TRANSPOSE, (as_expr(a),))


def sym(a) -> Expr:
    return build(core.SYM, (as_expr(a),))


def skew(a) -> Expr:
    return build(core.SKEW, (as_expr(a),))


def dev(a) -> Expr:
    return build(core.DEV, (as_expr(a),))


def tr(a) -> Expr:
    return build(core.TRACE, (as_expr(a),))


def det(a) -> Expr:
    return build(core.DETERMINANT, (as_expr(a),))


def cofac(a) -> Expr:
    return build(core.COFACTOR, (as_expr(a),))


def inv(a) -> Expr:
    return build(core.INVERSE, (as_expr(a),))


def diag(a) -> Expr:
    return build(core.DIAG, (as_expr(a),))


def diag_vector(a) -> Expr:
    return build(core.DIAG_VECTOR, (as_expr(a),))


# --- element-wise operators --------------------------------------------------------

def _elementwise(fn, *tensors, what="elem_op"):
    tensors = [as_expr(t) for t in tensors]
    shape = tensors[0].shape
    for t in tensors[1:]:
        if t.shape != shape:
            raise ShapeMismatch(f"{what} requires equal shapes, got {shape} and {t.shape}")
    if shape == ():
        return fn(*tensors)
    return from_components(
        shape, lambda comp: fn(*(index_expr(t, tuple(FixedIndex(c) for c in comp))
                                 for t in tensors))
    )


def elem_mult(a, b) -> Expr:
    return _elementwise(star, a, b, what="elem_mult")


def elem_div(a, b) -> Expr:
    return _elementwise(divide, a, b, what="elem_div")


def elem_pow(a, b) -> Expr:
    return _elementwise(power, a, b, what="elem_pow")


def elem_op(fn, *tensors) -> Expr:
    return _elementwise(fn, *tensors, what="elem_op")


# --- differential operators ----------------------------------------------------------

def grad(e) -> Expr:
    return build(core.GRAD, (as_expr(e),))


def nabla_grad(e) -> Expr:
    return build(core.NABLA_GRAD, (as_expr(e),))


def div(e) -> Expr:
    return build(core.DIVERGENCE, (as_expr(e),))


def nabla_div(e) -> Expr:
    return build(core.NABLA_DIV, (as_expr(e),))


def curl(e) -> Expr:
    return build(core.CURL, (as_expr(e),))


def rot(e) -> Expr:
    """curl in three dimensions; in two dimensions the scalar v1,0 - v0,1."""
    e = as_expr(e)
    if e.cell is not None and e.cell.geometric_dimension == 2:
        if e.shape != (2,):
            raise ShapeMismatch("rot in 2D requires a 2-vector")
        return sub(Dx(index_expr(e, (FixedIndex(1),)), 0),
                   Dx(index_expr(e, (FixedIndex(0),)), 1))
    return curl(e)


def Dx(e, idx) -> Expr:
    """Partial derivative along one coordinate axis; a repeated free index
    contracts against the differentiated expression."""
    e = as_expr(e)
    term = core.as_index_term(idx)
    out = build(core.SPATIAL_DERIVATIVE, (e,), (term,))
    if isinstance(term, Index) and term.id in e.free_index_dims:
        out = index_sum(out, term)
    return out


def Dn(e) -> Expr:
    """Normal derivative: the gradient contracted with the facet normal."""
    e = as_expr(e)
    if e.cell is None:
        raise Unsupported("Dn needs an expression tied to a cell")
    return dot(grad(e), core.facet_normal(e.cell))


def variable(e, label=None) -> Expr:
    return core.variable(e, label)


def diff(e, v) -> Expr:
    return build(core.VARIABLE_DERIVATIVE, (as_expr(e), as_expr(v)))


def exterior_derivative(e) -> Expr:
    return build(core.EXTERIOR_DERIVATIVE, (as_expr(e),))


# --- restrictions -----------------------------------------------------------------

def restrict(e, side: str) -> Expr:
    e = as_expr(e)
    if side == "+":
        return build(core.POSITIVE_RESTRICTED, (e,))
    if side == "-":
        return build(core.NEGATIVE_RESTRICTED, (e,))
    raise DoubleRestriction(f"restriction side must be '+' or '-', got {side!r}")


def avg(e) -> Expr:
    return build(core.AVG, (as_expr(e),))


def jump(e, n=None) -> Expr:
    """f('+') - f('-'), or the normal-weighted jump when n is given."""
    e = as_expr(e)
    if n is None:
        return sub(restrict(e, "+"), restrict(e, "-"))
    n = as_expr(n)
    if e.shape == ():
        return add(star(restrict(e, "+"), restrict(n, "+")),
                   star(restrict(e, "-"), restrict(n, "-")))
    return add(dot(restrict(e, "+"), restrict(n, "+")),
               dot(restrict(e, "-"), restrict(n, "-")))


# --- conditionals -------------------------------------------------------------------

def conditional(cond, true_value, false_value) -> Expr:
    return build(core.CONDITIONAL,
                 (as_expr(cond), as_expr(true_value), as_expr(false_value)))


def _comparison(kind):
    def fn(a, b):
        return build(kind, (as_expr(a), as_expr(b)))
    fn.__name__ = kind.name
    return fn


eq = _comparison(core.EQ)
ne = _comparison(core.NE)
le = _comparison(core.LE)
ge = _comparison(core.GE)
lt = _comparison(core.LT)
gt = _comparison(core.GT)


def logical_and(a, b) -> Expr:
    return build(core.AND, (as_expr(a), as_expr(b)))


def logical_or(a, b) -> Expr:
    return build(core.OR, (as_expr(a), as_expr(b)))


def logical_not(a) -> Expr:
    return build(core.NOT, (as_expr(a),))


# --- operator overloads on Expr -------------------------------------------------------

def _expr_mul(self, other):
    from .forms import Measure

    if isinstance(other, Measure):
        from .forms import make_integral

        return make_integral(self, other)
    try:
        other = as_expr(other)
    except Exception:
        return NotImplemented
    return star(self, other)


def _expr_getitem(self, items):
    from .indexing import expand_slices

    if not isinstance(items, tuple):
        items = (items,)
    if any(isinstance(it, slice) for it in items):
        return expand_slices(self, items)
    return index_expr(self, tuple(core.as_index_term(it) for it in items))


def _expr_call(self, side):
    return restrict(self, side)


def _coerced(fn):
    def method(self, other):
        try:
            other = as_expr(other)
        except Exception:
            return NotImplemented
        return fn(self, other)
    return method


Expr.__add__ = _coerced(add)
Expr.__radd__ = _coerced(lambda self, other: add(other, self))
Expr.__sub__ = _coerced(sub)
Expr.__rsub__ = _coerced(lambda self, other: sub(other, self))
Expr.__mul__ = _expr_mul
Expr.__rmul__ = _coerced(lambda self, other: star(other, self))
Expr.__truediv__ = _coerced(divide)
Expr.__rtruediv__ = _coerced(lambda self, other: divide(other, self))
Expr.__pow__ = _coerced(power)
Expr.__rpow__ = _coerced(lambda self, other: power(other, self))
Expr.__neg__ = lambda self: neg(self)
Expr.__abs__ = lambda self: abs_(self)
Expr.__getitem__ = _expr_getitem
Expr.__call__ = _expr_call
Expr.dx = lambda self, idx: Dx(self, idx)
