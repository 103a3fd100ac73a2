"""Symbolic differentiation.

A two-level algorithm: an outer pass rewrites derivative operator nodes
innermost-first, so each inner single-variable pass can assume its input
is free of nested derivative requests. The inner passes are forward-mode
chain rules specialized per differentiation variable: the full spatial
gradient, a user-annotated variable, or a directional derivative with
respect to coefficient functions (with component padding).

In the output, gradients apply only to spatially varying terminals (or to
gradients of such, for higher order).
"""

from __future__ import annotations

import math

from . import core
from .core import Expr, FixedIndex, Index, as_expr, build, is_zero
from .elements import MixedElement, flatten_component_map
from .errors import (
    ComponentOutOfRange,
    NotACoefficient,
    NotAVariable,
    ShapeMismatch,
    Unsupported,
    UnsupportedDerivative,
)
from .indexing import from_components
from .operators import (
    bessel_I,
    bessel_J,
    bessel_K,
    bessel_Y,
    cofac,
    divide,
    dot,
    exp,
    inv,
    ln,
    power,
    sin,
    sqrt,
    tan,
)
from .operators import cos as cos_
from .operators import sign as sign_

_DERIVATIVE_KINDS = frozenset({
    core.GRAD, core.NABLA_GRAD, core.DIVERGENCE, core.NABLA_DIV, core.CURL,
    core.SPATIAL_DERIVATIVE, core.VARIABLE_DERIVATIVE, core.EXTERIOR_DERIVATIVE,
})

# Indices created while differentiating live in a temporary band and are
# renumbered canonically before results leave this module, which makes the
# derivative of a given DAG a pure function of that DAG (independent of any
# session allocation state).
_TEMP_BASE = 1 << 40
_CANONICAL_BASE = 1 << 20

_temp_lock = __import__("threading").Lock()
_temp_next = [_TEMP_BASE]


def _fresh_temp(n: int | None = None):
    with _temp_lock:
        base = _temp_next[0]
        _temp_next[0] += n or 1
    if n is None:
        return Index(base)
    return tuple(Index(base + k) for k in range(n))


def _is_temp(index_id: int) -> bool:
    return index_id >= _TEMP_BASE


def _canonicalize_indices(root: Expr) -> Expr:
    """Rename temporary-band indices to deterministic canonical ids.

    The map is monotone (temporary allocation order is preserved), starts
    at a fixed base and skips ids already present in the expression, so
    identical inputs yield identical outputs in any session and implicit
    summation keeps its ascending-inside-out nesting.
    """
    used = set()
    temps = set()
    seen = set()

    def note(index_id):
        if _is_temp(index_id):
            temps.add(index_id)
        else:
            used.add(index_id)

    def scan(node):
        if node in seen:
            return
        seen.add(node)
        if node.kind is core.ZERO:
            for index_id, _ in node.payload[1]:
                note(index_id)
        else:
            for item in node.payload:
                if isinstance(item, Index):
                    note(item.id)
        for o in node.operands:
            scan(o)

    scan(root)
    if not temps:
        return root

    mapping = {}
    next_id = _CANONICAL_BASE
    for temp in sorted(temps):
        while next_id in used:
            next_id += 1
        mapping[temp] = next_id
        used.add(next_id)
        next_id += 1

    def rename_term(term):
        if isinstance(term, Index) and term.id in mapping:
            return Index(mapping[term.id])
        return term

    memo = {}

    def rebuild(node):
        hit = memo.get(node)
        if hit is not None:
            return hit
        if node.kind is core.ZERO:
            shape, items = node.payload
            new_items = {Index(mapping.get(i, i)): d for i, d in items}
            out = core.annotated_zero(shape, new_items) if items else node
        elif node.is_terminal:
            out = node
        else:
            ops = tuple(rebuild(o) for o in node.operands)
            payload = tuple(rename_term(t) for t in node.payload)
            if ops == node.operands and payload == node.payload:
                out = node
            else:
                out = build(node.kind, ops, payload)
        memo[node] = out
        return out

    return rebuild(root)


def _mul(a, b) -> Expr:
    # Raw product node: never introduces implicit summation.
    return build(core.PRODUCT, (a, b))


def _add(a, b) -> Expr:
    return build(core.SUM, (a, b))


def _sub(a, b) -> Expr:
    return _add(a, _mul(core.int_literal(-1), b))


def _ct(e, mi) -> Expr:
    return build(core.COMPONENT_TENSOR, (e,), tuple(mi)) if mi else e


def _ix(e, mi) -> Expr:
    return build(core.INDEXED, (e,), tuple(mi)) if mi else e


def _sum_over(e, ids) -> Expr:
    for idx in ids:
        e = build(core.INDEX_SUM, (e,), (idx,))
    return e


def _star_chain(*factors) -> Expr:
    """Left-associated products with implicit summation over indices shared
    between consecutive partial products, mirroring the `*` operator."""
    out = factors[0]
    for f in factors[1:]:
        shared = sorted(set(out.free_index_dims) & set(f.free_index_dims))
        out = _mul(out, f)
        for index_id in shared:
            out = build(core.INDEX_SUM, (out,), (Index(index_id),))
    return out


def _zero_like(e: Expr, var_shape) -> Expr:
    return core.annotated_zero(e.shape + var_shape, e.free_index_dims)


def is_spatial_terminal(e: Expr) -> bool:
    """Terminals the gradient may remain applied to in lowered output."""
    if e.kind in (core.COEFFICIENT, core.ARGUMENT):
        return not core.is_cellwise_constant(e)
    return False


# --- forward-mode chain rules -------------------------------------------------------

class _ForwardEngine:
    """Computes d(e) bottom-up with caching; de has shape e.shape + var_shape."""

    def __init__(self, rules):
        self.rules = rules
        self.var_shape = rules.var_shape
        self.memo = {}

    def d(self, e: Expr) -> Expr:
        hit = self.memo.get(e)
        if hit is None:
            hit = self._rule(e)
            self.memo[e] = hit
        return hit

    def _beta(self):
        return _fresh_temp(len(self.var_shape)) if self.var_shape else ()

    def _rule(self, e: Expr) -> Expr:
        k = e.kind
        if k.is_terminal:
            return self.rules.terminal(e)
        if k is core.GRAD:
            return self.rules.grad_node(e, self)
        if k is core.VARIABLE:
            return self.rules.variable_node(e, self)
        if k in _DERIVATIVE_KINDS:
            raise UnsupportedDerivative(
                f"cannot differentiate through an unevaluated {k.name} node"
            )
        if k is core.CONDITIONAL:
            cond, t, f = e.operands
            return build(core.CONDITIONAL, (cond, self.d(t), self.d(f)))
        if k.group is core.Group.BOOLEAN:
            raise UnsupportedDerivative("boolean expressions have no derivative")
        handler = _CHAIN_RULES.get(k) or _CHAIN_RULES[k.group]
        return handler(self, e)

    # generic building blocks

    def scaled(self, factor, da) -> Expr:
        """factor * da for a scalar chain factor."""
        if is_zero(da):
            return da
        return _mul(factor, da)


def _rule_sum(eng, e):
    a, b = e.operands
    return _add(eng.d(a), eng.d(b))


def _rule_product(eng, e):
    a, b = e.operands
    da, db = eng.d(a), eng.d(b)
    V = eng.var_shape
    if a.shape == () and b.shape == ():
        return _add(_mul(da, b), _mul(a, db))
    scalar, tensor = (a, b) if a.shape == () else (b, a)
    dscalar, dtensor = (da, db) if a.shape == () else (db, da)
    if not V:
        return _add(_mul(dscalar, tensor), _mul(scalar, dtensor))
    alpha = _fresh_temp(tensor.rank)
    beta = eng._beta()
    term1 = _mul(_ix(dscalar, beta), _ix(tensor, alpha))
    term2 = _mul(scalar, _ix(dtensor, alpha + beta))
    return _ct(_add(term1, term2), alpha + beta)


def _rule_division(eng, e):
    a, b = e.operands
    da, db = eng.d(a), eng.d(b)
    num = _sub(_mul(b, da), _mul(a, db))
    if is_zero(num):
        return num
    return _mul(divide(1, _mul(b, b)), num)


def _rule_power(eng, e):
    a, b = e.operands
    da, db = eng.d(a), eng.d(b)
    bval = core.literal_value(b)
    if bval is not None:
        if bval == 0:
            return _zero_like(e, eng.var_shape)
        if bval == 1:
            return da
        return eng.scaled(_mul(b, power(a, _sub(b, core.int_literal(1)))), da)
    # General exponent: a**b * (ln(a) db + (b/a) da).
    inner = _add(_mul(ln(a), db), _mul(divide(b, a), da))
    return eng.scaled(e, inner)


_UNARY_FACTORS = {
    core.SQRT: lambda a, e: divide(1, _mul(core.int_literal(2), e)),
    core.EXP: lambda a, e: e,
    core.LN: lambda a, e: divide(1, a),
    core.ABS: lambda a, e: sign_(a),
    core.COS: lambda a, e: _mul(core.int_literal(-1), sin(a)),
    core.SIN: lambda a, e: cos_(a),
    core.TAN: lambda a, e: _add(core.int_literal(1), _mul(tan(a), tan(a))),
    core.ACOS: lambda a, e: _mul(core.int_literal(-1),
                                 divide(1, sqrt(_sub(core.int_literal(1), _mul(a, a))))),
    core.ASIN: lambda a, e: divide(1, sqrt(_sub(core.int_literal(1), _mul(a, a)))),
    core.ATAN: lambda a, e: divide(1, _add(core.int_literal(1), _mul(a, a))),
    core.ERF: lambda a, e: _mul(core.real_literal(2.0 / math.sqrt(math.pi)),
                                exp(_mul(core.int_literal(-1), _mul(a, a)))),
}


def _rule_unary_fn(eng, e):
    (a,) = e.operands
    if e.kind is core.SIGN:
        return _zero_like(e, eng.var_shape)
    factor = _UNARY_FACTORS[e.kind](a, e)
    return eng.scaled(factor, eng.d(a))


_BESSEL_RECURRENCE = {
    core.BESSEL_J: (bessel_J, -1),
    core.BESSEL_Y: (bessel_Y, -1),
    core.BESSEL_I: (bessel_I, 1),
    core.BESSEL_K: (bessel_K, -1),
}


def _rule_bessel(eng, e):
    nu, x = e.operands
    if not is_zero(eng.d(nu)):
        raise UnsupportedDerivative("cannot differentiate with respect to a Bessel order")
    fn, s = _BESSEL_RECURRENCE[e.kind]
    lower = fn(_sub(nu, core.int_literal(1)), x)
    upper = fn(_add(nu, core.int_literal(1)), x)
    combo = _add(lower, _mul(core.int_literal(s), upper))
    half = core.real_literal(0.5 if e.kind is not core.BESSEL_K else -0.5)
    return eng.scaled(_mul(half, combo), eng.d(x))


def _rule_indexed(eng, e):
    (a,) = e.operands
    da = eng.d(a)
    beta = eng._beta()
    return _ct(_ix(da, e.payload + beta), beta)


def _rule_component_tensor(eng, e):
    (a,) = e.operands
    da = eng.d(a)
    beta = eng._beta()
    if beta:
        da = _ix(da, beta)
    return _ct(da, e.payload + beta)


def _rule_index_sum(eng, e):
    (a,) = e.operands
    da = eng.d(a)

    # Distribute the sum over additive terms so each contraction stays a
    # directly wrapped product, the shape implicit summation produces.
    def wrap(t):
        if t.kind is core.SUM:
            x, y = t.operands
            return _add(wrap(x), wrap(y))
        return build(core.INDEX_SUM, (t,), e.payload)

    return wrap(da)


def _rule_list_tensor(eng, e):
    return build(core.LIST_TENSOR, tuple(eng.d(o) for o in e.operands))


def _rule_restriction(eng, e):
    (a,) = e.operands
    da = eng.d(a)
    if is_zero(da):
        return _zero_like(e, eng.var_shape)
    return build(e.kind, (da,))


def _rule_transpose(eng, e):
    (a,) = e.operands
    da = eng.d(a)
    if not eng.var_shape:
        return build(core.TRANSPOSE, (da,))
    i2, j2 = _fresh_temp(2)
    beta = eng._beta()
    return _ct(_ix(da, (j2, i2) + beta), (i2, j2) + beta)


def _rule_linear_rank2(eng, e):
    # sym, skew, dev: linear maps on square matrices.
    (a,) = e.operands
    da = eng.d(a)
    if not eng.var_shape:
        return build(e.kind, (da,))
    n = e.shape[0]
    i2, j2 = _fresh_temp(2)
    beta = eng._beta()
    dij = _ix(da, (i2, j2) + beta)
    dji = _ix(da, (j2, i2) + beta)
    if e.kind is core.SYM:
        body = _mul(core.real_literal(0.5), _add(dij, dji))
    elif e.kind is core.SKEW:
        body = _mul(core.real_literal(0.5), _sub(dij, dji))
    else:  # dev
        kk = _fresh_temp()
        tr_part = _sum_over(_ix(da, (kk, kk) + beta), (kk,))
        delta = _ix(core.identity(n), (i2, j2))
        body = _sub(dij, _mul(divide(1, core.int_literal(n)), _mul(delta, tr_part)))
    return _ct(body, (i2, j2) + beta)


def _rule_trace(eng, e):
    (a,) = e.operands
    da = eng.d(a)
    if not eng.var_shape:
        return build(core.TRACE, (da,))
    kk = _fresh_temp()
    beta = eng._beta()
    return _ct(_sum_over(_ix(da, (kk, kk) + beta), (kk,)), beta)


def _rule_inner(eng, e):
    a, b = e.operands
    da, db = eng.d(a), eng.d(b)
    alpha = _fresh_temp(a.rank)
    beta = eng._beta()
    t1 = _star_chain(_ix(da, alpha + beta), _ix(b, alpha))
    t2 = _star_chain(_ix(a, alpha), _ix(db, alpha + beta))
    return _ct(_add(t1, t2), beta)


def _rule_dot(eng, e):
    a, b = e.operands
    da, db = eng.d(a), eng.d(b)
    alpha = _fresh_temp(a.rank - 1)
    gamma = _fresh_temp(b.rank - 1)
    kk = _fresh_temp()
    beta = eng._beta()
    t1 = _star_chain(_ix(da, alpha + (kk,) + beta), _ix(b, (kk,) + gamma))
    t2 = _star_chain(_ix(a, alpha + (kk,)), _ix(db, (kk,) + gamma + beta))
    return _ct(_add(t1, t2), alpha + gamma + beta)


def _rule_outer(eng, e):
    a, b = e.operands
    da, db = eng.d(a), eng.d(b)
    alpha = _fresh_temp(a.rank)
    gamma = _fresh_temp(b.rank)
    beta = eng._beta()
    t1 = _mul(_ix(da, alpha + beta), _ix(b, gamma))
    t2 = _mul(_ix(a, alpha), _ix(db, gamma + beta))
    return _ct(_add(t1, t2), alpha + gamma + beta)


def _rule_cross(eng, e):
    a, b = e.operands
    da, db = eng.d(a), eng.d(b)
    beta = eng._beta()

    def comp(x, n):
        return _ix(x, (FixedIndex(n),))

    def dcomp(dx, n):
        return _ix(dx, (FixedIndex(n),) + beta)

    def term(k1, k2):
        return _add(
            _sub(_mul(dcomp(da, k1), comp(b, k2)), _mul(dcomp(da, k2), comp(b, k1))),
            _sub(_mul(comp(a, k1), dcomp(db, k2)), _mul(comp(a, k2), dcomp(db, k1))),
        )

    lt = build(core.LIST_TENSOR, (term(1, 2), term(2, 0), term(0, 1)))
    if not beta:
        return lt
    nu = _fresh_temp()
    return _ct(_ix(lt, (nu,)), (nu,) + beta)


def _det_component(eng, a, da, beta):
    i2, j2 = _fresh_temp(2)
    return _star_chain(_ix(cofac(a), (i2, j2)), _ix(da, (i2, j2) + beta))


def _rule_determinant(eng, e):
    (a,) = e.operands
    da = eng.d(a)
    if is_zero(da):
        return _zero_like(e, eng.var_shape)
    beta = eng._beta()
    return _ct(_det_component(eng, a, da, beta), beta)


def _inv_component(a, da, i2, j2, beta):
    kk, ll = _fresh_temp(2)
    ia = inv(a)
    body = _star_chain(_ix(ia, (i2, kk)), _ix(da, (kk, ll) + beta), _ix(ia, (ll, j2)))
    return _mul(core.int_literal(-1), body)


def _rule_inverse(eng, e):
    (a,) = e.operands
    da = eng.d(a)
    if is_zero(da):
        return _zero_like(e, eng.var_shape)
    i2, j2 = _fresh_temp(2)
    beta = eng._beta()
    return _ct(_inv_component(a, da, i2, j2, beta), (i2, j2) + beta)


def _rule_cofactor(eng, e):
    # cofac(A) = det(A) inv(A)^T, differentiated by parts.
    (a,) = e.operands
    da = eng.d(a)
    if is_zero(da):
        return _zero_like(e, eng.var_shape)
    i2, j2 = _fresh_temp(2)
    beta = eng._beta()
    ddet = _det_component(eng, a, da, beta)
    t1 = _mul(ddet, _ix(inv(a), (j2, i2)))
    t2 = _mul(build(core.DETERMINANT, (a,)), _inv_component(a, da, j2, i2, beta))
    return _ct(_add(t1, t2), (i2, j2) + beta)


def _rule_diag(eng, e):
    (a,) = e.operands
    da = eng.d(a)
    if not eng.var_shape:
        return build(core.DIAG, (da,))
    # Componentwise with fixed indices; off-diagonal entries are zeros of
    # the derivative shape.
    n = e.shape[0]
    beta = eng._beta()
    zero_entry = core.annotated_zero(eng.var_shape,
                                     {Index(i): d for i, d in da._free})

    def entry(comp):
        i2, j2 = comp
        if i2 != j2:
            return zero_entry
        pick = (FixedIndex(i2),) if a.rank == 1 else (FixedIndex(i2), FixedIndex(j2))
        return _ct(_ix(da, pick + beta), beta)

    return from_components((n, n), entry)


def _rule_diag_vector(eng, e):
    (a,) = e.operands
    da = eng.d(a)
    if not eng.var_shape:
        return build(core.DIAG_VECTOR, (da,))
    i2 = _fresh_temp()
    beta = eng._beta()
    return _ct(_ix(da, (i2, i2) + beta), (i2,) + beta)


_CHAIN_RULES = {
    core.SUM: _rule_sum,
    core.PRODUCT: _rule_product,
    core.DIVISION: _rule_division,
    core.POWER: _rule_power,
    core.BESSEL_J: _rule_bessel,
    core.BESSEL_Y: _rule_bessel,
    core.BESSEL_I: _rule_bessel,
    core.BESSEL_K: _rule_bessel,
    core.Group.SCALAR_FN: _rule_unary_fn,
    core.INDEXED: _rule_indexed,
    core.COMPONENT_TENSOR: _rule_component_tensor,
    core.INDEX_SUM: _rule_index_sum,
    core.LIST_TENSOR: _rule_list_tensor,
    core.Group.RESTRICTION: _rule_restriction,
    core.TRANSPOSE: _rule_transpose,
    core.SYM: _rule_linear_rank2,
    core.SKEW: _rule_linear_rank2,
    core.DEV: _rule_linear_rank2,
    core.TRACE: _rule_trace,
    core.INNER: _rule_inner,
    core.DOT: _rule_dot,
    core.OUTER: _rule_outer,
    core.CROSS: _rule_cross,
    core.DETERMINANT: _rule_determinant,
    core.INVERSE: _rule_inverse,
    core.COFACTOR: _rule_cofactor,
    core.DIAG: _rule_diag,
    core.DIAG_VECTOR: _rule_diag_vector,
}


# --- rule sets per differentiation variable ------------------------------------------

class _SpatialRules:
    """Full-gradient rules: the derivative of e has shape e.shape + (d,)."""

    def __init__(self, dim):
        self.dim = dim
        self.var_shape = (dim,)

    def terminal(self, e):
        if e.kind is core.SPATIAL_COORDINATE:
            return core.identity(self.dim)
        if core.is_cellwise_constant(e):
            return _zero_like(e, self.var_shape)
        if is_spatial_terminal(e):
            return build(core.GRAD, (e,))
        return _zero_like(e, self.var_shape)

    def grad_node(self, e, eng):
        return build(core.GRAD, (e,))

    def variable_node(self, e, eng):
        return eng.d(e.operands[0])


def _delta_tensor(shape):
    """The identity map on tensors of the given shape, as a 2*rank tensor."""
    if shape == ():
        return core.int_literal(1)
    alpha = _fresh_temp(len(shape))
    beta = _fresh_temp(len(shape))
    body = None
    for a_k, b_k, dim in zip(alpha, beta, shape):
        factor = _ix(core.identity(dim), (a_k, b_k))
        body = factor if body is None else _mul(body, factor)
    return _ct(body, alpha + beta)


class _VariableRules:
    """Differentiation with respect to one annotated variable instance."""

    def __init__(self, target):
        if target.kind is not core.VARIABLE:
            raise NotAVariable("diff expects a variable annotation")
        self.target = target
        self.var_shape = target.shape

    def terminal(self, e):
        return _zero_like(e, self.var_shape)

    def grad_node(self, e, eng):
        # A gradient of a function does not depend on the variable.
        return _zero_like(e, self.var_shape)

    def variable_node(self, e, eng):
        if e.payload == self.target.payload:
            return _delta_tensor(self.var_shape)
        return eng.d(e.operands[0])


class _DirectionalRules:
    """Gateaux rules: coefficient targets map to their direction expressions."""

    def __init__(self, directions, overrides, lower_grad):
        self.directions = directions      # coefficient node -> direction expr
        self.overrides = overrides or {}  # coefficient node -> d(node)/d(target)
        self.lower_grad = lower_grad
        self.var_shape = ()

    def terminal(self, e):
        hit = self.directions.get(e)
        if hit is not None:
            return hit
        over = self.overrides.get(e)
        if over is not None:
            return over
        return _zero_like(e, ())

    def grad_node(self, e, eng):
        (f,) = e.operands
        df = eng.d(f)
        if is_zero(df) or df.cell is None:
            # No cell means no spatially varying content, hence zero gradient.
            return _zero_like(e, ())
        return self.lower_grad(df)

    def variable_node(self, e, eng):
        return eng.d(e.operands[0])


# --- the outer elimination pass --------------------------------------------------------

class _DerivativeLowering:
    def __init__(self):
        self.memo = {}
        self._spatial = {}

    def spatial_engine(self, dim) -> _ForwardEngine:
        eng = self._spatial.get(dim)
        if eng is None:
            eng = _ForwardEngine(_SpatialRules(dim))
            self._spatial[dim] = eng
        return eng

    def gradient_of(self, e: Expr) -> Expr:
        if e.cell is None:
            raise Unsupported("cannot take a spatial gradient without a cell")
        return self.spatial_engine(e.cell.geometric_dimension).d(e)

    def lower(self, e: Expr) -> Expr:
        if not e.has_derivative:
            return e
        hit = self.memo.get(e)
        if hit is not None:
            return hit
        out = self._lower(e)
        self.memo[e] = out
        return out

    def _lower(self, e: Expr) -> Expr:
        k = e.kind
        ops = tuple(self.lower(o) for o in e.operands)
        if k is core.GRAD:
            return self.gradient_of(ops[0])
        if k is core.SPATIAL_DERIVATIVE:
            g = self.gradient_of(ops[0])
            (term,) = e.payload
            alpha = _fresh_temp(ops[0].rank) if ops[0].rank else ()
            return _ct(_ix(g, alpha + (term,)), alpha)
        if k is core.DIVERGENCE:
            g = self.gradient_of(ops[0])
            kk = _fresh_temp()
            alpha = _fresh_temp(ops[0].rank - 1) if ops[0].rank > 1 else ()
            return _ct(_sum_over(_ix(g, alpha + (kk, kk)), (kk,)), alpha)
        if k is core.NABLA_DIV:
            g = self.gradient_of(ops[0])
            kk = _fresh_temp()
            alpha = _fresh_temp(ops[0].rank - 1) if ops[0].rank > 1 else ()
            return _ct(_sum_over(_ix(g, (kk,) + alpha + (kk,)), (kk,)), alpha)
        if k is core.NABLA_GRAD:
            g = self.gradient_of(ops[0])
            kk = _fresh_temp()
            alpha = _fresh_temp(ops[0].rank) if ops[0].rank else ()
            return _ct(_ix(g, alpha + (kk,)), (kk,) + alpha)
        if k is core.CURL:
            g = self.gradient_of(ops[0])

            def gc(a, b):
                return _ix(g, (FixedIndex(a), FixedIndex(b)))

            return build(core.LIST_TENSOR, (
                _sub(gc(2, 1), gc(1, 2)),
                _sub(gc(0, 2), gc(2, 0)),
                _sub(gc(1, 0), gc(0, 1)),
            ))
        if k is core.VARIABLE_DERIVATIVE:
            base, var = ops
            return _ForwardEngine(_VariableRules(var)).d(base)
        if k is core.EXTERIOR_DERIVATIVE:
            raise UnsupportedDerivative(
                "the exterior derivative is represented but has no rewrite rules"
            )
        if ops == e.operands:
            return e
        return build(k, ops, e.payload)


def apply_derivatives(root: Expr) -> Expr:
    """Eliminate every derivative operator node, innermost first.

    Afterwards gradients apply only directly to spatially varying terminal
    expressions (or recursively to such gradients), and no coordinate,
    variable or directional derivative requests remain.
    """
    return _canonicalize_indices(_DerivativeLowering().lower(as_expr(root)))


def diff_spatial(e: Expr) -> Expr:
    """The full spatial gradient of a derivative-free expression."""
    lowering = _DerivativeLowering()
    return _canonicalize_indices(lowering.gradient_of(lowering.lower(as_expr(e))))


def diff_variable(e: Expr, v: Expr) -> Expr:
    """Derivative with respect to a variable annotation."""
    if not isinstance(v, Expr) or v.kind is not core.VARIABLE:
        raise NotAVariable("diff expects a variable annotation")
    lowering = _DerivativeLowering()
    out = _ForwardEngine(_VariableRules(v)).d(lowering.lower(as_expr(e)))
    return _canonicalize_indices(out)


def _mul_compat(h: Expr, v: Expr) -> Expr:
    if h.shape == () or v.shape == ():
        return _mul(h, v)
    if h.shape[-1] == v.shape[0]:
        return dot(h, v)
    raise ShapeMismatch(f"cannot combine override shape {h.shape} with direction {v.shape}")


def diff_directional(e: Expr, targets, overrides=None) -> Expr:
    """Directional (Gateaux) derivative of e.

    `targets` maps coefficient terminals to direction expressions of the
    same shape; `overrides` optionally maps further terminals g to given
    partial derivatives h (applied as h times the direction).
    """
    directions = {}
    for target, direction in dict(targets).items():
        direction = as_expr(direction)
        if target.kind not in (core.COEFFICIENT, core.CONSTANT):
            raise NotACoefficient("directional derivatives target coefficient functions")
        if target.shape != direction.shape:
            raise ShapeMismatch(
                f"direction shape {direction.shape} does not match target shape {target.shape}"
            )
        directions[target] = direction
    applied_overrides = {}
    if overrides:
        if len(directions) != 1:
            raise Unsupported("derivative overrides require a single target")
        (v,) = directions.values()
        for g, h in dict(overrides).items():
            applied_overrides[g] = _mul_compat(as_expr(h), v)
    lowering = _DerivativeLowering()
    clean = lowering.lower(as_expr(e))

    def lower_grad(expr):
        return lowering.gradient_of(lowering.lower(expr))

    rules = _DirectionalRules(directions, applied_overrides, lower_grad)
    return _canonicalize_indices(_ForwardEngine(rules).d(clean))


# --- component padding ------------------------------------------------------------------

def pad_direction(u_full: Expr, selection, v_hat: Expr) -> Expr:
    """Build a direction of u_full's value shape with v_hat in the selected
    component slots and annotated zeros elsewhere."""
    v_hat = as_expr(v_hat)
    shape = u_full.shape
    size = math.prod(shape) if shape else 1
    flat_selection = []
    for item in selection:
        flat = _flat_component(u_full, item, size)
        flat_selection.append(flat)
    if len(set(flat_selection)) != len(flat_selection):
        raise ComponentOutOfRange("component selected twice")
    if len(flat_selection) == 1:
        if v_hat.shape != ():
            raise ShapeMismatch("a single-component direction must be scalar")
        entries = {flat_selection[0]: v_hat}
    else:
        if v_hat.shape != (len(flat_selection),):
            raise ShapeMismatch(
                f"direction shape {v_hat.shape} does not cover {len(flat_selection)} components"
            )
        entries = {flat: _ix(v_hat, (FixedIndex(n),))
                   for n, flat in enumerate(flat_selection)}
    if shape == ():
        return entries.get(0, core.annotated_zero())

    strides = _row_major_strides(shape)

    def component(comp):
        flat = sum(c * s for c, s in zip(comp, strides))
        return entries.get(flat, core.annotated_zero())

    return from_components(shape, component)


def _row_major_strides(shape):
    strides = []
    acc = 1
    for dim in reversed(shape):
        strides.append(acc)
        acc *= dim
    return tuple(reversed(strides))


def _flat_component(u_full, item, size):
    if isinstance(item, tuple):
        strides = _row_major_strides(u_full.shape)
        if len(item) != len(strides):
            raise ComponentOutOfRange(f"component {item} does not address shape {u_full.shape}")
        if any(not (0 <= c < d) for c, d in zip(item, u_full.shape)):
            raise ComponentOutOfRange(f"component {item} out of range for shape {u_full.shape}")
        return sum(c * s for c, s in zip(item, strides))
    flat = int(item)
    if not (0 <= flat < size):
        raise ComponentOutOfRange(f"component {flat} out of range for {size} slots")
    return flat


def mixed_directions(targets, direction: Expr) -> dict:
    """Split a direction over a mixed space into per-target slices.

    `targets` is an ordered sequence of coefficient terminals whose value
    sizes sum to the direction's (flat) value size.
    """
    direction = as_expr(direction)
    sizes = [math.prod(t.shape) if t.shape else 1 for t in targets]
    total = sum(sizes)
    if direction.shape != (total,):
        raise ShapeMismatch(
            f"mixed direction must have shape ({total},), got {direction.shape}"
        )
    out = {}
    offset = 0
    for target, size in zip(targets, sizes):
        if target.shape == ():
            out[target] = _ix(direction, (FixedIndex(offset),))
        else:
            strides = _row_major_strides(target.shape)

            def comp(c, base=offset, strides=strides):
                return _ix(direction, (FixedIndex(base + sum(a * b for a, b in zip(c, strides))),))

            out[target] = from_components(target.shape, comp)
        offset += size
    return out
