"""Index notation: component extraction, tensor reconstruction, index sums."""

from __future__ import annotations

from . import core
from .core import Expr, FixedIndex, Index, as_expr, as_multi_index, fresh_index
from .errors import RankMismatch, ShapeMismatch, UnboundIndex

# Predefined free indices, by convention.
i, j, k, l, p, q, r, s = (Index(n) for n in range(8))


def indices(n: int):
    """Create n fresh free indices."""
    return fresh_index(n)


def index_expr(e, mi) -> Expr:
    """Extract a (possibly index-valued) component: A[i, j], v[0], ..."""
    e = as_expr(e)
    mi = as_multi_index(mi)
    return core.build(core.INDEXED, (e,), mi)


def index_sum(e, idx) -> Expr:
    """Sum an expression over one of its free indices."""
    e = as_expr(e)
    if not isinstance(idx, Index):
        raise UnboundIndex(f"can only sum over a free index, got {idx!r}")
    return core.build(core.INDEX_SUM, (e,), (idx,))


def _tensor_from_indexed(e, mi) -> Expr:
    mi = tuple(mi)
    for term in mi:
        if not isinstance(term, Index):
            raise UnboundIndex(f"as_tensor binds free indices, got {term!r}")
    return core.build(core.COMPONENT_TENSOR, (e,), mi)


def _tensor_from_components(components) -> Expr:
    parts = []
    for c in components:
        if isinstance(c, (tuple, list)):
            parts.append(_tensor_from_components(c))
        else:
            parts.append(as_expr(c))
    return core.build(core.LIST_TENSOR, tuple(parts))


def as_tensor(e, mi=None) -> Expr:
    """Map a scalar expression with free indices to a tensor expression,
    or assemble one from a nested sequence of components."""
    if mi is None:
        if isinstance(e, (tuple, list)):
            return _tensor_from_components(e)
        return as_expr(e)
    if isinstance(mi, Index):
        mi = (mi,)
    return _tensor_from_indexed(as_expr(e), mi)


def as_vector(e, idx=None) -> Expr:
    if idx is not None:
        out = _tensor_from_indexed(as_expr(e), (idx,))
    elif isinstance(e, (tuple, list)):
        out = _tensor_from_components(e)
    else:
        out = as_expr(e)
    if out.rank != 1:
        raise RankMismatch(f"as_vector produced rank {out.rank}")
    return out


def as_matrix(e, mi=None) -> Expr:
    if mi is not None:
        out = _tensor_from_indexed(as_expr(e), tuple(mi))
    else:
        out = _tensor_from_components(e)
    if out.rank != 2:
        raise RankMismatch(f"as_matrix produced rank {out.rank}")
    return out


def component(e, comp) -> Expr:
    """Extract one scalar component by a tuple of concrete positions."""
    e = as_expr(e)
    comp = tuple(comp)
    if len(comp) != e.rank:
        raise RankMismatch(f"component {comp} does not address shape {e.shape}")
    return index_expr(e, tuple(FixedIndex(c) for c in comp))


def from_components(shape, component_fn) -> Expr:
    """Build a tensor of the given shape from per-component scalar expressions."""
    if shape == ():
        return as_expr(component_fn(()))

    def rec(prefix, rest):
        if rest == ():
            return as_expr(component_fn(prefix))
        return core.build(
            core.LIST_TENSOR,
            tuple(rec(prefix + (n,), rest[1:]) for n in range(rest[0])),
        )

    return rec((), tuple(shape))


def expand_slices(e, items, fresh=None) -> Expr:
    """Resolve an indexing tuple that may contain full slices.

    Slice positions become fresh free indices which are immediately bound
    back into tensor axes, preserving their order. `fresh` supplies index
    objects (defaults to session-fresh ones).
    """
    e = as_expr(e)
    items = tuple(items)
    if len(items) != e.rank:
        raise RankMismatch(
            f"indexing a rank-{e.rank} expression with {len(items)} subscripts"
        )
    mi = []
    bound = []
    for item in items:
        if isinstance(item, slice):
            if item != slice(None):
                raise ShapeMismatch("only full slices ':' are supported")
            idx = fresh() if fresh is not None else fresh_index()
            mi.append(idx)
            bound.append(idx)
        else:
            mi.append(core.as_index_term(item))
    out = index_expr(e, tuple(mi))
    if bound:
        out = _tensor_from_indexed(out, tuple(bound))
    return out
