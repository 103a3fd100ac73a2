"""The immutable, interned expression DAG.

Every expression node is created through an interner, so structurally
identical expressions are the same object and handle equality is object
identity. A node carries a kind tag, operand handles, a per-kind payload
of immutable terminal data, and a cached shape / free-index signature
computed locally from its operands (never by traversing sub-DAGs).

A small, fixed set of safe local simplifications fires at construction:
multiply by one, add zero, multiply by zero (preserving the annotated
shape and free indices of the result), folding of literal-only scalar
applications, and cancellation of indexing immediately followed by the
matching tensor reconstruction.
"""

from __future__ import annotations

import enum
import math
import threading
from dataclasses import dataclass

from .cells import Cell
from .elements import (
    Element,
    EnrichedElement,
    FiniteElement,
    MixedElement,
    RestrictedElement,
    TensorElement,
    VectorElement,
)
from .errors import (
    ArityError,
    BooleanMisuse,
    CellMismatch,
    DivisionByZero,
    DoubleRestriction,
    DuplicateIndex,
    FreeIndexConflict,
    IndexOutOfRange,
    InvalidTerminal,
    NotAVariable,
    RankError,
    RankMismatch,
    ShapeMismatch,
    UnboundIndex,
    Unsupported,
)


# --- indices ----------------------------------------------------------------

@dataclass(frozen=True)
class Index:
    """A symbolic free index, identified by an integer id."""

    id: int

    def __repr__(self):
        return index_name(self.id)


@dataclass(frozen=True)
class FixedIndex:
    """A concrete index value into one tensor axis."""

    value: int

    def __repr__(self):
        return str(self.value)


# Predefined index names map to reserved ids 0-7; ids 8-63 form a pool the
# frontend draws from deterministically; fresh API indices start at 64.
_PREDEFINED_INDEX_NAMES = ("i", "j", "k", "l", "p", "q", "r", "s")
FRONTEND_INDEX_POOL_BASE = 8
_FRESH_INDEX_BASE = 64


def index_name(index_id: int) -> str:
    if 0 <= index_id < len(_PREDEFINED_INDEX_NAMES):
        return _PREDEFINED_INDEX_NAMES[index_id]
    return f"ii{index_id}"


def predefined_indices() -> dict:
    return {name: Index(n) for n, name in enumerate(_PREDEFINED_INDEX_NAMES)}


def as_index_term(obj):
    if isinstance(obj, (Index, FixedIndex)):
        return obj
    if isinstance(obj, int) and not isinstance(obj, bool):
        if obj < 0:
            raise IndexOutOfRange(f"negative index {obj}")
        return FixedIndex(obj)
    raise InvalidTerminal(f"not an index: {obj!r}")


def as_multi_index(obj) -> tuple:
    if isinstance(obj, (Index, FixedIndex, int)):
        return (as_index_term(obj),)
    return tuple(as_index_term(t) for t in obj)


# --- node kinds --------------------------------------------------------------

class Group(enum.Enum):
    LITERAL = "literal"
    GEOMETRIC = "geometric"
    COEFFICIENT = "coefficient"
    ARGUMENT = "argument"
    INDEXING = "indexing"
    ARITHMETIC = "arithmetic"
    SCALAR_FN = "scalar_fn"
    TENSOR = "tensor"
    DIFFERENTIAL = "differential"
    RESTRICTION = "restriction"
    BOOLEAN = "boolean"
    CONDITIONAL = "conditional"
    VARIABLE = "variable"


TERMINAL_GROUPS = frozenset(
    {Group.LITERAL, Group.GEOMETRIC, Group.COEFFICIENT, Group.ARGUMENT}
)


@dataclass(frozen=True, eq=False)
class Kind:
    name: str
    group: Group
    sort: int

    @property
    def is_terminal(self) -> bool:
        return self.group in TERMINAL_GROUPS

    def __repr__(self):
        return self.name


KINDS: dict = {}


def _register(name: str, group: Group) -> Kind:
    kind = Kind(name, group, len(KINDS))
    KINDS[name] = kind
    return kind


# terminals
INT_LITERAL = _register("int_literal", Group.LITERAL)
REAL_LITERAL = _register("real_literal", Group.LITERAL)
ZERO = _register("zero", Group.LITERAL)
IDENTITY = _register("identity", Group.LITERAL)
PERMUTATION_SYMBOL = _register("permutation_symbol", Group.LITERAL)
UNIT_VECTOR = _register("unit_vector", Group.LITERAL)
SPATIAL_COORDINATE = _register("spatial_coordinate", Group.GEOMETRIC)
FACET_NORMAL = _register("facet_normal", Group.GEOMETRIC)
CELL_VOLUME = _register("cell_volume", Group.GEOMETRIC)
CIRCUMRADIUS = _register("circumradius", Group.GEOMETRIC)
FACET_AREA = _register("facet_area", Group.GEOMETRIC)
CELL_SURFACE_AREA = _register("cell_surface_area", Group.GEOMETRIC)
CONSTANT = _register("constant", Group.COEFFICIENT)
COEFFICIENT = _register("coefficient", Group.COEFFICIENT)
ARGUMENT = _register("argument", Group.ARGUMENT)

# operators
INDEXED = _register("indexed", Group.INDEXING)
COMPONENT_TENSOR = _register("component_tensor", Group.INDEXING)
INDEX_SUM = _register("index_sum", Group.INDEXING)
LIST_TENSOR = _register("list_tensor", Group.INDEXING)
SUM = _register("sum", Group.ARITHMETIC)
PRODUCT = _register("product", Group.ARITHMETIC)
DIVISION = _register("division", Group.SCALAR_FN)
POWER = _register("power", Group.SCALAR_FN)
SQRT = _register("sqrt", Group.SCALAR_FN)
EXP = _register("exp", Group.SCALAR_FN)
LN = _register("ln", Group.SCALAR_FN)
ABS = _register("abs", Group.SCALAR_FN)
SIGN = _register("sign", Group.SCALAR_FN)
COS = _register("cos", Group.SCALAR_FN)
SIN = _register("sin", Group.SCALAR_FN)
TAN = _register("tan", Group.SCALAR_FN)
ACOS = _register("acos", Group.SCALAR_FN)
ASIN = _register("asin", Group.SCALAR_FN)
ATAN = _register("atan", Group.SCALAR_FN)
ERF = _register("erf", Group.SCALAR_FN)
BESSEL_J = _register("bessel_j", Group.SCALAR_FN)
BESSEL_Y = _register("bessel_y", Group.SCALAR_FN)
BESSEL_I = _register("bessel_i", Group.SCALAR_FN)
BESSEL_K = _register("bessel_k", Group.SCALAR_FN)
DOT = _register("dot", Group.TENSOR)
INNER = _register("inner", Group.TENSOR)
OUTER = _register("outer", Group.TENSOR)
CROSS = _register("cross", Group.TENSOR)
TRANSPOSE = _register("transpose", Group.TENSOR)
SYM = _register("sym", Group.TENSOR)
SKEW = _register("skew", Group.TENSOR)
DEV = _register("dev", Group.TENSOR)
TRACE = _register("trace", Group.TENSOR)
DETERMINANT = _register("determinant", Group.TENSOR)
COFACTOR = _register("cofactor", Group.TENSOR)
INVERSE = _register("inverse", Group.TENSOR)
DIAG = _register("diag", Group.TENSOR)
DIAG_VECTOR = _register("diag_vector", Group.TENSOR)
GRAD = _register("grad", Group.DIFFERENTIAL)
NABLA_GRAD = _register("nabla_grad", Group.DIFFERENTIAL)
DIVERGENCE = _register("divergence", Group.DIFFERENTIAL)
NABLA_DIV = _register("nabla_div", Group.DIFFERENTIAL)
CURL = _register("curl", Group.DIFFERENTIAL)
SPATIAL_DERIVATIVE = _register("spatial_derivative", Group.DIFFERENTIAL)
VARIABLE_DERIVATIVE = _register("variable_derivative", Group.DIFFERENTIAL)
EXTERIOR_DERIVATIVE = _register("exterior_derivative", Group.DIFFERENTIAL)
POSITIVE_RESTRICTED = _register("positive_restricted", Group.RESTRICTION)
NEGATIVE_RESTRICTED = _register("negative_restricted", Group.RESTRICTION)
AVG = _register("avg", Group.RESTRICTION)
EQ = _register("eq", Group.BOOLEAN)
NE = _register("ne", Group.BOOLEAN)
LE = _register("le", Group.BOOLEAN)
GE = _register("ge", Group.BOOLEAN)
LT = _register("lt", Group.BOOLEAN)
GT = _register("gt", Group.BOOLEAN)
AND = _register("and", Group.BOOLEAN)
OR = _register("or", Group.BOOLEAN)
NOT = _register("not", Group.BOOLEAN)
CONDITIONAL = _register("conditional", Group.CONDITIONAL)
VARIABLE = _register("variable", Group.VARIABLE)


def kind(name: str) -> Kind:
    try:
        return KINDS[name]
    except KeyError:
        raise ArityError(f"unknown node kind {name!r}") from None


# --- expression nodes ---------------------------------------------------------

class Expr:
    """One interned vertex of the expression DAG.

    Equality and hashing are object identity; the interner guarantees that
    identity coincides with structural equality within a session.
    """

    __slots__ = (
        "kind", "operands", "payload", "shape", "cell", "seq",
        "_free", "_counts", "is_boolean", "has_restriction", "has_derivative",
    )

    def __init__(self, kind, operands, payload, shape, free, counts, cell,
                 is_boolean, has_restriction, has_derivative, seq):
        self.kind = kind
        self.operands = operands
        self.payload = payload
        self.shape = shape
        self._free = free          # sorted tuple of (index id, dimension)
        self._counts = counts      # sorted tuple of (index id, occurrences)
        self.cell = cell
        self.is_boolean = is_boolean
        self.has_restriction = has_restriction
        self.has_derivative = has_derivative
        self.seq = seq

    @property
    def rank(self) -> int:
        return len(self.shape)

    @property
    def free_indices(self) -> dict:
        return {Index(i): d for i, d in self._free}

    @property
    def free_index_dims(self) -> dict:
        return dict(self._free)

    @property
    def free_index_counts(self) -> dict:
        return dict(self._counts)

    @property
    def is_terminal(self) -> bool:
        return self.kind.is_terminal

    def __repr__(self):
        if self.kind.is_terminal:
            return f"<{self.kind.name} {self.payload}>"
        return f"<{self.kind.name}/{len(self.operands)} #{self.seq}>"

    # Arithmetic operators are attached by formlang.operators on import.


def signature(e: Expr) -> tuple:
    """Return the cached (shape, free-index map) pair of an expression."""
    return e.shape, e.free_indices


# --- the interner -------------------------------------------------------------

# Auto-allocated function counts and variable labels start high so they can
# never alias the dense base-0 numbering that parsed modules assign.
_FRESH_COUNT_BASE = 1_000_000


class _Session:
    __slots__ = ("table", "lock", "seq", "function_count", "label_count",
                 "index_id", "intern_lookups", "nodes_created", "build_calls")

    def __init__(self):
        self.table = {}
        self.lock = threading.Lock()
        self.seq = 0
        self.function_count = _FRESH_COUNT_BASE
        self.label_count = _FRESH_COUNT_BASE
        self.index_id = _FRESH_INDEX_BASE
        self.intern_lookups = 0
        self.nodes_created = 0
        self.build_calls = 0


_session = _Session()


def session_stats() -> dict:
    """Instrumentation counters, used to assert construction cost bounds."""
    s = _session
    return {
        "intern_lookups": s.intern_lookups,
        "nodes_created": s.nodes_created,
        "build_calls": s.build_calls,
        "table_size": len(s.table),
    }


def reset_session():
    """Start a fresh interner and counters (test isolation only)."""
    global _session
    _session = _Session()


def fresh_function_count() -> int:
    with _session.lock:
        c = _session.function_count
        _session.function_count += 1
        return c


def fresh_label() -> int:
    with _session.lock:
        c = _session.label_count
        _session.label_count += 1
        return c


def fresh_index(n: int | None = None):
    """Create one fresh Index (or a tuple of n of them)."""
    with _session.lock:
        base = _session.index_id
        _session.index_id += n or 1
    if n is None:
        return Index(base)
    return tuple(Index(base + k) for k in range(n))


def _intern(kind, operands, payload, shape, free, counts, cell,
            is_boolean=False, has_restriction=False, has_derivative=False) -> Expr:
    s = _session
    key = (kind, operands, payload)
    with s.lock:
        s.intern_lookups += 1
        node = s.table.get(key)
        if node is None:
            node = Expr(kind, operands, payload, shape, free, counts, cell,
                        is_boolean, has_restriction, has_derivative, s.seq)
            s.table[key] = node
            s.seq += 1
            s.nodes_created += 1
        return node


# --- free-index bookkeeping ----------------------------------------------------

def _freeze(d: dict) -> tuple:
    return tuple(sorted(d.items()))


def _merge_free(maps, what: str) -> dict:
    out = {}
    for m in maps:
        for i, d in m:
            if i in out and out[i] != d:
                raise FreeIndexConflict(
                    f"index {index_name(i)} bound to dimensions {out[i]} and {d} in {what}"
                )
            out[i] = d
    return out


def _add_counts(maps) -> dict:
    out = {}
    for m in maps:
        for i, c in m:
            out[i] = out.get(i, 0) + c
    return out


def _max_counts(maps) -> dict:
    out = {}
    for m in maps:
        for i, c in m:
            out[i] = max(out.get(i, 0), c)
    return out


def _require_no_free(e: Expr, what: str):
    if e._free:
        names = ", ".join(index_name(i) for i, _ in e._free)
        raise FreeIndexConflict(f"{what} admits no free indices (got {names})")


def _require_scalar(e: Expr, what: str):
    if e.shape != ():
        raise ShapeMismatch(f"{what} requires a scalar operand, got shape {e.shape}")


def _common_cell(operands, payload_cell=None) -> Cell | None:
    cell = payload_cell
    for o in operands:
        if o.cell is None:
            continue
        if cell is None:
            cell = o.cell
        elif cell is not o.cell:
            raise CellMismatch(
                f"operands live on different cells: {cell.name} vs {o.cell.name}"
            )
    return cell


# --- terminal constructors ------------------------------------------------------

_EMPTY = ()


def annotated_zero(shape=(), free=None) -> Expr:
    """Literal zero annotated with a shape and a free-index map."""
    shape = tuple(int(s) for s in shape)
    if free is None:
        items = ()
        counts = ()
    elif isinstance(free, dict):
        items = tuple(sorted(
            (i.id if isinstance(i, Index) else int(i), int(d)) for i, d in free.items()
        ))
        counts = tuple((i, 1) for i, _ in items)
    else:
        items = tuple(sorted(free))
        counts = tuple((i, 1) for i, _ in items)
    return _intern(ZERO, _EMPTY, (shape, items), shape, items, counts, None)


def is_zero(e: Expr) -> bool:
    return e.kind is ZERO


def int_literal(value: int) -> Expr:
    value = int(value)
    if value == 0:
        return annotated_zero()
    return _intern(INT_LITERAL, _EMPTY, (value,), (), (), (), None)


def real_literal(value: float) -> Expr:
    value = float(value)
    if math.isnan(value):
        raise InvalidTerminal("NaN literals are not representable")
    if value == 0.0:
        return annotated_zero()
    return _intern(REAL_LITERAL, _EMPTY, (value,), (), (), (), None)


def as_expr(value) -> Expr:
    if isinstance(value, Expr):
        return value
    if isinstance(value, bool):
        raise InvalidTerminal("booleans are not expressions")
    if isinstance(value, int):
        return int_literal(value)
    if isinstance(value, float):
        return real_literal(value)
    raise InvalidTerminal(f"cannot interpret {value!r} as an expression")


def literal_value(e: Expr):
    """The numeric value of a literal scalar node, or None."""
    if e.kind is INT_LITERAL or e.kind is REAL_LITERAL:
        return e.payload[0]
    if e.kind is ZERO and e.shape == () and not e._free:
        return 0
    return None


def is_one(e: Expr) -> bool:
    v = literal_value(e)
    return v is not None and v == 1


def identity(dim: int) -> Expr:
    if dim < 1:
        raise InvalidTerminal("identity dimension must be positive")
    return _intern(IDENTITY, _EMPTY, (dim,), (dim, dim), (), (), None)


def permutation_symbol(dim: int) -> Expr:
    if dim < 2:
        raise InvalidTerminal("permutation symbol needs dimension >= 2")
    return _intern(PERMUTATION_SYMBOL, _EMPTY, (dim,), (dim,) * dim, (), (), None)


def unit_vector(dim: int, axis: int) -> Expr:
    if not (0 <= axis < dim):
        raise InvalidTerminal(f"unit vector axis {axis} out of range for dimension {dim}")
    return _intern(UNIT_VECTOR, _EMPTY, (dim, axis), (dim,), (), (), None)


def spatial_coordinate(cell: Cell) -> Expr:
    return _intern(SPATIAL_COORDINATE, _EMPTY, (cell,), (cell.geometric_dimension,),
                   (), (), cell)


def facet_normal(cell: Cell) -> Expr:
    return _intern(FACET_NORMAL, _EMPTY, (cell,), (cell.geometric_dimension,),
                   (), (), cell)


def _scalar_geometry(kind, cell):
    return _intern(kind, _EMPTY, (cell,), (), (), (), cell)


def cell_volume(cell: Cell) -> Expr:
    return _scalar_geometry(CELL_VOLUME, cell)


def circumradius(cell: Cell) -> Expr:
    return _scalar_geometry(CIRCUMRADIUS, cell)


def facet_area(cell: Cell) -> Expr:
    return _scalar_geometry(FACET_AREA, cell)


def cell_surface_area(cell: Cell) -> Expr:
    return _scalar_geometry(CELL_SURFACE_AREA, cell)


def constant(cell: Cell, count: int | None = None) -> Expr:
    if count is None:
        count = fresh_function_count()
    return _intern(CONSTANT, _EMPTY, (cell, count), (), (), (), cell)


def coefficient(element: Element, count: int | None = None) -> Expr:
    if count is None:
        count = fresh_function_count()
    return _intern(COEFFICIENT, _EMPTY, (element, count), element.value_shape,
                   (), (), element.cell)


def argument(element: Element, number: int) -> Expr:
    if number < 0:
        raise InvalidTerminal("argument numbers start at 0")
    return _intern(ARGUMENT, _EMPTY, (element, number), element.value_shape,
                   (), (), element.cell)


def test_function(element: Element) -> Expr:
    return argument(element, 0)


def trial_function(element: Element) -> Expr:
    return argument(element, 1)


def variable(e, label: int | None = None) -> Expr:
    e = as_expr(e)
    if label is None:
        label = fresh_label()
    return build(VARIABLE, (e,), (label,))


def terminal_element(e: Expr) -> Element | None:
    if e.kind is COEFFICIENT or e.kind is ARGUMENT:
        return e.payload[0]
    return None


def function_count(e: Expr) -> int:
    if e.kind in (COEFFICIENT, CONSTANT):
        return e.payload[1]
    if e.kind is ARGUMENT:
        return e.payload[1]
    raise InvalidTerminal(f"{e.kind.name} carries no count")


def _element_piecewise_constant(elem) -> bool:
    if elem.is_cellwise_constant:
        return True
    if isinstance(elem, FiniteElement):
        return elem.degree == 0
    if isinstance(elem, (VectorElement, TensorElement, RestrictedElement)):
        return _element_piecewise_constant(elem.sub)
    if isinstance(elem, (MixedElement, EnrichedElement)):
        return all(_element_piecewise_constant(s) for s in elem.subelements)
    return False


def is_cellwise_constant(e: Expr) -> bool:
    """True when the terminal cannot vary inside a single cell."""
    k = e.kind
    if k in (INT_LITERAL, REAL_LITERAL, ZERO, IDENTITY, PERMUTATION_SYMBOL,
             UNIT_VECTOR, CONSTANT, CELL_VOLUME, CIRCUMRADIUS, FACET_AREA,
             CELL_SURFACE_AREA, FACET_NORMAL):
        return True
    if k is COEFFICIENT or k is ARGUMENT:
        return _element_piecewise_constant(e.payload[0])
    return False


def is_globally_constant(e: Expr) -> bool:
    """True when the terminal takes one value over the whole domain."""
    if e.kind is CONSTANT:
        return True
    if e.kind is COEFFICIENT:
        return e.payload[0].is_cellwise_constant
    return e.kind in (INT_LITERAL, REAL_LITERAL, ZERO, IDENTITY,
                      PERMUTATION_SYMBOL, UNIT_VECTOR)


# --- per-kind signatures ---------------------------------------------------------

def _sig_indexed(operands, payload):
    (e,) = operands
    mi = payload
    if len(mi) != e.rank:
        raise RankMismatch(
            f"indexing a rank-{e.rank} expression with {len(mi)} indices"
        )
    free = dict(e._free)
    counts = dict(e._counts)
    for term, dim in zip(mi, e.shape):
        if isinstance(term, FixedIndex):
            if not (0 <= term.value < dim):
                raise IndexOutOfRange(
                    f"fixed index {term.value} out of range for axis of dimension {dim}"
                )
        else:
            if term.id in free and free[term.id] != dim:
                raise FreeIndexConflict(
                    f"index {index_name(term.id)} bound to dimensions "
                    f"{free[term.id]} and {dim}"
                )
            free[term.id] = dim
            counts[term.id] = counts.get(term.id, 0) + 1
    return (), free, counts


def _sig_component_tensor(operands, payload):
    (e,) = operands
    mi = payload
    _require_scalar(e, "as_tensor")
    ids = []
    for term in mi:
        if not isinstance(term, Index):
            raise InvalidTerminal("as_tensor binds free indices only")
        ids.append(term.id)
    if len(set(ids)) != len(ids):
        raise DuplicateIndex(f"repeated index in as_tensor multi-index {mi}")
    free = dict(e._free)
    counts = dict(e._counts)
    shape = []
    for i in ids:
        if i not in free:
            raise UnboundIndex(f"index {index_name(i)} is not free in the expression")
        shape.append(free.pop(i))
        counts.pop(i, None)
    return tuple(shape), free, counts


def _sig_index_sum(operands, payload):
    (e,) = operands
    (idx,) = payload
    free = dict(e._free)
    counts = dict(e._counts)
    if idx.id not in free:
        raise UnboundIndex(f"index {index_name(idx.id)} is not free in the summand")
    free.pop(idx.id)
    counts.pop(idx.id, None)
    return e.shape, free, counts


def _sig_list_tensor(operands, payload):
    if not operands:
        raise ArityError("a tensor needs at least one component")
    first = operands[0]
    for o in operands[1:]:
        if o.shape != first.shape:
            raise ShapeMismatch(
                f"tensor components disagree in shape: {first.shape} vs {o.shape}"
            )
        if o._free != first._free:
            raise FreeIndexConflict("tensor components disagree in free indices")
    free = dict(first._free)
    counts = _max_counts([o._counts for o in operands])
    return (len(operands),) + first.shape, free, counts


def _sig_sum(operands, payload):
    a, b = operands
    if a.shape != b.shape:
        raise ShapeMismatch(f"cannot add shapes {a.shape} and {b.shape}")
    if a._free != b._free:
        raise FreeIndexConflict(
            "summands must carry identical free indices "
            f"({dict(a._free)} vs {dict(b._free)})"
        )
    return a.shape, dict(a._free), _max_counts([a._counts, b._counts])


def _sig_product(operands, payload):
    a, b = operands
    if a.shape != () and b.shape != ():
        raise ShapeMismatch(
            f"product requires a scalar operand (shapes {a.shape} and {b.shape})"
        )
    shape = a.shape or b.shape
    free = _merge_free([a._free, b._free], "product")
    counts = _add_counts([a._counts, b._counts])
    for i, c in counts.items():
        if c > 2:
            raise FreeIndexConflict(
                f"index {index_name(i)} occurs {c} times in one product term"
            )
    return shape, free, counts


def _sig_scalar_fn(operands, payload, name):
    for o in operands:
        _require_scalar(o, name)
        _require_no_free(o, name)
    return (), {}, {}


def _tensor_operand_free(operands, what):
    for o in operands:
        for i, c in o._counts:
            if c > 1:
                raise FreeIndexConflict(
                    f"{what} operand repeats index {index_name(i)}"
                )
    all_ids = [i for o in operands for i, _ in o._free]
    if len(set(all_ids)) != len(all_ids):
        raise FreeIndexConflict(f"{what} operands share free indices")
    free = _merge_free([o._free for o in operands], what)
    counts = _add_counts([o._counts for o in operands])
    return free, counts


def _require_square(e, what):
    if e.rank != 2:
        raise RankError(f"{what} requires a rank-2 operand, got rank {e.rank}")
    if e.shape[0] != e.shape[1]:
        raise ShapeMismatch(f"{what} requires a square matrix, got {e.shape}")


def _sig_tensor(kind, operands, payload):
    name = kind.name
    free, counts = _tensor_operand_free(operands, name)
    if kind is DOT:
        a, b = operands
        if a.rank < 1 or b.rank < 1:
            raise RankError("dot requires operands of rank at least 1")
        if a.shape[-1] != b.shape[0]:
            raise ShapeMismatch(
                f"dot cannot contract axes of dimensions {a.shape[-1]} and {b.shape[0]}"
            )
        return a.shape[:-1] + b.shape[1:], free, counts
    if kind is INNER:
        a, b = operands
        if a.shape != b.shape:
            raise ShapeMismatch(f"inner requires equal shapes, got {a.shape} and {b.shape}")
        if a.rank < 1:
            raise RankError("inner of scalars is a plain product")
        return (), free, counts
    if kind is OUTER:
        a, b = operands
        if a.rank < 1 or b.rank < 1:
            raise RankError("outer requires operands of rank at least 1")
        return a.shape + b.shape, free, counts
    if kind is CROSS:
        a, b = operands
        if a.shape != (3,) or b.shape != (3,):
            raise ShapeMismatch("cross requires two vectors of dimension 3")
        return (3,), free, counts
    (e,) = operands
    if kind is TRANSPOSE:
        if e.rank != 2:
            raise RankError(f"transpose requires rank 2, got rank {e.rank}")
        return (e.shape[1], e.shape[0]), free, counts
    if kind in (SYM, SKEW, DEV):
        _require_square(e, name)
        return e.shape, free, counts
    if kind is TRACE:
        _require_square(e, "tr")
        return (), free, counts
    if kind is DETERMINANT:
        _require_square(e, "det")
        return (), free, counts
    if kind in (COFACTOR, INVERSE):
        _require_square(e, name)
        return e.shape, free, counts
    if kind is DIAG:
        if e.rank == 1:
            return (e.shape[0], e.shape[0]), free, counts
        _require_square(e, "diag")
        return e.shape, free, counts
    if kind is DIAG_VECTOR:
        _require_square(e, "diag_vector")
        return (e.shape[0],), free, counts
    raise ArityError(f"unhandled tensor kind {name}")


def _spatial_dim(operands, name) -> int:
    cell = _common_cell(operands)
    if cell is None:
        raise Unsupported(f"{name} needs operands tied to a cell")
    return cell.geometric_dimension


def _sig_differential(kind, operands, payload):
    name = kind.name
    if kind is VARIABLE_DERIVATIVE:
        e, v = operands
        if v.kind is not VARIABLE:
            raise NotAVariable("diff differentiates with respect to variables only")
        return e.shape + v.shape, dict(e._free), dict(e._counts)
    if kind is EXTERIOR_DERIVATIVE:
        (e,) = operands
        _spatial_dim(operands, name)
        return e.shape, dict(e._free), dict(e._counts)
    (e,) = operands
    d = _spatial_dim(operands, name)
    free = dict(e._free)
    counts = dict(e._counts)
    if kind is GRAD:
        return e.shape + (d,), free, counts
    if kind is NABLA_GRAD:
        return (d,) + e.shape, free, counts
    if kind is DIVERGENCE:
        if e.rank < 1:
            raise RankError("div requires rank at least 1")
        if e.shape[-1] != d:
            raise ShapeMismatch(
                f"div contracts the last axis, which must have dimension {d}"
            )
        return e.shape[:-1], free, counts
    if kind is NABLA_DIV:
        if e.rank < 1:
            raise RankError("nabla_div requires rank at least 1")
        if e.shape[0] != d:
            raise ShapeMismatch(
                f"nabla_div contracts the first axis, which must have dimension {d}"
            )
        return e.shape[1:], free, counts
    if kind is CURL:
        if d != 3 or e.shape != (3,):
            raise ShapeMismatch("curl requires a 3-vector on a 3-dimensional cell")
        return (3,), free, counts
    if kind is SPATIAL_DERIVATIVE:
        (term,) = payload
        if isinstance(term, FixedIndex):
            if not (0 <= term.value < d):
                raise IndexOutOfRange(
                    f"derivative index {term.value} out of range for dimension {d}"
                )
        else:
            if term.id in free and free[term.id] != d:
                raise FreeIndexConflict(
                    f"index {index_name(term.id)} bound to dimensions "
                    f"{free[term.id]} and {d}"
                )
            free[term.id] = d
            counts[term.id] = counts.get(term.id, 0) + 1
            if counts[term.id] > 2:
                raise FreeIndexConflict(
                    f"index {index_name(term.id)} occurs more than twice"
                )
        return e.shape, free, counts
    raise ArityError(f"unhandled differential kind {name}")


def _sig_restriction(operands, payload):
    (e,) = operands
    if e.has_restriction:
        raise DoubleRestriction("expression is already restricted")
    return e.shape, dict(e._free), dict(e._counts)


def _sig_boolean(kind, operands, payload):
    if kind in (AND, OR, NOT):
        for o in operands:
            if not o.is_boolean:
                raise BooleanMisuse(f"{kind.name} requires boolean operands")
    else:
        for o in operands:
            _require_scalar(o, kind.name)
            _require_no_free(o, kind.name)
    return (), {}, {}


def _sig_conditional(operands, payload):
    c, t, f = operands
    if not c.is_boolean:
        raise BooleanMisuse("the condition must be a boolean expression")
    if t.shape != f.shape:
        raise ShapeMismatch(
            f"conditional branches disagree in shape: {t.shape} vs {f.shape}"
        )
    if t._free != f._free:
        raise FreeIndexConflict("conditional branches disagree in free indices")
    return t.shape, dict(t._free), _max_counts([t._counts, f._counts])


def _sig_variable(operands, payload):
    (e,) = operands
    _require_no_free(e, "variable")
    return e.shape, {}, {}


_ARITY = {
    INDEXED: 1, COMPONENT_TENSOR: 1, INDEX_SUM: 1,
    SUM: 2, PRODUCT: 2, DIVISION: 2, POWER: 2,
    SQRT: 1, EXP: 1, LN: 1, ABS: 1, SIGN: 1, COS: 1, SIN: 1, TAN: 1,
    ACOS: 1, ASIN: 1, ATAN: 1, ERF: 1,
    BESSEL_J: 2, BESSEL_Y: 2, BESSEL_I: 2, BESSEL_K: 2,
    DOT: 2, INNER: 2, OUTER: 2, CROSS: 2,
    TRANSPOSE: 1, SYM: 1, SKEW: 1, DEV: 1, TRACE: 1,
    DETERMINANT: 1, COFACTOR: 1, INVERSE: 1, DIAG: 1, DIAG_VECTOR: 1,
    GRAD: 1, NABLA_GRAD: 1, DIVERGENCE: 1, NABLA_DIV: 1, CURL: 1,
    SPATIAL_DERIVATIVE: 1, VARIABLE_DERIVATIVE: 2, EXTERIOR_DERIVATIVE: 1,
    POSITIVE_RESTRICTED: 1, NEGATIVE_RESTRICTED: 1, AVG: 1,
    EQ: 2, NE: 2, LE: 2, GE: 2, LT: 2, GT: 2, AND: 2, OR: 2, NOT: 1,
    CONDITIONAL: 3, VARIABLE: 1,
}


def _compute_signature(kind, operands, payload):
    group = kind.group
    if group is Group.INDEXING:
        if kind is INDEXED:
            return _sig_indexed(operands, payload)
        if kind is COMPONENT_TENSOR:
            return _sig_component_tensor(operands, payload)
        if kind is INDEX_SUM:
            return _sig_index_sum(operands, payload)
        return _sig_list_tensor(operands, payload)
    if group is Group.ARITHMETIC:
        return _sig_sum(operands, payload) if kind is SUM else _sig_product(operands, payload)
    if group is Group.SCALAR_FN:
        return _sig_scalar_fn(operands, payload, kind.name)
    if group is Group.TENSOR:
        return _sig_tensor(kind, operands, payload)
    if group is Group.DIFFERENTIAL:
        return _sig_differential(kind, operands, payload)
    if group is Group.RESTRICTION:
        return _sig_restriction(operands, payload)
    if group is Group.BOOLEAN:
        return _sig_boolean(kind, operands, payload)
    if group is Group.CONDITIONAL:
        return _sig_conditional(operands, payload)
    if group is Group.VARIABLE:
        return _sig_variable(operands, payload)
    raise ArityError(f"cannot build terminal kind {kind.name} with build()")


# --- constant folding -------------------------------------------------------------

def _fold_number(value):
    if isinstance(value, int) and abs(value) <= 2 ** 53:
        return int_literal(value)
    return real_literal(float(value))


def _bessel(which, order, x):
    from scipy import special

    fn = {BESSEL_J: special.jv, BESSEL_Y: special.yv,
          BESSEL_I: special.iv, BESSEL_K: special.kv}[which]
    return float(fn(order, x))


def _try_fold(kind, values):
    """Numerically apply a scalar kind to literal values; None if not foldable."""
    try:
        if kind is SUM:
            return values[0] + values[1]
        if kind is PRODUCT:
            return values[0] * values[1]
        if kind is DIVISION:
            if values[1] == 0:
                raise DivisionByZero("division by a literal zero")
            return values[0] / values[1]
        if kind is POWER:
            a, b = values
            if isinstance(a, int) and isinstance(b, int) and b >= 0:
                return a ** b
            return float(a) ** float(b)
        if kind is SQRT:
            return math.sqrt(values[0])
        if kind is EXP:
            return math.exp(values[0])
        if kind is LN:
            return math.log(values[0])
        if kind is ABS:
            return abs(values[0])
        if kind is SIGN:
            v = values[0]
            return 0 if v == 0 else math.copysign(1.0, v)
        if kind is COS:
            return math.cos(values[0])
        if kind is SIN:
            return math.sin(values[0])
        if kind is TAN:
            return math.tan(values[0])
        if kind is ACOS:
            return math.acos(values[0])
        if kind is ASIN:
            return math.asin(values[0])
        if kind is ATAN:
            return math.atan(values[0])
        if kind is ERF:
            return math.erf(values[0])
        if kind in (BESSEL_J, BESSEL_Y, BESSEL_I, BESSEL_K):
            return _bessel(kind, values[0], values[1])
    except DivisionByZero:
        raise
    except (ValueError, OverflowError, ZeroDivisionError):
        return None
    return None


_FOLDABLE = frozenset({
    SUM, PRODUCT, DIVISION, POWER, SQRT, EXP, LN, ABS, SIGN, COS, SIN, TAN,
    ACOS, ASIN, ATAN, ERF, BESSEL_J, BESSEL_Y, BESSEL_I, BESSEL_K,
})

_ZERO_ANNIHILATES = frozenset({PRODUCT, INNER, DOT, OUTER, CROSS})
_ZERO_PASSES = frozenset({
    TRANSPOSE, SYM, SKEW, DEV, TRACE, DIAG, DIAG_VECTOR,
    POSITIVE_RESTRICTED, NEGATIVE_RESTRICTED, AVG,
})


def _payload_sort_key(payload):
    out = []
    for item in payload:
        if isinstance(item, bool):
            out.append(("b", item))
        elif isinstance(item, (int, float)):
            out.append(("n", float(item)))
        elif isinstance(item, str):
            out.append(("s", item))
        elif isinstance(item, Index):
            out.append(("i", item.id))
        elif isinstance(item, FixedIndex):
            out.append(("x", item.value))
        elif isinstance(item, Cell):
            out.append(("c", item.name))
        elif isinstance(item, Element):
            out.append(("e", repr(item)))
        elif isinstance(item, tuple):
            out.append(("t", _payload_sort_key(item)))
        elif item is None:
            out.append(("_", ""))
        else:
            out.append(("r", repr(item)))
    return tuple(out)


def canonical_key(e: Expr) -> tuple:
    """Deterministic within-session ordering key for commutative operands."""
    return (e.kind.sort, _payload_sort_key(e.payload), e.seq)


# --- the operator constructor -------------------------------------------------------

def build(kind_or_name, operands, payload=()) -> Expr:
    """Construct (or reuse) the interned node for an operator application.

    Validates operand count, shapes and index use for the kind, applies
    the local construction-time simplifications, orders commutative
    operands canonically, and interns the result.
    """
    k = kind(kind_or_name) if isinstance(kind_or_name, str) else kind_or_name
    operands = tuple(as_expr(o) for o in operands)
    payload = tuple(payload)
    _session.build_calls += 1

    if k.is_terminal:
        raise ArityError(f"terminal kind {k.name} is built by its own constructor")
    expected = _ARITY.get(k)
    if expected is not None and k is not LIST_TENSOR and len(operands) != expected:
        raise ArityError(f"{k.name} takes {expected} operands, got {len(operands)}")

    # Boolean nodes may only feed conditions and logical connectives.
    if k is not CONDITIONAL and k not in (AND, OR, NOT):
        for o in operands:
            if o.is_boolean:
                raise BooleanMisuse(
                    f"boolean expressions may only appear as conditions, not in {k.name}"
                )
    elif k is CONDITIONAL:
        for o in operands[1:]:
            if o.is_boolean:
                raise BooleanMisuse("conditional branches cannot be boolean")

    shape, free, counts = _compute_signature(k, operands, payload)
    cell = _common_cell(operands)

    # -- local simplifications --
    if k is PRODUCT:
        a, b = operands
        if is_one(a):
            return b
        if is_one(b):
            return a
        if is_zero(a) or is_zero(b):
            return annotated_zero(shape, free)
        # Fold a literal factor into a directly nested literal factor, so
        # chains like -(-x) collapse; one level deep keeps this local.
        for lit, other in ((a, b), (b, a)):
            lv = literal_value(lit)
            if lv is None or other.kind is not PRODUCT:
                continue
            for n, sub in enumerate(other.operands):
                sv = literal_value(sub)
                if sv is not None:
                    folded = _fold_number(_try_fold(PRODUCT, [lv, sv]))
                    return build(PRODUCT, (folded, other.operands[1 - n]))
    elif k is SUM:
        a, b = operands
        if is_zero(a):
            return b
        if is_zero(b):
            return a
    elif k is DIVISION:
        a, b = operands
        if literal_value(b) == 0:
            raise DivisionByZero("division by a literal zero")
        if is_zero(a):
            return annotated_zero(shape, free)
    elif k is INDEXED:
        (e,) = operands
        if is_zero(e):
            return annotated_zero((), free)
        if e.kind is COMPONENT_TENSOR and e.payload == payload:
            return e.operands[0]
        if e.kind is LIST_TENSOR and payload and isinstance(payload[0], FixedIndex):
            comp = e.operands[payload[0].value]
            rest = payload[1:]
            return build(INDEXED, (comp,), rest) if rest else comp
    elif k is COMPONENT_TENSOR:
        (e,) = operands
        if is_zero(e):
            return annotated_zero(shape, free)
        if e.kind is INDEXED and e.payload == payload:
            base = e.operands[0]
            if not any(i.id in base.free_index_dims for i in payload):
                return base
    elif k is INDEX_SUM:
        (e,) = operands
        if is_zero(e):
            return annotated_zero(shape, free)
    elif k is TRANSPOSE:
        (e,) = operands
        if e.kind is TRANSPOSE:
            return e.operands[0]
        if is_zero(e):
            return annotated_zero(shape, free)
    elif k in _ZERO_ANNIHILATES:
        if any(is_zero(o) for o in operands):
            return annotated_zero(shape, free)
    elif k in _ZERO_PASSES:
        if is_zero(operands[0]):
            return annotated_zero(shape, free)

    if k in _FOLDABLE:
        values = [literal_value(o) for o in operands]
        if all(v is not None for v in values):
            folded = _try_fold(k, values)
            if folded is not None:
                return _fold_number(folded)

    if k in (SUM, PRODUCT) and canonical_key(operands[0]) > canonical_key(operands[1]):
        operands = (operands[1], operands[0])

    return _intern(
        k, operands, payload, shape, _freeze(free), _freeze(counts), cell,
        is_boolean=(k.group is Group.BOOLEAN),
        has_restriction=(k.group is Group.RESTRICTION
                         or any(o.has_restriction for o in operands)),
        has_derivative=(k.group is Group.DIFFERENTIAL
                        or any(o.has_derivative for o in operands)),
    )
