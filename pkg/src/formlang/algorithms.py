"""Generic DAG machinery: the list-based DAG, pre/post-order iteration,
type-dispatched evaluation engines, and the reuse/replace transformers."""

from __future__ import annotations

from dataclasses import dataclass, field

from .core import Expr, Group, Kind
from .errors import ShapeMismatch, UnhandledKind


# --- list-based DAG -------------------------------------------------------------

@dataclass
class ListDag:
    """Deduplicated, topologically sorted vertex list with edge index tuples.

    Every edge target precedes its source: edges[i][j] < i for all i, j.
    """

    vertices: list
    edges: list
    index: dict = field(repr=False)

    def __len__(self):
        return len(self.vertices)

    def check(self):
        assert len(self.vertices) == len(set(self.vertices)), "duplicate vertices"
        for i, row in enumerate(self.edges):
            assert all(j < i for j in row), f"edge order violated at vertex {i}"
            assert tuple(self.vertices[j] for j in row) == self.vertices[i].operands
        return True


def build_list_dag(root: Expr) -> ListDag:
    """Collect the distinct nodes reachable from root in topological order."""
    vertices = []
    edges = []
    index = {}
    # Iterative post-order; a node is emitted after all of its operands.
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if node in index:
            continue
        if expanded:
            index[node] = len(vertices)
            vertices.append(node)
            edges.append(tuple(index[o] for o in node.operands))
        else:
            stack.append((node, True))
            for o in reversed(node.operands):
                if o not in index:
                    stack.append((o, False))
    return ListDag(vertices, edges, index)


def iterate(root: Expr, order: str = "post", unique: bool = True, filter=None):
    """Yield nodes in pre- or post-order, optionally deduplicated/filtered.

    `filter` may be a predicate, a Kind, or a Group.
    """
    if order not in ("pre", "post"):
        raise ValueError(f"order must be 'pre' or 'post', not {order!r}")
    if isinstance(filter, Kind):
        kind = filter
        filter = lambda e: e.kind is kind
    elif isinstance(filter, Group):
        group = filter
        filter = lambda e: e.kind.group is group

    seen = set()

    def walk(node):
        if unique:
            if node in seen:
                return
            seen.add(node)
        if order == "pre" and (filter is None or filter(node)):
            yield node
        for o in node.operands:
            yield from walk(o)
        if order == "post" and (filter is None or filter(node)):
            yield node

    yield from walk(root)


def terminals(root: Expr):
    return iterate(root, "post", unique=True, filter=lambda e: e.is_terminal)


# --- dispatch tables --------------------------------------------------------------

POST = "post_value"
PRE = "pre_context"


class DispatchTable:
    """Maps node kinds to handlers with superclass-style fallback.

    Resolution order: concrete kind name, then the kind's group, then the
    "terminal" or "operator" root. Handlers registered as post_value receive
    (node, operand_values); pre_context handlers receive (node, visit) where
    visit re-invokes evaluation on raw operand expressions.
    """

    def __init__(self):
        self._handlers = {}

    def register(self, key, handler, mode=POST):
        if isinstance(key, Kind):
            key = key.name
        elif isinstance(key, Group):
            key = key.value
        self._handlers[key] = (handler, mode)
        return self

    def on(self, key, mode=POST):
        def deco(fn):
            self.register(key, fn, mode)
            return fn
        return deco

    def resolve(self, kind: Kind):
        entry = self._handlers.get(kind.name)
        if entry is None:
            entry = self._handlers.get(kind.group.value)
        if entry is None:
            entry = self._handlers.get("terminal" if kind.is_terminal else "operator")
        if entry is None:
            raise UnhandledKind(f"no handler resolves kind {kind.name}")
        return entry

    @property
    def all_post(self) -> bool:
        return all(mode == POST for _, mode in self._handlers.values())


def _evaluate_list(root: Expr, table: DispatchTable):
    dag = build_list_dag(root)
    values = [None] * len(dag)
    for pos, node in enumerate(dag.vertices):
        handler, mode = table.resolve(node.kind)
        if mode == PRE:
            raise UnhandledKind(
                f"{node.kind.name} needs a context handler; use the recursive engine"
            )
        if node.is_terminal:
            values[pos] = handler(node, ())
        else:
            values[pos] = handler(node, tuple(values[j] for j in dag.edges[pos]))
    return values[-1]


def _evaluate_recursive(root: Expr, table: DispatchTable):
    memo = {}

    def visit(node):
        hit = memo.get(node)
        if hit is not None or node in memo:
            return hit
        handler, mode = table.resolve(node.kind)
        if mode == PRE:
            value = handler(node, visit)
        elif node.is_terminal:
            value = handler(node, ())
        else:
            value = handler(node, tuple(visit(o) for o in node.operands))
        memo[node] = value
        return value

    return visit(root)


def evaluate(root: Expr, table: DispatchTable, engine: str = "auto"):
    """Evaluate a DAG under a dispatch table.

    Pure post-value tables run non-recursively over the list DAG, visiting
    each distinct vertex exactly once; tables with pre-context handlers fall
    back to the recursive engine.
    """
    if engine == "auto":
        engine = "list" if table.all_post else "recursive"
    if engine == "list":
        return _evaluate_list(root, table)
    if engine == "recursive":
        return _evaluate_recursive(root, table)
    raise ValueError(f"unknown engine {engine!r}")


# --- rebuilding transformers --------------------------------------------------------

def reuse_transform(root: Expr, overrides: DispatchTable | None = None) -> Expr:
    """Rebuild a DAG bottom-up, reusing every node whose operands are unchanged.

    Default rules return terminals unchanged and reconstruct operators from
    transformed operands; `overrides` take precedence per kind and must
    return expression handles.
    """
    from . import core

    memo = {}

    def visit(node):
        hit = memo.get(node)
        if hit is not None:
            return hit
        entry = None
        if overrides is not None:
            try:
                entry = overrides.resolve(node.kind)
            except UnhandledKind:
                entry = None
        if entry is not None:
            handler, mode = entry
            value = handler(node, visit) if mode == PRE else (
                handler(node, ()) if node.is_terminal
                else handler(node, tuple(visit(o) for o in node.operands))
            )
        elif node.is_terminal:
            value = node
        else:
            ops = tuple(visit(o) for o in node.operands)
            value = node if ops == node.operands else core.build(node.kind, ops, node.payload)
        memo[node] = value
        return value

    return visit(root)


def replace_terminals(root: Expr, mapping: dict) -> Expr:
    """Substitute terminals through a mapping, reusing unaffected subtrees."""
    for old, new in mapping.items():
        if old.shape != new.shape:
            raise ShapeMismatch(
                f"cannot replace shape {old.shape} with shape {new.shape}"
            )
        if old.free_index_dims != new.free_index_dims:
            raise ShapeMismatch("replacement changes the free-index signature")
    if not mapping:
        return root

    table = DispatchTable()
    table.register("terminal", lambda node, _: mapping.get(node, node), POST)
    return reuse_transform(root, table)
