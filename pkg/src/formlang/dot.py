"""Graphviz DOT export of expression DAGs."""

from __future__ import annotations

from . import core
from .algorithms import build_list_dag
from .core import Expr, FixedIndex

_MAX_LABEL = 24


def _payload_summary(e: Expr) -> str:
    k = e.kind
    if k is core.INT_LITERAL or k is core.REAL_LITERAL:
        return str(e.payload[0])
    if k is core.ZERO:
        return "0"
    if k in (core.IDENTITY, core.PERMUTATION_SYMBOL):
        return f"{k.name}({e.payload[0]})"
    if k is core.UNIT_VECTOR:
        return f"e_{e.payload[1]}"
    if k.group is core.Group.GEOMETRIC:
        return k.name
    if k in (core.COEFFICIENT, core.CONSTANT):
        return f"{k.name}#{e.payload[1]}"
    if k is core.ARGUMENT:
        return f"argument#{e.payload[1]}"
    if k in (core.INDEXED, core.COMPONENT_TENSOR):
        terms = ",".join(
            str(t.value) if isinstance(t, FixedIndex) else repr(t) for t in e.payload
        )
        return f"{k.name}[{terms}]"
    if k is core.INDEX_SUM:
        return f"sum_{e.payload[0]!r}"
    if k is core.SPATIAL_DERIVATIVE:
        return f"d/dx_{e.payload[0]!r}"
    if k is core.VARIABLE:
        return f"variable#{e.payload[0]}"
    return k.name


def _label(e: Expr) -> str:
    text = _payload_summary(e)
    if len(text) > _MAX_LABEL:
        text = text[: _MAX_LABEL - 3] + "..."
    return text.replace("\\", "\\\\").replace('"', '\\"')


def dag_to_dot(roots, dedup: bool = True, graph_name: str = "expression") -> str:
    """Render one DOT digraph for the given expression roots.

    With dedup, nodes are the distinct DAG vertices in topological order;
    without, every tree occurrence becomes its own node. Output is
    deterministic for identical inputs.
    """
    if isinstance(roots, Expr):
        roots = [roots]
    lines = [f"digraph {graph_name} {{", "  node [shape=box, fontsize=10];"]
    if dedup:
        index = {}
        vertices = []
        edges = []
        for root in roots:
            dag = build_list_dag(root)
            for node in dag.vertices:
                if node not in index:
                    index[node] = len(vertices)
                    vertices.append(node)
        for node in vertices:
            for o in node.operands:
                edges.append((index[node], index[o]))
        for pos, node in enumerate(vertices):
            lines.append(f'  n{pos} [label="{_label(node)}"];')
        for src, dst in edges:
            lines.append(f"  n{src} -> n{dst};")
    else:
        counter = [0]

        def emit(node):
            my = counter[0]
            counter[0] += 1
            lines.append(f'  n{my} [label="{_label(node)}"];')
            for o in node.operands:
                child = counter[0]
                emit(o)
                lines.append(f"  n{my} -> n{child};")
            return my

        for root in roots:
            emit(root)
    lines.append("}")
    return "\n".join(lines) + "\n"
