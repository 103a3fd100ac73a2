"""Finite element descriptions and the element algebra.

Elements are immutable value objects describing local function spaces:
a family name, a cell and a polynomial degree for primitive elements,
plus vector/tensor/mixed/enriched/restricted combinations. Only the
symbolic properties (value shape, cell, degree) are modeled; basis
functions and global continuity are out of scope.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .cells import Cell, as_cell
from .errors import (
    BadDegree,
    BadSymmetry,
    CellMismatch,
    ComponentOutOfRange,
    ShapeMismatch,
    UnknownFamily,
)

Shape = tuple  # tuple of positive ints; () means scalar


def value_size(shape: Shape) -> int:
    return math.prod(shape)


# --- element families -------------------------------------------------------

@dataclass(frozen=True)
class ElementFamily:
    canonical_name: str
    aliases: tuple
    # value shape as a function of the cell: "scalar" or "vector"
    shape_rule: str
    min_degree: int
    max_degree: int = 64
    cellwise_constant: bool = False

    def value_shape(self, cell: Cell) -> Shape:
        if self.shape_rule == "scalar":
            return ()
        if self.shape_rule == "vector":
            return (cell.geometric_dimension,)
        raise UnknownFamily(f"bad shape rule {self.shape_rule!r}")


_FAMILIES = {}


def register_family(family: ElementFamily):
    """Add a family to the lookup table, keyed by canonical name and aliases."""
    for name in (family.canonical_name, *family.aliases):
        if name in _FAMILIES:
            raise UnknownFamily(f"family name {name!r} already registered")
        _FAMILIES[name] = family


def lookup_family(name: str) -> ElementFamily:
    try:
        return _FAMILIES[name]
    except KeyError:
        raise UnknownFamily(f"unknown element family {name!r}") from None


for _f in [
    ElementFamily("Lagrange", ("P", "CG"), "scalar", 1),
    ElementFamily("Discontinuous Lagrange", ("DG", "DP"), "scalar", 0),
    ElementFamily("Brezzi-Douglas-Marini", ("BDM",), "vector", 1),
    ElementFamily("Raviart-Thomas", ("RT",), "vector", 1),
    ElementFamily("Nedelec 1st kind H(curl)", ("N1curl",), "vector", 1),
    ElementFamily("Nedelec 2nd kind H(curl)", ("N2curl",), "vector", 1),
    ElementFamily("Bubble", ("B",), "scalar", 2),
    ElementFamily("Real", ("R",), "scalar", 0, 0, cellwise_constant=True),
]:
    register_family(_f)


# --- element variants -------------------------------------------------------

class Element:
    """Base class; concrete variants define value_shape, cell and degree."""

    @property
    def value_size(self) -> int:
        return value_size(self.value_shape)

    @property
    def is_cellwise_constant(self) -> bool:
        return False

    def __mul__(self, other):
        if isinstance(other, Element):
            return MixedElement(self, other)
        return NotImplemented

    def __add__(self, other):
        if isinstance(other, Element):
            return EnrichedElement(self, other)
        return NotImplemented

    def __getitem__(self, entity):
        return RestrictedElement(self, entity)


@dataclass(frozen=True)
class FiniteElement(Element):
    family: str
    cell: Cell
    degree: int
    quad_scheme: str | None = None

    def __post_init__(self):
        fam = lookup_family(self.family)
        object.__setattr__(self, "family", fam.canonical_name)
        object.__setattr__(self, "cell", as_cell(self.cell))
        if not (fam.min_degree <= self.degree <= fam.max_degree):
            raise BadDegree(
                f"{fam.canonical_name} degree must lie in "
                f"[{fam.min_degree}, {fam.max_degree}], got {self.degree}"
            )

    @property
    def value_shape(self) -> Shape:
        return lookup_family(self.family).value_shape(self.cell)

    @property
    def is_cellwise_constant(self) -> bool:
        return lookup_family(self.family).cellwise_constant

    def __repr__(self):
        return f"FiniteElement({self.family!r}, {self.cell}, {self.degree})"


@dataclass(frozen=True)
class VectorElement(Element):
    sub: FiniteElement
    dim: int

    def __init__(self, family, cell=None, degree=None, dim=None, quad_scheme=None):
        if isinstance(family, Element):
            sub = family
            n = cell if isinstance(cell, int) else dim
        else:
            sub = FiniteElement(family, cell, degree, quad_scheme)
            n = dim
        if n is None:
            n = sub.cell.geometric_dimension
        if n < 1:
            raise ShapeMismatch("vector element dimension must be positive")
        object.__setattr__(self, "sub", sub)
        object.__setattr__(self, "dim", n)

    @property
    def cell(self):
        return self.sub.cell

    @property
    def degree(self):
        return self.sub.degree

    @property
    def quad_scheme(self):
        return self.sub.quad_scheme

    @property
    def value_shape(self) -> Shape:
        return (self.dim,) + self.sub.value_shape

    @property
    def is_cellwise_constant(self) -> bool:
        return self.sub.is_cellwise_constant

    def __repr__(self):
        return f"VectorElement({self.sub.family!r}, {self.cell}, {self.degree}, dim={self.dim})"


def _normalize_symmetry(symmetry, shape):
    """Turn the symmetry argument into a canonical mapping of component tuples."""
    if symmetry is None:
        return None
    if symmetry is True:
        if len(shape) != 2 or shape[0] != shape[1]:
            raise BadSymmetry("boolean symmetry requires a square rank-2 shape")
        n = shape[0]
        pairs = {(i, j): (j, i) for i in range(n) for j in range(n) if i > j}
        return tuple(sorted(pairs.items()))
    mapping = dict(symmetry)
    for key, val in mapping.items():
        for comp in (key, val):
            if len(comp) != len(shape) or any(
                not (0 <= c < d) for c, d in zip(comp, shape)
            ):
                raise BadSymmetry(f"component {comp} invalid for shape {shape}")
        if key == val:
            raise BadSymmetry(f"component {key} mapped to itself")
    targets = set(mapping.values())
    if targets & set(mapping):
        raise BadSymmetry("symmetry mapping keys and values must be disjoint")
    return tuple(sorted(mapping.items()))


@dataclass(frozen=True)
class TensorElement(Element):
    sub: FiniteElement
    shape: Shape
    symmetry: tuple | None

    def __init__(self, family, cell=None, degree=None, shape=None, symmetry=None,
                 quad_scheme=None):
        if isinstance(family, Element):
            sub = family
        else:
            sub = FiniteElement(family, cell, degree, quad_scheme)
        if shape is None:
            d = sub.cell.geometric_dimension
            shape = (d, d)
        shape = tuple(int(s) for s in shape)
        if any(s < 1 for s in shape):
            raise ShapeMismatch("tensor element shape entries must be positive")
        sym = _normalize_symmetry(symmetry, shape)
        if sym is not None and sub.value_shape != ():
            raise BadSymmetry("symmetry requires scalar subelements")
        object.__setattr__(self, "sub", sub)
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "symmetry", sym)

    @property
    def cell(self):
        return self.sub.cell

    @property
    def degree(self):
        return self.sub.degree

    @property
    def quad_scheme(self):
        return self.sub.quad_scheme

    @property
    def value_shape(self) -> Shape:
        return self.shape + self.sub.value_shape

    @property
    def num_subelements(self) -> int:
        m = 0 if self.symmetry is None else len(self.symmetry)
        return value_size(self.shape) - m

    @property
    def is_cellwise_constant(self) -> bool:
        return self.sub.is_cellwise_constant

    def __repr__(self):
        return (f"TensorElement({self.sub.family!r}, {self.cell}, "
                f"{self.degree}, shape={self.shape}, symmetry={self.symmetry})")


def _common_cell(elements):
    cells = {e.cell for e in elements}
    if len(cells) != 1:
        raise CellMismatch(f"subelements live on different cells: {sorted(c.name for c in cells)}")
    return cells.pop()


def _common_quad_scheme(elements):
    schemes = {getattr(e, "quad_scheme", None) for e in elements}
    schemes.discard(None)
    if len(schemes) > 1:
        raise CellMismatch(f"subelements use different quadrature schemes: {sorted(schemes)}")
    return schemes.pop() if schemes else None


@dataclass(frozen=True)
class MixedElement(Element):
    subelements: tuple

    def __init__(self, *subelements):
        if len(subelements) == 1 and isinstance(subelements[0], (tuple, list)):
            subelements = tuple(subelements[0])
        if len(subelements) < 2:
            raise ShapeMismatch("a mixed element needs at least two subelements")
        _common_cell(subelements)
        _common_quad_scheme(subelements)
        object.__setattr__(self, "subelements", tuple(subelements))

    @property
    def cell(self):
        return self.subelements[0].cell

    @property
    def degree(self):
        return max(e.degree for e in self.subelements)

    @property
    def quad_scheme(self):
        return _common_quad_scheme(self.subelements)

    @property
    def value_shape(self) -> Shape:
        return (sum(e.value_size for e in self.subelements),)

    def __repr__(self):
        return f"MixedElement({', '.join(map(repr, self.subelements))})"


@dataclass(frozen=True)
class EnrichedElement(Element):
    subelements: tuple

    def __init__(self, *subelements):
        if len(subelements) == 1 and isinstance(subelements[0], (tuple, list)):
            subelements = tuple(subelements[0])
        if len(subelements) < 2:
            raise ShapeMismatch("an enriched element needs at least two subelements")
        _common_cell(subelements)
        shapes = {e.value_shape for e in subelements}
        if len(shapes) != 1:
            raise ShapeMismatch(f"enriched subelements have differing value shapes: {sorted(shapes)}")
        object.__setattr__(self, "subelements", tuple(subelements))

    @property
    def cell(self):
        return self.subelements[0].cell

    @property
    def degree(self):
        return max(e.degree for e in self.subelements)

    @property
    def quad_scheme(self):
        return _common_quad_scheme(self.subelements)

    @property
    def value_shape(self) -> Shape:
        return self.subelements[0].value_shape

    def __repr__(self):
        return f"EnrichedElement({', '.join(map(repr, self.subelements))})"


@dataclass(frozen=True)
class RestrictedElement(Element):
    sub: Element
    entity: str

    def __post_init__(self):
        entity = self.entity
        if isinstance(entity, Cell):
            entity = entity.name
        if entity != "facet" and entity not in ("interval", "triangle", "tetrahedron"):
            raise CellMismatch(f"cannot restrict an element to {entity!r}")
        object.__setattr__(self, "entity", entity)

    @property
    def cell(self):
        return self.sub.cell

    @property
    def degree(self):
        return self.sub.degree

    @property
    def value_shape(self) -> Shape:
        return self.sub.value_shape

    @property
    def is_cellwise_constant(self) -> bool:
        return self.sub.is_cellwise_constant

    def __repr__(self):
        return f"RestrictedElement({self.sub!r}, {self.entity!r})"


# --- component flattening ---------------------------------------------------

def _row_major_components(shape):
    if shape == ():
        return [()]
    comps = []
    head, rest = shape[0], shape[1:]
    for i in range(head):
        for tail in _row_major_components(rest):
            comps.append((i,) + tail)
    return comps


def flatten_component_map(element: Element) -> dict:
    """Map (subelement index, component tuple) to flat positions.

    Components of each subelement are flattened row-major and laid out in
    subelement order; symmetry-identified tensor components share the slot
    of their canonical representative. A non-mixed element is treated as a
    single subelement at offset 0.
    """
    subs = element.subelements if isinstance(element, MixedElement) else (element,)
    mapping = {}
    offset = 0
    for k, sub in enumerate(subs):
        comps = _row_major_components(sub.value_shape)
        sym = dict(sub.symmetry) if isinstance(sub, TensorElement) and sub.symmetry else {}
        pos = {comp: n for n, comp in enumerate(comps)}
        for comp in comps:
            target = sym.get(comp, comp)
            mapping[(k, comp)] = offset + pos[target]
        offset += sub.value_size
    return mapping


def component_offset(element, flat_component: int) -> int:
    """Bounds-check a flat component index against an element's value size."""
    if not (0 <= flat_component < element.value_size):
        raise ComponentOutOfRange(
            f"component {flat_component} out of range for value size {element.value_size}"
        )
    return flat_component
