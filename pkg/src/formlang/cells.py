"""Reference cells: simplices in one, two and three dimensions."""

from dataclasses import dataclass

from .errors import InvalidTerminal

_CELL_DIMENSIONS = {"interval": 1, "triangle": 2, "tetrahedron": 3}


@dataclass(frozen=True)
class Cell:
    """A simplex cell identified by name, with its geometric dimension."""

    name: str
    geometric_dimension: int

    def __post_init__(self):
        expected = _CELL_DIMENSIONS.get(self.name)
        if expected is None:
            raise InvalidTerminal(f"unknown cell {self.name!r}")
        if self.geometric_dimension != expected:
            raise InvalidTerminal(
                f"cell {self.name!r} has geometric dimension {expected}, "
                f"not {self.geometric_dimension}"
            )

    @property
    def num_facets(self) -> int:
        # A d-simplex has d+1 facets.
        return self.geometric_dimension + 1

    def __repr__(self):
        return self.name


interval = Cell("interval", 1)
triangle = Cell("triangle", 2)
tetrahedron = Cell("tetrahedron", 3)

CELLS = {c.name: c for c in (interval, triangle, tetrahedron)}


def as_cell(obj) -> Cell:
    if isinstance(obj, Cell):
        return obj
    if isinstance(obj, str) and obj in CELLS:
        return CELLS[obj]
    raise InvalidTerminal(f"expected a cell, got {obj!r}")
