"""Minimal meshes backing the numeric oracle: 1D interval chains and 2D
triangle lists with boundary facets."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeMismatch


@dataclass(frozen=True)
class IntervalChain:
    a: float
    b: float
    n: int

    def __post_init__(self):
        if self.n < 1 or not self.b > self.a:
            raise ShapeMismatch("an interval chain needs b > a and n >= 1")

    @property
    def dimension(self):
        return 1

    def cells(self):
        xs = np.linspace(self.a, self.b, self.n + 1)
        return [(xs[k], xs[k + 1]) for k in range(self.n)]

    def boundary_facets(self):
        """(point, outward normal, owning cell index) triples."""
        return [
            (np.array([self.a]), np.array([-1.0]), 0),
            (np.array([self.b]), np.array([1.0]), self.n - 1),
        ]


@dataclass(frozen=True)
class TriangleList:
    vertices: tuple      # tuple of (x, y)
    triangles: tuple     # tuple of vertex index triples
    boundary: tuple      # tuple of (v0, v1, owning cell index)

    def __post_init__(self):
        verts = np.asarray(self.vertices, dtype=float)
        for tri in self.triangles:
            v0, v1, v2 = (verts[i] for i in tri)
            e1, e2 = v1 - v0, v2 - v0
            area = 0.5 * (e1[0] * e2[1] - e1[1] * e2[0])
            if area <= 0:
                raise ShapeMismatch(
                    f"triangle {tri} is degenerate or negatively oriented"
                )
        for v0, v1, owner in self.boundary:
            if not (0 <= owner < len(self.triangles)):
                raise ShapeMismatch(f"boundary facet ({v0}, {v1}) has no owner cell")
            edge = verts[v1] - verts[v0]
            normal = np.array([edge[1], -edge[0]])
            centroid = verts[list(self.triangles[owner])].mean(axis=0)
            midpoint = (verts[v0] + verts[v1]) / 2.0
            if np.dot(normal, midpoint - centroid) <= 0:
                raise ShapeMismatch(
                    f"boundary facet ({v0}, {v1}) is not oriented outward"
                )

    @property
    def dimension(self):
        return 2

    def cell_vertices(self, index):
        verts = np.asarray(self.vertices, dtype=float)
        return verts[list(self.triangles[index])]

    def boundary_facets(self):
        """(endpoints 2x2 array, outward unit normal, owning cell index)."""
        verts = np.asarray(self.vertices, dtype=float)
        out = []
        for v0, v1, owner in self.boundary:
            pts = np.array([verts[v0], verts[v1]])
            edge = pts[1] - pts[0]
            normal = np.array([edge[1], -edge[0]])
            normal /= np.linalg.norm(normal)
            out.append((pts, normal, owner))
        return out


def unit_square(n: int = 1) -> TriangleList:
    """The unit square split into 2*n*n triangles."""
    if n < 1:
        raise ShapeMismatch("unit_square needs n >= 1")
    xs = np.linspace(0.0, 1.0, n + 1)
    vid = lambda ix, iy: iy * (n + 1) + ix
    vertices = tuple((float(xs[ix]), float(xs[iy]))
                     for iy in range(n + 1) for ix in range(n + 1))
    triangles = []
    owner_of_edge = {}
    for iy in range(n):
        for ix in range(n):
            a = vid(ix, iy)
            b = vid(ix + 1, iy)
            c = vid(ix + 1, iy + 1)
            d = vid(ix, iy + 1)
            for tri in ((a, b, c), (a, c, d)):
                owner = len(triangles)
                triangles.append(tri)
                for k in range(3):
                    owner_of_edge[(tri[k], tri[(k + 1) % 3])] = owner
    boundary = []
    for iy in range(n):
        boundary.append((vid(n, iy), vid(n, iy + 1), owner_of_edge[(vid(n, iy), vid(n, iy + 1))]))
        boundary.append((vid(0, iy + 1), vid(0, iy), owner_of_edge[(vid(0, iy + 1), vid(0, iy))]))
    for ix in range(n):
        boundary.append((vid(ix, 0), vid(ix + 1, 0), owner_of_edge[(vid(ix, 0), vid(ix + 1, 0))]))
        boundary.append((vid(ix + 1, n), vid(ix, n), owner_of_edge[(vid(ix + 1, n), vid(ix, n))]))
    return TriangleList(vertices, tuple(triangles), tuple(boundary))


def parse_mesh_spec(spec: str):
    """CLI mesh specs: interval:a:b:n or unitsquare:n."""
    parts = spec.split(":")
    if parts[0] == "interval" and len(parts) == 4:
        return IntervalChain(float(parts[1]), float(parts[2]), int(parts[3]))
    if parts[0] == "unitsquare" and len(parts) == 2:
        return unit_square(int(parts[1]))
    raise ShapeMismatch(
        f"unknown mesh spec {spec!r}; expected interval:a:b:n or unitsquare:n"
    )
