"""Quadrature rules on the reference interval [0,1] and the reference
triangle (0,0)-(1,0)-(0,1)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import UnsupportedMeasure


@dataclass(frozen=True)
class QuadratureRule:
    domain: str          # "interval" or "triangle"
    degree: int          # polynomial exactness
    points: tuple        # tuple of coordinate tuples
    weights: tuple       # sums to the reference measure

    def arrays(self):
        return np.array(self.points, dtype=float), np.array(self.weights, dtype=float)


INTERVAL_DEGREES = (1, 3, 5, 7, 9)
TRIANGLE_DEGREES = (1, 2, 4, 6)


def _gauss_interval(npoints: int):
    # Map Gauss-Legendre nodes from [-1, 1] to [0, 1].
    xs, ws = np.polynomial.legendre.leggauss(npoints)
    return (xs + 1.0) / 2.0, ws / 2.0


def interval_rule(degree: int) -> QuadratureRule:
    """The smallest shipped Gauss rule exact to at least the given degree."""
    for exact in INTERVAL_DEGREES:
        if exact >= degree:
            break
    else:
        exact = INTERVAL_DEGREES[-1]
    npoints = (exact + 1) // 2
    xs, ws = _gauss_interval(npoints)
    return QuadratureRule("interval", exact,
                          tuple((float(x),) for x in xs),
                          tuple(float(w) for w in ws))


# Symmetric triangle rules, in barycentric orbits. Each entry is a list of
# (weight, (l1, l2, l3)) with weights normalized to sum to 1; the reference
# weights are half of that.
def _orbit3(a):
    b = 1.0 - 2.0 * a
    return [(b, a, a), (a, b, a), (a, a, b)]


def _orbit6(a, b):
    c = 1.0 - a - b
    return [(a, b, c), (a, c, b), (b, a, c), (b, c, a), (c, a, b), (c, b, a)]


_TRIANGLE_DATA = {
    1: [(1.0, [(1 / 3, 1 / 3, 1 / 3)])],
    2: [(1 / 3, _orbit3(1 / 6))],
    4: [
        (0.223381589678011, _orbit3(0.445948490915965)),
        (0.109951743655322, _orbit3(0.091576213509771)),
    ],
    6: [
        (0.116786275726379, _orbit3(0.249286745170910)),
        (0.050844906370207, _orbit3(0.063089014491502)),
        (0.082851075618374, _orbit6(0.310352451033785, 0.636502499121399)),
    ],
}


def triangle_rule(degree: int) -> QuadratureRule:
    for exact in TRIANGLE_DEGREES:
        if exact >= degree:
            break
    else:
        exact = TRIANGLE_DEGREES[-1]
    points = []
    weights = []
    for w, orbit in _TRIANGLE_DATA[exact]:
        for l1, l2, l3 in orbit:
            # Vertices map to (0,0), (1,0), (0,1): x = l2, y = l3.
            points.append((float(l2), float(l3)))
            weights.append(0.5 * w)
    return QuadratureRule("triangle", exact, tuple(points), tuple(weights))


def rule_for(domain: str, degree: int) -> QuadratureRule:
    if domain == "interval":
        return interval_rule(degree)
    if domain == "triangle":
        return triangle_rule(degree)
    raise UnsupportedMeasure(f"no quadrature rules for domain {domain!r}")
