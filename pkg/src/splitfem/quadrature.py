"""Symmetric quadrature rules on the reference triangle and Gauss rules on edges.

Points are stored in barycentric coordinates ``(l0, l1, l2)``; the reference
triangle is ``{(0,0), (1,0), (0,1)}`` so a point maps to ``(l1, l2)``.
Weights sum to the reference area 1/2.
"""

from dataclasses import dataclass
from itertools import permutations

import numpy as np

from .errors import InvalidArgumentError


@dataclass(frozen=True)
class QuadratureRule:
    points: np.ndarray  # (nq, 3) barycentric
    weights: np.ndarray  # (nq,)
    exact_degree: int

    @property
    def ref_points(self):
        """Quadrature points as reference coordinates, shape (nq, 2)."""
        return self.points[:, 1:]

    def __len__(self):
        return len(self.weights)


def _orbit(bary, weight):
    pts = sorted(set(permutations(bary)))
    return [(p, weight) for p in pts]


def _build(groups, degree):
    pts, wts = [], []
    for bary, w in groups:
        for p, wp in _orbit(bary, w):
            pts.append(p)
            wts.append(wp)
    weights = 0.5 * np.asarray(wts, dtype=float)
    return QuadratureRule(np.asarray(pts, dtype=float), weights, degree)


# Dunavant (1985) rules; weights normalised to one before scaling by 1/2.
_D1 = [((1 / 3, 1 / 3, 1 / 3), 1.0)]
_D2 = [((2 / 3, 1 / 6, 1 / 6), 1 / 3)]
_D4 = [
    ((0.108103018168070, 0.445948490915965, 0.445948490915965), 0.223381589678011),
    ((0.816847572980459, 0.091576213509771, 0.091576213509771), 0.109951743655322),
]
_D6 = [
    ((0.501426509658179, 0.249286745170910, 0.249286745170910), 0.116786275726379),
    ((0.873821971016996, 0.063089014491502, 0.063089014491502), 0.050844906370207),
    ((0.053145049844817, 0.310352451033784, 0.636502499121399), 0.082851075618374),
]

_RULES = {1: _D1, 2: _D2, 4: _D4, 6: _D6}


def triangle_rule(degree):
    """Return the smallest tabulated rule integrating polynomials of ``degree`` exactly."""
    for d in sorted(_RULES):
        if d >= degree:
            rule = _build(_RULES[d], d)
            # Re-normalise so the weights sum to 1/2 to machine precision.
            w = rule.weights * (0.5 / rule.weights.sum())
            p = rule.points / rule.points.sum(axis=1, keepdims=True)
            return QuadratureRule(p, w, d)
    raise InvalidArgumentError(f"no tabulated triangle rule of degree {degree}")


@dataclass(frozen=True)
class LineRule:
    points: np.ndarray  # (nq,) parameter in [0, 1]
    weights: np.ndarray  # (nq,) summing to 1

    def __len__(self):
        return len(self.weights)


def gauss_line(npoints=3):
    x, w = np.polynomial.legendre.leggauss(npoints)
    return LineRule(0.5 * (x + 1.0), 0.5 * w)


def collapsed_gauss(k):
    """Conical-product rule with ``k*k`` points, exact to degree ``2k - 2``.

    Maps the unit square onto the reference triangle by ``(u, v) -> (u, v(1-u))``.
    """
    line = gauss_line(k)
    u, v = np.meshgrid(line.points, line.points, indexing="ij")
    wu, wv = np.meshgrid(line.weights, line.weights, indexing="ij")
    x = u.ravel()
    y = (v * (1.0 - u)).ravel()
    w = (wu * wv * (1.0 - u)).ravel()
    pts = np.column_stack([1.0 - x - y, x, y])
    return QuadratureRule(pts, w, 2 * k - 2)
