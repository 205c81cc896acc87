"""Quadrature on the reference triangle {x >= 0, y >= 0, x + y <= 1} and on [0, 1]."""
from __future__ import annotations

import dataclasses

import numpy as np
from scipy.special import roots_jacobi, roots_legendre

MAX_EXACTNESS = 40


@dataclasses.dataclass(frozen=True)
class QuadratureRule:
    points: np.ndarray  # (nq, 2) reference coordinates
    weights: np.ndarray  # (nq,)
    degree: int

    @property
    def barycentric(self) -> np.ndarray:
        x, y = self.points.T
        return np.column_stack([1.0 - x - y, x, y])

    def __len__(self) -> int:
        return len(self.weights)


def quadrature_rule(exactness: int) -> QuadratureRule:
    """Collapsed Gauss-Jacobi x Gauss-Legendre rule exact for total degree ``exactness``.

    A one-point rule sits at the centroid.
    """
    if exactness < 0:
        raise ValueError(f"exactness must be >= 0, got {exactness}")
    if exactness > MAX_EXACTNESS:
        raise ValueError(f"exactness {exactness} exceeds supported maximum {MAX_EXACTNESS}")
    n = exactness // 2 + 1
    xi, wj = roots_jacobi(n, 1.0, 0.0)
    eta, wl = roots_legendre(n)
    y = 0.5 * (1.0 + xi)
    t = 0.5 * (1.0 + eta)
    Y, T = np.meshgrid(y, t, indexing="ij")
    X = T * (1.0 - Y)
    W = np.outer(wj, wl) / 8.0
    pts = np.column_stack([X.ravel(), Y.ravel()])
    return QuadratureRule(pts, W.ravel(), exactness)


def gauss_interval(exactness: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre points and weights on [0, 1]."""
    n = max(exactness, 0) // 2 + 1
    x, w = roots_legendre(n)
    return 0.5 * (1.0 + x), 0.5 * w
