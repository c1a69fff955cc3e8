"""One-dimensional Legendre / Gauss-Lobatto machinery.

Everything in the higher-dimensional code is a tensor product of the
operators defined here: LGL quadrature rules, barycentric interpolation
between node sets, the collocation differentiation matrix, discrete inner
products and the discrete Legendre (modal) transform used for aliasing
analysis.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

__all__ = [
    "QuadratureRule",
    "InterpolationOperator",
    "ModalExpansion",
    "lgl_rule",
    "exact_rule",
    "legendre_eval",
    "legendre_vandermonde",
    "barycentric_weights",
    "interpolation_matrix",
    "interpolation_operator",
    "interpolate",
    "differentiation_matrix",
    "discrete_inner_product",
    "discrete_legendre_norms",
    "alias_coefficients",
    "interpolation_error_integral",
    "apply_along",
]

_NEWTON_TOL = 1e-15
_NEWTON_MAXITER = 50


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class QuadratureRule:
    """Gauss-Lobatto rule of order ``N`` (``N+1`` nodes, exact to degree 2N-1)."""

    order: int
    nodes: np.ndarray
    weights: np.ndarray

    @property
    def size(self) -> int:
        return self.order + 1

    def integrate(self, values, axis: int = 0) -> np.ndarray:
        values = np.asarray(values, dtype=float)
        return np.tensordot(self.weights, values, axes=(0, axis))


@dataclass(frozen=True, eq=False)
class InterpolationOperator:
    source_order: int
    target_order: int
    matrix: np.ndarray

    def __call__(self, values, axis: int = 0) -> np.ndarray:
        return apply_along(self.matrix, values, axis)


@dataclass(frozen=True, eq=False)
class ModalExpansion:
    """Polynomial stored by its Legendre coefficients ``V_k``, ``k = 0..degree``."""

    coefficients: np.ndarray

    @property
    def degree(self) -> int:
        return len(self.coefficients) - 1

    def __call__(self, x) -> np.ndarray:
        return legendre_vandermonde(self.degree, x) @ self.coefficients

    @classmethod
    def from_nodal(cls, values, rule: QuadratureRule | None = None) -> "ModalExpansion":
        """Discrete Legendre transform of nodal values on an LGL grid.

        The transform is a quadrature projection with the discrete norms of
        the grid, which is exact for every polynomial of degree <= rule.order.
        """
        values = np.asarray(values, dtype=float)
        if rule is None:
            rule = lgl_rule(len(values) - 1)
        if len(values) != rule.size:
            raise ValueError(f"expected {rule.size} nodal values, got {len(values)}")
        vand = legendre_vandermonde(rule.order, rule.nodes)
        coeffs = (vand.T @ (rule.weights * values)) / discrete_legendre_norms(rule.order)
        return cls(coeffs)

    def to_nodal(self, rule: QuadratureRule) -> np.ndarray:
        return self(rule.nodes)


def _legendre_pair(n: int, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Return L_n(x), L_{n-1}(x)."""
    p_prev = np.ones_like(x)
    p = x.copy()
    for k in range(2, n + 1):
        p_prev, p = p, ((2 * k - 1) * x * p - (k - 1) * p_prev) / k
    return p, p_prev


@lru_cache(maxsize=None)
def lgl_rule(N: int) -> QuadratureRule:
    """Legendre-Gauss-Lobatto nodes and weights of order ``N``.

    Nodes are the roots of (1 - x^2) L_N'(x), found by Newton iteration from
    Chebyshev-Gauss-Lobatto initial guesses. Weights are
    ``2 / (N (N + 1) L_N(x_i)^2)``.
    """
    N = int(N)
    if N < 1:
        raise ValueError(f"LGL rule needs N >= 1, got N={N}")
    x = -np.cos(np.pi * np.arange(N + 1) / N)
    if N > 1:
        # Newton on x L_N - L_{N-1} = 0 (same interior roots as L_N')
        for _ in range(_NEWTON_MAXITER):
            p, p_prev = _legendre_pair(N, x)
            dx = (x * p - p_prev) / ((N + 1) * p)
            dx[0] = dx[-1] = 0.0
            x = x - dx
            if np.max(np.abs(dx)) < _NEWTON_TOL:
                break
    x[0], x[-1] = -1.0, 1.0
    x = 0.5 * (x - x[::-1])
    p = legendre_eval(N, x)
    w = 2.0 / (N * (N + 1) * p * p)
    w = 0.5 * (w + w[::-1])
    return QuadratureRule(N, _readonly(x), _readonly(w))


def exact_rule(degree: int) -> QuadratureRule:
    """An LGL rule that integrates polynomials of ``degree`` exactly."""
    return lgl_rule(max(1, degree // 2 + 1))


def legendre_eval(k: int, xi):
    """L_k(xi) by the three-term recurrence; scalar in, scalar out."""
    if k < 0:
        raise ValueError("Legendre degree must be nonnegative")
    x = np.asarray(xi, dtype=float)
    p_prev, p = np.ones_like(x), x.copy()
    if k == 0:
        p = p_prev
    for n in range(2, k + 1):
        p_prev, p = p, ((2 * n - 1) * x * p - (n - 1) * p_prev) / n
    return p.item() if p.ndim == 0 else p


def legendre_vandermonde(degree: int, x) -> np.ndarray:
    """Matrix ``V[i, k] = L_k(x_i)`` for ``k = 0..degree``."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    V = np.empty((x.size, degree + 1))
    V[:, 0] = 1.0
    if degree >= 1:
        V[:, 1] = x
    for n in range(2, degree + 1):
        V[:, n] = ((2 * n - 1) * x * V[:, n - 1] - (n - 1) * V[:, n - 2]) / n
    return V


def discrete_legendre_norms(N: int) -> np.ndarray:
    """``<L_k, L_k>_N`` on the order-N LGL grid (the top mode is inflated to 2/N)."""
    k = np.arange(N + 1)
    norms = 2.0 / (2 * k + 1)
    norms[N] = 2.0 / N
    return norms


@lru_cache(maxsize=None)
def _bary_cached(N: int) -> np.ndarray:
    return _readonly(barycentric_weights(lgl_rule(N).nodes))


def barycentric_weights(nodes) -> np.ndarray:
    nodes = np.asarray(nodes, dtype=float)
    diff = nodes[:, None] - nodes[None, :]
    np.fill_diagonal(diff, 1.0)
    w = 1.0 / np.prod(diff, axis=1)
    return w / np.max(np.abs(w))


def interpolation_matrix(source_nodes, target_nodes, bary=None) -> np.ndarray:
    """Dense Lagrange interpolation matrix (barycentric form, exact hits handled)."""
    xs = np.asarray(source_nodes, dtype=float)
    xt = np.atleast_1d(np.asarray(target_nodes, dtype=float))
    if bary is None:
        bary = barycentric_weights(xs)
    diff = xt[:, None] - xs[None, :]
    hit = np.isclose(diff, 0.0, rtol=0.0, atol=1e-15)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = bary[None, :] / diff
        mat = terms / np.sum(terms, axis=1, keepdims=True)
    rows = np.any(hit, axis=1)
    mat[rows] = hit[rows].astype(float)
    return mat


@lru_cache(maxsize=None)
def _interp_cached(N: int, M: int) -> np.ndarray:
    if N == M:
        return _readonly(np.eye(N + 1))
    return _readonly(interpolation_matrix(lgl_rule(N).nodes, lgl_rule(M).nodes, _bary_cached(N)))


def interpolation_operator(N: int, M: int) -> InterpolationOperator:
    """Operator taking nodal values on the order-N grid to the order-M grid."""
    return InterpolationOperator(N, M, _interp_cached(N, M))


def interpolate(values, M: int, axis: int = 0) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    N = values.shape[axis] - 1
    return apply_along(_interp_cached(N, M), values, axis)


@lru_cache(maxsize=None)
def differentiation_matrix(N: int) -> np.ndarray:
    """Collocation derivative on the order-N LGL nodes (negative-sum diagonal)."""
    if N < 1:
        raise ValueError("differentiation matrix needs N >= 1")
    x = lgl_rule(N).nodes
    w = _bary_cached(N)
    diff = x[:, None] - x[None, :]
    np.fill_diagonal(diff, 1.0)
    D = (w[None, :] / w[:, None]) / diff
    np.fill_diagonal(D, 0.0)
    np.fill_diagonal(D, -D.sum(axis=1))
    return _readonly(D)


def apply_along(matrix: np.ndarray, values, axis: int) -> np.ndarray:
    """Apply a 1-D operator along one axis of a tensor-product array."""
    values = np.asarray(values)
    out = np.tensordot(matrix, values, axes=(1, axis))
    return np.moveaxis(out, 0, axis)


def discrete_inner_product(f, g, rule: QuadratureRule) -> float:
    """``sum_i f_i . g_i w_i``; trailing axes of f and g are contracted componentwise."""
    f = np.asarray(f, dtype=float)
    g = np.asarray(g, dtype=float)
    if f.shape != g.shape:
        raise ValueError(f"shape mismatch: {f.shape} vs {g.shape}")
    if f.shape[0] != rule.size:
        raise ValueError(f"expected {rule.size} nodal values, got {f.shape[0]}")
    prod = (f * g).reshape(rule.size, -1).sum(axis=1)
    return float(rule.weights @ prod)


def alias_coefficients(V: ModalExpansion, N: int) -> np.ndarray:
    """Aliases ``a_k`` that interpolation at the order-N nodes adds to modes k <= N.

    ``a_k = (1/||L_k||_N^2) sum_{n=N+1}^{deg V} <L_n, L_k>_N V_n``.
    """
    if V.degree <= N:
        return np.zeros(N + 1)
    rule = lgl_rule(N)
    vand = legendre_vandermonde(V.degree, rule.nodes)
    gram = vand[:, : N + 1].T @ (rule.weights[:, None] * vand[:, N + 1 :])
    return gram @ V.coefficients[N + 1 :] / discrete_legendre_norms(N)


def interpolation_error_integral(values, N: int, rule: QuadratureRule | None = None) -> float:
    """``int_{-1}^{1} (V - I^N V) dxi`` for V given by nodal values on an exact grid."""
    values = np.asarray(values, dtype=float)
    if rule is None:
        rule = lgl_rule(len(values) - 1)
    coarse = lgl_rule(N)
    at_coarse = interpolation_matrix(rule.nodes, coarse.nodes, _bary_cached(rule.order)) @ values
    return float(rule.weights @ values - coarse.weights @ at_coarse)
