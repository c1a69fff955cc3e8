"""Symmetric variable-coefficient hyperbolic systems and their contravariant form.

A system is ``u_t + sum_m (A_m(x) u)_{x_m} = 0`` with symmetric ``A_m``.
On a mapped element the contravariant coefficient matrices are
``Ã^i = Ja^i . A`` and the two polynomial strategies are

* ``PN``:  ``Ã^i = I^N(I^N(Ja^i) . A)``, a degree-N polynomial. Flux
  ``Ã U`` is formed pointwise on whatever grid consumes it, so on the
  solution grid it is the collocated interpolant ``I^N(Ã U)`` and on a grid
  of order ``M >= 2N`` it is the exact product of degree 2N.
* ``P2N``: ``Ã^i = I^N(Ja^i) . I^N(A)``, a degree-2N product formed on the
  consuming grid (flux of degree 3N). ``P3N`` is accepted as a synonym,
  naming the strategy by its flux degree.

When a 2-D scalar field supplies a stream function ``S`` (``A_1 = S_y``,
``A_2 = -S_x``), the ``PN`` matrices are built as ``Ã^1 = D_eta I^N(S)``,
``Ã^2 = -D_xi I^N(S)``, which is divergence free to round-off and continuous
across conforming faces.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from numpy.polynomial import chebyshev as cheb

from .geometry import CurvedElement, Mesh, face_axis_side
from .spectral_ops import apply_along, differentiation_matrix, interpolate

__all__ = [
    "CoefficientField",
    "ContravariantField",
    "CharacteristicSplit",
    "DivergenceReport",
    "CoefficientError",
    "STRATEGIES",
    "canonical_strategy",
    "contravariant_matrices",
    "coefficient_divergence",
    "continuous_gamma",
    "normal_split",
    "characteristic_split",
    "builtin_systems",
    "make_system",
]

STRATEGIES = ("PN", "P2N", "P3N")
_SYM_TOL = 1e-12
_EIG_FLOOR = 1e-13


class CoefficientError(ValueError):
    pass


def canonical_strategy(strategy: str) -> str:
    s = str(strategy).upper()
    if s not in STRATEGIES:
        raise CoefficientError(f"unknown flux strategy {strategy!r}; choose from {STRATEGIES}")
    return "P2N" if s == "P3N" else s


@dataclass(frozen=True, eq=False)
class CoefficientField:
    """Coefficient matrices ``A_m(x)``: ``matrices(x[..., d]) -> [..., d, p, p]``."""

    name: str
    nvars: int
    dim: int
    matrices: Callable[[np.ndarray], np.ndarray]
    divergence: Callable[[np.ndarray], np.ndarray] | None = None
    stream: Callable[[np.ndarray], np.ndarray] | None = None
    params: dict = field(default_factory=dict)

    def __call__(self, x) -> np.ndarray:
        return self.matrices(np.asarray(x, dtype=float))

    def symmetry_defect(self, x) -> float:
        A = self(x)
        return float(np.max(np.abs(A - np.swapaxes(A, -1, -2)))) if A.size else 0.0

    def max_speed(self, x) -> float:
        """Largest |eigenvalue| of ``A . alpha`` over sample points and unit alpha (upper bound)."""
        A = self(x)
        return float(np.max(np.sqrt(np.sum(np.linalg.norm(A, ord=2, axis=(-2, -1)) ** 2, axis=-1))))


@dataclass(frozen=True, eq=False)
class ContravariantField:
    """Contravariant coefficient matrices on a mesh for one strategy.

    ``values[k, i, j, d]`` is the p x p matrix ``Ã^d`` at solution node (i, j)
    of element k; ``Ja`` and ``A`` hold the factors at the same nodes.
    """

    strategy: str
    N: int
    values: np.ndarray
    Ja: np.ndarray
    A: np.ndarray
    J: np.ndarray
    divergence_free_construction: bool = False

    @property
    def nvars(self) -> int:
        return self.values.shape[-1]

    @property
    def dim(self) -> int:
        return self.Ja.shape[-1]

    @property
    def coefficient_degree(self) -> int:
        return self.N if self.strategy == "PN" else 2 * self.N

    def _to_grid(self, arr: np.ndarray, M: int, axes) -> np.ndarray:
        for a in axes:
            arr = interpolate(arr, M, axis=a)
        return arr

    def on_grid(self, M: int) -> np.ndarray:
        """Ã^d sampled on the order-M tensor grid, shape (K, m, m, d, p, p)."""
        axes = range(1, 1 + self.dim)
        if self.strategy == "PN":
            return self._to_grid(self.values, M, axes)
        Ja = self._to_grid(self.Ja, M, axes)
        A = self._to_grid(self.A, M, axes)
        return np.einsum("...im,...mpq->...ipq", Ja, A)

    def face_normal(self, face: int, L: int) -> np.ndarray:
        """``Ã . n_hat`` (outward reference normal) on the order-L face grid, (K, l, p, p)."""
        axis, side = face_axis_side(face)
        idx = -1 if side else 0
        sign = 1.0 if side else -1.0
        tang = [1 + a for a in range(self.dim - 1)]
        if self.strategy == "PN":
            tr = np.take(self.values[..., axis, :, :], idx, axis=1 + axis)
            return sign * self._to_grid(tr, L, tang)
        ja = self._to_grid(np.take(self.Ja[..., axis, :], idx, axis=1 + axis), L, tang)
        A = self._to_grid(np.take(self.A, idx, axis=1 + axis), L, tang)
        return sign * np.einsum("...m,...mpq->...pq", ja, A)


@dataclass(frozen=True)
class CharacteristicSplit:
    An: np.ndarray
    abs: np.ndarray
    plus: np.ndarray
    minus: np.ndarray


@dataclass(frozen=True, eq=False)
class DivergenceReport:
    divergence: np.ndarray
    gamma_hat: float
    max_divergence: float

    @property
    def divergence_free(self) -> bool:
        return self.max_divergence <= 1e-11


def _elements(target) -> list[CurvedElement]:
    if isinstance(target, Mesh):
        return list(target.elements)
    if isinstance(target, CurvedElement):
        return [target]
    return list(target)


def contravariant_matrices(target, system: CoefficientField, strategy: str = "PN",
                           divergence_free: bool = True) -> ContravariantField:
    """Build ``Ã^i`` for every element of a mesh (or a single element).

    ``divergence_free`` selects the stream-function construction for ``PN``
    whenever the system provides one.
    """
    strategy = canonical_strategy(strategy)
    elems = _elements(target)
    dim = elems[0].dim
    if system.dim != dim:
        raise CoefficientError(f"system {system.name!r} is {system.dim}-D, mesh is {dim}-D")
    N = elems[0].N
    X = np.stack([e.x for e in elems])
    Ja = np.stack([e.Ja for e in elems])
    J = np.stack([e.J for e in elems])
    A = system(X)
    use_stream = strategy == "PN" and divergence_free and system.stream is not None and dim == 2
    if use_stream:
        S = system.stream(X)
        D = differentiation_matrix(N)
        values = np.stack([apply_along(D, S, 2), -apply_along(D, S, 1)], axis=3)
    else:
        values = np.einsum("...im,...mpq->...ipq", Ja, A)
    return ContravariantField(strategy, N, values, Ja, A, J, use_stream)


def coefficient_divergence(contrav: ContravariantField) -> DivergenceReport:
    """``div_xi Ã`` on the strategy's natural grid and ``gamma_hat = max ||div Ã||_2 / J``."""
    N, dim = contrav.N, contrav.dim
    G = N if contrav.strategy == "PN" else 2 * N
    vals = contrav.on_grid(G)
    J = contrav.J
    for a in range(1, 1 + dim):
        J = interpolate(J, G, axis=a)
    D = differentiation_matrix(G)
    div = sum(apply_along(D, vals[..., i, :, :], 1 + i) for i in range(dim))
    norms = np.linalg.norm(div, ord=2, axis=(-2, -1))
    return DivergenceReport(div, float(np.max(norms / J)), float(np.max(np.abs(div))))


def continuous_gamma(system: CoefficientField, x) -> float | None:
    """``gamma = 1/2 max ||div A||_2`` over the sample points, if the divergence is known."""
    if system.divergence is None:
        return None
    div = system.divergence(np.asarray(x, dtype=float))
    return 0.5 * float(np.max(np.linalg.norm(div, ord=2, axis=(-2, -1))))


def characteristic_split(An: np.ndarray):
    """Batched ``(|An|, An+, An-)`` for symmetric ``An`` of shape (..., p, p)."""
    An = np.asarray(An, dtype=float)
    if An.shape[-1] == 1:
        a = np.where(np.abs(An) < _EIG_FLOOR, 0.0, An)
        return np.abs(a), np.maximum(a, 0.0), np.minimum(a, 0.0)
    lam, R = np.linalg.eigh(0.5 * (An + np.swapaxes(An, -1, -2)))
    lam = np.where(np.abs(lam) < _EIG_FLOOR, 0.0, lam)
    RT = np.swapaxes(R, -1, -2)
    absA = (R * np.abs(lam)[..., None, :]) @ RT
    plus = (R * np.maximum(lam, 0.0)[..., None, :]) @ RT
    minus = (R * np.minimum(lam, 0.0)[..., None, :]) @ RT
    return absA, plus, minus


def normal_split(An) -> CharacteristicSplit:
    """Split a symmetric normal matrix into incoming and outgoing parts."""
    An = np.atleast_2d(np.asarray(An, dtype=float))
    if An.shape[-1] != An.shape[-2]:
        raise CoefficientError("normal matrix must be square")
    if np.max(np.abs(An - An.T)) > _SYM_TOL * max(1.0, np.max(np.abs(An))):
        raise CoefficientError("normal matrix is not symmetric; the contravariant field is broken")
    absA, plus, minus = characteristic_split(An)
    return CharacteristicSplit(An, absA, plus, minus)


# -- built-in catalog --------------------------------------------------------

def _scalar(f):
    return lambda x: f(x)[..., None, None]


def _constant(a=(1.0, 0.5)):
    a = tuple(float(c) for c in a)

    def mats(x):
        out = np.empty(x.shape[:-1] + (2, 1, 1))
        out[..., 0, 0, 0], out[..., 1, 0, 0] = a
        return out

    return CoefficientField(
        "constant", 1, 2, mats,
        divergence=lambda x: np.zeros(x.shape[:-1] + (1, 1)),
        stream=_scalar(lambda x: a[0] * x[..., 1] - a[1] * x[..., 0]),
        params={"a": list(a)},
    )


def _strain():
    def mats(x):
        return np.stack([x[..., 1], x[..., 0]], axis=-1)[..., None, None]

    return CoefficientField(
        "strain", 1, 2, mats,
        divergence=lambda x: np.zeros(x.shape[:-1] + (1, 1)),
        stream=_scalar(lambda x: 0.5 * (x[..., 1] ** 2 - x[..., 0] ** 2)),
    )


def _stretch():
    def mats(x):
        return np.stack([x[..., 0], np.zeros(x.shape[:-1])], axis=-1)[..., None, None]

    return CoefficientField("stretch", 1, 2, mats, divergence=lambda x: np.ones(x.shape[:-1] + (1, 1)))


def _wave(c0=1.0, eps=0.3):
    c0, eps = float(c0), float(eps)
    B1 = np.array([[0.0, 1.0], [1.0, 0.0]])
    B2 = np.array([[1.0, 0.0], [0.0, -1.0]])

    def speed(x):
        return c0 * (1 + eps * np.sin(np.pi * x[..., 0]) * np.sin(np.pi * x[..., 1]))

    def mats(x):
        c = speed(x)[..., None, None]
        return np.stack([c * B1, c * B2], axis=-3)

    def div(x):
        sx, sy = np.sin(np.pi * x[..., 0]), np.sin(np.pi * x[..., 1])
        cx, cy = np.cos(np.pi * x[..., 0]), np.cos(np.pi * x[..., 1])
        dcx = (c0 * eps * np.pi * cx * sy)[..., None, None]
        dcy = (c0 * eps * np.pi * sx * cy)[..., None, None]
        return dcx * B1 + dcy * B2

    return CoefficientField("wave", 2, 2, mats, divergence=div, params={"c0": c0, "eps": eps})


def _rough(u0=1.0, amplitude=0.1, k=8):
    """Divergence-free velocity from the stream function u0*y + amp*T_k(x)T_k(y).

    k must be even so the stream function matches across the periodic faces of
    [-1,1]^2 (up to the constant jump u0*2 in y, which the face derivative ignores).
    """
    u0, amplitude, k = float(u0), float(amplitude), int(k)
    if k % 2:
        raise CoefficientError("rough field needs an even Chebyshev degree")
    c = np.zeros(k + 1)
    c[k] = 1.0
    dc = cheb.chebder(c)

    def stream(x):
        return (u0 * x[..., 1] + amplitude * cheb.chebval(x[..., 0], c) * cheb.chebval(x[..., 1], c))[..., None, None]

    def mats(x):
        X, Y = x[..., 0], x[..., 1]
        a1 = u0 + amplitude * cheb.chebval(X, c) * cheb.chebval(Y, dc)
        a2 = -amplitude * cheb.chebval(X, dc) * cheb.chebval(Y, c)
        return np.stack([a1, a2], axis=-1)[..., None, None]

    return CoefficientField(
        "rough", 1, 2, mats,
        divergence=lambda x: np.zeros(x.shape[:-1] + (1, 1)),
        stream=stream,
        params={"u0": u0, "amplitude": amplitude, "k": k},
    )


_CATALOG = {
    "constant": _constant,
    "strain": _strain,
    "stretch": _stretch,
    "wave": _wave,
    "rough": _rough,
}


def make_system(name: str, **params) -> CoefficientField:
    try:
        factory = _CATALOG[name]
    except KeyError:
        raise CoefficientError(f"unknown system {name!r}; choose from {sorted(_CATALOG)}") from None
    try:
        return factory(**params)
    except TypeError as exc:
        raise CoefficientError(f"bad parameters for system {name!r}: {exc}") from None


def builtin_systems() -> dict[str, CoefficientField]:
    """Catalog with default parameters.

    ``constant``  constant scalar advection (a1, a2)
    ``strain``    scalar, divergence-free polynomial velocity (y, x)
    ``stretch``   scalar, velocity (x, 0), divergence 1
    ``wave``      p=2 symmetric system with wave speed c(x, y) in every block
    ``rough``     scalar, divergence-free, high-degree polynomial oscillation
    """
    return {name: factory() for name, factory in _CATALOG.items()}
