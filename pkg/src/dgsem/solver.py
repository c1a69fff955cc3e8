"""Semi-discrete DGSEM operator for linear symmetric systems on 2-D curved quads.

Scheme variants are selected by the three quadrature orders (N, M, L):

* standard           L = M = N
* fully overintegrated  L = M > N
* volume overintegrated L = N < M

and the form of the volume term:

* ``W``   weak form, ``<F, grad phi>_M``
* ``S1``  strong form with the interpolated surface correction at order L
* ``S2``  strong form with both the order-L numerical flux and the order-M
  interior flux on the boundary (algebraically the weak form)

State arrays have shape ``(..., K, n, n, p)`` with ``n = N + 1``; any leading
axes are treated as a batch of independent states.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Mapping

import numpy as np

from .geometry import Mesh, face_axis_side
from .spectral_ops import (
    _interp_cached,
    apply_along,
    differentiation_matrix,
    interpolate,
    lgl_rule,
)
from .system import (
    CoefficientField,
    ContravariantField,
    canonical_strategy,
    characteristic_split,
    contravariant_matrices,
)

__all__ = [
    "SchemeConfig",
    "SchemeError",
    "SolutionField",
    "BoundaryCondition",
    "NumericalAbort",
    "FaceData",
    "DGOperator",
    "numerical_flux",
    "semi_discrete_rhs",
    "gauss_law_residual",
    "step_rk",
    "integrate",
    "cfl_time_step",
    "FORMS",
    "INITIAL_KINDS",
    "initial_condition",
]

log = logging.getLogger(__name__)

FORMS = ("W", "S1", "S2")


class SchemeError(ValueError):
    pass


class NumericalAbort(RuntimeError):
    pass


@dataclass(frozen=True)
class SchemeConfig:
    """Quadrature orders, flux strategy and form of one DGSEM variant.

    ``M`` and ``L`` default to ``N``. ``s1_product`` picks where the interior
    flux trace in the S1 surface term is formed: ``"M"`` evaluates the
    order-M flux polynomial at the surface nodes, ``"L"`` forms the product
    pointwise from the surface traces.
    """

    N: int
    M: int | None = None
    L: int | None = None
    strategy: str = "PN"
    form: str = "W"
    upwind: bool = True
    s1_product: str = "M"

    def __post_init__(self):
        if self.M is None:
            object.__setattr__(self, "M", self.N)
        if self.L is None:
            object.__setattr__(self, "L", self.N)
        object.__setattr__(self, "strategy", canonical_strategy(self.strategy))
        object.__setattr__(self, "form", str(self.form).upper())
        if self.N < 1:
            raise SchemeError("solution order N must be >= 1")
        if self.M < self.N:
            raise SchemeError("volume order must satisfy M >= N")
        if self.L not in (self.N, self.M):
            raise SchemeError("surface order must equal N or M")
        if self.form not in FORMS:
            raise SchemeError(f"form must be one of {FORMS}, got {self.form!r}")
        if self.s1_product not in ("M", "L"):
            raise SchemeError("s1_product must be 'M' or 'L'")

    @property
    def kind(self) -> str:
        if self.M == self.N:
            return "standard"
        return "full-OI" if self.L == self.M else "volume-OI"

    @property
    def coefficient_degree(self) -> int:
        return self.N if self.strategy == "PN" else 2 * self.N

    @property
    def volume_exact(self) -> bool:
        """Quadrature of the volume integrand ``(Ã U) . grad phi`` is exact."""
        if self.strategy == "PN":
            return 2 * self.M > 3 * self.N
        return self.M > 2 * self.N

    @property
    def product_rule_exact(self) -> bool:
        """The order-M grid carries ``Ã U`` without interpolation error."""
        if self.strategy == "PN":
            return self.M >= 2 * self.N
        return self.M >= 3 * self.N

    def product_rule_threshold(self) -> int:
        return 2 * self.N if self.strategy == "PN" else 3 * self.N


@dataclass(frozen=True, eq=False)
class SolutionField:
    U: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        if not np.all(np.isfinite(self.U)):
            raise NumericalAbort(f"non-finite entries in the solution at t={self.t}")


@dataclass(frozen=True)
class BoundaryCondition:
    """External states by boundary tag: ``"zero"`` or a callable ``g(x, t) -> (..., p)``."""

    states: Mapping = field(default_factory=dict)
    default: object = "zero"

    def external(self, tag: str, x: np.ndarray, t: float, p: int) -> np.ndarray:
        g = self.states.get(tag, self.default)
        if isinstance(g, str):
            if g in ("zero", "periodic"):
                return np.zeros(x.shape[:-1] + (p,))
            raise SchemeError(f"unknown boundary state {g!r} for tag {tag!r}")
        return np.asarray(g(x, t), dtype=float)


def numerical_flux(U_L, U_R, split) -> np.ndarray:
    """Upwind flux ``A+ U_L + A- U_R`` for a characteristic split."""
    return split.plus @ np.asarray(U_L, dtype=float) + split.minus @ np.asarray(U_R, dtype=float)


def _matvec(A, u):
    return np.einsum("...pq,...q->...p", A, u)


def _flip(arr, orientation, axis=-2):
    return np.flip(arr, axis=axis) if orientation else arr


@dataclass(frozen=True, eq=False)
class FaceData:
    """Traces and fluxes on the order-L surface grid for one state.

    ``interior`` holds, per interface, ``(uL, uR, An, Fstar)`` with the owner
    on the left and ``An`` the owner's ``Ã . n_hat``; ``boundary`` holds the
    same quadruple for each boundary face with ``uR`` the external state.
    """

    interior: list
    boundary: list
    weights: np.ndarray


class DGOperator:
    """Precomputed operators for ``J U_t`` on one mesh, coefficient field and scheme."""

    def __init__(self, mesh: Mesh, contrav: ContravariantField, config: SchemeConfig,
                 bc: BoundaryCondition | None = None, threads: int = 1):
        if mesh.dim != 2:
            raise SchemeError("the time-dependent solver handles 2-D meshes")
        if contrav.N != config.N or contrav.dim != mesh.dim or contrav.values.shape[0] != mesh.K:
            raise SchemeError("mesh, coefficient field and scheme orders are inconsistent")
        if contrav.strategy != config.strategy:
            raise SchemeError(f"coefficient field built for {contrav.strategy}, scheme wants {config.strategy}")
        self.mesh, self.contrav, self.config = mesh, contrav, config
        self.bc = bc or BoundaryCondition()
        self.threads = max(1, int(threads))
        N, M, L = config.N, config.M, config.L
        self.p = contrav.nvars
        self.wN = lgl_rule(N).weights
        self.wM = lgl_rule(M).weights
        self.wL = lgl_rule(L).weights
        self.DN = differentiation_matrix(N)
        self.DM = differentiation_matrix(M)
        self.P = _interp_cached(N, M)
        self.PL = _interp_cached(N, L)
        self.PML = _interp_cached(M, L)
        self.J = np.asarray(contrav.J)
        self.mass = self.J * np.outer(self.wN, self.wN)
        self.AM = contrav.on_grid(M)
        self.Pw = self.wM[:, None] * self.P
        self.DPw = self.wM[:, None] * (self.P @ self.DN)
        self.An_face = {f: contrav.face_normal(f, L) for f in range(4)}
        self.AnM_face = {f: contrav.face_normal(f, M) for f in range(4)}
        self._interior = []
        for itf in mesh.interfaces:
            An = self.An_face[itf.face][itf.elem]
            absA, plus, minus = characteristic_split(An)
            self._interior.append((itf, An, absA, plus, minus))
        self._boundary = []
        for bf in mesh.boundary:
            An = self.An_face[bf.face][bf.elem]
            absA, plus, minus = characteristic_split(An)
            x = apply_along(self.PL, mesh.elements[bf.elem].faces[bf.face].x, 0)
            self._boundary.append((bf, An, absA, plus, minus, x))

    @classmethod
    def build(cls, mesh: Mesh, system: CoefficientField, config: SchemeConfig,
              bc: BoundaryCondition | None = None, threads: int = 1, divergence_free: bool = True):
        contrav = contravariant_matrices(mesh, system, config.strategy, divergence_free=divergence_free)
        return cls(mesh, contrav, config, bc, threads)

    # -- grid transfers ------------------------------------------------------

    def to_M(self, U: np.ndarray) -> np.ndarray:
        return apply_along(self.P, apply_along(self.P, U, -3), -2)

    def flux_M(self, U: np.ndarray) -> np.ndarray:
        """Contravariant flux ``Ã^d U`` on the order-M grid, shape (..., K, m, m, 2, p)."""
        return np.einsum("kabdpq,...kabq->...kabdp", self.AM, self.to_M(U))

    def face_trace_N(self, U: np.ndarray, face: int) -> np.ndarray:
        axis, side = face_axis_side(face)
        return np.take(U, -1 if side else 0, axis=U.ndim - 3 + axis)

    def face_traces(self, U: np.ndarray) -> dict:
        return {f: apply_along(self.PL, self.face_trace_N(U, f), -2) for f in range(4)}

    # -- pieces --------------------------------------------------------------

    def _chunks(self):
        K = self.mesh.K
        n = min(self.threads, K)
        bounds = np.linspace(0, K, n + 1).astype(int)
        return [slice(bounds[i], bounds[i + 1]) for i in range(n)]

    def volume_weak(self, U: np.ndarray) -> np.ndarray:
        """``<F, grad phi_ij>_M`` for every nodal test function."""
        def work(Uc, AMc):
            UM = apply_along(self.P, apply_along(self.P, Uc, -3), -2)
            F = np.einsum("kabdpq,...kabq->...kabdp", AMc, UM)
            return (np.einsum("ai,bj,...kabp->...kijp", self.DPw, self.Pw, F[..., 0, :])
                    + np.einsum("ai,bj,...kabp->...kijp", self.Pw, self.DPw, F[..., 1, :]))
        return self._map_elements_pair(work, U)

    def volume_strong(self, U: np.ndarray) -> np.ndarray:
        """``<div F, phi_ij>_M`` with the divergence of the order-M flux polynomial."""
        def work(Uc, AMc):
            UM = apply_along(self.P, apply_along(self.P, Uc, -3), -2)
            F = np.einsum("kabdpq,...kabq->...kabdp", AMc, UM)
            div = apply_along(self.DM, F[..., 0, :], -3) + apply_along(self.DM, F[..., 1, :], -2)
            return np.einsum("ai,bj,...kabp->...kijp", self.Pw, self.Pw, div)
        return self._map_elements_pair(work, U)

    def _map_elements_pair(self, work, U):
        if self.threads == 1 or self.mesh.K == 1:
            return work(U, self.AM)
        chunks = self._chunks()
        with ThreadPoolExecutor(max_workers=len(chunks)) as pool:
            parts = list(pool.map(lambda s: work(U[..., s, :, :, :], self.AM[s]), chunks))
        return np.concatenate(parts, axis=-4)

    def face_data(self, U: np.ndarray, t: float = 0.0) -> FaceData:
        tr = self.face_traces(U)
        interior = []
        for itf, An, absA, plus, minus in self._interior:
            uL = tr[itf.face][..., itf.elem, :, :]
            uR = _flip(tr[itf.nbr_face][..., itf.nbr, :, :], itf.orientation)
            if self.config.upwind:
                Fs = _matvec(plus, uL) + _matvec(minus, uR)
            else:
                Fs = _matvec(An, 0.5 * (uL + uR))
            interior.append((itf, uL, uR, An, Fs))
        boundary = []
        for bf, An, absA, plus, minus, x in self._boundary:
            uL = tr[bf.face][..., bf.elem, :, :]
            g = self.bc.external(bf.tag, x, t, self.p)
            uR = np.broadcast_to(g, uL.shape)
            if self.config.upwind:
                Fs = _matvec(plus, uL) + _matvec(minus, uR)
            else:
                Fs = _matvec(An, 0.5 * (uL + uR))
            boundary.append((bf, uL, uR, An, Fs))
        return FaceData(interior, boundary, self.wL)

    def surface_fluxes(self, U: np.ndarray, t: float = 0.0, data: FaceData | None = None) -> dict:
        """Numerical flux ``F* . n_hat`` (outward, per element) on each face, (..., K, l, p)."""
        data = data or self.face_data(U, t)
        shape = U.shape[:-4] + (self.mesh.K, self.config.L + 1, self.p)
        out = {f: np.zeros(shape) for f in range(4)}
        for itf, uL, uR, An, Fs in data.interior:
            out[itf.face][..., itf.elem, :, :] = Fs
            out[itf.nbr_face][..., itf.nbr, :, :] = -_flip(Fs, itf.orientation)
        for bf, uL, uR, An, Fs in data.boundary:
            out[bf.face][..., bf.elem, :, :] = Fs
        return out

    def _lift(self, face_values: dict, P: np.ndarray, w: np.ndarray, shape) -> np.ndarray:
        """``sum_faces int phi_ij g dS`` with quadrature weights ``w`` on the face grid of ``P``."""
        out = np.zeros(shape)
        PT = (w[:, None] * P).T
        for f, g in face_values.items():
            axis, side = face_axis_side(f)
            proj = apply_along(PT, g, -2)
            idx = -1 if side else 0
            if axis == 0:
                out[..., idx, :, :] += proj
            else:
                out[..., :, idx, :] += proj
        return out

    def interior_flux_on_faces(self, U: np.ndarray, grid: str) -> dict:
        """``F . n_hat`` of the volume flux on every face.

        ``grid="M"``: the order-M flux polynomial on the order-M face nodes.
        ``grid="ML"``: the same polynomial evaluated at the order-L face nodes.
        ``grid="L"``: the pointwise product of surface traces on the L grid.
        """
        if grid == "L":
            tr = self.face_traces(U)
            return {f: _matvec(self.An_face[f], tr[f]) for f in range(4)}
        UM = self.to_M(U)
        out = {}
        for f in range(4):
            axis, side = face_axis_side(f)
            uf = np.take(UM, -1 if side else 0, axis=UM.ndim - 3 + axis)
            fn = _matvec(self.AnM_face[f], uf)
            out[f] = apply_along(self.PML, fn, -2) if grid == "ML" else fn
        return out

    def surface_term(self, U: np.ndarray, t: float = 0.0, data: FaceData | None = None) -> np.ndarray:
        """``int_{dE,L} phi_ij F* dS`` for every nodal test function."""
        Fs = self.surface_fluxes(U, t, data)
        return self._lift(Fs, self.PL, self.wL, U.shape)

    def weighted_rhs(self, U: np.ndarray, t: float = 0.0) -> np.ndarray:
        """``<J U_t, phi_ij>_N`` (before division by the lumped mass)."""
        form = self.config.form
        if form == "W":
            return self.volume_weak(U) - self.surface_term(U, t)
        if form == "S2":
            FnM = self.interior_flux_on_faces(U, "M")
            return (-self.volume_strong(U) - self.surface_term(U, t)
                    + self._lift(FnM, self.P, self.wM, U.shape))
        Fs = self.surface_fluxes(U, t)
        Fn = self.interior_flux_on_faces(U, "ML" if self.config.s1_product == "M" else "L")
        jump = {f: Fs[f] - Fn[f] for f in range(4)}
        return -self.volume_strong(U) - self._lift(jump, self.PL, self.wL, U.shape)

    def __call__(self, U: np.ndarray, t: float = 0.0) -> np.ndarray:
        """``U_t`` at the solution nodes."""
        return self.weighted_rhs(U, t) / self.mass[..., None]

    def max_speed(self) -> float:
        return float(np.max(np.linalg.norm(self.contrav.A, ord=2, axis=(-2, -1)).max(axis=-1)))


def semi_discrete_rhs(state: SolutionField | np.ndarray, mesh: Mesh, contrav: ContravariantField,
                      config: SchemeConfig, bc: BoundaryCondition | None = None) -> np.ndarray:
    """``U_t`` for a state on the mesh (convenience wrapper around :class:`DGOperator`)."""
    U, t = (state.U, state.t) if isinstance(state, SolutionField) else (np.asarray(state, float), 0.0)
    return DGOperator(mesh, contrav, config, bc)(U, t)


def gauss_law_residual(N: int, F, V, M: int | None = None) -> float:
    """Relative defect of ``<div F, V>_M = int_{dE,M} V F.n dS - <F, grad V>_M``.

    ``F`` has shape ``(n,)*d + (d,)`` and ``V`` shape ``(n,)*d`` on the order-N
    reference grid; both are interpolated to the order-M grid first.
    """
    F = np.asarray(F, dtype=float)
    V = np.asarray(V, dtype=float)
    d = V.ndim
    M = N if M is None else M
    for a in range(d):
        F = interpolate(F, M, axis=a)
        V = interpolate(V, M, axis=a)
    D = differentiation_matrix(M)
    w = lgl_rule(M).weights
    W = w
    for _ in range(d - 1):
        W = np.multiply.outer(W, w)
    div = sum(apply_along(D, F[..., i], i) for i in range(d))
    lhs = np.sum(W * div * V)
    vol = sum(np.sum(W * F[..., i] * apply_along(D, V, i)) for i in range(d))
    surf = 0.0
    wf = w
    for _ in range(d - 2):
        wf = np.multiply.outer(wf, w)
    for i in range(d):
        hi = np.take(F[..., i] * V, -1, axis=i)
        lo = np.take(F[..., i] * V, 0, axis=i)
        surf += np.sum(wf * (hi - lo)) if d > 1 else float(hi - lo)
    scale = max(abs(lhs), abs(surf), abs(vol), 1e-300)
    return float(abs(lhs - (surf - vol)) / scale)


# -- time integration ------------------------------------------------------------

_RK_A = (0.0, -567301805773 / 1357537059087, -2404267990393 / 2016746695238,
         -3550918686646 / 2091501179385, -1275806237668 / 842570457699)
_RK_B = (1432997174477 / 9575080441755, 5161836677717 / 13612068292357,
         1720146321549 / 2090206949498, 3134564353537 / 4481467310338,
         2277821191437 / 14882151754819)
_RK_C = (0.0, 1432997174477 / 9575080441755, 2526269341429 / 6820363962896,
         2006345519317 / 3224310063776, 2802321613138 / 2924317926251)


def step_rk(state: SolutionField, dt: float, rhs: Callable[[np.ndarray, float], np.ndarray]) -> SolutionField:
    """One step of the 5-stage, 4th-order low-storage Runge-Kutta scheme."""
    if not dt > 0:
        raise ValueError(f"time step must be positive, got {dt}")
    U = np.array(state.U, dtype=float)
    k = np.zeros_like(U)
    for a, b, c in zip(_RK_A, _RK_B, _RK_C):
        k = a * k + dt * rhs(U, state.t + c * dt)
        U = U + b * k
    if not np.all(np.isfinite(U)):
        raise NumericalAbort(f"non-finite solution after step to t={state.t + dt:.6g} (dt={dt:.3g})")
    return SolutionField(U, state.t + dt)


def cfl_time_step(op: DGOperator, cfl: float = 0.5) -> float:
    """``dt = CFL * dx_min / (lambda_max (2N + 1))`` with dx_min the shortest element edge."""
    edges = []
    for e in op.mesh.elements:
        x = e.x
        corners = [x[0, 0], x[-1, 0], x[-1, -1], x[0, -1]]
        edges += [np.linalg.norm(corners[i] - corners[(i + 1) % 4]) for i in range(4)]
    lam = op.max_speed()
    if lam <= 0:
        raise SchemeError("coefficient field has zero wave speed; give a fixed dt")
    return cfl * min(edges) / (lam * (2 * op.config.N + 1))


def integrate(state: SolutionField, T: float, rhs: Callable, dt: float,
              monitors: Mapping[str, Callable] | None = None):
    """Advance to time ``T`` with a fixed step (the last one shortened to land on T).

    ``monitors`` maps names to ``f(state) -> value``; each is evaluated at the
    initial state and after every step, so traces have
    ``ceil((T - t0) / dt) + 1`` entries.
    """
    monitors = dict(monitors or {})
    if T < state.t:
        raise ValueError("final time precedes the initial time")
    traces = {name: [f(state)] for name, f in monitors.items()}
    traces["time"] = [state.t]
    span = T - state.t
    nsteps = math.ceil(span / dt - 1e-12) if span > 0 else 0
    t0 = state.t
    for i in range(nsteps):
        h = min(dt, t0 + span - state.t) if i == nsteps - 1 else dt
        state = step_rk(state, h, rhs)
        if i == nsteps - 1:
            state = replace(state, t=T)
        for name, f in monitors.items():
            traces[name].append(f(state))
        traces["time"].append(state.t)
        log.debug("step %d t=%.6g", i + 1, state.t)
    return state, traces


# -- initial data ----------------------------------------------------------------

INITIAL_KINDS = ("random", "smooth-random", "sine", "constant")


def initial_condition(mesh: Mesh, nvars: int, kind: str = "random", seed: int = 0,
                      modes: int = 3, batch: int | None = None) -> np.ndarray:
    """Seeded initial states on the mesh nodes, shape ``([batch,] K, n, n, p)``.

    ``random``         independent normal values per node (discontinuous)
    ``smooth-random``  random combination of ``sin/cos(pi (k x + l y))``, |k|, |l| <= modes
    ``sine``           ``sin(pi x)`` in every component
    ``constant``       ones
    """
    if kind not in INITIAL_KINDS:
        raise SchemeError(f"unknown initial condition {kind!r}; choose from {INITIAL_KINDS}")
    rng = np.random.default_rng(seed)
    x = mesh.stacked("x")
    lead = () if batch is None else (int(batch),)
    shape = lead + x.shape[:-1] + (nvars,)
    if kind == "random":
        return rng.standard_normal(shape)
    if kind == "sine":
        return np.broadcast_to(np.sin(np.pi * x[..., 0])[..., None], shape).copy()
    if kind == "constant":
        return np.ones(shape)
    U = np.zeros(shape)
    ks = [(k, l) for k in range(modes + 1) for l in range(-modes, modes + 1) if (k, l) > (0, 0)]
    for k, l in ks:
        phase = np.pi * (k * x[..., 0] + l * x[..., 1])
        a = rng.standard_normal(lead + (1, 1, 1, nvars)) / (1 + k * k + l * l)
        b = rng.standard_normal(lead + (1, 1, 1, nvars)) / (1 + k * k + l * l)
        U += a * np.cos(phase)[..., None] + b * np.sin(phase)[..., None]
    return U
