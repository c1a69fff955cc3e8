"""Energy accounting for the DGSEM variants and the single-edge aliasing model.

The semi-discrete energy rate of every scheme splits exactly into

    dE/dt = -dissip - pbt + surface_alias + volume_resid + divergence

* ``dissip``: interior-face upwind dissipation, ``sum int_L [[U]]^T |Ãn| [[U]]``
* ``pbt``: physical boundary term,
  ``int_L U^T A+ U + (U-g)^T |A-| (U-g) - g^T |A-| g``
* ``surface_alias``: quadrature mismatch between the order-M boundary terms
  produced by the volume integral and the order-L numerical-flux terms
  (zero when L = M)
* ``divergence``: ``-<(div Ã) U, U>_M``
* ``volume_resid``: everything else in the volume term; on the solution grid
  this is the product-rule residual ``<r, U>_N``

Every term is evaluated by its own quadrature, so closure against the rate
obtained from the operator is a genuine consistency check.
"""

from __future__ import annotations

import csv
import io
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .geometry import Mesh, face_axis_side
from .spectral_ops import (
    ModalExpansion,
    alias_coefficients,
    apply_along,
    differentiation_matrix,
    interpolate,
    interpolation_error_integral,
    lgl_rule,
)
from .solver import (
    BoundaryCondition,
    DGOperator,
    SchemeConfig,
    SolutionField,
    integrate,
)
from .system import CoefficientField, ContravariantField, characteristic_split, coefficient_divergence

__all__ = [
    "EnergyReport",
    "EdgeStudyRow",
    "ComparisonResult",
    "TRACE_HEADER",
    "EDGE_HEADER",
    "total_energy",
    "energy_rate",
    "energy_budget",
    "product_rule_residual",
    "epsilon_quotient",
    "epsilon_estimate",
    "interface_dissipation_defect",
    "edge_aliasing_study",
    "scheme_comparison_experiment",
    "standard_scheme_variants",
    "is_unstable",
    "write_trace_csv",
    "write_edge_csv",
]

TRACE_HEADER = ("step", "time", "energy", "dEdt", "dissip", "pbt", "surface_alias", "volume_resid")
EDGE_HEADER = ("N", "twoNminus1", "dissipation", "aliasing", "sum", "unstable")
UNSTABLE_REL = 1e-8


def _unpack(state):
    if isinstance(state, SolutionField):
        return state.U, state.t
    return np.asarray(state, dtype=float), 0.0


def _mass(target, N: int | None = None) -> np.ndarray:
    if isinstance(target, DGOperator):
        return target.mass
    if isinstance(target, Mesh):
        J = target.stacked("J")
    else:
        J = np.asarray(target)
    w = lgl_rule(J.shape[-1] - 1).weights
    W = w
    for _ in range(J.ndim - 2):
        W = np.multiply.outer(W, w)
    return J * W


def total_energy(state, mesh) -> np.ndarray | float:
    """Broken J-weighted norm ``sum_k ||U^k||^2_{J,N}``; leading batch axes are kept."""
    U, _ = _unpack(state)
    mass = _mass(mesh)
    d = mass.ndim
    val = np.sum(mass[..., None] * U * U, axis=tuple(range(-d - 1, 0)))
    return float(val) if np.ndim(val) == 0 else val


def energy_rate(state, rhs, mesh) -> np.ndarray | float:
    """``2 sum_k <J U, U_t>_N`` from a right-hand side at the same state."""
    U, _ = _unpack(state)
    mass = _mass(mesh)
    d = mass.ndim
    val = 2 * np.sum(mass[..., None] * U * np.asarray(rhs), axis=tuple(range(-d - 1, 0)))
    return float(val) if np.ndim(val) == 0 else val


@dataclass
class EnergyReport:
    """Energy and its rate split into the budget terms (all per state, at time ``t``).

    ``dissip`` and ``pbt`` are the nonnegative-by-construction magnitudes and
    enter the rate with a minus sign; ``surface_alias``, ``volume_resid`` and
    ``divergence`` are signed contributions.
    """

    time: float
    energy: float
    dEdt: float
    dissip: float
    pbt: float
    surface_alias: float
    volume_resid: float
    divergence: float
    interior_alias: float = 0.0
    boundary_alias: float = 0.0
    surface_alias_closed_form: float = float("nan")
    epsilon_quotient: float = float("nan")
    gamma_hat: float = float("nan")
    scheme: str = ""
    magnitude: float = 0.0

    @property
    def budget_sum(self) -> float:
        return -self.dissip - self.pbt + self.surface_alias + self.volume_resid + self.divergence

    @property
    def closure_error(self) -> float:
        """Mismatch between the operator rate and the sum of the terms.

        Relative to the largest term or to ``magnitude``, the summed absolute
        size of the nodal contributions that cancel inside the rate.
        """
        scale = max(abs(self.dEdt), self.dissip, self.pbt, abs(self.surface_alias),
                    abs(self.volume_resid), abs(self.divergence), self.magnitude, 1e-300)
        return abs(self.dEdt - self.budget_sum) / scale

    @property
    def total_dissipation(self) -> float:
        return self.dissip + self.pbt

    def contributions(self) -> dict:
        """Trace row values with every term signed as its contribution to dE/dt."""
        return {
            "time": self.time,
            "energy": self.energy,
            "dEdt": self.dEdt,
            "dissip": -self.dissip,
            "pbt": -self.pbt,
            "surface_alias": self.surface_alias,
            "volume_resid": self.volume_resid,
        }

    def to_dict(self) -> dict:
        out = asdict(self)
        out["closure_error"] = self.closure_error
        return out


def _face_take(arr, face, lead=0):
    """Trace of a (..., K, n, n, ...) array on a face (element axes start at ``lead``)."""
    axis, side = face_axis_side(face)
    return np.take(arr, -1 if side else 0, axis=lead + 1 + axis)


def product_rule_residual(U: np.ndarray, contrav: ContravariantField) -> np.ndarray:
    """``r = Ã.grad U + (div Ã) U - div I^N(Ã U)`` at the solution nodes, (K, n, n, p)."""
    N = contrav.N
    D = differentiation_matrix(N)
    A = contrav.values
    G = N if contrav.strategy == "PN" else 2 * N
    divA = coefficient_divergence(contrav).divergence
    if G != N:
        divA = interpolate(interpolate(divA, N, axis=1), N, axis=2)
    gradU = [apply_along(D, U, 1), apply_along(D, U, 2)]
    flux = np.einsum("kijdpq,kijq->kijdp", A, U)
    r = sum(np.einsum("kijpq,kijq->kijp", A[..., d, :, :], gradU[d]) for d in range(2))
    r = r + np.einsum("kijpq,kijq->kijp", divA, U)
    r = r - apply_along(D, flux[..., 0, :], 1) - apply_along(D, flux[..., 1, :], 2)
    return r


def epsilon_quotient(U: np.ndarray, contrav: ContravariantField) -> float:
    """``max_k 1/2 ||r^k||^2 / ||U^k||^2_{J,N}`` with ``||r||^2 = sum w r.r / J`` (current state)."""
    r = product_rule_residual(U, contrav)
    w = lgl_rule(contrav.N).weights
    W = np.outer(w, w)
    J = contrav.J
    num = 0.5 * np.sum(W[..., None] * r * r / J[..., None], axis=(1, 2, 3))
    den = np.sum((J * W)[..., None] * U * U, axis=(1, 2, 3))
    mask = den > 0
    return float(np.max(num[mask] / den[mask])) if np.any(mask) else 0.0


def epsilon_estimate(contrav: ContravariantField, samples: int = 64, seed: int = 0) -> float:
    """Sampled lower estimate of the product-rule growth bound (max quotient over random states)."""
    rng = np.random.default_rng(seed)
    K, n = contrav.values.shape[0], contrav.N + 1
    best = 0.0
    for _ in range(samples):
        U = rng.standard_normal((K, n, n, contrav.nvars))
        best = max(best, epsilon_quotient(U, contrav))
    return best


def interface_dissipation_defect(op: DGOperator, U: np.ndarray, t: float = 0.0) -> np.ndarray:
    """Pointwise ``F*.[[U]] - 1/2 [[U^T Ãn U]]`` on every interior L-grid face node."""
    data = op.face_data(U, t)
    vals = []
    for itf, uL, uR, An, Fs in data.interior:
        jump = uR - uL
        quad = np.einsum("...p,...pq,...q->...", uR, An, uR) - np.einsum("...p,...pq,...q->...", uL, An, uL)
        vals.append(np.einsum("...p,...p->...", Fs, jump) - 0.5 * quad)
    return np.concatenate([v.ravel() for v in vals]) if vals else np.zeros(0)


def _qform(u, A, v):
    return np.einsum("...p,...pq,...q->...", u, A, v)


def energy_budget(state, mesh: Mesh | None = None, contrav: ContravariantField | None = None,
                  config: SchemeConfig | None = None, bc: BoundaryCondition | None = None,
                  *, operator: DGOperator | None = None, with_epsilon: bool = True) -> EnergyReport:
    """Evaluate every term of the energy budget for a single state."""
    U, t = _unpack(state)
    op = operator or DGOperator(mesh, contrav, config, bc)
    if U.shape[:-1] != op.mass.shape or U.shape[-1] != op.p:
        raise ValueError(f"state shape {U.shape} does not match the scheme")
    cfg = op.config
    N, M, L = cfg.N, cfg.M, cfg.L
    wM, wL = op.wM, op.wL
    WM = np.outer(wM, wM)

    energy = total_energy(U, op)
    Ut = op(U, t)
    rate = energy_rate(U, Ut, op)

    # volume: <F, grad U>_M - <div F, U>_M, split into divergence and residual
    UM = op.to_M(U)
    F = np.einsum("kabdpq,kabq->kabdp", op.AM, UM)
    gU = [apply_along(op.P @ op.DN, apply_along(op.P, U, 2), 1),
          apply_along(op.P @ op.DN, apply_along(op.P, U, 1), 2)]
    divF = apply_along(op.DM, F[..., 0, :], 1) + apply_along(op.DM, F[..., 1, :], 2)
    weak_density = WM[..., None] * (F[..., 0, :] * gU[0] + F[..., 1, :] * gU[1])
    strong_density = WM[..., None] * divF * UM
    vol = np.sum(weak_density) - np.sum(strong_density)
    magnitude = float(2 * np.sum(np.abs(op.mass[..., None] * U * Ut))
                      + np.sum(np.abs(weak_density)) + np.sum(np.abs(strong_density)))
    divA = apply_along(op.DM, op.AM[..., 0, :, :], 1) + apply_along(op.DM, op.AM[..., 1, :, :], 2)
    div_term = -float(np.sum(WM * _qform(UM, divA, UM)))

    # faces
    data = op.face_data(U, t)
    FnM = op.interior_flux_on_faces(U, "M")
    if cfg.form == "S1":
        FnS1 = op.interior_flux_on_faces(U, "ML" if cfg.s1_product == "M" else "L")
        trL = op.face_traces(U)

    def side_term(k, f):
        a = float(np.sum(wM[:, None] * _face_take(UM, f)[k] * FnM[f][k]))
        if cfg.form != "S1":
            return a
        b = float(np.sum(wL[:, None] * trL[f][k] * FnS1[f][k]))
        return 2 * b - a

    dissip = pbt = int_alias = bnd_alias = 0.0
    for itf, uL, uR, An, Fs in data.interior:
        absA = characteristic_split(An)[0]
        jump = uR - uL
        dissip += float(np.sum(wL * _qform(jump, absA, jump)))
        quad_jump = float(np.sum(wL * (_qform(uR, An, uR) - _qform(uL, An, uL))))
        int_alias += side_term(itf.elem, itf.face) + side_term(itf.nbr, itf.nbr_face) + quad_jump
    for bf, uL, uR, An, Fs in data.boundary:
        absA, plus, minus = characteristic_split(An)
        g = uR
        pbt += float(np.sum(wL * (_qform(uL, plus, uL) + _qform(uL - g, -minus, uL - g) - _qform(g, -minus, g))))
        bnd_alias += side_term(bf.elem, bf.face) - float(np.sum(wL * _qform(uL, An, uL)))

    closed = _closed_form_alias(op, U, data)
    eps = epsilon_quotient(U, op.contrav) if with_epsilon and M == N else float("nan")
    return EnergyReport(
        time=t, energy=energy, dEdt=rate, dissip=dissip, pbt=pbt,
        surface_alias=int_alias + bnd_alias, volume_resid=float(vol) - div_term, divergence=div_term,
        interior_alias=int_alias, boundary_alias=bnd_alias, surface_alias_closed_form=closed,
        epsilon_quotient=eps, gamma_hat=coefficient_divergence(op.contrav).gamma_hat,
        scheme=f"{cfg.kind}/{cfg.form}", magnitude=magnitude,
    )


def _closed_form_alias(op: DGOperator, U: np.ndarray, data) -> float:
    """``-+ 2 int {V - I^L V}`` with ``V = <<U>>^T Ãn [[U]]`` per interior face plus the
    boundary ``+- int {U^T Ãn U - I^L(...)}``, integrated exactly.

    The sign is minus for the weak / S2 forms and plus for S1.
    """
    cfg = op.config
    N, L = cfg.N, cfg.L
    if L == cfg.M:
        return 0.0
    Q = max((2 if cfg.strategy == "PN" else 3) * N, 2 * N + 2)
    wQ = lgl_rule(Q).weights
    wL = lgl_rule(L).weights
    sign = 1.0 if cfg.form == "S1" else -1.0
    total = 0.0
    trQ = {f: interpolate(_face_take(U, f), Q, axis=1) for f in range(4)}
    AnQ = {f: op.contrav.face_normal(f, Q) for f in range(4)}

    def exact_minus_interp(vals_Q, vals_L):
        return float(np.sum(wQ * vals_Q) - np.sum(wL * vals_L))

    for itf, uL, uR, An, Fs in data.interior:
        qL = trQ[itf.face][itf.elem]
        qR = np.flip(trQ[itf.nbr_face][itf.nbr], axis=0) if itf.orientation else trQ[itf.nbr_face][itf.nbr]
        A = AnQ[itf.face][itf.elem]
        VQ = _qform(0.5 * (qL + qR), A, qR - qL)
        VL = _qform(0.5 * (uL + uR), An, uR - uL)
        total += sign * 2 * exact_minus_interp(VQ, VL)
    for bf, uL, uR, An, Fs in data.boundary:
        q = trQ[bf.face][bf.elem]
        A = AnQ[bf.face][bf.elem]
        total += -sign * exact_minus_interp(_qform(q, A, q), _qform(uL, An, uL))
    return total


def is_unstable(report: EnergyReport, rel: float = UNSTABLE_REL) -> bool:
    return report.dEdt > rel * report.energy


# -- single-edge model -------------------------------------------------------

@dataclass(frozen=True)
class EdgeStudyRow:
    N: int
    twoNminus1: int
    dissipation: float
    aliasing: float
    sum: float
    unstable: bool


def edge_aliasing_study(q: int, N_range: Iterable[int], alpha: float = 1e-3, beta: float = 1.0,
                        gamma: float = -1.0, modal_check: bool = False) -> list[EdgeStudyRow]:
    """Dissipation versus surface aliasing along one edge with ``[[U]] ~ (1+xi)^(q/3)``.

    dissipation = ``-alpha^2 |gamma| Q_N[(1+xi)^q]``,
    aliasing = ``alpha beta gamma int {(1+xi)^q - I^N (1+xi)^q}``.
    With ``modal_check`` the aliasing is recomputed as ``-2 a_0 alpha beta gamma``
    and a ValueError is raised if the two routes disagree.
    """
    q = int(q)
    if q % 3:
        raise ValueError("q must be divisible by 3")
    Ns = [int(n) for n in N_range]
    if not Ns:
        raise ValueError("N_range must not be empty")
    # the nodal grid must represent (1+xi)^q, not merely integrate it
    fine = lgl_rule(max(q, 2 * max(Ns) + 2))
    v_fine = (1 + fine.nodes) ** q
    rows = []
    for N in Ns:
        rule = lgl_rule(N)
        dissipation = -alpha ** 2 * abs(gamma) * float(rule.weights @ (1 + rule.nodes) ** q)
        aliasing = alpha * beta * gamma * interpolation_error_integral(v_fine, N, fine)
        if modal_check:
            a0 = alias_coefficients(ModalExpansion.from_nodal(v_fine, fine), N)[0]
            modal = -2 * a0 * alpha * beta * gamma
            if abs(modal - aliasing) > 1e-12 * max(1.0, abs(aliasing)):
                raise ValueError(f"modal and integral aliasing disagree at N={N}: {modal} vs {aliasing}")
        total = dissipation + aliasing
        rows.append(EdgeStudyRow(N, 2 * N - 1, dissipation, aliasing, total, total > 0))
    return rows


# -- scheme comparison ---------------------------------------------------------

def standard_scheme_variants(N: int, M: int, strategy: str = "PN", upwind: bool = True) -> dict[str, SchemeConfig]:
    return {
        "standard": SchemeConfig(N, N, N, strategy, "W", upwind),
        "volume-OI-S1": SchemeConfig(N, M, N, strategy, "S1", upwind),
        "volume-OI-S2": SchemeConfig(N, M, N, strategy, "S2", upwind),
        "full-OI": SchemeConfig(N, M, M, strategy, "W", upwind),
    }


@dataclass
class ComparisonResult:
    traces: dict[str, list[EnergyReport]]
    dt: float
    final_states: dict = field(default_factory=dict)

    def max_rate(self, name: str) -> float:
        return max(r.dEdt for r in self.traces[name])

    def max_relative_rate(self, name: str) -> float:
        return max(r.dEdt / r.energy if r.energy > 0 else 0.0 for r in self.traces[name])

    def unstable(self, name: str) -> bool:
        return any(is_unstable(r) for r in self.traces[name])

    def nonincreasing(self, name: str, rel: float = 1e-10) -> bool:
        E = [r.energy for r in self.traces[name]]
        return all(b <= a + rel * a for a, b in zip(E, E[1:]))

    def verdicts(self) -> dict:
        return {
            name: {
                "verdict": "unstable" if self.unstable(name) else "stable",
                "max_dEdt": self.max_rate(name),
                "max_dEdt_over_E": self.max_relative_rate(name),
                "energy_nonincreasing": self.nonincreasing(name),
                "initial_energy": trace[0].energy,
                "final_energy": trace[-1].energy,
            }
            for name, trace in self.traces.items()
        }


def scheme_comparison_experiment(mesh: Mesh, system: CoefficientField, N: int, M: int, T: float,
                                 U0: np.ndarray, dt: float, strategy: str = "PN",
                                 bc: BoundaryCondition | None = None,
                                 schemes: Sequence[str] | None = None, threads: int = 1,
                                 upwind: bool = True) -> ComparisonResult:
    """Run standard, volume-OI (S1, S2) and full-OI from identical data, recording budgets per step."""
    if mesh.N != N:
        mesh = mesh.rebuild(N)
    variants = standard_scheme_variants(N, M, strategy, upwind)
    if schemes is not None:
        variants = {k: v for k, v in variants.items() if k in schemes}
    traces, finals = {}, {}
    for name, cfg in variants.items():
        op = DGOperator.build(mesh, system, cfg, bc, threads=threads)
        reports = []

        def monitor(s, op=op, reports=reports):
            reports.append(energy_budget(s, operator=op, with_epsilon=cfg.kind == "standard"))
            return reports[-1].energy

        final, _ = integrate(SolutionField(np.array(U0, dtype=float)), T, op, dt, {"energy": monitor})
        traces[name] = reports
        finals[name] = final
    return ComparisonResult(traces, dt, finals)


# -- CSV sinks ---------------------------------------------------------------

def _fmt(x) -> str:
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def write_trace_csv(reports: Sequence[EnergyReport], path=None) -> str:
    """Energy trace in the fixed schema; returns the CSV text and writes it if ``path`` is given."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRACE_HEADER)
    for step, rep in enumerate(reports):
        c = rep.contributions()
        w.writerow([_fmt(step)] + [_fmt(c[k]) for k in TRACE_HEADER[1:]])
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    return text


def write_edge_csv(rows: Sequence[EdgeStudyRow], path=None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(EDGE_HEADER)
    for r in rows:
        w.writerow([_fmt(r.N), _fmt(r.twoNminus1), _fmt(r.dissipation), _fmt(r.aliasing), _fmt(r.sum), _fmt(r.unstable)])
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    return text
