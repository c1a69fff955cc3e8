import json
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dgsem.analysis import (
    EDGE_HEADER,
    TRACE_HEADER,
    EnergyReport,
    edge_aliasing_study,
    energy_budget,
    energy_rate,
    epsilon_estimate,
    epsilon_quotient,
    interface_dissipation_defect,
    is_unstable,
    product_rule_residual,
    scheme_comparison_experiment,
    standard_scheme_variants,
    total_energy,
    write_edge_csv,
    write_trace_csv,
)
from dgsem.geometry import MappingSpec, build_mesh, builtin_mesh
from dgsem.solver import BoundaryCondition, DGOperator, SchemeConfig, SolutionField, initial_condition
from dgsem.spectral_ops import lgl_rule
from dgsem.system import contravariant_matrices, make_system

GOLDEN = Path(__file__).parent / "golden"
IDENTITY = MappingSpec.affine([(-1, -1), (1, -1), (-1, 1), (1, 1)])

BUDGET_CASES = [
    ("curved-periodic-2x2", "wave", SchemeConfig(3)),
    ("curved-periodic-2x2", "wave", SchemeConfig(3, 8, 3, form="W")),
    ("curved-periodic-2x2", "wave", SchemeConfig(3, 8, 3, form="S1")),
    ("curved-periodic-2x2", "wave", SchemeConfig(3, 8, 3, form="S1", s1_product="L")),
    ("curved-periodic-2x2", "wave", SchemeConfig(3, 8, 3, form="S2")),
    ("curved-periodic-2x2", "rough", SchemeConfig(3, 8, 8)),
    ("curved-periodic-2x2", "stretch", SchemeConfig(3, 6, 3, strategy="P2N", form="S2")),
    ("curved-2x2", "wave", SchemeConfig(3, 7, 3, form="S1")),
    ("curved-2x2", "strain", SchemeConfig(4, 9, 9, strategy="P3N")),
    ("curved-quad", "constant", SchemeConfig(4, 6, 4, form="S2")),
]


def case_id(case):
    mesh, sys, c = case
    return f"{mesh}-{sys}-{c.kind}-{c.form}-{c.strategy}-{c.s1_product}"


# -- norms and rates -------------------------------------------------------------

def test_total_energy_examples():
    """[TRIVIAL] identity element: U = 1 gives 4; U = 0 gives 0; U = xi gives 4/3."""
    mesh = build_mesh([IDENTITY], 4)
    x = mesh.stacked("x")
    assert total_energy(np.ones(x.shape[:-1] + (1,)), mesh) == pytest.approx(4.0, abs=1e-13)
    assert total_energy(np.zeros(x.shape[:-1] + (1,)), mesh) == 0.0
    assert total_energy(x[..., :1], mesh) == pytest.approx(4.0 / 3.0, abs=1e-13)


def test_total_energy_batch_and_state():
    mesh = builtin_mesh("curved-periodic-2x2", 3)
    U = initial_condition(mesh, 2, "random", batch=3)
    E = total_energy(U, mesh)
    assert E.shape == (3,)
    assert E[1] == pytest.approx(total_energy(SolutionField(U[1]), mesh))
    # the physical area of the periodic square is 4
    assert total_energy(np.ones(U.shape[1:-1] + (1,)), mesh) == pytest.approx(4.0, rel=1e-12)


def test_energy_rate_constant_state():
    """[TRIVIAL]"""
    mesh = builtin_mesh("curved-periodic-2x2", 4)
    op = DGOperator.build(mesh, make_system("constant"), SchemeConfig(4))
    U = initial_condition(mesh, 1, "constant")
    assert abs(energy_rate(U, op(U), op)) < 1e-11


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**31))
def test_full_oi_rate_nonpositive(seed):
    """[DERIVED] divergence-free field, exact quadrature: dE/dt <= 0 for random states."""
    mesh = builtin_mesh("curved-periodic-2x2", 3)
    op = DGOperator.build(mesh, make_system("strain"), SchemeConfig(3, 7, 7))
    U = initial_condition(mesh, 1, "random", seed=seed)
    assert energy_rate(U, op(U), op) <= 1e-10 * total_energy(U, op)


# -- budget --------------------------------------------------------------------------

@pytest.mark.parametrize("case", BUDGET_CASES, ids=case_id)
def test_budget_closure(case):
    mesh_name, sys_name, cfg = case
    mesh = builtin_mesh(mesh_name, cfg.N)
    sys = make_system(sys_name)
    bc = BoundaryCondition(default=lambda x, t: 0.3 * np.ones(x.shape[:-1] + (sys.nvars,)))
    op = DGOperator.build(mesh, sys, cfg, bc)
    for seed in range(3):
        rep = energy_budget(initial_condition(mesh, sys.nvars, "random", seed=seed), operator=op)
        assert rep.closure_error < 1e-9
        assert rep.dissip >= -1e-12 and rep.pbt >= -1e-12
        assert rep.scheme == f"{cfg.kind}/{cfg.form}"


@pytest.mark.parametrize("case", [c for c in BUDGET_CASES if c[2].kind == "volume-OI" and c[1] != "stretch"], ids=case_id)
def test_surface_alias_matches_closed_form(case):
    """The face-by-face alias term equals the exact-minus-interpolated integrals of the face products.

    The closed form assumes Ã.n is continuous across faces, which "stretch" violates at periodic faces.
    """
    mesh_name, sys_name, cfg = case
    mesh = builtin_mesh(mesh_name, cfg.N)
    sys = make_system(sys_name)
    op = DGOperator.build(mesh, sys, cfg)
    rep = energy_budget(initial_condition(mesh, sys.nvars, "random", seed=1), operator=op)
    assert abs(rep.surface_alias) > 1e-6
    assert rep.surface_alias == pytest.approx(rep.surface_alias_closed_form, rel=1e-9, abs=1e-12)


def test_budget_entry_points_agree():
    mesh = builtin_mesh("curved-periodic-2x2", 3)
    sys = make_system("wave")
    cfg = SchemeConfig(3, 6, 3, form="S2")
    contrav = contravariant_matrices(mesh, sys)
    U = initial_condition(mesh, 2, "random", seed=2)
    a = energy_budget(SolutionField(U, 0.25), mesh, contrav, cfg)
    b = energy_budget(U, operator=DGOperator(mesh, contrav, cfg))
    assert a.time == 0.25 and a.dEdt == b.dEdt and a.surface_alias == b.surface_alias
    with pytest.raises(ValueError, match="shape"):
        energy_budget(U[..., :1], mesh, contrav, cfg)


def test_continuous_state_has_no_interior_dissipation():
    """[TRIVIAL] [[U]] = 0 on every face gives zero interior dissipation."""
    mesh = builtin_mesh("curved-periodic-2x2", 4)
    op = DGOperator.build(mesh, make_system("wave"), SchemeConfig(4))
    rep = energy_budget(initial_condition(mesh, 2, "smooth-random", seed=3), operator=op)
    assert abs(rep.dissip) < 1e-12


def test_pbt_with_zero_boundary_data():
    """Zero boundary data and U = 1: PBT = int (A+ + |A-|) = int |An|."""
    mesh = builtin_mesh("curved-quad", 4)
    op = DGOperator.build(mesh, make_system("constant"), SchemeConfig(4))
    rep = energy_budget(initial_condition(mesh, 1, "constant"), operator=op)
    absA = sum(np.sum(lgl_rule(4).weights * np.abs(op.An_face[f][0, :, 0, 0])) for f in range(4))
    assert rep.pbt == pytest.approx(absA, rel=1e-12)


def test_product_rule_residual_zero_for_constant_coefficients():
    """[TRIVIAL] constant Ã on a Cartesian mesh."""
    mesh = builtin_mesh("periodic-2x2", 4)
    contrav = contravariant_matrices(mesh, make_system("constant"))
    U = initial_condition(mesh, 1, "random", seed=0)
    assert np.max(np.abs(product_rule_residual(U, contrav))) < 1e-12
    assert epsilon_quotient(U, contrav) < 1e-24


def test_product_rule_residual_zero_for_degree_n_state_products():
    """U constant: r = (div Ã) U - div(Ã U) = 0 for any Ã."""
    mesh = builtin_mesh("curved-periodic-2x2", 4)
    contrav = contravariant_matrices(mesh, make_system("wave"))
    U = initial_condition(mesh, 2, "constant")
    assert np.max(np.abs(product_rule_residual(U, contrav))) < 1e-11


def test_epsilon_quotient_rough_exceeds_smooth():
    mesh = builtin_mesh("curved-periodic-2x2", 3)
    U = initial_condition(mesh, 1, "random", seed=0)
    rough = epsilon_quotient(U, contravariant_matrices(mesh, make_system("rough")))
    smooth = epsilon_quotient(U, contravariant_matrices(mesh, make_system("strain")))
    assert rough > 1e-3 and rough > smooth
    est = epsilon_estimate(contravariant_matrices(mesh, make_system("rough")), samples=8, seed=1)
    assert est > 0 and est == epsilon_estimate(contravariant_matrices(mesh, make_system("rough")), samples=8, seed=1)


def test_rough_growth_bound_exceeds_interface_dissipation():
    """Catalog entry "rough" at N=3: the product-rule growth 2 eps E dominates the interface dissipation."""
    mesh = builtin_mesh("curved-periodic-2x2", 3)
    op = DGOperator.build(mesh, make_system("rough"), SchemeConfig(3))
    rep = energy_budget(initial_condition(mesh, 1, "smooth-random", seed=0), operator=op)
    assert 2 * rep.epsilon_quotient * rep.energy > rep.dissip
    assert rep.volume_resid > rep.dissip


def test_volume_residual_threshold_probe():
    """Closure holds on both sides of the thresholds; the residual vanishes once the volume quadrature is exact."""
    mesh = builtin_mesh("curved-periodic-2x2", 4)
    sys = make_system("wave")
    U = initial_condition(mesh, 2, "random", seed=0)
    resid = {}
    for M in (5, 6, 7, 8):
        cfg = SchemeConfig(4, M, M)
        rep = energy_budget(U, operator=DGOperator.build(mesh, sys, cfg))
        assert rep.closure_error < 1e-9
        resid[M] = abs(rep.volume_resid)
    assert resid[5] > 1e-4
    assert max(resid[6], resid[7], resid[8]) < 1e-12


def test_interface_defect_nonpositive_everywhere():
    for name in ("wave", "rough", "strain"):
        mesh = builtin_mesh("curved-periodic-2x2", 3)
        sys = make_system(name)
        for cfg in (SchemeConfig(3), SchemeConfig(3, 8, 3, form="S1"), SchemeConfig(3, 8, 8)):
            op = DGOperator.build(mesh, sys, cfg)
            vals = interface_dissipation_defect(op, initial_condition(mesh, sys.nvars, "random", seed=4))
            assert vals.size and np.all(vals <= 1e-12)


def test_report_helpers():
    rep = EnergyReport(0.0, 2.0, 1e-7, 0.5, 0.25, 0.1, 0.2, 0.0)
    assert rep.budget_sum == pytest.approx(-0.45)
    assert rep.total_dissipation == 0.75
    assert rep.contributions()["dissip"] == -0.5 and rep.contributions()["pbt"] == -0.25
    assert is_unstable(rep) and not is_unstable(EnergyReport(0.0, 2.0, 1e-9, 0, 0, 0, 0, 0))
    d = rep.to_dict()
    assert "closure_error" in d and d["energy"] == 2.0


# -- edge study ---------------------------------------------------------------------

def test_edge_study_matches_table():
    """[PAPER] all rows to three significant digits; small aliasing for 2N-1 >= q."""
    table = json.loads((GOLDEN / "edge_table.json").read_text())
    rows = edge_aliasing_study(18, range(3, 14), modal_check=True)
    for row, ref in zip(rows, table["rows"]):
        assert row.N == ref["N"] and row.twoNminus1 == 2 * row.N - 1
        assert row.dissipation == pytest.approx(ref["dissipation"], rel=5e-4)
        assert row.sum == pytest.approx(ref["sum"], rel=5e-4)
        if row.N >= 10:
            assert abs(row.aliasing) <= 1e-12
        else:
            assert row.aliasing == pytest.approx(ref["aliasing"], rel=5e-4)
        assert row.unstable == (row.N in (3, 4, 5))


def test_edge_study_errors():
    with pytest.raises(ValueError, match="divisible by 3"):
        edge_aliasing_study(17, [3])
    with pytest.raises(ValueError, match="empty"):
        edge_aliasing_study(18, [])


@settings(max_examples=20, deadline=None)
@given(st.sampled_from([6, 9, 12, 15, 18, 21]), st.integers(2, 12))
def test_edge_study_modal_and_integral_paths_agree(q, N):
    row = edge_aliasing_study(q, [N], modal_check=True)[0]
    if 2 * N - 1 >= q:
        assert abs(row.aliasing) < 1e-12 * 2.0**q
    assert row.dissipation < 0


# -- scheme comparison --------------------------------------------------------------

def test_variants():
    v = standard_scheme_variants(3, 8)
    assert [c.kind for c in v.values()] == ["standard", "volume-OI", "volume-OI", "full-OI"]
    assert v["volume-OI-S1"].form == "S1" and v["full-OI"].L == 8


def test_comparison_zero_time():
    """[TRIVIAL] T = 0: one report per scheme, equal energies."""
    mesh = builtin_mesh("curved-periodic-2x2", 3)
    U0 = initial_condition(mesh, 1, "random", seed=0)
    res = scheme_comparison_experiment(mesh, make_system("strain"), 3, 6, 0.0, U0, 0.01)
    energies = {name: [r.energy for r in tr] for name, tr in res.traces.items()}
    assert all(len(e) == 1 for e in energies.values())
    assert len({e[0] for e in energies.values()}) == 1


def test_comparison_full_oi_nonincreasing_100_steps():
    """[DERIVED] full-OI with CFL-limited dt over 100 steps."""
    mesh = builtin_mesh("curved-periodic-2x2", 3)
    U0 = initial_condition(mesh, 1, "random", seed=0)
    res = scheme_comparison_experiment(mesh, make_system("strain"), 3, 6, 100 * 0.02, U0, 0.02,
                                       schemes=["full-OI"])
    assert len(res.traces["full-OI"]) == 101
    assert res.nonincreasing("full-OI") and not res.unstable("full-OI")
    v = res.verdicts()["full-OI"]
    assert v["verdict"] == "stable" and v["final_energy"] < v["initial_energy"]


def test_comparison_rebuilds_mesh_order():
    mesh = builtin_mesh("periodic-2x2", 3)
    U0 = initial_condition(mesh.rebuild(5), 1, "random", seed=0)
    res = scheme_comparison_experiment(mesh, make_system("strain"), 5, 10, 0.0, U0, 0.01, schemes=["standard"])
    assert list(res.traces) == ["standard"]


# -- CSV ------------------------------------------------------------------------------

def test_trace_csv_schema(tmp_path):
    reps = [EnergyReport(0.1 * i, 1.0, -0.5, 0.5, 0.0, 0.0, 0.0, 0.0) for i in range(3)]
    path = tmp_path / "trace.csv"
    text = write_trace_csv(reps, path)
    lines = path.read_text().splitlines()
    assert text == path.read_text()
    assert lines[0] == "step,time,energy,dEdt,dissip,pbt,surface_alias,volume_resid"
    assert lines[0].split(",") == list(TRACE_HEADER)
    assert lines[2].split(",")[:2] == ["1", "0.1"] and lines[2].split(",")[4] == "-0.5"


def test_edge_csv_schema():
    text = write_edge_csv(edge_aliasing_study(18, [3, 8]))
    lines = text.splitlines()
    assert lines[0] == "N,twoNminus1,dissipation,aliasing,sum,unstable"
    assert lines[0].split(",") == list(EDGE_HEADER)
    assert lines[1].startswith("3,5,") and lines[1].endswith(",true")
    assert lines[2].endswith(",false")
