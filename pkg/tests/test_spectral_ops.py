import numpy as np
import numpy.polynomial.legendre as npleg
import pytest
from hypothesis import given, settings, strategies as st

from dgsem.spectral_ops import (
    ModalExpansion,
    alias_coefficients,
    apply_along,
    differentiation_matrix,
    discrete_inner_product,
    discrete_legendre_norms,
    exact_rule,
    interpolate,
    interpolation_error_integral,
    interpolation_matrix,
    interpolation_operator,
    legendre_eval,
    lgl_rule,
)

orders = st.integers(min_value=1, max_value=24)


def reference_lgl(N):
    """Independent oracle: numpy roots of L_N' plus endpoints, closed-form weights."""
    c = np.zeros(N + 1)
    c[N] = 1
    interior = np.sort(npleg.legroots(npleg.legder(c))) if N > 1 else np.array([])
    x = np.concatenate([[-1.0], interior, [1.0]])
    w = 2.0 / (N * (N + 1) * npleg.legval(x, c) ** 2)
    return x, w


# -- rules ---------------------------------------------------------------------

def test_lgl_order_one_trivial():
    """[TRIVIAL] N=1 is the trapezoid rule."""
    r = lgl_rule(1)
    np.testing.assert_array_equal(r.nodes, [-1.0, 1.0])
    np.testing.assert_allclose(r.weights, [1.0, 1.0], atol=1e-15)


def test_lgl_order_two_simpson():
    """[DERIVED] exactness on 1, x^2 forces Simpson weights 1/3, 4/3, 1/3."""
    r = lgl_rule(2)
    np.testing.assert_allclose(r.nodes, [-1.0, 0.0, 1.0], atol=1e-15)
    np.testing.assert_allclose(r.weights, [1 / 3, 4 / 3, 1 / 3], atol=1e-15)


def test_lgl_order_three_quartic():
    """[TRIVIAL] degree 4 <= 2N-1 is integrated exactly."""
    r = lgl_rule(3)
    assert abs(r.integrate(r.nodes**4) - 0.4) < 1e-14


def test_lgl_rejects_order_zero():
    with pytest.raises(ValueError):
        lgl_rule(0)


@settings(max_examples=30, deadline=None)
@given(orders)
def test_lgl_matches_numpy_oracle(N):
    """[DERIVED] nodes/weights agree with numpy's Legendre root finder."""
    x, w = reference_lgl(N)
    r = lgl_rule(N)
    np.testing.assert_allclose(r.nodes, x, atol=1e-13)
    np.testing.assert_allclose(r.weights, w, rtol=1e-12)
    assert r.nodes[0] == -1.0 and r.nodes[-1] == 1.0
    assert np.all(np.diff(r.nodes) > 0) and np.all(r.weights > 0)
    assert abs(r.weights.sum() - 2.0) < 1e-14


@settings(max_examples=30, deadline=None)
@given(orders)
def test_lgl_monomial_exactness(N):
    """[DERIVED] every monomial up to degree 2N-1 integrates to its analytic value."""
    r = lgl_rule(N)
    for k in range(2 * N):
        exact = 0.0 if k % 2 else 2.0 / (k + 1)
        assert abs(r.integrate(r.nodes**k) - exact) <= 1e-13 * max(1.0, abs(exact))


def test_lgl_not_exact_beyond_2n_minus_1():
    """[DERIVED] degree 2N is the first failure (the reason for the inflated top-mode norm)."""
    N = 4
    r = lgl_rule(N)
    assert abs(r.integrate(r.nodes ** (2 * N)) - 2.0 / (2 * N + 1)) > 1e-3


@pytest.mark.parametrize("degree", [1, 5, 18, 36])
def test_exact_rule_covers_degree(degree):
    r = exact_rule(degree)
    assert 2 * r.order - 1 >= degree
    assert abs(r.integrate(r.nodes**degree) - (0.0 if degree % 2 else 2.0 / (degree + 1))) < 1e-12


# -- Legendre ------------------------------------------------------------------

@pytest.mark.parametrize("k,xi,value", [(0, 0.3, 1.0), (1, 0.5, 0.5), (2, 0.5, -0.125)])
def test_legendre_eval_examples(k, xi, value):
    """[TRIVIAL] closed forms of L_0, L_1, L_2."""
    assert legendre_eval(k, xi) == pytest.approx(value, abs=1e-15)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 30), st.floats(-1, 1))
def test_legendre_eval_matches_numpy(k, xi):
    """[DERIVED] agreement with numpy.polynomial.legendre.legval."""
    c = np.zeros(k + 1)
    c[k] = 1
    assert abs(legendre_eval(k, xi) - npleg.legval(xi, c)) < 1e-12
    assert legendre_eval(k, 1.0) == pytest.approx(1.0, abs=1e-14)


def test_legendre_rejects_negative_degree():
    with pytest.raises(ValueError):
        legendre_eval(-1, 0.0)


# -- interpolation ---------------------------------------------------------------

def test_interpolate_constant():
    """[TRIVIAL]"""
    np.testing.assert_allclose(interpolate(np.full(5, 5.0), 9), np.full(10, 5.0), atol=1e-14)


def test_interpolate_cubic_reproduced():
    """[TRIVIAL] degree <= N is reproduced."""
    x3, x7 = lgl_rule(3).nodes, lgl_rule(7).nodes
    np.testing.assert_allclose(interpolate(x3**3, 7), x7**3, atol=1e-13)


def test_interpolation_error_table_value_n8():
    """[PAPER] N=8, (1+xi)^18: integral interpolation error -8.237e-3 to three digits."""
    r = lgl_rule(18)
    val = interpolation_error_integral((1 + r.nodes) ** 18, 8, r)
    assert val == pytest.approx(-8.237e-3, rel=5e-4)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 15), st.integers(0, 10))
def test_interpolation_operator_rows_and_reproduction(N, extra):
    """[DERIVED] rows sum to 1; polynomials of degree <= N are reproduced on finer grids."""
    M = N + extra
    op = interpolation_operator(N, M)
    assert op.matrix.shape == (M + 1, N + 1)
    np.testing.assert_allclose(op.matrix.sum(axis=1), 1.0, atol=1e-14)
    rng = np.random.default_rng(N * 100 + M)
    coeffs = rng.standard_normal(N + 1)
    got = op(npleg.legval(lgl_rule(N).nodes, coeffs))
    np.testing.assert_allclose(got, npleg.legval(lgl_rule(M).nodes, coeffs), atol=1e-12)


def test_interpolation_matrix_at_arbitrary_points():
    """[DERIVED] evaluation at off-grid points matches the polynomial."""
    N = 6
    x = lgl_rule(N).nodes
    pts = np.array([-0.93, -0.1, 0.0, 0.37, 1.0])
    f = lambda s: 2 * s**6 - s**3 + 0.5
    np.testing.assert_allclose(interpolation_matrix(x, pts) @ f(x), f(pts), atol=1e-13)


def test_apply_along_axis():
    N = 4
    D = differentiation_matrix(N)
    x = lgl_rule(N).nodes
    field = x[:, None] ** 2 * x[None, :]
    np.testing.assert_allclose(apply_along(D, field, 1), x[:, None] ** 2 * np.ones((1, N + 1)), atol=1e-13)
    np.testing.assert_allclose(apply_along(D, field, 0), 2 * x[:, None] * x[None, :], atol=1e-13)


# -- differentiation ---------------------------------------------------------------

def test_derivative_examples():
    """[TRIVIAL] constants, xi, and xi^2 on N=2."""
    for N in (1, 2, 5, 12):
        D = differentiation_matrix(N)
        x = lgl_rule(N).nodes
        np.testing.assert_allclose(D.sum(axis=1), 0.0, atol=1e-13)
        np.testing.assert_allclose(D @ x, 1.0, atol=1e-13)
    x2 = lgl_rule(2).nodes
    np.testing.assert_allclose(differentiation_matrix(2) @ x2**2, 2 * x2, atol=1e-13)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 20))
def test_derivative_matches_numpy(N):
    """[DERIVED] exact for a random degree-N polynomial (numpy legder oracle)."""
    rng = np.random.default_rng(N)
    c = rng.standard_normal(N + 1)
    x = lgl_rule(N).nodes
    np.testing.assert_allclose(differentiation_matrix(N) @ npleg.legval(x, c),
                               npleg.legval(x, npleg.legder(c)), atol=1e-11 * N**2)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 20), st.integers(0, 2**31))
def test_sbp_seed(N, seed):
    """[DERIVED] <DU,V>_N + <U,DV>_N = UV|_{-1}^{1} for all U, V in P^N."""
    rng = np.random.default_rng(seed)
    U, V = rng.standard_normal((2, N + 1))
    r, D = lgl_rule(N), differentiation_matrix(N)
    lhs = discrete_inner_product(D @ U, V, r) + discrete_inner_product(U, D @ V, r)
    rhs = U[-1] * V[-1] - U[0] * V[0]
    assert abs(lhs - rhs) <= 1e-12 * max(1.0, np.abs(U).max() * np.abs(V).max() * N**2)


# -- inner products ----------------------------------------------------------------

def test_inner_product_examples():
    """[TRIVIAL] weights sum and low-mode orthogonality."""
    for N in (1, 3, 9):
        r = lgl_rule(N)
        assert discrete_inner_product(np.ones(N + 1), np.ones(N + 1), r) == pytest.approx(2.0, abs=1e-14)
    r5 = lgl_rule(5)
    assert abs(discrete_inner_product(legendre_eval(2, r5.nodes), legendre_eval(0, r5.nodes), r5)) < 1e-14


@pytest.mark.parametrize("N", [2, 4, 8, 16])
def test_top_mode_norm_inflated(N):
    """[DERIVED] ||L_N||_N^2 differs from the exact 2/(2N+1); brute-force exact value with an order-2N rule."""
    r, big = lgl_rule(N), lgl_rule(2 * N)
    discrete = discrete_inner_product(legendre_eval(N, r.nodes), legendre_eval(N, r.nodes), r)
    exact = discrete_inner_product(legendre_eval(N, big.nodes), legendre_eval(N, big.nodes), big)
    assert exact == pytest.approx(2 / (2 * N + 1), rel=1e-13)
    assert discrete > exact
    # recorded inflation: ||L_N||_N^2 = 2/N, factor (2N+1)/N
    assert discrete / exact == pytest.approx((2 * N + 1) / N, rel=1e-12)
    assert discrete_legendre_norms(N)[N] == pytest.approx(discrete, rel=1e-12)


def test_inner_product_rejects_mismatch():
    r = lgl_rule(3)
    with pytest.raises(ValueError):
        discrete_inner_product(np.ones(4), np.ones(5), r)
    with pytest.raises(ValueError):
        discrete_inner_product(np.ones(5), np.ones(5), r)


def test_inner_product_vector_states():
    r = lgl_rule(3)
    f = np.stack([np.ones(4), r.nodes], axis=1)
    assert discrete_inner_product(f, f, r) == pytest.approx(2.0 + 2.0 / 3.0, abs=1e-14)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 12), st.integers(0, 2**31))
def test_inner_product_exact_for_low_degree(N, seed):
    """[DERIVED] deg f + deg g <= 2N-1 integrates exactly (numpy legint oracle)."""
    rng = np.random.default_rng(seed)
    df = int(rng.integers(0, 2 * N))
    dg = 2 * N - 1 - df
    cf, cg = rng.standard_normal(df + 1), rng.standard_normal(dg + 1)
    prod = npleg.legmul(cf, cg)
    anti = npleg.legint(prod)
    exact = npleg.legval(1.0, anti) - npleg.legval(-1.0, anti)
    r = lgl_rule(N)
    got = discrete_inner_product(npleg.legval(r.nodes, cf), npleg.legval(r.nodes, cg), r)
    assert abs(got - exact) <= 1e-12 * max(1.0, np.abs(prod).sum())


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 12), st.floats(0.5, 5.0))
def test_interpolation_projection(N, k):
    """[DERIVED] <f, V>_N = <I^N f, V>_N for smooth f and every Legendre basis V."""
    r = lgl_rule(N)
    fine = lgl_rule(N + 7)
    f_nodes = np.sin(k * r.nodes) + np.exp(r.nodes)
    interp_back = interpolation_matrix(fine.nodes, r.nodes) @ interpolate(f_nodes, N + 7)
    for j in range(N + 1):
        V = legendre_eval(j, r.nodes)
        assert abs(discrete_inner_product(f_nodes, V, r) - discrete_inner_product(interp_back, V, r)) < 1e-12


# -- modal analysis -------------------------------------------------------------------

@settings(max_examples=30, deadline=None)
@given(st.integers(1, 16), st.integers(0, 2**31))
def test_modal_round_trip(N, seed):
    """[DERIVED] nodal -> modal -> nodal, and modal coefficients match numpy's legfit."""
    rng = np.random.default_rng(seed)
    r = lgl_rule(N)
    vals = rng.standard_normal(N + 1)
    m = ModalExpansion.from_nodal(vals, r)
    np.testing.assert_allclose(m.to_nodal(r), vals, atol=1e-12)
    np.testing.assert_allclose(m.coefficients, npleg.legfit(r.nodes, vals, N), atol=1e-10)


def test_modal_rejects_wrong_length():
    with pytest.raises(ValueError):
        ModalExpansion.from_nodal(np.ones(3), lgl_rule(4))


@pytest.mark.parametrize("N", [2, 3, 5, 8])
def test_alias_of_next_mode(N):
    """[TRIVIAL] V = L_{N+1}: a_0 = 0 by exact orthogonality; the alias lands on L_{N-1}."""
    coeffs = np.zeros(N + 2)
    coeffs[N + 1] = 1.0
    a = alias_coefficients(ModalExpansion(coeffs), N)
    assert abs(a[0]) < 1e-14
    r = lgl_rule(N)
    expected = [discrete_inner_product(legendre_eval(N + 1, r.nodes), legendre_eval(k, r.nodes), r)
                / discrete_legendre_norms(N)[k] for k in range(N + 1)]
    np.testing.assert_allclose(a, expected, atol=1e-14)
    # L_{N+1} at LGL nodes equals a multiple of L_{N-1}: that mode carries the alias
    assert abs(a[N - 1]) > 0.1


def test_alias_of_low_degree_is_zero():
    """[TRIVIAL] degree <= N has no aliases; V in P^{2N-1} has no integral error."""
    N = 5
    assert np.all(alias_coefficients(ModalExpansion(np.ones(N + 1)), N) == 0)
    rng = np.random.default_rng(1)
    V = ModalExpansion(rng.standard_normal(2 * N))
    a = alias_coefficients(V, N)
    assert abs(-2 * a[0]) < 1e-13
    r = lgl_rule(2 * N + 2)
    assert abs(interpolation_error_integral(V(r.nodes), N, r)) < 1e-13


def test_alias_table_value_n3():
    """[PAPER] (1+xi)^18 at N=3: -2 a_0 = -1.674e4 to three digits."""
    q, N = 18, 3
    r = lgl_rule(max(q, 2 * N + 2))
    V = ModalExpansion.from_nodal((1 + r.nodes) ** q, r)
    a = alias_coefficients(V, N)
    assert -2 * a[0] == pytest.approx(-1.674e4, rel=5e-4)
    # a grid that only integrates degree q exactly cannot hold V's nodal values
    assert exact_rule(q).order < q
    assert interpolation_error_integral((1 + r.nodes) ** q, N, r) == pytest.approx(-2 * a[0], rel=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 10), st.integers(0, 2**31))
def test_alias_identity(N, seed):
    """[DERIVED] modal(I^N V)_k - V_k = a_k for random V in P^{3N}; integral path = modal path."""
    rng = np.random.default_rng(seed)
    V = ModalExpansion(rng.standard_normal(3 * N + 1))
    a = alias_coefficients(V, N)
    r = lgl_rule(N)
    interp_modes = ModalExpansion.from_nodal(V(r.nodes), r).coefficients
    np.testing.assert_allclose(interp_modes - V.coefficients[: N + 1], a, atol=1e-12 * max(1, N))
    ex = lgl_rule(max(3 * N, 2 * N + 2))
    assert abs(interpolation_error_integral(V(ex.nodes), N, ex) + 2 * a[0]) < 1e-12 * max(1, N)
