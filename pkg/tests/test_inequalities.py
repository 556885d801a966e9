import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.integrate import quad
from scipy.stats import norm

from robinmc.drift import DriftField
from robinmc.errors import InvalidRadiusError, PreconditionError
from robinmc.geometry import Annulus, Interval, r_admissible
from robinmc.inequalities import (
    WeightedMeasure1D,
    convex_hwi_rhs,
    convex_optimal_time,
    dirichlet_form_residual,
    entropy_and_energy,
    eta_envelope,
    hwi_slack,
    local_time_exp_bound,
    log_sobolev_slack,
    optimal_schedule_coefficient,
    optimize_bound_radius,
    symmetry_residual,
    theorem_rhs,
    w2_1d,
    w2_quantile,
)
from robinmc.semigroup import (
    RobinCoefficient,
    compactly_supported_bump,
    hermite_robin_function,
    neumann_cosine,
    robin_corrected,
)

IV = Interval(1.0)
V_CONVEX = DriftField.isotropic_quadratic(-4.0, 1)  # V = -2 x^2, Hess V = -4


def test_measure_weights_positive_and_normalized():
    mu = WeightedMeasure1D.from_potential(0.0, 1.0, 101, V_CONVEX)
    assert np.all(mu.weights > 0) and mu.weights.sum() == pytest.approx(1.0)


@pytest.mark.parametrize("rule", ["simpson", "trapezoid"])
def test_quadrature_exact_for_quadratics_on_refined_grid(rule):
    n = 2001
    mu = WeightedMeasure1D.from_potential(0.0, 2.0, n, None, probability=False, rule=rule)
    x = mu.nodes
    exact = 8.0 / 3.0 - 2.0 + 2.0  # int_0^2 (x^2 - x + 1)
    tol = 1e-10 if rule == "simpson" else 1e-6
    assert mu.integrate(x**2 - x + 1) == pytest.approx(exact, abs=tol)


def test_simpson_needs_odd_nodes():
    with pytest.raises(ValueError):
        WeightedMeasure1D.from_potential(0.0, 1.0, 100)


def test_entropy_energy_of_constant():
    mu = WeightedMeasure1D.from_potential(0.0, 1.0, 201, V_CONVEX)
    H, I = entropy_and_energy(mu, np.ones(201), np.zeros(201))
    assert H == pytest.approx(0.0, abs=1e-14) and I == 0.0


@given(st.floats(0.01, 100.0))
def test_entropy_energy_scale_invariance(c):
    mu = WeightedMeasure1D.from_potential(0.0, 1.0, 201)
    f = 1 + 0.3 * np.cos(3 * mu.nodes)
    a = entropy_and_energy(mu, f)
    b = entropy_and_energy(mu, c * f)
    assert a == pytest.approx(b, rel=1e-10, abs=1e-14)


def test_entropy_against_adaptive_quadrature():
    mu = WeightedMeasure1D.from_potential(0.0, 1.0, 2001)
    x = mu.nodes
    f = np.sqrt(1 + 0.5 * np.cos(math.pi * x))
    H, _ = entropy_and_energy(mu, f)
    g2 = lambda s: 1 + 0.5 * math.cos(math.pi * s)
    oracle = quad(lambda s: g2(s) * math.log(g2(s)), 0.0, 1.0, epsabs=1e-13)[0]
    assert H == pytest.approx(oracle, abs=1e-6)


def test_w2_of_identical_measures_is_zero():
    mu = WeightedMeasure1D.from_potential(0.0, 1.0, 101, V_CONVEX)
    assert w2_1d(np.ones(101), mu) == pytest.approx(0.0, abs=1e-14)


@given(st.floats(-3.0, 3.0))
def test_w2_translation(a):
    x = np.linspace(-20, 20, 8001)
    assert w2_quantile(x, norm.pdf(x - a), norm.pdf(x)) == pytest.approx(abs(a), abs=1e-4)


@given(st.floats(-2, 2), st.floats(0.5, 2), st.floats(-2, 2), st.floats(0.5, 2))
def test_w2_gaussians(m1, s1, m2, s2):
    x = np.linspace(-25, 25, 10001)
    w = w2_quantile(x, norm.pdf(x, m1, s1), norm.pdf(x, m2, s2))
    assert w == pytest.approx(math.hypot(m1 - m2, s1 - s2), abs=2e-3)


def test_w2_rejects_negative_density():
    x = np.linspace(0, 1, 11)
    with pytest.raises(ValueError):
        w2_quantile(x, -np.ones(11), np.ones(11))


def test_dirichlet_form_compact_support_pair():
    mu = WeightedMeasure1D.from_potential(0.0, 1.0, 4001, V_CONVEX)
    Q = RobinCoefficient.constant(IV, (0.5, -0.3))
    f = compactly_supported_bump(0.5, 0.3)
    g = compactly_supported_bump(0.45, 0.3, 2.0)
    assert dirichlet_form_residual(mu, Q, f, g, V_CONVEX, IV) <= 1e-8


def test_dirichlet_form_neumann_pair():
    mu = WeightedMeasure1D.from_potential(0.0, 1.0, 4001, V_CONVEX)
    Q = RobinCoefficient.zero(IV)
    r = dirichlet_form_residual(mu, Q, neumann_cosine(1.0, 1), neumann_cosine(1.0, 2, 1.0), V_CONVEX, IV)
    assert r <= 1e-10


def test_dirichlet_form_robin_pairs():
    mu = WeightedMeasure1D.from_potential(0.0, 1.0, 4001, V_CONVEX)
    Q = RobinCoefficient.constant(IV, (0.5, -0.3))
    h = hermite_robin_function(IV, V_CONVEX, Q)
    c = robin_corrected(neumann_cosine(1.0, 1, 2.0), IV, Q, 0.2)
    for f, g in [(h, h), (h, c), (c, c)]:
        assert dirichlet_form_residual(mu, Q, f, g, V_CONVEX, IV) <= 1e-6


def test_dirichlet_form_requires_robin_functions():
    mu = WeightedMeasure1D.from_potential(0.0, 1.0, 401)
    Q = RobinCoefficient.constant(IV, (0.5, -0.3))
    with pytest.raises(PreconditionError):
        dirichlet_form_residual(mu, Q, neumann_cosine(1.0, 1, 2.0), neumann_cosine(1.0, 1, 2.0),
                                DriftField.zero(1), IV)


def test_symmetry_same_function_is_exactly_zero():
    f = lambda x: np.cos(math.pi * x)
    res = symmetry_residual(IV, V_CONVEX, f, f, RobinCoefficient.constant(IV, (0.5, -0.3)), 0.2, 201)
    assert res.residual == 0.0


@pytest.mark.parametrize("q", [(0.0, 0.0), (0.5, -0.3)])
def test_symmetry_within_pde_tolerance(q):
    f = lambda x: np.cos(math.pi * x)
    g = lambda x: x**2
    res = symmetry_residual(IV, V_CONVEX, f, g, RobinCoefficient.constant(IV, q), 0.2, 401)
    assert res.residual <= 2 * res.pde_tolerance


def test_symmetry_rejects_non_gradient_drift():
    A = np.array([[0.0, 1.0], [-1.0, 0.0]])
    rot = DriftField(2, lambda X: np.zeros(len(X)), lambda X: X @ A.T,
                     lambda X: np.broadcast_to(A, (len(X), 2, 2)), 0.0, name="rotation")
    with pytest.raises(PreconditionError):
        symmetry_residual(Annulus(0.5, 1.5), rot, np.cos, np.sin, RobinCoefficient.zero(Annulus(0.5, 1.5)), 0.1)


def test_local_time_bound_examples():
    assert local_time_exp_bound(0.0, 1.0, 0.5, 1) == 1.0
    assert local_time_exp_bound(1.0, 1.0, 0.5, 1, 0.0) == pytest.approx(math.exp(4.25))
    with pytest.raises(InvalidRadiusError):
        local_time_exp_bound(1.0, 1.0, 0.6, 2, r_max=0.5)


@given(st.floats(0.0, 2.0), st.floats(0.0, 2.0), st.floats(0.01, 2.0), st.floats(0.0, 1.0),
       st.floats(0.0, 1.0), st.integers(1, 3))
def test_local_time_bound_monotone_in_time_and_lambda(lam, t, r, dl, dt, d):
    b = local_time_exp_bound(lam, t, r, d)
    assert local_time_exp_bound(lam, t + dt, r, d) >= b
    assert local_time_exp_bound(lam + dl, t, r, d) >= b


def test_radius_optimizer_halfline_closed_form():
    # min_r r/2 + t/r at r = sqrt(2t)
    b, r = optimize_bound_radius(1.0, 1.0, 1, 10.0, n_grid=4000)
    assert r == pytest.approx(math.sqrt(2.0), rel=1e-2)
    assert b == pytest.approx(math.exp(math.sqrt(2.0) + 2.0), rel=1e-5)


def test_eta_envelope_monotone():
    ann = Annulus(0.5, 1.5)
    r_max = r_admissible(ann.curvature_data(), 10.0)
    eta = eta_envelope(4.0, np.linspace(0, 1, 21), 2, r_max, 0.0, n_grid=100)
    assert eta[0] == pytest.approx(1.0, abs=0.01)
    assert np.all(np.diff(eta) >= 0)


def test_hwi_constant_function():
    mu = WeightedMeasure1D.from_potential(0.0, 1.0, 401, V_CONVEX)
    rep = hwi_slack(mu, np.ones(401), "corollary", K=-4.0, df=np.zeros(401), r=0.5)
    assert rep.lhs == pytest.approx(0.0, abs=1e-14) and rep.holds


def test_convex_reduction_matches_closed_form():
    # sigma = 0, eta = 1: optimising the theorem over t gives 2 sqrt(I) W + K W^2 / 2
    for K, I, W in [(0.5, 0.8, 0.1), (-4.0, 0.85, 0.13), (0.0, 1.0, 0.2)]:
        t_star = convex_optimal_time(I, W, K)
        times = np.linspace(0.0, 3 * t_star, 30001)
        rhs, t_opt = theorem_rhs(I, W, K, times, np.ones_like(times))
        assert rhs == pytest.approx(convex_hwi_rhs(I, W, K), rel=1e-6)
        assert t_opt == pytest.approx(t_star, rel=1e-2)


@pytest.mark.parametrize("mode", ["corollary", "theorem"])
def test_hwi_interval_both_modes(mode):
    mu = WeightedMeasure1D.from_potential(0.0, 1.0, 2001, V_CONVEX)
    x = mu.nodes
    f = 1 + 0.5 * np.cos(math.pi * x)
    kw = {"r": 0.5} if mode == "corollary" else {"eta_table": (np.linspace(0, 2, 2001), np.ones(2001))}
    rep = hwi_slack(mu, f, mode, K=-4.0, df=-0.5 * math.pi * np.sin(math.pi * x), **kw)
    assert rep.slack >= -1e-6


def test_schedule_identity():
    times = np.linspace(0, 0.7, 701)
    eta = 1 + times**2
    coeff, target = optimal_schedule_coefficient(-1.5, times, eta)
    assert coeff == pytest.approx(target, rel=1e-10)


def test_log_sobolev_constant_function_has_zero_slack():
    rep = log_sobolev_slack(IV, V_CONVEX, lambda x: np.ones_like(x), 0.5, -4.0,
                            (np.linspace(0, 0.5, 51), np.ones(51)), 201)
    assert rep.slack == pytest.approx(0.0, abs=1e-12)


def test_log_sobolev_long_time_convex_interval():
    t = 3.0
    rep = log_sobolev_slack(IV, V_CONVEX, lambda x: 1 + 0.5 * np.cos(math.pi * x), t, -4.0,
                            (np.linspace(0, t, 301), np.ones(301)), 201)
    assert rep.slack >= -1e-6


def test_log_sobolev_annulus_with_envelope():
    ann = Annulus(0.5, 1.5)
    r_max = r_admissible(ann.curvature_data(), 10.0)
    times = np.linspace(0, 0.3, 31)
    eta = eta_envelope(4.0, times, 2, r_max, 0.0, n_grid=100)
    rep = log_sobolev_slack(ann, DriftField.zero(2), lambda r: 1 + 0.5 * np.cos(math.pi * (r - 0.5)), 0.3, 0.0,
                            (times, eta), 201)
    assert rep.slack >= -1e-6


def test_interface_names():
    from robinmc import inequalities

    assert inequalities.lemma22_bound is local_time_exp_bound
    assert inequalities.log_sobolev_34_slack is log_sobolev_slack
