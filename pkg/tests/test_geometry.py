import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from robinmc.drift import DriftField
from robinmc.errors import DomainError, InvalidRadiusError, NotOnBoundaryError, OutOfCollarError
from robinmc.geometry import (
    Annulus,
    Ball,
    CurvatureData,
    HalfLine,
    Interval,
    comparison_profile,
    curvature_radius_cap,
    laplacian_rho_check,
    make_domain,
    r_admissible,
)

DOMAINS = [HalfLine(), Interval(1.0), Interval(2.5), Ball(1.0, 2), Ball(1.0, 3), Annulus(0.5, 1.5)]


def test_distance_examples():
    assert Annulus(0.5, 1.5).dist_to_boundary([1.0, 0.0]) == pytest.approx(0.5)
    assert Interval(1.0).dist_to_boundary(0.3) == pytest.approx(0.3)
    assert Ball(1.0, 2).dist_to_boundary([0.0, 0.0]) == pytest.approx(1.0)


def test_distance_outside_raises():
    with pytest.raises(DomainError):
        Interval(1.0).dist_to_boundary(1.5)


def test_boundary_frame_examples():
    n, ii = Interval(1.0).boundary_frame(0.0)
    assert np.allclose(n, [1.0]) and ii == 0.0
    n, ii = Ball(1.0, 2).boundary_frame([1.0, 0.0])
    assert np.allclose(n, [-1.0, 0.0]) and ii == pytest.approx(1.0)
    n, ii = Annulus(0.5, 1.5).boundary_frame([0.5, 0.0])
    assert np.allclose(n, [1.0, 0.0]) and ii == pytest.approx(-2.0)


def test_boundary_frame_rejects_interior_point():
    with pytest.raises(NotOnBoundaryError):
        Interval(1.0).boundary_frame(0.5)


def test_projection_examples():
    p, depth = Ball(1.0, 2).project_with_penetration([1.2, 0.0])
    assert np.allclose(p, [1.0, 0.0]) and depth == pytest.approx(0.2)
    p, depth = Interval(1.0).project_with_penetration(0.4)
    assert np.allclose(p, [0.4]) and depth == 0.0
    p, depth = HalfLine().project_with_penetration(-0.3)
    assert np.allclose(p, [0.0]) and depth == pytest.approx(0.3)


@pytest.mark.parametrize("domain", DOMAINS, ids=lambda d: type(d).__name__)
def test_boundary_points_have_zero_distance_and_unit_normal(domain):
    Y = domain.sample_boundary(16)
    assert np.allclose(domain.rho(Y), 0.0, atol=1e-12)
    N = domain.grad_rho(Y)
    assert np.allclose(np.linalg.norm(N, axis=1), 1.0)


@pytest.mark.parametrize("domain", DOMAINS, ids=lambda d: type(d).__name__)
def test_interior_points_have_positive_distance(domain):
    X = domain.sample_interior(200, np.random.default_rng(3))
    assert np.all(domain.rho(X) > 0)


@pytest.mark.parametrize("domain", DOMAINS, ids=lambda d: type(d).__name__)
def test_curvature_constants_match_boundary_ii(domain):
    curv = domain.curvature_data()
    Y = domain.sample_boundary(16)
    ii = domain.boundary_ii(domain.nearest_component(Y))
    assert -curv.sigma <= ii.min() + 1e-12 and ii.max() <= curv.gamma + 1e-12
    assert ii.min() == pytest.approx(-curv.sigma) or curv.sigma == 0.0
    assert ii.max() == pytest.approx(curv.gamma) or curv.gamma == 0.0


@given(st.floats(-3.0, 3.0), st.floats(-3.0, 3.0))
def test_projection_lands_in_closure_and_is_idempotent(a, b):
    dom = Annulus(0.5, 1.5)
    if math.hypot(a, b) < 1e-3:
        return
    p, depth = dom.project_with_penetration([a, b])
    assert dom.contains(p)
    q, depth2 = dom.project_with_penetration(p)
    assert np.allclose(p, q) and depth2 <= 1e-12
    assert depth >= 0.0


def test_make_domain_round_trip():
    dom = make_domain({"kind": "annulus", "r_in": 0.5, "r_out": 1.5})
    assert isinstance(dom, Annulus) and dom.r_in == 0.5
    with pytest.raises(ValueError):
        make_domain({"kind": "torus"})


def test_invalid_domain_parameters():
    with pytest.raises(ValueError):
        Interval(-1.0)
    with pytest.raises(ValueError):
        Annulus(1.5, 0.5)


def test_profile_flat_limit():
    prof = comparison_profile(0.5, 0.0, 0.0, 1)
    assert prof.alpha == pytest.approx(0.5)
    assert prof.psi_max == pytest.approx(0.25, rel=1e-6)
    assert np.allclose(prof.h(np.linspace(0, 0.5, 11)), 1.0)


def test_profile_curved_bounds():
    prof = comparison_profile(0.5, 1.0, 1.0, 2)
    assert prof.alpha >= 0.25
    assert prof.psi_max <= 0.5


@given(st.floats(0.05, 2.0), st.floats(0.0, 2.0), st.floats(0.0, 2.0), st.integers(1, 3))
def test_profile_shape_invariants(r, k, gamma, d):
    cap = curvature_radius_cap(k, gamma)
    r = min(r, 0.95 * cap)
    prof = comparison_profile(r, k, gamma, d, n_nodes=2000)
    assert float(prof.h(0.0)) == pytest.approx(1.0)
    assert float(prof.dh(0.0)) == pytest.approx(-gamma)
    assert prof.psi(0.0) == 0.0 and prof.psi_prime_at_zero == 1.0
    dp = prof.dpsi_table
    assert np.all(dp >= -1e-12) and np.all(dp <= 1.0 + 1e-9)
    assert prof.psi(2 * r) == prof.psi_max
    assert prof.alpha >= r / d * (1 - 1e-9)
    assert prof.psi_max <= d * r / 2 * (1 + 1e-6)


def test_profile_rejects_radius_beyond_cap():
    with pytest.raises(InvalidRadiusError):
        comparison_profile(1.0, 1.0, 1.0, 2)


def test_admissible_radius_examples():
    assert r_admissible(CurvatureData(0.0, 0.0, 0.0), 1.0) == 1.0
    assert r_admissible(CurvatureData(0.0, 1.0, 1.0), 10.0) == pytest.approx(math.pi / 4)
    assert r_admissible(CurvatureData(0.0, 2.0, 1e-8), 10.0) == pytest.approx(0.5, rel=1e-6)


def test_h_vanishes_at_admissible_cap():
    prof_cap = curvature_radius_cap(1.0, 1.0)
    assert prof_cap == pytest.approx(math.pi / 4)
    prof = comparison_profile(0.5, 1.0, 1.0, 2)
    assert float(prof.h(math.pi / 4)) == pytest.approx(0.0, abs=1e-12)


def test_laplacian_check_interval_is_tight():
    chk = laplacian_rho_check(Interval(1.0), DriftField.zero(1), 0.2, 0.4)
    assert chk.exact == chk.lower_bound == chk.upper_bound == 0.0


def test_laplacian_check_annulus_outer_equality():
    dom = Annulus(0.5, 1.5)
    s = 0.2
    chk = laplacian_rho_check(dom, DriftField.zero(2), [1.5 - s, 0.0], 0.45)
    assert chk.exact == pytest.approx(-1.0 / (1.5 - s))
    assert chk.lower_bound == pytest.approx(chk.exact)
    assert chk.holds


def test_laplacian_check_annulus_inner_contact_limit():
    dom = Annulus(0.5, 1.5)
    chk = laplacian_rho_check(dom, DriftField.zero(2), [0.5 + 1e-9, 0.0], 0.45)
    assert chk.exact == pytest.approx(2.0, rel=1e-6)
    assert chk.upper_bound == pytest.approx(2.0)


def test_laplacian_check_outside_collar():
    with pytest.raises(OutOfCollarError):
        laplacian_rho_check(Interval(1.0), DriftField.zero(1), 0.45, 0.2)


def test_module_level_domain_functions():
    from robinmc.geometry import boundary_frame, dist_to_boundary, project_with_penetration

    ann = Annulus(0.5, 1.5)
    assert dist_to_boundary(ann, [1.2, 0.0]) == pytest.approx(0.3)
    n, ii = boundary_frame(ann, [0.0, 1.5])
    assert np.allclose(n, [0.0, -1.0]) and ii == pytest.approx(1 / 1.5)
    p, depth = project_with_penetration(ann, [1.7, 0.0])
    assert np.allclose(p, [1.5, 0.0]) and depth == pytest.approx(0.2)
