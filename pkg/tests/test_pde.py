import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from robinmc.drift import DriftField
from robinmc.errors import StabilityError
from robinmc.geometry import Annulus, Ball
from robinmc.pde import (
    RobinHeatOperator,
    field_gradient,
    observed_order,
    richardson_ladder,
    solve_robin_heat_1d,
    solve_robin_heat_halfline,
    solve_robin_heat_radial,
)

COS = lambda x: np.cos(math.pi * x)


def test_uniform_grid_with_boundary_nodes():
    op = RobinHeatOperator(0.0, 2.0, 41)
    assert op.x[0] == 0.0 and op.x[-1] == 2.0
    assert np.allclose(np.diff(op.x), op.h)


@pytest.mark.parametrize("V", [None, DriftField.isotropic_quadratic(-2.0, 1)])
def test_neumann_preserves_constants(V):
    fld = solve_robin_heat_1d(V, (0.0, 0.0), lambda x: 3.0 + 0 * x, 1.0, 101, 0.3)
    assert np.allclose(fld.values, 3.0, atol=1e-12)


def test_discrete_mass_conservation_per_step():
    op = RobinHeatOperator(0.0, 1.0, 101)
    u = COS(op.x) + 1.0
    mass = [op.inner(u, np.ones_like(u))]
    for _ in range(5):
        u, _, _ = op.evolve(u, op.h**2, 1)
        mass.append(op.inner(u, np.ones_like(u)))
    assert np.max(np.abs(np.diff(mass))) < 1e-10


def test_self_convergence_order_two():
    solve = lambda n: solve_robin_heat_1d(None, (0.5, -0.3), COS, 1.0, n, 0.25)
    _, orders = richardson_ladder(solve, 51, [0.1, 0.5, 0.9], levels=4)
    assert np.all(np.abs(orders - 2.0) <= 0.2)


def test_observed_order_arithmetic():
    assert observed_order(1.0 + 4e-2, 1.0 + 1e-2, 1.0 + 2.5e-3) == pytest.approx(2.0)


def test_robin_closure_at_boundary():
    fld = solve_robin_heat_1d(None, (0.5, -0.3), COS, 1.0, 401, 0.1)
    du = field_gradient(fld, 0.0)
    assert abs(du + 0.5 * fld.values[0]) < 1e-4
    du1 = field_gradient(fld, 1.0)
    assert abs(du1 - (-0.3) * fld.values[-1]) < 1e-4


def test_field_gradient_of_linear_data_is_exact():
    op = RobinHeatOperator(0.0, 1.0, 33)
    fld = op.field(2.5 * op.x - 1.0, 0.0)
    assert np.allclose(field_gradient(fld, np.linspace(0, 1, 9)), 2.5, atol=1e-12)


def test_symmetric_in_mass_inner_product():
    op = RobinHeatOperator(0.0, 1.0, 81, DriftField.isotropic_quadratic(-2.0, 1), 0.5, -0.3)
    rng = np.random.default_rng(0)
    u, v = rng.standard_normal(81), rng.standard_normal(81)
    assert op.inner(op.apply(u), v) == pytest.approx(op.inner(u, op.apply(v)), rel=1e-12)


@given(st.floats(-2.0, 0.0), st.floats(-2.0, 0.0))
def test_submarkov_regime_keeps_nonnegative_data_nonnegative(q0, q1):
    fld = solve_robin_heat_1d(None, (q0, q1), lambda x: np.exp(-20 * (x - 0.3) ** 2), 1.0, 81, 0.2)
    assert fld.values.min() >= -1e-12


def test_blow_up_is_reported():
    with pytest.raises(StabilityError):
        solve_robin_heat_1d(None, (0.0, 0.0), COS, 1.0, 33, 1.0, killing=lambda x: 1e4 + 0 * x)


def test_annulus_neumann_preserves_constants():
    fld = solve_robin_heat_radial(Annulus(0.5, 1.5), None, (0.0, 0.0), lambda r: 2.0 + 0 * r, 101, 0.2)
    assert np.allclose(fld.values, 2.0, atol=1e-12)


def test_ball_gradient_vanishes_at_origin():
    fld = solve_robin_heat_radial(Ball(1.0, 2), None, 0.0, lambda r: np.cos(math.pi * r), 201, 0.05)
    assert abs(field_gradient(fld, 0.0)) < 1e-2 * abs(field_gradient(fld, 0.5))


def test_halfline_truncation_matches_gaussian_heat_kernel():
    # Neumann half-line with V=0: even extension of the heat kernel
    f0 = lambda x: np.exp(-x**2)
    t = 0.1
    fld = solve_robin_heat_halfline(None, 0.0, f0, 1.0, t, n_nodes=1201)
    x = np.array([0.0, 0.5, 1.0])
    exact = np.exp(-x**2 / (1 + 4 * t)) / math.sqrt(1 + 4 * t)
    assert np.allclose(fld(x), exact, atol=1e-4)


def test_grid_field_csv(tmp_path):
    fld = solve_robin_heat_1d(None, (0.0, 0.0), COS, 1.0, 17, 0.01)
    p = tmp_path / "f.csv"
    with open(p, "w") as fh:
        fld.write_csv(fh)
    rows = p.read_text().splitlines()
    assert rows[0] == "node,value" and len(rows) == 18
    assert float(rows[1].split(",")[1]) == fld.values[0]
