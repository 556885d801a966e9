import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.linalg import expm

from robinmc.drift import DriftField
from robinmc.errors import PreconditionError
from robinmc.geometry import Annulus, Ball, HalfLine, Interval
from robinmc.rng import block_normals, path_normals
from robinmc.stochastics import (
    DampedTransportObserver,
    McEstimate,
    McParams,
    TransportFlags,
    damped_transport,
    local_time_exp_moment,
    simulate_ensemble,
    simulate_reflecting_path,
    skorokhod_map_halfline,
    time_grid,
    write_path_csv,
)


def test_rng_streams_are_keyed_by_path_not_by_block():
    a = block_normals(7, np.array([3, 4]), 5, 2)
    b = block_normals(7, np.array([4]), 5, 2)
    assert np.array_equal(a[1], b[0])
    assert np.array_equal(path_normals(7, 3, 10), a[0].ravel())


def test_time_grid_rounds_up_and_divides():
    n, dt = time_grid(1.0, 0.3)
    assert n == 4 and dt == pytest.approx(0.25)


def test_far_start_never_touches_halfline():
    p = simulate_reflecting_path(HalfLine(), DriftField.zero(1), 2.0, 0.01, 1e-4, seed=5)
    assert p.local_time[-1] == 0.0
    free = 2.0 + math.sqrt(2.0) * np.concatenate([[0.0], np.cumsum(p.brownian_increments[:, 0])])
    assert np.allclose(p.states[:, 0], free, atol=1e-14)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_interval_paths_stay_inside_with_monotone_local_time(seed):
    p = simulate_reflecting_path(Interval(1.0), DriftField.isotropic_quadratic(-1.0, 1), 0.5, 1.0, 1e-3, seed)
    assert p.states.min() >= 0.0 and p.states.max() <= 1.0
    dl = np.diff(p.local_time)
    assert np.all(dl >= 0.0)
    assert np.all(dl[~p.contact_flags] == 0.0)


def test_annulus_paths_stay_in_closure():
    dom = Annulus(0.5, 1.5)
    ens = simulate_ensemble(dom, DriftField.zero(2), [0.6, 0.0], 0.5, 1e-3, 200, seed=3)
    r = np.linalg.norm(ens.x_final, axis=1)
    assert r.min() >= 0.5 - 1e-12 and r.max() <= 1.5 + 1e-12


def test_single_path_ensemble_matches_path_simulation():
    dom, drift = Interval(1.0), DriftField.zero(1)
    ens = simulate_ensemble(dom, drift, 0.2, 0.3, 1e-3, 10, seed=9)
    for i in (0, 7):
        p = simulate_reflecting_path(dom, drift, 0.2, 0.3, 1e-3, seed=9, path_index=i)
        assert p.states[-1, 0] == ens.x_final[i, 0]
        assert p.local_time[-1] == ens.local_time[i]
        assert ens.path(i).local_time[-1] == p.local_time[-1]


@pytest.mark.parametrize("workers", [2, 5])
def test_worker_count_does_not_change_results(workers):
    dom, drift = Annulus(0.5, 1.5), DriftField.zero(2)
    a = simulate_ensemble(dom, drift, [1.0, 0.0], 0.2, 1e-3, 3000, seed=4, n_workers=1)
    b = simulate_ensemble(dom, drift, [1.0, 0.0], 0.2, 1e-3, 3000, seed=4, n_workers=workers)
    assert np.array_equal(a.local_time, b.local_time)
    assert np.array_equal(a.x_final, b.x_final)


def test_skorokhod_map_agrees_with_projection_on_halfline():
    drift = DriftField.zero(1)
    a = simulate_ensemble(HalfLine(), drift, 0.1, 0.5, 1e-3, 500, seed=2, scheme="projection")
    b = simulate_ensemble(HalfLine(), drift, 0.1, 0.5, 1e-3, 500, seed=2, scheme="skorokhod")
    assert np.max(np.abs(a.local_time - b.local_time)) < 1e-12
    with pytest.raises(PreconditionError):
        simulate_ensemble(Interval(1.0), drift, 0.1, 0.5, 1e-3, 5, seed=2, scheme="skorokhod")


@given(st.floats(0.0, 1.0), st.lists(st.floats(-1.0, 1.0), min_size=1, max_size=40))
def test_skorokhod_map_properties(x0, incs):
    X, l = skorokhod_map_halfline(x0, np.array(incs))
    assert np.all(X >= -1e-12)
    assert np.all(np.diff(l) >= 0)
    # l grows only when the reflected path sits on the boundary
    grow = np.diff(l) > 0
    assert np.all(np.abs(X[1:][grow]) < 1e-12)


def _bridge_sup_local_time(x0, incs, rng):
    """Exact local time of the continuous reflected path given the step endpoints.

    Within each step ``-U`` is a Brownian bridge with variance ``2 dt``; its
    maximum is drawn from the closed-form conditional law.
    """
    n_paths, n = incs.shape
    U = x0 + np.concatenate([np.zeros((n_paths, 1)), np.cumsum(incs, axis=1)], axis=1)
    a, b = -U[:, :-1], -U[:, 1:]
    var = 2 * STEP
    m = 0.5 * (a + b + np.sqrt((b - a) ** 2 - 2 * var * np.log(rng.random(a.shape))))
    return np.maximum(m.max(axis=1), 0.0)


STEP = 2.0**-12


def test_local_time_bias_decays_like_sqrt_dt():
    # coupled: one fine Brownian path per sample, exact bridge sup as reference
    rng = np.random.default_rng(0)
    n_paths, n_fine = 2000, 2**12
    incs = math.sqrt(2 * STEP) * rng.standard_normal((n_paths, n_fine))
    exact = _bridge_sup_local_time(0.0, incs, rng)
    steps, biases = [], []
    for agg in (4, 16, 64, 256):
        coarse = incs.reshape(n_paths, -1, agg).sum(axis=2)
        discrete = np.array([skorokhod_map_halfline(0.0, row)[1][-1] for row in coarse])
        biases.append(np.mean(exact - discrete))
        steps.append(agg * STEP)
    slope = np.polyfit(np.log(steps), np.log(biases), 1)[0]
    assert slope == pytest.approx(0.5, abs=0.1)
    # leading constant: E[sup - discrete sup] ~ 0.5826 * sqrt(2 dt)
    assert biases[-1] / math.sqrt(2 * steps[-1]) == pytest.approx(0.5826, rel=0.15)


def test_local_time_mean_halfline_oracle():
    ens = simulate_ensemble(HalfLine(), DriftField.zero(1), 0.0, 1.0, 2.5e-4, 4000, seed=1)
    est = ens.estimate(ens.local_time)
    # Euler bias is about -0.5826 * sqrt(2 dt) = -0.013
    assert est.within(2 / math.sqrt(math.pi), 3.0, 0.05)


def test_transport_identity_without_drift_or_contact():
    p = simulate_reflecting_path(Ball(1.0, 2), DriftField.zero(2), [0.0, 0.0], 0.01, 1e-3, seed=0)
    assert p.local_time[-1] == 0.0
    mf = damped_transport(p, DriftField.zero(2), Ball(1.0, 2))
    assert np.allclose(mf.matrices, np.eye(2))


def test_transport_constant_hessian_is_matrix_exponential():
    H = np.array([[-1.0, 0.3], [0.3, -2.0]])
    drift = DriftField.quadratic_form(H)
    p = simulate_reflecting_path(Ball(1.0, 2), drift, [0.0, 0.0], 0.01, 1e-3, seed=0)
    assert p.local_time[-1] == 0.0
    mf = damped_transport(p, drift, Ball(1.0, 2))
    assert np.allclose(mf.matrices[-1], expm(p.times[-1] * H), atol=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_halfline_transport_is_exit_indicator(seed):
    p = simulate_reflecting_path(HalfLine(), DriftField.zero(1), 0.05, 0.2, 1e-3, seed)
    mf = damped_transport(p, DriftField.zero(1), HalfLine())
    oracle = (p.times < p.first_contact_time).astype(float)
    assert np.array_equal(mf.matrices[:, 0, 0], oracle)


def test_transport_norm_bound_on_annulus():
    dom, drift = Annulus(0.5, 1.5), DriftField.zero(2)
    sigma = dom.curvature_data().sigma
    for i in range(6):
        p = simulate_reflecting_path(dom, drift, [0.55, 0.0], 0.2, 1e-3, seed=3, path_index=i)
        norms = damped_transport(p, drift, dom).operator_norms()
        assert np.all(norms <= np.exp(sigma * p.local_time) * (1 + 1e-10))


def test_transport_observer_tracks_norm_excess():
    dom, drift = Annulus(0.5, 1.5), DriftField.zero(2)
    obs = lambda: DampedTransportObserver(drift, TransportFlags(), track_norm_bound=(0.0, 2.0), domain=dom)
    ens = simulate_ensemble(dom, drift, [0.6, 0.0], 0.1, 1e-3, 200, seed=1, observers=[obs])
    assert np.max(ens.extras["log_norm_excess"]) <= 1e-10


def test_exp_moment_lambda_zero_is_exactly_one():
    tab = local_time_exp_moment(HalfLine(), DriftField.zero(1), 0.0, 0.5, [0.0, 0.3], McParams(500, 1e-3, 1))
    assert np.all(tab.means == 1.0) and np.all(tab.stderrs == 0.0)


def test_exp_moment_nondecreasing_in_time():
    tab = local_time_exp_moment(HalfLine(), DriftField.zero(1), [0.5, 1.0], [0.1, 0.2, 0.4], [0.0, 0.2],
                                McParams(1000, 1e-3, 2))
    assert np.all(np.diff(tab.means, axis=2) >= 0)
    est, x_star = tab.sup_estimate(1, -1)
    assert x_star == 0.0 and est.mean == tab.sup[1, -1]


def test_exp_moment_argument_errors():
    with pytest.raises(ValueError):
        local_time_exp_moment(HalfLine(), DriftField.zero(1), -1.0, 0.5, [0.0], McParams(10))
    with pytest.raises(ValueError):
        local_time_exp_moment(HalfLine(), DriftField.zero(1), 1.0, 0.5, [], McParams(10))


def test_estimate_from_samples():
    est = McEstimate.from_samples(np.array([1.0, 2.0, 3.0, 4.0]), 0.1, 3)
    assert est.mean == 2.5 and est.stderr == pytest.approx(np.std([1, 2, 3, 4], ddof=1) / 2)


def test_path_csv_layout(tmp_path):
    p = simulate_reflecting_path(Interval(1.0), DriftField.zero(1), 0.0, 0.01, 1e-3, seed=0)
    f = tmp_path / "p.csv"
    with open(f, "w") as fh:
        write_path_csv([p], fh)
    lines = f.read_text().splitlines()
    assert lines[0] == "path_id,k,t_k,x_1,l,contact"
    assert len(lines) == len(p.times) + 1


def test_start_outside_domain_rejected():
    with pytest.raises(ValueError):
        simulate_ensemble(Interval(1.0), DriftField.zero(1), 1.5, 0.1, 1e-3, 5, seed=0)
