"""
Tests for the cumulative B-spline pose model, fitting and the colored Jacobian
"""

import numpy as np
import pytest
from numpy.testing import assert_allclose

from services.bspline import (
    SplinePose,
    colored_jacobian,
    fit_spline,
    perturb_rotations,
    spline_eval,
)
from services.errors import OutOfDomain, SpanTooShort
from services.screw_algebra import quat_angles, quat_conjugate, quat_exp, quat_log, quat_multiply
from services.trajectory_io import Trajectory


def random_spline(order=4, count=12, seed=0):
    rng = np.random.default_rng(seed)
    rot = quat_exp(np.cumsum(rng.normal(0.0, 0.2, size=(count, 3)), axis=0))
    trans = np.cumsum(rng.normal(0.0, 0.1, size=(count, 3)), axis=0)
    return SplinePose(order=order, t0=1.0, spacing=0.1, rot_vertices=rot, trans_vertices=trans)


def smooth_trajectory(duration=5.0, rate=100.0):
    times = np.arange(int(duration * rate) + 1) / rate
    rotvec = np.stack([0.3 * np.sin(times), 0.2 * np.cos(times), 0.5 * times], axis=1)
    translations = np.stack([np.sin(times), np.cos(2 * times), 0.1 * times], axis=1)
    return Trajectory(times, quat_exp(rotvec), translations, epoch=10.0)


def test_domain_follows_vertex_count():
    spline = random_spline(order=4, count=12)
    assert spline.domain == pytest.approx((1.0, 1.9))
    assert len(spline.knots) == 16


def test_basis_is_a_partition_of_unity():
    spline = random_spline()
    basis = spline.basis(np.linspace(1.0, 1.9, 37))
    assert_allclose(basis.sum(axis=1), 1.0, atol=1e-12)
    assert np.all(basis >= 0.0)


def test_order_two_is_geodesic_interpolation():
    """Linear B-splines pass through the vertices and slerp between them"""
    spline = random_spline(order=2, count=6)
    rotations, translations = spline.evaluate(1.0 + 0.1 * np.arange(6))
    assert_allclose(quat_angles(quat_multiply(quat_conjugate(spline.rot_vertices), rotations)), 0.0, atol=1e-12)
    assert_allclose(translations, spline.trans_vertices, atol=1e-12)

    q, t = spline_eval(spline, 1.23)
    a, b = spline.rot_vertices[2], spline.rot_vertices[3]
    expected = quat_multiply(a, quat_exp(0.3 * quat_log(quat_multiply(quat_conjugate(a), b))))
    assert quat_angles(quat_multiply(quat_conjugate(expected), q.as_array())) == pytest.approx(0.0, abs=1e-12)
    assert_allclose(t, 0.7 * spline.trans_vertices[2] + 0.3 * spline.trans_vertices[3], atol=1e-12)


def test_constant_vertices_give_a_constant_pose():
    rotation = quat_exp(np.array([0.1, -0.4, 0.2]))
    spline = SplinePose(order=4, t0=0.0, spacing=0.5, rot_vertices=np.tile(rotation, (8, 1)),
                        trans_vertices=np.tile([1.0, 2.0, 3.0], (8, 1)))
    rotations, translations = spline.evaluate(np.linspace(0.0, 2.5, 11))
    assert_allclose(quat_angles(quat_multiply(quat_conjugate(rotation), rotations)), 0.0, atol=1e-12)
    assert_allclose(translations, np.tile([1.0, 2.0, 3.0], (11, 1)), atol=1e-12)


def test_evaluation_outside_domain_is_refused():
    spline = random_spline()
    with pytest.raises(OutOfDomain) as excinfo:
        spline.evaluate([1.5, 2.5])
    assert excinfo.value.context["t"] == 2.5


def test_too_few_vertices_for_the_order():
    with pytest.raises(ValueError):
        SplinePose(order=4, t0=0.0, spacing=0.1, rot_vertices=np.tile([1.0, 0, 0, 0], (3, 1)),
                   trans_vertices=np.zeros((3, 3)))


def test_fit_tracks_a_smooth_trajectory():
    traj = smooth_trajectory()
    spline = fit_spline(traj, order=4, knot_spacing=0.1)
    lo, hi = spline.domain
    assert lo == traj.times[0]
    assert hi >= traj.times[-1] - 1e-9
    assert spline.epoch == traj.epoch
    assert spline.fit_max_trans < 1e-3
    assert spline.fit_max_rot < 1e-3


def test_fit_needs_enough_knot_intervals():
    with pytest.raises(SpanTooShort):
        fit_spline(smooth_trajectory(duration=0.5), order=4, knot_spacing=0.1)


def test_colored_jacobian_matches_dense_differences():
    spline = random_spline(order=4, count=10, seed=3)
    times = np.linspace(1.0, 1.7, 15)
    observed = quat_exp(np.random.default_rng(4).normal(0.0, 0.5, size=(15, 3)))

    def residual(delta):
        moved = spline.with_vertices(rot_vertices=perturb_rotations(spline.rot_vertices, delta))
        rotations, _ = moved.evaluate(times)
        return quat_log(quat_multiply(quat_conjugate(observed), rotations)).reshape(-1)

    s = spline.segments(times)
    windows = np.stack([s, s + spline.order - 1], axis=1)
    sparse_jac = colored_jacobian(residual, spline.num_vertices, 3, windows).toarray()

    step = 1e-6
    dense = np.zeros_like(sparse_jac)
    for column in range(spline.num_vertices * 3):
        delta = np.zeros(spline.num_vertices * 3)
        delta[column] = step
        dense[:, column] = (residual(delta.reshape(-1, 3)) - residual(-delta.reshape(-1, 3))) / (2 * step)
    assert_allclose(sparse_jac, dense, atol=1e-8)
