"""
Tests for trajectory parsing, serialization, interpolation and grid alignment
"""

import io

import numpy as np
import pytest
from numpy.testing import assert_allclose

from services.errors import EmptyTrajectory, NonMonotonicTime, OutOfDomain, ParseError
from services.screw_algebra import quat_angles, quat_conjugate, quat_exp, quat_multiply
from services.trajectory_io import (
    Trajectory,
    align_to_grid,
    interpolate,
    load_trajectory,
    parse_trajectory,
    resample,
    shift_time,
    write_tum,
)

TUM_TEXT = """# timestamp tx ty tz qx qy qz qw
1000.0 0 0 0 0 0 0 1
1000.1 1 0 0 0 0 0.7071067811865476 0.7071067811865476

1000.2 2 0 0 0 0 0 2
"""


def spinning(n=101, rate=10.0, omega=0.5):
    times = np.arange(n) / rate
    rotvec = np.stack([np.zeros(n), np.zeros(n), omega * times], axis=1)
    translations = np.stack([times, np.zeros(n), np.zeros(n)], axis=1)
    return Trajectory(times, quat_exp(rotvec), translations, frame_label="spin", epoch=50.0)


def test_parse_tum_reorders_and_normalizes_quaternions():
    traj = parse_trajectory(io.BytesIO(TUM_TEXT.encode()), format="tum")
    assert len(traj) == 3
    assert traj.epoch == 1000.0
    assert_allclose(traj.times, [0.0, 0.1, 0.2], atol=1e-12)
    assert_allclose(traj.rotations[1], [np.sqrt(0.5), 0.0, 0.0, np.sqrt(0.5)])
    assert_allclose(traj.rotations[2], [1.0, 0.0, 0.0, 0.0])
    assert_allclose(traj.translations[:, 0], [0.0, 1.0, 2.0])


def test_parse_error_reports_line_number():
    text = "# header\n0 0 0 0 0 0 0 1\n0.1 0 0 0 0 0 1\n"
    with pytest.raises(ParseError) as excinfo:
        parse_trajectory(text, format="tum")
    assert excinfo.value.line_no == 3


def test_invalid_utf8_reports_its_line():
    data = b"0 0 0 0 0 0 0 1\n0.1 0 0 0 0 0 0 1 \xff\n"
    with pytest.raises(ParseError) as excinfo:
        parse_trajectory(io.BytesIO(data), format="tum")
    assert excinfo.value.line_no == 2
    assert "0xff" in str(excinfo.value)


def test_out_of_order_rows_are_rejected():
    text = "0 0 0 0 0 0 0 1\n0.2 0 0 0 0 0 0 1\n0.1 0 0 0 0 0 0 1\n"
    with pytest.raises(NonMonotonicTime) as excinfo:
        parse_trajectory(text, format="tum")
    assert excinfo.value.line_no == 3


@pytest.mark.parametrize("text", ["", "# only a comment\n"])
def test_empty_input_raises(text):
    with pytest.raises(EmptyTrajectory):
        parse_trajectory(text, format="tum")


def test_zero_quaternion_is_a_parse_error():
    with pytest.raises(ParseError):
        parse_trajectory("0 0 0 0 0 0 0 0\n", format="tum")


def test_parse_euroc_keeps_nanosecond_offsets():
    text = (
        "#timestamp,p_x,p_y,p_z,q_w,q_x,q_y,q_z,v_x\n"
        "1403636579758555392,1,2,3,1,0,0,0,0\n"
        "1403636579763555584,1,2,3,0,0,0,1,0\n"
    )
    traj = parse_trajectory(text, format="euroc")
    assert traj.epoch == pytest.approx(1403636579.758555392)
    assert traj.times[1] == pytest.approx(0.005000192, abs=1e-12)
    assert_allclose(traj.rotations[1], [0.0, 0.0, 0.0, 1.0])
    assert_allclose(traj.translations[0], [1.0, 2.0, 3.0])


def test_unknown_format_is_rejected():
    with pytest.raises(ValueError):
        parse_trajectory(TUM_TEXT, format="kitti")


def test_written_file_loads_back(tmp_path):
    traj = spinning()
    path = tmp_path / "spin.txt"
    write_tum(traj, path, comment="spin test")
    loaded = load_trajectory(path)
    assert path.read_text().startswith("# spin test")
    assert_allclose(loaded.absolute_times, traj.absolute_times, atol=1e-12)
    assert_allclose(loaded.rotations, traj.rotations, atol=1e-15)
    assert_allclose(loaded.translations, traj.translations, atol=1e-15)


def test_interpolate_is_geodesic_and_linear():
    traj = spinning()
    rotations, translations = interpolate(traj, [0.05, 0.3])
    expected = quat_exp(np.array([[0.0, 0.0, 0.025], [0.0, 0.0, 0.15]]))
    assert_allclose(quat_angles(quat_multiply(quat_conjugate(expected), rotations)), 0.0, atol=1e-12)
    assert_allclose(translations[:, 0], [0.05, 0.3], atol=1e-12)


def test_interpolate_keeps_exact_samples():
    traj = spinning()
    rotations, translations = interpolate(traj, traj.times[[0, 7, 100]])
    assert np.array_equal(rotations, traj.rotations[[0, 7, 100]])
    assert np.array_equal(translations, traj.translations[[0, 7, 100]])


def test_interpolate_never_extrapolates():
    with pytest.raises(OutOfDomain):
        interpolate(spinning(), [10.5])


def test_resample_builds_uniform_grid():
    grid = resample(spinning(), 25.0)
    assert_allclose(np.diff(grid.times), 0.04, atol=1e-12)
    assert grid.times[0] == 0.0
    assert grid.times[-1] <= 10.0
    assert grid.epoch == 50.0


def test_gaps_report_long_intervals():
    times = np.concatenate([np.arange(10) * 0.1, 2.0 + np.arange(10) * 0.1])
    n = len(times)
    traj = Trajectory(times, np.tile([1.0, 0, 0, 0], (n, 1)), np.zeros((n, 3)))
    gaps = traj.gaps()
    assert len(gaps) == 1
    assert gaps[0][0] == 9
    assert gaps[0][1] == pytest.approx(1.1)


def test_shift_time_preserves_intervals():
    traj = spinning()
    shifted = shift_time(traj, 0.25)
    assert np.array_equal(shifted.times, traj.times)
    assert_allclose(shifted.absolute_times, traj.absolute_times + 0.25)


def test_align_to_grid_pairs_samples_by_eye_time():
    hand = spinning(n=201, rate=20.0)
    eye = shift_time(spinning(n=51, rate=5.0), -0.5)
    hand_grid, eye_grid = align_to_grid(hand, eye, 0.5)
    assert len(hand_grid) == len(eye_grid)
    assert np.array_equal(hand_grid.times, eye_grid.times)
    assert hand_grid.epoch == hand.epoch
    assert_allclose(hand_grid.rotations, eye_grid.rotations, atol=1e-12)
