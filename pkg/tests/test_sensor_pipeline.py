import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from odxkit import ContractError
from odxkit.sensor_pipeline import (RADAR_HALF_FOV, RADAR_TOP_N, RadarPoint, lidar_grid_spec, lidar_to_bev,
                                    radar_affinity, radar_features, radar_graph_weights, radar_select,
                                    read_lidar, read_radar_csv, write_lidar_bin, write_radar_csv)


def test_lidar_grid_window():
    spec = lidar_grid_spec()
    assert (spec.x_min, spec.x_max, spec.y_min, spec.y_max) == (-6.0, 26.0, -16.0, 16.0)
    assert spec.meters_per_pixel == 0.125


def test_lidar_single_point_cell():
    grid = lidar_to_bev([[0.0, 0.0, 1.0]])
    # x = 0 is 6 m from the rear edge, y = 0 is 16 m below the top edge
    assert grid.data[0, 128, 48] == 1
    assert grid.data.sum() == 1


def test_lidar_edges_and_channels():
    pts = [[26.0, 0, 0], [-6.0, 0, 0], [0, 16.0, 0], [0, -16.0, 0], [1.0, 1.0, 2.0], [1.0, 1.0, 1.999]]
    grid = lidar_to_bev(pts)
    # max edges are exclusive, min edges inclusive (y = 16 is row 0)
    assert grid.data.sum() == 4
    assert grid.data[1].sum() == 1 and grid.data[0].sum() == 3


def test_lidar_empty_and_nonfinite():
    assert lidar_to_bev(np.empty((0, 3))).data.sum() == 0
    with pytest.raises(ContractError):
        lidar_to_bev([[math.nan, 0, 0]])


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 400), st.integers(0, 2**31 - 1))
def test_lidar_count_conservation(n, seed):
    rng = np.random.default_rng(seed)
    pts = np.column_stack([rng.uniform(-10, 30, n), rng.uniform(-20, 20, n), rng.uniform(-1, 4, n)])
    inside = ((pts[:, 0] >= -6) & (pts[:, 0] < 26) & (pts[:, 1] > -16) & (pts[:, 1] <= 16)).sum()
    assert lidar_to_bev(pts).data.sum() == inside


def test_lidar_bin_and_text_round_trip(tmp_path):
    pts = np.array([[1.5, -2.25, 0.5], [10.0, 3.0, 2.5]])
    write_lidar_bin(tmp_path / "a.bin", pts)
    assert np.array_equal(read_lidar(tmp_path / "a.bin"), pts)
    (tmp_path / "a.txt").write_text("x,y,z\n1.5,-2.25,0.5\n# note\n10 3 2.5\n")
    assert np.array_equal(read_lidar(tmp_path / "a.txt"), pts)


def test_lidar_bin_size_mismatch(tmp_path):
    write_lidar_bin(tmp_path / "a.bin", [[0, 0, 0]])
    (tmp_path / "b.bin").write_bytes((tmp_path / "a.bin").read_bytes()[:-4])
    with pytest.raises(ValueError):
        read_lidar(tmp_path / "b.bin")


def test_radar_point_validation():
    with pytest.raises(ValueError):
        RadarPoint(1.0, 101.0, 0.0, 0.0)
    with pytest.raises(ValueError):
        RadarPoint(1.0, 10.0, RADAR_HALF_FOV + 0.01, 0.0)
    with pytest.raises(ValueError):
        RadarPoint(1.0, 10.0, 0.0, 0.0, 2)


def test_radar_select_orders_by_time_to_reach():
    pts = [RadarPoint(1.0, 50.0, 0, 0), RadarPoint(10.0, 50.0, 0, 0), RadarPoint(-1.0, 5.0, 0, 0),
           RadarPoint(5.0, 25.0, 0, 0), RadarPoint(0.0, 3.0, 0, 0)]
    m = radar_select(pts, 4)
    # ttr: 50, 5, inf, 5, inf -> tie at 5 broken by depth 25 < 50; inf tie by depth 3 < 5
    assert m.rows[:, 1].tolist() == [25.0, 50.0, 50.0, 3.0]
    assert m.valid_count == 4


def test_radar_fewer_than_n_is_zero_padded():
    m = radar_select([RadarPoint(2.0, 10.0, 0.1, 0.2, 1)], RADAR_TOP_N)
    assert m.rows.shape == (81, 5) and m.valid_count == 1
    assert m.rows[0].tolist() == [2.0, 10.0, 0.1, 0.2, 1.0]
    assert not m.rows[1:].any()


def test_radar_weights_rows_and_padding():
    pts = [RadarPoint(1.0, 10.0 + i, 0.05 * i, 0.0) for i in range(5)]
    m = radar_select(pts)
    w = radar_graph_weights(m)
    assert np.allclose(w[:5].sum(axis=1), 1.0, atol=1e-12)
    assert np.array_equal(w[5:, 5:], np.eye(76))
    assert not w[:5, 5:].any() and not w[5:, :5].any()
    a = radar_affinity(m)
    assert np.allclose(a, a.T) and np.allclose(np.diag(a)[:5], 1.0)


def test_radar_empty_set():
    m = radar_select([])
    assert m.valid_count == 0
    assert np.array_equal(radar_graph_weights(m), np.eye(81))
    assert not radar_features(m, radar_graph_weights(m)).any()


def test_radar_features_shape_contract():
    m = radar_select([RadarPoint(1.0, 1.0, 0.0, 0.0)])
    with pytest.raises(ContractError):
        radar_features(m, np.eye(80))


def test_radar_csv_round_trip(tmp_path):
    pts = [RadarPoint(1.25, 10.5, -0.1, 0.3, 0), RadarPoint(-3.0, 99.0, 0.2, -0.1, 1)]
    write_radar_csv(tmp_path / "r.csv", pts)
    assert read_radar_csv(tmp_path / "r.csv") == pts
    (tmp_path / "bad.csv").write_text("a,b\n1,2\n")
    with pytest.raises(ValueError):
        read_radar_csv(tmp_path / "bad.csv")
