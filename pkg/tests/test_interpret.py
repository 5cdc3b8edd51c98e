import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from oracles import density_oracle
from onhgdl.errors import InputError, ModelError
from onhgdl.geometry import OnhPointCloud
from onhgdl.interpret import (CriticalPointSet, critical_rows, density, export_projections, extract_critical_points,
                              grid_max, pool_critical_points, quadrant_of, quadrant_stats)
from onhgdl.models import build_model

TINY_PN = dict(tnet_mlp=(8,), tnet_fc=(8,), mlp=(8, 16), head=(8,), min_points=1)


def _cloud(xyz, scan="a_0"):
    n = len(xyz)
    return OnhPointCloud(xyz, np.full(n, 50.0), np.ones(n, int), np.zeros(n, int), "a", scan, "glaucoma")


def test_density_examples():
    assert density(np.array([[0.0, 0, 0]])).density.tolist() == [1]
    assert density(np.array([[0.0, 0, 0], [50.0, 0, 0]])).density.tolist() == [2, 2]
    assert density(np.array([[0.0, 0, 0], [80.0, 0, 0]])).density.tolist() == [1, 1]
    with pytest.raises(InputError):
        density(np.zeros((2, 3)), radius=0)


def test_density_matches_oracle(rng):
    p = rng.uniform(-400, 400, size=(500, 3))
    np.testing.assert_array_equal(density(p, 75.0, chunk=64).density, density_oracle(p, 75.0))


@given(st.integers(0, 2**31))
def test_density_symmetric_and_order_free(seed):
    rng = np.random.default_rng(seed)
    p = rng.uniform(-200, 200, size=(60, 3))
    d2 = ((p[:, None] - p[None]) ** 2).sum(-1)
    inc = d2 <= 75.0 ** 2
    assert np.array_equal(inc, inc.T)
    perm = rng.permutation(60)
    np.testing.assert_array_equal(density(p[perm]).density, density(p).density[perm])


def test_quadrants():
    pts = np.array([[0, 1000, 5], [0, -1000, 5], [1000, 0, 5], [-1000, 0, 5.0]])
    assert list(quadrant_of(pts)) == ["superior", "inferior", "nasal", "temporal"]
    stats = quadrant_stats(density(pts))
    assert set(stats) == {"superior", "inferior", "nasal", "temporal"}
    assert all(v["count"] == 1 and v["density_sum"] == 1 for v in stats.values())


def test_single_point_cloud_has_one_critical_point():
    model = build_model("pointnet", TINY_PN)
    cps = extract_critical_points(model, _cloud(np.array([[10.0, 20.0, 30.0]])))
    assert len(cps) == 1 and cps.count.tolist() == [16]
    np.testing.assert_array_equal(cps.xyz, [[10.0, 20.0, 30.0]])


def test_default_pool_bound(rng):
    model = build_model("pointnet", dict(min_points=1))
    cloud = _cloud(rng.uniform(-1500, 1500, size=(700, 3)))
    cps = extract_critical_points(model, cloud, n_points=512)
    assert len(cps) <= 256 and cps.pool_dim == 256
    assert len(np.unique(cps.index)) == len(cps)
    np.testing.assert_array_equal(cps.xyz, cloud.xyz[cps.index])


@pytest.mark.parametrize("family,cfg", [("pointnet", TINY_PN), ("dgcnn", dict(k=5, edge_widths=(8, 8), pool_dim=16,
                                                                                   head=(8,)))])
def test_critical_set_is_permutation_invariant(family, cfg, rng):
    model = build_model(family, cfg, seed=2)
    xyz = rng.uniform(-1500, 1500, size=(80, 3))
    a = extract_critical_points(model, _cloud(xyz))
    perm = rng.permutation(80)
    b = extract_critical_points(model, _cloud(xyz[perm]))
    key = lambda s: sorted(map(tuple, s.xyz.tolist()))  # noqa: E731
    assert key(a) == key(b)


def test_extract_needs_a_model():
    with pytest.raises(ModelError):
        extract_critical_points(object(), _cloud(np.zeros((3, 3))))


def test_pooling_concatenates():
    s1 = CriticalPointSet("x", [0, 1], [[0, 0, 0], [1, 1, 1]], [1, 1], [3, 1])
    s2 = CriticalPointSet("y", [4], [[2, 2, 2]], [5], [4])
    assert len(pool_critical_points([s1])) == 2
    pooled = pool_critical_points([s1, s2])
    assert len(pooled) == 3 and pooled.scan_ids == ["x", "x", "y"]
    back = pool_critical_points([s2, s1])
    d1 = dict(zip(map(tuple, pooled.xyz.tolist()), density(pooled, 2.0).density))
    d2 = dict(zip(map(tuple, back.xyz.tolist()), density(back, 2.0).density))
    assert d1 == d2


def test_grid_max_matches_bins(rng):
    p = rng.uniform(-500, 500, size=(300, 3))
    d = rng.integers(1, 20, 300)
    grid, ext = grid_max(p[:, 0], p[:, 1], d, 100.0)
    for iy in range(grid.shape[0]):
        for ix in range(grid.shape[1]):
            x0, y0 = ext[0] + ix * 100.0, ext[2] + iy * 100.0
            inside = (p[:, 0] >= x0) & (p[:, 0] < x0 + 100) & (p[:, 1] >= y0) & (p[:, 1] < y0 + 100)
            assert grid[iy, ix] == (d[inside].max() if inside.any() else 0)


def test_export_projections(rng, tmp_path):
    dmap = density(rng.uniform(-800, 800, size=(120, 3)))
    out = export_projections(dmap, tmp_path / "a")
    export_projections(dmap, tmp_path / "b")
    for name in ("enface", "sagittal"):
        text = (tmp_path / "a" / f"{name}.csv").read_text()
        assert len(text.splitlines()) == 121
        assert text == (tmp_path / "b" / f"{name}.csv").read_text()
        side = json.loads((tmp_path / "a" / f"{name}.json").read_text())
        assert side["radius_um"] == 75.0 and side["colormap"] == "viridis"
        assert (tmp_path / "a" / f"{name}.png").stat().st_size > 0
        assert out[name]["grid"].max() == dmap.density.max()
    with pytest.raises(InputError):
        export_projections(density(np.zeros((0, 3))), tmp_path / "c")


def test_critical_rows_format():
    s = CriticalPointSet("x", [3], [[1.5, -2.0, 0.25]], [1], [256])
    assert critical_rows([s]) == ["scan_id,index,x_um,y_um,z_um,tissue,channel_count",
                                  "x,3,1.5,-2.0,0.25,RNFL_PLT,256"]
