import numpy as np
import pytest
from dataclasses import replace
from hypothesis import given, strategies as st

from oracles import boundary_oracle, plane_oracle, thickness_oracle
from onhgdl import io
from onhgdl.errors import ExtractionError, FitError, InputError
from onhgdl.geometry import (ANTERIOR, POSTERIOR, TISSUES, OnhPointCloud, SegmentedVolume, TissueLabel, align_to_bmo,
                             build_point_cloud, compute_thickness, cylindrical_crop, detect_bmo, extract_boundaries,
                             fit_plane_least_squares, flip_to_left_eye, plane_residual, rigid_transform,
                             rotation_to_z, transform_landmarks)


def random_rotation(rng):
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q = q * np.sign(np.diag(r))
    return q if np.linalg.det(q) > 0 else -q


def test_tissue_parse():
    assert TissueLabel.parse("rnfl+plt") is TissueLabel.RNFL_PLT
    assert TissueLabel.parse(5) is TissueLabel.CHOROID
    with pytest.raises(InputError):
        TissueLabel.parse("retina")


def test_volume_validation():
    with pytest.raises(InputError):
        SegmentedVolume(np.zeros((2, 2)))
    with pytest.raises(InputError):
        SegmentedVolume(np.full((1, 1, 2), 9))
    with pytest.raises(InputError):
        SegmentedVolume(np.zeros((1, 1, 2)), spacing=(1, 0, 1))


def test_flip_to_left_eye(rng):
    labels = rng.integers(0, 8, size=(3, 5, 4))
    right = SegmentedVolume(labels, eye_side="right")
    flipped = flip_to_left_eye(right)
    assert flipped.eye_side == "left"
    np.testing.assert_array_equal(flipped.labels, labels[:, ::-1, :])
    left = SegmentedVolume(labels, eye_side="left")
    assert flip_to_left_eye(left) is left
    with pytest.raises(InputError):
        flip_to_left_eye(SegmentedVolume(labels, eye_side="up"))


@given(st.integers(0, 2**31))
def test_boundaries_match_voxel_scan(seed):
    rng = np.random.default_rng(seed)
    labels = rng.choice(8, size=(3, 4, 9), p=[0.5] + [0.5 / 7] * 7)
    spacing = (80.0, 40.0, 7.8)
    bounds = extract_boundaries(SegmentedVolume(labels, spacing))
    for t in TISSUES:
        ant, post = boundary_oracle(labels, spacing, t)
        np.testing.assert_array_equal(bounds.side(t, ANTERIOR).xyz, ant)
        np.testing.assert_array_equal(bounds.side(t, POSTERIOR).xyz, post)


def test_thickness_matches_brute_force(small_samples):
    bounds = extract_boundaries(small_samples[0].volume)
    thick = compute_thickness(bounds)
    for t in (TissueLabel.RNFL_PLT, TissueLabel.CHOROID, TissueLabel.LC):
        ant, post = bounds.side(t, ANTERIOR), bounds.side(t, POSTERIOR)
        np.testing.assert_array_equal(thick[t].anterior, thickness_oracle(ant, post))
        assert not thick[t].anterior_missing.any()
        assert np.all(thick[t].anterior >= 0)


def test_thickness_of_flat_slab():
    labels = np.zeros((2, 6, 20), dtype=np.uint8)
    labels[:, :, 5:9] = TissueLabel.CHOROID
    thick = compute_thickness(extract_boundaries(SegmentedVolume(labels, (80.0, 40.0, 5.0))))
    # first voxel 5, last voxel 8 -> 3 voxel centres apart
    np.testing.assert_allclose(thick[TissueLabel.CHOROID].anterior, 15.0)
    np.testing.assert_allclose(thick[TissueLabel.CHOROID].posterior, 15.0)


def test_bmo_tracks_the_disc(small_samples):
    s = small_samples[0]
    lm = detect_bmo(s.volume)
    pose = s.truth["pose"]
    assert abs(lm.center[0] - pose["center_x"]) < 2 * s.volume.spacing[1]
    assert abs(lm.center[1] - pose["center_y"]) < 2 * s.volume.spacing[0]
    tilt = np.array([-pose["slope_x"], -pose["slope_y"], 1.0])
    assert np.degrees(np.arccos(lm.normal @ (tilt / np.linalg.norm(tilt)))) < 2.0


def test_bmo_needs_a_gap():
    labels = np.zeros((2, 6, 10), dtype=np.uint8)
    labels[:, :, 3] = TissueLabel.RPE_BM
    with pytest.raises(ExtractionError):
        detect_bmo(SegmentedVolume(labels))


@given(st.integers(0, 2**31))
def test_plane_fit_beats_direction_grid(seed):
    rng = np.random.default_rng(seed)
    p = rng.normal(size=(40, 3)) * np.array([300.0, 200.0, 15.0])
    p = p @ random_rotation(rng).T + rng.normal(size=3) * 100
    c, n = fit_plane_least_squares(p)
    oc, on, ores = plane_oracle(p)
    res = plane_residual(p, c, n)
    assert res <= ores * (1 + 1e-6)
    assert abs(res - ores) <= 1e-6 * ores
    assert n[2] >= 0 and abs(np.linalg.norm(n) - 1) < 1e-12


def test_plane_fit_tilted_example():
    xs, ys = np.meshgrid(np.arange(5.0), np.arange(4.0))
    p = np.column_stack([xs.ravel(), ys.ravel(), 0.1 * xs.ravel() + 3.0])
    c, n = fit_plane_least_squares(p)
    np.testing.assert_allclose(n, np.array([-0.1, 0.0, 1.0]) / np.sqrt(1.01), atol=1e-12)
    np.testing.assert_allclose(c, p.mean(0))


def test_plane_fit_errors():
    with pytest.raises(FitError):
        fit_plane_least_squares(np.zeros((2, 3)))
    with pytest.raises(FitError):
        fit_plane_least_squares(np.outer(np.arange(5.0), [1.0, 2.0, 3.0]))


@given(st.integers(0, 2**31))
def test_rotation_to_z_is_minimal(seed):
    rng = np.random.default_rng(seed)
    n = rng.normal(size=3)
    n /= np.linalg.norm(n)
    R = rotation_to_z(n)
    np.testing.assert_allclose(R @ n, [0, 0, 1], atol=1e-12)
    np.testing.assert_allclose(R @ R.T, np.eye(3), atol=1e-12)
    assert np.linalg.det(R) == pytest.approx(1.0)
    axis = np.cross(n, [0, 0, 1.0])
    np.testing.assert_allclose(R @ axis, axis, atol=1e-12)  # rotation axis is n x z


def test_rotation_to_z_special_cases():
    np.testing.assert_array_equal(rotation_to_z([0, 0, 2.0]), np.eye(3))
    np.testing.assert_allclose(rotation_to_z([0, 0, -1.0]) @ [0, 0, -1.0], [0, 0, 1])


def _cloud(xyz):
    n = len(xyz)
    return OnhPointCloud(xyz, np.arange(n, dtype=float), np.ones(n, dtype=int), np.zeros(n, dtype=int))


@given(st.integers(0, 2**31), st.floats(1.0, 3000.0))
def test_crop_matches_predicate(seed, radius):
    rng = np.random.default_rng(seed)
    xyz = rng.uniform(-2500, 2500, size=(200, 3))
    xyz[0] = [0.0, 0.0, 1.0]
    out = cylindrical_crop(_cloud(xyz), radius)
    keep = [i for i in range(200) if np.sqrt(xyz[i, 0] ** 2 + xyz[i, 1] ** 2) <= radius]
    np.testing.assert_array_equal(out.thickness, np.array(keep, dtype=float))


def test_crop_boundary_inclusive_and_empty():
    out = cylindrical_crop(_cloud(np.array([[1050.0, 1400.0, 0.0], [1050.0, 1400.1, 0.0]])), 1750.0)
    assert len(out) == 1
    with pytest.raises(ExtractionError):
        cylindrical_crop(_cloud(np.array([[5000.0, 0.0, 0.0]])), 1750.0)


def test_alignment_invariant_to_rigid_pretransform(small_samples, rng):
    vol = small_samples[1].volume
    b = extract_boundaries(flip_to_left_eye(vol))
    lm = detect_bmo(b)
    raw = _cloud(b.side(TissueLabel.RPE_BM, ANTERIOR).xyz)
    base = align_to_bmo(raw, lm)
    for _ in range(5):
        R, t = random_rotation(rng), rng.normal(size=3) * 5000
        moved = align_to_bmo(rigid_transform(raw, R, t), transform_landmarks(lm, R, t))
        np.testing.assert_allclose(moved.xyz, base.xyz, rtol=0, atol=1e-6)


def test_aligned_cloud_invariants(small_clouds):
    for c in small_clouds:
        assert np.all(np.hypot(c.xyz[:, 0], c.xyz[:, 1]) <= 1750.0)
        assert np.all(c.thickness >= 0)
        assert set(np.unique(c.tissue)) <= {int(t) for t in TISSUES}
        back = c.side == POSTERIOR
        assert set(np.unique(c.tissue[back])) <= {int(TissueLabel.SCLERA), int(TissueLabel.LC)}
        # the BMO centre is the origin and its plane is z = 0 in the aligned frame
        assert abs(c.xyz[c.tissue == TissueLabel.RPE_BM, 2].mean()) < 100


def test_default_volume_point_count(default_sample):
    cloud = build_point_cloud(default_sample.volume)
    assert 5000 <= len(cloud) <= 60000
    assert set(np.unique(cloud.tissue)) == {int(t) for t in TISSUES}


def test_right_eye_equals_mirrored_left_twin(small_samples):
    vol = small_samples[2].volume
    twin = replace(vol, labels=np.ascontiguousarray(vol.labels[:, ::-1, :]),
                   eye_side="right" if vol.eye_side == "left" else "left")
    left = vol if vol.eye_side == "left" else twin
    right = twin if twin.eye_side == "right" else vol
    a, b = build_point_cloud(left), build_point_cloud(right)
    np.testing.assert_array_equal(a.xyz, b.xyz)
    np.testing.assert_array_equal(a.thickness, b.thickness)


def test_volume_io_roundtrip(small_samples, tmp_path):
    vol = small_samples[0].volume
    io.write_volume(tmp_path / "v.onhseg", vol)
    back = io.read_volume(tmp_path / "v.onhseg")
    np.testing.assert_array_equal(back.labels, vol.labels)
    assert (back.spacing, back.eye_side, back.scan_id, back.class_label) == \
        (vol.spacing, vol.eye_side, vol.scan_id, vol.class_label)
    blob = (tmp_path / "v.onhseg").read_bytes()
    with pytest.raises(InputError):
        io.decode_volume(blob[:-1])
    with pytest.raises(InputError):
        io.decode_volume(b"ONHSEG v2\n{}\n")


def test_cloud_io_roundtrip_is_exact(small_clouds, tmp_path):
    c = small_clouds[0]
    io.write_cloud(tmp_path / "c.onhpc", c)
    back = io.read_cloud(tmp_path / "c.onhpc")
    for f in ("xyz", "thickness", "tissue", "side", "frame", "origin"):
        np.testing.assert_array_equal(getattr(back, f), getattr(c, f))
    assert (back.scan_id, back.subject_id, back.class_label) == (c.scan_id, c.subject_id, c.class_label)
    text = (tmp_path / "c.onhpc").read_text()
    with pytest.raises(InputError):
        io.decode_cloud(text.replace("ONHPC v1", "ONHPC v9", 1))
    with pytest.raises(InputError):
        io.decode_cloud("\n".join(text.splitlines()[:-1]))
