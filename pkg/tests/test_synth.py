import numpy as np
import pytest

from onhgdl.errors import ConfigError
from onhgdl.geometry import ANTERIOR, TissueLabel, extract_boundaries
from onhgdl.synth import SynthConfig, generate_dataset, generate_onh


def test_generation_is_deterministic(small_cfg):
    a = generate_onh(small_cfg, "glaucoma", seed=5)
    b = generate_onh(small_cfg, "glaucoma", seed=5)
    c = generate_onh(small_cfg, "glaucoma", seed=6)
    assert a.volume.labels.tobytes() == b.volume.labels.tobytes()
    assert a.volume.labels.tobytes() != c.volume.labels.tobytes()


def test_null_effect_makes_classes_identical(small_cfg):
    null = small_cfg.with_null_effect()
    a = generate_onh(null, "glaucoma", seed=9)
    b = generate_onh(null, "non-glaucoma", seed=9)
    np.testing.assert_array_equal(a.volume.labels, b.volume.labels)


def test_layers_stack_in_anatomical_order(small_samples):
    # truth surfaces are stored in the volume's own (possibly mirrored) frame
    for s in small_samples:
        outside = ~s.truth["surfaces"]["inside"]
        for b, a in zip(*np.nonzero(outside)):
            col = s.volume.labels[b, a]
            seq = col[col > 0]
            assert np.all(np.diff(seq.astype(int)) >= 0)
            assert list(np.unique(seq)) == [1, 2, 3, 4, 5, 6]


def test_anterior_boundaries_within_half_voxel(small_cfg):
    s = generate_onh(small_cfg, "non-glaucoma", seed=2)
    dz = small_cfg.spacing_um[2]
    bounds = extract_boundaries(s.volume)
    surf = s.truth["surfaces"]
    outside = ~surf["inside"]
    for tissue, key in ((TissueLabel.RNFL_PLT, "ilm"), (TissueLabel.CHOROID, "rpe_post"),
                        (TissueLabel.SCLERA, "choroid_post")):
        line = bounds.side(tissue, ANTERIOR)
        sel = outside[line.bscan, line.ascan]
        truth = surf[key][line.bscan[sel], line.ascan[sel]]
        assert np.max(np.abs(line.xyz[sel, 2] - truth)) <= dz / 2 + 1e-9


def _pole_rnfl(sample):
    surf = sample.truth["surfaces"]
    rho, theta = surf["rho"], surf["theta"]
    ring = (rho > 1.1) & (rho < 1.6) & (np.abs(np.sin(theta)) > 0.8)
    return float((surf["gcl_ant"] - surf["ilm"])[ring].mean())


def test_glaucoma_thins_polar_rnfl(small_cfg):
    g = [_pole_rnfl(generate_onh(small_cfg, "glaucoma", seed=i)) for i in range(6)]
    h = [_pole_rnfl(generate_onh(small_cfg, "non-glaucoma", seed=i)) for i in range(6)]
    assert max(g) < min(h)


def test_rnfl_only_leaves_choroid_and_lc_alone(small_cfg):
    cfg = small_cfg.rnfl_only()
    a = generate_onh(cfg, "glaucoma", seed=4).truth
    b = generate_onh(cfg, "non-glaucoma", seed=4).truth
    for key in ("rpe_post", "choroid_post", "sclera_post", "lc_ant", "lc_post"):
        np.testing.assert_array_equal(a["surfaces"][key], b["surfaces"][key])
    assert not np.array_equal(a["surfaces"]["ilm"], b["surfaces"]["ilm"])


def test_dataset_ids_balance_and_shared_anatomy(small_cfg):
    ds = generate_dataset(small_cfg, 6, 2, seed=1)
    assert [s.volume.scan_id for s in ds[:4]] == ["S0000_0", "S0000_1", "S0001_0", "S0001_1"]
    labels = [s.class_label for s in ds[::2]]
    assert labels.count("glaucoma") == 3
    for i in range(0, 12, 2):
        a, b = ds[i], ds[i + 1]
        assert a.volume.subject_id == b.volume.subject_id
        assert a.truth["anatomy"] == b.truth["anatomy"]
        assert a.volume.eye_side == b.volume.eye_side
        assert a.volume.labels.tobytes() != b.volume.labels.tobytes()


def test_config_validation_and_hash():
    with pytest.raises(ConfigError):
        SynthConfig(choroid_um=(300.0, 100.0))
    with pytest.raises(ConfigError):
        SynthConfig(rnfl_thinning=(0.5, 1.2))
    with pytest.raises(ConfigError):
        SynthConfig.from_dict({"bogus": 1})
    with pytest.raises(ConfigError):
        generate_onh(SynthConfig(), "maybe", seed=0)
    assert SynthConfig().hash() == SynthConfig.from_dict(SynthConfig().to_dict()).hash()
    assert SynthConfig().hash() != SynthConfig(seed=1).hash()
