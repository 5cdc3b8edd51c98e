import numpy as np
import pytest
from hypothesis import given, strategies as st

from gradcheck import check
from onhgdl.core import checkpoint
from onhgdl.core import tensor as T
from onhgdl.core.layers import (BatchNormParams, LayerParams, apply_batch_norm, dense, dropout, global_max_pool,
                                linear, shared_mlp)
from onhgdl.core.optim import AdamState, adam_step
from onhgdl.errors import ContractError, DimensionError, ModelError


def _column_scan_max(x):
    n, c = x.shape
    vals, args = np.empty(c), np.empty(c, dtype=int)
    for j in range(c):
        best = 0
        for i in range(1, n):
            if x[i, j] > x[best, j]:
                best = i
        vals[j], args[j] = x[best, j], best
    return vals, args


@given(st.integers(1, 30), st.integers(1, 8), st.integers(0, 2**31), st.booleans())
def test_max_pool_matches_column_scan(n, c, seed, ties):
    rng = np.random.default_rng(seed)
    x = rng.integers(0, 3, size=(n, c)).astype(float) if ties else rng.normal(size=(n, c))
    vals, args = global_max_pool(T.as_tensor(x))
    ov, oa = _column_scan_max(x)
    np.testing.assert_array_equal(vals.data, ov)
    np.testing.assert_array_equal(args, oa)


def test_max_pool_needs_points():
    with pytest.raises(ContractError):
        global_max_pool(T.as_tensor(np.zeros((0, 3))))


def test_single_point_pool_selects_it():
    _, args = global_max_pool(T.as_tensor(np.ones((1, 256))))
    assert np.all(args == 0)


def test_linear_shape_check(rng):
    lp = LayerParams.create(3, 2, rng)
    with pytest.raises(DimensionError):
        linear(np.zeros((4, 5)), lp)


def test_layer_params_validate(rng):
    with pytest.raises(DimensionError):
        LayerParams(T.parameter(np.zeros((3, 2))), T.parameter(np.zeros(3)))


@pytest.mark.parametrize("bn", [False, True])
@pytest.mark.parametrize("training", [False, True])
def test_shared_mlp_gradient(rng, bn, training):
    layers = [LayerParams.create(4, 6, rng, batch_norm=bn), LayerParams.create(6, 5, rng, batch_norm=bn)]
    for lp in layers:
        lp.bias.data = rng.normal(size=lp.bias.shape) * 0.3
        if bn:
            lp.bn.running_mean = rng.normal(size=lp.out_features)
            lp.bn.running_var = rng.uniform(0.5, 2.0, lp.out_features)
    x = T.parameter(rng.normal(size=(2, 7, 4)))
    w = rng.normal(size=(2, 7, 5))
    params = [x] + [p for lp in layers for p in lp.parameters()]
    saved = [(lp.bn.running_mean, lp.bn.running_var) for lp in layers if lp.bn]

    def loss():
        for lp, (m, v) in zip([lp for lp in layers if lp.bn], saved):
            lp.bn.running_mean, lp.bn.running_var = m, v
        return T.sum_(T.mul(shared_mlp(x, layers, training), w))

    check(loss, params)


def test_running_stats_momentum(rng):
    bn = BatchNormParams.create(3)
    x = rng.normal(size=(10, 3)) * 2 + 1
    apply_batch_norm(T.as_tensor(x), bn, training=True)
    np.testing.assert_allclose(bn.running_mean, 0.1 * x.mean(0))
    np.testing.assert_allclose(bn.running_var, 0.9 + 0.1 * x.var(0))
    before = bn.running_mean.copy()
    apply_batch_norm(T.as_tensor(x), bn, training=False)
    np.testing.assert_array_equal(bn.running_mean, before)


def test_dense_eval_matches_formula(rng):
    lp = LayerParams.create(3, 4, rng, batch_norm=True)
    lp.bn.running_mean = rng.normal(size=4)
    lp.bn.running_var = rng.uniform(0.5, 2, 4)
    x = rng.normal(size=(5, 3))
    h = x @ lp.weight.data + lp.bias.data
    ref = np.maximum((h - lp.bn.running_mean) / np.sqrt(lp.bn.running_var + 1e-5), 0)
    np.testing.assert_allclose(dense(x, lp).data, ref, rtol=1e-12)


def test_dropout_scales_and_is_identity_in_eval(rng):
    x = T.as_tensor(np.ones((2000,)))
    assert dropout(x, 0.3, rng, training=False) is x
    out = dropout(x, 0.3, rng, training=True).data
    assert set(np.unique(out)) <= {0.0, 1.0 / 0.7}
    assert abs((out == 0).mean() - 0.3) < 0.05


def test_adam_first_step_hand_computed():
    p = T.parameter(np.array([1.0, -2.0]))
    g = np.array([0.5, -4.0])
    adam_step([p], [g], AdamState(), lr=0.1)
    # bias-corrected m/sqrt(v) = sign(g) on step one
    np.testing.assert_allclose(p.data, [1.0 - 0.1 * 0.5 / (0.5 + 1e-8), -2.0 + 0.1 * 4.0 / (4.0 + 1e-8)])


def test_adam_matches_reference_loop():
    rng = np.random.default_rng(0)
    p = T.parameter(rng.normal(size=3))
    ref = np.array(p.data)
    m = v = np.zeros(3)
    state = AdamState()
    for t in range(1, 6):
        g = rng.normal(size=3)
        adam_step([p], [g], state, lr=1e-3)
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        ref = ref - 1e-3 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
    np.testing.assert_allclose(p.data, ref, rtol=1e-13)


def test_adam_zero_lr_keeps_parameters():
    p = T.parameter(np.array([0.25, 3.0]))
    before = np.array(p.data)
    state = AdamState()
    for _ in range(5):
        adam_step([p], [np.array([1.0, -1.0])], state, lr=0.0)
    np.testing.assert_array_equal(p.data, before)


def test_checkpoint_roundtrip_is_bit_exact(rng, tmp_path):
    layers = [LayerParams.create(4, 3, rng, batch_norm=True), LayerParams.create(3, 2, rng)]
    layers[0].bn.running_var = rng.uniform(0.1, 3, 3)
    digest = checkpoint.save(tmp_path / "m.onhw", {"family": "x", "a": [1, 2]}, layers)
    cfg, arrays = checkpoint.load(tmp_path / "m.onhw")
    assert cfg == {"family": "x", "a": [1, 2]}
    for a, b in zip(arrays, checkpoint.layer_arrays(layers)):
        assert a.tobytes() == np.asarray(b).tobytes()
    assert len(digest) == 64


def test_checkpoint_layout(rng):
    lp = LayerParams.create(2, 1, rng)
    blob = checkpoint.encode({"k": 1}, checkpoint.layer_arrays([lp]))
    assert blob[:5] == b"ONHW1"
    assert int.from_bytes(blob[5:9], "little") == len(b'{"k":1}')
    assert blob[9:16] == b'{"k":1}'
    assert int.from_bytes(blob[16:20], "little") == 2


def test_checkpoint_rejects_mismatch(rng):
    a = [LayerParams.create(4, 3, rng)]
    b = [LayerParams.create(4, 5, rng)]
    with pytest.raises(ModelError):
        checkpoint.assign_layer_arrays(b, checkpoint.layer_arrays(a))
    with pytest.raises(ModelError):
        checkpoint.decode(b"XXXX")
    blob = checkpoint.encode({}, checkpoint.layer_arrays(a))
    with pytest.raises(ModelError):
        checkpoint.decode(blob[:-3])
