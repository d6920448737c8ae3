import numpy as np
import pytest

import screid.autodiff as ad
from screid.model import (
    ModelDims,
    extract_features,
    extract_features_batch,
    init_model,
    pool_features,
    pool_features_batch,
    project_keys,
    project_keys_batch,
)

DIMS = ModelDims()


@pytest.fixture(scope="module")
def params():
    return init_model(DIMS, np.random.default_rng(7))


def straight_line_encoder(image: np.ndarray, params) -> np.ndarray:
    """Independent re-derivation of the encoder: per-row-block affine
    stages applied with plain numpy, output (C, H, W)."""
    d = params.dims
    rows_per_block = d.image_height // d.feature_height
    out = np.zeros((d.channels, d.feature_height, d.feature_width))
    for h in range(d.feature_height):
        block = image[h * rows_per_block : (h + 1) * rows_per_block].reshape(-1)
        hidden = np.maximum(block @ params.enc1.weight.data + params.enc1.bias.data, 0.0)
        y = np.maximum(hidden @ params.enc2.weight.data + params.enc2.bias.data, 0.0)
        out[:, h, :] = y.reshape(d.channels, d.feature_width)
    return out


def test_zero_image_zero_bias_gives_zero_map():
    p = init_model(DIMS, np.random.default_rng(0))
    p.enc1.bias.data[...] = 0.0
    p.enc2.bias.data[...] = 0.0
    fmap = extract_features(np.zeros((32, 16, 3)), p, train_mode=False)
    np.testing.assert_array_equal(fmap.data, 0.0)


def test_encoder_is_deterministic(params):
    image = np.random.default_rng(1).random((32, 16, 3))
    a = extract_features(image, params, train_mode=False).data
    b = extract_features(image, params, train_mode=False).data
    assert np.array_equal(a, b)


def test_encoder_matches_straight_line_oracle(params):
    rng = np.random.default_rng(2)
    for _ in range(5):
        image = rng.random((32, 16, 3))
        got = extract_features(image, params, train_mode=False).data
        want = straight_line_encoder(image, params)
        np.testing.assert_allclose(got, want, atol=1e-12)


def test_batch_path_matches_single_path(params):
    rng = np.random.default_rng(3)
    images = rng.random((4, 32, 16, 3))
    batch = extract_features_batch(images, params, train_mode=False).data
    for i in range(4):
        single = extract_features(images[i], params, train_mode=False).data
        # batch layout is (n, H, C, W); single is (C, H, W)
        np.testing.assert_allclose(batch[i].transpose(1, 0, 2), single, atol=1e-12)


def test_pool_constant_map():
    fmap = ad.Tensor(np.full((3, 8, 4), 3.0))
    pooled = pool_features(fmap, num_stripes=8)
    np.testing.assert_allclose(pooled.global_vec.data, [3.0, 3.0, 3.0], atol=1e-12)
    np.testing.assert_allclose(pooled.stripes.data, 3.0, atol=1e-12)


def test_pool_row_ramp_hand_values():
    # C=1, H=8, W=1, one row per stripe, row r holds value r
    fmap = ad.Tensor(np.arange(8.0).reshape(1, 8, 1))
    pooled = pool_features(fmap, num_stripes=8)
    np.testing.assert_allclose(pooled.stripes.data[:, 0], np.arange(8.0), atol=1e-12)
    assert pooled.global_vec.data[0] == pytest.approx(3.5)


def test_global_is_mean_of_stripes():
    rng = np.random.default_rng(4)
    fmap = ad.Tensor(rng.random((5, 8, 3)))
    pooled = pool_features(fmap, num_stripes=4)
    np.testing.assert_allclose(
        pooled.global_vec.data, pooled.stripes.data.mean(axis=0), atol=1e-12
    )


def test_batch_pooling_matches_single(params):
    rng = np.random.default_rng(5)
    images = rng.random((3, 32, 16, 3))
    fmap_b = extract_features_batch(images, params, train_mode=False)
    gv, st = pool_features_batch(fmap_b, DIMS.num_stripes)
    for i in range(3):
        single = pool_features(extract_features(images[i], params, train_mode=False), DIMS.num_stripes)
        np.testing.assert_allclose(gv.data[i], single.global_vec.data, atol=1e-12)
        np.testing.assert_allclose(st.data[i], single.stripes.data, atol=1e-12)


def test_projected_keys_unit_norm(params):
    rng = np.random.default_rng(6)
    image = rng.random((32, 16, 3))
    pooled = pool_features(extract_features(image, params, train_mode=False), DIMS.num_stripes)
    keys = project_keys(pooled, params, train_mode=False)
    assert abs(np.linalg.norm(keys.global_key.data) - 1.0) < 1e-9
    assert abs(np.linalg.norm(keys.local_key.data) - 1.0) < 1e-9
    for s in range(DIMS.num_stripes):
        assert abs(np.linalg.norm(keys.stripe_keys.data[s]) - 1.0) < 1e-9


def test_identical_pooled_identical_keys(params):
    rng = np.random.default_rng(8)
    pooled = PooledLike(rng.random(DIMS.channels), rng.random((DIMS.num_stripes, DIMS.channels)))
    a = project_keys(pooled, params, train_mode=False)
    b = project_keys(pooled, params, train_mode=False)
    assert np.array_equal(a.global_key.data, b.global_key.data)
    assert np.array_equal(a.stripe_keys.data, b.stripe_keys.data)
    assert np.array_equal(a.local_key.data, b.local_key.data)


class PooledLike:
    def __init__(self, global_vec, stripes):
        self.global_vec = ad.Tensor(np.asarray(global_vec))
        self.stripes = ad.Tensor(np.asarray(stripes))


def test_stripe_projection_permutation_covariant(params):
    rng = np.random.default_rng(9)
    stripes = rng.random((DIMS.num_stripes, DIMS.channels))
    perm = rng.permutation(DIMS.num_stripes)
    base = project_keys(PooledLike(stripes.mean(axis=0), stripes), params, train_mode=False)
    permuted = project_keys(PooledLike(stripes.mean(axis=0), stripes[perm]), params, train_mode=False)
    np.testing.assert_allclose(
        permuted.stripe_keys.data, base.stripe_keys.data[perm], atol=1e-12
    )


def test_constant_map_makes_identical_stripe_keys(params):
    stripes = np.tile(np.linspace(0.1, 0.9, DIMS.channels), (DIMS.num_stripes, 1))
    keys = project_keys(PooledLike(stripes[0], stripes), params, train_mode=False)
    for s in range(1, DIMS.num_stripes):
        np.testing.assert_allclose(keys.stripe_keys.data[s], keys.stripe_keys.data[0], atol=1e-12)


def test_eval_mode_is_pure(params):
    rng = np.random.default_rng(10)
    pooled = PooledLike(rng.random(DIMS.channels), rng.random((DIMS.num_stripes, DIMS.channels)))
    before = {
        name: buf.copy() for name, buf in params.named_buffers().items()
    }
    project_keys(pooled, params, train_mode=False)
    for name, buf in params.named_buffers().items():
        assert np.array_equal(buf, before[name]), name


def test_train_mode_moves_running_stats(params_factory=lambda: init_model(DIMS, np.random.default_rng(11))):
    p = params_factory()
    rng = np.random.default_rng(12)
    gv = ad.Tensor(rng.random((8, DIMS.channels)))
    st = ad.Tensor(rng.random((8, DIMS.num_stripes, DIMS.channels)))
    before = p.proj_global.bn.running_mean.copy()
    project_keys_batch(gv, st, p, train_mode=True)
    assert not np.array_equal(p.proj_global.bn.running_mean, before)


def test_projection_weight_gradient_matches_fd():
    p = init_model(DIMS, np.random.default_rng(13))
    rng = np.random.default_rng(14)
    gv = rng.random((4, DIMS.channels))
    st = rng.random((4, DIMS.num_stripes, DIMS.channels))
    target = rng.standard_normal((4, DIMS.key_dim))

    def loss_fn(weight_tensor):
        p.proj_global.fc.weight = weight_tensor
        keys = project_keys_batch(ad.Tensor(gv), ad.Tensor(st), p, train_mode=True)
        # fresh running stats each call so train-mode BN stays repeatable
        p.proj_global.bn.running_mean[...] = 0.0
        p.proj_global.bn.running_var[...] = 1.0
        return ad.tsum(ad.mul(keys.global_keys, ad.Tensor(target)))

    w0 = p.proj_global.fc.weight.data.copy()
    w = ad.Tensor(w0.copy(), requires_grad=True)
    loss = loss_fn(w)
    loss.backward()
    numeric = ad.finite_difference_gradient(lambda t: loss_fn(t), ad.Tensor(w0.copy()))
    denom = max(np.max(np.abs(numeric.data)), 1.0)
    assert np.max(np.abs(w.grad - numeric.data)) / denom < 1e-4


def test_shared_stripe_head_dedupes_parameters():
    shared = init_model(DIMS, np.random.default_rng(15), share_stripe_projection=True)
    separate = init_model(DIMS, np.random.default_rng(15), share_stripe_projection=False)
    assert len(shared.named_parameters()) < len(separate.named_parameters())
    assert shared.proj_stripe is shared.proj_global


def test_rejects_wrong_image_shape(params):
    with pytest.raises(ValueError):
        extract_features(np.zeros((16, 16, 3)), params, train_mode=False)
