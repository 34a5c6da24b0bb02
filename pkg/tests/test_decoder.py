import math

import numpy as np
import pytest

from enfnet.checks import check_decoder
from enfnet.config import DESK_NETWORK
from enfnet.decoder import build_decoder, contrast_feature, deconv_fuse, local_feature, predict_fullres, score_fusion
from enfnet.params import ParamStore
from enfnet.tensor import ShapeError, Tensor


def zeroed_decoder(cfg=DESK_NETWORK):
    store = ParamStore()
    build_decoder(cfg, store)
    for t in store.tensors():
        t.data[...] = 0.0
    return store


@pytest.mark.parametrize("c", [2.5, 0.1, -1 / 3])
def test_contrast_of_constant_is_zero(c):
    out = contrast_feature(Tensor(np.full((1, 3, 7, 5), c))).data
    np.testing.assert_array_equal(out, 0.0)


def test_contrast_impulse():
    x = np.zeros((1, 1, 5, 5))
    x[0, 0, 2, 2] = 9.0
    out = contrast_feature(Tensor(x)).data
    assert out[0, 0, 2, 2] == pytest.approx(8.0, abs=1e-14)
    assert out[0, 0, 1, 1] == pytest.approx(-1.0, abs=1e-14)


@pytest.mark.parametrize("s", [176, 88, 11, 3])
def test_contrast_preserves_shape(s):
    assert contrast_feature(Tensor(np.zeros((1, 2, s, s)))).shape == (1, 2, s, s)


def test_desk_deconv_chain(rng):
    cfg = DESK_NETWORK
    store = ParamStore()
    build_decoder(cfg, store)
    sizes = []
    d = None
    for level in (5, 4, 3, 2):
        s = cfg.level_size(level)
        xf = Tensor(rng.standard_normal((1, 32, s, s)))
        d = deconv_fuse(store, level, xf, contrast_feature(xf), d)
        sizes.append(d.shape[2])
        assert d.shape[1] == cfg.fuse_channels
    assert [cfg.level_size(5)] + sizes == [3, 6, 12, 24, 48]


def test_zero_inputs_zero_params():
    store = zeroed_decoder()
    z3 = Tensor(np.zeros((1, 32, 3, 3)))
    assert np.all(deconv_fuse(store, 5, z3, z3).data == 0)
    z48 = Tensor(np.zeros((1, 32, 48, 48)))
    xl = local_feature(store, z48, z48, z48)
    assert xl.shape == (1, 32, 48, 48) and np.all(xl.data == 0)


def test_deconv_spatial_mismatch():
    store = zeroed_decoder()
    with pytest.raises(ShapeError, match="D has spatial size"):
        deconv_fuse(store, 4, Tensor(np.zeros((1, 32, 6, 6))), Tensor(np.zeros((1, 32, 6, 6))), Tensor(np.zeros((1, 32, 12, 12))))


def test_local_feature_width_independent_of_inputs():
    cfg = DESK_NETWORK.__class__(side_channels=8, fuse_channels=5)
    store = ParamStore()
    build_decoder(cfg, store)
    xl = local_feature(store, Tensor(np.ones((1, 8, 48, 48))), Tensor(np.ones((1, 8, 48, 48))), Tensor(np.ones((1, 5, 48, 48))))
    assert xl.shape == (1, 5, 48, 48)


def test_uniform_half_when_all_zero():
    store = zeroed_decoder()
    sal, probs, _ = score_fusion(store, Tensor(np.ones((1, 32, 48, 48))), Tensor(np.ones((1, 32, 1, 1))))
    np.testing.assert_array_equal(sal.data, 0.5)
    assert sal.shape == (1, 1, 48, 48)


def test_local_bias_example():
    store = zeroed_decoder()
    store["score_local.bias"].data[:] = [0.0, 10.0]
    sal, _, _ = score_fusion(store, Tensor(np.ones((1, 32, 48, 48))), Tensor(np.ones((1, 32, 1, 1))))
    expected = 1.0 / (1.0 + math.exp(10.0))
    np.testing.assert_allclose(sal.data, expected, rtol=1e-12)
    assert expected == pytest.approx(4.54e-5, rel=1e-3)


def test_global_term_broadcasts(rng):
    store = ParamStore()
    build_decoder(DESK_NETWORK, store)
    xl = Tensor(np.zeros((1, 32, 48, 48)))
    store["score_global.weight"].data[...] = rng.standard_normal((2, 32, 1, 1))
    _, _, logits = score_fusion(store, xl, Tensor(rng.standard_normal((1, 32, 1, 1))))
    assert np.all(logits.data == logits.data[:, :, :1, :1])


def test_probabilities_valid(rng):
    store = ParamStore()
    build_decoder(DESK_NETWORK, store)
    for t in store.tensors():
        t.data[...] = rng.standard_normal(t.shape)
    sal, probs, _ = score_fusion(store, Tensor(rng.uniform(size=(2, 32, 48, 48))), Tensor(rng.uniform(size=(2, 32, 1, 1))))
    assert sal.data.min() >= 0 and sal.data.max() <= 1
    assert np.max(np.abs(probs.data.sum(axis=1) - 1)) <= 1e-12


def test_global_must_be_pointwise():
    with pytest.raises(ShapeError, match="1x1"):
        score_fusion(zeroed_decoder(), Tensor(np.zeros((1, 32, 48, 48))), Tensor(np.zeros((1, 32, 3, 3))))


@pytest.mark.parametrize("s", [48, 176])
def test_predict_fullres(s):
    out = predict_fullres(Tensor(np.full((1, 1, s, s), 0.3))).data
    assert out.shape == (1, 1, 2 * s, 2 * s)
    assert np.all(out == 0.3)


def test_predict_fullres_stays_in_range(rng):
    out = predict_fullres(Tensor(rng.uniform(size=(1, 1, 12, 12)))).data
    assert out.min() >= 0 and out.max() <= 1


def test_decoder_gradient_oracle():
    assert check_decoder(np.random.default_rng(5), instances=1) < 1e-4
