import numpy as np
import pytest

from spikeforge import convops

from oracles import conv_reference, deconv_reference, fd_gradient


def test_conv_matches_reference():
    rng = np.random.default_rng(0)
    for k, stride, h, w, cin, cout in [(1, 1, 5, 5, 3, 2), (3, 1, 8, 6, 2, 4),
                                       (3, 2, 9, 11, 1, 3), (2, 2, 6, 6, 4, 1)]:
        x = rng.standard_normal((2, h, w, cin))
        wts = rng.standard_normal((k, k, cin, cout))
        got = convops.conv_forward(x, wts, stride)
        for b in range(2):
            want = conv_reference(x[b], wts, stride)
            np.testing.assert_allclose(got[b], want, atol=1e-12)


def test_conv_identity_kernel():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((1, 4, 4, 3))
    eye = np.eye(3)[None, None]
    np.testing.assert_array_equal(convops.conv_forward(x, eye, 1), x)


def test_conv_delta_kernel_shifts():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((1, 6, 6, 1))
    delta = np.zeros((3, 3, 1, 1))
    delta[2, 2, 0, 0] = 1.0  # picks the bottom-right pixel of each window
    out = convops.conv_forward(x, delta, 1)
    np.testing.assert_array_equal(out[0, :, :, 0], x[0, 2:, 2:, 0])


def test_deconv_matches_reference():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((2, 3, 4, 2))
    wts = rng.standard_normal((2, 2, 2, 3))
    got = convops.deconv_forward(x, wts)
    assert got.shape == (2, 6, 8, 3)
    for b in range(2):
        np.testing.assert_allclose(got[b], deconv_reference(x[b], wts), atol=1e-12)


def test_window_index_rejects_bad_geometry():
    with pytest.raises(ValueError):
        convops.window_index(2, 2, 3, 1)


def _loss_and_grads(forward, backward, x, wts, stride=None):
    rng = np.random.default_rng(4)
    out = forward()
    target = rng.standard_normal(out.shape)

    def loss():
        d = forward() - target
        return 0.5 * float((d * d).sum())

    dout = forward() - target
    if stride is None:
        dx, dw, db = backward(dout)
    else:
        dx, dw, db = backward(dout)
    return loss, dx, dw, db


@pytest.mark.parametrize("stride", [1, 2])
def test_conv_backward_matches_fd(stride):
    rng = np.random.default_rng(5)
    x = rng.standard_normal((2, 7, 7, 2))
    wts = rng.standard_normal((3, 3, 2, 3))
    loss, dx, dw, db = _loss_and_grads(
        lambda: convops.conv_forward(x, wts, stride),
        lambda dout: convops.conv_backward(x, wts, dout, stride),
        x, wts, stride,
    )
    for arr, grad in ((x, dx), (wts, dw)):
        flat, gflat = arr.reshape(-1), grad.reshape(-1)
        for i in np.random.default_rng(6).choice(flat.size, 10, replace=False):
            fd = fd_gradient(loss, flat, i, 1e-6)
            assert gflat[i] == pytest.approx(fd, rel=1e-6, abs=1e-9)


def test_conv_backward_bias_is_sum():
    rng = np.random.default_rng(7)
    x = rng.standard_normal((2, 5, 5, 2))
    wts = rng.standard_normal((3, 3, 2, 3))
    dout = rng.standard_normal((2, 3, 3, 3))
    _, _, db = convops.conv_backward(x, wts, dout, 1)
    np.testing.assert_allclose(db, dout.sum(axis=(0, 1, 2)))


def test_deconv_backward_matches_fd():
    rng = np.random.default_rng(8)
    x = rng.standard_normal((1, 3, 3, 2))
    wts = rng.standard_normal((2, 2, 2, 2))
    loss, dx, dw, db = _loss_and_grads(
        lambda: convops.deconv_forward(x, wts),
        lambda dout: convops.deconv_backward(x, wts, dout),
        x, wts,
    )
    for arr, grad in ((x, dx), (wts, dw)):
        flat, gflat = arr.reshape(-1), grad.reshape(-1)
        for i in range(0, flat.size, 3):
            fd = fd_gradient(loss, flat, i, 1e-6)
            assert gflat[i] == pytest.approx(fd, rel=1e-6, abs=1e-9)


def test_center_crop():
    x = np.arange(36).reshape(1, 6, 6, 1)
    got = convops.center_crop(x, 4, 4)
    np.testing.assert_array_equal(got, x[:, 1:5, 1:5, :])
    flat = np.arange(30).reshape(5, 6)
    np.testing.assert_array_equal(convops.center_crop(flat, 3, 4), flat[1:4, 1:5])
    with pytest.raises(ValueError):
        convops.center_crop(flat, 7, 2)
