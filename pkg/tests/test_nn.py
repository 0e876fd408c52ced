import numpy as np
import pytest

from ccfusion.nn import ChartNetwork, ModelFormatError, same_padding

TINY = dict(conv=((2, 3), (3, 4)), dense=(5, 4))


def naive_forward(net, x):
    """Layer-by-layer loops in (channels, height, width) layout."""
    out = []
    for sample in np.asarray(x, dtype=float):
        a = None
        for layer in net.layers:
            if layer.kind == "standardize":
                a = ((sample - layer.mean) / layer.std)[None]
            elif layer.kind == "conv2d":
                kh, kw = layer.kernel
                cin, h, w = a.shape
                (t, b), (l, r) = same_padding(kh), same_padding(kw)
                p = np.zeros((cin, h + t + b, w + l + r))
                p[:, t:t + h, l:l + w] = a
                z = np.zeros((layer.out_channels, h, w))
                for o in range(layer.out_channels):
                    for i in range(h):
                        for j in range(w):
                            acc = layer.b[o]
                            for c in range(cin):
                                for u in range(kh):
                                    for v in range(kw):
                                        acc += p[c, i + u, j + v] * layer.W[u, v, c, o]
                            z[o, i, j] = acc
                a = np.maximum(z, 0)
            elif layer.kind == "flatten":
                a = a.transpose(1, 2, 0).ravel()  # channel-last order
            elif layer.kind == "dense":
                z = a @ layer.W + layer.b
                a = np.maximum(z, 0) if layer.activation == "relu" else z
            elif layer.kind == "scale":
                a = a * layer.factor
        out.append(a)
    return np.array(out)


def test_default_architecture_shapes():
    net = ChartNetwork((2, 49))
    assert net.flatten_width == 1568
    assert net.forward(np.ones((2, 49))).shape == (2,)
    assert net.forward(np.ones((3, 2, 49))).shape == (3, 2)
    kinds = [l.kind for l in net.layers]
    assert kinds == ["standardize"] + ["conv2d"] * 4 + ["flatten"] + ["dense"] * 3 + ["scale"]
    assert [l.kernel for l in net.layers if l.kind == "conv2d"] == [(3, 3), (5, 5), (8, 8),
                                                                      (10, 10)]


def test_zero_weights_give_zero_output():
    net = ChartNetwork((2, 49))
    for p in net.parameters():
        p[...] = 0
    x = np.random.default_rng(0).normal(size=(4, 2, 49))
    assert np.all(net.forward(x) == 0)


def test_deterministic_init():
    x = np.random.default_rng(1).random((2, 49))
    a = ChartNetwork((2, 49), seed=5).forward(x)
    b = ChartNetwork((2, 49), seed=5).forward(x)
    assert a.tobytes() == b.tobytes()


def test_shape_mismatch():
    with pytest.raises(ValueError):
        ChartNetwork((2, 49)).forward(np.zeros((1, 3, 49)))


@pytest.mark.parametrize("shape", [(2, 9), (3, 6)])
def test_forward_matches_naive_reference(shape):
    rng = np.random.default_rng(2)
    net = ChartNetwork(shape, mean=rng.normal(size=shape), std=rng.uniform(0.5, 2, shape),
                       output_scale=3.0, seed=3, dtype=np.float64, **TINY)
    for l in net.trainable():
        l.b[...] = rng.normal(scale=0.1, size=l.b.shape)
    x = rng.normal(size=(5,) + shape)
    np.testing.assert_allclose(net.forward(x), naive_forward(net, x), rtol=0, atol=1e-6)


def test_default_net_matches_naive_reference():
    rng = np.random.default_rng(4)
    net = ChartNetwork((2, 49), seed=1, dtype=np.float64)
    x = rng.random((1, 2, 49))
    np.testing.assert_allclose(net.forward(x), naive_forward(net, x), rtol=0, atol=1e-6)


def test_parameter_and_input_gradients():
    rng = np.random.default_rng(5)
    net = ChartNetwork((2, 7), seed=2, dtype=np.float64, **TINY)
    x = rng.normal(size=(3, 2, 7))
    w = rng.normal(size=(3, 2))

    def f():
        return float(np.sum(w * net.forward(x)))

    net.forward(x)
    gx = net.backward(w)
    analytic = net.flat_grad()
    theta = net.get_flat()
    idx = rng.choice(theta.size, 40, replace=False)
    h = 1e-6
    for i in idx:
        t = theta.copy()
        t[i] += h
        net.set_flat(t)
        up = f()
        t[i] -= 2 * h
        net.set_flat(t)
        down = f()
        num = (up - down) / (2 * h)
        assert abs(num - analytic[i]) <= 1e-4 * max(1.0, abs(num))
    net.set_flat(theta)
    for j in [(0, 0, 0), (1, 1, 3), (2, 0, 6)]:
        xp, xm = x.copy(), x.copy()
        xp[j] += h
        xm[j] -= h
        num = (np.sum(w * net.forward(xp)) - np.sum(w * net.forward(xm))) / (2 * h)
        assert abs(num - gx[j]) <= 1e-4 * max(1.0, abs(num))


def test_float32_close_to_float64():
    x = np.random.default_rng(6).random((4, 2, 49))
    a = ChartNetwork((2, 49), seed=0, dtype=np.float64).forward(x)
    b = ChartNetwork((2, 49), seed=0).forward(x)
    assert b.dtype == np.float32
    np.testing.assert_allclose(b, a, rtol=1e-3, atol=1e-3)


def test_serialization_roundtrip(tmp_path):
    rng = np.random.default_rng(7)
    net = ChartNetwork((2, 49), mean=rng.random((2, 49)), std=rng.random((2, 49)) + 1,
                       output_scale=10.0, seed=9)
    net.save(tmp_path / "m.ccfnet")
    back = ChartNetwork.load(tmp_path / "m.ccfnet")
    x = rng.random((3, 2, 49))
    np.testing.assert_array_equal(back.forward(x), net.forward(x))
    assert back.to_bytes() == net.to_bytes()
    assert net.to_bytes()[:8] == b"CCFNET\x00\x01"


def test_serialization_errors():
    data = ChartNetwork((2, 9), **TINY).to_bytes()
    with pytest.raises(ModelFormatError, match="magic"):
        ChartNetwork.from_bytes(b"X" + data[1:])
    with pytest.raises(ModelFormatError, match="truncated"):
        ChartNetwork.from_bytes(data[:-4])
    with pytest.raises(ModelFormatError, match="trailing"):
        ChartNetwork.from_bytes(data + b"\0\0\0\0")
    bad = bytearray(data)
    bad[8] = 7
    with pytest.raises(ModelFormatError, match="version"):
        ChartNetwork.from_bytes(bytes(bad))
