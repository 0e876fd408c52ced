"""Small numpy network with hand-written reverse-mode gradients.

Activations are kept channel-last, ``(batch, height, width, channels)``.
Every layer caches what its backward pass needs during ``forward``;
``backward`` stores the parameter gradients of that call in ``grads``.
"""

import struct

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

MAGIC = b"CCFNET\x00\x01"
VERSION = 1

# descriptor type / activation codes of the serialized model
_TYPE_CODES = {"standardize": 1, "conv2d": 2, "flatten": 3, "dense": 4, "scale": 5}
_ACT_CODES = {None: 0, "relu": 1}


class ModelFormatError(ValueError):
    pass


def same_padding(k):
    """``(before, after)`` zero padding that keeps the spatial size for kernel ``k``."""
    total = k - 1
    return total // 2, total - total // 2


class Layer:
    kind = None
    activation = None

    def params(self):
        return {}

    def zero_grad(self):
        self.grads = {k: np.zeros_like(v) for k, v in self.params().items()}

    def descriptor_shape(self):
        return ()


class Standardize(Layer):
    """Fixed per-element affine input normalisation (not trained)."""

    kind = "standardize"

    def __init__(self, mean, std):
        self.mean = np.asarray(mean, dtype=float)
        self.std = np.asarray(std, dtype=float)
        self.grads = {}

    def buffers(self):
        return {"mean": self.mean, "std": self.std}

    def descriptor_shape(self):
        return self.mean.shape

    def forward(self, x):
        return ((x - self.mean) / self.std)[..., None]

    def backward(self, g):
        return g[..., 0] / self.std


class Conv2D(Layer):
    """Stride-1 convolution with zero "same" padding.

    The kernel is applied row by row: for every (output row, input row) pair
    only the one kernel row that links them contributes, so rows of pure
    padding are never multiplied. On a 2-row input this is a handful of 1D
    convolutions instead of one im2col over mostly zeros.
    """

    kind = "conv2d"

    def __init__(self, in_channels, out_channels, kernel, activation="relu", rng=None):
        kh, kw = (kernel, kernel) if np.isscalar(kernel) else kernel
        self.in_channels, self.out_channels = in_channels, out_channels
        self.kernel = (kh, kw)
        self.activation = activation
        fan_in = in_channels * kh * kw
        limit = np.sqrt(6.0 / fan_in)
        rng = rng if rng is not None else np.random.default_rng(0)
        self.W = rng.uniform(-limit, limit, size=(kh, kw, in_channels, out_channels))
        self.b = np.zeros(out_channels)
        self.zero_grad()

    def params(self):
        return {"W": self.W, "b": self.b}

    def descriptor_shape(self):
        return self.W.shape

    def _row_pairs(self, h):
        ph0 = same_padding(self.kernel[0])[0]
        for r in range(h):
            for src in range(h):
                i = src - r + ph0
                if 0 <= i < self.kernel[0]:
                    yield r, src, i

    @staticmethod
    def _im2row(rows, kw, pad):
        """``(H, B, W, C)`` -> ``(H, B*W, kw*C)`` sliding windows along W."""
        h, bsz, w, c = rows.shape
        xp = np.pad(rows, ((0, 0), (0, 0), pad, (0, 0)))
        win = sliding_window_view(xp, kw, axis=2).transpose(0, 1, 2, 4, 3)
        return np.ascontiguousarray(win).reshape(h, bsz * w, kw * c)

    def forward(self, x):
        bsz, h, w, cin = x.shape
        kh, kw = self.kernel
        cols = self._im2row(x.transpose(1, 0, 2, 3), kw, same_padding(kw))
        wk = self.W.reshape(kh, kw * cin, self.out_channels)
        z = np.zeros((h, bsz * w, self.out_channels), dtype=cols.dtype)
        for r, src, i in self._row_pairs(h):
            z[r] += cols[src] @ wk[i]
        z += self.b
        z = z.reshape(h, bsz, w, self.out_channels).transpose(1, 0, 2, 3)
        self._cols, self._shape = cols, x.shape
        if self.activation == "relu":
            self._mask = z > 0
            return z * self._mask
        return z

    def backward(self, g):
        bsz, h, w, cin = self._shape
        kh, kw = self.kernel
        cout = self.out_channels
        if self.activation == "relu":
            g = g * self._mask
        gt = np.ascontiguousarray(g.transpose(1, 0, 2, 3))
        gflat = gt.reshape(h, bsz * w, cout)
        dwk = np.zeros((kh, kw * cin, cout), dtype=gflat.dtype)
        for r, src, i in self._row_pairs(h):
            dwk[i] += self._cols[src].T @ gflat[r]
        self.grads = {"W": dwk.reshape(self.W.shape), "b": gflat.sum(axis=(0, 1))}
        # input gradient: correlate g with the width-flipped kernel
        pw0, pw1 = same_padding(kw)
        gcols = self._im2row(gt, kw, (pw1, pw0))
        wflip = self.W[:, ::-1].transpose(0, 1, 3, 2).reshape(kh, kw * cout, cin)
        dx = np.zeros((h, bsz * w, cin), dtype=gflat.dtype)
        for r, src, i in self._row_pairs(h):
            dx[src] += gcols[r] @ wflip[i]
        return dx.reshape(h, bsz, w, cin).transpose(1, 0, 2, 3)


class Flatten(Layer):
    kind = "flatten"

    def forward(self, x):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, g):
        return g.reshape(self._shape)


class Dense(Layer):
    kind = "dense"

    def __init__(self, n_in, n_out, activation=None, rng=None):
        limit = np.sqrt(6.0 / n_in) if activation == "relu" else np.sqrt(3.0 / n_in)
        rng = rng if rng is not None else np.random.default_rng(0)
        self.W = rng.uniform(-limit, limit, size=(n_in, n_out))
        self.b = np.zeros(n_out)
        self.activation = activation
        self.zero_grad()

    def params(self):
        return {"W": self.W, "b": self.b}

    def descriptor_shape(self):
        return self.W.shape

    def forward(self, x):
        self._x = x
        z = x @ self.W + self.b
        if self.activation == "relu":
            self._mask = z > 0
            return z * self._mask
        return z

    def backward(self, g):
        if self.activation == "relu":
            g = g * self._mask
        self.grads = {"W": self._x.T @ g, "b": g.sum(axis=0)}
        return g @ self.W.T


class Scale(Layer):
    """Fixed output multiplier, so unit-scale activations map to meters."""

    kind = "scale"

    def __init__(self, factor):
        self.factor = np.atleast_1d(np.asarray(factor, dtype=float))
        self.grads = {}

    def buffers(self):
        return {"factor": self.factor}

    def descriptor_shape(self):
        return self.factor.shape

    def forward(self, x):
        return x * self.factor

    def backward(self, g):
        return g * self.factor


DEFAULT_CONV = ((8, 3), (8, 5), (8, 8), (16, 10))
DEFAULT_DENSE = (200, 100)


class ChartNetwork:
    """Convolutional chart function mapping an ``M x C`` magnitude image to 2D.

    Parameters
    ----------
    input_shape : (int, int)
        ``(M, C_bar)`` of the CIR feature.
    conv : sequence of (channels, kernel)
        Convolution stack, all ReLU.
    dense : sequence of int
        Hidden dense widths; the first is ReLU, the rest linear.
    dtype : numpy dtype
        Compute precision. float32 is about twice as fast; float64 is used
        for gradient checking.
    """

    def __init__(self, input_shape, conv=DEFAULT_CONV, dense=DEFAULT_DENSE, out_dim=2,
                 mean=0.0, std=1.0, output_scale=1.0, seed=0, dtype=np.float32):
        rng = np.random.default_rng(seed)
        m, c = input_shape
        self.input_shape = (m, c)
        self.layers = [Standardize(np.broadcast_to(mean, (m, c)).copy(),
                                   np.broadcast_to(std, (m, c)).copy())]
        ch = 1
        for out_ch, k in conv:
            self.layers.append(Conv2D(ch, out_ch, k, "relu", rng))
            ch = out_ch
        self.layers.append(Flatten())
        width = ch * m * c
        for i, n_out in enumerate(dense):
            self.layers.append(Dense(width, n_out, "relu" if i == 0 else None, rng))
            width = n_out
        self.layers.append(Dense(width, out_dim, None, rng))
        self.layers.append(Scale(np.full(out_dim, output_scale, dtype=float)))
        self.astype(dtype)

    def astype(self, dtype):
        """Cast every weight and buffer in place to ``dtype``."""
        self.dtype = np.dtype(dtype)
        for layer in self.layers:
            for name, value in vars(layer).items():
                if isinstance(value, np.ndarray) and value.dtype.kind == "f":
                    setattr(layer, name, value.astype(self.dtype))
            if layer.params():
                layer.zero_grad()
        return self

    @property
    def flatten_width(self):
        i = next(i for i, l in enumerate(self.layers) if isinstance(l, Flatten))
        conv = self.layers[i - 1]
        return conv.out_channels * self.input_shape[0] * self.input_shape[1]

    def trainable(self):
        return [l for l in self.layers if l.params()]

    def parameters(self):
        return [p for l in self.trainable() for p in l.params().values()]

    def gradients(self):
        return [l.grads[k] for l in self.trainable() for k in l.params()]

    def n_parameters(self):
        return sum(p.size for p in self.parameters())

    def zero_grad(self):
        for l in self.trainable():
            l.zero_grad()

    def forward(self, x):
        x = np.asarray(x, dtype=self.dtype)
        if x.ndim == 2:
            return self.forward(x[None])[0]
        if x.shape[1:] != self.input_shape:
            raise ValueError(f"expected input of shape (B, {self.input_shape[0]}, "
                             f"{self.input_shape[1]}), got {x.shape}")
        for layer in self.layers:
            x = layer.forward(x)
        return x

    __call__ = forward

    def backward(self, grad_out):
        g = grad_out
        for layer in reversed(self.layers):
            g = layer.backward(g)
        return g

    def get_flat(self):
        return np.concatenate([p.ravel() for p in self.parameters()])

    def set_flat(self, flat):
        i = 0
        for p in self.parameters():
            p[...] = flat[i:i + p.size].reshape(p.shape)
            i += p.size

    def flat_grad(self):
        return np.concatenate([g.ravel() for g in self.gradients()])

    # -- serialization ---------------------------------------------------

    def to_bytes(self):
        out = [MAGIC, struct.pack("<III", VERSION, len(self.layers), 2),
               struct.pack("<II", *self.input_shape)]
        blobs = []
        for layer in self.layers:
            shape = tuple(layer.descriptor_shape())
            extra = layer.kernel if isinstance(layer, Conv2D) else (0, 0)
            out.append(struct.pack("<BBB", _TYPE_CODES[layer.kind],
                                   _ACT_CODES[layer.activation], len(shape)))
            out.append(struct.pack(f"<{len(shape)}I", *shape))
            out.append(struct.pack("<II", *extra))
            arrays = layer.buffers() if hasattr(layer, "buffers") else layer.params()
            blobs.extend(arrays.values())
        for arr in blobs:
            out.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
        return b"".join(out)

    @classmethod
    def from_bytes(cls, data, dtype=np.float32):
        if data[:len(MAGIC)] != MAGIC:
            raise ModelFormatError("not a chart network file (bad magic)")
        off = len(MAGIC)
        version, n_layers, _ = struct.unpack_from("<III", data, off)
        off += 12
        if version != VERSION:
            raise ModelFormatError(f"unsupported model version {version}")
        input_shape = struct.unpack_from("<II", data, off)
        off += 8
        specs = []
        for _ in range(n_layers):
            code, act, ndim = struct.unpack_from("<BBB", data, off)
            off += 3
            shape = struct.unpack_from(f"<{ndim}I", data, off)
            off += 4 * ndim
            extra = struct.unpack_from("<II", data, off)
            off += 8
            specs.append((code, act, shape, extra))
        net = cls.__new__(cls)
        net.input_shape = tuple(input_shape)
        net.layers = []
        kinds = {v: k for k, v in _TYPE_CODES.items()}
        acts = {v: k for k, v in _ACT_CODES.items()}

        def take(shape):
            nonlocal off
            n = int(np.prod(shape))
            if off + 4 * n > len(data):
                raise ModelFormatError("model file truncated")
            arr = np.frombuffer(data, dtype="<f4", count=n, offset=off).astype(float)
            off += 4 * n
            return arr.reshape(shape)

        for code, act, shape, extra in specs:
            kind, activation = kinds.get(code), acts.get(act)
            if kind == "standardize":
                layer = Standardize(take(shape), take(shape))
            elif kind == "conv2d":
                kh, kw, cin, cout = shape
                layer = Conv2D(cin, cout, (kh, kw), activation)
                layer.W, layer.b = take(shape), take((cout,))
            elif kind == "flatten":
                layer = Flatten()
            elif kind == "dense":
                layer = Dense(shape[0], shape[1], activation)
                layer.W, layer.b = take(shape), take((shape[1],))
            elif kind == "scale":
                layer = Scale(take(shape))
            else:
                raise ModelFormatError(f"unknown layer type code {code}")
            layer.zero_grad()
            net.layers.append(layer)
        if off != len(data):
            raise ModelFormatError("trailing bytes after weight blobs")
        return net.astype(dtype)

    def save(self, path):
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path, dtype=np.float32):
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read(), dtype)
