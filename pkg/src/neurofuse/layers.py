"""Feed-forward layer kernels with explicit forward and backward passes.

Every layer follows the same convention: ``forward`` returns ``(y, cache)``
where the cache holds exactly what ``backward`` needs, and ``backward``
returns ``(dx, grads)`` with ``grads`` keyed by parameter attribute name.
Layers process one sample at a time (no batch axis); volumes are
channel-last ``[d1, d2, d3, c]``.

Arithmetic follows the input dtype so float64 verification runs are
possible; production parameters are float32.
"""

import math

import numpy as np

from .errors import ShapeError


def glorot_uniform(shape, fan_in, fan_out, rng, dtype=np.float32):
    """Uniform init in [-limit, limit] with limit = sqrt(6/(fan_in+fan_out))."""
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


def conv_output_extent(d, k, s, padding):
    """Spatial output extent of a convolution along one axis."""
    if padding == "same":
        return -(-d // s)  # ceil(d / s)
    if d < k:
        raise ShapeError(f"valid convolution needs extent >= kernel, got {d} < {k}")
    return (d - k) // s + 1


def _same_padding(d, k, s):
    out = -(-d // s)
    total = max((out - 1) * s + k - d, 0)
    lo = total // 2
    return lo, total - lo


class Conv3D:
    """3D convolution over a channel-last volume.

    Kernels are ``[kx, ky, kz, c_in, c_out]``. Padding is "same"
    (stride s maps extent d to ceil(d/s)) or "valid". Kernel extents must
    be odd under same padding so the pad splits symmetrically.
    """

    def __init__(self, kernels, bias, stride=(1, 1, 1), padding="same"):
        if kernels.ndim != 5:
            raise ShapeError(f"conv kernels must be rank 5, got {kernels.ndim}")
        if padding not in ("same", "valid"):
            raise ValueError(f"unknown padding {padding!r}")
        if padding == "same" and any(k % 2 == 0 for k in kernels.shape[:3]):
            raise ShapeError(f"same padding needs odd kernel extents, got {kernels.shape[:3]}")
        if bias.shape != (kernels.shape[4],):
            raise ShapeError(f"bias shape {bias.shape} does not match c_out {kernels.shape[4]}")
        self.kernels = kernels
        self.bias = bias
        self.stride = tuple(int(s) for s in stride)
        self.padding = padding

    @classmethod
    def create(cls, c_in, c_out, kernel=(3, 3, 3), stride=(1, 1, 1), padding="same", rng=None):
        kx, ky, kz = kernel
        fan = kx * ky * kz
        kernels = glorot_uniform((kx, ky, kz, c_in, c_out), fan * c_in, fan * c_out, rng)
        bias = np.zeros(c_out, dtype=np.float32)
        return cls(kernels, bias, stride=stride, padding=padding)

    @property
    def c_in(self):
        return self.kernels.shape[3]

    @property
    def c_out(self):
        return self.kernels.shape[4]

    def output_shape(self, in_shape):
        """Output shape for a [d1,d2,d3,c_in] input, by arithmetic alone."""
        d = in_shape[:3]
        k = self.kernels.shape[:3]
        out = tuple(conv_output_extent(d[a], k[a], self.stride[a], self.padding) for a in range(3))
        if any(o < 1 for o in out):
            raise ShapeError(f"convolution of {in_shape} collapses to {out}")
        return out + (self.c_out,)

    def _pad(self, x):
        if self.padding == "valid":
            return x, ((0, 0),) * 3
        k = self.kernels.shape[:3]
        pads = tuple(_same_padding(x.shape[a], k[a], self.stride[a]) for a in range(3))
        if any(p != (0, 0) for p in pads):
            x = np.pad(x, pads + ((0, 0),))
        return x, pads

    def forward(self, x):
        if x.ndim != 4:
            raise ShapeError(f"conv input must be rank 4, got {x.ndim}")
        if x.shape[3] != self.c_in:
            raise ShapeError(f"conv expects {self.c_in} input channels, got {x.shape[3]}")
        out_sh = self.output_shape(x.shape)
        xp, pads = self._pad(x)
        kx, ky, kz = self.kernels.shape[:3]
        sx, sy, sz = self.stride
        o1, o2, o3, _ = out_sh
        y = np.zeros(out_sh, dtype=np.result_type(x, self.kernels))
        for i in range(kx):
            for j in range(ky):
                for l in range(kz):
                    xs = xp[i:i + (o1 - 1) * sx + 1:sx,
                            j:j + (o2 - 1) * sy + 1:sy,
                            l:l + (o3 - 1) * sz + 1:sz]
                    y += xs @ self.kernels[i, j, l]
        y += self.bias
        return y, (xp, pads, x.shape)

    def backward(self, cache, dy):
        xp, pads, x_shape = cache
        out_sh = self.output_shape(x_shape)
        if dy.shape != out_sh:
            raise ShapeError(f"conv backward got dy {dy.shape}, expected {out_sh}")
        kx, ky, kz = self.kernels.shape[:3]
        sx, sy, sz = self.stride
        o1, o2, o3 = out_sh[:3]
        dkernels = np.zeros_like(self.kernels, dtype=dy.dtype)
        dxp = np.zeros_like(xp)
        for i in range(kx):
            for j in range(ky):
                for l in range(kz):
                    sl = (slice(i, i + (o1 - 1) * sx + 1, sx),
                          slice(j, j + (o2 - 1) * sy + 1, sy),
                          slice(l, l + (o3 - 1) * sz + 1, sz))
                    xs = xp[sl]
                    dkernels[i, j, l] = np.tensordot(xs, dy, axes=([0, 1, 2], [0, 1, 2]))
                    dxp[sl] += dy @ self.kernels[i, j, l].T
        dx = dxp[pads[0][0]:xp.shape[0] - pads[0][1],
                 pads[1][0]:xp.shape[1] - pads[1][1],
                 pads[2][0]:xp.shape[2] - pads[2][1]]
        dbias = dy.sum(axis=(0, 1, 2))
        return np.ascontiguousarray(dx), {"kernels": dkernels, "bias": dbias}


class MaxPool3D:
    """Windowed max over spatial axes; ties go to the lowest flat index."""

    def __init__(self, window=(2, 2, 2), stride=None):
        self.window = tuple(int(w) for w in window)
        if any(w < 1 for w in self.window):
            raise ShapeError(f"pool window extents must be >= 1, got {self.window}")
        self.stride = self.window if stride is None else tuple(int(s) for s in stride)

    def output_shape(self, in_shape):
        d, w, s = in_shape[:3], self.window, self.stride
        for a in range(3):
            if d[a] < w[a]:
                raise ShapeError(f"pool window {w} exceeds input extents {d[:3]}")
        out = tuple((d[a] - w[a]) // s[a] + 1 for a in range(3))
        return out + (in_shape[3],)

    def _candidates(self, x, out_sh):
        # Window offsets enumerated row-major so argmax's first-max rule
        # picks the lowest input flat index on ties.
        wx, wy, wz = self.window
        sx, sy, sz = self.stride
        o1, o2, o3, _ = out_sh
        slices = []
        for i in range(wx):
            for j in range(wy):
                for l in range(wz):
                    slices.append(x[i:i + (o1 - 1) * sx + 1:sx,
                                    j:j + (o2 - 1) * sy + 1:sy,
                                    l:l + (o3 - 1) * sz + 1:sz])
        return np.stack(slices, axis=3)  # [o1, o2, o3, wx*wy*wz, c]

    def forward(self, x):
        if x.ndim != 4:
            raise ShapeError(f"pool input must be rank 4, got {x.ndim}")
        out_sh = self.output_shape(x.shape)
        cands = self._candidates(x, out_sh)
        arg = cands.argmax(axis=3)
        y = np.take_along_axis(cands, arg[:, :, :, None, :], axis=3)[:, :, :, 0, :]
        return y, (x.shape, arg)

    def backward(self, cache, dy):
        x_shape, arg = cache
        out_sh = self.output_shape(x_shape)
        if dy.shape != out_sh:
            raise ShapeError(f"pool backward got dy {dy.shape}, expected {out_sh}")
        wy, wz = self.window[1], self.window[2]
        sx, sy, sz = self.stride
        a, b, c, ch = np.indices(out_sh)
        ia = a * sx + arg // (wy * wz)
        ib = b * sy + (arg // wz) % wy
        ic = c * sz + arg % wz
        dx = np.zeros(x_shape, dtype=dy.dtype)
        np.add.at(dx, (ia, ib, ic, ch), dy)
        return dx


class Dense:
    """Fully connected layer on rank-1 inputs: y = x W + b."""

    def __init__(self, weights, bias):
        if weights.ndim != 2 or bias.shape != (weights.shape[1],):
            raise ShapeError(f"dense weights {weights.shape} / bias {bias.shape} inconsistent")
        self.weights = weights
        self.bias = bias

    @classmethod
    def create(cls, n_in, n_out, rng):
        return cls(glorot_uniform((n_in, n_out), n_in, n_out, rng),
                   np.zeros(n_out, dtype=np.float32))

    def forward(self, x):
        if x.shape != (self.weights.shape[0],):
            raise ShapeError(f"dense expects input {(self.weights.shape[0],)}, got {x.shape}")
        return x @ self.weights + self.bias, x

    def backward(self, cache, dy):
        x = cache
        if dy.shape != (self.weights.shape[1],):
            raise ShapeError(f"dense backward got dy {dy.shape}, expected {(self.weights.shape[1],)}")
        dx = self.weights @ dy
        return dx, {"weights": np.outer(x, dy), "bias": dy.copy()}


def relu_forward(x):
    return np.maximum(x, 0), x


def relu_backward(cache, dy):
    # Subgradient at 0 is 0.
    return dy * (cache > 0)


def softmax(logits):
    """Probability vector via max-shifted exponentials."""
    if logits.ndim != 1 or logits.size < 2:
        raise ShapeError(f"softmax expects a rank-1 tensor of >= 2 logits, got {logits.shape}")
    e = np.exp(logits - logits.max())
    return e / e.sum()


def softmax_backward(probs, dy):
    return probs * (dy - np.dot(dy, probs))


class Dropout:
    """Inverted dropout: survivors scaled by 1/(1-rate) during training."""

    def __init__(self, rate, rng_seed=0):
        if not 0.0 <= rate < 1.0:
            raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = float(rate)
        self.rng = np.random.Generator(np.random.PCG64(rng_seed))

    def forward(self, x, training):
        if not training or self.rate == 0.0:
            return x, None
        mask = self.rng.random(x.shape) >= self.rate
        return self.apply_mask(x, mask, self.rate), mask

    def backward(self, cache, dy):
        if cache is None:
            return dy
        return self.apply_mask(dy, cache, self.rate)

    @staticmethod
    def apply_mask(x, mask, rate):
        return x * mask / (1.0 - rate)


class TimeDistributed:
    """Applies a shared-parameter block independently to each frame.

    ``inner`` must expose ``forward(frame) -> (vector, cache)`` and
    ``backward(cache, dvector) -> (dframe, grads)``; parameter gradients
    are summed over frames since the parameters are shared.
    """

    def __init__(self, inner):
        self.inner = inner

    def forward(self, x):
        if x.ndim != 5:
            raise ShapeError(f"time-distributed input must be rank 5, got {x.ndim}")
        rows, caches = [], []
        for t in range(x.shape[0]):
            try:
                y, cache = self.inner.forward(x[t])
            except ShapeError as exc:
                raise ShapeError(f"frame {t}: {exc}") from exc
            rows.append(y)
            caches.append(cache)
        return np.stack(rows), caches

    def backward(self, caches, d_out):
        if d_out.shape[0] != len(caches):
            raise ShapeError(f"got {d_out.shape[0]} gradient rows for {len(caches)} frames")
        dxs, grads = [], None
        for t, cache in enumerate(caches):
            dx, g = self.inner.backward(cache, d_out[t])
            dxs.append(dx)
            if grads is None:
                grads = g
            else:
                for k in grads:
                    grads[k] = grads[k] + g[k]
        return np.stack(dxs), grads
