"""Architecture construction and forward/backward orchestration.

Six architectures share three building blocks: a two-stage 3D conv block,
a three-layer recurrent stack (32 units; the first two layers return
sequences), and a fusion head (dense 64 -> relu -> dropout -> dense C ->
softmax). Multimodal variants concatenate a 128-wide MRI feature vector
with a 32-wide fMRI feature vector before the head.

Layer extents are planned by pure shape arithmetic (`shape_audit`) so the
full-size architecture can be audited without allocating parameters.
"""

import io
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, FormatError, LabelError, ShapeError, TruncatedFileError
from .layers import Conv3D, Dense, Dropout, MaxPool3D, TimeDistributed, relu_backward, relu_forward, softmax
from .recurrent import GRU, LSTM

ARCHITECTURES = ("mm-3dcnn-lstm", "mm-3dcnn-gru", "3dlstm", "3dgru", "3dcnn", "2dcnn")
_MULTIMODAL = ("mm-3dcnn-lstm", "mm-3dcnn-gru")
_FMRI_ONLY = ("3dlstm", "3dgru")
_MRI_ONLY = ("3dcnn", "2dcnn")

CONV_FILTERS = 32
MRI_FEATURE_WIDTH = 128
RNN_UNITS = 32

CHECKPOINT_MAGIC = b"NFSE0001"


@dataclass
class ModelConfig:
    """Declarative description of one architecture instance.

    mri_shape is spatial (d1, d2, d3); fmri_shape is (T, d1, d2, d3).
    The trailing channel extent of 1 is implicit.
    """

    architecture: str
    mri_shape: tuple | None = None
    fmri_shape: tuple | None = None
    num_classes: int = 3
    dropout_rate: float = 0.1
    seed: int = 0

    def __post_init__(self):
        self.architecture = self.architecture.lower()
        if self.architecture not in ARCHITECTURES:
            raise ConfigError(f"unknown architecture {self.architecture!r}")
        if self.num_classes < 2:
            raise ConfigError(f"num_classes must be >= 2, got {self.num_classes}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")
        if self.mri_shape is not None:
            self.mri_shape = tuple(int(d) for d in self.mri_shape)
            if len(self.mri_shape) != 3 or any(d < 1 for d in self.mri_shape):
                raise ConfigError(f"mri_shape must be 3 positive extents, got {self.mri_shape}")
        if self.fmri_shape is not None:
            self.fmri_shape = tuple(int(d) for d in self.fmri_shape)
            if len(self.fmri_shape) != 4 or any(d < 1 for d in self.fmri_shape):
                raise ConfigError(f"fmri_shape must be (T, d1, d2, d3), got {self.fmri_shape}")
        if self.uses_mri and self.mri_shape is None:
            raise ConfigError(f"{self.architecture} requires mri_shape")
        if self.uses_fmri and self.fmri_shape is None:
            raise ConfigError(f"{self.architecture} requires fmri_shape")
        if not self.uses_mri and self.mri_shape is not None:
            raise ConfigError(f"{self.architecture} takes no MRI input")
        if not self.uses_fmri and self.fmri_shape is not None:
            raise ConfigError(f"{self.architecture} takes no fMRI input")

    @property
    def uses_mri(self):
        return self.architecture in _MULTIMODAL + _MRI_ONLY

    @property
    def uses_fmri(self):
        return self.architecture in _MULTIMODAL + _FMRI_ONLY

    @property
    def recurrent_kind(self):
        if self.architecture in ("mm-3dcnn-lstm", "3dlstm"):
            return "lstm"
        if self.architecture in ("mm-3dcnn-gru", "3dgru"):
            return "gru"
        return None

    def to_text(self):
        lines = [f"architecture = {self.architecture}"]
        if self.mri_shape is not None:
            lines.append("mri_shape = " + ",".join(str(d) for d in self.mri_shape))
        if self.fmri_shape is not None:
            lines.append("fmri_shape = " + ",".join(str(d) for d in self.fmri_shape))
        lines.append(f"num_classes = {self.num_classes}")
        lines.append(f"dropout_rate = {self.dropout_rate!r}")
        lines.append(f"seed = {self.seed}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text):
        kv = parse_kv_text(text)
        try:
            return cls(
                architecture=kv["architecture"],
                mri_shape=_parse_extents(kv["mri_shape"]) if "mri_shape" in kv else None,
                fmri_shape=_parse_extents(kv["fmri_shape"]) if "fmri_shape" in kv else None,
                num_classes=int(kv["num_classes"]),
                dropout_rate=float(kv["dropout_rate"]),
                seed=int(kv["seed"]),
            )
        except KeyError as exc:
            raise ConfigError(f"config text missing key {exc}") from exc


def parse_kv_text(text):
    """Parse flat `key = value` text; '#' lines and blanks are ignored."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def _parse_extents(text):
    return tuple(int(p) for p in text.replace("x", ",").split(",") if p.strip())


@dataclass
class ConvBlockPlan:
    """Shape walk of conv(s2) -> pool -> conv(s1) -> pool -> flatten."""

    in_spatial: tuple
    kernel: tuple = field(init=False)
    h1: tuple = field(init=False)
    pool1_window: tuple = field(init=False)
    p1: tuple = field(init=False)
    pool2_window: tuple = field(init=False)
    p2: tuple = field(init=False)
    flat_width: int = field(init=False)

    def __post_init__(self):
        # Kernel extent 3 shrinks to 1 on singleton axes (the 2D path);
        # pool windows clamp to the running extent so small volumes and
        # singleton axes stay poolable.
        self.kernel = tuple(3 if d > 1 else 1 for d in self.in_spatial)
        self.h1 = tuple(-(-d // 2) for d in self.in_spatial)
        self.pool1_window = tuple(min(2, d) for d in self.h1)
        self.p1 = tuple(d // w for d, w in zip(self.h1, self.pool1_window))
        self.pool2_window = tuple(min(2, d) for d in self.p1)
        self.p2 = tuple(d // w for d, w in zip(self.p1, self.pool2_window))
        self.flat_width = math.prod(self.p2) * CONV_FILTERS


def shape_audit(config):
    """Feature/fusion widths of an architecture by arithmetic alone.

    Never allocates parameters, so it is safe at full scan resolution.
    """
    audit = {"num_classes": config.num_classes}
    fusion = 0
    if config.uses_mri:
        plan = ConvBlockPlan(config.mri_shape)
        audit["mri_plan"] = plan
        audit["mri_feature_width"] = MRI_FEATURE_WIDTH
        fusion += MRI_FEATURE_WIDTH
    if config.uses_fmri:
        frame_spatial = config.fmri_shape[1:]
        if config.architecture in _MULTIMODAL:
            plan = ConvBlockPlan(frame_spatial)
            audit["fmri_plan"] = plan
            audit["frame_width"] = plan.flat_width
        else:
            audit["frame_width"] = math.prod(frame_spatial)
        audit["fmri_feature_width"] = RNN_UNITS
        fusion += RNN_UNITS
    audit["fusion_width"] = fusion
    return audit


class ConvBlock:
    """conv(stride 2) -> relu -> pool -> conv -> relu -> pool -> flatten."""

    def __init__(self, conv1, pool1, conv2, pool2, flat_width):
        self.conv1 = conv1
        self.pool1 = pool1
        self.conv2 = conv2
        self.pool2 = pool2
        self.flat_width = flat_width

    @classmethod
    def from_plan(cls, plan, rng, c_in=1):
        conv1 = Conv3D.create(c_in, CONV_FILTERS, kernel=plan.kernel, stride=(2, 2, 2), rng=rng)
        pool1 = MaxPool3D(plan.pool1_window)
        conv2 = Conv3D.create(CONV_FILTERS, CONV_FILTERS, kernel=plan.kernel, stride=(1, 1, 1), rng=rng)
        pool2 = MaxPool3D(plan.pool2_window)
        return cls(conv1, pool1, conv2, pool2, plan.flat_width)

    def forward(self, x):
        h1, c_conv1 = self.conv1.forward(x)
        a1, c_relu1 = relu_forward(h1)
        p1, c_pool1 = self.pool1.forward(a1)
        h2, c_conv2 = self.conv2.forward(p1)
        a2, c_relu2 = relu_forward(h2)
        p2, c_pool2 = self.pool2.forward(a2)
        vec = p2.reshape(-1)
        cache = (c_conv1, c_relu1, c_pool1, c_conv2, c_relu2, c_pool2, p2.shape)
        return vec, cache

    def backward(self, cache, dvec):
        c_conv1, c_relu1, c_pool1, c_conv2, c_relu2, c_pool2, p2_shape = cache
        dp2 = dvec.reshape(p2_shape)
        da2 = self.pool2.backward(c_pool2, dp2)
        dh2 = relu_backward(c_relu2, da2)
        dp1, g_conv2 = self.conv2.backward(c_conv2, dh2)
        da1 = self.pool1.backward(c_pool1, dp1)
        dh1 = relu_backward(c_relu1, da1)
        dx, g_conv1 = self.conv1.backward(c_conv1, dh1)
        grads = {"conv1.kernels": g_conv1["kernels"], "conv1.bias": g_conv1["bias"],
                 "conv2.kernels": g_conv2["kernels"], "conv2.bias": g_conv2["bias"]}
        return dx, grads


@dataclass
class Prediction:
    probabilities: np.ndarray
    predicted_class: int


class Model:
    """Instantiated layer stacks for one ModelConfig."""

    def __init__(self, config):
        self.config = config
        self.audit = shape_audit(config)
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([config.seed, 0])))
        self._params = {}

        self.mri_block = None
        self.mri_dense = None
        if config.uses_mri:
            self.mri_block = ConvBlock.from_plan(self.audit["mri_plan"], rng)
            self.mri_dense = Dense.create(self.audit["mri_plan"].flat_width, MRI_FEATURE_WIDTH, rng)
            self._register("mri.conv1", self.mri_block.conv1, ("kernels", "bias"))
            self._register("mri.conv2", self.mri_block.conv2, ("kernels", "bias"))
            self._register("mri.dense", self.mri_dense, ("weights", "bias"))

        self.fmri_td = None
        self.rnn_stack = None
        if config.uses_fmri:
            if config.architecture in _MULTIMODAL:
                inner = ConvBlock.from_plan(self.audit["fmri_plan"], rng)
                self.fmri_td = TimeDistributed(inner)
                self._register("fmri.conv1", inner.conv1, ("kernels", "bias"))
                self._register("fmri.conv2", inner.conv2, ("kernels", "bias"))
            cell = LSTM if config.recurrent_kind == "lstm" else GRU
            width = self.audit["frame_width"]
            self.rnn_stack = [
                cell.create(width, RNN_UNITS, return_sequences=True, rng=rng),
                cell.create(RNN_UNITS, RNN_UNITS, return_sequences=True, rng=rng),
                cell.create(RNN_UNITS, RNN_UNITS, return_sequences=False, rng=rng),
            ]
            for idx, layer in enumerate(self.rnn_stack, 1):
                self._register(f"fmri.rnn{idx}", layer, layer.PARAM_NAMES)

        self.head_dense1 = Dense.create(self.audit["fusion_width"], 64, rng)
        dropout_seed = int(np.random.SeedSequence([config.seed, 1]).generate_state(1)[0])
        self.dropout = Dropout(config.dropout_rate, rng_seed=dropout_seed)
        self.head_dense2 = Dense.create(64, config.num_classes, rng)
        self._register("head.dense1", self.head_dense1, ("weights", "bias"))
        self._register("head.dense2", self.head_dense2, ("weights", "bias"))

    def _register(self, prefix, obj, attrs):
        for attr in attrs:
            self._params[f"{prefix}.{attr}"] = (obj, attr)

    def parameters(self):
        """Name -> array view of every trainable parameter, in declaration order."""
        return {name: getattr(obj, attr) for name, (obj, attr) in self._params.items()}

    def set_parameter(self, name, value):
        obj, attr = self._params[name]
        current = getattr(obj, attr)
        if current.shape != value.shape:
            raise ShapeError(f"parameter {name}: expected {current.shape}, got {value.shape}")
        setattr(obj, attr, np.ascontiguousarray(value, dtype=np.float32))

    @property
    def parameter_count(self):
        return sum(p.size for p in self.parameters().values())

    def _check_inputs(self, mri, fmri):
        if self.config.uses_mri:
            want = self.config.mri_shape + (1,)
            if mri is None or mri.shape != want:
                got = None if mri is None else mri.shape
                raise ShapeError(f"MRI branch: expected input {want}, got {got}")
        if self.config.uses_fmri:
            want = self.config.fmri_shape + (1,)
            if fmri is None or fmri.shape != want:
                got = None if fmri is None else fmri.shape
                raise ShapeError(f"fMRI branch: expected input {want}, got {got}")

    def forward(self, mri=None, fmri=None, training=False):
        """Run the full model on one sample; caches are kept when training."""
        self._check_inputs(mri, fmri)
        cache = {}
        features = []
        if self.config.uses_mri:
            flat, c_block = self.mri_block.forward(mri)
            v_mri, c_dense = self.mri_dense.forward(flat)
            cache["mri"] = (c_block, c_dense)
            cache["v_mri"] = v_mri
            features.append(v_mri)
        if self.config.uses_fmri:
            if self.fmri_td is not None:
                h_td, c_td = self.fmri_td.forward(fmri)
            else:
                h_td = fmri.reshape(fmri.shape[0], -1)
                c_td = None
            outs, rnn_caches = [], []
            seq = h_td
            for layer in self.rnn_stack:
                seq, c_rnn = layer.forward(seq)
                rnn_caches.append(c_rnn)
                outs.append(seq)
            v_fmri = seq
            cache["fmri"] = (c_td, rnn_caches)
            cache["v_fmri"] = v_fmri
            features.append(v_fmri)
        fused = features[0] if len(features) == 1 else np.concatenate(features)
        d1_pre, c_d1 = self.head_dense1.forward(fused)
        z1, c_relu = relu_forward(d1_pre)
        z2, c_drop = self.dropout.forward(z1, training)
        logits, c_d2 = self.head_dense2.forward(z2)
        probs = softmax(logits)
        cache.update(head=(c_d1, c_relu, c_drop, c_d2), probs=probs, d1_pre=d1_pre)
        pred = Prediction(probs, int(np.argmax(probs)))
        return pred, (cache if training else None)

    def backward(self, cache, label):
        """Gradients of sparse CE loss at `label` w.r.t. every parameter."""
        C = self.config.num_classes
        if not 0 <= label < C:
            raise LabelError(f"label {label} out of range for {C} classes")
        probs = cache["probs"]
        dlogits = probs.copy()
        dlogits[label] -= 1.0  # fused softmax + cross-entropy gradient

        c_d1, c_relu, c_drop, c_d2 = cache["head"]
        grads = {}
        dz2, g_d2 = self.head_dense2.backward(c_d2, dlogits)
        grads["head.dense2.weights"] = g_d2["weights"]
        grads["head.dense2.bias"] = g_d2["bias"]
        dz1 = self.dropout.backward(c_drop, dz2)
        dd1 = relu_backward(c_relu, dz1)
        dfused, g_d1 = self.head_dense1.backward(c_d1, dd1)
        grads["head.dense1.weights"] = g_d1["weights"]
        grads["head.dense1.bias"] = g_d1["bias"]

        offset = 0
        if self.config.uses_mri:
            dv_mri = dfused[offset:offset + MRI_FEATURE_WIDTH]
            offset += MRI_FEATURE_WIDTH
            c_block, c_dense = cache["mri"]
            dflat, g_dense = self.mri_dense.backward(c_dense, dv_mri)
            grads["mri.dense.weights"] = g_dense["weights"]
            grads["mri.dense.bias"] = g_dense["bias"]
            _, g_block = self.mri_block.backward(c_block, dflat)
            for key, value in g_block.items():
                grads[f"mri.{key}"] = value
        if self.config.uses_fmri:
            dv_fmri = dfused[offset:offset + RNN_UNITS]
            c_td, rnn_caches = cache["fmri"]
            d_seq = dv_fmri
            for idx in reversed(range(len(self.rnn_stack))):
                d_seq, g_rnn = self.rnn_stack[idx].backward(rnn_caches[idx], d_seq)
                for name, value in g_rnn.items():
                    grads[f"fmri.rnn{idx + 1}.{name}"] = value
            if self.fmri_td is not None:
                _, g_td = self.fmri_td.backward(c_td, d_seq)
                for key, value in g_td.items():
                    grads[f"fmri.{key}"] = value
        return grads


def build_model(config):
    return Model(config)


def save_checkpoint(model, path):
    """NFSE0001 checkpoint: magic, length-prefixed config text, raw tensors."""
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        text = model.config.to_text().encode("utf-8")
        fh.write(struct.pack("<Q", len(text)))
        fh.write(text)
        for array in model.parameters().values():
            write_tensor(fh, array)


def load_checkpoint(path):
    with open(path, "rb") as fh:
        magic = fh.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise FormatError(f"bad checkpoint magic {magic!r}")
        raw = _read_exact(fh, 8, "config length")
        (text_len,) = struct.unpack("<Q", raw)
        text = _read_exact(fh, text_len, "config block").decode("utf-8")
        config = ModelConfig.from_text(text)
        model = Model(config)
        for name in model.parameters():
            model.set_parameter(name, read_tensor(fh))
        return model


def write_tensor(fh, array):
    """One tensor as (u32 rank, u64 extents, little-endian float32 data)."""
    fh.write(struct.pack("<I", array.ndim))
    fh.write(struct.pack(f"<{array.ndim}Q", *array.shape))
    fh.write(np.ascontiguousarray(array, dtype="<f4").tobytes())


def read_tensor(fh):
    (rank,) = struct.unpack("<I", _read_exact(fh, 4, "tensor rank"))
    if not 1 <= rank <= 6:
        raise FormatError(f"tensor rank {rank} out of range")
    shape = struct.unpack(f"<{rank}Q", _read_exact(fh, 8 * rank, "tensor extents"))
    count = math.prod(shape)
    data = _read_exact(fh, 4 * count, "tensor data")
    return np.frombuffer(data, dtype="<f4").reshape(shape).astype(np.float32)


def _read_exact(fh, n, what):
    data = fh.read(n)
    if len(data) != n:
        raise TruncatedFileError(f"file ends inside {what} ({len(data)}/{n} bytes)")
    return data
