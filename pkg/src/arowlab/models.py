"""Dense relu networks: logits, class predictions and class probabilities."""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad

CHECKPOINT_MAGIC = b"AROWCKPT"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class MlpSpec:
    input_dim: int
    hidden: tuple[int, ...]
    num_classes: int
    seed: int = 0
    activation: str = "relu"

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.num_classes < 2:
            raise ValueError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.input_dim < 1 or any(h < 1 for h in self.hidden):
            raise ValueError(f"all layer widths must be >= 1, got {self.widths}")
        if self.activation != "relu":
            raise ValueError(f"only relu activation is supported, got {self.activation!r}")

    @property
    def widths(self):
        return (self.input_dim, *self.hidden, self.num_classes)


@dataclass
class ModelParams:
    """Per-layer ``(W, b)`` pairs.  Leaves are arrays, or Tensors while on a tape."""

    spec: MlpSpec
    layers: list = field(default_factory=list)

    @property
    def num_params(self):
        return sum(w.size + b.size for w, b in self.layers)

    def flatten(self):
        parts = []
        for w, b in self.layers:
            parts.append(np.ravel(_raw(w)))
            parts.append(np.ravel(_raw(b)))
        return np.concatenate(parts)

    @classmethod
    def unflatten(cls, spec, flat):
        flat = np.asarray(flat, dtype=np.float64)
        expected = expected_num_params(spec)
        if flat.shape != (expected,):
            raise ad.ShapeError(f"flat vector has shape {flat.shape}, expected ({expected},)")
        layers, pos = [], 0
        for fan_in, fan_out in zip(spec.widths[:-1], spec.widths[1:]):
            w = flat[pos:pos + fan_in * fan_out].reshape(fan_in, fan_out).copy()
            pos += fan_in * fan_out
            b = flat[pos:pos + fan_out].copy()
            pos += fan_out
            layers.append((w, b))
        return cls(spec, layers)

    def watch(self, tape):
        """Copy of these parameters with every leaf registered on ``tape``."""
        return ModelParams(self.spec, [(tape.watch(w), tape.watch(b)) for w, b in self.layers])

    def copy(self):
        return ModelParams(self.spec, [(np.array(_raw(w)), np.array(_raw(b))) for w, b in self.layers])


def _raw(x):
    return x.data if isinstance(x, ad.Tensor) else np.asarray(x)


def expected_num_params(spec):
    w = spec.widths
    return sum(a * b + b for a, b in zip(w[:-1], w[1:]))


def init(spec, seed=None):
    """He-normal weights (sd = sqrt(2 / fan_in)) and zero biases."""
    rng = np.random.default_rng(spec.seed if seed is None else seed)
    layers = []
    for fan_in, fan_out in zip(spec.widths[:-1], spec.widths[1:]):
        w = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, fan_out))
        layers.append((w, np.zeros(fan_out)))
    return ModelParams(spec, layers)


def forward(params, x):
    x = ad.as_tensor(x)
    if x.data.ndim != 2 or x.shape[1] != params.spec.input_dim:
        raise ad.ShapeError(f"input has shape {x.shape}, model expects [B, {params.spec.input_dim}]")
    h = x
    last = len(params.layers) - 1
    for i, (w, b) in enumerate(params.layers):
        h = ad.add_bias(ad.matmul(h, w), b)
        if i < last:
            h = ad.relu(h)
    return h


def logits_of(params, x):
    """Plain-array logits; never records on a tape."""
    h = np.asarray(x, dtype=np.float64)
    if h.ndim != 2 or h.shape[1] != params.spec.input_dim:
        raise ad.ShapeError(f"input has shape {h.shape}, model expects [B, {params.spec.input_dim}]")
    last = len(params.layers) - 1
    for i, (w, b) in enumerate(params.layers):
        h = h @ _raw(w) + _raw(b)
        if i < last:
            h = np.maximum(h, 0.0)
    return h


def predict_logits(logits):
    # np.argmax returns the first maximal index: ties go to the lowest class.
    return np.argmax(np.asarray(logits), axis=1)


def predict(params, x):
    return predict_logits(logits_of(params, x))


def softmax_np(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    return np.exp(z - np.log(np.exp(z).sum(axis=1, keepdims=True)))


def probs(params, x):
    return softmax_np(logits_of(params, x))


class Model:
    """Callable view of a parameter set, mapping inputs to logits Tensors."""

    def __init__(self, params):
        self.params = params

    def __call__(self, x):
        return forward(self.params, x)

    @property
    def spec(self):
        return self.params.spec

    def predict(self, x):
        return predict(self.params, x)

    def probs(self, x):
        return probs(self.params, x)


# checkpoints ------------------------------------------------------------------
#
# layout: MAGIC(8) | version u32 LE | header length u32 LE | header JSON (utf-8)
#         | for each layer: W then b as little-endian float64, row-major

def to_bytes(params):
    spec = params.spec
    header = {
        "format_version": CHECKPOINT_VERSION,
        "spec": {**asdict(spec), "hidden": list(spec.hidden)},
        "arrays": [],
    }
    blobs = []
    for i, (w, b) in enumerate(params.layers):
        for name, arr in ((f"W{i}", _raw(w)), (f"b{i}", _raw(b))):
            header["arrays"].append({"name": name, "shape": list(arr.shape)})
            blobs.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    head = json.dumps(header, sort_keys=True).encode()
    return b"".join([CHECKPOINT_MAGIC, struct.pack("<II", CHECKPOINT_VERSION, len(head)), head, *blobs])


def from_bytes(buf):
    if buf[:8] != CHECKPOINT_MAGIC:
        raise ValueError("not a checkpoint file (bad magic)")
    version, hlen = struct.unpack_from("<II", buf, 8)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    header = json.loads(buf[16:16 + hlen].decode())
    s = header["spec"]
    spec = MlpSpec(s["input_dim"], tuple(s["hidden"]), s["num_classes"], s["seed"], s["activation"])
    pos = 16 + hlen
    arrays = []
    for entry in header["arrays"]:
        shape = tuple(entry["shape"])
        n = int(np.prod(shape)) if shape else 1
        end = pos + 8 * n
        if end > len(buf):
            raise ValueError(f"checkpoint truncated while reading {entry['name']} at offset {pos}")
        arrays.append(np.frombuffer(buf[pos:end], dtype="<f8").astype(np.float64).reshape(shape))
        pos = end
    layers = list(zip(arrays[0::2], arrays[1::2]))
    params = ModelParams(spec, layers)
    if params.num_params != expected_num_params(spec):
        raise ValueError("checkpoint arrays do not match the stored network spec")
    return params


def save(params, path):
    from .io import atomic_write_bytes
    atomic_write_bytes(path, to_bytes(params))


def load(path):
    with open(path, "rb") as f:
        return from_bytes(f.read())
