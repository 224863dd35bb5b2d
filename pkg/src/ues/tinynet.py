"""A small shared-trunk, multi-head network with manual backprop.

The trunk is a stack of ``tanh`` dense layers; each of the ``M`` heads is an
independent dense map from the trunk features to its output. Heads are
initialised from distinct sub-seeds, which is the only source of ensemble
diversity here.

Classification heads emit logits (softmax is applied by consumers). Regression
heads emit pre-sigmoid ``(K, H, W)`` grids.
"""

import hashlib
import json
import struct
import zlib
from dataclasses import asdict, dataclass, field

import numpy as np

from .probcore import InvalidInputError, sigmoid, softmax
from .uncertainty import CLASSIFICATION, REGRESSION, HeadBatch

CHECKPOINT_MAGIC = b"UESCKPT\x00"
CHECKPOINT_VERSION = 1


class TrainingDivergenceError(FloatingPointError):
    pass


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class NetSpec:
    mode: str = CLASSIFICATION
    input_dim: int = 2
    hidden: tuple = (64, 64)
    heads: int = 5
    n_classes: int = 2
    n_keypoints: int = 1
    grid: tuple = (32, 32)
    head_hidden: int = 0
    output_bias: float = 0.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        object.__setattr__(self, "grid", tuple(int(g) for g in self.grid))
        if self.mode not in (CLASSIFICATION, REGRESSION):
            raise InvalidInputError(f"unknown mode {self.mode!r}")
        if self.heads < 2:
            raise InvalidInputError("M >= 2 required")
        if self.input_dim < 1 or any(h < 1 for h in self.hidden) or self.head_hidden < 0:
            raise InvalidInputError("layer sizes must be >= 1")
        if self.mode == CLASSIFICATION and self.n_classes < 2:
            raise InvalidInputError("need at least two classes")
        if self.mode == REGRESSION and (self.n_keypoints < 1 or min(self.grid) < 1):
            raise InvalidInputError("need K >= 1 and a nonempty output grid")

    @property
    def event_shape(self):
        if self.mode == CLASSIFICATION:
            return (self.n_classes,)
        return (self.n_keypoints, *self.grid)

    @property
    def out_dim(self):
        return int(np.prod(self.event_shape))

    def to_dict(self):
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        d["grid"] = list(self.grid)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)

    def digest(self):
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


def _dense(rng, fan_in, fan_out):
    W = rng.normal(0.0, np.sqrt(1.0 / fan_in), size=(fan_in, fan_out))
    return W, np.zeros(fan_out)


@dataclass
class TinyNet:
    spec: NetSpec
    lr: float = 0.03
    momentum: float = 0.9
    nesterov: bool = False
    weight_decay: float = 0.0
    trunk: list = field(default_factory=list)  # [(W, b), ...]
    head_params: list = field(default_factory=list)  # per head: [(W, b), ...]
    velocity: list = None

    @classmethod
    def init(cls, spec, **opt):
        root = np.random.SeedSequence(spec.seed)
        trunk_seq, *head_seqs = root.spawn(spec.heads + 1)
        rng = np.random.default_rng(trunk_seq)
        trunk, fan_in = [], spec.input_dim
        for width in spec.hidden:
            trunk.append(_dense(rng, fan_in, width))
            fan_in = width
        heads = []
        for seq in head_seqs:
            hrng = np.random.default_rng(seq)
            layers, f = [], fan_in
            if spec.head_hidden:
                layers.append(_dense(hrng, f, spec.head_hidden))
                f = spec.head_hidden
            W, b = _dense(hrng, f, spec.out_dim)
            layers.append((W, b + spec.output_bias))
            heads.append(layers)
        net = cls(spec, trunk=trunk, head_params=heads, **opt)
        net.velocity = [np.zeros_like(p) for p in net.parameters()]
        return net

    def parameters(self):
        """Parameter arrays in declaration order: trunk layers, then head by head."""
        out = []
        for W, b in self.trunk:
            out += [W, b]
        for layers in self.head_params:
            for W, b in layers:
                out += [W, b]
        return out

    def parameter_names(self):
        names = []
        for i in range(len(self.trunk)):
            names += [f"trunk.{i}.W", f"trunk.{i}.b"]
        for m, layers in enumerate(self.head_params):
            for i in range(len(layers)):
                names += [f"head{m}.{i}.W", f"head{m}.{i}.b"]
        return names

    def n_parameters(self):
        return sum(p.size for p in self.parameters())

    # -- forward ---------------------------------------------------------
    def _flatten_input(self, x):
        x = np.asarray(x, dtype=np.float64)
        x = x.reshape(x.shape[0], -1)
        if x.shape[1] != self.spec.input_dim:
            raise InvalidInputError(f"input has {x.shape[1]} features, spec expects {self.spec.input_dim}")
        return x

    def forward_raw(self, x):
        """Pre-activation head outputs ``(B, M, *event)`` and a backprop cache."""
        h = self._flatten_input(x)
        acts = [h]
        for W, b in self.trunk:
            h = np.tanh(h @ W + b)
            acts.append(h)
        outs, head_acts = [], []
        for layers in self.head_params:
            g, ha = h, [h]
            for W, b in layers[:-1]:
                g = np.tanh(g @ W + b)
                ha.append(g)
            W, b = layers[-1]
            outs.append(g @ W + b)
            head_acts.append(ha)
        z = np.stack(outs, axis=1).reshape(h.shape[0], self.spec.heads, *self.spec.event_shape)
        return z, (acts, head_acts)

    def activate(self, z):
        if self.spec.mode == CLASSIFICATION:
            return softmax(z)
        return sigmoid(z)

    def forward(self, x):
        z, _ = self.forward_raw(x)
        return HeadBatch(self.activate(z), self.spec.mode)

    # -- backward --------------------------------------------------------
    def backward(self, grad_z, cache):
        """Parameter gradients (declaration order) for upstream ``dL/dz``."""
        acts, head_acts = cache
        B = acts[0].shape[0]
        grad_z = np.asarray(grad_z, dtype=np.float64)
        expected = (B, self.spec.heads, *self.spec.event_shape)
        if grad_z.shape != expected:
            raise InvalidInputError(f"gradient shape {grad_z.shape} != forward output {expected}")
        if not np.all(np.isfinite(grad_z)):
            raise TrainingDivergenceError("non-finite gradient")
        gz = grad_z.reshape(B, self.spec.heads, -1)
        head_grads = []
        d_trunk = np.zeros_like(acts[-1])
        for m, layers in enumerate(self.head_params):
            ha = head_acts[m]
            g = gz[:, m]
            grads = []
            for li in range(len(layers) - 1, -1, -1):
                W, _ = layers[li]
                grads.append((ha[li].T @ g, g.sum(axis=0)))
                g = g @ W.T
                if li > 0:
                    g = g * (1.0 - ha[li] ** 2)
            head_grads.append(grads[::-1])
            d_trunk += g
        trunk_grads = []
        g = d_trunk
        for li in range(len(self.trunk) - 1, -1, -1):
            W, _ = self.trunk[li]
            g = g * (1.0 - acts[li + 1] ** 2)
            trunk_grads.append((acts[li].T @ g, g.sum(axis=0)))
            g = g @ W.T
        trunk_grads = trunk_grads[::-1]
        out = []
        for gW, gb in trunk_grads:
            out += [gW, gb]
        for grads in head_grads:
            for gW, gb in grads:
                out += [gW, gb]
        return out

    def step(self, grads):
        """SGD with momentum (``v <- mu v + g``; ``p <- p - lr v``), in place."""
        for p, v, g in zip(self.parameters(), self.velocity, grads):
            if self.weight_decay:
                g = g + self.weight_decay * p
            v *= self.momentum
            v += g
            p -= self.lr * (g + self.momentum * v if self.nesterov else v)

    def backward_and_step(self, grad_z, cache):
        grads = self.backward(grad_z, cache)
        if not all(np.all(np.isfinite(g)) for g in grads):
            raise TrainingDivergenceError("non-finite parameter gradient")
        self.step(grads)
        return self

    def copy(self):
        return load_checkpoint(save_checkpoint(self))

    # -- checkpoints -----------------------------------------------------
    def to_bytes(self, meta=None):
        return save_checkpoint(self, meta)


def save_checkpoint(net, meta=None):
    """Serialise parameters and optimiser state.

    Layout: magic, ``<I`` version, ``<I`` header length, JSON header (spec,
    spec hash, optimiser settings, array shapes, user ``meta``), then all
    parameter arrays and all velocity arrays as little-endian float64 in
    declaration order, then a ``<I`` CRC32 of everything before it.
    """
    params = net.parameters()
    header = {
        "spec": net.spec.to_dict(),
        "spec_hash": net.spec.digest(),
        "optimizer": {
            "lr": net.lr,
            "momentum": net.momentum,
            "nesterov": net.nesterov,
            "weight_decay": net.weight_decay,
        },
        "shapes": [list(p.shape) for p in params],
        "meta": meta or {},
    }
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    parts = [CHECKPOINT_MAGIC, struct.pack("<II", CHECKPOINT_VERSION, len(hbytes)), hbytes]
    for arr in params + list(net.velocity):
        parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def read_checkpoint_header(blob):
    if len(blob) < len(CHECKPOINT_MAGIC) + 12 or not blob.startswith(CHECKPOINT_MAGIC):
        raise CheckpointError("corrupt checkpoint stream: bad magic or too short")
    off = len(CHECKPOINT_MAGIC)
    version, hlen = struct.unpack_from("<II", blob, off)
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"checkpoint version {version} unsupported (expected {CHECKPOINT_VERSION})")
    off += 8
    if len(blob) < off + hlen:
        raise CheckpointError("corrupt checkpoint stream: truncated header")
    try:
        header = json.loads(blob[off:off + hlen])
    except ValueError as exc:
        raise CheckpointError(f"corrupt checkpoint stream: {exc}") from None
    return header, off + hlen


def load_checkpoint(blob):
    blob = bytes(blob)
    header, off = read_checkpoint_header(blob)
    shapes = [tuple(s) for s in header["shapes"]]
    n = sum(int(np.prod(s)) for s in shapes)
    if len(blob) != off + 2 * n * 8 + 4:
        raise CheckpointError("corrupt checkpoint stream: unexpected length")
    (crc,) = struct.unpack_from("<I", blob, len(blob) - 4)
    if crc != zlib.crc32(blob[:-4]):
        raise CheckpointError("corrupt checkpoint stream: checksum mismatch")
    spec = NetSpec.from_dict(header["spec"])
    if spec.digest() != header["spec_hash"]:
        raise CheckpointError("corrupt checkpoint stream: spec hash mismatch")
    flat = np.frombuffer(blob, dtype="<f8", count=2 * n, offset=off).astype(np.float64)
    arrays, pos = [], 0
    for s in shapes + shapes:
        k = int(np.prod(s))
        arrays.append(flat[pos:pos + k].reshape(s).copy())
        pos += k
    net = TinyNet.init(spec, **header["optimizer"])
    if [p.shape for p in net.parameters()] != shapes:
        raise CheckpointError("checkpoint arrays do not match the network spec")
    for dst, src in zip(net.parameters(), arrays[: len(shapes)]):
        dst[...] = src
    net.velocity = arrays[len(shapes):]
    return net
