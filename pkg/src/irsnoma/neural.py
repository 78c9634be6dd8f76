"""Small dense networks in float64 numpy with exact reverse-mode gradients.

Only what the actor/critic agents need: fully connected layers, a handful of
activations, Adam, soft target updates and a versioned binary format.

An activation tag is one of ``relu``, ``tanh``, ``linear``, ``softmax``, or a
split head such as ``softmax:3|tanh:4`` that applies different activations to
consecutive slices of the layer output (used by the joint single-agent actor).
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

MAGIC = b"MLPK"
FORMAT_VERSION = 1
ACTIVATIONS = ("relu", "tanh", "linear", "softmax")


class StaleTapeError(RuntimeError):
    pass


class CheckpointError(ValueError):
    pass


def parse_activation(tag: str, width: int) -> list[tuple[str, int]]:
    if "|" not in tag and ":" not in tag:
        if tag not in ACTIVATIONS:
            raise ValueError(f"unknown activation {tag!r}")
        return [(tag, width)]
    segs = []
    for part in tag.split("|"):
        name, _, n = part.partition(":")
        if name not in ACTIVATIONS:
            raise ValueError(f"unknown activation {name!r}")
        segs.append((name, int(n)))
    if sum(n for _, n in segs) != width:
        raise ValueError(f"activation {tag!r} does not cover width {width}")
    return segs


def _act(name: str, z: np.ndarray) -> np.ndarray:
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "tanh":
        return np.tanh(z)
    if name == "softmax":
        e = np.exp(z - z.max(axis=-1, keepdims=True))
        return e / e.sum(axis=-1, keepdims=True)
    return z


def _act_grad(name: str, z: np.ndarray, y: np.ndarray, g: np.ndarray) -> np.ndarray:
    if name == "relu":
        return g * (z > 0.0)
    if name == "tanh":
        return g * (1.0 - y * y)
    if name == "softmax":
        return y * (g - (g * y).sum(axis=-1, keepdims=True))
    return g


def _slices(segs):
    start = 0
    for name, n in segs:
        yield name, slice(start, start + n)
        start += n


def apply_activation(tag: str, z: np.ndarray) -> np.ndarray:
    segs = parse_activation(tag, z.shape[-1])
    if len(segs) == 1:
        return _act(segs[0][0], z)
    return np.concatenate([_act(name, z[..., sl]) for name, sl in _slices(segs)], axis=-1)


@dataclass
class Tape:
    net_id: int
    version: int
    inputs: list = field(default_factory=list)
    pre: list = field(default_factory=list)
    out: list = field(default_factory=list)
    squeeze: bool = False
    used: bool = False


class Mlp:
    """Stack of affine layers; ``weights[i]`` has shape (fan_in, fan_out)."""

    def __init__(self, weights: Sequence[np.ndarray], biases: Sequence[np.ndarray],
                 activations: Sequence[str]):
        if not (len(weights) == len(biases) == len(activations)) or not weights:
            raise ValueError("need matching, non-empty weights/biases/activations")
        self.weights = [np.array(w, dtype=np.float64) for w in weights]
        self.biases = [np.array(b, dtype=np.float64).reshape(-1) for b in biases]
        self.activations = list(activations)
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape[0] != w.shape[1]:
                raise ValueError(f"layer {i}: weight {w.shape} and bias {b.shape} disagree")
            if i and self.weights[i - 1].shape[1] != w.shape[0]:
                raise ValueError(f"layer {i} input {w.shape[0]} != previous output")
            parse_activation(self.activations[i], w.shape[1])
        self._version = 0

    @property
    def sizes(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[1]

    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def touch(self):
        self._version += 1

    def same_architecture(self, other: "Mlp") -> bool:
        return self.sizes == other.sizes and self.activations == other.activations

    def copy(self) -> "Mlp":
        return Mlp(self.weights, self.biases, self.activations)

    def checksum(self) -> int:
        crc = 0
        for p in self.params():
            crc = zlib.crc32(np.ascontiguousarray(p).tobytes(), crc)
        return crc

    def forward(self, x, pre_head: bool = False):
        """Evaluate the network on a vector or a (batch, in_dim) array.

        Returns ``(y, tape)``. With ``pre_head`` the final activation is
        skipped and the raw last-layer output is returned (no usable tape).
        """
        x = np.asarray(x, dtype=np.float64)
        squeeze = x.ndim == 1
        if squeeze:
            x = x[None, :]
        if x.shape[-1] != self.in_dim:
            raise ValueError(f"input dimension {x.shape[-1]} != {self.in_dim}")
        tape = Tape(id(self), self._version, squeeze=squeeze)
        h = x
        last = len(self.weights) - 1
        for i, (w, b, tag) in enumerate(zip(self.weights, self.biases, self.activations)):
            z = h @ w + b
            tape.inputs.append(h)
            tape.pre.append(z)
            if pre_head and i == last:
                tape.used = True
                return (z[0] if squeeze else z), tape
            h = apply_activation(tag, z)
            tape.out.append(h)
        return (h[0] if squeeze else h), tape

    def __call__(self, x):
        return self.forward(x)[0]

    def backward(self, tape: Tape, upstream, param_grads: bool = True, head_grad=None):
        """Gradients of ``sum(upstream * y)`` for the pass recorded in ``tape``.

        ``head_grad``, if given, is an extra gradient with respect to the
        last layer's pre-activation output. Returns ``(grads, dx)`` with
        ``grads`` ordered like :meth:`params` (``None`` entries when
        ``param_grads`` is off). A tape can be consumed once, and only while
        the parameters are unchanged.
        """
        if tape.used or tape.net_id != id(self) or tape.version != self._version:
            raise StaleTapeError("tape is stale: already used or parameters changed since forward")
        tape.used = True
        g = np.asarray(upstream, dtype=np.float64)
        if tape.squeeze:
            g = g[None, :]
        grads: list[np.ndarray] = [None] * (2 * len(self.weights))
        for i in range(len(self.weights) - 1, -1, -1):
            z, y = tape.pre[i], tape.out[i]
            segs = parse_activation(self.activations[i], z.shape[-1])
            if len(segs) == 1:
                g = _act_grad(segs[0][0], z, y, g)
            else:
                g = np.concatenate([_act_grad(n, z[:, sl], y[:, sl], g[:, sl])
                                    for n, sl in _slices(segs)], axis=-1)
            if head_grad is not None and i == len(self.weights) - 1:
                hg = np.asarray(head_grad, dtype=np.float64)
                g = g + (hg[None, :] if tape.squeeze else hg)
            if param_grads:
                grads[2 * i] = tape.inputs[i].T @ g
                grads[2 * i + 1] = g.sum(axis=0)
            g = g @ self.weights[i].T
        return grads, (g[0] if tape.squeeze else g)


def init_mlp(sizes: Sequence[int], activations: Sequence[str], rng: np.random.Generator) -> Mlp:
    """Weights uniform in +-1/sqrt(fan_in), biases zero."""
    if len(sizes) - 1 != len(activations):
        raise ValueError("need one activation per layer")
    ws, bs = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        lim = 1.0 / np.sqrt(fan_in)
        ws.append(rng.uniform(-lim, lim, size=(fan_in, fan_out)))
        bs.append(np.zeros(fan_out))
    return Mlp(ws, bs, activations)


@dataclass
class AdamState:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    @classmethod
    def for_net(cls, net: Mlp, lr: float) -> "AdamState":
        return cls(lr, m=[np.zeros_like(p) for p in net.params()],
                   v=[np.zeros_like(p) for p in net.params()])


def clip_by_global_norm(grads: list, max_norm: Optional[float]) -> list:
    if not max_norm:
        return grads
    norm = np.sqrt(sum(float(np.vdot(g, g)) for g in grads))
    if norm <= max_norm:
        return grads
    return [g * (max_norm / norm) for g in grads]


def adam_update(net: Mlp, grads: list, state: AdamState) -> None:
    """One bias-corrected Adam descent step, in place."""
    params = net.params()
    if len(grads) != len(params) or any(g.shape != p.shape for g, p in zip(grads, params)):
        raise ValueError("gradient shapes do not match parameters")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    net.touch()


def soft_update(target: Mlp, source: Mlp, tau: float) -> None:
    """``target <- tau * source + (1 - tau) * target`` elementwise."""
    if not target.same_architecture(source):
        raise ValueError("soft update between different architectures")
    if not 0.0 <= tau <= 1.0:
        raise ValueError("tau must lie in [0, 1]")
    for t, s in zip(target.params(), source.params()):
        if tau == 1.0:
            t[...] = s
        else:
            t *= 1.0 - tau
            t += tau * s
    target.touch()


# Binary layout, all little-endian:
#   b"MLPK" | u16 version | u32 n_layers
#   per layer: u32 rows | u32 cols | u16 len + utf-8 activation tag | f64[rows*cols] W (row-major) | f64[cols] b
#   u8 has_adam; if set: u64 t | f64 lr, beta1, beta2, eps | per layer f64 mW, mb, vW, vb
#   u32 crc32 of everything above

def serialize(net: Mlp, adam: Optional[AdamState] = None) -> bytes:
    out = [MAGIC, struct.pack("<HI", FORMAT_VERSION, len(net.weights))]
    for w, b, tag in zip(net.weights, net.biases, net.activations):
        t = tag.encode()
        out.append(struct.pack("<IIH", w.shape[0], w.shape[1], len(t)) + t)
        out.append(w.astype("<f8").tobytes(order="C"))
        out.append(b.astype("<f8").tobytes())
    if adam is None:
        out.append(b"\x00")
    else:
        out.append(b"\x01" + struct.pack("<Q4d", adam.t, adam.lr, adam.beta1, adam.beta2, adam.eps))
        for i in range(len(net.weights)):
            for arr in (adam.m[2 * i], adam.m[2 * i + 1], adam.v[2 * i], adam.v[2 * i + 1]):
                out.append(arr.astype("<f8").tobytes(order="C"))
    body = b"".join(out)
    return body + struct.pack("<I", zlib.crc32(body))


class _Reader:
    def __init__(self, data: bytes):
        self.data, self.pos = data, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError("truncated network stream")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def floats(self, shape) -> np.ndarray:
        n = int(np.prod(shape))
        return np.frombuffer(self.take(8 * n), dtype="<f8").astype(np.float64).reshape(shape)


def deserialize(data: bytes) -> tuple[Mlp, Optional[AdamState]]:
    if len(data) < 4 + 6 + 4 or data[:4] != MAGIC:
        raise CheckpointError("not a network stream (bad magic)")
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    r = _Reader(body)
    r.take(4)
    version, n_layers = r.unpack("<HI")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported network format version {version} (expected {FORMAT_VERSION})")
    if zlib.crc32(body) != crc:
        raise CheckpointError("network stream is corrupt (checksum mismatch)")
    ws, bs, tags = [], [], []
    for _ in range(n_layers):
        rows, cols, tlen = r.unpack("<IIH")
        tags.append(r.take(tlen).decode())
        ws.append(r.floats((rows, cols)))
        bs.append(r.floats((cols,)))
    net = Mlp(ws, bs, tags)
    (has_adam,) = r.unpack("<B")
    adam = None
    if has_adam:
        t, lr, b1, b2, eps = r.unpack("<Q4d")
        adam = AdamState(lr, b1, b2, eps, t)
        m, v = [], []
        for w, b in zip(ws, bs):
            m += [r.floats(w.shape), r.floats(b.shape)]
            v += [r.floats(w.shape), r.floats(b.shape)]
        adam.m, adam.v = m, v
    if r.pos != len(body):
        raise CheckpointError("trailing bytes in network stream")
    return net, adam
