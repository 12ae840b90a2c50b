"""Small differentiable policy/value networks, gradients, Adam, and checkpoints.

Reverse-mode differentiation is delegated to torch; everything else (layer
stack, heads, clipping, the optimizer, the on-disk format) lives here.
"""
from __future__ import annotations

import hashlib
import json
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from .errors import CheckpointError, NumericError, ProtocolError

HEAD_KINDS = ("logits", "value", "qvalues", "mean", "critic")
GRAD_CLIP_NORM = 40.0
LOG_STD_INIT = -0.5


@dataclass(frozen=True)
class NetworkSpec:
    """Layer stack: conv* -> flatten [+ action] -> dense* -> heads."""

    input_shape: tuple = (84, 84, 3)
    convs: tuple = ((16, 8, 4), (32, 4, 2))
    hidden: tuple = (256,)
    heads: tuple = ("logits", "value")
    n_actions: int = 9
    action_dim: int = 2
    activation: str = "relu"

    def __post_init__(self):
        for h in self.heads:
            if h not in HEAD_KINDS:
                raise ProtocolError(f"unknown head kind {h!r}")
        if "critic" in self.heads and len(self.heads) != 1:
            raise ProtocolError("a critic network carries only the critic head")
        if self.convs and len(self.input_shape) != 3:
            raise ProtocolError("conv layers need an (H, W, C) input")
        if self.activation not in _ACTIVATIONS:
            raise ProtocolError(f"unknown activation {self.activation!r}")

    @property
    def is_image(self) -> bool:
        return len(self.input_shape) == 3

    def canonical(self) -> str:
        d = asdict(self)
        return json.dumps(d, sort_keys=True, separators=(",", ":"))

    def hash(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()[:16]

    @classmethod
    def from_json(cls, text: str) -> "NetworkSpec":
        d = json.loads(text)
        d["input_shape"] = tuple(d["input_shape"])
        d["convs"] = tuple(tuple(c) for c in d["convs"])
        d["hidden"] = tuple(d["hidden"])
        d["heads"] = tuple(d["heads"])
        return cls(**d)

    def feature_size(self) -> int:
        if not self.is_image:
            return int(np.prod(self.input_shape))
        h, w, c = self.input_shape
        for filters, k, s in self.convs:
            h, w, c = (h - k) // s + 1, (w - k) // s + 1, filters
            if h <= 0 or w <= 0:
                raise ProtocolError("conv stack shrinks the input below one cell")
        return h * w * c

    def param_shapes(self) -> dict:
        shapes = {}
        c_in = self.input_shape[-1] if self.is_image else None
        for i, (filters, k, _) in enumerate(self.convs):
            shapes[f"conv{i}.w"] = (filters, c_in, k, k)
            shapes[f"conv{i}.b"] = (filters,)
            c_in = filters
        width = self.feature_size() + (self.action_dim if "critic" in self.heads else 0)
        for i, units in enumerate(self.hidden):
            shapes[f"dense{i}.w"] = (units, width)
            shapes[f"dense{i}.b"] = (units,)
            width = units
        out = {"logits": self.n_actions, "value": 1, "qvalues": self.n_actions, "mean": self.action_dim, "critic": 1}
        for h in self.heads:
            shapes[f"head.{h}.w"] = (out[h], width)
            shapes[f"head.{h}.b"] = (out[h],)
            if h == "mean":
                shapes["head.mean.log_std"] = (self.action_dim,)
        return shapes

    def num_params(self) -> int:
        return sum(math.prod(s) for s in self.param_shapes().values())


_ACTIVATIONS = {"relu": torch.relu, "tanh": torch.tanh, "elu": F.elu}


@dataclass
class ParameterSet:
    spec: NetworkSpec
    arrays: dict

    @property
    def spec_hash(self) -> str:
        return self.spec.hash()

    def __getitem__(self, name: str) -> torch.Tensor:
        return self.arrays[name]

    def keys(self):
        return self.arrays.keys()

    def items(self):
        return self.arrays.items()

    def num_params(self) -> int:
        return sum(a.numel() for a in self.arrays.values())

    def cast(self, dtype) -> "ParameterSet":
        return ParameterSet(self.spec, {k: v.detach().to(dtype).clone() for k, v in self.arrays.items()})

    def clone(self) -> "ParameterSet":
        return ParameterSet(self.spec, {k: v.detach().clone() for k, v in self.arrays.items()})

    def flat(self) -> np.ndarray:
        return np.concatenate([v.detach().cpu().numpy().ravel() for v in self.arrays.values()])

    def all_finite(self) -> bool:
        return all(bool(torch.isfinite(v).all()) for v in self.arrays.values())

    def equal(self, other: "ParameterSet") -> bool:
        """Bit-exact equality of names, shapes and values."""
        if list(self.arrays) != list(other.arrays):
            return False
        return all(torch.equal(self.arrays[k], other.arrays[k]) for k in self.arrays)


@dataclass
class GradientSet:
    arrays: dict
    pre_clip_norm: float = 0.0

    def global_norm(self) -> float:
        flat = torch.cat([g.reshape(-1) for g in self.arrays.values()])
        return float(torch.linalg.vector_norm(flat.double()))

    def scaled(self, factor: float) -> "GradientSet":
        return GradientSet({k: g * factor for k, g in self.arrays.items()}, self.pre_clip_norm)


def average_gradients(grads: list) -> GradientSet:
    keys = grads[0].arrays.keys()
    n = len(grads)
    return GradientSet({k: sum(g.arrays[k] for g in grads) / n for k in keys})


def init_network(spec: NetworkSpec, seed: int, dtype=torch.float32) -> ParameterSet:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights and biases; constant log-std."""
    gen = torch.Generator().manual_seed(int(seed))
    arrays = {}
    shapes = spec.param_shapes()
    fan_in = {}
    for name, shape in shapes.items():
        layer = name.rsplit(".", 1)[0]
        if name.endswith(".w"):
            fan_in[layer] = math.prod(shape[1:])
    for name, shape in shapes.items():
        if name.endswith("log_std"):
            arrays[name] = torch.full(shape, LOG_STD_INIT, dtype=dtype)
            continue
        bound = 1.0 / math.sqrt(fan_in[name.rsplit(".", 1)[0]])
        arrays[name] = (torch.rand(shape, generator=gen, dtype=torch.float64) * 2.0 - 1.0).mul_(bound).to(dtype)
    return ParameterSet(spec, arrays)


def zeros_like(params: ParameterSet) -> ParameterSet:
    return ParameterSet(params.spec, {k: torch.zeros_like(v) for k, v in params.items()})


def _as_batch(spec: NetworkSpec, obs, dtype) -> tuple[torch.Tensor, bool]:
    x = torch.as_tensor(obs, dtype=dtype) if not isinstance(obs, torch.Tensor) else obs.to(dtype)
    nd = len(spec.input_shape)
    if tuple(x.shape[-nd:]) != tuple(spec.input_shape):
        raise ProtocolError(f"observation shape {tuple(x.shape)} does not match network input {spec.input_shape}")
    if x.dim() == nd:
        return x.unsqueeze(0), True
    if x.dim() != nd + 1:
        raise ProtocolError(f"observation batch must have rank {nd + 1}, got {x.dim()}")
    return x, False


def forward(params: ParameterSet, obs, action=None) -> dict:
    """Evaluate every head. Image inputs are (..., H, W, C); outputs keep the batch dim
    only when the input had one. The ``mean`` head is tanh-squashed into [-1, 1]."""
    spec = params.spec
    dtype = next(iter(params.arrays.values())).dtype
    x, single = _as_batch(spec, obs, dtype)
    act = _ACTIVATIONS[spec.activation]
    if spec.convs:
        x = x.permute(0, 3, 1, 2)
        for i, (_, _, stride) in enumerate(spec.convs):
            x = act(F.conv2d(x, params[f"conv{i}.w"], params[f"conv{i}.b"], stride=stride))
    x = x.reshape(x.shape[0], -1)
    if "critic" in spec.heads:
        if action is None:
            raise ProtocolError("critic network needs an action input")
        a = torch.as_tensor(action, dtype=dtype) if not isinstance(action, torch.Tensor) else action.to(dtype)
        a = a.reshape(x.shape[0], spec.action_dim)
        x = torch.cat([x, a], dim=1)
    for i in range(len(spec.hidden)):
        x = act(F.linear(x, params[f"dense{i}.w"], params[f"dense{i}.b"]))
    out = {}
    for h in spec.heads:
        y = F.linear(x, params[f"head.{h}.w"], params[f"head.{h}.b"])
        if h in ("value", "critic"):
            y = y.squeeze(-1)
        elif h == "mean":
            y = torch.tanh(y)
            out["log_std"] = params["head.mean.log_std"]
        out[h] = y[0] if single else y
    return out


def categorical_log_probs(logits: torch.Tensor) -> torch.Tensor:
    return logits - torch.logsumexp(logits, dim=-1, keepdim=True)


def backward(params: ParameterSet, loss_fn, clip_norm: float | None = GRAD_CLIP_NORM) -> tuple[float, GradientSet]:
    """Gradient of the scalar ``loss_fn(params)`` with global-norm clipping."""
    leaves = {k: v.detach().clone().requires_grad_(True) for k, v in params.items()}
    loss = loss_fn(ParameterSet(params.spec, leaves))
    if not isinstance(loss, torch.Tensor) or loss.dim() != 0:
        raise ProtocolError("loss_fn must return a scalar tensor")
    if not torch.isfinite(loss):
        raise NumericError(f"non-finite loss {float(loss.detach())!r}")
    names = list(leaves)
    raw = torch.autograd.grad(loss, [leaves[k] for k in names], allow_unused=True)
    grads = {k: torch.zeros_like(leaves[k]) if g is None else g.detach() for k, g in zip(names, raw)}
    gs = GradientSet(grads)
    norm = gs.global_norm()
    if not math.isfinite(norm):
        raise NumericError("non-finite gradient norm")
    gs.pre_clip_norm = norm
    if clip_norm is not None:
        gs = clip_gradients(gs, clip_norm)
    return float(loss.detach()), gs


def clip_gradients(grads: GradientSet, max_norm: float) -> GradientSet:
    norm = grads.global_norm()
    if norm <= max_norm:
        return GradientSet(dict(grads.arrays), norm)
    out = grads.scaled(max_norm / norm)
    out.pre_clip_norm = norm
    return out


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0


def adam_step(
    params: ParameterSet,
    grads: GradientSet,
    state: AdamState,
    lr: float = 0.0005,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> ParameterSet:
    """Bias-corrected Adam; returns fresh tensors and advances ``state`` in place."""
    state.step += 1
    t = state.step
    bc1 = 1.0 - beta1**t
    bc2 = 1.0 - beta2**t
    new = {}
    for k, p in params.items():
        g = grads.arrays[k].to(p.dtype)
        m = state.m.get(k)
        v = state.v.get(k)
        m = (1.0 - beta1) * g if m is None else (beta1 * m).add_(g, alpha=1.0 - beta1)
        v = (1.0 - beta2) * g * g if v is None else (beta2 * v).addcmul_(g, g, value=1.0 - beta2)
        state.m[k], state.v[k] = m, v
        denom = (v / bc2).sqrt_().add_(eps)
        new[k] = p.detach().addcdiv(m, denom, value=-lr / bc1)
    return ParameterSet(params.spec, new)


# ---------------------------------------------------------------- checkpoint file

MAGIC = b"ADRLCKPT"
FORMAT_VERSION = 1


def _pack_str(s: str) -> bytes:
    b = s.encode("utf-8")
    return struct.pack("<H", len(b)) + b


def checkpoint_bytes(params: ParameterSet, algo_tag: str) -> bytes:
    """Header (magic, u16 version, algo tag, spec hash, spec json, u32 array count)
    followed by records (name, u8 rank, u32 dims, little-endian float32 data)."""
    out = [MAGIC, struct.pack("<H", FORMAT_VERSION), _pack_str(algo_tag), _pack_str(params.spec_hash)]
    out.append(_pack_str(params.spec.canonical()))
    out.append(struct.pack("<I", len(params.arrays)))
    for name, arr in params.items():
        data = arr.detach().cpu().to(torch.float32).numpy()
        out.append(_pack_str(name))
        out.append(struct.pack("<B", data.ndim))
        out.append(struct.pack(f"<{data.ndim}I", *data.shape))
        out.append(data.astype("<f4").tobytes())
    return b"".join(out)


def save_checkpoint(path, params: ParameterSet, algo_tag: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(checkpoint_bytes(params, algo_tag))
    return path


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError("checkpoint file is truncated")
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def string(self) -> str:
        (n,) = self.unpack("<H")
        try:
            return self.take(n).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CheckpointError("corrupt string in checkpoint") from exc


def load_checkpoint(path, expected_spec: NetworkSpec | None = None) -> tuple[ParameterSet, dict]:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    r = _Reader(data)
    if r.take(len(MAGIC)) != MAGIC:
        raise CheckpointError(f"{path} is not a checkpoint (bad magic)")
    (version,) = r.unpack("<H")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    algo_tag = r.string()
    spec_hash = r.string()
    try:
        spec = NetworkSpec.from_json(r.string())
    except (ValueError, TypeError, KeyError) as exc:
        raise CheckpointError("corrupt network spec in checkpoint") from exc
    if spec.hash() != spec_hash:
        raise CheckpointError("checkpoint spec hash does not match its embedded spec")
    if expected_spec is not None and expected_spec.hash() != spec_hash:
        raise CheckpointError(
            f"checkpoint network {spec_hash} is incompatible with the expected network {expected_spec.hash()}"
        )
    (count,) = r.unpack("<I")
    arrays = {}
    for _ in range(count):
        name = r.string()
        (rank,) = r.unpack("<B")
        dims = r.unpack(f"<{rank}I") if rank else ()
        n = math.prod(dims)
        values = np.frombuffer(r.take(4 * n), dtype="<f4").reshape(dims)
        arrays[name] = torch.from_numpy(values.astype(np.float32))
    if r.pos != len(data):
        raise CheckpointError("trailing bytes after checkpoint records")
    expected = spec.param_shapes()
    if list(arrays) != list(expected) or any(tuple(arrays[k].shape) != expected[k] for k in expected):
        raise CheckpointError("checkpoint arrays do not match the embedded network spec")
    meta = {"algo_tag": algo_tag, "spec_hash": spec_hash, "version": version}
    return ParameterSet(spec, arrays), meta
