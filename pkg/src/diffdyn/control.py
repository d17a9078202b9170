"""Dense feed-forward controllers, sensor extraction, and checkpoints.

Controllers map a sensor row to one motor target angle per servo.  Hidden
layers use the rectifier, the output layer is affine, and the optional
input-to-output skip concatenates the network input onto the last hidden
layer before the output weights.  Initialization draws hidden weights from
U(+-sqrt(6/fan_in)) and zeroes the entire output layer, so a fresh controller
outputs exactly zero for every input.

Checkpoint format (``.ddck``): little-endian header
``magic 'DDCK' | u16 version | u16 flags (bit0 = skip) | u64 seed |
u64 count | u16 n_layers | u16 reserved | n_layers * u32 layer_size``
followed by ``count`` float64 parameters; a plain-text descriptor is written
alongside as ``<path>.txt``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tape as tg
from .tape import ContractError, Tensor

_MAGIC = b"DDCK"
_VERSION = 1

RELU = "relu"
IDENTITY = "identity"


@dataclass(frozen=True)
class ControllerSpec:
    """Layer widths (input, hidden..., output) plus the skip connection flag."""
    layer_sizes: tuple[int, ...]
    skip_input_to_output: bool = False
    activations: tuple[str, ...] = ()

    def __post_init__(self):
        if len(self.layer_sizes) < 2:
            raise ValueError("controller needs at least input and output sizes")
        acts = self.activations or tuple(
            [RELU] * (len(self.layer_sizes) - 2) + [IDENTITY])
        if len(acts) != len(self.layer_sizes) - 1:
            raise ValueError("one activation per non-input layer")
        for a in acts:
            if a not in (RELU, IDENTITY):
                raise ValueError(f"unsupported activation {a!r}")
        object.__setattr__(self, "activations", acts)

    @property
    def n_inputs(self) -> int:
        return self.layer_sizes[0]

    @property
    def n_outputs(self) -> int:
        return self.layer_sizes[-1]

    def layer_shapes(self) -> list[tuple[str, tuple[int, int], tuple[int]]]:
        """(name, W shape, b shape) per layer, in packing order."""
        out = []
        n_layers = len(self.layer_sizes) - 1
        for i in range(n_layers):
            fan_in = self.layer_sizes[i]
            fan_out = self.layer_sizes[i + 1]
            if i == n_layers - 1 and self.skip_input_to_output:
                fan_in += self.layer_sizes[0]
            out.append((f"layer{i}", (fan_in, fan_out), (fan_out,)))
        return out


def param_count(spec: ControllerSpec) -> int:
    """Exact trainable parameter count for the layout."""
    total = 0
    for _, w_shape, b_shape in spec.layer_shapes():
        total += w_shape[0] * w_shape[1] + b_shape[0]
    return total


@dataclass
class ParamVector:
    """Flat parameter storage with the layer layout map."""
    spec: ControllerSpec
    data: np.ndarray
    seed: int = 0

    def __post_init__(self):
        expected = param_count(self.spec)
        self.data = np.asarray(self.data, dtype=np.float64).reshape(-1)
        if self.data.size != expected:
            raise ValueError(
                f"parameter vector has {self.data.size} entries, "
                f"layout needs {expected}")

    def copy(self) -> "ParamVector":
        return ParamVector(self.spec, self.data.copy(), self.seed)

    def unpack(self) -> list[tuple[np.ndarray, np.ndarray]]:
        """(W, b) views per layer, in order."""
        out = []
        pos = 0
        for _, w_shape, b_shape in self.spec.layer_shapes():
            w_n = w_shape[0] * w_shape[1]
            w = self.data[pos:pos + w_n].reshape(w_shape)
            pos += w_n
            b = self.data[pos:pos + b_shape[0]]
            pos += b_shape[0]
            out.append((w, b))
        return out

    @staticmethod
    def pack(spec: ControllerSpec, layers: list[tuple[np.ndarray, np.ndarray]],
             seed: int = 0) -> "ParamVector":
        flat = np.concatenate([np.concatenate([w.reshape(-1), b.reshape(-1)])
                               for w, b in layers])
        return ParamVector(spec, flat, seed)


def init_params(spec: ControllerSpec, seed: int) -> ParamVector:
    """Hidden layers U(+-sqrt(6/fan_in)); output layer all zeros."""
    rng = np.random.default_rng(np.uint64(seed))
    layers = []
    shapes = spec.layer_shapes()
    for i, (_, w_shape, b_shape) in enumerate(shapes):
        if i == len(shapes) - 1:
            layers.append((np.zeros(w_shape), np.zeros(b_shape)))
        else:
            bound = np.sqrt(6.0 / w_shape[0])
            layers.append((rng.uniform(-bound, bound, size=w_shape),
                           np.zeros(b_shape)))
    pv = ParamVector.pack(spec, layers, seed)
    return pv


class ControllerLeaves:
    """Per-layer weight/bias leaves of one tape, writable between replays."""

    def __init__(self, tape: tg.Tape, spec: ControllerSpec):
        self.spec = spec
        self.leaves: list[tuple[Tensor, Tensor]] = []
        for _, w_shape, b_shape in spec.layer_shapes():
            self.leaves.append((tape.leaf(np.zeros(w_shape)),
                                tape.leaf(np.zeros(b_shape))))

    def write(self, params: ParamVector) -> None:
        if params.spec.layer_shapes() != self.spec.layer_shapes():
            raise ContractError("parameter layout does not match controller")
        for (w_leaf, b_leaf), (w, b) in zip(self.leaves, params.unpack()):
            w_leaf.set_value(w)
            b_leaf.set_value(b)

    def read_grad(self) -> np.ndarray:
        parts = []
        for w_leaf, b_leaf in self.leaves:
            parts.append(w_leaf.grad.reshape(-1).copy())
            parts.append(b_leaf.grad.reshape(-1).copy())
        return np.concatenate(parts)


def controller_forward(spec: ControllerSpec, leaves: ControllerLeaves,
                       sensors: Tensor) -> Tensor:
    """Batched dense forward pass on the tape; returns (B, n_outputs)."""
    if len(sensors.shape) != 2 or sensors.shape[1] != spec.n_inputs:
        raise ContractError(
            f"sensor width {sensors.shape} does not match controller input "
            f"{spec.n_inputs}")
    h = sensors
    n_layers = len(spec.layer_sizes) - 1
    for i, (w_leaf, b_leaf) in enumerate(leaves.leaves):
        if i == n_layers - 1 and spec.skip_input_to_output:
            h = tg.concat(h, sensors)
        h = tg.add(tg.matmul(h, w_leaf), b_leaf)
        if spec.activations[i] == RELU:
            h = tg.relu(h)
    return h


# ---------------------------------------------------------------------------
# Sensors
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SensorChannel:
    """One named sensor block; width depends on the model."""
    kind: str
    body: int = 0
    frequency: float = 1.0     # clock channels, Hz

    KINDS = ("joint_angles", "joint_velocities", "orientation",
             "angular_velocity", "linear_velocity", "height",
             "contact_masks", "prev_targets", "distance_to_target",
             "target_position", "clock")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown sensor kind {self.kind!r}")


@dataclass(frozen=True)
class SensorSuite:
    channels: tuple[SensorChannel, ...]

    def width(self, n_joint_axes: int, n_motors: int, n_contacts: int) -> int:
        total = 0
        for ch in self.channels:
            total += {
                "joint_angles": n_joint_axes,
                "joint_velocities": n_joint_axes,
                "orientation": 9,
                "angular_velocity": 3,
                "linear_velocity": 3,
                "height": 1,
                "contact_masks": n_contacts,
                "prev_targets": n_motors,
                "distance_to_target": 1,
                "target_position": 3,
                "clock": 2,
            }[ch.kind]
        return total


@dataclass
class SensorExtras:
    """Task-side tensors the channel kinds may reference."""
    target: Tensor | None = None          # (B,3) leaf
    end_effector: Tensor | None = None    # (B,3) computed point
    clock: Tensor | None = None           # (B,2) host-written sin/cos leaf
    prev_targets: Tensor | None = None    # (B,n_motors) leaf
    contact_masks: Tensor | None = None   # (B,n_contacts) carried masks


def read_sensors(suite: SensorSuite, world, joint_states, extras: SensorExtras
                 ) -> Tensor:
    """Deterministic concatenation of the configured channels -> (B, width)."""
    parts: list[Tensor] = []
    for ch in suite.channels:
        if ch.kind == "joint_angles":
            for js in joint_states:
                parts.extend(js.angles)
        elif ch.kind == "joint_velocities":
            for js in joint_states:
                parts.extend(js.rates)
        elif ch.kind == "orientation":
            body = world[ch.body]
            parts.append(tg.reshape(body.R, (body.R.shape[0], 9)))
        elif ch.kind == "angular_velocity":
            parts.append(world[ch.body].w)
        elif ch.kind == "linear_velocity":
            parts.append(world[ch.body].v)
        elif ch.kind == "height":
            parts.append(tg.slice_cols(world[ch.body].x, 2, 3))
        elif ch.kind == "contact_masks":
            parts.append(extras.contact_masks)
        elif ch.kind == "prev_targets":
            parts.append(extras.prev_targets)
        elif ch.kind == "distance_to_target":
            diff = tg.sub(extras.end_effector, extras.target)
            parts.append(tg.l2norm(diff))
        elif ch.kind == "target_position":
            parts.append(extras.target)
        elif ch.kind == "clock":
            parts.append(extras.clock)
    if not parts:
        raise ContractError("sensor suite has no channels")
    return tg.concat_many(parts)


def clock_values(t: float, frequency: float) -> np.ndarray:
    """Host-side clock channel values (sin, cos) at 2*pi*frequency*t."""
    phase = 2.0 * np.pi * frequency * t
    return np.array([np.sin(phase), np.cos(phase)])


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(path, spec: ControllerSpec, params: ParamVector,
                    seed: int | None = None) -> None:
    path = Path(path)
    seed = params.seed if seed is None else seed
    count = params.data.size
    flags = 1 if spec.skip_input_to_output else 0
    header = _MAGIC + struct.pack(
        "<HHQQHH", _VERSION, flags, np.uint64(seed), count,
        len(spec.layer_sizes), 0)
    header += struct.pack(f"<{len(spec.layer_sizes)}I", *spec.layer_sizes)
    with open(path, "wb") as f:
        f.write(header)
        f.write(params.data.astype("<f8").tobytes())
    desc = [
        "diffdyn controller checkpoint",
        f"layers: {'-'.join(str(s) for s in spec.layer_sizes)}",
        f"skip_input_to_output: {spec.skip_input_to_output}",
        f"seed: {seed}",
        f"count: {count}",
    ]
    Path(str(path) + ".txt").write_text("\n".join(desc) + "\n")


def load_checkpoint(path) -> tuple[ControllerSpec, ParamVector]:
    raw = Path(path).read_bytes()
    if raw[:4] != _MAGIC:
        raise ValueError("not a diffdyn checkpoint (bad magic)")
    version, flags, seed, count, n_layers, _ = struct.unpack(
        "<HHQQHH", raw[4:4 + 24])
    if version != _VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    off = 4 + 24
    sizes = struct.unpack(f"<{n_layers}I", raw[off:off + 4 * n_layers])
    off += 4 * n_layers
    data = np.frombuffer(raw[off:off + 8 * count], dtype="<f8").copy()
    spec = ControllerSpec(tuple(sizes), skip_input_to_output=bool(flags & 1))
    return spec, ParamVector(spec, data, seed=int(seed))
