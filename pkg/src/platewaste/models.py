"""U-Net and nested U-Net (U-Net++) construction, forward, and backward.

Blocks are two 3x3 same-size convolutions with ReLU (no normalization),
2x2 max-pool between encoder levels, and 2x2 stride-2 transposed
convolutions that halve the channel count on the way up. The nested
variant adds the dense intermediate decoder nodes, with the output taken
from the last top-level node only. Channel widths double per level from
``base_width``, which is what separates the full models from the lighter
ones.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidConfig, ShapeMismatch
from .layers import (
    conv2d_backward,
    conv2d_forward,
    conv_transpose2x2_backward,
    conv_transpose2x2_forward,
    maxpool2x2_backward,
    maxpool2x2_forward,
    relu_backward,
    relu_forward,
)

CHECKPOINT_FORMAT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    family: str
    base_width: int
    num_classes: int
    depth: int = 5
    in_channels: int = 3
    input_size: int = 256

    def __post_init__(self):
        if self.family not in ("unet", "unetpp"):
            raise InvalidConfig(f"unknown model family {self.family!r}")
        if self.base_width < 1:
            raise InvalidConfig("base_width must be >= 1")
        if self.depth < 2:
            raise InvalidConfig("depth must be >= 2")
        if self.num_classes < 2:
            raise InvalidConfig("num_classes must be >= 2")
        if self.input_size % self.downsample_factor != 0:
            raise InvalidConfig(
                f"input_size {self.input_size} must be divisible by {self.downsample_factor}"
            )

    @property
    def downsample_factor(self) -> int:
        return 2 ** (self.depth - 1)

    @property
    def channels(self) -> list[int]:
        return [self.base_width * (1 << i) for i in range(self.depth)]

    def to_dict(self) -> dict:
        return {
            "family": self.family,
            "base_width": self.base_width,
            "num_classes": self.num_classes,
            "depth": self.depth,
            "in_channels": self.in_channels,
            "input_size": self.input_size,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


def _param_spec(config: ModelConfig) -> list[tuple[str, tuple]]:
    """Ordered (name, shape) list; the ordering is the checkpoint contract."""
    ch = config.channels
    d = config.depth
    spec: list[tuple[str, tuple]] = []

    def double_conv(prefix: str, c_in: int, c_out: int):
        spec.append((f"{prefix}.c1.w", (c_out, c_in, 3, 3)))
        spec.append((f"{prefix}.c1.b", (c_out,)))
        spec.append((f"{prefix}.c2.w", (c_out, c_out, 3, 3)))
        spec.append((f"{prefix}.c2.b", (c_out,)))

    if config.family == "unet":
        double_conv("enc0", config.in_channels, ch[0])
        for i in range(1, d):
            double_conv(f"enc{i}", ch[i - 1], ch[i])
        for i in range(d - 2, -1, -1):
            spec.append((f"dec{i}.up.w", (ch[i + 1], ch[i], 2, 2)))
            spec.append((f"dec{i}.up.b", (ch[i],)))
            double_conv(f"dec{i}", 2 * ch[i], ch[i])
    else:
        double_conv("x00", config.in_channels, ch[0])
        for i in range(1, d):
            double_conv(f"x{i}0", ch[i - 1], ch[i])
        for j in range(1, d):
            for i in range(d - j):
                spec.append((f"x{i}{j}.up.w", (ch[i + 1], ch[i], 2, 2)))
                spec.append((f"x{i}{j}.up.b", (ch[i],)))
                double_conv(f"x{i}{j}", (j + 1) * ch[i], ch[i])
    spec.append(("head.w", (config.num_classes, ch[0], 1, 1)))
    spec.append(("head.b", (config.num_classes,)))
    return spec


class _Tape:
    """Reverse-mode recording of the ops executed during one forward pass."""

    def __init__(self, params: dict[str, np.ndarray]):
        self.params = params
        self.steps: list[tuple] = []
        self.next_id = 0

    def _new(self) -> int:
        self.next_id += 1
        return self.next_id - 1

    def source(self, x: np.ndarray) -> int:
        nid = self._new()
        return nid

    def conv(self, name: str, x: np.ndarray, xid: int):
        y, cache = conv2d_forward(self.params[f"{name}.w"], self.params[f"{name}.b"], x)
        yid = self._new()
        self.steps.append(("conv", (xid,), yid, name, cache))
        return y, yid

    def conv_t(self, name: str, x: np.ndarray, xid: int):
        y, cache = conv_transpose2x2_forward(
            self.params[f"{name}.w"], self.params[f"{name}.b"], x
        )
        yid = self._new()
        self.steps.append(("conv_t", (xid,), yid, name, cache))
        return y, yid

    def relu(self, x: np.ndarray, xid: int):
        y, cache = relu_forward(x)
        yid = self._new()
        self.steps.append(("relu", (xid,), yid, None, cache))
        return y, yid

    def pool(self, x: np.ndarray, xid: int):
        y, cache = maxpool2x2_forward(x)
        yid = self._new()
        self.steps.append(("pool", (xid,), yid, None, cache))
        return y, yid

    def concat(self, parts: list[np.ndarray], pids: list[int]):
        y = np.concatenate(parts, axis=1)
        yid = self._new()
        self.steps.append(("concat", tuple(pids), yid, None, [p.shape[1] for p in parts]))
        return y, yid

    def backward(self, out_id: int, gy: np.ndarray):
        """Walk the tape in reverse; returns (param_grads, grad_wrt_node0)."""
        node_grads: dict[int, np.ndarray] = {out_id: gy}
        pgrads: dict[str, np.ndarray] = {}

        def add_param(name, g):
            if name in pgrads:
                pgrads[name] += g
            else:
                pgrads[name] = g

        def add_node(nid, g):
            if nid in node_grads:
                node_grads[nid] += g
            else:
                node_grads[nid] = g

        for kind, in_ids, yid, name, cache in reversed(self.steps):
            g = node_grads.pop(yid, None)
            if g is None:
                continue
            if kind == "conv":
                gx, gw, gb = conv2d_backward(self.params[f"{name}.w"], cache, g)
                add_param(f"{name}.w", gw)
                add_param(f"{name}.b", gb)
                add_node(in_ids[0], gx)
            elif kind == "conv_t":
                gx, gw, gb = conv_transpose2x2_backward(self.params[f"{name}.w"], cache, g)
                add_param(f"{name}.w", gw)
                add_param(f"{name}.b", gb)
                add_node(in_ids[0], gx)
            elif kind == "relu":
                add_node(in_ids[0], relu_backward(cache, g))
            elif kind == "pool":
                add_node(in_ids[0], maxpool2x2_backward(cache, g))
            elif kind == "concat":
                offset = 0
                for pid, width in zip(in_ids, cache):
                    add_node(pid, g[:, offset : offset + width])
                    offset += width
        return pgrads, node_grads.get(0)


class Model:
    """A built network: parameter dict plus the wiring for its family.

    Parameters are immutable from the forward path's perspective; training
    mutates them through the optimizer only, so inference calls may run
    concurrently on a shared instance.
    """

    def __init__(self, config: ModelConfig, init_seed: int, dtype=np.float32):
        self.config = config
        self.init_seed = int(init_seed)
        self.dtype = np.dtype(dtype)
        self.params: dict[str, np.ndarray] = {}
        rng = np.random.Generator(np.random.PCG64(self.init_seed))
        for name, shape in _param_spec(config):
            if name.endswith(".b"):
                self.params[name] = np.zeros(shape, dtype=self.dtype)
            else:
                fan_in = shape[1] if name.endswith("up.w") else int(np.prod(shape[1:]))
                limit = np.sqrt(6.0 / fan_in)
                self.params[name] = rng.uniform(-limit, limit, size=shape).astype(self.dtype)

    def param_count(self) -> int:
        return sum(p.size for p in self.params.values())

    def _check_input(self, x: np.ndarray):
        if x.ndim != 4 or x.shape[1] != self.config.in_channels:
            raise ShapeMismatch(
                f"expected (B, {self.config.in_channels}, H, W) input, got {x.shape}"
            )
        f = self.config.downsample_factor
        if x.shape[2] % f or x.shape[3] % f:
            raise ShapeMismatch(f"spatial dims {x.shape[2:]} must be divisible by {f}")

    def _double_conv(self, tape: _Tape, prefix: str, x, xid):
        y, yid = tape.conv(f"{prefix}.c1", x, xid)
        y, yid = tape.relu(y, yid)
        y, yid = tape.conv(f"{prefix}.c2", y, yid)
        return tape.relu(y, yid)

    def _run(self, x: np.ndarray) -> tuple[np.ndarray, _Tape]:
        self._check_input(x)
        x = np.ascontiguousarray(x, dtype=self.dtype)
        tape = _Tape(self.params)
        xid = tape.source(x)
        d = self.config.depth

        if self.config.family == "unet":
            skips = []
            cur, cid = self._double_conv(tape, "enc0", x, xid)
            skips.append((cur, cid))
            for i in range(1, d):
                cur, cid = tape.pool(cur, cid)
                cur, cid = self._double_conv(tape, f"enc{i}", cur, cid)
                skips.append((cur, cid))
            for i in range(d - 2, -1, -1):
                up, uid = tape.conv_t(f"dec{i}.up", cur, cid)
                cur, cid = tape.concat([skips[i][0], up], [skips[i][1], uid])
                cur, cid = self._double_conv(tape, f"dec{i}", cur, cid)
        else:
            nodes: dict[tuple[int, int], tuple[np.ndarray, int]] = {}
            cur, cid = self._double_conv(tape, "x00", x, xid)
            nodes[(0, 0)] = (cur, cid)
            for i in range(1, d):
                cur, cid = tape.pool(*nodes[(i - 1, 0)])
                nodes[(i, 0)] = self._double_conv(tape, f"x{i}0", cur, cid)
            for j in range(1, d):
                for i in range(d - j):
                    up, uid = tape.conv_t(f"x{i}{j}.up", *nodes[(i + 1, j - 1)])
                    parts = [nodes[(i, jj)] for jj in range(j)] + [(up, uid)]
                    cat, catid = tape.concat([p[0] for p in parts], [p[1] for p in parts])
                    nodes[(i, j)] = self._double_conv(tape, f"x{i}{j}", cat, catid)
            cur, cid = nodes[(0, d - 1)]

        logits, lid = tape.conv("head", cur, cid)
        tape.out_id = lid
        return logits, tape

    def forward(self, x: np.ndarray) -> np.ndarray:
        """Logits of shape (B, num_classes, H, W); spatial size preserved."""
        logits, _ = self._run(x)
        return logits

    def forward_training(self, x: np.ndarray) -> tuple[np.ndarray, _Tape]:
        """Forward pass that keeps the tape so ``backward`` can run."""
        return self._run(x)

    def backward(self, tape: _Tape, dlogits: np.ndarray):
        """Parameter gradients (and input gradient) for a recorded forward."""
        pgrads, dx = tape.backward(tape.out_id, np.ascontiguousarray(dlogits, dtype=self.dtype))
        for name, p in self.params.items():
            if name not in pgrads:
                pgrads[name] = np.zeros_like(p)
        return pgrads, dx

    def encode(self, x: np.ndarray) -> np.ndarray:
        """Run the encoder only and return the bottleneck activation."""
        self._check_input(x)
        x = np.ascontiguousarray(x, dtype=self.dtype)
        tape = _Tape(self.params)
        xid = tape.source(x)
        stem = "enc0" if self.config.family == "unet" else "x00"
        cur, cid = self._double_conv(tape, stem, x, xid)
        for i in range(1, self.config.depth):
            cur, cid = tape.pool(cur, cid)
            name = f"enc{i}" if self.config.family == "unet" else f"x{i}0"
            cur, cid = self._double_conv(tape, name, cur, cid)
        return cur

    def predict_labels(self, x: np.ndarray) -> np.ndarray:
        """Per-pixel argmax class indices, shape (B, H, W)."""
        return self.forward(x).argmax(axis=1)

    def copy_params(self) -> dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.params.items()}

    def load_params(self, params: dict[str, np.ndarray]) -> None:
        for name in self.params:
            if name not in params:
                raise ShapeMismatch(f"missing parameter {name!r}")
            if params[name].shape != self.params[name].shape:
                raise ShapeMismatch(f"parameter {name!r} has the wrong shape")
            self.params[name] = params[name].astype(self.dtype, copy=True)


def build(config: ModelConfig, init_seed: int, dtype=np.float32) -> Model:
    """Construct a model with deterministic fan-in-scaled uniform init."""
    return Model(config, init_seed, dtype=dtype)


def param_count(model: Model) -> int:
    return model.param_count()


def save_checkpoint(model: Model, path, *, optimizer=None, metadata: dict | None = None) -> None:
    """Write a self-describing npz checkpoint; arrays round-trip bit-exactly."""
    meta = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "config": model.config.to_dict(),
        "init_seed": model.init_seed,
        "dtype": model.dtype.name,
        "param_order": list(model.params.keys()),
        "metadata": metadata or {},
    }
    arrays = {f"param.{k}": v for k, v in model.params.items()}
    if optimizer is not None:
        state = optimizer.state_dict()
        meta["optimizer"] = {
            "kind": type(optimizer).__name__,
            "t": state["t"],
            "lr": optimizer.lr,
            "betas": [optimizer.beta1, optimizer.beta2],
            "eps": optimizer.eps,
            "weight_decay": optimizer.weight_decay,
            "tracked": sorted(state["m"].keys()),
        }
        arrays.update({f"opt.m.{k}": v for k, v in state["m"].items()})
        arrays.update({f"opt.v.{k}": v for k, v in state["v"].items()})
    arrays["__meta__"] = np.frombuffer(json.dumps(meta).encode("utf-8"), dtype=np.uint8)
    np.savez(path, **arrays)


def load_checkpoint(path):
    """Rebuild (model, metadata, optimizer_state_or_None) from a checkpoint."""
    with np.load(path) as blob:
        meta = json.loads(bytes(blob["__meta__"]).decode("utf-8"))
        if meta["format_version"] != CHECKPOINT_FORMAT_VERSION:
            raise InvalidConfig(f"unsupported checkpoint version {meta['format_version']}")
        config = ModelConfig.from_dict(meta["config"])
        model = Model(config, meta["init_seed"], dtype=np.dtype(meta["dtype"]))
        model.load_params({k: blob[f"param.{k}"] for k in meta["param_order"]})
        opt_state = None
        if "optimizer" in meta:
            opt_state = dict(meta["optimizer"])
            tracked = opt_state.pop("tracked")
            opt_state["m"] = {k: blob[f"opt.m.{k}"] for k in tracked}
            opt_state["v"] = {k: blob[f"opt.v.{k}"] for k in tracked}
    return model, meta["metadata"], opt_state
