"""Dense feed-forward networks: forward pass, backprop, Adam, checkpoints.

All math runs in float64.  Layers store weights as (fan_out, fan_in)
with a bias per output unit; supported activations are "relu" and
"identity".  Weights are initialised from N(0, 0.01^2) and biases at
zero, drawn from the package generator so initialisation is
reproducible from the seed alone.

Checkpoints use the ``DELC`` container: magic bytes, u16 version, a
length-prefixed JSON preamble describing the network and training
phase, then one length-prefixed float64 little-endian block per weight
and bias in layer order.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError, FormatError, NumericError, ShapeError
from .rng import Rng

ACTIVATIONS = ("relu", "identity")

INIT_STD = 0.01


@dataclass
class DenseLayer:
    w: np.ndarray
    b: np.ndarray
    activation: str

    @property
    def fan_in(self) -> int:
        return self.w.shape[1]

    @property
    def fan_out(self) -> int:
        return self.w.shape[0]


@dataclass
class MlpParams:
    """An ordered chain of dense layers; output dim of each feeds the next."""

    layers: list[DenseLayer]

    def __post_init__(self):
        if not self.layers:
            raise ConfigError("network needs at least one layer")
        for i, layer in enumerate(self.layers):
            if layer.activation not in ACTIVATIONS:
                raise ConfigError(f"layer {i}: unknown activation {layer.activation!r}")
            if layer.w.ndim != 2 or layer.b.ndim != 1:
                raise ShapeError(f"layer {i}: weights must be 2-d and biases 1-d")
            if layer.b.shape[0] != layer.w.shape[0]:
                raise ShapeError(
                    f"layer {i}: bias size {layer.b.shape[0]} does not match "
                    f"fan-out {layer.w.shape[0]}"
                )
            if i > 0 and layer.w.shape[1] != self.layers[i - 1].w.shape[0]:
                raise ShapeError(
                    f"layer {i}: fan-in {layer.w.shape[1]} does not match previous "
                    f"fan-out {self.layers[i - 1].w.shape[0]}"
                )

    def dims(self) -> list[int]:
        return [self.layers[0].fan_in] + [layer.fan_out for layer in self.layers]

    def activations(self) -> list[str]:
        return [layer.activation for layer in self.layers]

    def n_params(self) -> int:
        return sum(layer.w.size + layer.b.size for layer in self.layers)

    def copy(self) -> "MlpParams":
        return MlpParams(
            layers=[
                DenseLayer(w=layer.w.copy(), b=layer.b.copy(), activation=layer.activation)
                for layer in self.layers
            ]
        )


def init_params(layer_dims: Sequence[int], activations: Sequence[str], rng: Rng) -> MlpParams:
    """Fresh parameters for the given dimension chain."""
    dims = list(layer_dims)
    if len(dims) < 2:
        raise ConfigError("layer_dims needs an input and at least one output size")
    if any(d < 1 for d in dims):
        raise ConfigError(f"all layer sizes must be positive, got {dims}")
    if len(activations) != len(dims) - 1:
        raise ConfigError(
            f"expected {len(dims) - 1} activations for {len(dims)} sizes, "
            f"got {len(activations)}"
        )
    layers = []
    for fan_in, fan_out, act in zip(dims[:-1], dims[1:], activations):
        w = rng.normal((fan_out, fan_in), std=INIT_STD)
        b = np.zeros(fan_out, dtype=np.float64)
        layers.append(DenseLayer(w=w, b=b, activation=act))
    return MlpParams(layers=layers)


def forward(params: MlpParams, x: np.ndarray) -> tuple[list[np.ndarray], np.ndarray]:
    """Run the chain on a batch; returns (per-layer outputs, final output).

    The returned list starts with the input batch, so entry i is what
    layer i consumed and the last entry is the network output.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeError(f"input batch must be 2-d, got shape {x.shape}")
    if x.shape[1] != params.layers[0].fan_in:
        raise ShapeError(
            f"input width {x.shape[1]} does not match network fan-in "
            f"{params.layers[0].fan_in}"
        )
    acts = [x]
    a = x
    for layer in params.layers:
        z = a @ layer.w.T + layer.b
        a = np.maximum(z, 0.0) if layer.activation == "relu" else z
        acts.append(a)
    return acts, a


def backward(
    params: MlpParams, acts: list[np.ndarray], output_grad: np.ndarray
) -> tuple[list[tuple[np.ndarray, np.ndarray]], np.ndarray]:
    """Backpropagate a loss gradient through the chain.

    ``acts`` must come from forward() on the same parameters.  Returns
    per-layer (weight grad, bias grad) pairs in layer order plus the
    gradient with respect to the input batch.
    """
    if len(acts) != len(params.layers) + 1:
        raise ShapeError(
            f"expected {len(params.layers) + 1} stored activations, got {len(acts)}"
        )
    output_grad = np.asarray(output_grad, dtype=np.float64)
    if output_grad.shape != acts[-1].shape:
        raise ShapeError(
            f"output grad shape {output_grad.shape} does not match "
            f"output shape {acts[-1].shape}"
        )
    grads: list[tuple[np.ndarray, np.ndarray]] = [None] * len(params.layers)
    g = output_grad
    for i in range(len(params.layers) - 1, -1, -1):
        layer = params.layers[i]
        if layer.activation == "relu":
            g = g * (acts[i + 1] > 0.0)
        grads[i] = (g.T @ acts[i], g.sum(axis=0))
        g = g @ layer.w
    return grads, g


def mse_loss(x_recon: np.ndarray, x: np.ndarray) -> float:
    """Squared error summed over coordinates, averaged over rows."""
    x_recon = np.asarray(x_recon, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if x_recon.shape != x.shape:
        raise ShapeError(f"shape mismatch {x_recon.shape} vs {x.shape}")
    diff = x_recon - x
    return float(np.sum(diff * diff) / x.shape[0])


def mse_grad(x_recon: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Gradient of mse_loss with respect to the reconstruction."""
    if x_recon.shape != x.shape:
        raise ShapeError(f"shape mismatch {x_recon.shape} vs {x.shape}")
    return (2.0 / x.shape[0]) * (x_recon - x)


@dataclass(frozen=True)
class AdamConfig:
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    def validate(self) -> None:
        if not self.lr >= 0.0:
            raise ConfigError(f"learning rate must be non-negative, got {self.lr}")
        if not 0.0 <= self.beta1 < 1.0 or not 0.0 <= self.beta2 < 1.0:
            raise ConfigError("Adam betas must lie in [0, 1)")
        if not self.epsilon > 0.0:
            raise ConfigError("Adam epsilon must be positive")


@dataclass
class AdamState:
    """First and second moment buffers for a list of parameter blocks."""

    config: AdamConfig
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0
    names: list[str] = field(default_factory=list)


def adam_init_blocks(blocks: Sequence[np.ndarray], config: AdamConfig, names=None) -> AdamState:
    config.validate()
    if names is None:
        names = [f"block{i}" for i in range(len(blocks))]
    return AdamState(
        config=config,
        m=[np.zeros_like(b) for b in blocks],
        v=[np.zeros_like(b) for b in blocks],
        names=list(names),
    )


def adam_step_blocks(
    blocks: Sequence[np.ndarray], grads: Sequence[np.ndarray], state: AdamState
) -> None:
    """One Adam update, in place, over parallel parameter and grad lists."""
    if len(blocks) != len(state.m) or len(grads) != len(state.m):
        raise ShapeError("parameter, gradient and moment lists differ in length")
    for name, g in zip(state.names, grads):
        if not np.isfinite(g).all():
            raise NumericError(f"gradient for {name} is not finite")
    cfg = state.config
    state.t += 1
    correct1 = 1.0 - cfg.beta1**state.t
    correct2 = 1.0 - cfg.beta2**state.t
    for p, g, m, v in zip(blocks, grads, state.m, state.v):
        if p.shape != g.shape:
            raise ShapeError(f"gradient shape {g.shape} does not match block {p.shape}")
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * (g * g)
        p -= cfg.lr * (m / correct1) / (np.sqrt(v / correct2) + cfg.epsilon)


def adam_init(params: MlpParams, config: AdamConfig) -> AdamState:
    blocks, names = _param_blocks(params)
    return adam_init_blocks(blocks, config, names)


def adam_step(
    params: MlpParams, grads: Sequence[tuple[np.ndarray, np.ndarray]], state: AdamState
) -> None:
    """One Adam update over every weight and bias, in place."""
    blocks, _ = _param_blocks(params)
    flat = []
    for dw, db in grads:
        flat.append(dw)
        flat.append(db)
    adam_step_blocks(blocks, flat, state)


def _param_blocks(params: MlpParams):
    blocks, names = [], []
    for i, layer in enumerate(params.layers):
        blocks += [layer.w, layer.b]
        names += [f"layer{i}.w", f"layer{i}.b"]
    return blocks, names


def numeric_gradient(
    f: Callable[[np.ndarray], float], x: np.ndarray, step: float = 1e-6
) -> np.ndarray:
    """Central finite differences of a scalar function, element by element.

    Intended for verifying analytic gradients on small problems; cost is
    two function evaluations per element.
    """
    x = np.asarray(x, dtype=np.float64)
    out = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    while not it.finished:
        idx = it.multi_index
        orig = x[idx]
        x[idx] = orig + step
        hi = f(x)
        x[idx] = orig - step
        lo = f(x)
        x[idx] = orig
        out[idx] = (hi - lo) / (2.0 * step)
        it.iternext()
    return out


# ---------------------------------------------------------------------------
# checkpoints


_CKPT_MAGIC = b"DELC"
_CKPT_VERSION = 1

PHASES = ("pretrain", "dec")


@dataclass
class Checkpoint:
    params: MlpParams
    seed: int
    phase: str
    epoch: int
    centroids: np.ndarray | None = None


def save_checkpoint(path: str, ckpt: Checkpoint) -> None:
    if ckpt.phase not in PHASES:
        raise ConfigError(f"unknown training phase {ckpt.phase!r}")
    blocks: list[tuple[str, np.ndarray]] = []
    for i, layer in enumerate(ckpt.params.layers):
        blocks.append((f"layer{i}.w", layer.w))
        blocks.append((f"layer{i}.b", layer.b))
    if ckpt.centroids is not None:
        blocks.append(("centroids", np.asarray(ckpt.centroids, dtype=np.float64)))
    preamble = {
        "layer_dims": ckpt.params.dims(),
        "activations": ckpt.params.activations(),
        "seed": int(ckpt.seed),
        "phase": ckpt.phase,
        "epoch": int(ckpt.epoch),
        "blocks": [{"name": name, "shape": list(arr.shape)} for name, arr in blocks],
    }
    raw = json.dumps(preamble, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_CKPT_MAGIC)
        fh.write(struct.pack("<H", _CKPT_VERSION))
        fh.write(struct.pack("<I", len(raw)))
        fh.write(raw)
        for _, arr in blocks:
            payload = np.ascontiguousarray(arr, dtype="<f8").tobytes(order="C")
            fh.write(struct.pack("<Q", len(payload)))
            fh.write(payload)


def load_checkpoint(path: str) -> Checkpoint:
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except FileNotFoundError:
        raise ConfigError(f"checkpoint not found: {path}")
    if data[:4] != _CKPT_MAGIC:
        raise FormatError(f"{path}: bad magic {data[:4]!r} at byte offset 0")
    (version,) = struct.unpack("<H", data[4:6])
    if version != _CKPT_VERSION:
        raise FormatError(f"{path}: unsupported version {version} at byte offset 4")
    (json_len,) = struct.unpack("<I", data[6:10])
    off = 10
    if off + json_len > len(data):
        raise FormatError(f"{path}: truncated preamble at byte offset {off}")
    try:
        preamble = json.loads(data[off : off + json_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: unreadable preamble at byte offset {off}: {exc}")
    off += json_len
    arrays = {}
    for block in preamble["blocks"]:
        if off + 8 > len(data):
            raise FormatError(f"{path}: truncated block length at byte offset {off}")
        (nbytes,) = struct.unpack("<Q", data[off : off + 8])
        off += 8
        shape = tuple(block["shape"])
        expected = int(np.prod(shape)) * 8
        if nbytes != expected:
            raise FormatError(
                f"{path}: block {block['name']!r} at byte offset {off} has "
                f"{nbytes} bytes, expected {expected}"
            )
        if off + nbytes > len(data):
            raise FormatError(f"{path}: truncated block payload at byte offset {off}")
        arrays[block["name"]] = (
            np.frombuffer(data, dtype="<f8", count=expected // 8, offset=off)
            .astype(np.float64)
            .reshape(shape)
        )
        off += nbytes
    if off != len(data):
        raise FormatError(f"{path}: {len(data) - off} trailing bytes at byte offset {off}")
    dims = preamble["layer_dims"]
    activations = preamble["activations"]
    layers = []
    for i in range(len(dims) - 1):
        try:
            w = arrays[f"layer{i}.w"]
            b = arrays[f"layer{i}.b"]
        except KeyError as exc:
            raise FormatError(f"{path}: missing parameter block {exc}")
        layers.append(DenseLayer(w=w.copy(), b=b.copy(), activation=activations[i]))
    centroids = arrays.get("centroids")
    if centroids is not None:
        centroids = centroids.copy()
    return Checkpoint(
        params=MlpParams(layers=layers),
        seed=int(preamble["seed"]),
        phase=preamble["phase"],
        epoch=int(preamble["epoch"]),
        centroids=centroids,
    )
