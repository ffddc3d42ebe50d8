"""Trainable velocity field: shared dense trunk plus audio and video heads.

The trunk reads ``[x, time_embedding(t) + phi_a, phi_v]``; each head maps
the trunk features to its block's velocity. Parameters live in one flat
float64 vector described by a layout table, and gradients are computed by
hand-written backpropagation into a vector with the same layout.
"""

from __future__ import annotations

import hashlib
import json
import logging
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
from scipy.stats import truncnorm

from .bridge_math import LatentLayout
from .errors import ConfigError, DimensionError, FormatError, LayoutError, NumericError
from .streams import RandomStream

logger = logging.getLogger(__name__)

ACTIVATIONS = ("tanh", "gelu-approx")
HEAD_MODES = ("mlp", "linear")

# highest angular frequency of the time embedding; keeps it 1e3-Lipschitz
MAX_TIME_FREQUENCY = 200.0

_GELU_K = float(np.sqrt(2.0 / np.pi))
_GELU_C = 0.044715


@dataclass(frozen=True)
class FieldConfig:
    """Shape knobs of the velocity field.

    Attributes:
        d_a: Audio block width.
        d_v_total: Projected video block width.
        trunk_width: Units per trunk layer.
        trunk_depth: Number of trunk layers.
        head_width: Units per hidden head layer.
        head_depth: Hidden layers per head before its output projection.
        cond_dim: Width of the visual condition ``phi_v``.
        time_embed_dim: Width of the time embedding; ``phi_a`` has the same
            width because it is added to it.
        activation: ``"tanh"`` or ``"gelu-approx"``.
        heads: ``"mlp"`` or ``"linear"`` (one linear split layer).
        use_audio_condition: Add ``phi_a`` to the time embedding.
    """

    d_a: int = 32
    d_v_total: int = 128
    trunk_width: int = 128
    trunk_depth: int = 3
    head_width: int = 64
    head_depth: int = 2
    cond_dim: int = 4
    time_embed_dim: int = 16
    activation: str = "tanh"
    heads: str = "mlp"
    use_audio_condition: bool = True

    def __post_init__(self) -> None:
        for name in ("d_a", "d_v_total", "trunk_width", "trunk_depth", "cond_dim",
                     "time_embed_dim", "head_width"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.head_depth < 0:
            raise ConfigError(f"head_depth must be >= 0, got {self.head_depth}")
        if self.time_embed_dim % 2:
            raise ConfigError(f"time_embed_dim must be even, got {self.time_embed_dim}")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"activation must be one of {ACTIVATIONS}, got {self.activation!r}")
        if self.heads not in HEAD_MODES:
            raise ConfigError(f"heads must be one of {HEAD_MODES}, got {self.heads!r}")

    @property
    def layout(self) -> LatentLayout:
        return LatentLayout(self.d_a, self.d_v_total)

    @property
    def input_dim(self) -> int:
        return self.d_a + self.d_v_total + self.time_embed_dim + self.cond_dim

    @property
    def hidden_head_layers(self) -> int:
        return 0 if self.heads == "linear" else self.head_depth

    def digest(self) -> str:
        """SHA-256 of the canonical JSON form of this config."""
        blob = json.dumps(asdict(self), sort_keys=True).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()


@dataclass(frozen=True)
class ParamSlot:
    """Location of one tensor inside the flat parameter vector."""

    name: str
    offset: int
    shape: Tuple[int, ...]

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))


@dataclass(frozen=True)
class DenseSpec:
    """One dense layer; *activated* is False for head output projections."""

    name: str
    fan_in: int
    fan_out: int
    activated: bool


def build_layers(config: FieldConfig) -> Dict[str, List[DenseSpec]]:
    """Dense layer stacks for the trunk and both heads."""
    trunk: List[DenseSpec] = []
    width_in = config.input_dim
    for i in range(config.trunk_depth):
        trunk.append(DenseSpec(f"trunk.{i}", width_in, config.trunk_width, True))
        width_in = config.trunk_width

    def head(prefix: str, out: int) -> List[DenseSpec]:
        layers: List[DenseSpec] = []
        w = config.trunk_width
        for i in range(config.hidden_head_layers):
            layers.append(DenseSpec(f"{prefix}.{i}", w, config.head_width, True))
            w = config.head_width
        layers.append(DenseSpec(f"{prefix}.out", w, out, False))
        return layers

    return {
        "trunk": trunk,
        "head_a": head("head_a", config.d_a),
        "head_v": head("head_v", config.d_v_total),
    }


def build_layout(config: FieldConfig) -> List[ParamSlot]:
    """Layout table: ``<layer>.W`` (out, in) then ``<layer>.b`` (out,) per layer."""
    slots: List[ParamSlot] = []
    offset = 0
    for stack in build_layers(config).values():
        for layer in stack:
            for suffix, shape in (("W", (layer.fan_out, layer.fan_in)), ("b", (layer.fan_out,))):
                slot = ParamSlot(f"{layer.name}.{suffix}", offset, shape)
                slots.append(slot)
                offset += slot.size
    return slots


@dataclass
class FieldParams:
    """Flat parameter vector plus the layout table that covers it exactly."""

    config: FieldConfig
    vector: np.ndarray
    layout: List[ParamSlot] = field(default_factory=list)

    def __post_init__(self) -> None:
        if not self.layout:
            self.layout = build_layout(self.config)
        self.vector = np.asarray(self.vector, dtype=np.float64)
        total = sum(s.size for s in self.layout)
        if self.vector.shape != (total,):
            raise LayoutError(f"vector has shape {self.vector.shape}, layout needs ({total},)")
        self._index = {s.name: s for s in self.layout}

    @property
    def size(self) -> int:
        return self.vector.size

    def tensor(self, name: str, vector: Optional[np.ndarray] = None) -> np.ndarray:
        """View of tensor *name* inside *vector* (default: the parameters)."""
        slot = self._index[name]
        vec = self.vector if vector is None else vector
        return vec[slot.offset : slot.offset + slot.size].reshape(slot.shape)

    def with_vector(self, vector: np.ndarray) -> "FieldParams":
        """Same config and layout, different values."""
        return FieldParams(self.config, vector, self.layout)

    def copy(self) -> "FieldParams":
        return self.with_vector(self.vector.copy())


def zero_params(config: FieldConfig) -> FieldParams:
    """All-zero parameters: the zero velocity field."""
    layout = build_layout(config)
    return FieldParams(config, np.zeros(sum(s.size for s in layout)), layout)


def init_params(config: FieldConfig, rng: RandomStream) -> FieldParams:
    """Truncated-normal weights scaled by ``1/sqrt(fan_in)``, zero biases.

    Each head's output projection starts at zero, so the initial field is
    the zero field.
    """
    params = zero_params(config)
    for stack in build_layers(config).values():
        for layer in stack:
            if not layer.activated:
                continue
            w = params.tensor(f"{layer.name}.W")
            draws = truncnorm.rvs(-2.0, 2.0, size=w.shape, random_state=rng)
            w[...] = draws / np.sqrt(layer.fan_in)
    return params


def time_embedding(t, dim: int) -> np.ndarray:
    """Sinusoidal features ``[sin(w_k t), cos(w_k t)]`` with geometric ``w_k``.

    A scalar *t* gives shape ``(dim,)``; a batch ``(n,)`` gives ``(n, dim)``.
    """
    if dim < 2 or dim % 2:
        raise ConfigError(f"time embedding width must be even and >= 2, got {dim}")
    half = dim // 2
    omegas = np.geomspace(1.0, MAX_TIME_FREQUENCY, half) if half > 1 else np.ones(1)
    angles = np.asarray(t, dtype=np.float64)[..., None] * omegas
    return np.concatenate([np.sin(angles), np.cos(angles)], axis=-1)


def _activate(name: str, pre: np.ndarray) -> np.ndarray:
    if name == "tanh":
        return np.tanh(pre)
    inner = _GELU_K * (pre + _GELU_C * pre**3)
    return 0.5 * pre * (1.0 + np.tanh(inner))


def _activate_grad(name: str, pre: np.ndarray, post: np.ndarray) -> np.ndarray:
    if name == "tanh":
        return 1.0 - post * post
    th = np.tanh(_GELU_K * (pre + _GELU_C * pre**3))
    return 0.5 * (1.0 + th) + 0.5 * pre * (1.0 - th * th) * _GELU_K * (1.0 + 3.0 * _GELU_C * pre**2)


@dataclass
class ForwardCache:
    """Layer inputs and pre-activations kept for backpropagation."""

    inputs: Dict[str, np.ndarray] = field(default_factory=dict)
    pre: Dict[str, np.ndarray] = field(default_factory=dict)
    post: Dict[str, np.ndarray] = field(default_factory=dict)


def trunk_input(
    config: FieldConfig,
    x: np.ndarray,
    t,
    phi_a: np.ndarray,
    phi_v: np.ndarray,
) -> np.ndarray:
    """Assemble ``[x, time_embedding(t) + phi_a, phi_v]`` row-wise."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    n = x.shape[0]
    if x.shape[-1] != config.d_a + config.d_v_total:
        raise DimensionError(f"state width {x.shape[-1]} != {config.d_a + config.d_v_total}")
    t = np.broadcast_to(np.asarray(t, dtype=np.float64), (n,))
    phi_a = np.broadcast_to(np.asarray(phi_a, dtype=np.float64), (n, config.time_embed_dim))
    phi_v = np.broadcast_to(np.asarray(phi_v, dtype=np.float64), (n, config.cond_dim))
    temb = time_embedding(t, config.time_embed_dim)
    if config.use_audio_condition:
        temb = temb + phi_a
    return np.concatenate([x, temb, phi_v], axis=-1)


def _dense_forward(
    params: FieldParams,
    layer: DenseSpec,
    h: np.ndarray,
    cache: Optional[ForwardCache],
) -> np.ndarray:
    w = params.tensor(f"{layer.name}.W")
    b = params.tensor(f"{layer.name}.b")
    pre = h @ w.T + b
    out = _activate(params.config.activation, pre) if layer.activated else pre
    if not np.all(np.isfinite(out)):
        raise NumericError(f"non-finite activation in layer {layer.name}", layer=layer.name)
    if cache is not None:
        cache.inputs[layer.name] = h
        cache.pre[layer.name] = pre
        cache.post[layer.name] = out
    return out


def forward(
    params: FieldParams,
    x: np.ndarray,
    t,
    phi_a: np.ndarray,
    phi_v: np.ndarray,
    cache: Optional[ForwardCache] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """Evaluate the field; returns ``(v_a, v_v)`` with one row per input row.

    Raises:
        NumericError: If any layer produces a non-finite value.
    """
    config = params.config
    h = trunk_input(config, x, t, phi_a, phi_v)
    layers = build_layers(config)
    for layer in layers["trunk"]:
        h = _dense_forward(params, layer, h, cache)
    outputs = []
    for key in ("head_a", "head_v"):
        g = h
        for layer in layers[key]:
            g = _dense_forward(params, layer, g, cache)
        outputs.append(g)
    return outputs[0], outputs[1]


def _dense_backward(
    params: FieldParams,
    layer: DenseSpec,
    grad_out: np.ndarray,
    cache: ForwardCache,
    grad: np.ndarray,
) -> np.ndarray:
    if layer.activated:
        grad_out = grad_out * _activate_grad(
            params.config.activation, cache.pre[layer.name], cache.post[layer.name]
        )
    h_in = cache.inputs[layer.name]
    params.tensor(f"{layer.name}.W", grad)[...] += grad_out.T @ h_in
    params.tensor(f"{layer.name}.b", grad)[...] += grad_out.sum(axis=0)
    return grad_out @ params.tensor(f"{layer.name}.W")


def backward(
    params: FieldParams,
    x: np.ndarray,
    t,
    phi_a: np.ndarray,
    phi_v: np.ndarray,
    residual_a: np.ndarray,
    residual_v: np.ndarray,
    lam,
    cache: Optional[ForwardCache] = None,
) -> np.ndarray:
    """Gradient of ``mean_i(|r_a,i|^2 + lam_i |r_v,i|^2)`` with respect to the parameters.

    Residuals are ``prediction - target`` at the current parameters, one row
    per sample; *lam* is a scalar or one weight per sample. A *cache* already
    filled by ``forward`` on the same inputs skips the second forward pass.

    Returns:
        Flat gradient with the same layout as ``params.vector``.
    """
    residual_a = np.atleast_2d(np.asarray(residual_a, dtype=np.float64))
    residual_v = np.atleast_2d(np.asarray(residual_v, dtype=np.float64))
    n = residual_a.shape[0]
    if residual_a.shape != (n, params.config.d_a) or residual_v.shape != (n, params.config.d_v_total):
        raise LayoutError(
            f"residual shapes {residual_a.shape}/{residual_v.shape} do not match the field"
        )
    lam_col = np.broadcast_to(np.asarray(lam, dtype=np.float64), (n,))[:, None]

    if cache is None or not cache.inputs:
        cache = ForwardCache()
        forward(params, x, t, phi_a, phi_v, cache=cache)
    grad = np.zeros_like(params.vector)
    layers = build_layers(params.config)

    seeds = {
        "head_a": (2.0 / n) * residual_a,
        "head_v": (2.0 / n) * lam_col * residual_v,
    }
    grad_trunk = None
    for key in ("head_a", "head_v"):
        g = seeds[key]
        for layer in reversed(layers[key]):
            g = _dense_backward(params, layer, g, cache, grad)
        grad_trunk = g if grad_trunk is None else grad_trunk + g
    g = grad_trunk
    for layer in reversed(layers["trunk"]):
        g = _dense_backward(params, layer, g, cache, grad)
    return grad


def batch_loss(
    params: FieldParams,
    x: np.ndarray,
    t,
    phi_a: np.ndarray,
    phi_v: np.ndarray,
    target_a: np.ndarray,
    target_v: np.ndarray,
    lam,
) -> float:
    """The scalar objective whose gradient ``backward`` returns."""
    v_a, v_v = forward(params, x, t, phi_a, phi_v)
    r_a = v_a - target_a
    r_v = v_v - target_v
    n = r_a.shape[0]
    lam_vec = np.broadcast_to(np.asarray(lam, dtype=np.float64), (n,))
    per_sample = np.sum(r_a * r_a, axis=1) + lam_vec * np.sum(r_v * r_v, axis=1)
    return float(np.mean(per_sample))


# ----------------------------------------------------------------------
# Checkpoint files
# ----------------------------------------------------------------------

CHECKPOINT_MAGIC = b"SBFM"
CHECKPOINT_VERSION = 1
_HEADER = struct.Struct("<4sI32sQ")


def save_checkpoint(path: Union[str, Path], params: FieldParams) -> Path:
    """Write ``{magic, version, config digest, count}`` + little-endian f64 params.

    A ``<path>.json`` sidecar repeats the config so the file can be rebuilt.
    """
    path = Path(path)
    digest = bytes.fromhex(params.config.digest())
    header = _HEADER.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, digest, params.size)
    with path.open("wb") as fh:
        fh.write(header)
        fh.write(params.vector.astype("<f8").tobytes())
    sidecar = {
        "config": asdict(params.config),
        "config_digest": params.config.digest(),
        "param_count": params.size,
        "version": CHECKPOINT_VERSION,
    }
    Path(f"{path}.json").write_text(json.dumps(sidecar, indent=2, sort_keys=True))
    logger.debug("saved checkpoint %s (%d params)", path, params.size)
    return path


def load_checkpoint(path: Union[str, Path]) -> FieldParams:
    """Read a checkpoint written by ``save_checkpoint``.

    Raises:
        FormatError: On a bad magic, version, digest or size.
    """
    path = Path(path)
    sidecar_path = Path(f"{path}.json")
    if not sidecar_path.is_file():
        raise FormatError(f"missing checkpoint sidecar {sidecar_path}")
    sidecar = json.loads(sidecar_path.read_text())
    config = FieldConfig(**sidecar["config"])
    blob = path.read_bytes()
    if len(blob) < _HEADER.size:
        raise FormatError(f"{path} is too short to be a checkpoint")
    magic, version, digest, count = _HEADER.unpack_from(blob)
    if magic != CHECKPOINT_MAGIC:
        raise FormatError(f"{path} has magic {magic!r}, expected {CHECKPOINT_MAGIC!r}")
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"{path} has version {version}, expected {CHECKPOINT_VERSION}")
    if digest.hex() != config.digest():
        raise FormatError(f"{path} config digest does not match its sidecar")
    body = blob[_HEADER.size :]
    if len(body) != 8 * count:
        raise FormatError(f"{path} holds {len(body)} parameter bytes, header says {8 * count}")
    vector = np.frombuffer(body, dtype="<f8").astype(np.float64)
    return FieldParams(config, vector)
