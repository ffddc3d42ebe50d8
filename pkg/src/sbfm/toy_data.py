"""Synthetic paired object-removal dataset.

Each scene mixes ``N`` of ``K`` object signatures (smooth audio tracks plus
Gaussian-bump video features). The edited latent removes one object by
exact subtraction, and the condition names that object (``phi_a``) and
pools the source video under its mask (``phi_v``).
"""

from __future__ import annotations

import hashlib
import json
import logging
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np

from .bridge_math import EndpointPair, LatentLayout
from .errors import ConfigError, DimensionError, FormatError
from .streams import substream

logger = logging.getLogger(__name__)

# signatures live on this dyadic grid so mixtures add and subtract exactly
QUANTUM = 2.0**-24

PROJECTOR_MODES = ("linear-resample",)
SPLIT_FRACTIONS = (0.90, 0.05, 0.05)

DATASET_MAGIC = b"SBDS"
DATASET_VERSION = 1


@dataclass(frozen=True)
class ProjectorSpec:
    """Temporal projector from the video grid onto the audio grid."""

    t_v: int
    t_a: int
    mode: str = "linear-resample"

    def __post_init__(self) -> None:
        if self.t_v < 1 or self.t_a < 1:
            raise ConfigError(f"grid lengths must be >= 1, got t_v={self.t_v}, t_a={self.t_a}")
        if self.mode not in PROJECTOR_MODES:
            raise ConfigError(f"projector mode must be one of {PROJECTOR_MODES}")


@dataclass(frozen=True)
class DataConfig:
    """Generator settings.

    Attributes:
        n_pairs: Number of scenes.
        n_objects: Object vocabulary size ``K``.
        objects_per_scene: Objects mixed per scene ``N`` (2 <= N <= K).
        t_a: Audio grid length.
        c_a: Audio channels.
        t_v: Raw video grid length.
        c_v: Video channels.
        code_dim: Width of the removed-object code ``phi_a``.
    """

    n_pairs: int = 4096
    n_objects: int = 8
    objects_per_scene: int = 2
    t_a: int = 32
    c_a: int = 1
    t_v: int = 8
    c_v: int = 4
    code_dim: int = 16

    def __post_init__(self) -> None:
        for name in ("n_pairs", "n_objects", "t_a", "c_a", "t_v", "c_v", "code_dim"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.objects_per_scene < 2:
            raise ConfigError(
                f"objects_per_scene must be >= 2, got {self.objects_per_scene}"
            )
        if self.objects_per_scene > self.n_objects:
            raise ConfigError(
                f"objects_per_scene ({self.objects_per_scene}) exceeds n_objects "
                f"({self.n_objects})"
            )
        if self.code_dim < self.n_objects:
            raise ConfigError(
                f"code_dim ({self.code_dim}) must be >= n_objects ({self.n_objects})"
            )

    @property
    def projector(self) -> ProjectorSpec:
        return ProjectorSpec(t_v=self.t_v, t_a=self.t_a)

    @property
    def layout(self) -> LatentLayout:
        return LatentLayout(self.t_a * self.c_a, self.t_a * self.c_v)


@dataclass(frozen=True)
class ObjectSignature:
    """Per-object audio track and raw video features with their support."""

    object_id: int
    audio_sig: np.ndarray
    video_sig: np.ndarray
    support_mask: np.ndarray


@dataclass(frozen=True)
class ConditionEmbedding:
    """Removal condition: object code ``phi_a`` and pooled visual ``phi_v``."""

    phi_a: np.ndarray
    phi_v: np.ndarray


def quantize(values: np.ndarray) -> np.ndarray:
    """Round onto the ``QUANTUM`` grid."""
    return np.round(np.asarray(values, dtype=np.float64) / QUANTUM) * QUANTUM


def temporal_project(video_block: np.ndarray, spec: ProjectorSpec) -> np.ndarray:
    """Resample a time-major ``(t_v, c)`` block onto ``t_a`` steps per channel.

    Linear interpolation with both grid ends aligned; the input is the
    flattened block of length ``t_v * c``.
    """
    video_block = np.asarray(video_block, dtype=np.float64)
    if video_block.ndim != 1 or video_block.size % spec.t_v:
        raise DimensionError(
            f"video block of length {video_block.size} is not a multiple of t_v={spec.t_v}"
        )
    grid = video_block.reshape(spec.t_v, -1)
    if spec.t_v == spec.t_a:
        return grid.reshape(-1).copy()
    if spec.t_v == 1:
        return np.repeat(grid, spec.t_a, axis=0).reshape(-1)
    src = np.arange(spec.t_v, dtype=np.float64)
    if spec.t_a == 1:
        dst = np.zeros(1)
    else:
        dst = np.arange(spec.t_a, dtype=np.float64) * (spec.t_v - 1) / (spec.t_a - 1)
    out = np.stack([np.interp(dst, src, grid[:, c]) for c in range(grid.shape[1])], axis=1)
    return out.reshape(-1)


def object_signature(seed: int, object_id: int, config: DataConfig) -> ObjectSignature:
    """Deterministic signature of *object_id* under *seed*.

    Audio: three sinusoids per channel. Video: a Gaussian bump in time with
    a signed per-channel amplitude, zeroed below 10% of its peak.
    """
    rng = substream(seed, "data", 0, object_id)
    s = np.arange(config.t_a, dtype=np.float64) / config.t_a
    audio = np.zeros((config.t_a, config.c_a))
    for c in range(config.c_a):
        amps = rng.uniform(0.5, 1.5, size=3)
        freqs = rng.integers(1, 5, size=3)
        phases = rng.uniform(0.0, 2.0 * np.pi, size=3)
        audio[:, c] = np.sum(amps * np.sin(2.0 * np.pi * freqs * s[:, None] + phases), axis=1)

    tau = np.arange(config.t_v, dtype=np.float64)
    center = rng.uniform(0.0, config.t_v - 1)
    width = rng.uniform(0.8, 1.5)
    bump = np.exp(-0.5 * ((tau - center) / width) ** 2)
    bump = np.where(bump >= 0.1 * bump.max(), bump, 0.0)
    amp = rng.uniform(1.0, 2.0, size=config.c_v) * rng.choice([-1.0, 1.0], size=config.c_v)
    video = quantize(np.outer(bump, amp)).reshape(-1)

    return ObjectSignature(
        object_id=object_id,
        audio_sig=quantize(audio.reshape(-1)),
        video_sig=video,
        support_mask=(np.abs(video) > 0).astype(np.float64),
    )


def embed_signature(sig: ObjectSignature, config: DataConfig) -> np.ndarray:
    """Joint latent contribution ``[audio, P(video)]`` of one object."""
    projected = quantize(temporal_project(sig.video_sig, config.projector))
    return config.layout.join(sig.audio_sig, projected)


def encode_condition(
    video_block: np.ndarray,
    mask: np.ndarray,
    removed_id: int,
    code_dim: int,
    n_channels: int,
) -> ConditionEmbedding:
    """Pool the masked source video per channel and code the removed object.

    ``phi_v[c]`` is the mask-weighted mean of channel ``c`` (zero where the
    mask is empty); ``phi_a`` is the standard-basis vector ``e_removed_id``.
    """
    video = np.asarray(video_block, dtype=np.float64).reshape(-1, n_channels)
    m = np.asarray(mask, dtype=np.float64).reshape(-1, n_channels)
    if video.shape != m.shape:
        raise DimensionError(f"mask shape {m.shape} does not match video shape {video.shape}")
    weight = m.sum(axis=0)
    pooled = (m * video).sum(axis=0)
    phi_v = np.divide(pooled, weight, out=np.zeros(n_channels), where=weight > 0)
    phi_a = np.zeros(code_dim)
    phi_a[removed_id] = 1.0
    return ConditionEmbedding(phi_a=phi_a, phi_v=phi_v)


@dataclass
class ToyDataset:
    """In-memory dataset; row ``i`` of every array belongs to pair ``i``."""

    config: DataConfig
    seed: int
    x0: np.ndarray
    x1: np.ndarray
    removed_id: np.ndarray
    phi_a: np.ndarray
    phi_v: np.ndarray

    def __len__(self) -> int:
        return int(self.x0.shape[0])

    @property
    def layout(self) -> LatentLayout:
        return self.config.layout

    def pair(self, index=slice(None)) -> EndpointPair:
        return EndpointPair(self.x0[index], self.x1[index], self.layout)

    def subset(self, index) -> "ToyDataset":
        return ToyDataset(
            config=self.config,
            seed=self.seed,
            x0=self.x0[index],
            x1=self.x1[index],
            removed_id=self.removed_id[index],
            phi_a=self.phi_a[index],
            phi_v=self.phi_v[index],
        )

    def split(self) -> Tuple["ToyDataset", "ToyDataset", "ToyDataset"]:
        """Contiguous train/validation/test split (90/5/5)."""
        n = len(self)
        n_val = max(1, int(round(n * SPLIT_FRACTIONS[1]))) if n >= 3 else 0
        n_test = max(1, int(round(n * SPLIT_FRACTIONS[2]))) if n >= 3 else 0
        n_train = n - n_val - n_test
        return (
            self.subset(slice(0, n_train)),
            self.subset(slice(n_train, n_train + n_val)),
            self.subset(slice(n_train + n_val, n)),
        )


def _generate_rows(
    seed: int,
    config: DataConfig,
    embeddings: np.ndarray,
    signatures: List[ObjectSignature],
    indices: range,
) -> List[Tuple[np.ndarray, np.ndarray, int, ConditionEmbedding]]:
    rows = []
    for i in indices:
        rng = substream(seed, "data", 1, i)
        ids = rng.choice(config.n_objects, size=config.objects_per_scene, replace=False)
        removed = int(ids[rng.integers(config.objects_per_scene)])
        kept = [int(k) for k in ids if k != removed]
        x1 = np.sum(embeddings[kept], axis=0)
        x0 = x1 + embeddings[removed]
        source_video = np.sum([signatures[int(k)].video_sig for k in ids], axis=0)
        cond = encode_condition(
            source_video, signatures[removed].support_mask, removed, config.code_dim, config.c_v
        )
        rows.append((x0, x1, removed, cond))
    return rows


def generate_dataset(seed: int, config: DataConfig, threads: int = 0) -> ToyDataset:
    """Generate ``config.n_pairs`` removal pairs.

    Pair ``i`` draws from its own index-derived substream, so the output is
    identical for any *threads* value.
    """
    signatures = [object_signature(seed, k, config) for k in range(config.n_objects)]
    embeddings = np.stack([embed_signature(s, config) for s in signatures])

    n = config.n_pairs
    if threads > 0:
        chunk = max(1, -(-n // threads))
        ranges = [range(lo, min(lo + chunk, n)) for lo in range(0, n, chunk)]
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = pool.map(lambda r: _generate_rows(seed, config, embeddings, signatures, r), ranges)
            rows = [row for part in parts for row in part]
    else:
        rows = _generate_rows(seed, config, embeddings, signatures, range(n))

    dataset = ToyDataset(
        config=config,
        seed=seed,
        x0=np.stack([r[0] for r in rows]),
        x1=np.stack([r[1] for r in rows]),
        removed_id=np.array([r[2] for r in rows], dtype=np.int64),
        phi_a=np.stack([r[3].phi_a for r in rows]),
        phi_v=np.stack([r[3].phi_v for r in rows]),
    )
    logger.info("generated %d pairs (K=%d, N=%d)", n, config.n_objects, config.objects_per_scene)
    return dataset


# ----------------------------------------------------------------------
# Dataset files
# ----------------------------------------------------------------------

_PREFIX = struct.Struct("<4sII")
_TAIL = struct.Struct("<QIIII")


def _record_dtype(config: DataConfig) -> np.dtype:
    layout = config.layout
    return np.dtype(
        [
            ("x0", "<f8", (layout.d,)),
            ("x1", "<f8", (layout.d,)),
            ("removed_id", "<u4"),
            ("phi_a", "<f8", (config.code_dim,)),
            ("phi_v", "<f8", (config.c_v,)),
        ]
    )


def _config_block(seed: int, config: DataConfig) -> bytes:
    return json.dumps({"seed": seed, **asdict(config)}, sort_keys=True).encode("utf-8")


def header_size(seed: int, config: DataConfig) -> int:
    """Bytes before the first record."""
    return _PREFIX.size + len(_config_block(seed, config)) + _TAIL.size


def record_size(config: DataConfig) -> int:
    """Bytes per record."""
    return _record_dtype(config).itemsize


@dataclass(frozen=True)
class DatasetManifest:
    """Sidecar record of a dataset file."""

    path: str
    digest: str
    n_pairs: int
    seed: int
    config: Dict[str, int]

    def to_dict(self) -> Dict[str, object]:
        return {
            "config": dict(self.config),
            "digest": self.digest,
            "n_pairs": self.n_pairs,
            "path": self.path,
            "seed": self.seed,
        }


def write_dataset(dataset: ToyDataset, path: Union[str, Path]) -> DatasetManifest:
    """Write the binary dataset file and its ``<path>.json`` digest sidecar."""
    path = Path(path)
    config = dataset.config
    layout = config.layout
    block = _config_block(dataset.seed, config)
    records = np.zeros(len(dataset), dtype=_record_dtype(config))
    records["x0"] = dataset.x0
    records["x1"] = dataset.x1
    records["removed_id"] = dataset.removed_id
    records["phi_a"] = dataset.phi_a
    records["phi_v"] = dataset.phi_v

    blob = b"".join(
        [
            _PREFIX.pack(DATASET_MAGIC, DATASET_VERSION, len(block)),
            block,
            _TAIL.pack(len(dataset), layout.d_a, layout.d_v_total, config.code_dim, config.c_v),
            records.tobytes(),
        ]
    )
    path.write_bytes(blob)
    manifest = DatasetManifest(
        path=str(path),
        digest=hashlib.sha256(blob).hexdigest(),
        n_pairs=len(dataset),
        seed=dataset.seed,
        config=asdict(config),
    )
    Path(f"{path}.json").write_text(json.dumps(manifest.to_dict(), indent=2, sort_keys=True))
    logger.info("wrote %s (%d bytes, sha256 %s)", path, len(blob), manifest.digest)
    return manifest


def file_digest(path: Union[str, Path]) -> str:
    """SHA-256 of a file's bytes."""
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def read_dataset(path: Union[str, Path], expected_digest: Optional[str] = None) -> ToyDataset:
    """Load a dataset written by ``write_dataset``.

    Raises:
        FormatError: On a bad magic, version, size or digest.
    """
    path = Path(path)
    blob = path.read_bytes()
    if len(blob) < _PREFIX.size:
        raise FormatError(f"{path} is too short to be a dataset")
    magic, version, block_len = _PREFIX.unpack_from(blob)
    if magic != DATASET_MAGIC:
        raise FormatError(f"{path} has magic {magic!r}, expected {DATASET_MAGIC!r}")
    if version != DATASET_VERSION:
        raise FormatError(f"{path} has version {version}, expected {DATASET_VERSION}")
    if expected_digest is not None and hashlib.sha256(blob).hexdigest() != expected_digest:
        raise FormatError(f"{path} does not match digest {expected_digest}")
    offset = _PREFIX.size
    meta = json.loads(blob[offset : offset + block_len].decode("utf-8"))
    offset += block_len
    seed = int(meta.pop("seed"))
    config = DataConfig(**meta)
    n_pairs, d_a, d_v, code_dim, c_v = _TAIL.unpack_from(blob, offset)
    offset += _TAIL.size
    layout = config.layout
    if (d_a, d_v, code_dim, c_v) != (layout.d_a, layout.d_v_total, config.code_dim, config.c_v):
        raise FormatError(f"{path} dims do not match its config block")
    dtype = _record_dtype(config)
    if len(blob) - offset != n_pairs * dtype.itemsize:
        raise FormatError(
            f"{path} holds {len(blob) - offset} record bytes, expected {n_pairs * dtype.itemsize}"
        )
    records = np.frombuffer(blob, dtype=dtype, count=n_pairs, offset=offset)
    return ToyDataset(
        config=config,
        seed=seed,
        x0=records["x0"].astype(np.float64),
        x1=records["x1"].astype(np.float64),
        removed_id=records["removed_id"].astype(np.int64),
        phi_a=records["phi_a"].astype(np.float64),
        phi_v=records["phi_v"].astype(np.float64),
    )
