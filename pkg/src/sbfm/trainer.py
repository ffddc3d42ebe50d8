"""Optimisation loop for the velocity field.

AdamW with a linear learning-rate warmup, seeded per-epoch shuffling,
per-epoch validation on a fixed set of bridge draws, checkpoint retention
(best and last) and the run manifest.
"""

from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import List, Optional, Tuple, Union

import numpy as np
from tqdm import tqdm

from ._compat import RuntimeState, detect_runtime
from .errors import ConfigError, DivergenceError, LayoutError, NumericError
from .field_model import (
    FieldConfig,
    FieldParams,
    ForwardCache,
    backward,
    forward,
    init_params,
    save_checkpoint,
)
from .manifest import EpochRecord, RunManifest, gather_environment
from .objective import (
    LossConfig,
    LossReport,
    TrainingPoint,
    combine_reports,
    draw_training_point,
    weighted_loss,
)
from .streams import StreamFactory
from .toy_data import ToyDataset, file_digest

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"


@dataclass(frozen=True)
class OptimConfig:
    """AdamW, warmup and loop settings.

    Attributes:
        beta1: First-moment decay.
        beta2: Second-moment decay.
        eps: Denominator guard.
        weight_decay: Decoupled weight decay.
        lr_init: Learning rate at step 0.
        lr_peak: Learning rate from ``warmup_steps`` on.
        warmup_steps: Length of the linear ramp.
        batch_size: Pairs per optimisation step.
        max_epochs: Passes over the training split.
        seed: Root of every random substream of the run.
        grad_clip: Max gradient norm; 0 disables clipping.
    """

    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-4
    lr_init: float = 1e-5
    lr_peak: float = 1e-4
    warmup_steps: int = 5000
    batch_size: int = 64
    max_epochs: int = 200
    seed: int = 0
    grad_clip: float = 0.0

    def __post_init__(self) -> None:
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError(f"betas must lie in [0, 1), got {self.beta1}, {self.beta2}")
        if self.lr_init > self.lr_peak:
            raise ConfigError(f"lr_init ({self.lr_init}) exceeds lr_peak ({self.lr_peak})")
        if self.lr_init < 0:
            raise ConfigError(f"lr_init must be >= 0, got {self.lr_init}")
        if self.warmup_steps < 1:
            raise ConfigError(f"warmup_steps must be >= 1, got {self.warmup_steps}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.max_epochs < 0:
            raise ConfigError(f"max_epochs must be >= 0, got {self.max_epochs}")
        if self.seed < 0:
            raise ConfigError(f"seed must be >= 0, got {self.seed}")
        if self.grad_clip < 0:
            raise ConfigError(f"grad_clip must be >= 0, got {self.grad_clip}")


@dataclass
class AdamState:
    """First and second moment estimates, same layout as the parameters."""

    m: np.ndarray
    v: np.ndarray

    @classmethod
    def zeros(cls, size: int) -> "AdamState":
        return cls(np.zeros(size), np.zeros(size))


def lr_at(step: int, config: OptimConfig) -> float:
    """Linear ramp from ``lr_init`` to ``lr_peak`` over ``warmup_steps``, then flat."""
    if step >= config.warmup_steps:
        return config.lr_peak
    frac = step / config.warmup_steps
    return config.lr_init + (config.lr_peak - config.lr_init) * frac


def optimizer_step(
    params: np.ndarray,
    grads: np.ndarray,
    moments: AdamState,
    step: int,
    config: OptimConfig,
    lr: Optional[float] = None,
) -> Tuple[np.ndarray, AdamState]:
    """One AdamW update; *step* counts from 0.

    Weight decay is applied to the parameters directly
    (``p <- p - lr * wd * p``) before the bias-corrected adaptive term.

    Raises:
        DivergenceError: If *grads* holds a non-finite entry.
        LayoutError: If the arrays do not share one shape.
    """
    if grads.shape != params.shape or moments.m.shape != params.shape:
        raise LayoutError(
            f"parameter/gradient/moment shapes differ: {params.shape}, {grads.shape}, "
            f"{moments.m.shape}"
        )
    if not np.all(np.isfinite(grads)):
        raise DivergenceError(f"non-finite gradient at step {step}", step=step)
    lr = lr_at(step, config) if lr is None else lr
    b1, b2 = config.beta1, config.beta2
    m = b1 * moments.m + (1.0 - b1) * grads
    v = b2 * moments.v + (1.0 - b2) * grads * grads
    m_hat = m / (1.0 - b1 ** (step + 1))
    v_hat = v / (1.0 - b2 ** (step + 1))
    decayed = params - lr * config.weight_decay * params
    updated = decayed - lr * m_hat / (np.sqrt(v_hat) + config.eps)
    return updated, AdamState(m, v)


def clip_gradient(grads: np.ndarray, max_norm: float) -> np.ndarray:
    """Rescale *grads* to norm *max_norm* when it is larger; 0 disables."""
    if max_norm <= 0:
        return grads
    norm = float(np.linalg.norm(grads))
    if norm > max_norm:
        return grads * (max_norm / norm)
    return grads


# ----------------------------------------------------------------------
# Batch evaluation
# ----------------------------------------------------------------------


def _shard_gradient(
    params: FieldParams,
    data: ToyDataset,
    rows: np.ndarray,
    point: TrainingPoint,
    lam: float,
) -> Tuple[np.ndarray, LossReport]:
    cache = ForwardCache()
    v_a, v_v = forward(params, point.x_t, point.t, data.phi_a[rows], data.phi_v[rows], cache=cache)
    report = weighted_loss(v_a, v_v, point.target_a, point.target_v, lam)
    grad = backward(
        params,
        point.x_t,
        point.t,
        data.phi_a[rows],
        data.phi_v[rows],
        v_a - point.target_a,
        v_v - point.target_v,
        lam,
        cache=cache,
    )
    return grad, report


def _slice_point(point: TrainingPoint, sl: slice) -> TrainingPoint:
    return TrainingPoint(point.t[sl], point.x_t[sl], point.target_a[sl], point.target_v[sl])


def batch_gradient(
    params: FieldParams,
    data: ToyDataset,
    rows: np.ndarray,
    point: TrainingPoint,
    lam: float,
    threads: int = 0,
) -> Tuple[np.ndarray, LossReport]:
    """Gradient and loss of one batch.

    With ``threads > 0`` the batch is cut into contiguous shards whose
    gradients are computed concurrently and summed in shard order, weighted
    by shard size. The result is deterministic but its bits differ from the
    single-threaded path.
    """
    n = len(rows)
    if threads <= 0 or n < 2:
        return _shard_gradient(params, data, rows, point, lam)
    n_shards = min(threads, n)
    bounds = np.linspace(0, n, n_shards + 1).astype(int)
    slices = [slice(int(lo), int(hi)) for lo, hi in zip(bounds[:-1], bounds[1:])]
    with ThreadPoolExecutor(max_workers=n_shards) as pool:
        parts = list(
            pool.map(
                lambda sl: _shard_gradient(params, data, rows[sl], _slice_point(point, sl), lam),
                slices,
            )
        )
    grad = np.zeros_like(params.vector)
    for (g, _), sl in zip(parts, slices):
        grad += g * ((sl.stop - sl.start) / n)
    return grad, combine_reports([r for _, r in parts], lam)


def evaluate_loss(
    params: FieldParams,
    data: ToyDataset,
    point: TrainingPoint,
    lam: float,
    batch_size: int = 256,
) -> LossReport:
    """Loss of the field on pre-drawn points, in fixed-size chunks."""
    reports = []
    for lo in range(0, len(data), batch_size):
        sl = slice(lo, lo + batch_size)
        v_a, v_v = forward(params, point.x_t[sl], point.t[sl], data.phi_a[sl], data.phi_v[sl])
        reports.append(weighted_loss(v_a, v_v, point.target_a[sl], point.target_v[sl], lam))
    return combine_reports(reports, lam)


def zero_field_loss(point: TrainingPoint, lam: float) -> LossReport:
    """Loss of the zero field: the lam-weighted mean squared target."""
    return weighted_loss(
        np.zeros_like(point.target_a), np.zeros_like(point.target_v),
        point.target_a, point.target_v, lam,
    )


# ----------------------------------------------------------------------
# Training loop
# ----------------------------------------------------------------------


@dataclass
class TrainResult:
    """What ``train()`` leaves behind."""

    manifest: RunManifest
    run_dir: Path
    params: FieldParams

    @property
    def selected_path(self) -> Optional[Path]:
        if self.manifest.selected_checkpoint is None:
            return None
        return self.run_dir / self.manifest.selected_checkpoint


def _checkpoint_name(epoch: int) -> str:
    return f"epoch-{epoch:04d}.ckpt"


def _prune_checkpoints(run_dir: Path, keep: List[Optional[str]]) -> None:
    for path in sorted(run_dir.glob("epoch-*.ckpt")):
        if path.name not in keep:
            path.unlink()
            sidecar = Path(f"{path}.json")
            if sidecar.exists():
                sidecar.unlink()
            logger.debug("pruned checkpoint %s", path.name)


def train(
    dataset: ToyDataset,
    field_config: FieldConfig,
    loss_config: LossConfig,
    optim_config: OptimConfig,
    run_dir: Union[str, Path],
    *,
    dataset_digest: str = "",
    dataset_path: Optional[Union[str, Path]] = None,
    runtime: Optional[RuntimeState] = None,
    progress: bool = False,
) -> TrainResult:
    """Train a field on the train split; select by validation loss.

    Each epoch shuffles the train split with a seeded permutation, takes
    one AdamW step per batch, scores the validation split on a fixed set of
    bridge draws, saves a checkpoint (keeping only the best and the last)
    and rewrites the manifest.

    Raises:
        DivergenceError: If training produces non-finite values; the manifest
            is written with status ``"diverged"`` first.
    """
    runtime = runtime or detect_runtime()
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    if not dataset_digest and dataset_path is not None:
        dataset_digest = file_digest(dataset_path)

    train_set, val_set, _ = dataset.split()
    streams = StreamFactory(optim_config.seed)
    params = init_params(field_config, streams.stream("init"))
    moments = AdamState.zeros(params.size)
    time_rng = streams.stream("time-draws")
    noise_rng = streams.stream("bridge-noise")
    lam = loss_config.lam

    val_point = draw_training_point(
        val_set.pair(), loss_config, streams.stream("validation"), streams.stream("validation", 1)
    )
    manifest = RunManifest(
        config={
            "field": asdict(field_config),
            "loss": asdict(loss_config),
            "optim": asdict(optim_config),
        },
        dataset_digest=dataset_digest,
        seed=optim_config.seed,
        environment=gather_environment(runtime),
        baseline_validation=zero_field_loss(val_point, lam) if len(val_set) else None,
    )
    manifest_path = run_dir / MANIFEST_NAME
    manifest.write(manifest_path)

    step = 0
    n_train = len(train_set)
    epochs = tqdm(range(1, optim_config.max_epochs + 1), desc="epochs", disable=not progress)
    for epoch in epochs:
        started = time.perf_counter()
        order = streams.stream("shuffle", epoch).permutation(n_train)
        reports: List[LossReport] = []
        try:
            for lo in range(0, n_train, optim_config.batch_size):
                rows = order[lo : lo + optim_config.batch_size]
                point = draw_training_point(train_set.pair(rows), loss_config, time_rng, noise_rng)
                grad, report = batch_gradient(params, train_set, rows, point, lam, runtime.threads)
                grad = clip_gradient(grad, optim_config.grad_clip)
                vector, moments = optimizer_step(params.vector, grad, moments, step, optim_config)
                params = params.with_vector(vector)
                reports.append(report)
                step += 1
            validation = evaluate_loss(params, val_set, val_point, lam)
            if not math.isfinite(validation.total):
                raise DivergenceError(f"non-finite validation loss in epoch {epoch}", step=step)
        except (DivergenceError, NumericError) as exc:
            manifest.status = "diverged"
            manifest.write(manifest_path)
            logger.error("training diverged in epoch %d: %s", epoch, exc)
            if isinstance(exc, DivergenceError):
                raise
            raise DivergenceError(str(exc), step=step) from exc

        name = _checkpoint_name(epoch)
        save_checkpoint(run_dir / name, params)
        record = EpochRecord(
            epoch=epoch,
            train=combine_reports(reports, lam),
            validation=validation,
            lr=lr_at(step, optim_config),
            steps=step,
            checkpoint_id=name,
            wall_clock_s=time.perf_counter() - started,
        )
        manifest.epochs.append(record)
        manifest.selected_checkpoint = manifest.best_epoch.checkpoint_id
        _prune_checkpoints(run_dir, [manifest.selected_checkpoint, name])
        manifest.write(manifest_path)
        epochs.set_postfix({"val": f"{validation.total:.4g}"})
        logger.info(
            "epoch %d: train %.6g, validation %.6g (audio %.6g, video %.6g)",
            epoch, record.train.total, validation.total,
            validation.audio_part, validation.video_part,
        )

    manifest.status = "completed"
    manifest.write(manifest_path)
    if manifest.selected_checkpoint:
        logger.info("selected %s", manifest.selected_checkpoint)
    return TrainResult(manifest=manifest, run_dir=run_dir, params=params)
