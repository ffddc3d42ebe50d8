"""Training targets and the weighted bimodal regression loss.

``draw_training_point`` samples a time and a bridge state per pair and
returns the conditional-flow target split into audio and video blocks;
``weighted_loss`` scores predictions against those targets with the video
block weighted by ``lam``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Dict, Optional

import numpy as np

from .bridge_math import (
    BridgeSchedule,
    EndpointPair,
    cfm_conditional_flow,
    sample_bridge_point,
    sb_conditional_flow,
)
from .errors import ConfigError, DimensionError
from .streams import RandomStream

OBJECTIVE_KINDS = ("sbfm", "cfm")
TIME_DISTRIBUTIONS = ("uniform-clamped",)
SOURCE_KINDS = ("paired", "noise")


@dataclass(frozen=True)
class LossConfig:
    """What the field regresses onto, and how the blocks are weighted.

    Attributes:
        lam: Weight of the video-block squared residual.
        objective_kind: ``"sbfm"`` (bridge flow) or ``"cfm"`` (straight line).
        schedule: Bridge noise scale and time clamp.
        time_distribution: Law of the training times.
        source_kind: ``"paired"`` starts bridges at the source mixture;
            ``"noise"`` starts them at standard Gaussian noise instead.
    """

    lam: float = 3.0
    objective_kind: str = "sbfm"
    schedule: BridgeSchedule = field(default_factory=BridgeSchedule)
    time_distribution: str = "uniform-clamped"
    source_kind: str = "paired"

    def __post_init__(self) -> None:
        if not self.lam > 0:
            raise ConfigError(f"lam must be > 0, got {self.lam}")
        if self.objective_kind not in OBJECTIVE_KINDS:
            raise ConfigError(f"objective_kind must be one of {OBJECTIVE_KINDS}")
        if self.time_distribution not in TIME_DISTRIBUTIONS:
            raise ConfigError(f"time_distribution must be one of {TIME_DISTRIBUTIONS}")
        if self.source_kind not in SOURCE_KINDS:
            raise ConfigError(f"source_kind must be one of {SOURCE_KINDS}")


@dataclass(frozen=True)
class LossReport:
    """Batch loss with its unweighted per-block parts.

    ``total == audio_part + lam * video_part``.
    """

    total: float
    audio_part: float
    video_part: float
    batch_size: int

    def to_dict(self) -> Dict[str, Any]:
        return {
            "total": self.total,
            "audio_part": self.audio_part,
            "video_part": self.video_part,
            "batch_size": self.batch_size,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "LossReport":
        return cls(
            total=float(data["total"]),
            audio_part=float(data["audio_part"]),
            video_part=float(data["video_part"]),
            batch_size=int(data["batch_size"]),
        )


@dataclass
class TrainingPoint:
    """One regression example per row: time, bridge state and split target."""

    t: np.ndarray
    x_t: np.ndarray
    target_a: np.ndarray
    target_v: np.ndarray


def draw_training_point(
    pair: EndpointPair,
    config: LossConfig,
    rng: RandomStream,
    noise_rng: Optional[RandomStream] = None,
) -> TrainingPoint:
    """Draw ``t ~ U[eps, 1 - eps]`` and ``x_t`` per row of *pair*; build targets.

    Times come from *rng*; bridge noise (and Gaussian sources when
    ``source_kind == "noise"``) from *noise_rng*, defaulting to *rng*.
    """
    if pair.layout is None:
        raise DimensionError("draw_training_point needs a pair with a latent layout")
    noise_rng = rng if noise_rng is None else noise_rng
    schedule = config.schedule
    batch_shape = pair.x0.shape[:-1]
    t = rng.uniform(schedule.t_min, schedule.t_max, size=batch_shape)

    if config.source_kind == "noise":
        pair = EndpointPair(noise_rng.standard_normal(pair.x0.shape), pair.x1, pair.layout)

    x_t = sample_bridge_point(pair, schedule, t, noise_rng)
    if config.objective_kind == "cfm":
        target = np.broadcast_to(cfm_conditional_flow(pair), x_t.shape).copy()
    else:
        target = sb_conditional_flow(pair, x_t, t, schedule)
    target_a, target_v = pair.layout.split(target)
    return TrainingPoint(t=np.asarray(t), x_t=x_t, target_a=target_a, target_v=target_v)


def weighted_loss(
    pred_a: np.ndarray,
    pred_v: np.ndarray,
    target_a: np.ndarray,
    target_v: np.ndarray,
    lam: float,
) -> LossReport:
    """Mean over the batch of ``|pred_a - target_a|^2 + lam |pred_v - target_v|^2``.

    Squared errors are summed over coordinates within a block and averaged
    over rows.
    """
    pred_a = np.atleast_2d(pred_a)
    pred_v = np.atleast_2d(pred_v)
    target_a = np.atleast_2d(target_a)
    target_v = np.atleast_2d(target_v)
    if pred_a.shape != target_a.shape or pred_v.shape != target_v.shape:
        raise DimensionError(
            f"prediction shapes {pred_a.shape}/{pred_v.shape} do not match targets "
            f"{target_a.shape}/{target_v.shape}"
        )
    r_a = pred_a - target_a
    r_v = pred_v - target_v
    audio_part = float(np.mean(np.sum(r_a * r_a, axis=-1)))
    video_part = float(np.mean(np.sum(r_v * r_v, axis=-1)))
    return LossReport(
        total=audio_part + lam * video_part,
        audio_part=audio_part,
        video_part=video_part,
        batch_size=int(r_a.shape[0]),
    )


def combine_reports(reports, lam: float) -> LossReport:
    """Sample-weighted mean of several batch reports."""
    reports = list(reports)
    n = sum(r.batch_size for r in reports)
    if n == 0:
        return LossReport(0.0, 0.0, 0.0, 0)
    audio = sum(r.audio_part * r.batch_size for r in reports) / n
    video = sum(r.video_part * r.batch_size for r in reports) / n
    return LossReport(total=audio + lam * video, audio_part=audio, video_part=video, batch_size=n)
