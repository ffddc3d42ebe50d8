"""Closed-form quantities of the pinned Brownian bridge.

All functions are pure and vectorised: latent arguments are arrays whose
last axis is the joint latent ``[audio, video]`` of length ``d``; leading
axes are batch axes. A time argument is either a scalar or an array with
the batch shape (one time per row).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Tuple, Union

import numpy as np

from .errors import ConfigError, DegenerateScoreError, DimensionError, DomainError
from .streams import RandomStream

TimePoint = Union[float, np.ndarray]

DEFAULT_SIGMA = 0.1
DEFAULT_EPS_CLAMP = 1e-3

# slack for float round-off when checking clamped times
_TIME_SLACK = 1e-12


@dataclass(frozen=True)
class BridgeSchedule:
    """Noise scale and time clamp of the bridge.

    Attributes:
        sigma: Noise scale; 0 gives the deterministic interpolation.
        eps_clamp: Times used for training and sampling lie in
            ``[eps_clamp, 1 - eps_clamp]``.
    """

    sigma: float = DEFAULT_SIGMA
    eps_clamp: float = DEFAULT_EPS_CLAMP

    def __post_init__(self) -> None:
        if not (self.sigma >= 0 and math.isfinite(self.sigma)):
            raise ConfigError(f"sigma must be finite and >= 0, got {self.sigma}")
        if not 0 < self.eps_clamp < 0.5:
            raise ConfigError(f"eps_clamp must lie in (0, 0.5), got {self.eps_clamp}")

    @property
    def t_min(self) -> float:
        return self.eps_clamp

    @property
    def t_max(self) -> float:
        return 1.0 - self.eps_clamp

    def clamp(self, t: TimePoint) -> TimePoint:
        """Clip *t* into the clamped interval."""
        return np.clip(t, self.t_min, self.t_max)


@dataclass(frozen=True)
class LatentLayout:
    """Partition of the joint latent into its audio and video blocks."""

    d_a: int
    d_v_total: int

    def __post_init__(self) -> None:
        if self.d_a < 1 or self.d_v_total < 1:
            raise DimensionError(
                f"both blocks need at least one entry, got d_a={self.d_a}, "
                f"d_v_total={self.d_v_total}"
            )

    @property
    def d(self) -> int:
        return self.d_a + self.d_v_total

    def split(self, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Return the ``(audio, video)`` views of a joint array."""
        x = np.asarray(x)
        if x.shape[-1] != self.d:
            raise DimensionError(f"expected last axis {self.d}, got {x.shape[-1]}")
        return x[..., : self.d_a], x[..., self.d_a :]

    def join(self, audio: np.ndarray, video: np.ndarray) -> np.ndarray:
        """Concatenate blocks in the fixed ``[audio, video]`` order."""
        audio = np.asarray(audio)
        video = np.asarray(video)
        if audio.shape[-1] != self.d_a or video.shape[-1] != self.d_v_total:
            raise DimensionError(
                f"block widths {audio.shape[-1]}/{video.shape[-1]} do not match "
                f"layout {self.d_a}/{self.d_v_total}"
            )
        return np.concatenate([audio, video], axis=-1)


@dataclass(frozen=True)
class LatentState:
    """A joint latent split into its audio and video blocks."""

    audio: np.ndarray
    video: np.ndarray

    @property
    def layout(self) -> LatentLayout:
        return LatentLayout(self.audio.shape[-1], self.video.shape[-1])

    def concat(self) -> np.ndarray:
        return self.layout.join(self.audio, self.video)

    @classmethod
    def from_concat(cls, x: np.ndarray, layout: LatentLayout) -> "LatentState":
        audio, video = layout.split(x)
        return cls(audio=audio, video=video)


@dataclass(frozen=True)
class EndpointPair:
    """Source and edited endpoints of a bridge (optionally batched).

    Attributes:
        x0: Source mixture latent(s), shape ``(..., d)``.
        x1: Edited latent(s), same shape as *x0*.
        layout: Optional audio/video partition of the last axis.
    """

    x0: np.ndarray
    x1: np.ndarray
    layout: Optional[LatentLayout] = None

    def __post_init__(self) -> None:
        x0 = np.asarray(self.x0, dtype=np.float64)
        x1 = np.asarray(self.x1, dtype=np.float64)
        if x0.shape != x1.shape:
            raise DimensionError(f"endpoint shapes differ: {x0.shape} vs {x1.shape}")
        if self.layout is not None and x0.shape[-1] != self.layout.d:
            raise DimensionError(
                f"endpoint width {x0.shape[-1]} does not match layout {self.layout.d}"
            )
        object.__setattr__(self, "x0", x0)
        object.__setattr__(self, "x1", x1)

    @property
    def d(self) -> int:
        return self.x0.shape[-1]

    def reversed(self) -> "EndpointPair":
        """The same bridge run backwards in time."""
        return EndpointPair(self.x1, self.x0, self.layout)


def _time_column(t: TimePoint) -> np.ndarray:
    # scalar stays scalar; a batch of times becomes a column for broadcasting
    t = np.asarray(t, dtype=np.float64)
    return t if t.ndim == 0 else t[..., None]


def _check_point(pair: EndpointPair, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != pair.d:
        raise DimensionError(f"state width {x.shape[-1]} does not match pair width {pair.d}")
    return x


def _check_clamped(t: TimePoint, schedule: BridgeSchedule, what: str) -> None:
    t = np.asarray(t, dtype=np.float64)
    lo = schedule.t_min - _TIME_SLACK
    hi = schedule.t_max + _TIME_SLACK
    if np.any(t < lo) or np.any(t > hi):
        raise DomainError(
            f"{what} needs t in [{schedule.t_min}, {schedule.t_max}], "
            f"got range [{t.min()}, {t.max()}]"
        )


def mean_path(pair: EndpointPair, t: TimePoint) -> np.ndarray:
    """Bridge mean ``mu_t = t * x1 + (1 - t) * x0``."""
    tc = _time_column(t)
    return tc * pair.x1 + (1.0 - tc) * pair.x0


def marginal_variance(schedule: BridgeSchedule, t: TimePoint) -> TimePoint:
    """Per-coordinate variance ``sigma^2 * t * (1 - t)`` of the pinned marginal."""
    t = np.asarray(t, dtype=np.float64)
    var = schedule.sigma**2 * t * (1.0 - t)
    return float(var) if var.ndim == 0 else var


def sample_bridge_point(
    pair: EndpointPair,
    schedule: BridgeSchedule,
    t: TimePoint,
    rng: RandomStream,
) -> np.ndarray:
    """Draw ``X_t ~ N(mu_t, sigma^2 t (1 - t) I)``.

    Noise is drawn independently for every coordinate of both blocks. The
    draw is consumed even when the variance is zero so that the stream
    position does not depend on ``sigma``.
    """
    mu = mean_path(pair, t)
    z = rng.standard_normal(mu.shape)
    if schedule.sigma == 0:
        return mu
    std = np.sqrt(_time_column(marginal_variance(schedule, t)))
    return mu + std * z


def cfm_conditional_flow(pair: EndpointPair) -> np.ndarray:
    """Straight-line conditional flow ``x1 - x0`` (independent of t and x)."""
    return pair.x1 - pair.x0


def sb_correction_coefficient(t: TimePoint) -> TimePoint:
    """``(1 - 2t) / (2 t (1 - t))``, the Jacobian of the bridge flow in x."""
    t = np.asarray(t, dtype=np.float64)
    coeff = (1.0 - 2.0 * t) / (2.0 * t * (1.0 - t))
    return float(coeff) if coeff.ndim == 0 else coeff


def sb_correction(pair: EndpointPair, x: np.ndarray, t: TimePoint) -> np.ndarray:
    """Bridge correction term ``coeff(t) * (x - mu_t)``."""
    x = _check_point(pair, x)
    return _time_column(sb_correction_coefficient(t)) * (x - mean_path(pair, t))


def sb_conditional_flow(
    pair: EndpointPair,
    x: np.ndarray,
    t: TimePoint,
    schedule: BridgeSchedule,
) -> np.ndarray:
    """Conditional flow of the bridge probability flow.

    ``u = (x1 - x0) + (1 - 2t) / (2 t (1 - t)) * (x - mu_t)``.

    Raises:
        DomainError: If *t* lies outside ``[eps, 1 - eps]``.
    """
    _check_clamped(t, schedule, "sb_conditional_flow")
    return cfm_conditional_flow(pair) + sb_correction(pair, x, t)


def conditional_score(
    pair: EndpointPair,
    x: np.ndarray,
    t: TimePoint,
    schedule: BridgeSchedule,
) -> np.ndarray:
    """Gaussian score ``-(x - mu_t) / (sigma^2 t (1 - t))`` of the pinned marginal.

    Raises:
        DegenerateScoreError: If ``sigma == 0``.
        DomainError: If *t* lies outside ``[eps, 1 - eps]``.
    """
    if schedule.sigma == 0:
        raise DegenerateScoreError("the bridge marginal is a point mass when sigma == 0")
    _check_clamped(t, schedule, "conditional_score")
    x = _check_point(pair, x)
    var = _time_column(marginal_variance(schedule, t))
    return -(x - mean_path(pair, t)) / var


def marginal_log_density(
    pair: EndpointPair,
    x: np.ndarray,
    t: TimePoint,
    schedule: BridgeSchedule,
) -> TimePoint:
    """Log-density of the pinned marginal at *x* (summed over coordinates)."""
    if schedule.sigma == 0:
        raise DegenerateScoreError("the bridge marginal is a point mass when sigma == 0")
    x = _check_point(pair, x)
    var = np.asarray(marginal_variance(schedule, t), dtype=np.float64)
    r = x - mean_path(pair, t)
    quad = np.sum(r * r, axis=-1) / (2.0 * var)
    logp = -quad - 0.5 * pair.d * np.log(2.0 * np.pi * var)
    return float(logp) if np.ndim(logp) == 0 else logp


def bridge_sde_drift(
    pair: EndpointPair,
    x: np.ndarray,
    t: TimePoint,
    schedule: Optional[BridgeSchedule] = None,
) -> np.ndarray:
    """Drift ``(x1 - x) / (1 - t)`` of the bridge SDE pinned at ``x1``.

    Raises:
        DomainError: If *t* exceeds ``1 - eps`` or is negative.
    """
    schedule = schedule or BridgeSchedule()
    t_arr = np.asarray(t, dtype=np.float64)
    if np.any(t_arr < 0) or np.any(t_arr > schedule.t_max + _TIME_SLACK):
        raise DomainError(f"bridge_sde_drift needs t in [0, {schedule.t_max}]")
    x = _check_point(pair, x)
    return (pair.x1 - x) / (1.0 - _time_column(t_arr))


def probability_flow_drift(
    drift: np.ndarray,
    diffusion: float,
    score: np.ndarray,
) -> np.ndarray:
    """Probability-flow velocity ``f - g^2 / 2 * score`` of an SDE ``dX = f dt + g dW``.

    The resulting ODE has the same Fokker-Planck marginals as the SDE.
    """
    return np.asarray(drift) - 0.5 * diffusion**2 * np.asarray(score)
