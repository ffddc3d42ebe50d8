"""Fixed-step integrators for velocity fields and the bridge SDE.

Provides the Euler ODE solver used for sampling, the Euler-Maruyama solver
for the bridge SDE, lockstep per-modality integration, and the optional
trajectory CSV dump.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, List, Optional, Union

import numpy as np

from .bridge_math import BridgeSchedule, EndpointPair, LatentLayout, LatentState, bridge_sde_drift
from .errors import ConfigError, DimensionError, DivergenceError, DomainError
from .streams import RandomStream

logger = logging.getLogger(__name__)

VelocityFn = Callable[[np.ndarray, float], np.ndarray]

DEFAULT_STEPS = 30


@dataclass(frozen=True)
class IntegrationPlan:
    """Uniform time grid for an integration.

    Attributes:
        n_steps: Number of Euler steps.
        t_start: First grid time.
        t_end: Last grid time, strictly greater than *t_start*.
        record_path: Keep every intermediate state, not just the endpoints.
    """

    n_steps: int = DEFAULT_STEPS
    t_start: float = 0.0
    t_end: float = 1.0
    record_path: bool = False

    def __post_init__(self) -> None:
        if self.n_steps < 1:
            raise ConfigError(f"n_steps must be >= 1, got {self.n_steps}")
        if not 0.0 <= self.t_start < self.t_end <= 1.0:
            raise ConfigError(
                f"need 0 <= t_start < t_end <= 1, got [{self.t_start}, {self.t_end}]"
            )

    @classmethod
    def clamped(
        cls,
        schedule: BridgeSchedule,
        n_steps: int = DEFAULT_STEPS,
        record_path: bool = False,
    ) -> "IntegrationPlan":
        """Plan on ``[eps, 1 - eps]``, the support of the trained field."""
        return cls(n_steps, schedule.t_min, schedule.t_max, record_path)

    @property
    def step_size(self) -> float:
        return (self.t_end - self.t_start) / self.n_steps

    def times(self) -> np.ndarray:
        """Grid times ``t_start + k h`` for ``k = 0..n_steps``."""
        grid = self.t_start + self.step_size * np.arange(self.n_steps + 1)
        grid[-1] = self.t_end
        return grid


@dataclass
class Trajectory:
    """States visited by an integration.

    ``states[k]`` is the state at ``times[k]``. Without path recording only
    the initial and final states are kept.
    """

    times: np.ndarray
    states: np.ndarray

    @property
    def initial(self) -> np.ndarray:
        return self.states[0]

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]

    def final_state(self, layout: LatentLayout) -> LatentState:
        """The final state split into its audio and video blocks."""
        return LatentState.from_concat(self.final, layout)

    def write_csv(self, path: Union[str, Path], path_offset: int = 0) -> Path:
        """Write ``path_id, step, t, coord_0..coord_{d-1}`` rows.

        States of shape ``(n_times, d)`` are one path; ``(n_times, n, d)``
        are ``n`` paths numbered from *path_offset*.
        """
        path = Path(path)
        states = self.states
        if states.ndim == 2:
            states = states[:, None, :]
        n_times, n_paths, d = states.shape
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["path_id", "step", "t"] + [f"coord_{j}" for j in range(d)])
            for p in range(n_paths):
                for k in range(n_times):
                    row = [path_offset + p, k, repr(float(self.times[k]))]
                    row.extend(repr(float(v)) for v in states[k, p])
                    writer.writerow(row)
        logger.debug("wrote %d trajectory rows to %s", n_times * n_paths, path)
        return path


def _check_finite(x: np.ndarray, step: int) -> None:
    if not np.all(np.isfinite(x)):
        raise DivergenceError(f"non-finite state after step {step}", step=step)


def _integrate(
    velocity: VelocityFn,
    x_init: np.ndarray,
    plan: IntegrationPlan,
    noise: Optional[Callable[[np.ndarray], np.ndarray]] = None,
) -> Trajectory:
    times = plan.times()
    h = plan.step_size
    x = np.array(x_init, dtype=np.float64, copy=True)
    _check_finite(x, 0)
    states: List[np.ndarray] = [x.copy()]
    for k in range(plan.n_steps):
        x = x + h * velocity(x, times[k])
        if noise is not None:
            x = x + noise(x)
        _check_finite(x, k + 1)
        if plan.record_path:
            states.append(x.copy())
    if not plan.record_path:
        states.append(x.copy())
        times = times[[0, -1]]
    return Trajectory(times=times, states=np.stack(states))


def euler_ode(field: VelocityFn, x_init: np.ndarray, plan: IntegrationPlan) -> Trajectory:
    """Explicit Euler: ``x_{k+1} = x_k + h * field(x_k, t_k)``.

    Raises:
        DivergenceError: Naming the first step that produced a non-finite state.
    """
    return _integrate(field, x_init, plan)


def euler_maruyama_sde(
    pair: EndpointPair,
    schedule: BridgeSchedule,
    x_init: np.ndarray,
    plan: IntegrationPlan,
    rng: RandomStream,
) -> Trajectory:
    """Euler-Maruyama for ``dX = (x1 - X) / (1 - t) dt + sigma dW``.

    *x_init* may hold many paths (leading batch axes); every path gets its
    own fresh increments each step, drawn from *rng* in row order.

    Raises:
        DomainError: If the plan ends after ``1 - eps``.
    """
    if plan.t_end > schedule.t_max:
        raise DomainError(f"SDE plan must end by {schedule.t_max}, got {plan.t_end}")
    scale = schedule.sigma * np.sqrt(plan.step_size)

    def drift(x: np.ndarray, t: float) -> np.ndarray:
        return bridge_sde_drift(pair, x, t, schedule)

    def increment(x: np.ndarray) -> np.ndarray:
        z = rng.standard_normal(x.shape)
        return scale * z

    return _integrate(drift, x_init, plan, noise=increment if schedule.sigma > 0 else None)


def per_modality_sample(
    field_a: VelocityFn,
    field_v: VelocityFn,
    x_init: np.ndarray,
    plan: IntegrationPlan,
    layout: LatentLayout,
) -> Trajectory:
    """Advance the audio and video blocks in lockstep on one time grid.

    Both fields read the full joint state; *field_a* returns the audio-block
    velocity and *field_v* the video-block velocity.

    Raises:
        DimensionError: If a field returns the wrong block width.
    """

    def joint(x: np.ndarray, t: float) -> np.ndarray:
        v_a = np.asarray(field_a(x, t))
        v_v = np.asarray(field_v(x, t))
        if v_a.shape[-1] != layout.d_a or v_v.shape[-1] != layout.d_v_total:
            raise DimensionError(
                f"head widths {v_a.shape[-1]}/{v_v.shape[-1]} do not match layout "
                f"{layout.d_a}/{layout.d_v_total}"
            )
        return np.concatenate([v_a, v_v], axis=-1)

    x_init = np.asarray(x_init, dtype=np.float64)
    if x_init.shape[-1] != layout.d:
        raise DimensionError(f"initial state width {x_init.shape[-1]} != {layout.d}")
    return _integrate(joint, x_init, plan)
