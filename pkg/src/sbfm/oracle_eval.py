"""Verification oracles and evaluation metrics.

The oracles check the closed-form bridge quantities against independent
computations (finite differences, moment matching, Euler convergence
rates); the metrics score a trained field on held-out pairs. Perceptual
audio/video metrics need pretrained networks and are out of scope: paired
MSE, energy distance and the improvement over the identity transport stand
in for them.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.spatial.distance import cdist, pdist, squareform

from .bridge_math import (
    BridgeSchedule,
    EndpointPair,
    LatentLayout,
    LatentState,
    bridge_sde_drift,
    cfm_conditional_flow,
    conditional_score,
    marginal_log_density,
    marginal_variance,
    mean_path,
    probability_flow_drift,
    sb_conditional_flow,
    sb_correction,
)
from .checks import CheckOutcome, CheckRegistry, CheckSpec
from .errors import DimensionError, DivergenceError, NumericError
from .field_model import FieldConfig, FieldParams, backward, batch_loss, forward, zero_params
from .objective import LossConfig, draw_training_point
from .simulate import IntegrationPlan, Trajectory, euler_maruyama_sde, euler_ode, per_modality_sample
from .streams import RandomStream, substream
from .toy_data import ToyDataset

logger = logging.getLogger(__name__)

METRIC_NOTE = (
    "paired MSE, energy distance and baseline-relative improvement stand in for "
    "perceptual audio/video metrics"
)


# ----------------------------------------------------------------------
# Closed-form oracles
# ----------------------------------------------------------------------


def oracle_field(pair: EndpointPair, schedule: BridgeSchedule):
    """Exact conditional flow closed over *pair*, as a ``(x, t)`` velocity.

    With ``sigma == 0`` the bridge is a point mass on the line and the
    field is the straight-line flow.
    """
    if schedule.sigma == 0:
        delta = cfm_conditional_flow(pair)
        return lambda x, t: np.broadcast_to(delta, np.shape(x))
    return lambda x, t: sb_conditional_flow(pair, x, t, schedule)


def fd_score_check(
    pair: EndpointPair,
    schedule: BridgeSchedule,
    x: np.ndarray,
    t,
    step: float = 1e-5,
) -> float:
    """Max relative error between the score and central differences of the log-density.

    The error of each coordinate is ``|fd - s| / max(|s|, 1)``, so it is an
    absolute error where the score is near zero.
    """
    x = np.asarray(x, dtype=np.float64)
    score = conditional_score(pair, x, t, schedule)
    worst = 0.0
    for j in range(pair.d):
        e = np.zeros(pair.d)
        e[j] = step
        up = marginal_log_density(pair, x + e, t, schedule)
        down = marginal_log_density(pair, x - e, t, schedule)
        fd = (np.asarray(up) - np.asarray(down)) / (2.0 * step)
        s = score[..., j]
        err = np.abs(fd - s) / np.maximum(np.abs(s), 1.0)
        worst = max(worst, float(np.max(err)))
    return worst


def _broadcast_pair(pair: EndpointPair, n_points: int, rng: RandomStream) -> EndpointPair:
    if pair.x0.ndim == 1:
        x0 = np.broadcast_to(pair.x0, (n_points, pair.d))
        x1 = np.broadcast_to(pair.x1, (n_points, pair.d))
        return EndpointPair(x0, x1, pair.layout)
    rows = rng.integers(pair.x0.shape[0], size=n_points)
    return EndpointPair(pair.x0[rows], pair.x1[rows], pair.layout)


def derivation_chain_check(
    pair: EndpointPair,
    schedule: BridgeSchedule,
    n_points: int,
    rng: RandomStream,
    tolerance: float = 1e-10,
) -> CheckOutcome:
    """Check ``drift - sigma^2/2 * score == sb_flow == cfm_flow + correction``.

    Points are random times in the clamped interval and random states around
    the bridge mean. With ``sigma == 0`` only the bridge line itself is
    admissible, and there the bridge flow must equal the straight-line flow
    exactly.
    """
    batch = _broadcast_pair(pair, n_points, rng)
    t = rng.uniform(schedule.t_min, schedule.t_max, size=n_points)
    mu = mean_path(batch, t)

    if schedule.sigma == 0:
        flow = sb_conditional_flow(batch, mu, t, schedule)
        deviation = float(np.max(np.abs(flow - cfm_conditional_flow(batch))))
        return CheckOutcome(deviation == 0.0, deviation, 0.0, "sb_flow == cfm_flow on the line")

    x = mu + rng.standard_normal(mu.shape)
    flow = sb_conditional_flow(batch, x, t, schedule)
    pf = probability_flow_drift(
        bridge_sde_drift(batch, x, t, schedule),
        schedule.sigma,
        conditional_score(batch, x, t, schedule),
    )
    split = cfm_conditional_flow(batch) + sb_correction(batch, x, t)
    deviation = float(max(np.max(np.abs(pf - flow)), np.max(np.abs(split - flow))))
    return CheckOutcome(
        deviation < tolerance,
        deviation,
        tolerance,
        "drift - sigma^2/2 * score == sb_flow == cfm_flow + correction",
    )


def gaussian_pairs(
    rng: RandomStream,
    n_pairs: int = 1000,
    dim: int = 4,
    source: Tuple[float, float] = (0.0, 1.0),
    target: Tuple[float, float] = (0.5, 0.5),
) -> EndpointPair:
    """Independent endpoints ``x0 ~ N(m0, s0^2 I)``, ``x1 ~ N(m1, s1^2 I)``."""
    x0 = source[0] + source[1] * rng.standard_normal((n_pairs, dim))
    x1 = target[0] + target[1] * rng.standard_normal((n_pairs, dim))
    return EndpointPair(x0, x1)


def gaussian_bridge_transport_check(
    schedule: BridgeSchedule,
    plan: IntegrationPlan,
    rng: Optional[RandomStream] = None,
    pair: Optional[EndpointPair] = None,
    n_pairs: int = 1000,
    dim: int = 4,
) -> float:
    """Mean endpoint error ``|x(t_end) - x1|`` of Euler on the exact conditional flow.

    Each path starts at its own ``x0``; *pair* defaults to
    :func:`gaussian_pairs` drawn from *rng*.
    """
    if pair is None:
        if rng is None:
            raise ValueError("need either rng or pair")
        pair = gaussian_pairs(rng, n_pairs, dim)
    final = euler_ode(oracle_field(pair, schedule), pair.x0, plan).final
    return float(np.mean(np.linalg.norm(final - pair.x1, axis=-1)))


def euler_order_check(
    schedule: BridgeSchedule,
    rng: RandomStream,
    steps: Tuple[int, int] = (30, 60),
    n_pairs: int = 1000,
    dim: int = 4,
    bounds: Tuple[float, float] = (1.7, 2.3),
) -> CheckOutcome:
    """Endpoint-error ratio between a coarse and a twice-finer Euler grid."""
    pair = gaussian_pairs(rng, n_pairs, dim)
    coarse = gaussian_bridge_transport_check(schedule, IntegrationPlan.clamped(schedule, steps[0]), pair=pair)
    fine = gaussian_bridge_transport_check(schedule, IntegrationPlan.clamped(schedule, steps[1]), pair=pair)
    ratio = coarse / fine if fine > 0 else math.inf
    return CheckOutcome(
        bounds[0] <= ratio <= bounds[1],
        ratio,
        bounds[1],
        f"error({steps[0]})/error({steps[1]}) = {ratio:.3f}, expected in [{bounds[0]}, {bounds[1]}]",
    )


def sde_moment_check(
    rng: RandomStream,
    n_paths: int = 20000,
    sigma: float = 1.0,
    step: float = 0.005,
    checkpoints: Sequence[float] = (0.25, 0.5, 0.75),
    x0: Sequence[float] = (0.0, 0.0),
    x1: Sequence[float] = (1.0, -2.0),
) -> CheckOutcome:
    """Euler-Maruyama bridge paths against the pinned marginal ``N(mu_t, sigma^2 t(1-t))``.

    Means must lie within 3 standard errors per coordinate and variances
    within 5% relative. The value is the worst deviation scaled so that 1.0
    is the pass limit.
    """
    schedule = BridgeSchedule(sigma=sigma)
    pair = EndpointPair(np.asarray(x0, dtype=np.float64), np.asarray(x1, dtype=np.float64))
    x = np.broadcast_to(pair.x0, (n_paths, pair.d)).copy()
    t_prev = 0.0
    worst = 0.0
    details: List[str] = []
    for t in checkpoints:
        n_steps = int(round((t - t_prev) / step))
        x = euler_maruyama_sde(pair, schedule, x, IntegrationPlan(n_steps, t_prev, t), rng).final
        t_prev = t
        var = marginal_variance(schedule, t)
        mean_err = np.abs(x.mean(axis=0) - mean_path(pair, t)) / (3.0 * math.sqrt(var / n_paths))
        var_err = np.abs(x.var(axis=0, ddof=1) / var - 1.0) / 0.05
        score = float(max(mean_err.max(), var_err.max()))
        worst = max(worst, score)
        details.append(f"t={t}: {score:.3f}")
    return CheckOutcome(worst <= 1.0, worst, 1.0, "; ".join(details))


def _small_field_configs(n_configs: int) -> List[FieldConfig]:
    configs = []
    for i in range(n_configs):
        configs.append(
            FieldConfig(
                d_a=3,
                d_v_total=4 + i % 2,
                trunk_width=5,
                trunk_depth=1 + i % 2,
                head_width=4,
                head_depth=1 + i % 2,
                cond_dim=2,
                time_embed_dim=4,
                activation="tanh" if i % 2 == 0 else "gelu-approx",
                heads="linear" if i == 2 else "mlp",
                use_audio_condition=i != 3,
            )
        )
    return configs


def fd_gradient_check(
    rng: RandomStream,
    n_configs: int = 5,
    batch: int = 3,
    lam: float = 3.0,
    step: float = 1e-5,
    rel_floor: float = 1e-4,
    tolerance: float = 1e-4,
) -> CheckOutcome:
    """Hand-written backward against central differences of the batch loss.

    Parameters are random and nonzero everywhere so every head contributes.
    The per-coordinate error is ``|fd - g| / max(|fd|, |g|, rel_floor)``.
    """
    worst = 0.0
    for config in _small_field_configs(n_configs):
        params = _random_params(config, rng)
        n = batch
        x = rng.standard_normal((n, config.d_a + config.d_v_total))
        t = rng.uniform(0.05, 0.95, size=n)
        phi_a = rng.standard_normal((n, config.time_embed_dim))
        phi_v = rng.standard_normal((n, config.cond_dim))
        target_a = rng.standard_normal((n, config.d_a))
        target_v = rng.standard_normal((n, config.d_v_total))
        v_a, v_v = forward(params, x, t, phi_a, phi_v)
        grad = backward(params, x, t, phi_a, phi_v, v_a - target_a, v_v - target_v, lam)
        for k in range(params.size):
            vec = params.vector.copy()
            vec[k] += step
            up = batch_loss(params.with_vector(vec), x, t, phi_a, phi_v, target_a, target_v, lam)
            vec[k] -= 2.0 * step
            down = batch_loss(params.with_vector(vec), x, t, phi_a, phi_v, target_a, target_v, lam)
            fd = (up - down) / (2.0 * step)
            err = abs(fd - grad[k]) / max(abs(fd), abs(grad[k]), rel_floor)
            worst = max(worst, err)
    return CheckOutcome(worst < tolerance, worst, tolerance, "backward == central differences")


def _random_params(config: FieldConfig, rng: RandomStream) -> FieldParams:
    params = zero_params(config)
    return params.with_vector(0.5 * rng.standard_normal(params.size))


# ----------------------------------------------------------------------
# Two-sample distances
# ----------------------------------------------------------------------


def _check_sets(a: np.ndarray, b: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    if a.shape[0] == 0 or b.shape[0] == 0:
        raise ValueError("energy distance needs two non-empty sample sets")
    if a.shape[1] != b.shape[1]:
        raise DimensionError(f"sample dimensions differ: {a.shape[1]} vs {b.shape[1]}")
    return a, b


def _within_mean(points: np.ndarray) -> float:
    return float(pdist(points).mean()) if points.shape[0] > 1 else 0.0


def energy_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Unbiased energy distance ``2 E|A-B| - E|A-A'| - E|B-B'|``.

    Within-set means run over distinct pairs only, so the estimate can dip
    slightly below zero for samples of one distribution.
    """
    a, b = _check_sets(a, b)
    return 2.0 * float(cdist(a, b).mean()) - _within_mean(a) - _within_mean(b)


def _energy_from_matrix(dist: np.ndarray, ia: np.ndarray, ib: np.ndarray) -> float:
    na, nb = len(ia), len(ib)
    cross = dist[np.ix_(ia, ib)].mean()
    aa = dist[np.ix_(ia, ia)].sum() / (na * (na - 1)) if na > 1 else 0.0
    bb = dist[np.ix_(ib, ib)].sum() / (nb * (nb - 1)) if nb > 1 else 0.0
    return float(2.0 * cross - aa - bb)


@dataclass(frozen=True)
class PermutationResult:
    """Energy statistic with its label-permutation null."""

    statistic: float
    threshold: float
    p_value: float
    n_permutations: int

    @property
    def significant(self) -> bool:
        return self.statistic > self.threshold


def energy_permutation_test(
    a: np.ndarray,
    b: np.ndarray,
    rng: RandomStream,
    n_permutations: int = 200,
    level: float = 0.05,
) -> PermutationResult:
    """Calibrate the energy distance by relabelling the pooled sample.

    ``threshold`` is the ``1 - level`` quantile of the permuted statistics.
    """
    a, b = _check_sets(a, b)
    pooled = np.concatenate([a, b])
    dist = squareform(pdist(pooled))
    na = a.shape[0]
    index = np.arange(pooled.shape[0])
    statistic = _energy_from_matrix(dist, index[:na], index[na:])
    null = np.empty(n_permutations)
    for k in range(n_permutations):
        perm = rng.permutation(index)
        null[k] = _energy_from_matrix(dist, perm[:na], perm[na:])
    return PermutationResult(
        statistic=statistic,
        threshold=float(np.quantile(null, 1.0 - level)),
        p_value=float((1 + np.sum(null >= statistic)) / (1 + n_permutations)),
        n_permutations=n_permutations,
    )


# ----------------------------------------------------------------------
# Model evaluation
# ----------------------------------------------------------------------


@dataclass(frozen=True)
class BlockMetrics:
    """Metrics of one block (audio, video or the joint latent)."""

    paired_mse: float
    baseline_mse: float
    energy_distance: float

    @property
    def improvement(self) -> float:
        """``baseline_mse / paired_mse``; infinite for a perfect editor."""
        return self.baseline_mse / self.paired_mse if self.paired_mse > 0 else math.inf

    def to_dict(self) -> Dict[str, float]:
        return {
            "baseline_mse": self.baseline_mse,
            "energy_distance": self.energy_distance,
            "paired_mse": self.paired_mse,
        }


@dataclass
class MetricReport:
    """Held-out editing quality of a field.

    ``baseline_mse`` is the error of returning ``x0`` unchanged, computed on
    the same pairs as ``paired_mse``. Energy distances are clipped at zero.
    ``energy_threshold`` is the 5% permutation threshold of true-vs-true
    target halves; ``energy_matched`` is the joint energy distance at those
    same sample sizes and is the number to hold against it.
    """

    audio: BlockMetrics
    video: BlockMetrics
    joint: BlockMetrics
    energy_threshold: float
    energy_matched: float
    n_evaluated: int
    n_divergent: int = 0
    pair_errors: Optional[np.ndarray] = field(default=None, repr=False)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "audio": self.audio.to_dict(),
            "energy_matched": self.energy_matched,
            "energy_threshold": self.energy_threshold,
            "joint": self.joint.to_dict(),
            "n_divergent": self.n_divergent,
            "n_evaluated": self.n_evaluated,
            "note": METRIC_NOTE,
            "video": self.video.to_dict(),
        }

    @property
    def within_energy_threshold(self) -> bool:
        return self.energy_matched <= self.energy_threshold

    def write(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True))
        return path

    def write_pair_errors(self, path: Union[str, Path]) -> Path:
        """CSV of ``pair_id, audio_se, video_se`` for the evaluated pairs."""
        path = Path(path)
        rows = ["pair_id,audio_se,video_se"]
        if self.pair_errors is not None:
            for pair_id, audio_se, video_se in self.pair_errors:
                rows.append(f"{int(pair_id)},{audio_se!r},{video_se!r}")
        path.write_text("\n".join(rows) + "\n")
        return path

    @property
    def summary_lines(self) -> List[str]:
        lines = [f"Evaluated {self.n_evaluated} pairs ({self.n_divergent} divergent, excluded)"]
        for name, block in (("audio", self.audio), ("video", self.video), ("joint", self.joint)):
            lines.append(
                f"  {name:<6} paired {block.paired_mse:.4g}  baseline {block.baseline_mse:.4g}  "
                f"x{block.improvement:.3g}  energy {block.energy_distance:.4g}"
            )
        verdict = "within" if self.within_energy_threshold else "above"
        lines.append(
            f"  Energy at split size {self.energy_matched:.4g} vs threshold (true vs true, 5%) "
            f"{self.energy_threshold:.4g}: {verdict}"
        )
        lines.append(f"  Note: {METRIC_NOTE}")
        return lines


class ModelFields:
    """Per-block velocity callables backed by one forward pass per state.

    ``per_modality_sample`` asks for the audio and then the video velocity
    at the same state; the second call reuses the first forward pass.
    """

    def __init__(self, params: FieldParams, phi_a: np.ndarray, phi_v: np.ndarray) -> None:
        self.params = params
        self.phi_a = phi_a
        self.phi_v = phi_v
        self._key: Optional[Tuple[int, float]] = None
        self._out: Tuple[np.ndarray, np.ndarray] = (np.empty(0), np.empty(0))

    def _eval(self, x: np.ndarray, t: float) -> Tuple[np.ndarray, np.ndarray]:
        key = (id(x), float(t))
        if key != self._key:
            self._out = forward(self.params, x, t, self.phi_a, self.phi_v)
            self._key = key
        return self._out

    def audio(self, x: np.ndarray, t: float) -> np.ndarray:
        return self._eval(x, t)[0]

    def video(self, x: np.ndarray, t: float) -> np.ndarray:
        return self._eval(x, t)[1]


def sample_pairs(
    params: FieldParams,
    x_init: np.ndarray,
    phi_a: np.ndarray,
    phi_v: np.ndarray,
    plan: IntegrationPlan,
) -> Trajectory:
    """Integrate the trained field from every row of *x_init* in one batch."""
    fields = ModelFields(params, phi_a, phi_v)
    return per_modality_sample(fields.audio, fields.video, x_init, plan, params.config.layout)


def _sample_robust(
    params: FieldParams,
    x_init: np.ndarray,
    phi_a: np.ndarray,
    phi_v: np.ndarray,
    plan: IntegrationPlan,
) -> Tuple[np.ndarray, np.ndarray]:
    """Final states plus a mask of the paths that stayed finite."""
    try:
        final = sample_pairs(params, x_init, phi_a, phi_v, plan).final
        return final, np.ones(len(x_init), dtype=bool)
    except (DivergenceError, NumericError) as exc:
        logger.warning("batch integration diverged (%s); retrying pair by pair", exc)
    final = np.array(x_init, dtype=np.float64, copy=True)
    ok = np.ones(len(x_init), dtype=bool)
    for i in range(len(x_init)):
        try:
            final[i] = sample_pairs(params, x_init[i : i + 1], phi_a[i : i + 1], phi_v[i : i + 1], plan).final[0]
        except (DivergenceError, NumericError):
            ok[i] = False
    logger.warning("%d of %d paths diverged and are excluded", int((~ok).sum()), len(ok))
    return final, ok


def matched_energy_threshold(
    generated: np.ndarray,
    target: np.ndarray,
    rng: RandomStream,
    n_permutations: int = 200,
) -> Tuple[float, float]:
    """5% threshold from true-vs-true target halves, and the statistic to compare with it.

    The statistic pairs the first half of *generated* with the second half of
    *target*, so both sides of the comparison have the sizes the null was
    drawn at. Returns ``(inf, nan)`` when a half would be empty.
    """
    generated, target = _check_sets(generated, target)
    if generated.shape[0] != target.shape[0]:
        raise DimensionError(
            f"generated and target sets differ in size: {generated.shape[0]} vs {target.shape[0]}"
        )
    half = target.shape[0] // 2
    if half == 0:
        return math.inf, math.nan
    threshold = energy_permutation_test(target[:half], target[half:], rng, n_permutations).threshold
    return threshold, energy_distance(generated[:half], target[half:])


def _block_metrics(
    generated: np.ndarray,
    source: np.ndarray,
    target: np.ndarray,
) -> BlockMetrics:
    return BlockMetrics(
        paired_mse=float(np.mean((generated - target) ** 2)),
        baseline_mse=float(np.mean((source - target) ** 2)),
        energy_distance=max(0.0, energy_distance(generated, target)),
    )


def evaluate_model(
    params: FieldParams,
    test_set: ToyDataset,
    plan: IntegrationPlan,
    *,
    source_kind: str = "paired",
    seed: int = 0,
    n_permutations: int = 200,
) -> MetricReport:
    """Edit every test pair with the field and score the results.

    Paths start at ``x0`` (or at Gaussian noise from the ``eval`` stream for
    a noise-source model). Divergent paths are counted and excluded from all
    means.
    """
    if len(test_set) == 0:
        raise ValueError("evaluate_model needs a non-empty test split")
    layout: LatentLayout = test_set.layout
    if source_kind == "noise":
        x_init = substream(seed, "eval").standard_normal(test_set.x0.shape)
    else:
        x_init = test_set.x0
    final, ok = _sample_robust(params, x_init, test_set.phi_a, test_set.phi_v, plan)

    generated, source, target = final[ok], test_set.x0[ok], test_set.x1[ok]
    if generated.shape[0] == 0:
        raise DivergenceError("every evaluation path diverged")
    gen = LatentState.from_concat(generated, layout)
    src = LatentState.from_concat(source, layout)
    tgt = LatentState.from_concat(target, layout)

    threshold, matched = matched_energy_threshold(
        generated, target, substream(seed, "eval", 1), n_permutations
    )

    err_a = np.sum((gen.audio - tgt.audio) ** 2, axis=-1)
    err_v = np.sum((gen.video - tgt.video) ** 2, axis=-1)
    report = MetricReport(
        audio=_block_metrics(gen.audio, src.audio, tgt.audio),
        video=_block_metrics(gen.video, src.video, tgt.video),
        joint=_block_metrics(generated, source, target),
        energy_threshold=threshold,
        energy_matched=matched,
        n_evaluated=int(ok.sum()),
        n_divergent=int((~ok).sum()),
        pair_errors=np.column_stack([np.flatnonzero(ok), err_a, err_v]),
    )
    logger.info(
        "evaluated %d pairs: joint paired %.4g vs baseline %.4g",
        report.n_evaluated, report.joint.paired_mse, report.joint.baseline_mse,
    )
    return report


# ----------------------------------------------------------------------
# Verify suite
# ----------------------------------------------------------------------


def _chain_suite(rng: RandomStream) -> CheckOutcome:
    worst = 0.0
    for sigma in (0.05, 0.1, 0.5, 1.0, 2.0):
        pair = gaussian_pairs(rng, 200, 6, source=(0.0, 2.0), target=(1.0, 2.0))
        outcome = derivation_chain_check(pair, BridgeSchedule(sigma=sigma), 2000, rng)
        worst = max(worst, outcome.value)
    return CheckOutcome(worst < 1e-10, worst, 1e-10, "drift - sigma^2/2 * score == sb_flow == cfm_flow + correction")


def _score_suite(rng: RandomStream) -> CheckOutcome:
    worked = fd_score_check(
        EndpointPair(np.array([0.0]), np.array([2.0])), BridgeSchedule(sigma=1.0), np.array([1.0]), 0.25
    )
    pair = gaussian_pairs(rng, 100, 3)
    schedule = BridgeSchedule(sigma=0.5)
    t = rng.uniform(0.05, 0.95, size=100)
    x = mean_path(pair, t) + rng.standard_normal((100, 3))
    batch = fd_score_check(pair, schedule, x, t)
    worst = max(worked, batch)
    return CheckOutcome(worst < 1e-6, worst, 1e-6, "score == d/dx log p_t (central differences)")


def _pinning_suite(rng: RandomStream) -> CheckOutcome:
    pair = gaussian_pairs(rng, 100, 5)
    schedule = BridgeSchedule(sigma=1.0)
    dev = max(
        float(np.max(np.abs(mean_path(pair, 0.0) - pair.x0))),
        float(np.max(np.abs(mean_path(pair, 1.0) - pair.x1))),
        abs(marginal_variance(schedule, 0.0)),
        abs(marginal_variance(schedule, 1.0)),
    )
    return CheckOutcome(dev == 0.0, dev, 0.0, "mu_0 == x0, mu_1 == x1, zero variance at both ends")


def _reversal_suite(rng: RandomStream) -> CheckOutcome:
    schedule = BridgeSchedule(sigma=0.3)
    pair = gaussian_pairs(rng, 1000, 4)
    t = rng.uniform(schedule.t_min, schedule.t_max, size=1000)
    x = mean_path(pair, t) + rng.standard_normal((1000, 4))
    forward_flow = sb_conditional_flow(pair, x, t, schedule)
    backward_flow = sb_conditional_flow(pair.reversed(), x, 1.0 - t, schedule)
    dev = float(np.max(np.abs(forward_flow + backward_flow)))
    return CheckOutcome(dev < 1e-10, dev, 1e-10, "u(x, t | x0, x1) == -u(x, 1-t | x1, x0)")


def _sigma_zero_targets(rng_seed: int) -> CheckOutcome:
    layout = LatentLayout(3, 5)
    rng = substream(rng_seed, "verify", 100)
    pair = EndpointPair(rng.standard_normal((10000, 8)), rng.standard_normal((10000, 8)), layout)
    schedule = BridgeSchedule(sigma=0.0)
    sb = draw_training_point(pair, LossConfig(objective_kind="sbfm", schedule=schedule), substream(rng_seed, "verify", 101))
    cfm = draw_training_point(pair, LossConfig(objective_kind="cfm", schedule=schedule), substream(rng_seed, "verify", 101))
    mismatches = int(np.sum(sb.target_a != cfm.target_a) + np.sum(sb.target_v != cfm.target_v))
    return CheckOutcome(mismatches == 0, float(mismatches), 0.0, "sigma=0 sbfm targets == cfm targets bitwise")


def _sigma_zero_transport(rng: RandomStream) -> CheckOutcome:
    schedule = BridgeSchedule(sigma=0.0)
    pair = gaussian_pairs(rng, 1000, 4)
    err = gaussian_bridge_transport_check(schedule, IntegrationPlan.clamped(schedule), pair=pair)
    bound = 2.0 * schedule.eps_clamp * float(np.max(np.linalg.norm(pair.x1 - pair.x0, axis=-1)))
    return CheckOutcome(err <= bound, err, bound, "sigma=0 endpoint error <= 2 eps |x1 - x0|")


def default_registry(seed: int = 0) -> CheckRegistry:
    """Every identity and convergence check, seeded from the ``verify`` stream."""

    def rng(i: int) -> RandomStream:
        return substream(seed, "verify", i)

    registry = CheckRegistry()
    specs = [
        ("derivation-chain", lambda: _chain_suite(rng(0)),
         "probability flow of the bridge SDE equals the bridge flow"),
        ("score-fd", lambda: _score_suite(rng(1)), "score matches finite differences"),
        ("endpoint-pinning", lambda: _pinning_suite(rng(2)), "bridge pinned at both ends"),
        ("time-reversal", lambda: _reversal_suite(rng(3)), "flow is antisymmetric under reversal"),
        ("sde-moments", lambda: sde_moment_check(rng(4)), "Euler-Maruyama marginals are pinned Gaussians"),
        ("sigma-zero-targets", lambda: _sigma_zero_targets(seed), "sigma=0 reduces to straight-line targets"),
        ("gradient-fd", lambda: fd_gradient_check(rng(5)), "backward matches finite differences"),
        ("euler-order", lambda: euler_order_check(BridgeSchedule(), rng(6)), "Euler is first order"),
        ("sigma-zero-transport", lambda: _sigma_zero_transport(rng(7)), "sigma=0 transport bounded by clamping"),
    ]
    for name, func, description in specs:
        registry.register(CheckSpec(name=name, func=func, description=description))
    return registry
