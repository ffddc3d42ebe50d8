"""sbfm: bridge flow matching for paired audio-video object removal (toy scale).

Core API::

    from sbfm import DataConfig, generate_dataset, train
    data = generate_dataset(seed=7, config=DataConfig(n_pairs=512))

Closed-form bridge quantities::

    from sbfm import BridgeSchedule, EndpointPair, sb_conditional_flow
    u = sb_conditional_flow(EndpointPair(x0, x1), x, 0.25, BridgeSchedule(sigma=0.1))

Command line (``sbfm --help`` lists every config key)::

    sbfm gen-data --seed 7 --output toy.sbds
    sbfm train --dataset toy.sbds --lambda 3
    sbfm verify
"""

from .bridge_math import (
    BridgeSchedule,
    EndpointPair,
    LatentLayout,
    LatentState,
    bridge_sde_drift,
    cfm_conditional_flow,
    conditional_score,
    marginal_log_density,
    mean_path,
    probability_flow_drift,
    sample_bridge_point,
    sb_conditional_flow,
)
from .checks import CheckRegistry, CheckResult, CheckSpec
from .config import RunConfig, load_config
from .errors import SBFMError
from .field_model import FieldConfig, FieldParams, backward, forward, init_params
from .objective import LossConfig, LossReport, draw_training_point, weighted_loss
from .oracle_eval import MetricReport, default_registry, energy_distance, evaluate_model
from .simulate import IntegrationPlan, Trajectory, euler_maruyama_sde, euler_ode, per_modality_sample
from .toy_data import DataConfig, ToyDataset, generate_dataset, read_dataset, write_dataset
from .trainer import OptimConfig, lr_at, optimizer_step, train

__all__ = [
    "BridgeSchedule",
    "EndpointPair",
    "LatentLayout",
    "LatentState",
    "bridge_sde_drift",
    "cfm_conditional_flow",
    "conditional_score",
    "marginal_log_density",
    "mean_path",
    "probability_flow_drift",
    "sample_bridge_point",
    "sb_conditional_flow",
    "CheckRegistry",
    "CheckResult",
    "CheckSpec",
    "RunConfig",
    "load_config",
    "SBFMError",
    "FieldConfig",
    "FieldParams",
    "backward",
    "forward",
    "init_params",
    "LossConfig",
    "LossReport",
    "draw_training_point",
    "weighted_loss",
    "MetricReport",
    "default_registry",
    "energy_distance",
    "evaluate_model",
    "IntegrationPlan",
    "Trajectory",
    "euler_maruyama_sde",
    "euler_ode",
    "per_modality_sample",
    "DataConfig",
    "ToyDataset",
    "generate_dataset",
    "read_dataset",
    "write_dataset",
    "OptimConfig",
    "lr_at",
    "optimizer_step",
    "train",
]

__version__ = "0.1.0"
