"""Run records: environment snapshot and the training manifest.

Defines the dataclasses describing the machine a run happened on and the
per-epoch history of a training run, plus ``gather_environment()`` which
detects the environment in one call.
"""

from __future__ import annotations

import json
import platform
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import numpy as np

from ._compat import RuntimeState, detect_runtime
from .objective import LossReport


@dataclass
class EnvironmentInfo:
    """Automatically detected runtime environment details.

    Attributes:
        python_executable: Path to the Python interpreter.
        python_version: Interpreter version string.
        numpy_version: ``numpy.__version__``.
        os_platform: ``platform.platform()`` result.
        threads: Worker threads from ``SBFM_THREADS`` (0 = deterministic).
        execution_mode: Human-readable label ("Single-threaded
            deterministic" or "Sharded (<n> threads)").
    """

    python_executable: str = ""
    python_version: str = ""
    numpy_version: str = ""
    os_platform: str = ""
    threads: int = 0
    execution_mode: str = ""

    def to_dict(self) -> Dict[str, Any]:
        return {
            "execution_mode": self.execution_mode,
            "numpy_version": self.numpy_version,
            "os_platform": self.os_platform,
            "python_executable": self.python_executable,
            "python_version": self.python_version,
            "threads": self.threads,
        }


def gather_environment(runtime: Optional[RuntimeState] = None) -> EnvironmentInfo:
    """Detect the runtime environment.

    Args:
        runtime: Parallelism state; detected from ``SBFM_THREADS`` if omitted.
    """
    runtime = runtime or detect_runtime()
    return EnvironmentInfo(
        python_executable=sys.executable,
        python_version=sys.version.split()[0],
        numpy_version=np.__version__,
        os_platform=platform.platform(),
        threads=runtime.threads,
        execution_mode=(
            "Single-threaded deterministic"
            if runtime.deterministic
            else f"Sharded ({runtime.threads} threads)"
        ),
    )


@dataclass
class EpochRecord:
    """One epoch of training history."""

    epoch: int
    train: LossReport
    validation: LossReport
    lr: float
    steps: int
    checkpoint_id: Optional[str] = None
    wall_clock_s: float = 0.0

    def to_dict(self, include_timing: bool = True) -> Dict[str, Any]:
        data: Dict[str, Any] = {
            "checkpoint_id": self.checkpoint_id,
            "epoch": self.epoch,
            "lr": self.lr,
            "steps": self.steps,
            "train": self.train.to_dict(),
            "validation": self.validation.to_dict(),
        }
        if include_timing:
            data["wall_clock_s"] = self.wall_clock_s
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "EpochRecord":
        return cls(
            epoch=int(data["epoch"]),
            train=LossReport.from_dict(data["train"]),
            validation=LossReport.from_dict(data["validation"]),
            lr=float(data["lr"]),
            steps=int(data["steps"]),
            checkpoint_id=data.get("checkpoint_id"),
            wall_clock_s=float(data.get("wall_clock_s", 0.0)),
        )


@dataclass
class RunManifest:
    """Complete record of a training run.

    Written by ``train()`` after every epoch so an aborted run still leaves
    its history behind.
    """

    config: Dict[str, Any]
    dataset_digest: str
    seed: int
    environment: EnvironmentInfo
    epochs: List[EpochRecord] = field(default_factory=list)
    selected_checkpoint: Optional[str] = None
    baseline_validation: Optional[LossReport] = None
    status: str = "running"  # "running" | "completed" | "diverged"

    @property
    def best_epoch(self) -> Optional[EpochRecord]:
        """Epoch with the lowest validation total, earliest on ties."""
        if not self.epochs:
            return None
        return min(self.epochs, key=lambda r: (r.validation.total, r.epoch))

    def to_dict(self, include_timing: bool = True) -> Dict[str, Any]:
        """Serialize to a plain dict; *include_timing* False drops wall-clock fields."""
        data: Dict[str, Any] = {
            "baseline_validation": (
                self.baseline_validation.to_dict() if self.baseline_validation else None
            ),
            "config": self.config,
            "dataset_digest": self.dataset_digest,
            "epochs": [r.to_dict(include_timing) for r in self.epochs],
            "seed": self.seed,
            "selected_checkpoint": self.selected_checkpoint,
            "status": self.status,
        }
        if include_timing:
            data["environment"] = self.environment.to_dict()
        return data

    def write(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True))
        return path

    @classmethod
    def load(cls, path: Union[str, Path]) -> "RunManifest":
        data = json.loads(Path(path).read_text())
        baseline = data.get("baseline_validation")
        return cls(
            config=data["config"],
            dataset_digest=data["dataset_digest"],
            seed=int(data["seed"]),
            environment=EnvironmentInfo(**data.get("environment", {})),
            epochs=[EpochRecord.from_dict(r) for r in data["epochs"]],
            selected_checkpoint=data.get("selected_checkpoint"),
            baseline_validation=LossReport.from_dict(baseline) if baseline else None,
            status=data.get("status", "completed"),
        )

    @property
    def summary_lines(self) -> List[str]:
        """Human-readable summary lines (handy for CLI output)."""
        env = self.environment
        lines: List[str] = [f"Run (seed {self.seed}, status {self.status})"]
        lines.append(f"  Dataset:      {self.dataset_digest[:16]}")
        lines.append(f"  Epochs:       {len(self.epochs)}")
        best = self.best_epoch
        if best is not None:
            v = best.validation
            lines.append(
                f"  Best epoch:   {best.epoch}  total {v.total:.6g}  "
                f"(audio {v.audio_part:.6g}, video {v.video_part:.6g})"
            )
        if self.baseline_validation is not None:
            lines.append(f"  Zero field:   total {self.baseline_validation.total:.6g}")
        if self.selected_checkpoint:
            lines.append(f"  Checkpoint:   {self.selected_checkpoint}")
        else:
            lines.append("  Checkpoint:   none selected")
        lines.append("")
        lines.append(f"  Execution:    {env.execution_mode}")
        lines.append(f"  Python:       {env.python_executable}")
        lines.append(f"  Python Ver:   {env.python_version}")
        lines.append(f"  NumPy:        {env.numpy_version}")
        lines.append(f"  OS:           {env.os_platform}")
        return lines
