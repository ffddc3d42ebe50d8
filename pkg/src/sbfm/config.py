"""Run configuration: every component config plus the INI file that sets them.

The file has one section per module (``[bridge_math]``, ``[simulate]``,
``[field_model]``, ``[objective]``, ``[trainer]``, ``[toy_data]``) and a
``[run]`` section for seeds and paths. Keys are the dataclass field names;
values are coerced to each field's type. Precedence is command-line flags,
then the file, then the dataclass defaults.
"""

from __future__ import annotations

import configparser
import dataclasses
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Optional, Union

from .bridge_math import BridgeSchedule
from .errors import ConfigError
from .field_model import FieldConfig
from .objective import LossConfig
from .simulate import DEFAULT_STEPS, IntegrationPlan
from .toy_data import DataConfig
from .trainer import OptimConfig

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SamplingSettings:
    """Integration settings; the time interval is always the clamped one."""

    n_steps: int = DEFAULT_STEPS
    record_path: bool = True


@dataclass(frozen=True)
class RunSettings:
    """Seed and file locations.

    Attributes:
        seed: Root seed of every random substream.
        out_dir: Parent of generated run directories.
        dataset: Dataset file read by train/sample/eval.
    """

    seed: int = 0
    out_dir: str = "runs"
    dataset: str = "toy.sbds"

    def __post_init__(self) -> None:
        if self.seed < 0:
            raise ConfigError(f"seed must be >= 0, got {self.seed}")


# section name -> (RunConfig attribute, keys not settable from the file)
SECTIONS: Dict[str, tuple] = {
    "bridge_math": ("schedule", frozenset()),
    "simulate": ("sampling", frozenset()),
    "field_model": ("model", frozenset({"d_a", "d_v_total", "cond_dim", "time_embed_dim"})),
    "objective": ("loss", frozenset({"schedule"})),
    "trainer": ("optim", frozenset({"seed"})),
    "toy_data": ("data", frozenset()),
    "run": ("run", frozenset()),
}

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _coerce(raw: str, default: Any, where: str) -> Any:
    text = raw.strip()
    try:
        if isinstance(default, bool):
            if text.lower() in _TRUE:
                return True
            if text.lower() in _FALSE:
                return False
            raise ValueError(text)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
    except ValueError:
        raise ConfigError(
            f"{where}: cannot read {raw!r} as {type(default).__name__}"
        ) from None
    return text


@dataclass(frozen=True)
class RunConfig:
    """All settings of one invocation.

    The component properties (``field_config``, ``loss_config``,
    ``optim_config``, ``plan``) fill in the values that are derived from
    other sections: latent widths from ``[toy_data]``, the seed from
    ``[run]``, the schedule from ``[bridge_math]``.
    """

    schedule: BridgeSchedule = field(default_factory=BridgeSchedule)
    sampling: SamplingSettings = field(default_factory=SamplingSettings)
    model: FieldConfig = field(default_factory=FieldConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)
    data: DataConfig = field(default_factory=DataConfig)
    run: RunSettings = field(default_factory=RunSettings)

    @property
    def field_config(self) -> FieldConfig:
        layout = self.data.layout
        return replace(
            self.model,
            d_a=layout.d_a,
            d_v_total=layout.d_v_total,
            cond_dim=self.data.c_v,
            time_embed_dim=self.data.code_dim,
        )

    @property
    def loss_config(self) -> LossConfig:
        return replace(self.loss, schedule=self.schedule)

    @property
    def optim_config(self) -> OptimConfig:
        return replace(self.optim, seed=self.run.seed)

    @property
    def plan(self) -> IntegrationPlan:
        return IntegrationPlan.clamped(self.schedule, self.sampling.n_steps, self.sampling.record_path)

    # ------------------------------------------------------------------
    # Overrides
    # ------------------------------------------------------------------

    def with_values(self, values: Mapping[str, Mapping[str, str]]) -> "RunConfig":
        """Return a copy with ``{section: {key: raw value}}`` applied.

        Raises:
            ConfigError: On an unknown section or key, or an unreadable value.
        """
        updated = self
        for section, pairs in values.items():
            if section not in SECTIONS:
                raise ConfigError(f"unknown config section [{section}]")
            attr, fixed = SECTIONS[section]
            current = getattr(updated, attr)
            known = {f.name for f in dataclasses.fields(current)} - fixed
            changes = {}
            for key, raw in pairs.items():
                if key not in known:
                    raise ConfigError(f"unknown config key {section}.{key}")
                changes[key] = _coerce(raw, getattr(current, key), f"{section}.{key}")
            if changes:
                updated = replace(updated, **{attr: replace(current, **changes)})
        return updated

    def with_assignments(self, assignments: Iterable[str]) -> "RunConfig":
        """Apply ``section.key=value`` strings (the ``--set`` flag)."""
        values: Dict[str, Dict[str, str]] = {}
        for item in assignments:
            name, sep, raw = item.partition("=")
            section, dot, key = name.strip().partition(".")
            if not sep or not dot or not key:
                raise ConfigError(f"expected section.key=value, got {item!r}")
            values.setdefault(section, {})[key] = raw
        return self.with_values(values)

    @classmethod
    def from_file(cls, path: Union[str, Path]) -> "RunConfig":
        """Read an INI file; missing keys keep their defaults."""
        path = Path(path)
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str  # keys are case-sensitive field names
        try:
            with path.open() as fh:
                parser.read_file(fh)
        except (OSError, configparser.Error) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        values = {s: dict(parser.items(s)) for s in parser.sections()}
        logger.debug("read %d config sections from %s", len(values), path)
        return cls().with_values(values)

    # ------------------------------------------------------------------
    # Output
    # ------------------------------------------------------------------

    def to_sections(self) -> Dict[str, Dict[str, Any]]:
        out: Dict[str, Dict[str, Any]] = {}
        for section, (attr, fixed) in SECTIONS.items():
            current = getattr(self, attr)
            out[section] = {
                f.name: getattr(current, f.name)
                for f in dataclasses.fields(current)
                if f.name not in fixed
            }
        return out

    def write(self, path: Union[str, Path]) -> Path:
        """Write every settable key, so the file reproduces this config."""
        path = Path(path)
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str
        for section, pairs in self.to_sections().items():
            parser[section] = {k: str(v).lower() if isinstance(v, bool) else str(v) for k, v in pairs.items()}
        with path.open("w") as fh:
            parser.write(fh)
        return path

    @classmethod
    def describe_keys(cls) -> List[str]:
        """``section.key = default`` for every settable key."""
        return [
            f"{section}.{key} = {value}"
            for section, pairs in cls().to_sections().items()
            for key, value in pairs.items()
        ]


def load_config(
    path: Optional[Union[str, Path]] = None,
    assignments: Iterable[str] = (),
    flags: Optional[Mapping[str, Mapping[str, str]]] = None,
) -> RunConfig:
    """Defaults, then *path*, then ``--set`` assignments, then explicit flags."""
    config = RunConfig.from_file(path) if path else RunConfig()
    config = config.with_assignments(assignments)
    if flags:
        config = config.with_values(
            {s: {k: str(v) for k, v in pairs.items() if v is not None} for s, pairs in flags.items()}
        )
    return config
