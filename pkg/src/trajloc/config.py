"""Experiment configuration: nested dataclasses with YAML round-tripping and dotted overrides."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import yaml

from .dataset import DEFAULT_APS, ConfigError, SyntheticEnvironment
from .filter import DEFAULT_BETAS, FilterConfig
from .seqmodels import WiringSpec
from .trajgen import MotionModel


@dataclass
class DatasetSection:
    source: str = "synthetic"            # synthetic | ujiindoorloc
    # synthetic site
    width: float = 21.0
    height: float = 16.0
    ap_positions: list = field(default_factory=lambda: [list(p) for p in DEFAULT_APS])
    path_loss_exponent: float = 3.0
    ref_power: float = -40.0
    shadowing_std: float = 3.0
    static_shadowing_std: float = 0.0
    static_correlation_length: float = 1.5
    grid_size: float = 1.0
    sensitivity: float = -100.0
    track_speed: float = 0.6
    s1: int = 100
    s2: int = 1
    # UJIIndoorLoc
    path: str | None = None
    building: int | None = 0
    floor: int | None = None
    phones: list | None = field(default_factory=lambda: [13, 14])
    drop_undetected: bool = True


@dataclass
class MotionSection:
    v_max: float = 2.0
    delta_t: float = 1.0
    d_max: float = 2.0
    sigma: float | None = None      # derived as v_max * delta_t when left empty


@dataclass
class ModelSection:
    variant: str = "P-MIMO"
    cell: str = "lstm"
    layers: int = 2
    hidden: int = 100
    dropout: float = 0.2
    optimizer: str = "adam"
    lr: float = 1e-3
    batch_size: int = 32
    grad_clip: float = 5.0
    anchor_noise: float = 0.0


@dataclass
class TrainSection:
    T: int = 10
    trajectories: int = 10_000
    epochs: int = 1000
    val_fraction: float = 0.1
    normalization: str = "data"


@dataclass
class FilterSection:
    enabled: bool = True
    betas: list = field(default_factory=lambda: list(DEFAULT_BETAS))


@dataclass
class BaselineSection:
    k: int = 3
    srl_sigma: float = 2.0
    kernel_bandwidth: float = 4.0
    kalman_process: float = 0.5
    kalman_measurement: float = 1.5
    dense_epochs: int = 200


@dataclass
class EvalSection:
    folds: int = 10
    baselines: list = field(default_factory=lambda: ["radar", "kernel", "kalman", "srlknn", "mlp", "mlnn"])
    ambiguity_T: list = field(default_factory=lambda: [1, 2, 4, 8, 10])
    ambiguity_samples: int = 10_000
    correlation_threshold: float | None = 0.9
    speeds: list = field(default_factory=lambda: [0.5, 1.0, 1.5, 2.0, 2.5])
    speed_points: int = 344
    speed_scans_per_point: int = 2
    speed_walks: int = 5
    history_gammas: list = field(default_factory=lambda: [0.0, 2.0, 4.0, 6.0])


SECTIONS = {"dataset": DatasetSection, "motion": MotionSection, "model": ModelSection,
            "train": TrainSection, "filter": FilterSection, "baselines": BaselineSection,
            "eval": EvalSection}


@dataclass
class ExperimentConfig:
    dataset: DatasetSection = field(default_factory=DatasetSection)
    motion: MotionSection = field(default_factory=MotionSection)
    model: ModelSection = field(default_factory=ModelSection)
    train: TrainSection = field(default_factory=TrainSection)
    filter: FilterSection = field(default_factory=FilterSection)
    baselines: BaselineSection = field(default_factory=BaselineSection)
    eval: EvalSection = field(default_factory=EvalSection)
    seed: int = 0
    output_dir: str = "runs/default"

    # -- conversions to library objects --
    def environment(self) -> SyntheticEnvironment:
        d = self.dataset
        return SyntheticEnvironment(d.width, d.height, tuple(tuple(map(float, p)) for p in d.ap_positions),
                                    d.path_loss_exponent, d.ref_power, d.shadowing_std, d.grid_size,
                                    d.sensitivity, d.static_shadowing_std, d.static_correlation_length,
                                    d.track_speed, self.motion.delta_t, self.seed)

    def motion_model(self) -> MotionModel:
        m = self.motion
        if m.sigma is not None:
            if m.delta_t <= 0:
                raise ConfigError("motion.delta_t must be > 0")
            if abs(m.sigma - m.v_max * m.delta_t) > 1e-9 and m.v_max != MotionSection.v_max:
                raise ConfigError(f"motion.sigma={m.sigma} contradicts v_max * delta_t = {m.v_max * m.delta_t}")
            return MotionModel.from_sigma(m.sigma, m.delta_t, d_max=m.d_max)
        return MotionModel(m.v_max, m.delta_t, m.d_max)

    def wiring(self) -> WiringSpec:
        return WiringSpec(T=self.train.T, **asdict(self.model))

    def filter_config(self) -> FilterConfig:
        return FilterConfig(tuple(float(b) for b in self.filter.betas), enabled=self.filter.enabled)

    def validate(self) -> "ExperimentConfig":
        if self.dataset.source not in ("synthetic", "ujiindoorloc"):
            raise ConfigError(f"unknown dataset source {self.dataset.source!r}")
        if self.dataset.source == "ujiindoorloc" and not self.dataset.path:
            raise ConfigError("dataset.path is required for ujiindoorloc")
        if self.train.trajectories < 1 or self.train.epochs < 0:
            raise ConfigError("train.trajectories must be >= 1 and train.epochs >= 0")
        if self.eval.folds < 1:
            raise ConfigError("eval.folds must be >= 1")
        if self.eval.speed_scans_per_point not in (1, 2) or self.eval.speed_walks < 1:
            raise ConfigError("eval.speed_scans_per_point must be 1 or 2 and eval.speed_walks >= 1")
        try:
            self.environment() if self.dataset.source == "synthetic" else None
            self.motion_model()
            self.wiring()
            self.filter_config()
        except (ValueError, TypeError) as exc:
            raise ConfigError(str(exc)) from exc
        return self

    # -- serialization --
    def to_dict(self) -> dict:
        return asdict(self)

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=True, default_flow_style=False)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()

    @classmethod
    def from_dict(cls, data: dict | None) -> "ExperimentConfig":
        data = dict(data or {})
        kwargs = {}
        for name, section_cls in SECTIONS.items():
            raw = data.pop(name, None) or {}
            if not isinstance(raw, dict):
                raise ConfigError(f"section {name!r} must be a mapping")
            known = {f.name for f in fields(section_cls)}
            unknown = set(raw) - known
            if unknown:
                raise ConfigError(f"unknown keys in {name}: {sorted(unknown)}")
            kwargs[name] = section_cls(**raw)
        for key in ("seed", "output_dir"):
            if key in data:
                kwargs[key] = data.pop(key)
        if data:
            raise ConfigError(f"unknown top-level keys: {sorted(data)}")
        return cls(**kwargs)

    @classmethod
    def from_yaml(cls, text: str) -> "ExperimentConfig":
        try:
            return cls.from_dict(yaml.safe_load(text))
        except yaml.YAMLError as exc:
            raise ConfigError(f"invalid YAML: {exc}") from exc


def load_config(path) -> ExperimentConfig:
    return ExperimentConfig.from_yaml(Path(path).read_text())


def save_config(config: ExperimentConfig, path):
    Path(path).write_text(config.to_yaml())


def apply_override(config: ExperimentConfig, assignment: str) -> ExperimentConfig:
    """Apply ``section.key=value`` (value parsed as YAML) and return a new config."""
    if "=" not in assignment:
        raise ConfigError(f"override {assignment!r} is not of the form key=value")
    key, raw = assignment.split("=", 1)
    try:
        value = yaml.safe_load(raw)
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse value in {assignment!r}") from exc
    data = config.to_dict()
    parts = key.strip().split(".")
    node = data
    for p in parts[:-1]:
        if not isinstance(node.get(p), dict):
            raise ConfigError(f"unknown config path {key!r}")
        node = node[p]
    if parts[-1] not in node:
        raise ConfigError(f"unknown config path {key!r}")
    node[parts[-1]] = value
    return ExperimentConfig.from_dict(data)
