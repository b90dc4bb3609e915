# Copyright 2023 Canonical Ltd.
# See LICENSE file for licensing details.

"""Experiment configuration: option defaults, YAML loading and validation."""
import logging
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Literal, Mapping, Optional, Tuple, Union

import numpy as np
import yaml
from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    NonNegativeFloat,
    PositiveFloat,
    PositiveInt,
    ValidationError,
    conlist,
    model_validator,
)

from mvlr.arrays import Architecture, HybridConfig, UraGeometry
from mvlr.errors import ConfigValidationError
from mvlr.estimation import NoiseFloor, RankRule
from mvlr.scenario import AnglesMode, Environment, MvRegion, preset

OPTIONS_PATH = Path(__file__).resolve().parent.parent / "config.yaml"
MAX_SEED = 2**64 - 1

logger = logging.getLogger(__name__)


class Estimator(str, Enum):
    """Channel estimates compared by an experiment."""

    UML = "uml"
    JS = "js"
    DS = "ds"
    PERFECT_CSI = "perfect-csi"


def _dashed(name: str) -> str:
    return name.replace("_", "-")


class ExperimentConfig(BaseModel):
    """Validated experiment options.

    Grids (`architectures`, `rf-chains`, `rho`, `snr-db`, `passages`) span the sweep;
    every other option is shared by all grid points. The option schema with its
    defaults lives in `config.yaml`.
    """

    model_config = ConfigDict(
        alias_generator=_dashed, populate_by_name=True, extra="forbid", frozen=True
    )

    log_level: Literal["DEBUG", "INFO", "WARNING", "ERROR"] = "INFO"
    preset: Literal["s1", "s2"] = "s1"
    environment: Optional[Environment] = None
    region: Optional[MvRegion] = None
    tx_array: Tuple[PositiveInt, PositiveInt] = (8, 8)
    rx_array: Tuple[PositiveInt, PositiveInt] = (16, 8)
    n_streams: PositiveInt = 1
    architectures: List[Architecture] = Field(
        default=[Architecture.FULLY_CONNECTED], min_length=1
    )
    rf_chains: List[Tuple[PositiveInt, PositiveInt]] = Field(default=[(4, 8)], min_length=1)
    rho: Optional[conlist(PositiveFloat, min_length=1)] = None
    snr_db: List[float] = Field(default=[-10.0], min_length=1)
    passages: List[PositiveInt] = Field(default=[100], min_length=1)
    estimators: List[Estimator] = Field(default=list(Estimator), min_length=1)
    trials: PositiveInt = 100
    seed: int = Field(default=0, ge=0, le=MAX_SEED)
    out: Path = Path("results.csv")
    store: Path = Path("mvlr.store")
    threads: PositiveInt = 1
    pilot_length: Optional[PositiveInt] = None
    rank_threshold: float = Field(default=0.999, gt=0, le=1)
    rank_noise_floor: NoiseFloor = NoiseFloor.EDGE
    angles_mode: AnglesMode = AnglesMode.FROZEN_AT_CENTER
    heading_jitter_deg: NonNegativeFloat = 0.0
    heading_threshold_deg: float = Field(default=30.0, gt=0, le=180)
    alignment_passages_per_beam: PositiveInt = 4
    alignment_snr_db: Optional[float] = None
    max_joint_dimension: PositiveInt = 4096

    @model_validator(mode="after")
    def _check_grid(self) -> "ExperimentConfig":
        if len(set(self.estimators)) != len(self.estimators):
            raise ValueError("estimators must not repeat")
        for architecture in self.architectures:
            for rf_chains in self.rf_chains:
                hybrid = self.hybrid_config(architecture, rf_chains)
                if self.pilot_length is not None and self.pilot_length < hybrid.n_tx_rf:
                    raise ValueError(
                        f"pilot-length {self.pilot_length} is shorter than the "
                        f"{hybrid.n_tx_rf} Tx RF chains of {architecture.value}"
                    )
                dimension = hybrid.n_tx_rf * hybrid.n_rx_rf
                if Estimator.JS in self.estimators and dimension > self.max_joint_dimension:
                    raise ValueError(
                        f"js on {architecture.value} needs a {dimension}-dimensional joint "
                        f"subspace, above max-joint-dimension={self.max_joint_dimension}"
                    )
        return self

    @property
    def tx_geometry(self) -> UraGeometry:
        """Vehicle array."""
        return UraGeometry(n_az=self.tx_array[0], n_el=self.tx_array[1])

    @property
    def rx_geometry(self) -> UraGeometry:
        """Base station array."""
        return UraGeometry(n_az=self.rx_array[0], n_el=self.rx_array[1])

    @property
    def rank_rule(self) -> RankRule:
        """Rank rule shared by both low-rank estimators."""
        return RankRule(threshold=self.rank_threshold, noise_floor=self.rank_noise_floor)

    def hybrid_config(
        self, architecture: Architecture, rf_chains: Tuple[int, int]
    ) -> HybridConfig:
        """Transceiver of one grid point; full-digital ignores `rf_chains`."""
        if architecture == Architecture.FULL_DIGITAL:
            return HybridConfig.full_digital(self.tx_geometry, self.rx_geometry, self.n_streams)
        return HybridConfig(
            architecture=architecture,
            tx_geometry=self.tx_geometry,
            rx_geometry=self.rx_geometry,
            n_tx_rf=rf_chains[0],
            n_rx_rf=rf_chains[1],
            n_streams=self.n_streams,
        )

    def scenario(self, rho: Optional[float] = None) -> Tuple[Environment, MvRegion]:
        """Environment and region, with the region radius replaced by `rho` if given."""
        environment, region = preset(self.preset)
        environment = self.environment or environment
        region = self.region or region
        if rho is not None:
            region = region.model_copy(update={"radius": rho})
        return environment, region

    def rho_grid(self) -> List[float]:
        """Region radii to sweep; the scenario's own radius when no grid is set."""
        if self.rho is not None:
            return list(self.rho)
        return [self.scenario()[1].radius]

    @property
    def heading_jitter(self) -> float:
        """Heading jitter half-width in radians."""
        return float(np.deg2rad(self.heading_jitter_deg))

    @property
    def heading_threshold(self) -> float:
        """Beam list heading threshold in radians."""
        return float(np.deg2rad(self.heading_threshold_deg))

    def to_yaml(self) -> str:
        """Dump the merged options with their dashed names."""
        return yaml.safe_dump(
            self.model_dump(mode="json", by_alias=True), sort_keys=False, default_flow_style=None
        )


def option_defaults(options_path: Union[str, Path] = OPTIONS_PATH) -> Dict[str, Any]:
    """Read the `default` of every option declared in `config.yaml`."""
    with open(options_path, encoding="utf-8") as stream:
        options = yaml.safe_load(stream)["options"]
    return {name: option.get("default") for name, option in options.items()}


def load_config(
    path: Optional[Union[str, Path]] = None,
    overrides: Optional[Mapping[str, Any]] = None,
    options_path: Union[str, Path] = OPTIONS_PATH,
) -> ExperimentConfig:
    """Merge option defaults, a user YAML file and CLI overrides, then validate.

    Overrides whose value is None are ignored, so unset CLI flags keep the file values.

    Raises:
        ConfigValidationError: if the file cannot be read or the merged options are invalid.
    """
    merged = option_defaults(options_path)
    if path is not None:
        try:
            with open(path, encoding="utf-8") as stream:
                user = yaml.safe_load(stream) or {}
        except (OSError, yaml.YAMLError) as error:
            raise ConfigValidationError(f"Cannot read config {path}: {error}") from error
        if not isinstance(user, dict):
            raise ConfigValidationError(f"Config {path} must be a mapping of options.")
        merged.update(user)
    merged.update({key: value for key, value in (overrides or {}).items() if value is not None})
    try:
        config = ExperimentConfig.model_validate(merged)
    except ValidationError as error:
        raise ConfigValidationError(f"Invalid configuration: {error}") from error
    logger.debug("Loaded configuration %s", config.model_dump(mode="json", by_alias=True))
    return config
