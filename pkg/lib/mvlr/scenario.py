# Copyright 2023 Canonical Ltd.
# See LICENSE file for licensing details.

"""Synthetic geometric environment standing in for a ray tracer.

World frame: x points east, y north and z up, in meters. Azimuths are counter-clockwise
from east in the world frame; an array's local azimuth is the world azimuth minus the
array orientation, wrapped into (-pi, pi]. Elevation is measured from the horizontal.

The vehicle transmits (uplink), so departure angles live at the vehicle and arrival
angles at the base station. Paths are the line of sight plus one single-bounce path per
reflector; raw powers decay with total path length and are normalised to sum to one.
"""
import logging
from enum import Enum
from typing import Dict, List, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from mvlr.channel import PathSet
from mvlr.errors import InvalidInputError

Point = Tuple[float, float, float]

MIN_PATH_SEGMENT = 1e-9

logger = logging.getLogger(__name__)


class AnglesMode(str, Enum):
    """Where path angles are evaluated for a passage."""

    FROZEN_AT_CENTER = "frozen-at-center"
    PER_POSE = "per-pose"


class Environment(BaseModel):
    """Base station pose and the scatterers around it.

    Attributes:
        bs_position: base station array position.
        bs_orientation: world azimuth of the base station array broadside.
        reflectors: single-bounce specular scatterers.
        pathloss_exponent: exponent shaping the path power profile.
        los_enabled: whether the direct path exists.
    """

    model_config = ConfigDict(frozen=True)

    bs_position: Point
    bs_orientation: float = 0.0
    reflectors: Tuple[Point, ...] = ()
    pathloss_exponent: float = Field(default=2.0, ge=0)
    los_enabled: bool = True

    @model_validator(mode="after")
    def _check_reflectors(self) -> "Environment":
        for reflector in self.reflectors:
            if np.allclose(reflector, self.bs_position, rtol=0, atol=MIN_PATH_SEGMENT):
                raise ValueError(f"reflector {reflector} coincides with the base station")
        return self

    @property
    def path_count(self) -> int:
        """Number of paths the environment produces."""
        return int(self.los_enabled) + len(self.reflectors)


class MvRegion(BaseModel):
    """Cluster of vehicle poses that share the same propagation angles."""

    model_config = ConfigDict(frozen=True)

    center: Point
    heading: float = 0.0
    radius: float = Field(gt=0)

    def contains(self, pose: "VehiclePose") -> bool:
        """Whether the pose lies on the region disk."""
        offset = np.subtract(pose.position, self.center)
        return bool(np.linalg.norm(offset) <= self.radius * (1 + 1e-12))


class VehiclePose(BaseModel):
    """Position and heading of one vehicle passage."""

    model_config = ConfigDict(frozen=True)

    position: Point
    heading: float


def wrap_angle(angle: float) -> float:
    """Wrap an angle into (-pi, pi]."""
    return float(np.pi - (np.pi - angle) % (2 * np.pi))


def sample_passage(
    region: MvRegion, jitter_heading: float, rng: np.random.Generator
) -> VehiclePose:
    """Draw a pose uniformly on the region disk with a uniformly jittered heading."""
    radius = region.radius * np.sqrt(rng.uniform())
    bearing = rng.uniform(0.0, 2 * np.pi)
    heading = region.heading + rng.uniform(-jitter_heading, jitter_heading)
    x, y, z = region.center
    return VehiclePose(
        position=(x + radius * np.cos(bearing), y + radius * np.sin(bearing), z),
        heading=heading,
    )


def local_direction(vector, orientation: float) -> Tuple[float, float]:
    """Return `(azimuth, elevation)` of a world-frame vector seen by an array."""
    dx, dy, dz = vector
    azimuth = wrap_angle(np.arctan2(dy, dx) - orientation)
    elevation = float(np.arctan2(dz, np.hypot(dx, dy)))
    return azimuth, elevation


def path_powers(lengths: Sequence[float], exponent: float) -> np.ndarray:
    """Normalised powers `length^-exponent / sum(length^-exponent)`.

    Raises:
        InvalidInputError: if a length is not positive.
    """
    lengths = np.asarray(lengths, dtype=np.float64)
    if lengths.size == 0 or np.any(lengths <= 0):
        raise InvalidInputError(f"Path lengths must be positive, got {lengths.tolist()}.")
    raw = lengths ** (-exponent)
    return raw / raw.sum()


def geometry_to_paths(
    env: Environment, pose: VehiclePose, mode: AnglesMode, region: MvRegion
) -> PathSet:
    """Trace the line of sight and single-bounce paths between a vehicle and the BS.

    Args:
        env: base station and scatterers.
        pose: the vehicle pose of this passage.
        mode: evaluate geometry at the region center (frozen) or at the pose itself.
        region: the region the pose belongs to.

    Returns:
        The region's path set for `FROZEN_AT_CENTER`, the pose's own otherwise.

    Raises:
        InvalidInputError: if no path is enabled or a path has a zero-length segment.
    """
    if env.path_count == 0:
        raise InvalidInputError("The environment has neither line of sight nor reflectors.")
    if mode == AnglesMode.FROZEN_AT_CENTER:
        position, heading = np.asarray(region.center, dtype=float), region.heading
    else:
        position, heading = np.asarray(pose.position, dtype=float), pose.heading
    bs = np.asarray(env.bs_position, dtype=float)

    aod: List[Tuple[float, float]] = []
    aoa: List[Tuple[float, float]] = []
    lengths: List[float] = []
    # (vector leaving the vehicle, vector from the BS towards the last bounce, BS leg length)
    legs = [(bs - position, position - bs, 0.0)] if env.los_enabled else []
    for reflector in env.reflectors:
        to_bs = np.asarray(reflector, dtype=float) - bs
        legs.append((reflector - position, to_bs, float(np.linalg.norm(to_bs))))
    for departure, arrival, bs_leg in legs:
        vehicle_leg = float(np.linalg.norm(departure))
        if vehicle_leg < MIN_PATH_SEGMENT:
            raise InvalidInputError(f"Vehicle at {position.tolist()} touches a path endpoint.")
        aod.append(local_direction(departure, heading))
        aoa.append(local_direction(arrival, env.bs_orientation))
        lengths.append(vehicle_leg + bs_leg)

    powers = path_powers(lengths, env.pathloss_exponent)
    logger.debug("Traced %d paths with lengths %s", len(lengths), lengths)
    return PathSet(aod=tuple(aod), aoa=tuple(aoa), powers=tuple(float(p) for p in powers))


PRESETS: Dict[str, Tuple[Environment, MvRegion]] = {
    # about 60 m from the BS, line of sight plus two building reflections
    "s1": (
        Environment(
            bs_position=(0.0, 0.0, 6.0),
            bs_orientation=np.pi / 2,
            reflectors=((-25.0, 40.0, 8.0), (40.0, 30.0, 4.0)),
        ),
        MvRegion(center=(20.0, 56.0, 1.5), heading=np.pi, radius=2.0),
    ),
    # about 8 m from the BS, line of sight only
    "s2": (
        Environment(bs_position=(0.0, 0.0, 6.0), bs_orientation=np.pi / 2),
        MvRegion(center=(3.0, 6.0, 1.5), heading=0.0, radius=0.5),
    ),
}


def preset(name: str) -> Tuple[Environment, MvRegion]:
    """Return the `(Environment, MvRegion)` pair of a named scenario.

    Raises:
        InvalidInputError: for unknown preset names.
    """
    try:
        return PRESETS[name.lower()]
    except KeyError:
        raise InvalidInputError(
            f"Unknown scenario preset {name!r}; choose one of {sorted(PRESETS)}."
        ) from None
