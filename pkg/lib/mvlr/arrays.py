# Copyright 2023 Canonical Ltd.
# See LICENSE file for licensing details.

"""Uniform rectangular arrays, 2D DFT codebooks and analog stage assembly.

Angles follow one convention across the library: azimuth is measured from array
broadside in the horizontal plane and elevation from the horizontal. Array elements are
ordered azimuth-major, i.e. element `(m_az, m_el)` sits at index `m_az * n_el + m_el`,
which is the row order of `kron(B(n_az), B(n_el))`.
"""
import logging
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Sequence, Tuple

import numpy as np
import scipy.linalg
from pydantic import BaseModel, ConfigDict, Field, PositiveInt, model_validator

from mvlr.errors import InvalidInputError
from mvlr.numerics import ComplexMatrix

ANGLE_TOLERANCE = 1e-12

logger = logging.getLogger(__name__)


class Architecture(str, Enum):
    """Hybrid transceiver architectures."""

    FULLY_CONNECTED = "fully-connected"
    SUB_CONNECTED = "sub-connected"
    FULL_DIGITAL = "full-digital"


class Side(str, Enum):
    """Link end: the vehicle transmits (uplink) and the base station receives."""

    TX = "tx"
    RX = "rx"


class CodebookScope(str, Enum):
    """Whether beams span the whole array or one sub-array."""

    FULL_ARRAY = "full-array"
    SUB_ARRAY = "sub-array"


class UraGeometry(BaseModel):
    """Uniform rectangular array.

    Attributes:
        n_az: antennas along azimuth.
        n_el: antennas along elevation.
        spacing_wavelengths: inter-element spacing in wavelengths.
    """

    model_config = ConfigDict(frozen=True)

    n_az: PositiveInt
    n_el: PositiveInt
    spacing_wavelengths: float = Field(default=0.5, gt=0)

    @property
    def n_antennas(self) -> int:
        """Total element count."""
        return self.n_az * self.n_el


def subarray_geometry(geometry: UraGeometry, n_rf: int) -> UraGeometry:
    """Return the geometry of one of the `n_rf` contiguous sub-arrays of `geometry`.

    Sub-arrays take consecutive elements in azimuth-major order: whole azimuth slabs when
    the block size is a multiple of `n_el`, or a partial elevation column when `n_el` is
    a multiple of the block size.

    Raises:
        InvalidInputError: if the array does not split into `n_rf` rectangular blocks.
    """
    if n_rf <= 0 or geometry.n_antennas % n_rf:
        raise InvalidInputError(
            f"{geometry.n_antennas} antennas cannot be split into {n_rf} sub-arrays."
        )
    block = geometry.n_antennas // n_rf
    if block % geometry.n_el == 0:
        n_az, n_el = block // geometry.n_el, geometry.n_el
    elif geometry.n_el % block == 0:
        n_az, n_el = 1, block
    else:
        raise InvalidInputError(
            f"Sub-arrays of {block} elements do not tile a "
            f"{geometry.n_az}x{geometry.n_el} array."
        )
    return UraGeometry(n_az=n_az, n_el=n_el, spacing_wavelengths=geometry.spacing_wavelengths)


class HybridConfig(BaseModel):
    """Transceiver dimensions for one link.

    Attributes:
        architecture: analog stage topology.
        tx_geometry: transmit (vehicle) array.
        rx_geometry: receive (base station) array.
        n_tx_rf: transmit RF chains.
        n_rx_rf: receive RF chains.
        n_streams: spatial streams.
    """

    model_config = ConfigDict(frozen=True)

    architecture: Architecture
    tx_geometry: UraGeometry
    rx_geometry: UraGeometry
    n_tx_rf: PositiveInt
    n_rx_rf: PositiveInt
    n_streams: PositiveInt = 1

    @model_validator(mode="after")
    def _check_dimensions(self) -> "HybridConfig":
        n_tx, n_rx = self.tx_geometry.n_antennas, self.rx_geometry.n_antennas
        if self.architecture == Architecture.FULL_DIGITAL:
            if (self.n_tx_rf, self.n_rx_rf) != (n_tx, n_rx):
                raise ValueError(
                    f"full-digital needs one RF chain per antenna ({n_tx}, {n_rx}), "
                    f"got ({self.n_tx_rf}, {self.n_rx_rf})"
                )
        else:
            if self.n_tx_rf >= n_tx or self.n_rx_rf >= n_rx:
                raise ValueError(
                    f"hybrid architectures need fewer RF chains than antennas, got "
                    f"{self.n_tx_rf}/{n_tx} at Tx and {self.n_rx_rf}/{n_rx} at Rx"
                )
        if self.architecture == Architecture.SUB_CONNECTED:
            try:
                subarray_geometry(self.tx_geometry, self.n_tx_rf)
                subarray_geometry(self.rx_geometry, self.n_rx_rf)
            except InvalidInputError as error:
                raise ValueError(error.message) from error
        if self.n_streams > min(self.n_tx_rf, self.n_rx_rf):
            raise ValueError(
                f"n_streams={self.n_streams} exceeds min(n_tx_rf, n_rx_rf)="
                f"{min(self.n_tx_rf, self.n_rx_rf)}"
            )
        return self

    @classmethod
    def full_digital(
        cls, tx_geometry: UraGeometry, rx_geometry: UraGeometry, n_streams: int = 1
    ) -> "HybridConfig":
        """Build the full-digital benchmark for the given arrays."""
        return cls(
            architecture=Architecture.FULL_DIGITAL,
            tx_geometry=tx_geometry,
            rx_geometry=rx_geometry,
            n_tx_rf=tx_geometry.n_antennas,
            n_rx_rf=rx_geometry.n_antennas,
            n_streams=n_streams,
        )

    def geometry(self, side: Side) -> UraGeometry:
        """Array at `side`."""
        return self.tx_geometry if side == Side.TX else self.rx_geometry

    def n_rf(self, side: Side) -> int:
        """RF chains at `side`."""
        return self.n_tx_rf if side == Side.TX else self.n_rx_rf

    def block_size(self, side: Side) -> int:
        """Antennas driven by one RF chain (the whole array unless sub-connected)."""
        if self.architecture == Architecture.SUB_CONNECTED:
            return self.geometry(side).n_antennas // self.n_rf(side)
        return self.geometry(side).n_antennas


@dataclass(frozen=True)
class Codebook:
    """Orthonormal set of candidate analog beams, one per column."""

    matrix: ComplexMatrix
    scope: CodebookScope = CodebookScope.FULL_ARRAY

    @property
    def n_beams(self) -> int:
        """Number of candidate beams."""
        return self.matrix.shape[1]

    @property
    def size(self) -> int:
        """Antennas a beam drives."""
        return self.matrix.shape[0]


def steering_vector(geometry: UraGeometry, azimuth: float, elevation: float) -> np.ndarray:
    """Return the array response towards `(azimuth, elevation)`.

    Raises:
        InvalidInputError: if azimuth is outside (-pi, pi] or elevation outside
            [-pi/2, pi/2].
    """
    if not -np.pi < azimuth <= np.pi + ANGLE_TOLERANCE:
        raise InvalidInputError(f"azimuth {azimuth} is outside (-pi, pi].")
    if not -np.pi / 2 - ANGLE_TOLERANCE <= elevation <= np.pi / 2 + ANGLE_TOLERANCE:
        raise InvalidInputError(f"elevation {elevation} is outside [-pi/2, pi/2].")
    m_az = np.arange(geometry.n_az)[:, np.newaxis]
    m_el = np.arange(geometry.n_el)[np.newaxis, :]
    phase = (
        2
        * np.pi
        * geometry.spacing_wavelengths
        * (m_az * np.sin(azimuth) * np.cos(elevation) + m_el * np.sin(elevation))
    )
    return np.exp(1j * phase).reshape(-1)


def dft_codebook_2d(
    n1: int, n2: int, scope: CodebookScope = CodebookScope.FULL_ARRAY
) -> Codebook:
    """Return the 2D DFT codebook `kron(B(n1), B(n2))`.

    `B(N)[m, n] = exp(-2j * pi * m * n / N) / sqrt(N)`.
    """
    if n1 < 1 or n2 < 1:
        raise InvalidInputError(f"Codebook dimensions must be positive, got ({n1}, {n2}).")
    matrix = np.kron(scipy.linalg.dft(n1, scale="sqrtn"), scipy.linalg.dft(n2, scale="sqrtn"))
    return Codebook(matrix=matrix.astype(np.complex128), scope=scope)


def codebook_for(config: HybridConfig, side: Side) -> Codebook:
    """Return the codebook probed at `side`: full-array for FC, per sub-array for SC.

    Raises:
        InvalidInputError: for full-digital configurations, which have no analog stage.
    """
    geometry = config.geometry(side)
    if config.architecture == Architecture.FULLY_CONNECTED:
        return dft_codebook_2d(geometry.n_az, geometry.n_el)
    if config.architecture == Architecture.SUB_CONNECTED:
        block = subarray_geometry(geometry, config.n_rf(side))
        return dft_codebook_2d(block.n_az, block.n_el, CodebookScope.SUB_ARRAY)
    raise InvalidInputError("Full-digital transceivers have no analog codebook.")


def grid_direction(n1: int, n2: int, index: int) -> Tuple[float, float]:
    """Return the angles whose half-wavelength steering vector matches codebook column `index`.

    The match is exact up to a global phase: the steering vector equals
    `sqrt(n1 * n2)` times the codebook column.

    Raises:
        InvalidInputError: if the index is out of range or its spatial frequencies do not
            correspond to a physical direction.
    """
    if not 0 <= index < n1 * n2:
        raise InvalidInputError(f"Codebook index {index} is out of range for {n1}x{n2}.")
    k1, k2 = divmod(index, n2)
    horizontal = _wrap_spatial_frequency(-2.0 * k1 / n1)
    vertical = _wrap_spatial_frequency(-2.0 * k2 / n2)
    if horizontal**2 + vertical**2 > 1 + ANGLE_TOLERANCE:
        raise InvalidInputError(
            f"Codebook column {index} of {n1}x{n2} has no physical direction."
        )
    elevation = float(np.arcsin(vertical))
    cos_elevation = np.cos(elevation)
    if cos_elevation < ANGLE_TOLERANCE:
        return 0.0, elevation
    azimuth = float(np.arcsin(np.clip(horizontal / cos_elevation, -1.0, 1.0)))
    return azimuth, elevation


def _wrap_spatial_frequency(value: float) -> float:
    return float((value + 1.0) % 2.0 - 1.0)


def assemble_analog(
    config: HybridConfig,
    side: Side,
    beam_indices: Sequence[int],
    codebook: Optional[Codebook] = None,
) -> ComplexMatrix:
    """Assemble F_RF (Tx) or W_RF (Rx) from selected codebook beams.

    Args:
        config: transceiver dimensions.
        side: which end of the link the matrix belongs to.
        beam_indices: one distinct codebook column per RF chain; ignored for full-digital.
        codebook: codebook to pick from; defaults to `codebook_for(config, side)`.

    Returns:
        N x n_rf analog matrix. Fully-connected columns have entries of magnitude 1/sqrt(N),
        sub-connected matrices are block-diagonal with the k-th beam on the k-th sub-array,
        and full-digital transceivers get the identity.

    Raises:
        InvalidInputError: on a wrong number of beams, repeated or out-of-range indices.
    """
    geometry = config.geometry(side)
    if config.architecture == Architecture.FULL_DIGITAL:
        return np.eye(geometry.n_antennas, dtype=np.complex128)

    if codebook is None:
        codebook = codebook_for(config, side)
    indices = [int(index) for index in beam_indices]
    n_rf = config.n_rf(side)
    if len(indices) != n_rf:
        raise InvalidInputError(f"Expected {n_rf} beam indices at {side.value}, got {indices}.")
    if len(set(indices)) != len(indices):
        raise InvalidInputError(f"Repeated beam indices {indices} give a rank-deficient stage.")
    if min(indices) < 0 or max(indices) >= codebook.n_beams:
        raise InvalidInputError(
            f"Beam indices {indices} are out of range for {codebook.n_beams} beams."
        )

    if config.architecture == Architecture.FULLY_CONNECTED:
        scale = np.sqrt(codebook.size / geometry.n_antennas)
        return scale * codebook.matrix[:, indices]
    return scipy.linalg.block_diag(*(codebook.matrix[:, [index]] for index in indices))
