# Copyright 2023 Canonical Ltd.
# See LICENSE file for licensing details.

"""Multi-vehicular codebook beam alignment.

Vehicles passing through a region are each told which transmit beam to use, while the
base station scans every receive beam and stores the received powers. After enough
passages the per-region power matrix reveals the strongest beams on both sides without
any single vehicle having to sweep its whole codebook.

Typical use:

```python
l_f, l_w = build_beam_lists(env, [region], config, rng)
f_rf, region_index = l_f.lookup(pose)
```
"""
import logging
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from mvlr.arrays import Architecture, Codebook, HybridConfig, Side, assemble_analog, codebook_for
from mvlr.channel import draw_channel
from mvlr.errors import InvalidInputError, LookupMissError
from mvlr.numerics import ComplexMatrix
from mvlr.scenario import (
    AnglesMode,
    Environment,
    MvRegion,
    VehiclePose,
    geometry_to_paths,
    sample_passage,
    wrap_angle,
)

DEFAULT_PASSAGES_PER_BEAM = 4
DEFAULT_HEADING_THRESHOLD = np.deg2rad(30.0)

logger = logging.getLogger(__name__)


def measure_pair_power(H, f, w, sigma_s: float, noise=None) -> float:
    """Return the power `|w^H (H f s + n)|^2` received on one beam pair.

    Args:
        H: channel matrix.
        f: transmit beam.
        w: receive beam.
        sigma_s: amplitude of the transmitted symbol s.
        noise: optional receiver noise vector n; noiseless when omitted.
    """
    received = np.asarray(H) @ np.asarray(f).reshape(-1) * sigma_s
    if noise is not None:
        received = received + np.asarray(noise).reshape(-1)
    return float(np.abs(np.vdot(np.asarray(w).reshape(-1), received)) ** 2)


@dataclass
class PowerMatrix:
    """Received power statistics of one region, indexed by (Tx beam, Rx beam)."""

    region: Optional[MvRegion]
    sums: np.ndarray
    counts: np.ndarray

    @classmethod
    def empty(cls, region: Optional[MvRegion], n_tx_beams: int, n_rx_beams: int) -> "PowerMatrix":
        """Start a matrix with no measurements."""
        shape = (n_tx_beams, n_rx_beams)
        return cls(region, np.zeros(shape), np.zeros(shape, dtype=np.int64))

    @classmethod
    def from_mean(cls, mean, region: Optional[MvRegion] = None) -> "PowerMatrix":
        """Wrap an already averaged matrix as if every cell was measured once."""
        mean = np.asarray(mean, dtype=np.float64)
        return cls(region, mean.copy(), np.ones(mean.shape, dtype=np.int64))

    def accumulate(self, tx_beam: int, powers) -> None:
        """Add one scan of every Rx beam while the vehicle used `tx_beam`."""
        self.sums[tx_beam] += powers
        self.counts[tx_beam] += 1

    def mean(self) -> np.ndarray:
        """Average power per cell; NaN where nothing was measured."""
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(self.counts > 0, self.sums / np.maximum(self.counts, 1), np.nan)

    @property
    def fully_counted(self) -> bool:
        """Whether every cell holds at least one measurement."""
        return bool(np.all(self.counts > 0))


def _scan_powers(
    H: ComplexMatrix,
    tx_beam: np.ndarray,
    rx_codebook: Codebook,
    config: HybridConfig,
    sigma_s: float,
    noise_power: Optional[float],
    rng: np.random.Generator,
) -> np.ndarray:
    """Power on every Rx beam, averaged over sub-array pairs for sub-connected arrays."""
    n_tx_blocks = n_rx_blocks = 1
    if config.architecture == Architecture.SUB_CONNECTED:
        n_tx_blocks, n_rx_blocks = config.n_tx_rf, config.n_rx_rf
    rx_size, tx_size = rx_codebook.size, tx_beam.size
    powers = np.zeros(rx_codebook.n_beams)
    for rx_block in range(n_rx_blocks):
        rows = slice(rx_block * rx_size, (rx_block + 1) * rx_size)
        for tx_block in range(n_tx_blocks):
            block = H[rows, tx_block * tx_size : (tx_block + 1) * tx_size]
            for rx_index, rx_beam in enumerate(rx_codebook.matrix.T):
                noise = None
                if noise_power:
                    noise = np.sqrt(noise_power / 2.0) * (
                        rng.standard_normal(rx_size) + 1j * rng.standard_normal(rx_size)
                    )
                powers[rx_index] += measure_pair_power(block, tx_beam, rx_beam, sigma_s, noise)
    return powers / (n_rx_blocks * n_tx_blocks)


def run_mv_alignment(
    env: Environment,
    region: MvRegion,
    config: HybridConfig,
    codebooks: Tuple[Codebook, Codebook],
    n_passages: int,
    rng: np.random.Generator,
    mode: AnglesMode = AnglesMode.FROZEN_AT_CENTER,
    jitter_heading: float = 0.0,
    sigma_s: float = 1.0,
    noise_power: Optional[float] = None,
) -> PowerMatrix:
    """Accumulate the power matrix of a region over repeated vehicle passages.

    Passage l is assigned Tx beam `l mod n_tx_beams`; every passage draws a fresh pose
    and fading realization and the base station scans all Rx beams.

    Args:
        env: the propagation environment.
        region: the region being learned.
        config: transceiver dimensions; its architecture selects the probing rule.
        codebooks: `(tx_codebook, rx_codebook)` to probe.
        n_passages: number of vehicle passages L_align.
        rng: random generator for poses, fading and measurement noise.
        mode: where path angles are evaluated for each passage.
        jitter_heading: half-width of the uniform heading jitter.
        sigma_s: amplitude of the probing symbol.
        noise_power: per-measurement noise power; noiseless when None.

    Raises:
        InvalidInputError: if there are fewer passages than Tx beams.
    """
    tx_codebook, rx_codebook = codebooks
    if n_passages < tx_codebook.n_beams:
        raise InvalidInputError(
            f"{n_passages} passages cannot visit all {tx_codebook.n_beams} Tx beams."
        )
    power = PowerMatrix.empty(region, tx_codebook.n_beams, rx_codebook.n_beams)
    for passage in range(n_passages):
        tx_index = passage % tx_codebook.n_beams
        pose = sample_passage(region, jitter_heading, rng)
        paths = geometry_to_paths(env, pose, mode, region)
        H = draw_channel(paths, config.tx_geometry, config.rx_geometry, rng).H
        powers = _scan_powers(
            H, tx_codebook.matrix[:, tx_index], rx_codebook, config, sigma_s, noise_power, rng
        )
        power.accumulate(tx_index, powers)
    logger.debug("Aligned region %s over %d passages", region.center, n_passages)
    return power


def _top_indices(scores: np.ndarray, count: int) -> Tuple[int, ...]:
    order = np.lexsort((np.arange(scores.size), -scores))
    return tuple(int(index) for index in order[:count])


def select_beams(
    power: PowerMatrix, n_tx_rf: int, n_rx_rf: int
) -> Tuple[Tuple[int, ...], Tuple[int, ...]]:
    """Pick the rows and columns with the largest maxima of the mean power matrix.

    Rows and columns are ranked independently, so beams never repeat on either side.
    Both lists are sorted by descending score with ties going to the lower index.

    Raises:
        InvalidInputError: if the matrix has unmeasured cells or too few rows/columns.
    """
    if not power.fully_counted:
        raise InvalidInputError("The power matrix has cells without measurements.")
    mean = power.mean()
    n_rows, n_cols = mean.shape
    if n_tx_rf > n_rows or n_rx_rf > n_cols:
        raise InvalidInputError(
            f"Cannot pick {n_tx_rf}x{n_rx_rf} beams from a {n_rows}x{n_cols} power matrix."
        )
    return _top_indices(mean.max(axis=1), n_tx_rf), _top_indices(mean.max(axis=0), n_rx_rf)


@dataclass(frozen=True)
class BeamListEntry:
    """Learned analog stage of one region."""

    analog_matrix: ComplexMatrix
    region: MvRegion
    beam_indices: Tuple[int, ...] = ()


@dataclass(frozen=True)
class BeamList:
    """Position-indexed list of analog stages.

    Attributes:
        side: which end of the link the stages belong to.
        entries: one entry per region.
        heading_threshold: largest heading difference a lookup accepts, in radians.
    """

    side: Side
    entries: Tuple[BeamListEntry, ...]
    heading_threshold: float = DEFAULT_HEADING_THRESHOLD

    def __len__(self) -> int:
        return len(self.entries)

    def lookup(self, pose: VehiclePose) -> Tuple[ComplexMatrix, int]:
        """Return `(analog_matrix, region_index)` for the nearest compatible region.

        Raises:
            LookupMissError: if no region heading lies within the threshold.
        """
        best_index, best_distance = None, np.inf
        for index, entry in enumerate(self.entries):
            heading_gap = abs(wrap_angle(pose.heading - entry.region.heading))
            if heading_gap > self.heading_threshold:
                continue
            distance = float(np.linalg.norm(np.subtract(pose.position, entry.region.center)))
            if distance < best_distance:
                best_index, best_distance = index, distance
        if best_index is None:
            raise LookupMissError(
                f"No region within {np.rad2deg(self.heading_threshold):.1f} degrees of "
                f"heading {pose.heading:.3f} rad at {pose.position}."
            )
        return self.entries[best_index].analog_matrix, best_index


def build_beam_lists(
    env: Environment,
    regions: Sequence[MvRegion],
    config: HybridConfig,
    rng: np.random.Generator,
    n_passages: Optional[int] = None,
    mode: AnglesMode = AnglesMode.FROZEN_AT_CENTER,
    jitter_heading: float = 0.0,
    noise_power: Optional[float] = None,
    heading_threshold: float = DEFAULT_HEADING_THRESHOLD,
) -> Tuple[BeamList, BeamList]:
    """Return the precoder list L_F and combiner list L_W for `regions`.

    Full-digital transceivers skip alignment and get identity stages. Each region uses
    its own child generator so regions are independent of each other's passage counts.

    Raises:
        InvalidInputError: if `regions` is empty.
    """
    if not regions:
        raise InvalidInputError("At least one region is needed to build beam lists.")
    tx_entries, rx_entries = [], []
    for region, region_rng in zip(regions, rng.spawn(len(regions))):
        if config.architecture == Architecture.FULL_DIGITAL:
            tx_indices, rx_indices = (), ()
        else:
            codebooks = codebook_for(config, Side.TX), codebook_for(config, Side.RX)
            passages = n_passages or DEFAULT_PASSAGES_PER_BEAM * codebooks[0].n_beams
            power = run_mv_alignment(
                env,
                region,
                config,
                codebooks,
                passages,
                region_rng,
                mode=mode,
                jitter_heading=jitter_heading,
                noise_power=noise_power,
            )
            tx_indices, rx_indices = select_beams(power, config.n_tx_rf, config.n_rx_rf)
        tx_entries.append(
            BeamListEntry(assemble_analog(config, Side.TX, tx_indices), region, tx_indices)
        )
        rx_entries.append(
            BeamListEntry(assemble_analog(config, Side.RX, rx_indices), region, rx_indices)
        )
        logger.info(
            "Region %s: Tx beams %s, Rx beams %s", region.center, tx_indices, rx_indices
        )
    return (
        BeamList(Side.TX, tuple(tx_entries), heading_threshold),
        BeamList(Side.RX, tuple(rx_entries), heading_threshold),
    )
