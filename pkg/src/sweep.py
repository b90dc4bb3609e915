# Copyright 2023 Canonical Ltd.
# See LICENSE file for licensing details.

"""Seeded Monte Carlo sweeps over the experiment grid.

Seeds follow a counter scheme on `numpy.random.SeedSequence`: the generator of a stage is
`SeedSequence(seed, spawn_key=(stage, *indices))` where the stage is one of
`STAGE_ALIGN`, `STAGE_FIT` or `STAGE_TEST`. Alignment is indexed by the positions of
(architecture, RF-chain pair, rho) in their grids, fitting by the grid point index and
testing by (grid point index, trial). A result therefore never depends on the thread
count or on which other grid points run.
"""
import csv
import itertools
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import astuple, dataclass, fields
from pathlib import Path
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple, TypeVar, Union

import numpy as np

from experiment import Estimator, ExperimentConfig
from mvlr.arrays import Architecture, HybridConfig, Side, codebook_for
from mvlr.beam_alignment import BeamList, build_beam_lists
from mvlr.channel import compress_channel, draw_channel
from mvlr.estimation import (
    NoiseAfterBf,
    NoiseModel,
    SubspaceKind,
    SubspaceModel,
    TrainingBlock,
    draw_training_block,
    fit_ds,
    fit_js,
    lr_estimate,
    make_training,
    noise_after_bf,
    uml_estimate,
)
from mvlr.link import design_link, mse, mse_bound_lr, spectral_efficiency
from mvlr.numerics import ComplexMatrix, unvec, vec
from mvlr.scenario import (
    AnglesMode,
    Environment,
    MvRegion,
    VehiclePose,
    geometry_to_paths,
    sample_passage,
)

STAGE_ALIGN = 0
STAGE_FIT = 1
STAGE_TEST = 2

LOW_RANK = {Estimator.JS: SubspaceKind.JOINT, Estimator.DS: SubspaceKind.DISJOINT}

Item = TypeVar("Item")
Result = TypeVar("Result")

logger = logging.getLogger(__name__)


def derive_seed(master: int, stage: int, *indices: int) -> np.random.SeedSequence:
    """Seed of one stage and position of a sweep."""
    return np.random.SeedSequence(master, spawn_key=(stage, *indices))


def derived_rng(master: int, stage: int, *indices: int) -> np.random.Generator:
    """Generator seeded by `derive_seed`."""
    return np.random.default_rng(derive_seed(master, stage, *indices))


@dataclass(frozen=True)
class GridPoint:
    """One operating point of the sweep.

    Attributes:
        index: position in the flattened grid, the fit and test seed counter.
        architecture: transceiver architecture.
        rf_chains: `(n_tx_rf, n_rx_rf)` from the RF-chain grid.
        rho: MV region radius.
        snr_db: per-antenna SNR.
        passages: training passages L.
        alignment_key: grid positions of (architecture, rf_chains, rho).
    """

    index: int
    architecture: Architecture
    rf_chains: Tuple[int, int]
    rho: float
    snr_db: float
    passages: int
    alignment_key: Tuple[int, int, int]

    @property
    def sigma_s_sq(self) -> float:
        """Transmit power relative to the unit per-antenna noise."""
        return float(10.0 ** (self.snr_db / 10.0))


def grid_points(config: ExperimentConfig) -> List[GridPoint]:
    """Flatten the grids, architecture outermost and passages innermost."""
    grids = itertools.product(
        enumerate(config.architectures),
        enumerate(config.rf_chains),
        enumerate(config.rho_grid()),
        config.snr_db,
        config.passages,
    )
    points = []
    for index, (architecture, rf_chains, rho, snr_db, passages) in enumerate(grids):
        points.append(
            GridPoint(
                index=index,
                architecture=architecture[1],
                rf_chains=tuple(rf_chains[1]),
                rho=rho[1],
                snr_db=snr_db,
                passages=passages,
                alignment_key=(architecture[0], rf_chains[0], rho[0]),
            )
        )
    return points


@dataclass(frozen=True)
class PointSetup:
    """Everything a grid point shares between fitting and testing."""

    config: ExperimentConfig
    point: GridPoint
    hybrid: HybridConfig
    environment: Environment
    region: MvRegion
    tx_list: BeamList
    rx_list: BeamList
    noise: NoiseAfterBf

    @property
    def pilot_length(self) -> int:
        """Pilot symbols per block."""
        return self.config.pilot_length or self.hybrid.n_tx_rf

    @property
    def center_pose(self) -> VehiclePose:
        """Pose at the region center with the region heading."""
        return VehiclePose(position=self.region.center, heading=self.region.heading)


@dataclass(frozen=True)
class Passage:
    """Compressed channel seen during one vehicle passage."""

    h_tilde: ComplexMatrix
    f_rf: ComplexMatrix
    w_rf: ComplexMatrix
    region_index: int


def align_point(config: ExperimentConfig, point: GridPoint) -> Tuple[BeamList, BeamList]:
    """Learn L_F and L_W for the region of a grid point."""
    environment, region = config.scenario(point.rho)
    hybrid = config.hybrid_config(point.architecture, point.rf_chains)
    n_passages = None
    if hybrid.architecture != Architecture.FULL_DIGITAL:
        n_passages = config.alignment_passages_per_beam * codebook_for(hybrid, Side.TX).n_beams
    noise_power = None
    if config.alignment_snr_db is not None:
        noise_power = float(10.0 ** (-config.alignment_snr_db / 10.0))
    return build_beam_lists(
        environment,
        [region],
        hybrid,
        derived_rng(config.seed, STAGE_ALIGN, *point.alignment_key),
        n_passages=n_passages,
        mode=config.angles_mode,
        jitter_heading=config.heading_jitter,
        noise_power=noise_power,
        heading_threshold=config.heading_threshold,
    )


def setup_point(
    config: ExperimentConfig, point: GridPoint, tx_list: BeamList, rx_list: BeamList
) -> PointSetup:
    """Bind the learned beams of a grid point to its noise statistics."""
    environment, region = config.scenario(point.rho)
    hybrid = config.hybrid_config(point.architecture, point.rf_chains)
    center = VehiclePose(position=region.center, heading=region.heading)
    w_rf, _ = rx_list.lookup(center)
    noise = noise_after_bf(NoiseModel(), w_rf, hybrid.n_tx_rf, point.sigma_s_sq)
    return PointSetup(config, point, hybrid, environment, region, tx_list, rx_list, noise)


def draw_passage(setup: PointSetup, rng: np.random.Generator) -> Passage:
    """Draw a pose, look up its analog stages and fade the channel."""
    config = setup.config
    pose = sample_passage(setup.region, config.heading_jitter, rng)
    paths = geometry_to_paths(setup.environment, pose, config.angles_mode, setup.region)
    f_rf, region_index = setup.tx_list.lookup(pose)
    w_rf, _ = setup.rx_list.lookup(pose)
    H = draw_channel(paths, setup.hybrid.tx_geometry, setup.hybrid.rx_geometry, rng).H
    return Passage(compress_channel(H, f_rf, w_rf), f_rf, w_rf, region_index)


def _training_block(
    setup: PointSetup, passage: Passage, rng: np.random.Generator
) -> TrainingBlock:
    pilots = make_training(
        setup.hybrid.n_tx_rf, setup.pilot_length, np.sqrt(setup.noise.sigma_s_sq), rng
    )
    return draw_training_block(passage.h_tilde, pilots, setup.noise, rng)


def fit_point(setup: PointSetup) -> Dict[Tuple[str, int], SubspaceModel]:
    """Fit the requested low-rank models from L training passages.

    Returns:
        Models keyed by (estimator name, region index), ready for `mvlr.store.pack_models`.
    """
    config, point = setup.config, setup.point
    wanted = [estimator for estimator in config.estimators if estimator in LOW_RANK]
    if not wanted:
        return {}
    rng = derived_rng(config.seed, STAGE_FIT, point.index)
    blocks = [
        _training_block(setup, draw_passage(setup, rng), rng) for _ in range(point.passages)
    ]
    models = {}
    for estimator in wanted:
        fit = fit_js if estimator == Estimator.JS else fit_ds
        model = fit(blocks, setup.noise, config.rank_rule, setup.region)
        logger.info("Point %d: %s fitted with ranks %s", point.index, estimator.value, model.ranks)
        models[(estimator.value, 0)] = model
    return models


@dataclass(frozen=True)
class ResultRow:
    """One CSV row: a grid point evaluated with one estimator."""

    snr_db: float
    passages: int
    n_tx_rf: int
    n_rx_rf: int
    rho: float
    estimator: str
    architecture: str
    se_mean: float
    se_stderr: float
    mse_mean: float
    mse_stderr: float
    crlb: float
    mse_bound: float
    r_hat_mode: str
    trials: int
    seed: int

    @classmethod
    def header(cls) -> List[str]:
        """Column names in CSV order."""
        return [column.name for column in fields(cls)]

    def as_record(self) -> List[str]:
        """Formatted CSV values; floats use `.10g` so reruns print identical text."""
        return [
            f"{value:.10g}" if isinstance(value, float) else str(value)
            for value in astuple(self)
        ]


def _mean_and_stderr(samples: Sequence[float]) -> Tuple[float, float]:
    values = np.asarray(samples, dtype=np.float64)
    if values.size < 2:
        return float(values.mean()), 0.0
    return float(values.mean()), float(values.std(ddof=1) / np.sqrt(values.size))


def run_trial(
    setup: PointSetup, models: Dict[Tuple[str, int], SubspaceModel], trial: int
) -> Dict[Estimator, Tuple[float, float]]:
    """Return `{estimator: (spectral efficiency, squared error)}` for one test passage.

    All estimators see the same passage, pilots and noise, so their outcomes can be
    compared trial by trial.
    """
    config = setup.config
    rng = derived_rng(config.seed, STAGE_TEST, setup.point.index, trial)
    passage = draw_passage(setup, rng)
    block = _training_block(setup, passage, rng)
    truth = vec(passage.h_tilde)
    relative_noise = setup.noise.relative_q_tilde
    outcome = {}
    for estimator in config.estimators:
        if estimator == Estimator.PERFECT_CSI:
            estimate = truth
        elif estimator == Estimator.UML:
            estimate = uml_estimate(block)
        else:
            estimate = lr_estimate(models[(estimator.value, passage.region_index)], block)
        h_hat = unvec(estimate, setup.noise.n_rx_rf, setup.noise.n_tx_rf)
        design = design_link(h_hat, passage.f_rf, relative_noise, setup.hybrid.n_streams)
        outcome[estimator] = (
            spectral_efficiency(passage.h_tilde, design, relative_noise, setup.hybrid.n_streams),
            mse(estimate, truth),
        )
    return outcome


def _mse_bound(setup: PointSetup, estimator: Estimator, model: Optional[SubspaceModel]) -> float:
    if estimator == Estimator.PERFECT_CSI:
        return 0.0
    if estimator == Estimator.UML:
        return setup.noise.crlb
    center = setup.center_pose
    paths = geometry_to_paths(
        setup.environment, center, AnglesMode.FROZEN_AT_CENTER, setup.region
    )
    f_rf, _ = setup.tx_list.lookup(center)
    w_rf, _ = setup.rx_list.lookup(center)
    return mse_bound_lr(
        LOW_RANK[estimator],
        paths,
        setup.hybrid.tx_geometry,
        setup.hybrid.rx_geometry,
        f_rf,
        w_rf,
        setup.noise,
        model.ranks,
    )


def parallel_map(
    function: Callable[[Item], Result], items: Iterable[Item], threads: int
) -> List[Result]:
    """Map in input order, over a thread pool when `threads > 1`."""
    if threads <= 1:
        return [function(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as executor:
        return list(executor.map(function, items))


def evaluate_point(
    setup: PointSetup, models: Dict[Tuple[str, int], SubspaceModel], threads: int = 1
) -> List[ResultRow]:
    """Evaluate every estimator over fresh test passages of one grid point."""
    config, point = setup.config, setup.point
    outcomes = parallel_map(
        lambda trial: run_trial(setup, models, trial), range(config.trials), threads
    )
    rows = []
    for estimator in config.estimators:
        model = models.get((estimator.value, 0))
        se_mean, se_stderr = _mean_and_stderr([outcome[estimator][0] for outcome in outcomes])
        mse_mean, mse_stderr = _mean_and_stderr([outcome[estimator][1] for outcome in outcomes])
        rows.append(
            ResultRow(
                snr_db=float(point.snr_db),
                passages=point.passages,
                n_tx_rf=setup.hybrid.n_tx_rf,
                n_rx_rf=setup.hybrid.n_rx_rf,
                rho=float(point.rho),
                estimator=estimator.value,
                architecture=point.architecture.value,
                se_mean=se_mean,
                se_stderr=se_stderr,
                mse_mean=mse_mean,
                mse_stderr=mse_stderr,
                crlb=setup.noise.crlb,
                mse_bound=_mse_bound(setup, estimator, model),
                r_hat_mode="x".join(str(rank) for rank in model.ranks) if model else "",
                trials=config.trials,
                seed=config.seed,
            )
        )
    logger.info(
        "Point %d (%s, %s, rho=%g, %g dB, L=%d) evaluated over %d trials",
        point.index,
        point.architecture.value,
        point.rf_chains,
        point.rho,
        point.snr_db,
        point.passages,
        config.trials,
    )
    return rows


def run_point(
    config: ExperimentConfig, point: GridPoint, beam_lists: Tuple[BeamList, BeamList]
) -> List[ResultRow]:
    """Fit and evaluate one grid point with already learned beams."""
    setup = setup_point(config, point, *beam_lists)
    return evaluate_point(setup, fit_point(setup))


def run_sweep(config: ExperimentConfig) -> List[ResultRow]:
    """Run the whole grid and return rows sorted by grid index, then estimator order.

    Alignment runs once per (architecture, RF-chain pair, rho) and is shared by every
    SNR and passage count at that position.
    """
    points = grid_points(config)
    representatives: Dict[Tuple[int, int, int], GridPoint] = {}
    for point in points:
        representatives.setdefault(point.alignment_key, point)
    logger.info(
        "Sweeping %d grid points with %d alignments on %d threads",
        len(points),
        len(representatives),
        config.threads,
    )
    aligned = parallel_map(
        lambda point: align_point(config, point), representatives.values(), config.threads
    )
    beam_lists = dict(zip(representatives.keys(), aligned))
    per_point = parallel_map(
        lambda point: run_point(config, point, beam_lists[point.alignment_key]),
        points,
        config.threads,
    )
    return [row for rows in per_point for row in rows]


def write_csv(rows: Sequence[ResultRow], path: Union[str, Path]) -> None:
    """Write RFC 4180 CSV (CRLF line endings, UTF-8, header row)."""
    with open(path, "w", encoding="utf-8", newline="") as stream:
        writer = csv.writer(stream, lineterminator="\r\n")
        writer.writerow(ResultRow.header())
        writer.writerows(row.as_record() for row in rows)
    logger.info("Wrote %d rows to %s", len(rows), path)
