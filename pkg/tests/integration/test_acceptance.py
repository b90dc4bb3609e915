# Copyright 2023 Canonical Ltd.
# See LICENSE file for licensing details.

"""Monte Carlo acceptance sweeps on the synthetic presets.

These runs take minutes; `tox -e integration` runs them with live logging.
"""
import logging

import numpy as np
import pytest

from experiment import Estimator, load_config
from sweep import (
    align_point,
    fit_point,
    grid_points,
    parallel_map,
    run_sweep,
    run_trial,
    setup_point,
)

logger = logging.getLogger(__name__)

pytestmark = pytest.mark.slow

THREADS = 4


def mean_and_stderr(values):
    values = np.asarray(values, dtype=np.float64)
    return float(values.mean()), float(values.std(ddof=1) / np.sqrt(values.size))


def paired_outcomes(config):
    """Per-trial (SE, MSE) of every estimator at every grid point, sharing test passages."""
    results = []
    for point in grid_points(config):
        setup = setup_point(config, point, *align_point(config, point))
        models = fit_point(setup)
        trials = parallel_map(
            lambda trial: run_trial(setup, models, trial), range(config.trials), THREADS
        )
        outcome = {
            estimator: np.array([trial[estimator] for trial in trials])
            for estimator in config.estimators
        }
        results.append((point, outcome))
    return results


def test_uml_error_meets_crlb():
    config = load_config(
        overrides={
            "estimators": ["uml"],
            "snr-db": [-20.0, -10.0, 0.0],
            "trials": 10000,
            "threads": 3,
        }
    )
    for row in run_sweep(config):
        logger.info("SNR %g dB: MSE %.4g, CRLB %.4g", row.snr_db, row.mse_mean, row.crlb)
        assert row.mse_mean == pytest.approx(row.crlb, rel=0.03)


@pytest.mark.parametrize("estimator, passages", [("js", 1000), ("ds", 100)])
def test_low_rank_error_converges_to_bound(estimator, passages):
    config = load_config(
        overrides={
            "estimators": [estimator],
            "snr-db": [-10.0],
            "passages": [passages],
            "trials": 2000,
        }
    )
    (row,) = run_sweep(config)
    logger.info(
        "%s at L=%d: MSE %.4g, bound %.4g, ranks %s",
        estimator,
        passages,
        row.mse_mean,
        row.mse_bound,
        row.r_hat_mode,
    )
    assert row.mse_mean == pytest.approx(row.mse_bound, rel=0.15)


def test_estimator_ordering_on_urban_preset():
    config = load_config(
        overrides={
            "architectures": ["fully-connected", "sub-connected"],
            "snr-db": [-20.0, -15.0, -10.0, -5.0, 0.0, 5.0, 10.0],
            "passages": [1000],
            "trials": 500,
        }
    )
    order = [Estimator.PERFECT_CSI, Estimator.JS, Estimator.DS, Estimator.UML]
    for point, outcome in paired_outcomes(config):
        spectral = {estimator: mean_and_stderr(outcome[estimator][:, 0]) for estimator in order}
        logger.info(
            "%s %g dB: %s",
            point.architecture.value,
            point.snr_db,
            {estimator.value: round(value[0], 3) for estimator, value in spectral.items()},
        )
        for better, worse in zip(order, order[1:]):
            (high, high_err), (low, low_err) = spectral[better], spectral[worse]
            assert high >= low - (high_err + low_err)
        if point.snr_db <= -5:
            gap, gap_err = mean_and_stderr(
                outcome[Estimator.JS][:, 0] - outcome[Estimator.UML][:, 0]
            )
            assert gap - 1.96 * gap_err > 0


def test_single_path_low_rank_is_near_optimal():
    config = load_config(
        overrides={"preset": "s2", "snr-db": [-10.0, 0.0, 10.0], "trials": 500}
    )
    for point, outcome in paired_outcomes(config):
        perfect = outcome[Estimator.PERFECT_CSI][:, 0].mean()
        for estimator in (Estimator.JS, Estimator.DS):
            assert perfect - outcome[estimator][:, 0].mean() <= 0.2, (point, estimator)


def test_spectral_efficiency_degrades_with_region_size():
    config = load_config(
        overrides={
            "preset": "s2",
            "angles-mode": "per-pose",
            "architectures": ["fully-connected", "sub-connected"],
            "rho": [0.5, 1.0, 2.0, 4.0],
            "snr-db": [-5.0],
            "passages": [500],
            "estimators": ["js"],
            "trials": 1000,
            "threads": THREADS,
        }
    )
    rows = run_sweep(config)
    degradation = {}
    for architecture in config.architectures:
        curve = [row for row in rows if row.architecture == architecture.value]
        assert [row.rho for row in curve] == [0.5, 1.0, 2.0, 4.0]
        logger.info("%s: %s", architecture.value, [round(row.se_mean, 3) for row in curve])
        for wider, narrower in zip(curve[1:], curve):
            assert wider.se_mean <= narrower.se_mean + wider.se_stderr + narrower.se_stderr
        degradation[architecture] = curve[0].se_mean - curve[-1].se_mean
    fully, sub = config.architectures
    assert degradation[fully] > degradation[sub]
