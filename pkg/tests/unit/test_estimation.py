# Copyright 2023 Canonical Ltd.
# See LICENSE file for licensing details.

import logging

import numpy as np
import pytest
import scipy.linalg

from mvlr.arrays import UraGeometry
from mvlr.channel import PathSet, draw_channel
from mvlr.errors import DegenerateInputError, InvalidInputError
from mvlr.estimation import (
    NoiseFloor,
    NoiseModel,
    RankRule,
    SubspaceKind,
    TrainingBlock,
    asymptotic_model,
    draw_training_block,
    estimate_rank,
    fit_ds,
    fit_js,
    lr_estimate,
    make_training,
    noise_after_bf,
    uml_estimate,
)
from mvlr.numerics import vec

TX = UraGeometry(n_az=2, n_el=2)
RX = UraGeometry(n_az=4, n_el=2)


def random_complex(rng, *shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


def colored_noise(rng, n_antennas=8, n_rx_rf=3, n_tx_rf=2, sigma_s_sq=2.0):
    factor = random_complex(rng, n_antennas, n_antennas)
    q_n = factor @ factor.conj().T / n_antennas + 0.5 * np.eye(n_antennas)
    w_rf = random_complex(rng, n_antennas, n_rx_rf)
    return noise_after_bf(NoiseModel(q_n=q_n), w_rf, n_tx_rf, sigma_s_sq)


def random_model(rng, noise):
    dimension = noise.dimension
    if rng.uniform() < 0.5:
        factor = random_complex(rng, dimension, dimension)
        rank = int(rng.integers(1, dimension + 1))
        return asymptotic_model(
            SubspaceKind.JOINT, (factor @ factor.conj().T,), noise, (rank,)
        )
    tx, rx = random_complex(rng, noise.n_tx_rf, 4), random_complex(rng, noise.n_rx_rf, 4)
    ranks = (int(rng.integers(1, noise.n_tx_rf + 1)), int(rng.integers(1, noise.n_rx_rf + 1)))
    return asymptotic_model(
        SubspaceKind.DISJOINT, (tx @ tx.conj().T, rx @ rx.conj().T), noise, ranks
    )


@pytest.fixture
def rng():
    return np.random.default_rng(17)


@pytest.fixture
def paths():
    return PathSet(
        aod=((0.4, 0.2), (-0.6, -0.1), (1.2, 0.5)),
        aoa=((-0.3, 0.1), (0.7, -0.4), (-1.1, 0.2)),
        powers=(0.5, 0.3, 0.2),
    )


def test_training_has_scaled_identity_gram(rng):
    pilots = make_training(3, 5, 2.0, rng)
    assert pilots.shape == (3, 5)
    assert np.allclose(pilots @ pilots.conj().T, 4.0 * np.eye(3), atol=1e-12)


def test_pilots_of_different_vehicles_are_uncorrelated(rng):
    cross = np.mean(
        [
            make_training(2, 4, 1.0, rng) @ make_training(2, 4, 1.0, rng).conj().T
            for _ in range(2000)
        ],
        axis=0,
    )
    assert np.max(np.abs(cross)) < 0.05


def test_training_needs_enough_symbols(rng):
    with pytest.raises(InvalidInputError):
        make_training(4, 3, 1.0, rng)


def test_noiseless_uml_is_exact(rng):
    h_tilde = random_complex(rng, 3, 2)
    pilots = make_training(2, 4, 1.5, rng)
    assert np.allclose(uml_estimate(TrainingBlock(pilots, h_tilde @ pilots)), vec(h_tilde))


def test_uml_rejects_singular_pilots():
    pilots = np.array([[1.0, 1.0], [0.0, 0.0]])
    with pytest.raises(InvalidInputError):
        uml_estimate(TrainingBlock(pilots, np.ones((3, 2))))


def test_uml_error_power_meets_crlb(rng):
    noise = colored_noise(rng)
    pilots = make_training(noise.n_tx_rf, 4, np.sqrt(noise.sigma_s_sq), rng)
    zero = np.zeros((noise.n_rx_rf, noise.n_tx_rf))
    errors = [
        np.linalg.norm(uml_estimate(draw_training_block(zero, pilots, noise, rng))) ** 2
        for _ in range(3000)
    ]
    assert np.mean(errors) == pytest.approx(noise.crlb, rel=0.1)
    assert noise.crlb == pytest.approx(np.trace(noise.covariance).real)


def test_whitening_round_trip(rng):
    noise = colored_noise(rng)
    h = random_complex(rng, noise.dimension)
    half, inverse_half = noise.factors
    assert np.allclose(noise.whiten(h), inverse_half @ h)
    assert np.allclose(noise.dewhiten(noise.whiten(h)), h)
    assert np.allclose(half @ half.conj().T, noise.covariance, atol=1e-10)
    assert np.allclose(noise.relative_q_tilde, noise.q_tilde / 2.0)


def test_noise_after_bf_rejects_bad_inputs(rng):
    w_rf = random_complex(rng, 8, 3)
    with pytest.raises(InvalidInputError):
        noise_after_bf(NoiseModel(), w_rf, 2, 0.0)
    with pytest.raises(InvalidInputError):
        noise_after_bf(NoiseModel(q_n=np.eye(4)), w_rf, 2, 1.0)
    with pytest.raises(InvalidInputError):
        noise_after_bf(NoiseModel(q_n=-np.eye(8)), w_rf, 2, 1.0)


@pytest.mark.parametrize(
    "eigenvalues, threshold, expected",
    [
        ([3.0, 1.0, 0.0, 0.0], 0.75, 1),
        ([3.0, 1.0, 0.0, 0.0], 0.999, 2),
        ([1.0, 1.0], 1.0, 2),
        ([0.0, 2.0, -1e-16], 0.5, 1),
    ],
)
def test_estimate_rank(eigenvalues, threshold, expected):
    assert estimate_rank(eigenvalues, threshold) == expected


def test_estimate_rank_rejects_zero_spectrum():
    with pytest.raises(DegenerateInputError):
        estimate_rank([0.0, 0.0])


def test_rank_rule_floors():
    assert RankRule().floor(4, 16) == 0.0
    assert RankRule(noise_floor=NoiseFloor.UNIT).floor(4, 16, 2.0) == 2.0
    assert RankRule(noise_floor=NoiseFloor.EDGE).floor(4, 16) == pytest.approx(2.25)
    assert RankRule(noise_floor=NoiseFloor.UNIT).apply([3.0, 1.5, 1.0, 1.0], 100) == 2


def test_rank_rule_falls_back_to_one_below_the_floor(caplog):
    rule = RankRule(noise_floor=NoiseFloor.EDGE)
    with caplog.at_level(logging.WARNING, logger="mvlr.estimation"):
        assert rule.apply([1.0, 0.5], 2) == 1
    assert "falling back to rank 1" in caplog.text


def test_noiseless_fits_recover_the_path_span(rng, paths):
    noise = noise_after_bf(NoiseModel(), np.eye(RX.n_antennas), TX.n_antennas, 1.0)
    rule = RankRule(threshold=1 - 1e-9)
    blocks = []
    for _ in range(20):
        pilots = make_training(TX.n_antennas, TX.n_antennas, 1.0, rng)
        h = draw_channel(paths, TX, RX, rng).H
        blocks.append(TrainingBlock(pilots, h @ pilots))

    joint = fit_js(blocks, noise, rule)
    disjoint = fit_ds(blocks, noise, rule)
    assert joint.ranks == (3,)
    assert disjoint.ranks == (3, 3)
    assert disjoint.rank == 9

    pilots = make_training(TX.n_antennas, TX.n_antennas, 1.0, rng)
    h = draw_channel(paths, TX, RX, rng).H
    fresh = TrainingBlock(pilots, h @ pilots)
    for model in (joint, disjoint):
        residual = lr_estimate(model, fresh) - vec(h)
        assert np.linalg.norm(residual) < 1e-8 * np.linalg.norm(h)


def test_fit_rejects_empty_block_list(rng):
    with pytest.raises(InvalidInputError):
        fit_js([], colored_noise(rng))


def test_lr_estimate_rejects_mismatched_block(rng):
    noise = colored_noise(rng)
    model = random_model(rng, noise)
    pilots = make_training(3, 3, 1.0, rng)
    with pytest.raises(InvalidInputError):
        lr_estimate(model, TrainingBlock(pilots, np.ones((3, 3))))


def test_asymptotic_joint_model_keeps_leading_eigenvectors(rng):
    noise = noise_after_bf(NoiseModel(), np.eye(3), 2, 1.0)
    model = asymptotic_model(
        SubspaceKind.JOINT, (np.diag([1.0, 5.0, 0.0, 3.0, 0.0, 0.0]),), noise, (2,)
    )
    assert np.allclose(np.diag(model.whitened_projector()).real, [0, 1, 0, 1, 0, 0])


def test_projectors_are_consistent(rng):
    for _ in range(50):
        noise = colored_noise(rng)
        model = random_model(rng, noise)
        whitened = model.whitened_projector()
        projector = model.projector()
        h = random_complex(rng, noise.dimension)

        assert np.allclose(whitened, whitened.conj().T, atol=1e-10)
        assert np.allclose(whitened @ whitened, whitened, atol=1e-10)
        assert np.trace(whitened).real == pytest.approx(model.rank)
        assert np.allclose(projector @ projector, projector, atol=1e-8)
        assert np.allclose(model.apply(h), projector @ h, atol=1e-8)
        expected_trace = np.trace(projector @ noise.covariance @ projector.conj().T).real
        assert model.noise_trace() == pytest.approx(expected_trace, rel=1e-6)


def test_whitened_projection_matches_oblique_projector(rng):
    for _ in range(10):
        noise = colored_noise(rng)
        model = random_model(rng, noise)
        root = scipy.linalg.sqrtm(noise.covariance)
        oblique = root @ model.whitened_projector() @ np.linalg.inv(root)
        h = random_complex(rng, noise.dimension)
        projected = noise.dewhiten(model.whitened_projector() @ noise.whiten(h))
        assert np.allclose(projected, oblique @ h, atol=1e-8)
        assert np.allclose(model.apply(h), oblique @ h, atol=1e-8)


@pytest.mark.parametrize("n_paths", [1, 2, 3])
def test_disjoint_model_keeps_more_noise_than_joint_model(rng, n_paths):
    noise = colored_noise(rng, n_rx_rf=4, n_tx_rf=3)
    channels = [
        np.outer(random_complex(rng, 4), random_complex(rng, 3)) for _ in range(n_paths)
    ]
    correlation = sum(
        power * np.outer(vec(x), vec(x).conj())
        for power, x in zip(rng.uniform(0.2, 1.0, n_paths), channels)
    )
    joint = asymptotic_model(SubspaceKind.JOINT, (correlation,), noise, (n_paths,))
    disjoint = asymptotic_model(
        SubspaceKind.DISJOINT, (correlation,), noise, (n_paths, n_paths)
    )
    for x in channels:
        h = noise.dewhiten(vec(x))
        assert np.allclose(joint.apply(h), h, atol=1e-8)
        assert np.allclose(disjoint.apply(h), h, atol=1e-8)
    assert disjoint.noise_trace() >= joint.noise_trace() - 1e-9
