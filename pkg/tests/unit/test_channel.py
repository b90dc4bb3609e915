# Copyright 2023 Canonical Ltd.
# See LICENSE file for licensing details.

import numpy as np
import pytest
from pydantic import ValidationError

from mvlr.arrays import UraGeometry, dft_codebook_2d, grid_direction
from mvlr.channel import (
    PathSet,
    assemble_channel,
    compress_channel,
    compressed_correlation,
    compressed_side_correlations,
    compressed_transfer,
    diversity_orders,
    draw_amplitudes,
    draw_channel,
    partial_correlations,
    steering_matrices,
)
from mvlr.errors import InvalidInputError
from mvlr.numerics import vec

TX = UraGeometry(n_az=4, n_el=2)
RX = UraGeometry(n_az=4, n_el=4)


@pytest.fixture
def paths():
    return PathSet(
        aod=((0.3, 0.1), (-0.7, -0.2), (1.1, 0.4)),
        aoa=((-0.2, 0.0), (0.5, 0.3), (-1.0, -0.5)),
        powers=(0.5, 0.3, 0.2),
    )


@pytest.fixture
def stages(paths):
    # orthonormal bases of the path directions keep all three paths after compression
    a_t, a_r = steering_matrices(paths, TX, RX)
    extra = dft_codebook_2d(4, 4).matrix[:, [5]]
    f_rf = np.linalg.qr(a_t.conj())[0]
    w_rf = np.linalg.qr(np.column_stack([a_r, extra]))[0]
    return f_rf, w_rf


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(aod=((0.0, 0.0),), aoa=((0.0, 0.0),), powers=(0.9,)),
        dict(aod=((0.0, 0.0),), aoa=(), powers=(1.0,)),
        dict(aod=(), aoa=(), powers=()),
        dict(aod=((0.0, 0.0), (0.1, 0.0)), aoa=((0.0, 0.0), (0.1, 0.0)), powers=(1.5, -0.5)),
    ],
)
def test_path_set_validation(kwargs):
    with pytest.raises(ValidationError):
        PathSet(**kwargs)


def test_assemble_channel_single_path():
    paths = PathSet(aod=((0.2, 0.1),), aoa=((-0.4, 0.3),), powers=(1.0,))
    a_t, a_r = steering_matrices(paths, TX, RX)
    H = assemble_channel(paths, [2.0 - 1.0j], TX, RX)
    assert np.allclose(H, (2.0 - 1.0j) * np.outer(a_r[:, 0], a_t[:, 0]))


def test_assemble_channel_rejects_amplitude_count(paths):
    with pytest.raises(InvalidInputError):
        assemble_channel(paths, [1.0], TX, RX)


def test_draw_channel_is_normalised(paths):
    rng = np.random.default_rng(11)
    energies = [
        np.linalg.norm(draw_channel(paths, TX, RX, rng).H) ** 2 for _ in range(4000)
    ]
    assert np.mean(energies) == pytest.approx(TX.n_antennas * RX.n_antennas, rel=0.1)


def test_compress_channel_rejects_mismatched_stages(stages):
    f_rf, w_rf = stages
    with pytest.raises(InvalidInputError):
        compress_channel(np.ones((16, 8)), w_rf, f_rf)


def test_transfer_maps_amplitudes_to_compressed_channel(paths, stages):
    f_rf, w_rf = stages
    amplitudes = np.array([1.0 + 0.5j, -0.3j, 0.7])
    compressed = compress_channel(assemble_channel(paths, amplitudes, TX, RX), f_rf, w_rf)
    transfer = compressed_transfer(paths, TX, RX, f_rf, w_rf)
    assert np.allclose(vec(compressed), transfer @ amplitudes)


def test_side_correlations_are_partial_traces(paths, stages):
    f_rf, w_rf = stages
    _, correlation = compressed_correlation(paths, TX, RX, f_rf, w_rf)
    tx_partial, rx_partial = partial_correlations(correlation, 3, 4)
    tx_side, rx_side = compressed_side_correlations(paths, TX, RX, f_rf, w_rf)
    assert np.allclose(tx_partial, tx_side, atol=1e-10)
    assert np.allclose(rx_partial, rx_side, atol=1e-10)


def test_partial_correlations_match_sample_moments():
    rng = np.random.default_rng(5)
    samples = [rng.standard_normal((4, 3)) + 1j * rng.standard_normal((4, 3)) for _ in range(6)]
    correlation = sum(np.outer(vec(x), vec(x).conj()) for x in samples)
    tx_partial, rx_partial = partial_correlations(correlation, 3, 4)
    assert np.allclose(tx_partial, sum(x.conj().T @ x for x in samples))
    assert np.allclose(rx_partial, sum(x @ x.conj().T for x in samples))


def test_partial_correlations_rejects_wrong_shape():
    with pytest.raises(InvalidInputError):
        partial_correlations(np.eye(6), 2, 4)


def test_diversity_orders_of_distinct_paths(paths, stages):
    orders = diversity_orders(paths, TX, RX, *stages)
    assert (orders.r_t, orders.r_r, orders.r) == (3, 3, 3)
    assert orders.compressed_r == 3
    assert orders.is_lossless(3, 4)


@pytest.mark.parametrize("seed", range(8))
def test_compression_never_raises_diversity_orders(paths, seed):
    rng = np.random.default_rng(seed)
    n_tx_rf, n_rx_rf = rng.integers(1, 4), rng.integers(1, 5)
    f_rf = dft_codebook_2d(4, 2).matrix[:, rng.choice(8, size=n_tx_rf, replace=False)]
    w_rf = dft_codebook_2d(4, 4).matrix[:, rng.choice(16, size=n_rx_rf, replace=False)]
    orders = diversity_orders(paths, TX, RX, f_rf, w_rf)
    assert orders.compressed_r_t <= min(n_tx_rf, orders.r_t)
    assert orders.compressed_r_r <= min(n_rx_rf, orders.r_r)
    assert orders.compressed_r <= min(orders.compressed_r_t * orders.compressed_r_r, orders.r)


def test_diversity_orders_without_stages(paths):
    orders = diversity_orders(paths, TX, RX)
    assert orders.compressed_r_t is None
    assert orders.compressed_r is None
    assert not orders.is_lossless(4, 4)


def test_on_grid_paths_are_compressed_without_loss():
    tx, rx = UraGeometry(n_az=4, n_el=4), UraGeometry(n_az=4, n_el=4)
    codebook = dft_codebook_2d(4, 4).matrix
    # column k of a 4x4 DFT codebook is the conjugate of column ((-k1) % 4) * 4 + (-k2) % 4
    tx_indices, conjugate_indices, rx_indices = [0, 1, 4], [0, 3, 12], [4, 0, 1]
    paths = PathSet(
        aod=tuple(grid_direction(4, 4, index) for index in tx_indices),
        aoa=tuple(grid_direction(4, 4, index) for index in rx_indices),
        powers=(0.4, 0.35, 0.25),
    )
    f_rf = codebook[:, conjugate_indices + [5]]
    w_rf = codebook[:, rx_indices + [5]]
    orders = diversity_orders(paths, tx, rx, f_rf, w_rf)
    assert (orders.r_t, orders.compressed_r_t, orders.r_r, orders.compressed_r_r) == (3, 3, 3, 3)
    assert orders.is_lossless(4, 4)
    assert not orders.is_lossless(2, 4)


def test_amplitudes_are_uncorrelated_with_path_variances():
    rng = np.random.default_rng(13)
    paths = PathSet(
        aod=((0.0, 0.0), (0.5, 0.0)), aoa=((0.0, 0.0), (-0.5, 0.0)), powers=(0.5, 0.5)
    )
    draws = np.array([draw_amplitudes(paths, rng) for _ in range(100000)])
    assert np.allclose(np.mean(np.abs(draws) ** 2, axis=0), 0.5, rtol=0.02)
    assert abs(np.mean(draws[:, 0] * draws[:, 1].conj())) < 0.02
