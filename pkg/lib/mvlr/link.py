# Copyright 2023 Canonical Ltd.
# See LICENSE file for licensing details.

"""Digital precoder/combiner design and link metrics.

Noise covariances passed to this module are expressed relative to the transmit power,
i.e. `Q~ / sigma_s^2`, so that the designed combiner and the spectral efficiency see the
per-antenna SNR directly.
"""
import logging
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
import scipy.linalg

from mvlr.arrays import UraGeometry
from mvlr.channel import (
    PathSet,
    compressed_correlation,
    compressed_side_correlations,
    compressed_transfer,
    diversity_orders,
)
from mvlr.errors import InvalidInputError
from mvlr.estimation import NoiseAfterBf, SubspaceKind, asymptotic_model
from mvlr.numerics import ComplexMatrix, as_matrix, hermitian_eig, numerical_rank

SE_RIDGE_FACTOR = 1e-12

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class LinkDesign:
    """Digital precoder F_BB (n_tx_rf x N_S) and combiner W_BB (n_rx_rf x N_S)."""

    f_bb: ComplexMatrix
    w_bb: ComplexMatrix


def digital_precoder(h_hat, f_rf, n_streams: int) -> ComplexMatrix:
    """Return the top `n_streams` eigenvectors of `H^H H`, scaled to `||F_RF F_BB||^2 = N_S`.

    Streams beyond the numerical rank of the estimate carry no power and are left as
    zero columns.

    Raises:
        InvalidInputError: if `n_streams` exceeds the channel dimensions.
    """
    h_hat = as_matrix(h_hat, "H_hat")
    f_rf = as_matrix(f_rf, "F_RF")
    if not 1 <= n_streams <= min(h_hat.shape):
        raise InvalidInputError(f"Cannot send {n_streams} streams over a {h_hat.shape} channel.")
    _, eigenvectors = hermitian_eig(h_hat.conj().T @ h_hat)
    precoder = eigenvectors[:, :n_streams].copy()

    rank = numerical_rank(h_hat)
    if rank < n_streams:
        logger.warning(
            "Estimated channel has rank %d < %d streams; zero-padding the precoder",
            rank,
            n_streams,
        )
        precoder[:, rank:] = 0
    power = np.linalg.norm(f_rf @ precoder) ** 2
    if power == 0:
        return precoder
    return precoder * np.sqrt(n_streams / power)


def mmse_combiner(h_hat, f_bb, q_tilde, n_streams: int) -> ComplexMatrix:
    """Return W_BB with `W_BB^H = (A^H Q^-1 A + I/N_S)^-1 A^H Q^-1` and `A = H_hat F_BB`.

    Raises:
        InvalidInputError: if the noise covariance is singular.
    """
    q_tilde = as_matrix(q_tilde, "Q~")
    if numerical_rank(q_tilde) < q_tilde.shape[0]:
        raise InvalidInputError("The combined noise covariance is singular.")
    effective = as_matrix(h_hat, "H_hat") @ as_matrix(f_bb, "F_BB")
    whitened = scipy.linalg.solve(q_tilde, effective, assume_a="her")
    gram = effective.conj().T @ whitened + np.eye(n_streams) / n_streams
    combiner_h = scipy.linalg.solve(gram, whitened.conj().T)
    return combiner_h.conj().T


def design_link(h_hat, f_rf, q_tilde, n_streams: int) -> LinkDesign:
    """Design precoder and combiner from a compressed-channel estimate."""
    f_bb = digital_precoder(h_hat, f_rf, n_streams)
    return LinkDesign(f_bb, mmse_combiner(h_hat, f_bb, q_tilde, n_streams))


def spectral_efficiency(h_true, design: LinkDesign, q_tilde, n_streams: int) -> float:
    """Return `log2 det(I + Q_eff^-1 H_eff H_eff^H / N_S)` in bits/s/Hz.

    The true channel is combined with the designed (possibly mismatched) digital stages.
    """
    w_h = design.w_bb.conj().T
    h_eff = w_h @ as_matrix(h_true, "H~") @ design.f_bb
    q_eff = w_h @ as_matrix(q_tilde, "Q~") @ design.w_bb
    trace = float(np.trace(q_eff).real)
    if trace <= 0:
        return 0.0
    q_eff = q_eff + SE_RIDGE_FACTOR * trace / n_streams * np.eye(q_eff.shape[0])
    _, log_total = np.linalg.slogdet(q_eff + h_eff @ h_eff.conj().T / n_streams)
    _, log_noise = np.linalg.slogdet(q_eff)
    return max(float((log_total - log_noise) / np.log(2.0)), 0.0)


def mse(h_hat, h_true) -> float:
    """Squared estimation error of one trial."""
    h_hat = np.asarray(h_hat).reshape(-1)
    h_true = np.asarray(h_true).reshape(-1)
    if h_hat.size != h_true.size:
        raise InvalidInputError(
            f"Cannot compare estimates of length {h_hat.size} and {h_true.size}."
        )
    return float(np.sum(np.abs(h_hat - h_true) ** 2))


def crlb(noise: NoiseAfterBf) -> float:
    """The U-ML error floor `tr(C)`."""
    return noise.crlb


def whitened_correlations(
    kind: SubspaceKind,
    paths: PathSet,
    tx: UraGeometry,
    rx: UraGeometry,
    f_rf,
    w_rf,
    noise: NoiseAfterBf,
) -> Tuple[ComplexMatrix, ...]:
    """Noise-free correlations of the whitened compressed channel.

    Whitening left-multiplies the compressed channel by `sigma_s Q~^{-1/2}`, which is the
    same as combining with `sigma_s W_RF Q~^{-1/2}`.
    """
    sigma_s = np.sqrt(noise.sigma_s_sq)
    whitening_combiner = sigma_s * as_matrix(w_rf, "W_RF") @ noise.q_inv_half
    if kind == SubspaceKind.JOINT:
        _, correlation = compressed_correlation(paths, tx, rx, f_rf, whitening_combiner)
        return (correlation,)
    return compressed_side_correlations(paths, tx, rx, f_rf, whitening_combiner)


def mse_bound_lr(
    kind: SubspaceKind,
    paths: PathSet,
    tx: UraGeometry,
    rx: UraGeometry,
    f_rf,
    w_rf,
    noise: NoiseAfterBf,
    fitted_ranks: Sequence[int],
    true_ranks: Optional[Sequence[int]] = None,
) -> float:
    """Asymptotic MSE of a low-rank estimator fitted at `fitted_ranks`.

    The bound adds the noise that survives the projection, `tr(Pi C Pi^H)`, to the
    channel energy lost to rank misparameterization, `tr(dPi R dPi^H)` with
    `dPi = Pi(true rank) - Pi(fitted rank)`. Both projectors come from the analytic
    correlation of the region's path set.

    Args:
        kind: joint or disjoint estimator.
        paths: the true path set (simulation-only diagnostic).
        tx: transmit array.
        rx: receive array.
        f_rf: analog precoder.
        w_rf: analog combiner.
        noise: whitener and noise statistics at baseband.
        fitted_ranks: `(r,)` or `(r_t, r_r)` estimated by the fit.
        true_ranks: compressed diversity orders; computed from the geometry when omitted.
    """
    if true_ranks is None:
        orders = diversity_orders(paths, tx, rx, f_rf, w_rf)
        if kind == SubspaceKind.JOINT:
            true_ranks = (orders.compressed_r,)
        else:
            true_ranks = (orders.compressed_r_t, orders.compressed_r_r)
    correlations = whitened_correlations(kind, paths, tx, rx, f_rf, w_rf, noise)
    fitted = asymptotic_model(kind, correlations, noise, tuple(fitted_ranks))
    exact = asymptotic_model(kind, correlations, noise, tuple(true_ranks))

    transfer = compressed_transfer(paths, tx, rx, f_rf, w_rf)
    lost = 0.0
    for power, column in zip(paths.powers, transfer.T):
        lost += power * float(np.sum(np.abs(exact.apply(column) - fitted.apply(column)) ** 2))
    return fitted.noise_trace() + lost
