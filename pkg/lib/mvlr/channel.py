# Copyright 2023 Canonical Ltd.
# See LICENSE file for licensing details.

"""Sparse multipath channels seen through analog beamforming stages.

A `PathSet` holds the spatial features that stay fixed inside a region (angles and
powers); every passage draws fresh WSSUS amplitudes on top of it. The channel is
`H = A_R diag(alpha) A_T^T`, normalised so that `E[||H||_F^2] = N_T * N_R`.
"""
import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, model_validator

from mvlr.arrays import UraGeometry, steering_vector
from mvlr.errors import InvalidInputError
from mvlr.numerics import ComplexMatrix, as_matrix, khatri_rao, numerical_rank

POWER_SUM_TOLERANCE = 1e-12

Direction = Tuple[float, float]

logger = logging.getLogger(__name__)


class PathSet(BaseModel):
    """Invariant spatial features of one MV region.

    Attributes:
        aod: (azimuth, elevation) departure direction of every path at the vehicle.
        aoa: (azimuth, elevation) arrival direction of every path at the base station.
        powers: average path powers, positive and summing to one.
    """

    model_config = ConfigDict(frozen=True)

    aod: Tuple[Direction, ...]
    aoa: Tuple[Direction, ...]
    powers: Tuple[float, ...]

    @model_validator(mode="after")
    def _check_paths(self) -> "PathSet":
        if not self.powers:
            raise ValueError("a path set needs at least one path")
        if not len(self.aod) == len(self.aoa) == len(self.powers):
            raise ValueError(
                f"got {len(self.aod)} AoDs, {len(self.aoa)} AoAs and {len(self.powers)} powers"
            )
        if min(self.powers) <= 0:
            raise ValueError("path powers must be positive")
        if abs(sum(self.powers) - 1.0) > POWER_SUM_TOLERANCE:
            raise ValueError(f"path powers sum to {sum(self.powers)!r}, not 1")
        return self

    @property
    def count(self) -> int:
        """Number of paths P."""
        return len(self.powers)

    @property
    def power_matrix(self) -> np.ndarray:
        """Diagonal matrix of path powers."""
        return np.diag(self.powers)


@dataclass(frozen=True)
class ChannelRealization:
    """One block-fading draw."""

    amplitudes: np.ndarray
    H: ComplexMatrix


def draw_amplitudes(paths: PathSet, rng: np.random.Generator) -> np.ndarray:
    """Draw independent CN(0, P_p) path amplitudes."""
    scale = np.sqrt(np.asarray(paths.powers) / 2.0)
    return scale * (rng.standard_normal(paths.count) + 1j * rng.standard_normal(paths.count))


def steering_matrices(
    paths: PathSet, tx: UraGeometry, rx: UraGeometry
) -> Tuple[ComplexMatrix, ComplexMatrix]:
    """Return `(A_T, A_R)`, one steering vector per path in each column."""
    a_t = np.column_stack([steering_vector(tx, *direction) for direction in paths.aod])
    a_r = np.column_stack([steering_vector(rx, *direction) for direction in paths.aoa])
    return a_t, a_r


def assemble_channel(
    paths: PathSet, amplitudes, tx: UraGeometry, rx: UraGeometry
) -> ComplexMatrix:
    """Return `H = sum_p alpha_p a_R(aoa_p) a_T(aod_p)^T`.

    Raises:
        InvalidInputError: if the amplitude count differs from the path count.
    """
    amplitudes = np.asarray(amplitudes, dtype=np.complex128).reshape(-1)
    if amplitudes.size != paths.count:
        raise InvalidInputError(
            f"Got {amplitudes.size} amplitudes for a {paths.count}-path channel."
        )
    a_t, a_r = steering_matrices(paths, tx, rx)
    return (a_r * amplitudes) @ a_t.T


def draw_channel(
    paths: PathSet, tx: UraGeometry, rx: UraGeometry, rng: np.random.Generator
) -> ChannelRealization:
    """Draw fresh amplitudes and assemble the channel for one passage."""
    amplitudes = draw_amplitudes(paths, rng)
    return ChannelRealization(amplitudes, assemble_channel(paths, amplitudes, tx, rx))


def compress_channel(H, f_rf, w_rf) -> ComplexMatrix:
    """Return the channel observed at baseband, `W_RF^H H F_RF`.

    Raises:
        InvalidInputError: if the dimensions do not conform.
    """
    H = as_matrix(H, "H")
    f_rf = as_matrix(f_rf, "F_RF")
    w_rf = as_matrix(w_rf, "W_RF")
    if f_rf.shape[0] != H.shape[1] or w_rf.shape[0] != H.shape[0]:
        raise InvalidInputError(
            f"Cannot compress a {H.shape} channel with F_RF {f_rf.shape} and W_RF {w_rf.shape}."
        )
    return w_rf.conj().T @ H @ f_rf


@dataclass(frozen=True)
class DiversityOrders:
    """Numerical ranks of the steering factors before and after analog compression.

    Attributes:
        r_t: rank of A_T.
        r_r: rank of A_R.
        r: rank of the Khatri-Rao product A_T * A_R.
        compressed_r_t: rank of A_T^T F_RF, when an analog stage is given.
        compressed_r_r: rank of W_RF^H A_R, when an analog stage is given.
        compressed_r: rank of (F_RF^T kron W_RF^H)(A_T * A_R), when both stages are given.
    """

    r_t: int
    r_r: int
    r: int
    compressed_r_t: Optional[int] = None
    compressed_r_r: Optional[int] = None
    compressed_r: Optional[int] = None

    def is_lossless(self, n_tx_rf: int, n_rx_rf: int) -> bool:
        """Whether the analog stages keep every resolvable path on both sides."""
        return (
            n_tx_rf >= self.r_t
            and n_rx_rf >= self.r_r
            and self.compressed_r_t == self.r_t
            and self.compressed_r_r == self.r_r
        )


def diversity_orders(
    paths: PathSet,
    tx: UraGeometry,
    rx: UraGeometry,
    f_rf: Optional[ComplexMatrix] = None,
    w_rf: Optional[ComplexMatrix] = None,
) -> DiversityOrders:
    """Compute the diversity orders of a path set, optionally through analog stages."""
    a_t, a_r = steering_matrices(paths, tx, rx)
    orders = dict(
        r_t=numerical_rank(a_t),
        r_r=numerical_rank(a_r),
        r=numerical_rank(khatri_rao(a_t, a_r)),
    )
    compressed_t = compressed_r = None
    if f_rf is not None:
        compressed_t = as_matrix(f_rf, "F_RF").T @ a_t
        orders["compressed_r_t"] = numerical_rank(compressed_t)
    if w_rf is not None:
        compressed_r = as_matrix(w_rf, "W_RF").conj().T @ a_r
        orders["compressed_r_r"] = numerical_rank(compressed_r)
    if compressed_t is not None and compressed_r is not None:
        orders["compressed_r"] = numerical_rank(khatri_rao(compressed_t, compressed_r))
    return DiversityOrders(**orders)


def compressed_transfer(
    paths: PathSet, tx: UraGeometry, rx: UraGeometry, f_rf, w_rf
) -> ComplexMatrix:
    """Return T, whose column p is `(F_RF^T a_T(aod_p)) kron (W_RF^H a_R(aoa_p))`."""
    a_t, a_r = steering_matrices(paths, tx, rx)
    return khatri_rao(
        as_matrix(f_rf, "F_RF").T @ a_t, as_matrix(w_rf, "W_RF").conj().T @ a_r
    )


def compressed_correlation(
    paths: PathSet, tx: UraGeometry, rx: UraGeometry, f_rf, w_rf
) -> Tuple[ComplexMatrix, ComplexMatrix]:
    """Return `(T, R)` for the vectorised compressed channel, `R = T diag(P) T^H`."""
    transfer = compressed_transfer(paths, tx, rx, f_rf, w_rf)
    correlation = (transfer * np.asarray(paths.powers)) @ transfer.conj().T
    return transfer, correlation


def compressed_side_correlations(
    paths: PathSet, tx: UraGeometry, rx: UraGeometry, f_rf, w_rf
) -> Tuple[ComplexMatrix, ComplexMatrix]:
    """Return `(E[H~^H H~], E[H~ H~^H])` assembled from the path geometry.

    Each side keeps the steering matrix of its own array and weights every path by its
    power times the beamforming gain the opposite analog stage gives it.
    """
    f_rf = as_matrix(f_rf, "F_RF")
    w_rf = as_matrix(w_rf, "W_RF")
    a_t, a_r = steering_matrices(paths, tx, rx)
    powers = np.asarray(paths.powers)

    rx_gain = np.sum(np.abs(w_rf.conj().T @ a_r) ** 2, axis=0)
    tx_gain = np.sum(np.abs(f_rf.T @ a_t) ** 2, axis=0)

    tx_side = f_rf.conj().T @ a_t.conj()
    rx_side = w_rf.conj().T @ a_r
    tx_correlation = (tx_side * (powers * rx_gain)) @ tx_side.conj().T
    rx_correlation = (rx_side * (powers * tx_gain)) @ rx_side.conj().T
    return tx_correlation, rx_correlation


def partial_correlations(
    correlation, n_tx_rf: int, n_rx_rf: int
) -> Tuple[ComplexMatrix, ComplexMatrix]:
    """Split a vectorised-channel correlation into its Tx-side and Rx-side parts.

    For `R = E[vec(X) vec(X)^H]` with X of shape n_rx_rf x n_tx_rf this returns
    `(E[X^H X], E[X X^H])`.
    """
    correlation = as_matrix(correlation, "correlation")
    dimension = n_tx_rf * n_rx_rf
    if correlation.shape != (dimension, dimension):
        raise InvalidInputError(
            f"Correlation of shape {correlation.shape} does not match "
            f"{n_rx_rf}x{n_tx_rf} matrices."
        )
    blocks = correlation.reshape(n_tx_rf, n_rx_rf, n_tx_rf, n_rx_rf)
    tx_correlation = np.einsum("ikjk->ji", blocks)
    rx_correlation = np.einsum("kikj->ij", blocks)
    return tx_correlation, rx_correlation
