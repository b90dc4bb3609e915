# Copyright 2023 Canonical Ltd.
# See LICENSE file for licensing details.

"""Compressed-channel estimators: U-ML and the two low-rank variants.

Every passage through a region delivers one training block `Y = H~ S + N`. The U-ML
estimate inverts the pilots block by block. The low-rank estimators learn, from many
passages of the same region, the subspace in which the vectorised compressed channel
lives and project new U-ML estimates onto it:

* JS-LR fits one joint subspace of dimension up to `n_tx_rf * n_rx_rf`.
* DS-LR fits a Tx subspace and an Rx subspace separately and projects onto their
  Kronecker product.

Observations are whitened with the Hermitian inverse square root of the U-ML error
covariance `C = I kron Q~ / sigma_s^2` before fitting, and the fitted projector is
de-whitened afterwards. Because C is a Kronecker product with an identity, whitening is
applied as a left multiplication of the un-vectorised estimate and C is never formed
unless explicitly requested.
"""
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence, Tuple

import numpy as np
import scipy.linalg
from pydantic import BaseModel, ConfigDict, Field

from mvlr.channel import partial_correlations
from mvlr.errors import DegenerateInputError, InvalidInputError
from mvlr.numerics import (
    ComplexMatrix,
    as_matrix,
    hermitian_eig,
    inv_sqrt_hermitian,
    numerical_rank,
    pseudo_inverse,
    unvec,
    vec,
)
from mvlr.scenario import MvRegion

DEFAULT_RANK_THRESHOLD = 0.999

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainingBlock:
    """Pilots sent by one vehicle passage and what the BS received at baseband.

    Attributes:
        pilots: n_tx_rf x M pilot matrix.
        received: n_rx_rf x M received matrix.
    """

    pilots: ComplexMatrix
    received: ComplexMatrix

    @property
    def n_tx_rf(self) -> int:
        """Rows of the pilot matrix."""
        return self.pilots.shape[0]

    @property
    def n_rx_rf(self) -> int:
        """Rows of the received matrix."""
        return self.received.shape[0]


@dataclass(frozen=True)
class NoiseModel:
    """Receiver noise before analog combining.

    Attributes:
        sigma_n_sq: per-antenna noise power.
        q_n: optional full spatial covariance; `sigma_n_sq * I` when omitted.
    """

    sigma_n_sq: float = 1.0
    q_n: Optional[ComplexMatrix] = None

    def covariance(self, n_antennas: int) -> ComplexMatrix:
        """Return Q_n for an array of `n_antennas` elements."""
        if self.q_n is None:
            return self.sigma_n_sq * np.eye(n_antennas, dtype=np.complex128)
        q_n = as_matrix(self.q_n, "Q_n")
        if q_n.shape != (n_antennas, n_antennas):
            raise InvalidInputError(
                f"Q_n of shape {q_n.shape} does not fit {n_antennas} antennas."
            )
        return q_n


@dataclass(frozen=True)
class NoiseAfterBf:
    """Noise statistics at baseband and the whitener they induce.

    Attributes:
        q_tilde: combined noise covariance `W_RF^H Q_n W_RF`.
        sigma_s_sq: pilot power.
        n_tx_rf: Tx RF chains, i.e. number of identity blocks in C.
        q_half: Hermitian square root of `q_tilde`.
        q_inv_half: Hermitian (ridged) inverse square root of `q_tilde`.
    """

    q_tilde: ComplexMatrix
    sigma_s_sq: float
    n_tx_rf: int
    q_half: ComplexMatrix
    q_inv_half: ComplexMatrix

    @property
    def n_rx_rf(self) -> int:
        """Rx RF chains."""
        return self.q_tilde.shape[0]

    @property
    def dimension(self) -> int:
        """Length of the vectorised compressed channel."""
        return self.n_tx_rf * self.n_rx_rf

    @property
    def covariance(self) -> ComplexMatrix:
        """The U-ML error covariance `C = I kron Q~ / sigma_s^2`."""
        return np.kron(np.eye(self.n_tx_rf), self.q_tilde) / self.sigma_s_sq

    @property
    def factors(self) -> Tuple[ComplexMatrix, ComplexMatrix]:
        """`(C^{H/2}, C^{-H/2})` as explicit matrices."""
        sigma_s = np.sqrt(self.sigma_s_sq)
        identity = np.eye(self.n_tx_rf)
        return (
            np.kron(identity, self.q_half) / sigma_s,
            np.kron(identity, self.q_inv_half) * sigma_s,
        )

    @property
    def relative_q_tilde(self) -> ComplexMatrix:
        """`Q~ / sigma_s^2`, the combined noise relative to the pilot power."""
        return self.q_tilde / self.sigma_s_sq

    @property
    def crlb(self) -> float:
        """`tr(C)`, the error floor of the unbiased estimate."""
        return float(self.n_tx_rf * np.trace(self.q_tilde).real / self.sigma_s_sq)

    def whiten(self, h) -> np.ndarray:
        """Apply `C^{-H/2}` to a vectorised compressed channel."""
        matrix = unvec(h, self.n_rx_rf, self.n_tx_rf)
        return vec(self.q_inv_half @ matrix) * np.sqrt(self.sigma_s_sq)

    def dewhiten(self, h) -> np.ndarray:
        """Apply `C^{H/2}`, undoing `whiten`."""
        matrix = unvec(h, self.n_rx_rf, self.n_tx_rf)
        return vec(self.q_half @ matrix) / np.sqrt(self.sigma_s_sq)

    def trace_with(self, matrix) -> float:
        """Return `tr(C X)` for an n_rx_rf x n_rx_rf block X replicated on every Tx block."""
        return float(np.trace(self.q_tilde @ matrix).real / self.sigma_s_sq)

    def draw(self, n_samples: int, rng: np.random.Generator) -> ComplexMatrix:
        """Draw `n_samples` i.i.d. CN(0, Q~) columns."""
        shape = (self.n_rx_rf, n_samples)
        white = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)
        return self.q_half @ white


def make_training(
    n_tx_rf: int, n_symbols: int, sigma_s: float, rng: np.random.Generator
) -> ComplexMatrix:
    """Return pilots with mutually orthogonal rows and Gram `sigma_s^2 I`.

    The rows are the first `n_tx_rf` rows of the unitary M-point DFT, rotated by a random
    phase per symbol so different vehicles send uncorrelated sequences.

    Raises:
        InvalidInputError: if `n_symbols < n_tx_rf`.
    """
    if n_tx_rf < 1 or n_symbols < n_tx_rf:
        raise InvalidInputError(
            f"Pilot length {n_symbols} cannot carry {n_tx_rf} orthogonal sequences."
        )
    basis = scipy.linalg.dft(n_symbols, scale="sqrtn")[:n_tx_rf, :]
    phases = np.exp(2j * np.pi * rng.uniform(size=n_symbols))
    return sigma_s * basis * phases


def noise_after_bf(
    noise: NoiseModel, w_rf, n_tx_rf: int, sigma_s_sq: float
) -> NoiseAfterBf:
    """Propagate receiver noise through the analog combiner.

    Raises:
        InvalidInputError: if Q_n is not Hermitian PSD or `sigma_s_sq` is not positive.
    """
    if sigma_s_sq <= 0:
        raise InvalidInputError(f"Pilot power must be positive, got {sigma_s_sq}.")
    w_rf = as_matrix(w_rf, "W_RF")
    q_n = noise.covariance(w_rf.shape[0])
    inv_sqrt_hermitian(q_n)
    q_tilde = w_rf.conj().T @ q_n @ w_rf
    q_tilde = 0.5 * (q_tilde + q_tilde.conj().T)
    q_half, q_inv_half = inv_sqrt_hermitian(q_tilde)
    return NoiseAfterBf(q_tilde, float(sigma_s_sq), int(n_tx_rf), q_half, q_inv_half)


def draw_training_block(
    h_tilde, pilots, noise: NoiseAfterBf, rng: np.random.Generator
) -> TrainingBlock:
    """Simulate `Y = H~ S + N` with i.i.d. CN(0, Q~) noise columns."""
    h_tilde = as_matrix(h_tilde, "H~")
    pilots = as_matrix(pilots, "pilots")
    received = h_tilde @ pilots + noise.draw(pilots.shape[1], rng)
    return TrainingBlock(pilots, received)


def uml_estimate(block: TrainingBlock) -> np.ndarray:
    """Return `vec(Y S^H (S S^H)^-1)`, the unconstrained ML estimate of vec(H~).

    Raises:
        InvalidInputError: if the pilot Gram matrix is singular.
    """
    pilots = as_matrix(block.pilots, "pilots")
    gram = pilots @ pilots.conj().T
    if numerical_rank(gram) < gram.shape[0]:
        raise InvalidInputError("The pilot Gram matrix is singular.")
    # S^+ = S^H (S S^H)^-1 for pilots with full row rank
    return vec(as_matrix(block.received, "received") @ pseudo_inverse(pilots))


class NoiseFloor(str, Enum):
    """Noise level removed from whitened eigenvalues before the rank rule."""

    NONE = "none"
    UNIT = "unit"
    EDGE = "edge"


class RankRule(BaseModel):
    """Cumulative-energy rank rule.

    Attributes:
        threshold: fraction of the total eigenvalue mass the kept subspace must reach.
        noise_floor: `none` applies the rule to the raw whitened eigenvalues. `unit`
            subtracts the whitened noise level first, and `edge` subtracts the largest
            eigenvalue pure whitened noise produces at the available sample count.
    """

    model_config = ConfigDict(frozen=True)

    threshold: float = Field(default=DEFAULT_RANK_THRESHOLD, gt=0, le=1)
    noise_floor: NoiseFloor = NoiseFloor.NONE

    def floor(self, dimension: int, n_samples: int, noise_level: float = 1.0) -> float:
        """Return the value subtracted from every eigenvalue."""
        if self.noise_floor == NoiseFloor.UNIT:
            return noise_level
        if self.noise_floor == NoiseFloor.EDGE:
            return noise_level * (1.0 + np.sqrt(dimension / n_samples)) ** 2
        return 0.0

    def apply(self, eigenvalues, n_samples: int, noise_level: float = 1.0) -> int:
        """Estimate the rank of a whitened sample correlation from its eigenvalues."""
        eigenvalues = np.asarray(eigenvalues, dtype=np.float64)
        if self.noise_floor == NoiseFloor.NONE:
            return estimate_rank(eigenvalues, self.threshold)
        signal = eigenvalues - self.floor(eigenvalues.size, n_samples, noise_level)
        if not np.any(signal > 0):
            logger.warning(
                "No eigenvalue rises above the %s noise floor; falling back to rank 1",
                self.noise_floor.value,
            )
            return 1
        return estimate_rank(signal, self.threshold)


def estimate_rank(eigenvalues, threshold: float = DEFAULT_RANK_THRESHOLD) -> int:
    """Smallest r whose leading eigenvalues hold `threshold` of the total mass.

    Negative eigenvalues are clipped at zero.

    Raises:
        DegenerateInputError: if every eigenvalue is zero.
    """
    eigenvalues = np.clip(np.sort(np.asarray(eigenvalues, dtype=np.float64))[::-1], 0.0, None)
    total = eigenvalues.sum()
    if eigenvalues.size == 0 or total <= 0:
        raise DegenerateInputError("Cannot estimate a rank from an all-zero spectrum.")
    cumulative = np.cumsum(eigenvalues) / total
    reached = np.nonzero(cumulative >= threshold - 1e-12)[0]
    return int(reached[0]) + 1 if reached.size else int(eigenvalues.size)


class SubspaceKind(str, Enum):
    """Joint or Kronecker-separable projection subspace."""

    JOINT = "joint"
    DISJOINT = "disjoint"


@dataclass(frozen=True)
class SubspaceModel:
    """A fitted low-rank projector for one region.

    Attributes:
        kind: joint (JS-LR) or Kronecker-separable (DS-LR).
        noise: the whitener the model was fitted with.
        ranks: `(r,)` for joint models, `(r_t, r_r)` for disjoint ones.
        basis: joint basis, `n_tx_rf * n_rx_rf` x r.
        tx_basis: disjoint Tx basis, n_tx_rf x r_t.
        rx_basis: disjoint Rx basis, n_rx_rf x r_r.
        eigenvalues: whitened sample correlation spectra used for the rank rule.
        region: the region the model belongs to.
    """

    kind: SubspaceKind
    noise: NoiseAfterBf
    ranks: Tuple[int, ...]
    basis: Optional[ComplexMatrix] = None
    tx_basis: Optional[ComplexMatrix] = None
    rx_basis: Optional[ComplexMatrix] = None
    eigenvalues: Tuple[np.ndarray, ...] = field(default=(), compare=False)
    region: Optional[MvRegion] = None

    @property
    def rank(self) -> int:
        """Dimension of the projection subspace."""
        return int(np.prod(self.ranks))

    def _side_projectors(self) -> Tuple[ComplexMatrix, ComplexMatrix]:
        # X -> P_R X P_T on the un-vectorised whitened channel
        tx_projector = self.tx_basis @ self.tx_basis.conj().T
        rx_projector = self.rx_basis @ self.rx_basis.conj().T
        return tx_projector, rx_projector

    def whitened_projector(self) -> ComplexMatrix:
        """Orthogonal projector acting on whitened vectors, as an explicit matrix."""
        if self.kind == SubspaceKind.JOINT:
            return self.basis @ self.basis.conj().T
        tx_projector, rx_projector = self._side_projectors()
        return np.kron(tx_projector.T, rx_projector)

    def projector(self) -> ComplexMatrix:
        """De-whitened (oblique) projector `C^{H/2} Pi C^{-H/2}` as an explicit matrix."""
        half, inverse_half = self.noise.factors
        return half @ self.whitened_projector() @ inverse_half

    def apply(self, h) -> np.ndarray:
        """Project a vectorised compressed-channel estimate."""
        whitened = self.noise.whiten(h)
        if self.kind == SubspaceKind.JOINT:
            projected = self.basis @ (self.basis.conj().T @ whitened)
        else:
            tx_projector, rx_projector = self._side_projectors()
            matrix = unvec(whitened, self.noise.n_rx_rf, self.noise.n_tx_rf)
            projected = vec(rx_projector @ matrix @ tx_projector)
        return self.noise.dewhiten(projected)

    def noise_trace(self) -> float:
        """`tr(Pi C Pi^H)`: the U-ML noise power that survives the projection."""
        if self.kind == SubspaceKind.DISJOINT:
            tx_projector, rx_projector = self._side_projectors()
            return float(np.trace(tx_projector).real) * self.noise.trace_with(rx_projector)
        total = 0.0
        for column in self.basis.T:
            block = unvec(column, self.noise.n_rx_rf, self.noise.n_tx_rf)
            total += float(np.vdot(block, self.noise.q_tilde @ block).real)
        return total / self.noise.sigma_s_sq


def _whitened_samples(blocks: Sequence[TrainingBlock], noise: NoiseAfterBf) -> ComplexMatrix:
    if not blocks:
        raise InvalidInputError("At least one training block is needed to fit a model.")
    return np.column_stack([noise.whiten(uml_estimate(block)) for block in blocks])


def _leading(correlation: ComplexMatrix, rank: int) -> ComplexMatrix:
    _, eigenvectors = hermitian_eig(correlation)
    return eigenvectors[:, :rank]


def fit_js(
    blocks: Sequence[TrainingBlock],
    noise: NoiseAfterBf,
    rank_rule: RankRule = RankRule(),
    region: Optional[MvRegion] = None,
) -> SubspaceModel:
    """Fit the joint-space projector from L training blocks of one region."""
    samples = _whitened_samples(blocks, noise)
    n_samples = samples.shape[1]
    correlation = samples @ samples.conj().T / n_samples
    eigenvalues, eigenvectors = hermitian_eig(correlation)
    rank = rank_rule.apply(eigenvalues, n_samples)
    logger.debug("JS-LR fit on %d blocks: rank %d of %d", n_samples, rank, eigenvalues.size)
    return SubspaceModel(
        kind=SubspaceKind.JOINT,
        noise=noise,
        ranks=(rank,),
        basis=eigenvectors[:, :rank],
        eigenvalues=(eigenvalues,),
        region=region,
    )


def fit_ds(
    blocks: Sequence[TrainingBlock],
    noise: NoiseAfterBf,
    rank_rule: RankRule = RankRule(),
    region: Optional[MvRegion] = None,
) -> SubspaceModel:
    """Fit separate Tx and Rx projectors from L training blocks of one region."""
    samples = _whitened_samples(blocks, noise)
    n_blocks = samples.shape[1]
    n_rx_rf, n_tx_rf = noise.n_rx_rf, noise.n_tx_rf
    # column blocks [Y_1 ... Y_L] and row blocks [Y_1; ...; Y_L]
    side_by_side = samples.reshape(n_rx_rf, n_tx_rf * n_blocks, order="F")
    stacked = np.concatenate(
        [unvec(sample, n_rx_rf, n_tx_rf) for sample in samples.T], axis=0
    )
    tx_correlation = stacked.conj().T @ stacked / n_blocks
    rx_correlation = side_by_side @ side_by_side.conj().T / n_blocks

    tx_eigenvalues, tx_vectors = hermitian_eig(tx_correlation)
    rx_eigenvalues, rx_vectors = hermitian_eig(rx_correlation)
    tx_rank = rank_rule.apply(tx_eigenvalues, n_blocks * n_rx_rf, noise_level=n_rx_rf)
    rx_rank = rank_rule.apply(rx_eigenvalues, n_blocks * n_tx_rf, noise_level=n_tx_rf)
    logger.debug("DS-LR fit on %d blocks: ranks (%d, %d)", n_blocks, tx_rank, rx_rank)
    return SubspaceModel(
        kind=SubspaceKind.DISJOINT,
        noise=noise,
        ranks=(tx_rank, rx_rank),
        tx_basis=tx_vectors[:, :tx_rank],
        rx_basis=rx_vectors[:, :rx_rank],
        eigenvalues=(tx_eigenvalues, rx_eigenvalues),
        region=region,
    )


def lr_estimate(model: SubspaceModel, block: TrainingBlock) -> np.ndarray:
    """Project the U-ML estimate of `block` with the region's fitted model.

    Raises:
        InvalidInputError: if the block dimensions differ from the model's.
    """
    if (block.n_tx_rf, block.n_rx_rf) != (model.noise.n_tx_rf, model.noise.n_rx_rf):
        raise InvalidInputError(
            f"A {block.n_rx_rf}x{block.n_tx_rf} block does not fit a model fitted on "
            f"{model.noise.n_rx_rf}x{model.noise.n_tx_rf} channels."
        )
    return model.apply(uml_estimate(block))


def asymptotic_model(
    kind: SubspaceKind,
    correlations: Tuple[ComplexMatrix, ...],
    noise: NoiseAfterBf,
    ranks: Tuple[int, ...],
) -> SubspaceModel:
    """Build the model the fit converges to, from whitened analytic correlations.

    Args:
        kind: joint or disjoint.
        correlations: `(R_w,)` for joint models, `(R_w_tx, R_w_rx)` for disjoint ones,
            all describing the whitened channel without noise. A disjoint model also
            accepts the joint `(R_w,)` and splits it into its partial traces.
        noise: the whitener.
        ranks: the rank(s) to truncate at.
    """
    if kind == SubspaceKind.JOINT:
        (correlation,) = correlations
        return SubspaceModel(kind, noise, tuple(ranks), basis=_leading(correlation, ranks[0]))
    if len(correlations) == 1:
        correlations = partial_correlations(correlations[0], noise.n_tx_rf, noise.n_rx_rf)
    tx_correlation, rx_correlation = correlations
    return SubspaceModel(
        kind,
        noise,
        tuple(ranks),
        tx_basis=_leading(tx_correlation, ranks[0]),
        rx_basis=_leading(rx_correlation, ranks[1]),
    )
