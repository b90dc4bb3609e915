# Copyright 2023 Canonical Ltd.
# See LICENSE file for licensing details.

"""Dense complex-matrix kernels used by the rest of the library.

All functions are pure: inputs are never modified and outputs are fresh arrays, so they
can be called concurrently from independent Monte Carlo trials.
"""
import logging
from typing import Optional, Tuple

import numpy as np
import numpy.typing as npt
import scipy.linalg

from mvlr.errors import InvalidInputError, NotPositiveSemidefiniteError, NumericError

ComplexMatrix = npt.NDArray[np.complex128]
RealVector = npt.NDArray[np.float64]

HERMITIAN_TOLERANCE = 1e-10
PSD_TOLERANCE = 1e-10
DEFAULT_RIDGE_FACTOR = 1e-12

logger = logging.getLogger(__name__)


def as_matrix(value, name: str = "matrix") -> ComplexMatrix:
    """Return `value` as a non-empty, finite, two-dimensional complex array.

    Raises:
        InvalidInputError: if the array is not 2-D, is empty or holds NaN/Inf entries.
    """
    matrix = np.asarray(value, dtype=np.complex128)
    if matrix.ndim != 2:
        raise InvalidInputError(f"{name} must be two-dimensional, got shape {matrix.shape}.")
    if matrix.size == 0:
        raise InvalidInputError(f"{name} must have at least one entry.")
    if not np.all(np.isfinite(matrix)):
        raise InvalidInputError(f"{name} holds non-finite entries.")
    return matrix


def _check_hermitian(matrix: ComplexMatrix, name: str) -> None:
    rows, cols = matrix.shape
    if rows != cols:
        raise InvalidInputError(f"{name} must be square, got {rows}x{cols}.")
    scale = np.linalg.norm(matrix)
    if np.linalg.norm(matrix - matrix.conj().T) > HERMITIAN_TOLERANCE * scale:
        raise InvalidInputError(f"{name} is not Hermitian within tolerance.")


def hermitian_eig(matrix) -> Tuple[RealVector, ComplexMatrix]:
    """Eigen-decompose a Hermitian matrix.

    Eigenvalues are returned in descending order. The phase of every eigenvector is fixed
    so that its largest-magnitude entry is real and nonnegative; the first such entry wins
    on ties, which keeps results reproducible across runs.

    Args:
        matrix: Hermitian n x n matrix.

    Returns:
        A tuple `(eigenvalues, eigenvectors)` with orthonormal eigenvector columns.

    Raises:
        InvalidInputError: if the matrix is not Hermitian to tolerance.
        NumericError: if the eigen-solver does not converge.
    """
    matrix = as_matrix(matrix)
    _check_hermitian(matrix, "matrix")
    symmetric = 0.5 * (matrix + matrix.conj().T)
    try:
        eigenvalues, eigenvectors = scipy.linalg.eigh(symmetric)
    except scipy.linalg.LinAlgError as error:
        raise NumericError(f"Hermitian eigen-solver failed: {error}") from error

    eigenvalues = eigenvalues[::-1].copy()
    eigenvectors = eigenvectors[:, ::-1].copy()

    pivots = eigenvectors[np.argmax(np.abs(eigenvectors), axis=0), np.arange(matrix.shape[0])]
    eigenvectors *= pivots.conj() / np.abs(pivots)
    return eigenvalues, eigenvectors


def inv_sqrt_hermitian(
    matrix, ridge: Optional[float] = None
) -> Tuple[ComplexMatrix, ComplexMatrix]:
    """Return the Hermitian square root of a PSD matrix and its (ridged) inverse.

    Args:
        matrix: Hermitian positive semidefinite matrix A.
        ridge: nonnegative value added to the eigenvalues before inversion. Defaults to
            1e-12 times the largest eigenvalue.

    Returns:
        `(A_half, A_inv_half)` with `A_half @ A_half^H == A` and `A_inv_half @ A_half == I`
        on the numerical range of A.

    Raises:
        NotPositiveSemidefiniteError: if an eigenvalue is below -1e-10 times the largest.
    """
    eigenvalues, eigenvectors = hermitian_eig(matrix)
    largest = max(float(eigenvalues[0]), 0.0)
    if eigenvalues[-1] < -PSD_TOLERANCE * largest:
        raise NotPositiveSemidefiniteError(float(eigenvalues[-1]), largest)
    if ridge is None:
        ridge = DEFAULT_RIDGE_FACTOR * largest
    if ridge < 0:
        raise InvalidInputError(f"ridge must be nonnegative, got {ridge}.")

    eigenvalues = np.clip(eigenvalues, 0.0, None)
    shifted = eigenvalues + ridge
    inverse_roots = np.zeros_like(shifted)
    positive = shifted > 0
    inverse_roots[positive] = 1.0 / np.sqrt(shifted[positive])

    adjoint = eigenvectors.conj().T
    half = (eigenvectors * np.sqrt(eigenvalues)) @ adjoint
    inverse_half = (eigenvectors * inverse_roots) @ adjoint
    return half, inverse_half


def pseudo_inverse(matrix) -> ComplexMatrix:
    """Return the Moore-Penrose pseudo-inverse.

    Singular values below max(m, n) * eps * sigma_max are treated as zero.
    """
    matrix = as_matrix(matrix)
    try:
        return scipy.linalg.pinv(matrix)
    except scipy.linalg.LinAlgError as error:
        raise NumericError(f"Singular value decomposition failed: {error}") from error


def numerical_rank(matrix) -> int:
    """Count singular values above max(m, n) * eps * sigma_max."""
    matrix = as_matrix(matrix)
    singular_values = scipy.linalg.svdvals(matrix)
    if singular_values[0] == 0:
        return 0
    tolerance = max(matrix.shape) * np.finfo(np.float64).eps * singular_values[0]
    return int(np.count_nonzero(singular_values > tolerance))


def kron(first, second) -> ComplexMatrix:
    """Kronecker product of two matrices."""
    return np.kron(as_matrix(first, "first"), as_matrix(second, "second"))


def khatri_rao(first, second) -> ComplexMatrix:
    """Column-wise Kronecker product.

    Raises:
        InvalidInputError: if the column counts differ.
    """
    first = as_matrix(first, "first")
    second = as_matrix(second, "second")
    if first.shape[1] != second.shape[1]:
        raise InvalidInputError(
            f"Khatri-Rao product needs equal column counts, got {first.shape[1]} "
            f"and {second.shape[1]}."
        )
    return scipy.linalg.khatri_rao(first, second)


def vec(matrix) -> npt.NDArray[np.complex128]:
    """Stack the columns of `matrix` into one vector."""
    return as_matrix(matrix).reshape(-1, order="F")


def unvec(vector, rows: int, cols: int) -> ComplexMatrix:
    """Invert `vec` for a rows x cols matrix.

    Raises:
        InvalidInputError: if the vector length is not rows * cols.
    """
    vector = np.asarray(vector, dtype=np.complex128).reshape(-1)
    if rows <= 0 or cols <= 0 or vector.size != rows * cols:
        raise InvalidInputError(
            f"Cannot reshape a vector of length {vector.size} into {rows}x{cols}."
        )
    return vector.reshape((rows, cols), order="F")
