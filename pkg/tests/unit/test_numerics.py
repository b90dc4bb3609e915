# Copyright 2023 Canonical Ltd.
# See LICENSE file for licensing details.

import numpy as np
import pytest

from mvlr.errors import InvalidInputError, NotPositiveSemidefiniteError
from mvlr.numerics import (
    as_matrix,
    hermitian_eig,
    inv_sqrt_hermitian,
    khatri_rao,
    kron,
    numerical_rank,
    pseudo_inverse,
    unvec,
    vec,
)


def random_complex(rng, *shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


@pytest.fixture
def rng():
    return np.random.default_rng(7)


@pytest.fixture
def psd(rng):
    factor = random_complex(rng, 6, 6)
    return factor @ factor.conj().T + 0.1 * np.eye(6)


@pytest.mark.parametrize(
    "value",
    [
        np.ones(3),
        np.zeros((0, 2)),
        np.array([[1.0, np.nan]]),
        np.array([[np.inf, 0.0]]),
    ],
)
def test_as_matrix_rejects_malformed_input(value):
    with pytest.raises(InvalidInputError):
        as_matrix(value)


def test_hermitian_eig_reconstructs_sorted_and_phase_fixed(psd):
    eigenvalues, eigenvectors = hermitian_eig(psd)

    assert np.all(np.diff(eigenvalues) <= 0)
    assert np.allclose(eigenvectors.conj().T @ eigenvectors, np.eye(6), atol=1e-12)
    assert np.allclose((eigenvectors * eigenvalues) @ eigenvectors.conj().T, psd, atol=1e-10)
    pivots = eigenvectors[np.argmax(np.abs(eigenvectors), axis=0), np.arange(6)]
    assert np.allclose(pivots.imag, 0.0, atol=1e-12)
    assert np.all(pivots.real > 0)


def test_hermitian_eig_is_reproducible(psd):
    first = hermitian_eig(psd)
    second = hermitian_eig(psd.copy())
    assert np.array_equal(first[0], second[0])
    assert np.array_equal(first[1], second[1])


@pytest.mark.parametrize(
    "matrix", [np.array([[1.0, 2.0], [0.0, 1.0]]), np.ones((2, 3))]
)
def test_hermitian_eig_rejects_non_hermitian(matrix):
    with pytest.raises(InvalidInputError):
        hermitian_eig(matrix)


def test_inv_sqrt_hermitian_factors(psd):
    half, inverse_half = inv_sqrt_hermitian(psd)

    assert np.allclose(half, half.conj().T, atol=1e-10)
    assert np.allclose(half @ half, psd, atol=1e-8)
    assert np.allclose(inverse_half @ half, np.eye(6), atol=1e-6)


def test_inv_sqrt_hermitian_of_rank_deficient_matrix_is_finite():
    vector = np.array([[1.0], [1j], [0.0]])
    half, inverse_half = inv_sqrt_hermitian(vector @ vector.conj().T)
    assert np.all(np.isfinite(inverse_half))
    assert np.allclose(half @ half, vector @ vector.conj().T, atol=1e-12)


def test_inv_sqrt_hermitian_rejects_indefinite_matrix():
    with pytest.raises(NotPositiveSemidefiniteError) as error:
        inv_sqrt_hermitian(np.diag([1.0, -1.0]))
    assert error.value.min_eigenvalue == pytest.approx(-1.0)


def test_inv_sqrt_hermitian_rejects_negative_ridge(psd):
    with pytest.raises(InvalidInputError):
        inv_sqrt_hermitian(psd, ridge=-1.0)


def test_numerical_rank(rng):
    outer = np.outer(random_complex(rng, 5), random_complex(rng, 4))
    assert numerical_rank(outer) == 1
    assert numerical_rank(np.zeros((3, 3))) == 0
    assert numerical_rank(random_complex(rng, 5, 3)) == 3


def test_pseudo_inverse_is_a_generalised_inverse(rng):
    matrix = random_complex(rng, 5, 2) @ random_complex(rng, 2, 4)
    inverse = pseudo_inverse(matrix)
    assert np.allclose(matrix @ inverse @ matrix, matrix, atol=1e-10)


def test_khatri_rao_is_column_wise_kronecker(rng):
    first, second = random_complex(rng, 3, 2), random_complex(rng, 4, 2)
    product = khatri_rao(first, second)
    for column in range(2):
        assert np.allclose(product[:, column], np.kron(first[:, column], second[:, column]))


def test_khatri_rao_rejects_column_mismatch(rng):
    with pytest.raises(InvalidInputError):
        khatri_rao(random_complex(rng, 3, 2), random_complex(rng, 3, 3))


def test_vec_stacks_columns():
    assert np.array_equal(vec([[1, 2], [3, 4]]), np.array([1, 3, 2, 4], dtype=complex))
    assert np.array_equal(unvec([1, 3, 2, 4], 2, 2), np.array([[1, 2], [3, 4]], dtype=complex))


def test_vec_kronecker_identity(rng):
    a, x, b = random_complex(rng, 3, 4), random_complex(rng, 4, 2), random_complex(rng, 2, 5)
    assert np.allclose(vec(a @ x @ b), kron(b.T, a) @ vec(x))


def test_unvec_rejects_wrong_length():
    with pytest.raises(InvalidInputError):
        unvec(np.ones(5), 2, 3)
