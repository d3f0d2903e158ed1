"""Symmetric trace-free matrices and their orthonormal coordinates.

All strains and stresslets are symmetric trace-free ``d x d`` matrices. Internally
they are handled as coordinate vectors of length ``d(d+1)/2 - 1`` with respect to
the orthonormal basis returned by :func:`strain_basis`, so that the Frobenius
product ``E:E'`` becomes an ordinary dot product.
"""

from functools import lru_cache

import numpy as np

from .errors import ConfigError

STRAIN_TOL = 1e-12


@lru_cache(maxsize=None)
def _basis(d):
    mats = []
    # off-diagonal shears first in lexical order
    for i in range(d):
        for j in range(i + 1, d):
            m = np.zeros((d, d))
            m[i, j] = m[j, i] = 1.0 / np.sqrt(2.0)
            mats.append(m)
    # diagonal elements: Gram-Schmidt on e_k e_k^T - e_{k+1} e_{k+1}^T style vectors
    for k in range(1, d):
        m = np.zeros((d, d))
        m[np.arange(k), np.arange(k)] = 1.0
        m[k, k] = -float(k)
        mats.append(m / np.sqrt(k * (k + 1)))
    out = np.array(mats)
    out.setflags(write=False)
    return out


def strain_basis(d=3):
    """Orthonormal basis of the symmetric trace-free ``d x d`` matrices.

    Returns
    -------
    ndarray, shape (m, d, d)
        With ``m = d(d+1)/2 - 1``; ``E_a : E_b = delta_ab``.
    """
    return _basis(int(d))


def strain_dim(d=3):
    return d * (d + 1) // 2 - 1


def check_strain(E, tol=STRAIN_TOL):
    """Validate a strain matrix and return it as a float array.

    Raises
    ------
    ConfigError
        If the matrix is not square, not symmetric, or not trace-free to ``tol``.
    """
    E = np.asarray(E, dtype=float)
    if E.ndim != 2 or E.shape[0] != E.shape[1] or E.shape[0] not in (2, 3):
        raise ConfigError(f"strain must be a 2x2 or 3x3 matrix, got shape {E.shape}")
    scale = max(1.0, float(np.abs(E).max()))
    if np.abs(E - E.T).max() > tol * scale:
        raise ConfigError("strain matrix is not symmetric")
    if abs(np.trace(E)) > tol * scale:
        raise ConfigError("strain matrix is not trace-free")
    return E


def to_coords(E):
    """Coordinates of (a stack of) strain matrices in the orthonormal basis."""
    E = np.asarray(E, dtype=float)
    d = E.shape[-1]
    return np.einsum("...ij,aij->...a", E, strain_basis(d))


def from_coords(c, d=3):
    """Inverse of :func:`to_coords`."""
    return np.einsum("...a,aij->...ij", np.asarray(c, dtype=float), strain_basis(d))


def sym(A):
    """Symmetric part over the last two axes."""
    return 0.5 * (A + np.swapaxes(A, -1, -2))


def random_strain(rng, d=3):
    """A random unit-norm strain matrix (isotropically distributed)."""
    c = rng.standard_normal(strain_dim(d))
    return from_coords(c / np.linalg.norm(c), d)


@lru_cache(maxsize=None)
def _cubic_group(d):
    import itertools

    ops = []
    for perm in itertools.permutations(range(d)):
        for signs in itertools.product((1.0, -1.0), repeat=d):
            R = np.zeros((d, d))
            R[np.arange(d), perm] = signs
            ops.append(R)
    out = np.array(ops)
    out.setflags(write=False)
    return out


def cubic_group(d=3):
    """The ``2^d d!`` signed permutation matrices (symmetry group of the cube)."""
    return _cubic_group(int(d))


def cubic_action(d=3):
    """Matrices of ``E -> R E R^T`` on strain coordinates, one per cube symmetry."""
    B = strain_basis(d)
    R = cubic_group(d)
    # image of each basis element, re-expanded in the basis
    img = np.einsum("gik,akl,gjl->gaij", R, B, R)
    return np.einsum("gaij,bij->gba", img, B)
