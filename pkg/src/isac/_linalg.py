"""Small numerical helpers shared by the solvers."""

import logging

import numpy as np

log = logging.getLogger(__name__)


def herm(m):
    """Conjugate transpose."""
    return m.conj().T


def hermitize(m):
    return 0.5 * (m + m.conj().T)


def logdet_hpd(m):
    """Natural log-determinant of a Hermitian positive definite matrix.

    Raises ``np.linalg.LinAlgError`` when ``m`` is not positive definite.
    """
    chol = np.linalg.cholesky(hermitize(m))
    return 2.0 * float(np.sum(np.log(np.abs(np.diag(chol)))))


def solve_psd(m, b, ridge=1e-12):
    """Solve ``m x = b`` for a Hermitian PSD ``m``, regularizing if singular."""
    try:
        return np.linalg.solve(m, b)
    except np.linalg.LinAlgError:
        scale = max(float(np.real(np.trace(m))) / m.shape[0], np.finfo(float).tiny)
        log.warning("singular system (dim %d); adding ridge %.1e", m.shape[0], ridge)
        return np.linalg.solve(m + ridge * scale * np.eye(m.shape[0]), b)


def numerical_rank(s, rtol):
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int(np.sum(s > rtol * s[0]))


def stack_rows(blocks, normalize=True):
    """Stack matrices vertically, optionally scaling each block to unit norm.

    Row scaling leaves the null space unchanged but keeps weak blocks from
    being lost below the rank threshold of strong ones.
    """
    rows = []
    for b in blocks:
        b = np.atleast_2d(b)
        nrm = np.linalg.norm(b)
        if normalize and nrm > 0:
            b = b / nrm
        rows.append(b)
    return np.vstack(rows)


def null_space(m, rtol=1e-10):
    """Orthonormal basis of the null space of ``m`` (columns)."""
    m = np.atleast_2d(m)
    n = m.shape[1]
    if m.shape[0] == 0:
        return np.eye(n, dtype=complex)
    _, s, vh = np.linalg.svd(m, full_matrices=True)
    rank = numerical_rank(s, rtol)
    return herm(vh[rank:])


def row_space(m, rtol=1e-10):
    """Orthonormal basis of range(m^H)."""
    m = np.atleast_2d(m)
    if m.shape[0] == 0:
        return np.zeros((m.shape[1], 0), dtype=complex)
    _, s, vh = np.linalg.svd(m, full_matrices=False)
    rank = numerical_rank(s, rtol)
    return herm(vh[:rank])


def projector(basis):
    """Orthogonal projector onto the column span of ``basis``."""
    q = row_space(herm(basis))
    return q @ herm(q)


def db2lin(x):
    return 10.0 ** (np.asarray(x, dtype=float) / 10.0)


def dbm2watt(x):
    return 10.0 ** ((np.asarray(x, dtype=float) - 30.0) / 10.0)


def crandn(rng, shape, var=1.0):
    """Circularly-symmetric complex Gaussian samples with variance ``var``."""
    scale = np.sqrt(np.asarray(var, dtype=float) / 2.0)
    return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))
