"""Spatial covariance matrices and direct co-array augmentation.

Augmentation turns the m x m covariance of a sparse array with a contiguous
difference co-array into the n x n Hermitian Toeplitz covariance of its
virtual ULA by redundancy-averaging all entries at each lag.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import ArrayGeometry, difference_coarray, response_matrix

KINDS = ("sample", "noiseless", "augmented")


@dataclass
class Scm:
    """Hermitian covariance matrix; sample/noiseless kinds must be PSD."""

    mat: np.ndarray
    kind: str

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown SCM kind {self.kind!r}")
        m = np.asarray(self.mat, dtype=complex)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError("SCM must be square")
        scale = max(np.abs(m).max(), 1e-300)
        if np.abs(m - m.conj().T).max() > 1e-10 * scale:
            raise ValueError("SCM is not Hermitian")
        self.mat = m
        if self.kind in ("sample", "noiseless"):
            w = np.linalg.eigvalsh(m)
            if w[0] < -1e-9 * max(w[-1], 0.0):
                raise ValueError("SCM is not positive semidefinite")

    @property
    def size(self) -> int:
        return self.mat.shape[0]


def sample_scm(y: np.ndarray) -> Scm:
    """(1/T) Y Y^H from an m x T snapshot matrix."""
    y = np.asarray(y, dtype=complex)
    if y.ndim != 2 or y.shape[1] < 1:
        raise ValueError("expected an m x T matrix with T >= 1")
    r = y @ y.conj().T / y.shape[1]
    return Scm(mat=(r + r.conj().T) / 2, kind="sample")


def noiseless_scm(geom: ArrayGeometry, thetas, powers) -> Scm:
    """A diag(p) A^H for the given angles and powers."""
    p = np.asarray(powers, dtype=float)
    a = response_matrix(geom, thetas)
    if p.shape != (a.shape[1],):
        raise ValueError("one power per angle required")
    r = (a * p) @ a.conj().T
    return Scm(mat=(r + r.conj().T) / 2, kind="noiseless")


def toeplitz_from_lags(r: np.ndarray, kind: str = "augmented") -> Scm:
    """Hermitian Toeplitz matrix with first column ``r``; lag 0 is coerced
    real to guard against float drift on the diagonal."""
    r = np.asarray(r, dtype=complex).ravel()
    if r.size < 1:
        raise ValueError("need at least one lag")
    r = r.copy()
    r[0] = r[0].real
    n = r.size
    d = np.arange(n)[:, None] - np.arange(n)[None, :]
    mat = np.where(d >= 0, r[np.abs(d)], np.conj(r[np.abs(d)]))
    return Scm(mat=mat, kind=kind)


def coarray_augment(scm_sla: Scm, geom: ArrayGeometry,
                    subtract_noise: float = 0.0) -> Scm:
    """Redundancy-averaged virtual-ULA covariance of a sparse-array SCM.

    ``subtract_noise`` optionally removes a known noise power from lag 0
    before Toeplitz construction (off by default; the eigendecomposition
    separates noise anyway).
    """
    lags, contiguous = difference_coarray(geom)
    if not contiguous:
        raise ValueError(
            f"difference co-array of {geom.indices} has holes; direct "
            "augmentation needs a contiguous co-array")
    mat = scm_sla.mat
    if mat.shape[0] != geom.m:
        raise ValueError("SCM size disagrees with geometry")
    idx = np.asarray(geom.indices)
    diffs = idx[:, None] - idx[None, :]
    r = np.empty(geom.n, dtype=complex)
    for lag in range(geom.n):
        r[lag] = mat[diffs == lag].mean()
    r[0] -= subtract_noise
    return toeplitz_from_lags(r)
