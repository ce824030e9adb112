"""Subspace DOA machinery: eigen split, MUSIC spectrum, Root-MUSIC.

These operate on virtual-ULA covariances (typically the output of
``covariance.coarray_augment``), so an m-antenna sparse array can resolve up
to n-1 sources on its n-element co-array.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .covariance import Scm
from .errors import EstimationFailureError
from .geometry import theta_from_electrical, steering_vector, ula

# Roots closer to the unit circle than this are treated as on it and skipped,
# so only one member of each conjugate-reciprocal pair can be selected.
_CIRCLE_TOL = 1e-12


@dataclass
class EigenSplit:
    """Eigenvalues (descending) and the signal/noise eigenbases."""

    values: np.ndarray        # (n,) real, descending
    signal_basis: np.ndarray  # (n, k)
    noise_basis: np.ndarray   # (n, n-k)


@dataclass
class DoaEstimate:
    """Sorted angle estimates in radians."""

    thetas: np.ndarray
    method: str

    def __post_init__(self):
        t = np.sort(np.asarray(self.thetas, dtype=float))
        if np.any(t < 0) or np.any(t > np.pi):
            raise ValueError("estimates must lie in [0, pi]")
        self.thetas = t

    @property
    def k(self) -> int:
        return self.thetas.size


def eig_hermitian(scm: Scm, k: int) -> EigenSplit:
    """Split the spectrum into the k largest (signal) and the rest (noise)."""
    n = scm.size
    if not 1 <= k < n:
        raise ValueError(f"need 1 <= k < n, got k={k}, n={n}")
    w, v = np.linalg.eigh(scm.mat)  # ascending
    w = w[::-1]
    v = v[:, ::-1]
    return EigenSplit(values=w, signal_basis=v[:, :k], noise_basis=v[:, k:])


def music_spectrum(split: EigenSplit, grid) -> np.ndarray:
    """Pseudospectrum 1 / ||V^H a(theta)||^2 over the angle grid."""
    grid = np.asarray(grid, dtype=float)
    if grid.size == 0:
        raise ValueError("grid must be nonempty")
    n = split.noise_basis.shape[0]
    geom = ula(n)
    a = np.stack([steering_vector(geom, t) for t in grid], axis=1)
    proj = split.noise_basis.conj().T @ a
    return 1.0 / np.sum(np.abs(proj) ** 2, axis=0)


def root_music(scm: Scm, k: int) -> DoaEstimate:
    """Root-MUSIC on a virtual-ULA covariance.

    Builds the noise projector C = V V^H, sums its diagonals into the
    coefficients of a degree-2(n-1) polynomial, roots it via the companion
    matrix (``np.roots``), keeps the k roots strictly inside the unit circle
    closest to it, and maps each root phase phi to theta = arccos(phi/pi).
    """
    n = scm.size
    if k >= n:
        raise ValueError("Root-MUSIC needs a non-trivial noise subspace (k < n)")
    split = eig_hermitian(scm, k)
    c = split.noise_basis @ split.noise_basis.conj().T
    # coefficient of z^(l + n - 1) is the sum of the l-th diagonal of C;
    # np.roots wants the highest power first.
    coeffs = np.array([np.trace(c, offset=l) for l in range(n - 1, -n, -1)])
    roots = np.roots(coeffs)
    inside = roots[np.abs(roots) <= 1.0 - _CIRCLE_TOL]
    if inside.size < k:
        raise EstimationFailureError(
            f"only {inside.size} admissible roots for k={k}")
    sel = inside[np.argsort(-np.abs(inside))[:k]]
    thetas = theta_from_electrical(np.angle(sel) / np.pi)
    return DoaEstimate(thetas=thetas, method="root_music")


def principal_angle_distance(scm_a: Scm, scm_b: Scm, k: int) -> float:
    """L2 norm of the principal angles between the two signal subspaces."""
    if scm_a.size != scm_b.size:
        raise ValueError("SCM sizes differ")
    ua = eig_hermitian(scm_a, k).signal_basis
    ub = eig_hermitian(scm_b, k).signal_basis
    sig = np.linalg.svd(ua.conj().T @ ub, compute_uv=False)
    return float(np.linalg.norm(np.arccos(np.clip(sig, 0.0, 1.0))))
