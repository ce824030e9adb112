"""Sparse linear array geometry: index sets, steering vectors, co-arrays.

Antennas sit on a half-wavelength grid at positions ``indices[i] * d`` with
``d = lambda/2``.  Steering phases use the electrical angle ``u(theta) =
cos(theta)``, which is injective on [0, pi]; entry ``i`` of a steering vector
is ``exp(j*pi*(indices[i]-1)*u)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

PRESETS = {
    "mra5": (1, 2, 5, 8, 10),
    "mra79": (1, 2, 3, 6, 11, 16, 27, 38, 49, 60, 66, 72, 78, 79),
}


@dataclass(frozen=True)
class ArrayGeometry:
    """Antenna index set on the half-wavelength grid, 1 = first position."""

    indices: tuple[int, ...]

    def __post_init__(self):
        idx = tuple(int(i) for i in self.indices)
        object.__setattr__(self, "indices", idx)
        if len(idx) == 0:
            raise ValueError("geometry needs at least one antenna")
        if idx[0] != 1:
            raise ValueError("first antenna index must be 1")
        if any(b <= a for a, b in zip(idx, idx[1:])):
            raise ValueError("antenna indices must be strictly increasing")

    @property
    def m(self) -> int:
        """Number of physical antennas."""
        return len(self.indices)

    @property
    def n(self) -> int:
        """Aperture in grid units (largest index)."""
        return self.indices[-1]

    @property
    def is_ula(self) -> bool:
        return self.m == self.n


def ula(n: int) -> ArrayGeometry:
    """Uniform linear array with ``n`` contiguous elements."""
    return ArrayGeometry(tuple(range(1, n + 1)))


def resolve_geometry(spec) -> ArrayGeometry:
    """Build a geometry from a preset name or an explicit index list."""
    if isinstance(spec, str):
        if spec not in PRESETS:
            raise ValueError(f"unknown geometry preset {spec!r}")
        return ArrayGeometry(PRESETS[spec])
    return ArrayGeometry(tuple(spec))


def electrical_angle(theta) -> np.ndarray:
    """u(theta) = cos(theta), the scalar multiplying pi*(index-1) in the phase."""
    return np.cos(theta)


def theta_from_electrical(u) -> np.ndarray:
    """Inverse of :func:`electrical_angle`, clipped into the valid branch."""
    return np.arccos(np.clip(u, -1.0, 1.0))


def steering_vector(geom: ArrayGeometry, theta: float) -> np.ndarray:
    """Unit-modulus response vector of the array toward angle ``theta`` (rad)."""
    if not 0.0 <= theta <= np.pi:
        raise ValueError(f"theta must lie in [0, pi], got {theta}")
    k = np.asarray(geom.indices, dtype=float) - 1.0
    return np.exp(1j * np.pi * k * electrical_angle(theta))


def response_matrix(geom: ArrayGeometry, thetas: Sequence[float]) -> np.ndarray:
    """m x K matrix whose k-th column is the steering vector of ``thetas[k]``."""
    thetas = np.atleast_1d(np.asarray(thetas, dtype=float))
    if thetas.size == 0:
        raise ValueError("need at least one angle")
    return np.stack([steering_vector(geom, t) for t in thetas], axis=1)


class DifferenceCoarray(NamedTuple):
    lags: np.ndarray  # sorted distinct nonnegative lags
    contiguous: bool  # True iff lags == {0, ..., n-1}


def difference_coarray(geom: ArrayGeometry) -> DifferenceCoarray:
    """All nonnegative pairwise index differences; negative lags are implied
    by Hermitian symmetry of covariances."""
    idx = np.asarray(geom.indices)
    lags = np.unique(np.abs(idx[:, None] - idx[None, :]))
    contiguous = lags.size == geom.n and lags[-1] == geom.n - 1
    return DifferenceCoarray(lags, bool(contiguous))


def sum_coarray(geom: ArrayGeometry) -> np.ndarray:
    """Distinct values of ``indices[i] + indices[j] - 2`` over unordered pairs
    (including i = j), the virtual positions seen by fourth-order statistics."""
    idx = np.asarray(geom.indices)
    return np.unique(idx[:, None] + idx[None, :] - 2)


def select_rows(geom: ArrayGeometry, full: np.ndarray) -> np.ndarray:
    """Pick the physical-antenna rows out of a full-aperture (length n) vector
    or of the leading axis of a matrix."""
    full = np.asarray(full)
    if full.shape[0] != geom.n:
        raise ValueError(f"expected leading dimension {geom.n}, got {full.shape[0]}")
    sel = np.asarray(geom.indices) - 1
    return full[sel]
