"""Steering vectors and sampled-steering-vector matrices for ULA / UPA arrays.

Conventions used throughout the package:

* Phase sign: element ``i`` of a length-``m`` steering vector is
  ``exp(-j 2 pi delta u i) / sqrt(m)`` where ``u`` is a directional cosine
  and ``delta`` the element spacing in wavelengths.
* Grid anchoring: an ``n``-point cosine grid satisfies
  ``delta * u_i = -0.5 + i / n`` for ``i = 0 .. n-1``, i.e. the scaled
  cosines tile ``[-0.5, 0.5)`` left-closed.  With fine factor 1 this is
  exactly the DFT grid, so the receive matrix ``U`` becomes unitary.
* Transmit matrix ordering: ``V = kron(V_z, V_x)`` (z factor first).
  Column ``j * n_x + l`` of ``V`` is the UPA steering vector at the grid
  pair ``(u_t[j], v_t[l])``; row ``p * m_x + q`` is BS antenna
  (p-th vertical, q-th horizontal).  The alternative x-first ordering
  differs only by a fixed antenna permutation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ArrayGeometry:
    """Physical antenna layout: a UPA at the BS, a ULA at each user.

    Spacings are in wavelengths (half-wavelength by default).
    """

    m_z: int
    m_x: int
    m_k: int = 1
    delta_z: float = 0.5
    delta_x: float = 0.5
    delta_r: float = 0.5

    def __post_init__(self):
        if self.m_z < 1 or self.m_x < 1 or self.m_k < 1:
            raise ValueError("antenna counts must be >= 1")
        if min(self.delta_z, self.delta_x, self.delta_r) <= 0:
            raise ValueError("antenna spacings must be > 0")

    @property
    def m_t(self) -> int:
        """Total number of BS antennas."""
        return self.m_z * self.m_x


@dataclass(frozen=True)
class SamplingGrid:
    """Uniform directional-cosine grids defining the beam-domain basis.

    ``u_r`` is the user-side grid (length ``n_k``), ``u_t`` the vertical and
    ``v_t`` the horizontal BS-side grids (lengths ``n_z``, ``n_x``).
    """

    n_k: int
    n_z: int
    n_x: int
    f_k: float
    f_z: float
    f_x: float
    u_r: np.ndarray
    u_t: np.ndarray
    v_t: np.ndarray

    @property
    def n_t(self) -> int:
        return self.n_z * self.n_x


@dataclass(frozen=True)
class SteeringMatrices:
    """Sampled steering-vector matrices.

    ``u_mat`` is the ``m_k x n_k`` receive matrix, ``v_mat`` the
    ``m_t x n_t`` transmit matrix ``kron(v_z, v_x)``.  All columns have unit
    norm; with fine factor ``f`` each matrix is a tight frame,
    ``A A^H = f I``.
    """

    u_mat: np.ndarray
    v_mat: np.ndarray
    v_z: np.ndarray
    v_x: np.ndarray

    @property
    def m_k(self) -> int:
        return self.u_mat.shape[0]

    @property
    def n_k(self) -> int:
        return self.u_mat.shape[1]

    @property
    def m_t(self) -> int:
        return self.v_mat.shape[0]

    @property
    def n_t(self) -> int:
        return self.v_mat.shape[1]


def ula_steering(u: float, m: int, delta: float = 0.5) -> np.ndarray:
    """Unit-norm ULA steering vector for directional cosine ``u``.

    Element ``i`` equals ``exp(-j 2 pi delta u i) / sqrt(m)``.
    """
    if m < 1:
        raise ValueError("antenna count m must be >= 1")
    if delta <= 0:
        raise ValueError("spacing must be > 0")
    if not np.isfinite(u):
        raise ValueError("directional cosine must be finite")
    phases = -2j * np.pi * delta * u * np.arange(m)
    return np.exp(phases) / np.sqrt(m)


def upa_steering(u_t: float, v_t: float, geom: ArrayGeometry) -> np.ndarray:
    """Unit-norm UPA steering vector, ``kron(z-factor, x-factor)``.

    ``u_t`` is the cosine against the vertical (z) axis, ``v_t`` against the
    horizontal (x) axis.
    """
    vz = ula_steering(u_t, geom.m_z, geom.delta_z)
    vx = ula_steering(v_t, geom.m_x, geom.delta_x)
    return np.kron(vz, vx)


def _cosine_grid(m: int, fine: float, delta: float) -> tuple[int, np.ndarray]:
    n_float = fine * m
    n = int(round(n_float))
    if fine < 1:
        raise ValueError("fine factor must be >= 1")
    if abs(n_float - n) > 1e-9:
        raise ValueError(f"fine factor {fine} times {m} antennas is not an integer grid size")
    return n, (-0.5 + np.arange(n) / n) / delta


def build_grids(geom: ArrayGeometry, fine_factors=(1.0, 1.0, 1.0)) -> SamplingGrid:
    """Build the uniform cosine grids for fine factors ``(f_k, f_z, f_x)``.

    Grid sizes ``n = f * m`` must be integral; the scaled cosines
    ``delta * u`` cover one full period ``[-0.5, 0.5)``.
    """
    f_k, f_z, f_x = fine_factors
    n_k, u_r = _cosine_grid(geom.m_k, f_k, geom.delta_r)
    n_z, u_t = _cosine_grid(geom.m_z, f_z, geom.delta_z)
    n_x, v_t = _cosine_grid(geom.m_x, f_x, geom.delta_x)
    return SamplingGrid(n_k=n_k, n_z=n_z, n_x=n_x, f_k=float(f_k), f_z=float(f_z),
                        f_x=float(f_x), u_r=u_r, u_t=u_t, v_t=v_t)


def _steering_columns(cosines: np.ndarray, m: int, delta: float) -> np.ndarray:
    # columns are ula_steering(u) for each grid cosine
    phases = -2j * np.pi * delta * np.outer(np.arange(m), cosines)
    return np.exp(phases) / np.sqrt(m)


def build_steering_matrices(geom: ArrayGeometry, grid: SamplingGrid) -> SteeringMatrices:
    """Assemble ``U``, ``V_z``, ``V_x`` and ``V = kron(V_z, V_x)`` on the grid."""
    u_mat = _steering_columns(grid.u_r, geom.m_k, geom.delta_r)
    v_z = _steering_columns(grid.u_t, geom.m_z, geom.delta_z)
    v_x = _steering_columns(grid.v_t, geom.m_x, geom.delta_x)
    v_mat = np.kron(v_z, v_x)
    return SteeringMatrices(u_mat=u_mat, v_mat=v_mat, v_z=v_z, v_x=v_x)
