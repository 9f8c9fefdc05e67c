"""Synthetic multipath channels, the beam-domain model, aging and posteriors.

Ground truth comes from a seeded geometric cluster generator: each user gets
a handful of paths around a cluster center, which makes the beam-domain
power matrix sparse and known.  Channels can then be represented exactly in
the beam domain (``H = U G V^H`` with ``G = M .* W``), evolved block to
block by a first-order Gauss-Markov process, and summarized per slot by an
a-posteriori model with mean ``beta * U G_prev V^H`` and shrunken variance
``(1 - beta^2) * Omega``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import j0

from .steering import ArrayGeometry, SamplingGrid, SteeringMatrices, ula_steering, upa_steering


def crandn(rng: np.random.Generator, shape) -> np.ndarray:
    """Standard complex Gaussian draws, CN(0, 1) per entry."""
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


def _as_rng(seed_or_rng) -> np.random.Generator:
    if isinstance(seed_or_rng, np.random.Generator):
        return seed_or_rng
    return np.random.default_rng(seed_or_rng)


@dataclass
class ChannelPowerMatrix:
    """Beam-domain second-order statistics: ``omega = m_factor .* m_factor``.

    ``omega[i, j*n_x + l]`` is the variance of the beam coefficient coupling
    receive grid point ``i`` with transmit grid pair ``(j, l)``.  The square
    root factor is always taken nonnegative (the sign is unidentifiable).
    """

    omega: np.ndarray
    m_factor: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        self.omega = np.asarray(self.omega, dtype=float)
        if not np.all(np.isfinite(self.omega)):
            raise ValueError("omega must be finite")
        if np.any(self.omega < 0):
            raise ValueError("omega must be entry-wise nonnegative")
        if self.m_factor is None:
            self.m_factor = np.sqrt(self.omega)
        else:
            self.m_factor = np.asarray(self.m_factor, dtype=float)
            if not np.allclose(self.m_factor * self.m_factor, self.omega, atol=1e-12):
                raise ValueError("m_factor .* m_factor must reproduce omega")

    @classmethod
    def from_omega(cls, omega: np.ndarray) -> "ChannelPowerMatrix":
        return cls(omega=np.asarray(omega, dtype=float))

    @property
    def n_k(self) -> int:
        return self.omega.shape[0]

    @property
    def n_t(self) -> int:
        return self.omega.shape[1]


@dataclass
class BeamDomainChannel:
    """One realization of the beam-domain coefficient matrix ``G``."""

    g_tilde: np.ndarray
    slot: int = 0
    block: int = 0

    def __post_init__(self):
        self.g_tilde = np.asarray(self.g_tilde, dtype=complex)
        if not np.all(np.isfinite(self.g_tilde)):
            raise ValueError("beam coefficients must be finite")


def _gtilde(g) -> np.ndarray:
    return g.g_tilde if isinstance(g, BeamDomainChannel) else np.asarray(g, dtype=complex)


@dataclass
class PathSet:
    """Synthetic multipath description of one user's channel.

    ``power`` holds the mean square gain per path; ``gain`` one realization.
    """

    u_r: np.ndarray
    u_t: np.ndarray
    v_t: np.ndarray
    power: np.ndarray
    gain: np.ndarray

    def __post_init__(self):
        for name in ("u_r", "u_t", "v_t", "power"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float))
        self.gain = np.asarray(self.gain, dtype=complex)
        for cos in (self.u_r, self.u_t, self.v_t):
            if np.any(np.abs(cos) > 1):
                raise ValueError("directional cosines must lie in [-1, 1]")
        if not np.isfinite(self.power.sum()):
            raise ValueError("total path power must be finite")

    @property
    def n_paths(self) -> int:
        return self.u_r.size


def synth_paths(seed_or_rng, n_paths: int, center=None, spread: float = 0.1,
                total_power: float = 1.0) -> PathSet:
    """Draw a clustered set of paths for one user.

    Cosines are drawn around ``center = (u_r, u_t, v_t)`` (random if None)
    with Gaussian ``spread`` and clipped to [-1, 1]; per-path mean powers
    sum to ``total_power`` and gains are one CN(0, power) realization.
    """
    if n_paths < 1:
        raise ValueError("need at least one path")
    rng = _as_rng(seed_or_rng)
    if center is None:
        center = rng.uniform(-0.85, 0.85, size=3)
    cos = np.clip(np.asarray(center, dtype=float)[:, None]
                  + spread * rng.standard_normal((3, n_paths)), -1.0, 1.0)
    power = rng.dirichlet(np.ones(n_paths)) * total_power
    gain = np.sqrt(power) * crandn(rng, n_paths)
    return PathSet(u_r=cos[0], u_t=cos[1], v_t=cos[2], power=power, gain=gain)


def path_channel(paths: PathSet, geom: ArrayGeometry) -> np.ndarray:
    """Physical channel ``sum_i gain_i a_r(u_r) a_t(u_t, v_t)^H`` (m_k x m_t)."""
    h = np.zeros((geom.m_k, geom.m_t), dtype=complex)
    for i in range(paths.n_paths):
        ar = ula_steering(paths.u_r[i], geom.m_k, geom.delta_r)
        at = upa_steering(paths.u_t[i], paths.v_t[i], geom)
        h += paths.gain[i] * np.outer(ar, at.conj())
    return h


def _nearest_wrapped(values: np.ndarray, grid: np.ndarray, delta: float) -> np.ndarray:
    # distance on the circle of scaled cosines (period 1 in delta*u units),
    # so a path near u = +1 maps to the grid point at u = -1 when aliased
    d = np.abs(delta * (values[:, None] - grid[None, :])) % 1.0
    d = np.minimum(d, 1.0 - d)
    return np.argmin(d, axis=1)


def paths_to_omega(paths: PathSet, grid: SamplingGrid, geom: ArrayGeometry) -> ChannelPowerMatrix:
    """Bin path powers into the nearest grid cells to form ``omega``.

    Cell ``(i, j, l)`` accumulates the mean power of every path whose
    cosines are closest (in wrapped scaled-cosine distance) to
    ``(u_r[i], u_t[j], v_t[l])``; columns are ordered ``j * n_x + l``.
    """
    i_r = _nearest_wrapped(paths.u_r, grid.u_r, geom.delta_r)
    j_z = _nearest_wrapped(paths.u_t, grid.u_t, geom.delta_z)
    l_x = _nearest_wrapped(paths.v_t, grid.v_t, geom.delta_x)
    omega = np.zeros((grid.n_k, grid.n_t))
    np.add.at(omega, (i_r, j_z * grid.n_x + l_x), paths.power)
    return ChannelPowerMatrix.from_omega(omega)


def sample_beam_channel(power: ChannelPowerMatrix, rng: np.random.Generator,
                        slot: int = 0, block: int = 0) -> BeamDomainChannel:
    """Draw ``G = M .* W`` with i.i.d. CN(0, 1) entries in ``W``."""
    w = crandn(rng, power.omega.shape)
    return BeamDomainChannel(g_tilde=power.m_factor * w, slot=slot, block=block)


def assemble_H(g_tilde, steering: SteeringMatrices) -> np.ndarray:
    """Map beam coefficients to the antenna domain: ``H = U G V^H``."""
    g = _gtilde(g_tilde)
    if g.shape != (steering.n_k, steering.n_t):
        raise ValueError(f"beam matrix shape {g.shape} does not match grid "
                         f"({steering.n_k}, {steering.n_t})")
    return steering.u_mat @ g @ steering.v_mat.conj().T


def evolve_gauss_markov(g_prev, power: ChannelPowerMatrix, alpha: float,
                        rng: np.random.Generator) -> BeamDomainChannel:
    """One Gauss-Markov step ``G' = alpha G + sqrt(1 - alpha^2) (M .* W)``.

    The per-entry variance ``omega`` is stationary under this evolution.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("temporal correlation coefficient must be in [0, 1]")
    g = _gtilde(g_prev)
    w = crandn(rng, power.omega.shape)
    g_new = alpha * g + np.sqrt(1.0 - alpha ** 2) * (power.m_factor * w)
    if isinstance(g_prev, BeamDomainChannel):
        return BeamDomainChannel(g_tilde=g_new, slot=g_prev.slot, block=g_prev.block + 1)
    return BeamDomainChannel(g_tilde=g_new)


def aggregate_beta(alpha, n_b: int) -> float:
    """Slot-level aging coefficient from per-block correlations.

    ``beta = sqrt(mean(|alpha(n)|^2))`` over block lags
    ``n = n_b .. 2 n_b - 1`` (the lags between the estimation block of one
    slot and the payload blocks of the next).  ``alpha`` may be a callable
    of the lag or a sequence indexed by it.
    """
    if n_b < 1:
        raise ValueError("blocks per slot must be >= 1")
    lags = np.arange(n_b, 2 * n_b)
    if callable(alpha):
        vals = np.array([alpha(int(n)) for n in lags], dtype=float)
    else:
        seq = np.asarray(alpha, dtype=float)
        if seq.size < 2 * n_b:
            raise ValueError("alpha sequence must cover lags up to 2*n_b - 1")
        vals = seq[lags]
    if np.any(vals < 0) or np.any(vals > 1):
        raise ValueError("alpha values must lie in [0, 1]")
    return float(np.sqrt(np.mean(vals ** 2)))


def jakes_alpha(doppler_hz: float, block_s: float):
    """Jakes-model correlation ``alpha(n) = J0(2 pi f_d T_b n)`` clipped to [0, 1]."""
    def alpha(n: int) -> float:
        return float(np.clip(j0(2.0 * np.pi * doppler_hz * block_s * n), 0.0, 1.0))
    return alpha


def beta_from_speed(speed_kmh: float, carrier_hz: float, slot_s: float, n_b: int) -> float:
    """Map a user speed to the slot aging coefficient via the Jakes model."""
    doppler = (speed_kmh / 3.6) * carrier_hz / 299792458.0
    return aggregate_beta(jakes_alpha(doppler, slot_s / n_b), n_b)


@dataclass
class AgingProfile:
    """Per-block correlation sequence and its slot-level aggregate."""

    alpha: np.ndarray
    beta: float
    n_b: int

    def __post_init__(self):
        self.alpha = np.asarray(self.alpha, dtype=float)
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError("beta must lie in [0, 1]")

    @classmethod
    def from_alpha(cls, alpha, n_b: int) -> "AgingProfile":
        beta = aggregate_beta(alpha, n_b)
        if callable(alpha):
            seq = np.array([alpha(int(n)) for n in range(2 * n_b)], dtype=float)
        else:
            seq = np.asarray(alpha, dtype=float)[: 2 * n_b]
        return cls(alpha=seq, beta=beta, n_b=n_b)


@dataclass
class PosteriorChannel:
    """Statistical CSI for one user and slot.

    ``H = h_bar + sqrt(1 - beta^2) U (M .* W) V^H`` with ``h_bar``
    deterministic given the previous slot's beam coefficients.
    """

    h_bar: np.ndarray
    beta: float
    power: ChannelPowerMatrix
    steering: SteeringMatrices

    def __post_init__(self):
        self.h_bar = np.asarray(self.h_bar, dtype=complex)
        if not np.all(np.isfinite(self.h_bar)):
            raise ValueError("posterior mean must be finite")
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError("beta must lie in [0, 1]")
        if self.h_bar.shape != (self.steering.m_k, self.steering.m_t):
            raise ValueError("posterior mean shape does not match the array")

    @property
    def m_k(self) -> int:
        return self.h_bar.shape[0]

    @property
    def m_t(self) -> int:
        return self.h_bar.shape[1]


def posterior_model(g_est_prev_slot, beta: float, power: ChannelPowerMatrix,
                    steering: SteeringMatrices) -> PosteriorChannel:
    """Assemble the per-slot statistical CSI from the previous-slot estimate."""
    if not 0.0 <= beta <= 1.0:
        raise ValueError("beta must lie in [0, 1]")
    h_bar = beta * assemble_H(g_est_prev_slot, steering)
    return PosteriorChannel(h_bar=h_bar, beta=beta, power=power, steering=steering)


def sample_posterior(model: PosteriorChannel, rng: np.random.Generator,
                     size: int | None = None) -> np.ndarray:
    """Draw channel realizations from the posterior model.

    Returns an ``(m_k, m_t)`` matrix, or ``(size, m_k, m_t)`` when ``size``
    is given.
    """
    shape = model.power.omega.shape if size is None else (size,) + model.power.omega.shape
    w = crandn(rng, shape)
    scale = np.sqrt(max(0.0, 1.0 - model.beta ** 2))
    rough = model.steering.u_mat @ (model.power.m_factor * w) @ model.steering.v_mat.conj().T
    return model.h_bar + scale * rough


class PathPosterior:
    """Slot posterior of a physical path channel under per-path aging.

    Conditioned on the previous slot's gains, each gain evolves as
    ``g' = beta g + sqrt(1 - beta^2) CN(0, p)``, so the channel mean is
    ``beta H_prev`` and the random part has an exact per-path covariance.
    Used as evaluation ground truth when channels are generated off-grid.
    """

    def __init__(self, paths: PathSet, beta: float, geom: ArrayGeometry):
        if not 0.0 <= beta <= 1.0:
            raise ValueError("beta must lie in [0, 1]")
        self.paths = paths
        self.beta = beta
        self.geom = geom
        self._a_r = np.stack([ula_steering(u, geom.m_k, geom.delta_r) for u in paths.u_r])
        self._a_t = np.stack([upa_steering(u, v, geom)
                              for u, v in zip(paths.u_t, paths.v_t)])
        self.h_prev = (self._a_r.T * paths.gain) @ self._a_t.conj()

    @property
    def mean(self) -> np.ndarray:
        return self.beta * self.h_prev

    def eta(self, c: np.ndarray) -> np.ndarray:
        """Receive-side covariance of the random part, ``E{H' C H'^H}``."""
        quad = np.einsum('pi,ij,pj->p', self._a_t.conj(), c, self._a_t).real
        w = (1.0 - self.beta ** 2) * self.paths.power * quad
        return (self._a_r.T * w) @ self._a_r.conj()

    def sample(self, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
        n = 1 if size is None else size
        noise = crandn(rng, (n, self.paths.n_paths)) * np.sqrt(self.paths.power)
        gains = self.beta * self.paths.gain + np.sqrt(1.0 - self.beta ** 2) * noise
        h = np.einsum('sp,pi,pj->sij', gains, self._a_r, self._a_t.conj())
        return h[0] if size is None else h
