"""Estimation of beam-domain channel power matrices and instantaneous
coefficients from uplink pilots.

The power matrix ``Omega`` is not directly observable: the entry-wise
second moment ``Phi`` of the pilot-correlated observation satisfies

    Phi = T_kr Omega T_t + O_kr N O_t

where the transform matrices depend only on pilots and steering matrices.
``Omega = M .* M`` is recovered by minimizing the KL divergence between
``Phi`` and the model above with a multiplicative fixed-point update on
``M``.  Instantaneous beam coefficients are then estimated by a linear
MMSE filter with prior covariance ``diag(vec(Omega))``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .channel import BeamDomainChannel, ChannelPowerMatrix, _gtilde, crandn
from .steering import SteeringMatrices


@dataclass
class PilotConfig:
    """Per-user uplink pilot matrices (``m_k x t`` each) and noise level.

    Pilots of different users must be orthogonal, ``X_k X_l^H = 0``.
    """

    pilots: list
    noise_var: float

    def __post_init__(self):
        self.pilots = [np.asarray(x, dtype=complex) for x in self.pilots]
        if self.noise_var < 0:
            raise ValueError("noise variance must be >= 0")
        t = self.t
        for x in self.pilots:
            if x.shape[1] != t:
                raise ValueError("all pilots must share the same length")
        for k in range(len(self.pilots)):
            for l in range(k + 1, len(self.pilots)):
                cross = self.pilots[k] @ self.pilots[l].conj().T
                if np.max(np.abs(cross)) > 1e-10:
                    raise ValueError(f"pilots of users {k} and {l} are not orthogonal")

    @property
    def n_users(self) -> int:
        return len(self.pilots)

    @property
    def t(self) -> int:
        return self.pilots[0].shape[1]


def unitary_pilots(antenna_counts, t: int | None = None, noise_var: float = 0.0) -> PilotConfig:
    """Orthogonal pilots from row blocks of a unitary DFT matrix.

    User ``k`` gets ``antenna_counts[k]`` consecutive rows, so
    ``X_k X_k^H = I`` and cross products vanish exactly.  Requires
    ``t >= sum(antenna_counts)``.
    """
    counts = list(antenna_counts)
    total = sum(counts)
    if t is None:
        t = total
    if t < total:
        raise ValueError("pilot length must be at least the total antenna count")
    idx = np.arange(t)
    dft = np.exp(-2j * np.pi * np.outer(idx, idx) / t) / np.sqrt(t)
    pilots, offset = [], 0
    for m in counts:
        pilots.append(dft[offset:offset + m])
        offset += m
    return PilotConfig(pilots=pilots, noise_var=noise_var)


def simulate_pilot_slot(g_list, pilot: PilotConfig, steering: SteeringMatrices,
                        rng: np.random.Generator) -> np.ndarray:
    """Received pilot block ``Y = sum_k V* G_k^T U^T X_k + Z`` (m_t x t)."""
    y = np.zeros((steering.m_t, pilot.t), dtype=complex)
    vc = steering.v_mat.conj()
    ut = steering.u_mat.T
    for g, x in zip(g_list, pilot.pilots):
        y += vc @ _gtilde(g).T @ ut @ x
    if pilot.noise_var > 0:
        y += np.sqrt(pilot.noise_var) * crandn(rng, y.shape)
    return y


def pilot_slot_from_channels(h_list, pilot: PilotConfig,
                             rng: np.random.Generator) -> np.ndarray:
    """Received pilot block from explicit antenna-domain channels."""
    y = np.zeros((h_list[0].shape[1], pilot.t), dtype=complex)
    for h, x in zip(h_list, pilot.pilots):
        y += h.T @ x
    if pilot.noise_var > 0:
        y += np.sqrt(pilot.noise_var) * crandn(rng, y.shape)
    return y


@dataclass
class PhiMatrix:
    """Sample-averaged entry-wise second moment of the pilot observation."""

    phi: np.ndarray
    s: int

    def __post_init__(self):
        self.phi = np.asarray(self.phi, dtype=float)
        if np.any(self.phi < 0) or not np.all(np.isfinite(self.phi)):
            raise ValueError("phi must be finite and nonnegative")


def compute_phi(ys, pilot: PilotConfig, steering: SteeringMatrices, user: int = 0) -> PhiMatrix:
    """Average ``|U^H X_k^* Y^T V|^2`` over received pilot slots ``ys``."""
    ys = list(ys)
    if not ys:
        raise ValueError("need at least one received pilot slot")
    front = steering.u_mat.conj().T @ pilot.pilots[user].conj()
    acc = np.zeros((steering.n_k, steering.n_t))
    for y in ys:
        z = front @ y.T @ steering.v_mat
        acc += (z * z.conj()).real
    return PhiMatrix(phi=acc / len(ys), s=len(ys))


@dataclass
class TransformSet:
    """The five fixed matrices relating ``Omega`` to ``Phi``.

    ``t_kr = |U^H X^* X^T U|^2`` and ``t_t = |V^H V|^2`` act on the power
    matrix; ``o_kr N o_t`` with ``N = noise_var * ones(t, m_t)`` is the
    constant noise floor.
    """

    t_kr: np.ndarray
    t_t: np.ndarray
    o_kr: np.ndarray
    n_mat: np.ndarray
    o_t: np.ndarray
    noise_term: np.ndarray = field(init=False)

    def __post_init__(self):
        self.noise_term = self.o_kr @ self.n_mat @ self.o_t

    def model(self, m_factor: np.ndarray) -> np.ndarray:
        """Model second moment for the square-root factor ``m_factor``."""
        m = np.asarray(m_factor, dtype=float)
        return self.t_kr @ (m * m) @ self.t_t + self.noise_term

    def model_from_omega(self, omega: np.ndarray) -> np.ndarray:
        return self.t_kr @ np.asarray(omega, dtype=float) @ self.t_t + self.noise_term


def build_transforms(pilot: PilotConfig, steering: SteeringMatrices, user: int = 0) -> TransformSet:
    """Assemble the transform matrices for one user's pilot."""
    x = pilot.pilots[user]
    gram_r = steering.u_mat.conj().T @ x.conj() @ x.T @ steering.u_mat
    gram_t = steering.v_mat.conj().T @ steering.v_mat
    ux = steering.u_mat.conj().T @ x.conj()
    return TransformSet(
        t_kr=(gram_r * gram_r.conj()).real,
        t_t=(gram_t * gram_t.conj()).real,
        o_kr=(ux * ux.conj()).real,
        n_mat=pilot.noise_var * np.ones((pilot.t, steering.m_t)),
        o_t=(steering.v_mat * steering.v_mat.conj()).real,
    )


def second_moment_transform(power, c1: np.ndarray, c2: np.ndarray) -> np.ndarray:
    """Exact second moment of a transformed beam matrix.

    For ``G`` with independent zero-mean entries of variance ``omega``,
    ``E{(C1 G C2^H) .* conj(C1 G C2^H)} = (C1 .* C1^*) omega (C2^H .* C2^T)``.
    """
    omega = power.omega if isinstance(power, ChannelPowerMatrix) else np.asarray(power)
    c1 = np.asarray(c1)
    c2 = np.asarray(c2)
    if c1.shape[1] != omega.shape[0] or c2.shape[1] != omega.shape[1]:
        raise ValueError("transform dimensions do not conform with omega")
    t1 = (c1 * c1.conj()).real
    t2 = (c2 * c2.conj()).real.T
    return t1 @ omega @ t2


def _ones_sandwich(transforms: TransformSet) -> np.ndarray:
    # (T_t J T_kr)^T with J all ones equals outer(rowsum(T_kr), colsum(T_t))
    return np.outer(transforms.t_kr.sum(axis=1), transforms.t_t.sum(axis=0))


def _check_domain(phi: np.ndarray, model: np.ndarray):
    bad = (phi > 0) & (model <= 0)
    if np.any(bad):
        raise ValueError("model second moment is non-positive where phi > 0")


def kl_objective(m_factor: np.ndarray, phi, transforms: TransformSet) -> float:
    """Variable part of the KL divergence between ``phi`` and the model.

    ``g(M) = -sum(phi .* log(model)) + sum(T_kr (M .* M) T_t)``; the full
    divergence differs from ``g`` only by terms independent of ``M``.
    """
    phi = phi.phi if isinstance(phi, PhiMatrix) else np.asarray(phi, dtype=float)
    m = np.asarray(m_factor, dtype=float)
    model = transforms.model(m)
    _check_domain(phi, model)
    log_term = np.sum(phi * np.log(np.where(phi > 0, model, 1.0)))
    return float(np.sum(transforms.t_kr @ (m * m) @ transforms.t_t) - log_term)


def kl_divergence(m_factor: np.ndarray, phi, transforms: TransformSet) -> float:
    """Full KL divergence (``g`` plus the model-independent terms)."""
    phi = phi.phi if isinstance(phi, PhiMatrix) else np.asarray(phi, dtype=float)
    g = kl_objective(m_factor, phi, transforms)
    entropy = np.sum(phi * np.log(np.where(phi > 0, phi, 1.0)))
    return float(g + entropy - phi.sum() + transforms.noise_term.sum())


def kl_gradient(m_factor: np.ndarray, phi, transforms: TransformSet) -> np.ndarray:
    """Entry-wise partial derivatives of the KL objective ``g``.

    With ``Q = phi ./ model`` and ``D = T_kr ones T_t``,
    ``dg/dM = 2 (D - T_kr Q T_t) .* M``.
    """
    phi = phi.phi if isinstance(phi, PhiMatrix) else np.asarray(phi, dtype=float)
    m = np.asarray(m_factor, dtype=float)
    model = transforms.model(m)
    _check_domain(phi, model)
    q = np.where(phi > 0, phi / np.where(model > 0, model, 1.0), 0.0)
    return 2.0 * (_ones_sandwich(transforms) - transforms.t_kr @ q @ transforms.t_t) * m


@dataclass
class FixedPointResult:
    """Outcome of the multiplicative power-matrix fit."""

    power: ChannelPowerMatrix
    g_trace: np.ndarray
    iterations: int
    converged: bool
    frozen: int = 0


def default_m_init(phi, transforms: TransformSet) -> np.ndarray:
    """Uniform positive start scaled so the model total matches ``phi``.

    Multiplicative updates cannot revive zero entries, so every entry
    starts strictly positive (unbiased support discovery).
    """
    phi = phi.phi if isinstance(phi, PhiMatrix) else np.asarray(phi, dtype=float)
    denom = _ones_sandwich(transforms).sum()
    target = phi.sum() - transforms.noise_term.sum()
    if target <= 0:
        target = max(phi.sum(), 1.0) * 1e-3
    return np.full(phi.shape, np.sqrt(target / denom))


def fixed_point_fit(phi, transforms: TransformSet, m_init: np.ndarray | None = None,
                    max_iters: int = 500, tol: float = 1e-8) -> FixedPointResult:
    """Fit ``Omega = M .* M`` to ``phi`` by the multiplicative update.

    Each entry is scaled by ``(T_kr Q T_t + D) / (2 D)`` (zero exactly at a
    stationary point of the KL objective).  Entries with a zero denominator
    (degenerate transforms) are frozen at their current value and counted.
    Stops when the largest entry change, relative to the matrix scale,
    drops below ``tol``; non-convergence raises a warning, not an error.
    """
    phi_arr = phi.phi if isinstance(phi, PhiMatrix) else np.asarray(phi, dtype=float)
    m = default_m_init(phi_arr, transforms) if m_init is None else np.array(m_init, dtype=float)
    if np.any(m < 0):
        raise ValueError("initial m_factor must be nonnegative")
    denom = _ones_sandwich(transforms)
    zero_den = denom <= 0
    frozen = int(zero_den.sum())
    g_trace = [kl_objective(m, phi_arr, transforms)]
    converged = False
    iterations = 0
    for iterations in range(1, max_iters + 1):
        model = transforms.model(m)
        q = np.where(phi_arr > 0, phi_arr / np.where(model > 0, model, 1.0), 0.0)
        num = transforms.t_kr @ q @ transforms.t_t
        factor = np.where(zero_den, 1.0, (num + denom) / np.where(zero_den, 1.0, 2.0 * denom))
        m_new = factor * m
        if not np.all(np.isfinite(m_new)):
            raise RuntimeError(f"fixed-point update produced non-finite entries at "
                               f"iteration {iterations}")
        delta = np.max(np.abs(m_new - m)) / max(np.max(np.abs(m)), 1e-300)
        m = m_new
        g_trace.append(kl_objective(m, phi_arr, transforms))
        if delta < tol:
            converged = True
            break
    if not converged:
        warnings.warn(f"power-matrix fit did not reach tol={tol} within "
                      f"{max_iters} iterations", RuntimeWarning)
    return FixedPointResult(power=ChannelPowerMatrix.from_omega(m * m),
                            g_trace=np.asarray(g_trace), iterations=iterations,
                            converged=converged, frozen=frozen)


def mmse_beam_estimate(y: np.ndarray, pilot: PilotConfig, steering: SteeringMatrices,
                       power: ChannelPowerMatrix, user: int = 0) -> BeamDomainChannel:
    """Linear MMSE estimate of the beam coefficients from one pilot block.

    Solves ``g_hat = R A^H (A R A^H + noise_var I)^{-1} vec(Y^T)`` with
    ``A = V^* kron (X_k^T U)`` and ``R = diag(vec(omega))``; entries with
    zero prior variance come out exactly zero.  Dense solve: the observation
    dimension is ``t * m_t``, which caps the supported problem sizes.
    """
    a = np.kron(steering.v_mat.conj(), pilot.pilots[user].T @ steering.u_mat)
    r_diag = power.omega.reshape(-1, order="F")
    y_vec = np.asarray(y, dtype=complex).T.reshape(-1, order="F")
    ar = a * r_diag  # A @ diag(r)
    inner = ar @ a.conj().T + pilot.noise_var * np.eye(a.shape[0])
    try:
        sol = np.linalg.solve(inner, y_vec)
    except np.linalg.LinAlgError as exc:
        raise ValueError("MMSE inner matrix is singular; add noise (ridge) "
                         "or reduce the grid size") from exc
    g_vec = r_diag * (a.conj().T @ sol)
    g = g_vec.reshape(power.omega.shape, order="F")
    return BeamDomainChannel(g_tilde=g)
