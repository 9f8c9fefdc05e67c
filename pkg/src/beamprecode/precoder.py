"""Robust multi-user precoding on the unit sum-power sphere.

Stacked precoders live on the sphere ``sum_k tr(P_k P_k^H) = 1``.  Both
solvers iterate ``P_k <- (B + mu I)^{-1} A_k P_k`` followed by a power
renormalization, where ``A_k`` / ``B`` collect gradient matrices of the
expected weighted sum-rate under the posterior channel model:

* ``algorithm1``: expectations estimated by Monte Carlo over posterior
  channel draws (expected-rate objective).
* ``algorithm2``: closed forms from the posterior mean and the covariance
  functionals ``eta`` / ``eta_tilde`` (upper-bound objective).

RZF, SLNR and an iterative WMMSE precoder (perfect CSI) are included as
baselines.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .channel import PosteriorChannel, crandn, sample_posterior


@dataclass
class PrecoderSet:
    """K precoding matrices (``m_t x d_k`` each) sharing one power budget."""

    mats: list
    weights: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        self.mats = [np.asarray(p, dtype=complex) for p in self.mats]
        for p in self.mats:
            if not np.all(np.isfinite(p)):
                raise ValueError("precoder entries must be finite")
            if p.ndim != 2 or p.shape[1] < 1:
                raise ValueError("each precoder must be m_t x d_k with d_k >= 1")
        if self.weights is None:
            self.weights = np.ones(len(self.mats))
        else:
            self.weights = np.asarray(self.weights, dtype=float)
            if np.any(self.weights <= 0):
                raise ValueError("rate weights must be positive")

    @property
    def n_users(self) -> int:
        return len(self.mats)

    def total_power(self) -> float:
        return float(sum(np.sum(np.abs(p) ** 2) for p in self.mats))

    def normalized(self) -> "PrecoderSet":
        power = self.total_power()
        if power <= 0:
            raise ValueError("cannot normalize an all-zero precoder set")
        s = 1.0 / np.sqrt(power)
        return PrecoderSet([s * p for p in self.mats], self.weights.copy())

    def stack(self) -> np.ndarray:
        return np.concatenate([p.reshape(-1, order="F") for p in self.mats])

    def copy(self) -> "PrecoderSet":
        return PrecoderSet([p.copy() for p in self.mats], self.weights.copy())


def random_precoders(m_t: int, d_list, rng: np.random.Generator,
                     weights=None) -> PrecoderSet:
    """Random complex Gaussian precoders normalized to the power sphere."""
    mats = [crandn(rng, (m_t, d)) for d in d_list]
    return PrecoderSet(mats, weights).normalized()


@dataclass
class UserLink:
    """Everything the precoder needs to know about one user."""

    model: PosteriorChannel
    noise_var: float
    weight: float = 1.0

    def __post_init__(self):
        if self.noise_var <= 0:
            raise ValueError("noise variance must be > 0")
        if self.weight <= 0:
            raise ValueError("rate weight must be > 0")


def _hermitize(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + a.conj().T)


def eta(model: PosteriorChannel, c: np.ndarray) -> np.ndarray:
    """Receive-side covariance induced by a transmit covariance ``c``.

    ``E{H' C H'^H} = (1 - beta^2) U diag(lam) U^H`` with
    ``lam_i = sum_j omega[i, j] (V^H C V)[j, j]`` for the zero-mean channel
    part ``H'``.  Linear in ``c``; returns a Hermitian PSD matrix.
    """
    st = model.steering
    if c.shape != (st.m_t, st.m_t):
        raise ValueError("transmit covariance has wrong dimensions")
    d = np.einsum("ji,jk,ki->i", st.v_mat.conj(), c, st.v_mat).real
    lam = model.power.omega @ d
    scale = 1.0 - model.beta ** 2
    return scale * ((st.u_mat * lam) @ st.u_mat.conj().T)


def eta_tilde(model: PosteriorChannel, c: np.ndarray) -> np.ndarray:
    """Transmit-side covariance induced by a receive covariance ``c``.

    Mirror of :func:`eta` with the roles of ``U``/``V`` and the row/column
    sums of ``omega`` swapped; it is the adjoint map,
    ``tr(A eta(C)) = tr(eta_tilde(A) C)``.
    """
    st = model.steering
    if c.shape != (st.m_k, st.m_k):
        raise ValueError("receive covariance has wrong dimensions")
    d = np.einsum("ji,jk,ki->i", st.u_mat.conj(), c, st.u_mat).real
    lam = model.power.omega.T @ d
    scale = 1.0 - model.beta ** 2
    return scale * ((st.v_mat * lam) @ st.v_mat.conj().T)


def interference_cov(k: int, precoders: PrecoderSet, links) -> np.ndarray:
    """Interference-plus-noise covariance at user ``k``.

    ``R_k = noise_var I + sum_{l != k} (Hbar P_l P_l^H Hbar^H
    + eta(P_l P_l^H))``; Hermitian positive definite.
    """
    link = links[k]
    m_k = link.model.m_k
    c_int = np.zeros((link.model.m_t, link.model.m_t), dtype=complex)
    for l, p in enumerate(precoders.mats):
        if l != k:
            c_int += p @ p.conj().T
    r = link.noise_var * np.eye(m_k, dtype=complex)
    r += link.model.h_bar @ c_int @ link.model.h_bar.conj().T
    r += eta(link.model, c_int)
    return _hermitize(r)


def signal_cov_mean(k: int, precoders: PrecoderSet, links) -> np.ndarray:
    """Mean received signal covariance ``E{H P_k P_k^H H^H}`` at user ``k``."""
    link = links[k]
    p = precoders.mats[k]
    c = p @ p.conj().T
    s = link.model.h_bar @ c @ link.model.h_bar.conj().T + eta(link.model, c)
    return _hermitize(s)


def _logdet_hermitian(a: np.ndarray) -> float:
    sign, val = np.linalg.slogdet(a)
    return float(val)


def expected_rate_mc(k: int, precoders: PrecoderSet, links, n_samples: int,
                     rng: np.random.Generator) -> float:
    """Monte-Carlo expected rate of user ``k`` (natural log).

    Averages ``logdet(I + R_k^{-1} H P_k P_k^H H^H)`` over posterior channel
    draws with the fixed interference covariance ``R_k`` treated as known.
    """
    if n_samples < 1:
        raise ValueError("need at least one sample")
    rates, _ = _rate_samples(k, precoders, links, n_samples, rng)
    return float(rates.mean())


def _rate_samples(k: int, precoders: PrecoderSet, links, n_samples: int,
                  rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    link = links[k]
    p = precoders.mats[k]
    d = p.shape[1]
    r = interference_cov(k, precoders, links)
    h = sample_posterior(link.model, rng, size=n_samples)
    hp = h @ p  # (n, m_k, d)
    rinv_hp = np.linalg.solve(r, hp)
    inner = np.eye(d) + np.einsum("nmd,nme->nde", hp.conj(), rinv_hp)
    _, logdets = np.linalg.slogdet(inner)
    return logdets.real, h


def expected_wsr_mc(precoders: PrecoderSet, links, n_samples: int,
                    rng: np.random.Generator) -> tuple[float, float]:
    """Expected weighted sum-rate and its Monte-Carlo standard error."""
    total = np.zeros(n_samples)
    for k, link in enumerate(links):
        rates, _ = _rate_samples(k, precoders, links, n_samples, rng)
        total += link.weight * rates
    return float(total.mean()), float(total.std(ddof=1) / np.sqrt(n_samples))


def rate_upper_bound(k: int, precoders: PrecoderSet, links) -> float:
    """Deterministic upper bound ``logdet(I + R_k^{-1} E{H P P^H H^H})``."""
    r = interference_cov(k, precoders, links)
    s = signal_cov_mean(k, precoders, links)
    m_k = links[k].model.m_k
    return _logdet_hermitian(np.eye(m_k) + np.linalg.solve(r, s))


def weighted_sum_upper_bound(precoders: PrecoderSet, links) -> float:
    return float(sum(link.weight * rate_upper_bound(k, precoders, links)
                     for k, link in enumerate(links)))


def grad_matrices_mc(k: int, precoders: PrecoderSet, links, n_samples: int,
                     rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Monte-Carlo gradient matrices of user ``k``'s expected rate.

    ``E_k = w_k E{H^H Rcheck^{-1} H}`` with ``Rcheck = R_k + H P_k P_k^H H^H``
    and ``F_k = E{H^H R_k^{-1} H} - E{H^H E{Rcheck^{-1}} H}``.  The inner
    expectation ``E{Rcheck^{-1}}`` is estimated once from the same sample
    set and reused, trading a little bias for variance.  Both outputs are
    Hermitian-symmetrized.
    """
    if n_samples < 1:
        raise ValueError("need at least one sample")
    link = links[k]
    p = precoders.mats[k]
    r = interference_cov(k, precoders, links)
    h = sample_posterior(link.model, rng, size=n_samples)
    hp = h @ p
    rcheck = r[None, :, :] + hp @ hp.conj().transpose(0, 2, 1)
    rcheck_inv = np.linalg.inv(rcheck)
    e_k = np.einsum("nmi,nmq,nqj->ij", h.conj(), rcheck_inv, h) / n_samples
    mid = np.linalg.inv(r) - rcheck_inv.mean(axis=0)
    f_k = np.einsum("nmi,mq,nqj->ij", h.conj(), mid, h) / n_samples
    return _hermitize(link.weight * e_k), _hermitize(f_k)


def grad_matrices_closed(k: int, precoders: PrecoderSet, links) -> tuple[np.ndarray, np.ndarray]:
    """Closed-form gradient matrices of user ``k``'s rate upper bound.

    With ``Rp = E{Rcheck} = R_k + E{H P_k P_k^H H^H}``,
    ``E'_k = w_k (Hbar^H Rp^{-1} Hbar + eta_tilde(Rp^{-1}))`` and
    ``F'_k = Hbar^H (R^{-1} - Rp^{-1}) Hbar + eta_tilde(R^{-1} - Rp^{-1})``.
    """
    link = links[k]
    hbar = link.model.h_bar
    m_k = link.model.m_k
    r = interference_cov(k, precoders, links)
    rp = _hermitize(r + signal_cov_mean(k, precoders, links))
    r_inv = np.linalg.solve(r, np.eye(m_k, dtype=complex))
    rp_inv = np.linalg.solve(rp, np.eye(m_k, dtype=complex))
    e_k = link.weight * (hbar.conj().T @ rp_inv @ hbar + eta_tilde(link.model, rp_inv))
    diff = r_inv - rp_inv
    f_k = hbar.conj().T @ diff @ hbar + eta_tilde(link.model, diff)
    return _hermitize(e_k), _hermitize(f_k)


def riemannian_grad(precoders: PrecoderSet, e_list, b_list) -> tuple[list, float]:
    """Project the Euclidean gradient onto the sphere's tangent space.

    Returns per-user ``E_k P_k - B_k P_k - mu P_k`` with
    ``mu = sum_k Re tr(P_k^H (E_k - B_k) P_k)``; for a unit-power set the
    stacked gradient satisfies ``Re<p, grad> = 0``.
    """
    mu = 0.0
    directions = []
    for p, e_k, b_k in zip(precoders.mats, e_list, b_list):
        d = e_k @ p - b_k @ p
        directions.append(d)
        mu += float(np.real(np.sum(p.conj() * d)))
    grads = [d - mu * p for d, p in zip(directions, precoders.mats)]
    return grads, mu


def grad_norm(grads) -> float:
    return float(np.sqrt(sum(np.sum(np.abs(g) ** 2) for g in grads)))


def _sphere_update(precoders: PrecoderSet, a_list, b_common: np.ndarray,
                   mu: float) -> tuple[PrecoderSet, bool]:
    """Apply ``P_k <- (B + mu I)^{-1} A_k P_k`` and renormalize.

    One factorization of the user-independent matrix serves all K solves;
    a numerically singular system is retried with a small ridge.
    """
    m_t = b_common.shape[0]
    lhs = b_common + mu * np.eye(m_t)
    rhs = np.concatenate([a_k @ p for a_k, p in zip(a_list, precoders.mats)], axis=1)
    regularized = False
    try:
        sol = np.linalg.solve(lhs, rhs)
    except np.linalg.LinAlgError:
        eps = 1e-10 * max(np.trace(b_common).real / m_t, 1.0)
        sol = np.linalg.solve(lhs + eps * np.eye(m_t), rhs)
        regularized = True
    mats, offset = [], 0
    for p in precoders.mats:
        d = p.shape[1]
        mats.append(sol[:, offset:offset + d])
        offset += d
    return PrecoderSet(mats, precoders.weights.copy()).normalized(), regularized


def _assemble_mc(precoders: PrecoderSet, links, n_samples: int,
                 rng: np.random.Generator):
    e_list, f_list = [], []
    for k in range(len(links)):
        e_k, f_k = grad_matrices_mc(k, precoders, links, n_samples, rng)
        e_list.append(e_k)
        f_list.append(f_k)
    b_common = sum(link.weight * f for link, f in zip(links, f_list))
    a_list = [e + link.weight * f for e, f, link in zip(e_list, f_list, links)]
    mu = sum(float(np.real(np.sum(p.conj() * ((a - b_common) @ p))))
             for p, a in zip(precoders.mats, a_list))
    return a_list, b_common, e_list, f_list, mu


def _assemble_closed(precoders: PrecoderSet, links):
    e_list, f_list = [], []
    for k in range(len(links)):
        e_k, f_k = grad_matrices_closed(k, precoders, links)
        e_list.append(e_k)
        f_list.append(f_k)
    b_common = sum(link.weight * f for link, f in zip(links, f_list))
    a_list = [e + link.weight * f for e, f, link in zip(e_list, f_list, links)]
    mu = sum(float(np.real(np.sum(p.conj() * ((a - b_common) @ p))))
             for p, a in zip(precoders.mats, a_list))
    return a_list, b_common, e_list, f_list, mu


def algorithm1_step(precoders: PrecoderSet, links, n_samples: int,
                    rng: np.random.Generator) -> PrecoderSet:
    """One Monte-Carlo solver iteration (covariances, E/F matrices, update)."""
    a_list, b_common, _, _, mu = _assemble_mc(precoders, links, n_samples, rng)
    new, _ = _sphere_update(precoders, a_list, b_common, mu)
    return new


def algorithm2_step(precoders: PrecoderSet, links) -> PrecoderSet:
    """One closed-form solver iteration (deterministic)."""
    a_list, b_common, _, _, mu = _assemble_closed(precoders, links)
    new, _ = _sphere_update(precoders, a_list, b_common, mu)
    return new


@dataclass
class SolverReport:
    """Per-iteration bookkeeping for one solver run."""

    method: str
    objective: list
    grad_norms: list
    mu_values: list
    seconds: list
    iterations: int = 0
    termination: str = ""
    regularized: int = 0

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "objective": [float(x) for x in self.objective],
            "grad_norms": [float(x) for x in self.grad_norms],
            "mu_values": [float(x) for x in self.mu_values],
            "seconds": [float(x) for x in self.seconds],
            "iterations": self.iterations,
            "termination": self.termination,
            "regularized": self.regularized,
        }


def solve(precoders_init: PrecoderSet | None, links, method: str = "algorithm2",
          max_iters: int = 20, tol: float = 0.0, n_samples: int = 500,
          rng: np.random.Generator | None = None) -> tuple[PrecoderSet, SolverReport]:
    """Iterate the chosen solver from ``precoders_init`` (RZF by default).

    Runs until the largest entry change falls below ``tol`` or ``max_iters``
    is reached.  The report records the objective (upper-bound sum-rate for
    ``algorithm2``, Monte-Carlo expected sum-rate for ``algorithm1``),
    Riemannian gradient norms, ``mu`` and wall-clock per iteration.
    """
    if method not in ("algorithm1", "algorithm2"):
        raise ValueError(f"unknown method {method!r}")
    if rng is None:
        rng = np.random.default_rng()
    precoders = (rzf_precoder(links) if precoders_init is None
                 else precoders_init.normalized())

    def objective(p: PrecoderSet) -> float:
        if method == "algorithm2":
            return weighted_sum_upper_bound(p, links)
        return expected_wsr_mc(p, links, n_samples, rng)[0]

    report = SolverReport(method=method, objective=[objective(precoders)],
                          grad_norms=[], mu_values=[], seconds=[])
    termination = "max_iters"
    for _ in range(max_iters):
        t0 = time.perf_counter()
        if method == "algorithm2":
            a_list, b_common, _, f_list, mu = _assemble_closed(precoders, links)
        else:
            a_list, b_common, _, f_list, mu = _assemble_mc(precoders, links, n_samples, rng)
        b_list = [b_common - link.weight * f for link, f in zip(links, f_list)]
        e_list = [a - link.weight * f for a, f, link in zip(a_list, f_list, links)]
        grads, _ = riemannian_grad(precoders, e_list, b_list)
        new, regularized = _sphere_update(precoders, a_list, b_common, mu)
        delta = max(np.max(np.abs(pn - po)) for pn, po in zip(new.mats, precoders.mats))
        precoders = new
        report.iterations += 1
        report.grad_norms.append(grad_norm(grads))
        report.mu_values.append(mu)
        report.seconds.append(time.perf_counter() - t0)
        report.objective.append(objective(precoders))
        report.regularized += int(regularized)
        if tol > 0 and delta < tol:
            termination = "tol"
            break
    report.termination = termination
    return precoders, report


def rzf_precoder(links, d_list=None) -> PrecoderSet:
    """Regularized zero-forcing from the posterior mean channels.

    Columns of ``Hbar^H (Hbar Hbar^H + K noise_var I)^{-1}`` partitioned per
    user (first ``d_k`` of each user's block), normalized to unit sum power.
    """
    k_users = len(links)
    hbar_all = np.vstack([link.model.h_bar for link in links])
    noise = links[0].noise_var
    gram = hbar_all @ hbar_all.conj().T + k_users * noise * np.eye(hbar_all.shape[0])
    full = hbar_all.conj().T @ np.linalg.inv(gram)
    mats, offset = [], 0
    for k, link in enumerate(links):
        m_k = link.model.m_k
        d = m_k if d_list is None else d_list[k]
        if d > m_k:
            raise ValueError("cannot serve more streams than user antennas")
        mats.append(full[:, offset:offset + d])
        offset += m_k
    weights = np.array([link.weight for link in links])
    return PrecoderSet(mats, weights).normalized()


def slnr_precoder(links, d_list=None) -> PrecoderSet:
    """Max-SLNR beamformers from the posterior mean channels.

    Per user, the dominant generalized eigenvectors of
    ``(Hbar_k^H Hbar_k, sum_{l != k} Hbar_l^H Hbar_l + noise_var I)``;
    users get equal power before the global normalization.
    """
    from scipy.linalg import eigh

    k_users = len(links)
    m_t = links[0].model.m_t
    grams = [link.model.h_bar.conj().T @ link.model.h_bar for link in links]
    mats = []
    for k, link in enumerate(links):
        d = link.model.m_k if d_list is None else d_list[k]
        leak = link.noise_var * np.eye(m_t, dtype=complex)
        for l in range(k_users):
            if l != k:
                leak += grams[l]
        _, vecs = eigh(_hermitize(grams[k]), _hermitize(leak))
        p = vecs[:, -d:][:, ::-1]
        norm = np.linalg.norm(p)
        mats.append(p / (norm * np.sqrt(k_users)))
    weights = np.array([link.weight for link in links])
    return PrecoderSet(mats, weights).normalized()


def perfect_csi_wsr(h_list, precoders: PrecoderSet, noise_var: float,
                    weights=None) -> float:
    """Deterministic weighted sum-rate for known channels (natural log)."""
    if weights is None:
        weights = precoders.weights
    total = 0.0
    for k, h in enumerate(h_list):
        m_k = h.shape[0]
        r = noise_var * np.eye(m_k, dtype=complex)
        for l, p in enumerate(precoders.mats):
            if l != k:
                hp = h @ p
                r += hp @ hp.conj().T
        hp = h @ precoders.mats[k]
        total += weights[k] * _logdet_hermitian(
            np.eye(m_k) + np.linalg.solve(_hermitize(r), hp @ hp.conj().T))
    return float(total)


def wmmse_precoder(h_list, noise_var: float, precoders_init: PrecoderSet,
                   max_iters: int = 100, weights=None) -> tuple[PrecoderSet, list]:
    """Iterative WMMSE precoder for perfect CSI (sum-power constraint).

    Classic alternating updates of MMSE receivers, MSE weights and transmit
    precoders; the power constraint is met by bisecting the Lagrange
    multiplier of the precoder update.  Serves as an independent baseline
    for cross-checking the robust solver in the perfect-CSI limit.
    """
    if weights is None:
        weights = precoders_init.weights
    p_mats = [p.copy() for p in precoders_init.normalized().mats]
    k_users = len(h_list)
    m_t = h_list[0].shape[1]
    trace = [perfect_csi_wsr(h_list, PrecoderSet(p_mats, weights), noise_var, weights)]
    for _ in range(max_iters):
        # MMSE receive filters and MSE weights
        u_list, w_list = [], []
        for k, h in enumerate(h_list):
            m_k = h.shape[0]
            cov = noise_var * np.eye(m_k, dtype=complex)
            for p in p_mats:
                hp = h @ p
                cov += hp @ hp.conj().T
            hp_k = h @ p_mats[k]
            u = np.linalg.solve(_hermitize(cov), hp_k)
            u_list.append(u)
            d = hp_k.shape[1]
            w_list.append(np.linalg.inv(np.eye(d) - u.conj().T @ hp_k))
        m0 = np.zeros((m_t, m_t), dtype=complex)
        rhs_list = []
        for k, h in enumerate(h_list):
            hu = h.conj().T @ u_list[k]
            m0 += weights[k] * hu @ w_list[k] @ hu.conj().T
            rhs_list.append(weights[k] * hu @ w_list[k])
        m0 = _hermitize(m0)

        def power_at(mu: float) -> float:
            lhs = m0 + mu * np.eye(m_t)
            return sum(np.sum(np.abs(np.linalg.solve(lhs, rhs)) ** 2)
                       for rhs in rhs_list)

        lo, hi = 0.0, 1.0
        while power_at(hi) > 1.0:
            hi *= 2.0
            if hi > 1e12:
                break
        try:
            feasible_lo = power_at(lo) <= 1.0
        except np.linalg.LinAlgError:
            feasible_lo = False
        if feasible_lo:
            mu = 0.0
        else:
            for _ in range(200):
                mu = 0.5 * (lo + hi)
                if power_at(mu) > 1.0:
                    lo = mu
                else:
                    hi = mu
            mu = hi
        lhs = m0 + mu * np.eye(m_t)
        p_mats = [np.linalg.solve(lhs, rhs) for rhs in rhs_list]
        trace.append(perfect_csi_wsr(h_list, PrecoderSet(p_mats, weights), noise_var, weights))
    return PrecoderSet(p_mats, np.asarray(weights, dtype=float)), trace
