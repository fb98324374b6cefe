"""Transmit/receive chain over the multiple-access channel.

Composite noise and interference covariances, MMSE equalization, per-resource
symbol error, SINR and sum rate.  Rates are natural-log (nats) throughout so
that the MMSE filter satisfies ``mu = exp(-rate)`` per resource element
exactly; divide by ``ln 2`` for bits.

All operations are pure over immutable inputs; per-resource-element
computations are vectorized over the (n, k) grid.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import ChannelSet
from .config import ScenarioConfig

HERMITIAN_RTOL = 1e-9
PSD_RTOL = 1e-9
TRACE_RTOL = 1e-9
BEAM_NORM_TOL = 1e-9


class AllocationError(ValueError):
    """Raised when an allocation violates a scheduling/power/beam constraint."""


@dataclass
class Allocation:
    """Per-(q, n, k) scheduling, power, beamformers and receive filters."""

    alpha: np.ndarray  # {0,1}, (Q, N, K)
    p: np.ndarray      # watts, (Q, N, K)
    w: np.ndarray      # complex, (Q, N, K, N_T)
    v: np.ndarray      # complex, (Q, N, K, N_R)

    def b(self) -> np.ndarray:
        """Composite transmit vectors b = alpha * sqrt(p) * w, (Q, N, K, N_T)."""
        return (self.alpha * np.sqrt(self.p))[..., None] * self.w

    def scheduled_counts(self) -> np.ndarray:
        """r_q = number of scheduled resource elements per user."""
        return self.alpha.reshape(self.alpha.shape[0], -1).sum(axis=1).astype(int)

    def validate(self, config: ScenarioConfig) -> None:
        """Check constraints: binary scheduling, block and power budgets,
        unit beamformer norms."""
        if not np.all((self.alpha == 0) | (self.alpha == 1)):
            raise AllocationError("alpha must be binary")
        if np.any(self.alpha * self.p < 0):
            raise AllocationError("alpha * p must be nonnegative")
        blocks = self.scheduled_counts()
        if np.any(blocks > config.B_q):
            raise AllocationError(
                f"scheduled blocks {blocks} exceed B_q={config.B_q}")
        power = (self.alpha * self.p).reshape(config.Q, -1).sum(axis=1)
        if np.any(power > config.P_q * (1 + 1e-9)):
            raise AllocationError(f"power {power} exceeds budget P_q={config.P_q}")
        norms = np.linalg.norm(self.w, axis=-1)
        if np.any(norms > 1 + BEAM_NORM_TOL):
            raise AllocationError("beamformer norm exceeds 1")


@dataclass
class JammingStrategy:
    """Jamming covariances C_u per (n, k) plus a strategy tag."""

    C_u: np.ndarray  # complex, (N, K, N_J, N_J)
    kind: str        # {"none", "barrage", "worst_case"}

    def total_power(self) -> float:
        return float(np.real(np.trace(self.C_u, axis1=-2, axis2=-1)).sum())

    def validate(self, P_J: float) -> None:
        """Check Hermitian/PSD structure and the total trace budget."""
        herm_err = np.linalg.norm(self.C_u - self.C_u.conj().swapaxes(-1, -2))
        if herm_err > HERMITIAN_RTOL * max(np.linalg.norm(self.C_u), 1e-30):
            raise ValueError("jamming covariance is not Hermitian")
        eigvals = np.linalg.eigvalsh(self.C_u)
        traces = np.real(np.trace(self.C_u, axis1=-2, axis2=-1))
        floor = -PSD_RTOL * np.maximum(traces, 1e-30)
        if np.any(eigvals.min(axis=-1) < floor):
            raise ValueError("jamming covariance is not PSD")
        if self.total_power() > P_J * (1 + TRACE_RTOL) + 1e-15:
            raise ValueError("jamming power exceeds budget P_J")


@dataclass
class LinkReport:
    """Per-link error/rate summary for one allocation under one noise field."""

    mse_per_re: np.ndarray    # mu_qnk, (Q, N, K)
    mse_per_user: np.ndarray  # mu_q over scheduled REs, (Q,)
    sinr: np.ndarray          # gamma_qnk against C_z, (Q, N, K)
    rate_per_user: np.ndarray  # R_q [nats], (Q,)
    sum_rate: float           # R [nats]
    r_q: np.ndarray           # scheduled-block counts, (Q,)


def composite_noise_cov(G_nk: np.ndarray, C_u: np.ndarray, sigma2: float) -> np.ndarray:
    """C_z = G C_u G^H + sigma2 * I for a single resource element."""
    n_r, n_j = G_nk.shape
    if C_u.shape != (n_j, n_j):
        raise ValueError(f"C_u shape {C_u.shape} does not match G {G_nk.shape}")
    return G_nk @ C_u @ G_nk.conj().T + sigma2 * np.eye(n_r)


def composite_noise_grid(channels: ChannelSet, strategy: JammingStrategy,
                         sigma2: float) -> np.ndarray:
    """Composite noise covariance on the whole (n, k) grid, (N, K, N_R, N_R)."""
    g = channels.G
    cov = np.einsum("nkra,nkab,nksb->nkrs", g, strategy.C_u, g.conj())
    cov = cov + sigma2 * np.eye(g.shape[-2])
    return cov


def interference_cov(alloc: Allocation, channels: ChannelSet, C_z: np.ndarray,
                     q: int, n: int, k: int) -> np.ndarray:
    """Interference-plus-noise covariance X_qnk for one resource element."""
    n_r = channels.H.shape[-2]
    if C_z.shape != (n_r, n_r):
        raise ValueError("C_z dimension mismatch")
    x = np.array(C_z, dtype=complex)
    b = alloc.b()
    for qq in range(channels.H.shape[0]):
        if qq == q:
            continue
        c = channels.H[qq, n, k] @ b[qq, n, k]
        x += np.outer(c, c.conj())
    return x


def interference_grid(alloc: Allocation, channels: ChannelSet,
                      cov_z: np.ndarray, q: int) -> np.ndarray:
    """X_qnk on the whole grid for user q, (N, K, N_R, N_R)."""
    b = alloc.b()
    c = np.einsum("qnkrt,qnkt->qnkr", channels.H, b)  # received vectors
    mask = np.arange(channels.H.shape[0]) != q
    outer = np.einsum("qnkr,qnks->nkrs", c[mask], c[mask].conj())
    return cov_z + outer


def mmse_filter(H: np.ndarray, b: np.ndarray, X: np.ndarray) -> np.ndarray:
    """MMSE receive filter v = (X + H b b^H H^H)^{-1} H b."""
    c = H @ b
    a = X + np.outer(c, c.conj())
    return np.linalg.solve(a, c)


def symbol_error(H: np.ndarray, b: np.ndarray, v: np.ndarray,
                 X: np.ndarray) -> float:
    """Expected symbol error mu = |v^H H b - 1|^2 + v^H X v.

    ``b`` is the composite transmit vector alpha * sqrt(p) * w; unit symbol
    variance is assumed.  With the MMSE filter this equals 1/(1 + SINR).
    """
    c = H @ b
    data = abs(np.vdot(v, c) - 1.0) ** 2
    noise = np.real(np.vdot(v, X @ v))
    return float(data + noise)


def sinr(w: np.ndarray, H: np.ndarray, C: np.ndarray) -> float:
    """SINR gamma = w^H H^H C^{-1} H w for a positive definite C."""
    a = H @ w
    return float(np.real(np.vdot(a, np.linalg.solve(C, a))))


def _sinr_grid(alloc: Allocation, channels: ChannelSet, cov: np.ndarray) -> np.ndarray:
    """gamma_qnk = w^H H^H cov^{-1} H w over the grid; cov is (N,K,R,R)."""
    a = np.einsum("qnkrt,qnkt->qnkr", channels.H, alloc.w)
    solved = np.linalg.solve(cov[None], a[..., None])[..., 0]
    return np.maximum(np.real(np.einsum("qnkr,qnkr->qnk", a.conj(), solved)), 0.0)


def sum_rate(alloc: Allocation, channels: ChannelSet, cov_z: np.ndarray):
    """Achievable sum rate and per-user rates in nats.

    Returns ``(R, R_q, gamma)`` where ``R`` sums
    ``log(1 + sum_q alpha p gamma_qnk(C_z))`` over the grid, and ``R_q`` sums
    the per-user terms ``alpha * log(1 + p * gamma_qnk(X_qnk))`` against the
    user's interference-plus-noise covariance.
    """
    gamma = _sinr_grid(alloc, channels, cov_z)
    load = (alloc.alpha * alloc.p * gamma).sum(axis=0)
    total = float(np.log1p(load).sum())

    q_count = channels.H.shape[0]
    rate_q = np.zeros(q_count)
    for q in range(q_count):
        x_grid = interference_grid(alloc, channels, cov_z, q)
        a = np.einsum("nkrt,nkt->nkr", channels.H[q], alloc.w[q])
        solved = np.linalg.solve(x_grid, a[..., None])[..., 0]
        gamma_x = np.maximum(np.real(np.einsum("nkr,nkr->nk", a.conj(), solved)), 0.0)
        rate_q[q] = float(
            (alloc.alpha[q] * np.log1p(alloc.p[q] * gamma_x)).sum())
    return total, rate_q, gamma


def sum_rate_joint(alloc: Allocation, channels: ChannelSet, cov_z: np.ndarray) -> float:
    """Joint-decoding mutual information sum log det(C + sum_q c c^H) - log det(C).

    This is the exact quantity the per-user water-filling updates ascend; the
    scalar-SINR sum rate of :func:`sum_rate` is its single-user-per-RE
    specialization.
    """
    b = alloc.b()
    c = np.einsum("qnkrt,qnkt->qnkr", channels.H, b)
    signal = np.einsum("qnkr,qnks->nkrs", c, c.conj())
    _, logdet_full = np.linalg.slogdet(cov_z + signal)
    _, logdet_noise = np.linalg.slogdet(cov_z)
    return float(np.real(logdet_full - logdet_noise).sum())


def link_report(alloc: Allocation, channels: ChannelSet, cov_z: np.ndarray) -> LinkReport:
    """Evaluate symbol errors and rates of an allocation under a noise field.

    Uses the receive filters stored in the allocation, which may have been
    designed against a different covariance than ``cov_z``; the symbol error
    then reflects the mismatch.
    """
    q_count, n, k = alloc.alpha.shape
    b = alloc.b()
    mse = np.empty((q_count, n, k))
    for q in range(q_count):
        x_grid = interference_grid(alloc, channels, cov_z, q)
        c = np.einsum("nkrt,nkt->nkr", channels.H[q], b[q])
        data = np.abs(np.einsum("nkr,nkr->nk", alloc.v[q].conj(), c) - 1.0) ** 2
        noise = np.real(np.einsum("nkr,nkrs,nks->nk",
                                  alloc.v[q].conj(), x_grid, alloc.v[q]))
        mse[q] = data + noise
    total, rate_q, gamma = sum_rate(alloc, channels, cov_z)
    mu_q = (alloc.alpha * mse).reshape(q_count, -1).sum(axis=1)
    return LinkReport(mse_per_re=mse, mse_per_user=mu_q, sinr=gamma,
                      rate_per_user=rate_q, sum_rate=total,
                      r_q=alloc.scheduled_counts())


def sample_complex_normal(cov: np.ndarray, shape, rng: np.random.Generator) -> np.ndarray:
    """Draw circularly-symmetric complex Gaussians with covariance ``cov``.

    Handles singular PSD covariances via eigendecomposition.  Returns an
    array of the requested leading ``shape`` plus the covariance dimension.
    """
    dim = cov.shape[-1]
    eigval, eigvec = np.linalg.eigh(cov)
    factor = eigvec * np.sqrt(np.clip(eigval, 0.0, None))[..., None, :]
    white = (rng.standard_normal(tuple(shape) + (dim,))
             + 1j * rng.standard_normal(tuple(shape) + (dim,))) / np.sqrt(2.0)
    return np.einsum("...rs,...s->...r", factor, white)


def transmit_receive(alloc: Allocation, channels: ChannelSet,
                     strategy: JammingStrategy, symbols: np.ndarray,
                     sigma2: float, rng: np.random.Generator) -> np.ndarray:
    """Simulate y = sum_q H x + G u + eta and equalize with the stored filters.

    ``symbols`` has shape ``(..., Q, N, K)``; leading axes are independent
    channel uses.  Jamming draws u ~ CN(0, C_u) and noise eta ~ CN(0,
    sigma2*I) are fresh per use.  Returns the estimates s_hat with the same
    shape.
    """
    symbols = np.asarray(symbols, dtype=complex)
    lead = symbols.shape[:-3]
    n, k = alloc.alpha.shape[1:]
    n_r = channels.H.shape[-2]

    c = np.einsum("qnkrt,qnkt->qnkr", channels.H, alloc.b())
    y = np.einsum("...qnk,qnkr->...nkr", symbols, c)

    u = sample_complex_normal(strategy.C_u, lead + (n, k), rng)
    y = y + np.einsum("nkrj,...nkj->...nkr", channels.G, u)
    eta = (rng.standard_normal(lead + (n, k, n_r))
           + 1j * rng.standard_normal(lead + (n, k, n_r))) * np.sqrt(sigma2 / 2.0)
    y = y + eta

    return np.einsum("qnkr,...nkr->...qnk", alloc.v.conj(), y)
