"""Sensing-assisted anti-jamming optimizer.

A DoA-only surrogate covariance stands in for the unknown jamming-plus-noise
statistics, and a joint iterative water-filling loop assigns scheduling,
beamforming and power per user.  The per-user subproblem is solved exactly:
top-eigenvalue beamforming per resource element, largest-B_q scheduling, and
water-filling over the scheduled eigenvalues.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .channel import ChannelSet, array_manifold
from .config import ScenarioConfig
from .phy import Allocation, interference_grid, sum_rate_joint

POWER_ITER_MAX = 200
POWER_ITER_RTOL = 1e-10
EIGPAIR_RESIDUAL_RTOL = 1e-8
WATERFILL_TOL = 1e-12


@dataclass(frozen=True)
class SurrogateCov:
    """DoA-only stand-in for the composite noise covariance.

    ``C_tilde = eta * A A^H + sigma2 * I`` with A the receive array manifold
    evaluated at the jammer DoAs.  Constant over (n, k) for static DoAs.
    """

    C_tilde: np.ndarray  # (N_R, N_R)
    eta: float
    doas_G: np.ndarray


@dataclass
class OptimizerReport:
    iterations: int
    rate_trajectory: list = field(default_factory=list)
    converged: bool = False
    final_alloc: Allocation | None = None


def surrogate_covariance(doas_G, eta: float, sigma2: float, n_r: int) -> SurrogateCov:
    """Build the surrogate covariance from known jamming DoAs.

    With ``eta == 0`` (or no DoAs) this degenerates to the background-noise
    covariance ``sigma2 * I``, i.e. a jamming-unaware design.
    """
    if eta < 0:
        raise ValueError("eta must be >= 0")
    if sigma2 <= 0:
        raise ValueError("sigma2 must be > 0")
    doas = np.atleast_1d(np.asarray(doas_G, dtype=float))
    if doas.size == 0:
        if eta > 0:
            warnings.warn("surrogate covariance requested with eta > 0 but no "
                          "jamming DoAs; falling back to sigma2 * I")
        cov = sigma2 * np.eye(n_r, dtype=complex)
        return SurrogateCov(C_tilde=cov, eta=eta, doas_G=doas)
    manifold = array_manifold(doas, n_r)
    cov = eta * (manifold @ manifold.conj().T) + sigma2 * np.eye(n_r)
    return SurrogateCov(C_tilde=cov, eta=eta, doas_G=doas)


def max_eigpair(mats: np.ndarray, max_iter: int = POWER_ITER_MAX,
                rtol: float = POWER_ITER_RTOL):
    """Dominant eigenpair of Hermitian PSD matrices via power iteration.

    Accepts a single matrix or a stack ``(..., n, n)``.  Entries that stall
    before reaching the residual tolerance fall back to a dense
    eigendecomposition.  Returns ``(lam, u)`` with unit-norm eigenvectors.
    """
    mats = np.asarray(mats)
    single = mats.ndim == 2
    if single:
        mats = mats[None]
    lead = mats.shape[:-2]
    dim = mats.shape[-1]

    # fixed pseudo-random start keeps results reproducible across calls
    start_rng = np.random.default_rng(0x5EED)
    v = start_rng.standard_normal(dim) + 1j * start_rng.standard_normal(dim)
    v = np.broadcast_to(v / np.linalg.norm(v), lead + (dim,)).copy()

    lam = np.zeros(lead)
    for _ in range(max_iter):
        mv = np.einsum("...rs,...s->...r", mats, v)
        norm = np.linalg.norm(mv, axis=-1)
        dead = norm < 1e-300
        safe = np.where(dead, 1.0, norm)
        v_new = np.where(dead[..., None], v, mv / safe[..., None])
        lam = np.real(np.einsum("...r,...rs,...s->...", v_new.conj(), mats, v_new))
        residual = np.linalg.norm(
            np.einsum("...rs,...s->...r", mats, v_new) - lam[..., None] * v_new,
            axis=-1)
        v = v_new
        if np.all(residual <= np.maximum(rtol * np.abs(lam), 1e-300)):
            break

    residual = np.linalg.norm(
        np.einsum("...rs,...s->...r", mats, v) - lam[..., None] * v, axis=-1)
    stalled = residual > EIGPAIR_RESIDUAL_RTOL * np.maximum(np.abs(lam), 1e-300)
    if np.any(stalled):
        flat_m = mats.reshape((-1, dim, dim))
        flat_v = v.reshape((-1, dim))
        flat_l = lam.reshape(-1)
        for idx in np.flatnonzero(stalled.reshape(-1)):
            eigval, eigvec = np.linalg.eigh(flat_m[idx])
            flat_l[idx] = eigval[-1]
            flat_v[idx] = eigvec[:, -1]
        v = flat_v.reshape(lead + (dim,))
        lam = flat_l.reshape(lead)

    lam = np.maximum(lam, 0.0)
    if single:
        return float(lam[0]), v[0]
    return lam, v


def waterfill(lambdas: np.ndarray, total_power: float,
              tol: float = WATERFILL_TOL) -> np.ndarray:
    """Water-filling powers p_i = (mu - 1/lambda_i)^+ with sum p = total_power.

    Bisection on the water level locates the active set; the level is then
    solved exactly on it so the budget and KKT complementary slackness hold
    to rounding error.  Zero (dead) channels always receive zero power.
    """
    lam = np.asarray(lambdas, dtype=float)
    powers = np.zeros_like(lam)
    if total_power <= 0 or lam.size == 0:
        return powers
    alive = lam > 0
    if not np.any(alive):
        return powers
    with np.errstate(divide="ignore"):
        inv = np.where(alive, 1.0 / np.where(alive, lam, 1.0), np.inf)

    lo, hi = 0.0, float(inv[alive].max() + total_power)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if np.clip(mid - inv, 0.0, None).sum() > total_power:
            hi = mid
        else:
            lo = mid
        if hi - lo <= tol:
            break
    mu = 0.5 * (lo + hi)

    # exact water level on the bisection-selected active set
    active = (mu - inv) > 0
    if not np.any(active):
        # budget below bisection resolution; only the best channel is active
        powers[int(np.argmax(lam))] = total_power
        return powers
    for _ in range(lam.size + 1):
        mu = (total_power + inv[active].sum()) / active.sum()
        refreshed = (mu - inv) > 0
        if np.array_equal(refreshed, active):
            break
        active = refreshed
    powers[active] = np.maximum(mu - inv[active], 0.0)
    return powers


def single_user_update(q: int, channels: ChannelSet, x_grid: np.ndarray,
                       power_budget: float, max_blocks: int):
    """Optimal scheduling, beamforming and power for one user given X_qnk.

    Per resource element, the beamformer is the dominant eigenvector of
    ``H^H X^{-1} H`` and its eigenvalue is the whitened channel gain;
    the ``max_blocks`` largest gains are scheduled (stable (n, k)-order
    tie-break) and powered by water-filling.
    """
    h = channels.H[q]
    n, k = h.shape[:2]
    solved = np.linalg.solve(x_grid, h)
    m = np.einsum("nkrt,nkrs->nkts", h.conj(), solved)
    m = 0.5 * (m + m.conj().swapaxes(-1, -2))
    lam, u = max_eigpair(m)

    flat = lam.reshape(-1)
    n_sched = min(max_blocks, flat.size)
    order = np.argsort(-flat, kind="stable")[:n_sched]

    alpha = np.zeros(n * k)
    alpha[order] = 1.0
    powers = np.zeros(n * k)
    powers[order] = waterfill(flat[order], power_budget)
    w = np.zeros((n * k, h.shape[-1]), dtype=complex)
    w[order] = u.reshape(-1, h.shape[-1])[order]

    return alpha.reshape(n, k), powers.reshape(n, k), w.reshape(n, k, -1)


def _design_filters(alloc: Allocation, channels: ChannelSet,
                    cov_design: np.ndarray) -> None:
    """Fill alloc.v with MMSE filters computed against the design covariance."""
    b = alloc.b()
    for q in range(channels.H.shape[0]):
        x_grid = interference_grid(alloc, channels, cov_design, q)
        c = np.einsum("nkrt,nkt->nkr", channels.H[q], b[q])
        full = x_grid + np.einsum("nkr,nks->nkrs", c, c.conj())
        alloc.v[q] = np.linalg.solve(full, c[..., None])[..., 0]


def optimize(channels: ChannelSet, config: ScenarioConfig,
             surrogate: SurrogateCov, tol: float = 1e-6,
             max_iter: int = 50):
    """Joint iterative scheduling, beamforming and power allocation.

    Users update round-robin against the surrogate-based interference-plus-
    noise covariance until the joint sum rate stops improving.  Receive
    filters are set once after convergence (the transmit-side objective does
    not depend on them).  Returns ``(Allocation, OptimizerReport)``.
    """
    q_count, n, k = channels.H.shape[:3]
    n_t, n_r = config.N_T, config.N_R
    cov = np.broadcast_to(surrogate.C_tilde, (n, k, n_r, n_r))

    alloc = Allocation(alpha=np.zeros((q_count, n, k)),
                       p=np.zeros((q_count, n, k)),
                       w=np.zeros((q_count, n, k, n_t), dtype=complex),
                       v=np.zeros((q_count, n, k, n_r), dtype=complex))

    # single-user initialization against the bare surrogate, no interferers
    for q in range(q_count):
        alloc.alpha[q], alloc.p[q], alloc.w[q] = single_user_update(
            q, channels, cov, config.P_q, config.B_q)

    report = OptimizerReport(iterations=0)
    prev_rate = sum_rate_joint(alloc, channels, cov)
    report.rate_trajectory.append(prev_rate)

    for _ in range(max_iter):
        for q in range(q_count):
            x_grid = interference_grid(alloc, channels, cov, q)
            alloc.alpha[q], alloc.p[q], alloc.w[q] = single_user_update(
                q, channels, x_grid, config.P_q, config.B_q)
        report.iterations += 1
        rate = sum_rate_joint(alloc, channels, cov)
        report.rate_trajectory.append(rate)
        if abs(rate - prev_rate) <= tol * max(abs(prev_rate), 1e-12):
            report.converged = True
            prev_rate = rate
            break
        prev_rate = rate
    else:
        warnings.warn(f"optimizer did not converge within {max_iter} iterations")

    _design_filters(alloc, channels, cov)
    alloc.validate(config)
    report.final_alloc = alloc
    return alloc, report
