"""Jamming strategy constructors: none, barrage, and approximate worst case.

The worst-case jammer knows the full legitimate design (channels and
allocation), aligns its covariance with the strongest user's channel as seen
through the jamming channel, and splits its power budget across resource
elements by the square-root weighting of the aligned energy.  A desk-scale
projected-gradient solver on the convex rate-minimization problem serves as
a test oracle for the approximation.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .channel import ChannelSet
from .config import ScenarioConfig
from .phy import Allocation, JammingStrategy

PINV_RCOND = 1e-10
ORACLE_MAX_VARS = 256


@dataclass
class WorstCaseReport:
    """Intermediate quantities of the worst-case construction."""

    q_star: int
    h_nk: np.ndarray     # aligned-energy weighting, (N, K)
    g_nk: np.ndarray     # per-RE power scaling, (N, K)
    lambdas: np.ndarray  # alignment eigenvalues, (N, K, N_J)


def no_jamming(config: ScenarioConfig) -> JammingStrategy:
    """Jammer absent: all-zero covariances."""
    c = np.zeros((config.N, config.K, config.N_J, config.N_J), dtype=complex)
    return JammingStrategy(C_u=c, kind="none")


def barrage(config: ScenarioConfig) -> JammingStrategy:
    """Isotropic jammer spreading P_J uniformly over antennas and REs."""
    scale = config.P_J / (config.N_J * config.N * config.K)
    eye = np.eye(config.N_J, dtype=complex)
    c = np.broadcast_to(scale * eye,
                        (config.N, config.K, config.N_J, config.N_J)).copy()
    return JammingStrategy(C_u=c, kind="barrage")


def worst_case(channels: ChannelSet, alloc: Allocation, P_J: float,
               target_user: int | None = None):
    """Approximate worst-case jamming covariance against a known allocation.

    Per resource element the alignment matrix ``R_q = G^+ H_q H_q^H G^+H``
    is eigendecomposed for the strongest user; eigenvalue-proportional power
    is placed on its eigenvectors, with per-RE budgets split proportionally
    to ``sqrt(p_q* * sum lambda)``.  ``target_user`` forces the victim
    selection (single-client jamming).

    Returns ``(JammingStrategy, WorstCaseReport)``.  If the victim is
    unscheduled everywhere the construction degenerates and falls back to a
    barrage covariance (flagged via a warning).
    """
    q_count, n, k, n_r, _ = channels.H.shape
    n_j = channels.G.shape[-1]

    g_pinv = np.linalg.pinv(channels.G, rcond=PINV_RCOND)  # (N, K, N_J, N_R)

    if target_user is not None:
        q_star = int(target_user)
    else:
        # strongest user: max over its scheduled REs of the top alignment
        # eigenvalue; deterministic lowest-q tie-break via argmax
        strength = np.full(q_count, -np.inf)
        for q in range(q_count):
            mask = alloc.alpha[q] > 0
            if not np.any(mask):
                continue
            t = np.einsum("nkjr,nkrt->nkjt", g_pinv, channels.H[q])
            r_align = np.einsum("nkjt,nkst->nkjs", t, t.conj())
            top = np.linalg.eigvalsh(r_align)[..., -1]
            strength[q] = top[mask].max()
        q_star = int(np.argmax(strength))

    t = np.einsum("nkjr,nkrt->nkjt", g_pinv, channels.H[q_star])
    r_align = np.einsum("nkjt,nkst->nkjs", t, t.conj())
    r_align = 0.5 * (r_align + r_align.conj().swapaxes(-1, -2))
    eigval, eigvec = np.linalg.eigh(r_align)
    eigval = np.clip(eigval, 0.0, None)  # (N, K, N_J) ascending

    power_star = alloc.alpha[q_star] * alloc.p[q_star]
    lam_sum = eigval.sum(axis=-1)
    h_nk = power_star * lam_sum

    sqrt_h = np.sqrt(h_nk)
    denom = sqrt_h.sum()
    if denom <= 0:
        warnings.warn("worst-case target carries no power anywhere; "
                      "falling back to barrage jamming")
        scale = P_J / (n_j * n * k)
        c = np.broadcast_to(scale * np.eye(n_j, dtype=complex),
                            (n, k, n_j, n_j)).copy()
        report = WorstCaseReport(q_star=q_star, h_nk=h_nk,
                                 g_nk=np.zeros((n, k)), lambdas=eigval)
        return JammingStrategy(C_u=c, kind="barrage"), report

    g_nk = P_J * sqrt_h / denom

    with np.errstate(invalid="ignore", divide="ignore"):
        shares = np.where(lam_sum[..., None] > 0,
                          eigval / np.where(lam_sum[..., None] > 0,
                                            lam_sum[..., None], 1.0),
                          0.0)
    diag = g_nk[..., None] * shares
    c_u = np.einsum("nkjd,nkd,nksd->nkjs", eigvec, diag, eigvec.conj())

    report = WorstCaseReport(q_star=q_star, h_nk=h_nk, g_nk=g_nk,
                             lambdas=eigval)
    return JammingStrategy(C_u=c_u, kind="worst_case"), report


def _rate_and_gradient(channels, alloc, c_u, sigma2):
    """Sum rate and its gradient with respect to each C_u (Wirtinger form)."""
    g = channels.G
    cov = np.einsum("nkra,nkab,nksb->nkrs", g, c_u, g.conj())
    cov = cov + sigma2 * np.eye(g.shape[-2])

    a = np.einsum("qnkrt,qnkt->qnkr", channels.H, alloc.w)
    solved = np.linalg.solve(cov[None], a[..., None])[..., 0]  # C^{-1} a
    gamma = np.maximum(np.real(np.einsum("qnkr,qnkr->qnk", a.conj(), solved)), 0.0)
    load = (alloc.alpha * alloc.p * gamma).sum(axis=0)
    rate = float(np.log1p(load).sum())

    coef = (alloc.alpha * alloc.p) / (1.0 + load)[None]
    grad_cov = -np.einsum("qnk,qnkr,qnks->nkrs", coef, solved, solved.conj())
    grad_cu = np.einsum("nkra,nkrs,nksb->nkab", g.conj(), grad_cov, g)
    grad_cu = 0.5 * (grad_cu + grad_cu.conj().swapaxes(-1, -2))
    return rate, grad_cu


def _project(c_u, P_J):
    """Project onto Hermitian PSD matrices with total trace at most P_J."""
    c_u = 0.5 * (c_u + c_u.conj().swapaxes(-1, -2))
    eigval, eigvec = np.linalg.eigh(c_u)
    eigval = np.clip(eigval, 0.0, None)
    c_u = np.einsum("nkjd,nkd,nksd->nkjs", eigvec, eigval, eigvec.conj())
    total = np.real(np.trace(c_u, axis1=-2, axis2=-1)).sum()
    if total > P_J and total > 0:
        c_u = c_u * (P_J / total)
    return c_u


def oracle_worst_case(channels: ChannelSet, alloc: Allocation, P_J: float,
                      sigma2: float, max_iter: int = 500,
                      tol: float = 1e-10) -> JammingStrategy:
    """Desk-scale projected-gradient minimizer of the sum rate over C_u.

    Serves as an independent oracle for :func:`worst_case`.  Refuses
    problems beyond a few hundred covariance entries.
    """
    n, k, _, n_j = channels.G.shape
    if n * k * n_j * n_j > ORACLE_MAX_VARS:
        raise ValueError(
            f"oracle limited to {ORACLE_MAX_VARS} covariance entries, "
            f"got {n * k * n_j * n_j}")
    if P_J <= 0:
        return JammingStrategy(
            C_u=np.zeros((n, k, n_j, n_j), dtype=complex), kind="worst_case")

    c_u = np.broadcast_to(P_J / (n_j * n * k) * np.eye(n_j, dtype=complex),
                          (n, k, n_j, n_j)).copy()
    rate, grad = _rate_and_gradient(channels, alloc, c_u, sigma2)
    step = P_J / max(np.linalg.norm(grad), 1e-30)

    for _ in range(max_iter):
        improved = False
        for _ in range(40):
            cand = _project(c_u - step * grad, P_J)
            cand_rate, cand_grad = _rate_and_gradient(
                channels, alloc, cand, sigma2)
            if cand_rate < rate:
                improved = True
                break
            step *= 0.5
        if not improved:
            break
        if rate - cand_rate <= tol * max(abs(rate), 1e-12):
            c_u, rate = cand, cand_rate
            break
        c_u, rate, grad = cand, cand_rate, cand_grad
        step *= 1.5

    return JammingStrategy(C_u=c_u, kind="worst_case")
