"""Generalized-smoothness machinery for loss-divergence and outage analysis.

A coordinate-wise smoothness profile (L0_j, L1_j) is fitted from sampled
gradient differences; loss divergence between clean and perturbed inputs is
then bounded by a gradient-norm term plus a curvature term quadratic in the
displacement.  Gradient clipping makes the bound independent of the actual
gradient magnitude.  Outage rates translate the bounds into minimum per-user
communication rates.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog


@dataclass(frozen=True)
class SmoothnessProfile:
    """Coordinate-wise smoothness coefficients of a scalar loss on R^E.

    ``proximity_radius`` is 1/max(L1): displacements below it keep the
    coordinate-wise smoothness inequality applicable.
    """

    L0: np.ndarray
    L1: np.ndarray
    E: int
    proximity_radius: float

    @classmethod
    def from_coefficients(cls, L0, L1) -> "SmoothnessProfile":
        L0 = np.asarray(L0, dtype=float)
        L1 = np.asarray(L1, dtype=float)
        if L0.shape != L1.shape or L0.ndim != 1:
            raise ValueError("L0/L1 must be 1-D arrays of equal length")
        if np.any(L0 < 0) or np.any(L1 < 0):
            raise ValueError("smoothness coefficients must be nonnegative")
        l1max = float(L1.max()) if L1.size else 0.0
        radius = math.inf if l1max == 0 else 1.0 / l1max
        return cls(L0=L0, L1=L1, E=L0.size, proximity_radius=radius)


@dataclass
class BoundReport:
    """One evaluation of the loss-divergence upper bound."""

    divergence_bound: float
    empirical_divergence: float  # NaN when losses were not supplied
    clipped: bool
    tau: float | None
    u_vec: np.ndarray
    within_proximity: bool


@dataclass
class OutageReport:
    """Minimum-rate thresholds for reliable training."""

    R_out_1: float
    R_out_2: float
    R_out: float
    r_q: int
    gamma_q: float
    delta_q: float
    epsilon_q: float
    y_root: float


def clip_gradient(g: np.ndarray, tau: float) -> np.ndarray:
    """Rescale g to Euclidean norm at most tau (identity below threshold)."""
    if tau <= 0:
        raise ValueError("tau must be > 0")
    g = np.asarray(g, dtype=float)
    norm = np.linalg.norm(g)
    if norm <= tau:
        return g.copy()
    return (tau / norm) * g


def _fit_coordinate(c: np.ndarray, g: np.ndarray) -> tuple[float, float]:
    """Smallest (a, b) >= 0 with a + b * g_i >= c_i for all samples.

    Scalarized as a tiny LP weighting b by the mean gradient magnitude, so a
    gradient-proportional fit is preferred exactly when gradients carry
    signal.
    """
    keep = c > 0
    if not np.any(keep):
        return 0.0, 0.0
    c, g = c[keep], g[keep]
    weight = max(float(np.mean(g)), 1e-9)
    res = linprog(c=[1.0, weight],
                  A_ub=np.column_stack([-np.ones_like(c), -g]),
                  b_ub=-c, bounds=[(0, None), (0, None)], method="highs")
    if not res.success:
        return float(c.max()), 0.0
    return float(res.x[0]), float(res.x[1])


def estimate_smoothness(grad_fn, anchors: np.ndarray,
                        rng: np.random.Generator, radius: float | None = None,
                        margin: float = 0.05) -> SmoothnessProfile:
    """Fit a coordinate-wise smoothness profile from sampled gradient pairs.

    For each anchor x a partner y = x + r*d is drawn with ``r <= radius``
    (default ``0.1 * mean ||x||``) and random direction d; the smallest
    nonnegative (L0_j, L1_j) satisfying
    ``|grad_j(y) - grad_j(x)| <= (L0_j / sqrt(E) + L1_j |grad_j(x)|) * ||y - x||``
    on every sample are fitted per coordinate and inflated by ``margin``.

    Samples with non-finite gradients are rejected (flagged via a warning).
    """
    anchors = np.atleast_2d(np.asarray(anchors, dtype=float))
    n, dim = anchors.shape
    if radius is None:
        radius = 0.1 * float(np.mean(np.linalg.norm(anchors, axis=1)))
    if radius <= 0:
        raise ValueError("radius must be > 0")

    dist = radius * rng.uniform(0.05, 1.0, size=n)
    direction = rng.standard_normal((n, dim))
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    partners = anchors + dist[:, None] * direction

    grads_x = np.empty((n, dim))
    grads_y = np.empty((n, dim))
    ok = np.ones(n, dtype=bool)
    for i in range(n):
        gx = np.asarray(grad_fn(anchors[i]), dtype=float)
        gy = np.asarray(grad_fn(partners[i]), dtype=float)
        if not (np.all(np.isfinite(gx)) and np.all(np.isfinite(gy))):
            ok[i] = False
            continue
        grads_x[i], grads_y[i] = gx, gy
    if not np.all(ok):
        warnings.warn(f"rejected {np.count_nonzero(~ok)} sample pairs with "
                      "non-finite gradients")
        grads_x, grads_y, dist = grads_x[ok], grads_y[ok], dist[ok]
    if grads_x.shape[0] == 0:
        raise ValueError("no finite gradient samples to fit")

    ratio = np.abs(grads_y - grads_x) / dist[:, None]
    mag = np.abs(grads_x)
    l0 = np.empty(dim)
    l1 = np.empty(dim)
    for j in range(dim):
        a, b = _fit_coordinate(ratio[:, j], mag[:, j])
        l0[j] = math.sqrt(dim) * a * (1.0 + margin)
        l1[j] = b * (1.0 + margin)
    return SmoothnessProfile.from_coefficients(l0, l1)


def loss_divergence_bound(x: np.ndarray, y: np.ndarray, grad_x: np.ndarray,
                          profile: SmoothnessProfile, tau: float | None = None,
                          loss_x: float | None = None,
                          loss_y: float | None = None) -> BoundReport:
    """Upper bound on |L(y) - L(x)| from the smoothness profile.

    Unclipped form: ``||grad|| * ||y-x|| + ||L0 + L1 o |grad||| * ||y-x||^2``
    (requires the proximity condition for validity).  With ``tau`` given the
    gradient-norm factor becomes tau and the curvature factor
    ``||L0 + tau*L1||``, valid for arbitrary displacements under clipping.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    grad_x = np.asarray(grad_x, dtype=float)
    if not (x.shape == y.shape == grad_x.shape and x.size == profile.E):
        raise ValueError("dimension mismatch between inputs and profile")

    delta = float(np.linalg.norm(y - x))
    u_vec = profile.L0 + profile.L1 * np.abs(grad_x)
    if tau is None:
        bound = np.linalg.norm(grad_x) * delta + np.linalg.norm(u_vec) * delta ** 2
    else:
        if tau <= 0:
            raise ValueError("tau must be > 0")
        bound = tau * delta + np.linalg.norm(profile.L0 + tau * profile.L1) * delta ** 2

    empirical = math.nan
    if loss_x is not None and loss_y is not None:
        empirical = abs(loss_y - loss_x)
    return BoundReport(divergence_bound=float(bound),
                       empirical_divergence=empirical,
                       clipped=tau is not None, tau=tau, u_vec=u_vec,
                       within_proximity=delta <= profile.proximity_radius)


def expected_divergence_bound(grad_norm_or_tau: float, u_norm: float,
                              mse: float) -> float:
    """Expected-divergence bound a*sqrt(MSE) + b*MSE.

    ``a`` is the gradient norm (or clipping threshold) and ``b`` the norm of
    the curvature vector (or its clipped form); monotone increasing in MSE.
    """
    if mse < 0:
        raise ValueError("mse must be >= 0")
    return float(grad_norm_or_tau * math.sqrt(mse) + u_norm * mse)


def outage_rates(profile: SmoothnessProfile, r_q: int, gamma_q: float,
                 delta_q: float, epsilon_q: float) -> OutageReport:
    """Minimum per-user rates below which reliable training is not guaranteed.

    ``R_out_1`` keeps the expected embedding error within the proximity
    budget; ``R_out_2`` is the rate at which the expected-divergence bound
    ``gamma*sqrt(mu) + delta*mu`` meets the target error ``epsilon`` with
    equality, via the unique nonnegative root of the induced quadratic.
    """
    if r_q < 1:
        raise ValueError("r_q must be >= 1")
    if delta_q <= 0:
        raise ValueError("delta_q must be > 0")
    if gamma_q < 0 or epsilon_q < 0:
        raise ValueError("gamma_q and epsilon_q must be >= 0")

    l1max = float(profile.L1.max()) if profile.L1.size else 0.0
    if l1max == 0:
        r_out_1 = -math.inf  # no proximity constraint at all
    else:
        r_out_1 = r_q * math.log(l1max ** 2 * r_q)

    y = (-gamma_q + math.sqrt(gamma_q ** 2 + 4.0 * delta_q * epsilon_q)) / (2.0 * delta_q)
    if y == 0.0:
        warnings.warn("epsilon_q = 0 requires lossless transport; "
                      "R_out_2 is infinite")
        r_out_2 = math.inf
    else:
        r_out_2 = r_q * math.log(r_q / y ** 2)

    return OutageReport(R_out_1=r_out_1, R_out_2=r_out_2,
                        R_out=min(r_out_1, r_out_2), r_q=r_q,
                        gamma_q=gamma_q, delta_q=delta_q, epsilon_q=epsilon_q,
                        y_root=y)
