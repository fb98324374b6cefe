"""Beamspace MIMO-OFDM channel realizations from scenario geometry.

Channels are sums over resolvable paths of steering-vector outer products
with a per-resource-element phase from Doppler and delay.  All functions are
pure over value inputs plus an explicit RNG handle; realizations are
immutable after construction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import ScenarioConfig, db_to_linear


def steering_vector(theta: float, n_antennas: int) -> np.ndarray:
    """Array response of a half-wavelength ULA to a planar wavefront.

    Entry ``m`` equals ``exp(j*pi*m*sin(theta))``; the phase reference is
    element 0.  All entries have unit modulus.
    """
    if n_antennas < 1:
        raise ValueError("n_antennas must be >= 1")
    m = np.arange(n_antennas)
    return np.exp(1j * np.pi * m * np.sin(theta))


def array_manifold(thetas, n_antennas: int) -> np.ndarray:
    """Stack steering vectors as columns, one per angle in ``thetas``."""
    thetas = np.atleast_1d(np.asarray(thetas, dtype=float))
    m = np.arange(n_antennas)[:, None]
    return np.exp(1j * np.pi * m * np.sin(thetas)[None, :])


def sample_doas(config: ScenarioConfig, rng: np.random.Generator):
    """Draw per-path DoAs around the central user and jammer angles.

    Returns ``(theta_H, theta_G)`` with shapes ``(Q, L_H)`` and ``(L_G,)``.
    Spreads are uniform half-widths; zero spread collapses every path onto
    the central angle.
    """
    theta_h = config.theta_Hq + rng.uniform(
        -config.spread_H, config.spread_H, size=(config.Q, config.L_H))
    theta_g = config.theta_J + rng.uniform(
        -config.spread_G, config.spread_G, size=config.L_G)
    return theta_h, theta_g


@dataclass(frozen=True)
class PathParams:
    """Per-path parameters of one beamspace channel."""

    gains: np.ndarray    # complex, (L,)
    doa: np.ndarray      # radians, (L,)
    dod: np.ndarray      # radians, (L,)
    doppler: np.ndarray  # Hz, (L,)
    delay: np.ndarray    # seconds, (L,)

    def __post_init__(self):
        n = len(self.gains)
        for name in ("doa", "dod", "doppler", "delay"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"PathParams.{name} length != gains length")


@dataclass(frozen=True)
class ChannelSet:
    """One realization of all legitimate and jamming channels.

    ``H`` has shape ``(Q, N, K, N_R, N_T)`` and ``G`` shape
    ``(N, K, N_R, N_J)``.
    """

    H: np.ndarray
    G: np.ndarray
    paths_H: tuple
    paths_G: PathParams

    def __post_init__(self):
        if not (np.all(np.isfinite(self.H)) and np.all(np.isfinite(self.G))):
            raise ValueError("channel realization contains NaN/Inf")


def _draw_paths(central, spread, n_paths, gain_var, doa, config, rng):
    """Draw gains, DoD, Doppler and delay for one link's paths."""
    gains = np.sqrt(gain_var / 2.0) * (
        rng.standard_normal(n_paths) + 1j * rng.standard_normal(n_paths))
    dod = central + rng.uniform(-spread, spread, size=n_paths)
    if config.doppler_hz > 0:
        doppler = rng.uniform(-config.doppler_hz, config.doppler_hz, n_paths)
    else:
        doppler = np.zeros(n_paths)
    delay = rng.uniform(0.0, 1.0 / config.delta_f, size=n_paths)
    return PathParams(gains=gains, doa=np.asarray(doa, dtype=float), dod=dod,
                      doppler=doppler, delay=delay)


def _beamspace(paths: PathParams, n_rx, n_tx, config) -> np.ndarray:
    """Assemble H_nk = sum_l b_l a_rx(theta_l) a_tx(psi_l)^H e^{j2pi w_nk}."""
    a_rx = array_manifold(paths.doa, n_rx)        # (N_R, L)
    a_tx = array_manifold(paths.dod, n_tx)        # (N_T, L)
    outer = np.einsum("l,rl,tl->lrt", paths.gains, a_rx, a_tx.conj())
    # w_nk(nu, tau) = k*nu*T_s - n*tau*delta_f
    n_idx = np.arange(config.N)
    k_idx = np.arange(config.K)
    w = (k_idx[None, None, :] * paths.doppler[:, None, None] * config.T_s
         - n_idx[None, :, None] * paths.delay[:, None, None] * config.delta_f)
    phase = np.exp(2j * np.pi * w)                # (L, N, K)
    return np.einsum("lrt,lnk->nkrt", outer, phase)


def realize_channels(config: ScenarioConfig, doas, rng: np.random.Generator) -> ChannelSet:
    """Realize the legitimate channels H_qnk and the jamming channel G_nk.

    ``doas`` is the ``(theta_H, theta_G)`` pair from :func:`sample_doas`.
    Path gains are circularly-symmetric complex Gaussian with total expected
    energy normalized to the configured path loss.
    """
    theta_h, theta_g = doas
    theta_h = np.asarray(theta_h, dtype=float)
    theta_g = np.asarray(theta_g, dtype=float)
    if theta_h.shape != (config.Q, config.L_H):
        raise ValueError(f"user DoA array must have shape (Q, L_H)="
                         f"{(config.Q, config.L_H)}, got {theta_h.shape}")
    if theta_g.shape != (config.L_G,):
        raise ValueError(f"jammer DoA array must have shape (L_G,)="
                         f"{(config.L_G,)}, got {theta_g.shape}")

    gain_h = db_to_linear(-config.path_loss_db) / config.L_H
    gain_g = db_to_linear(-config.path_loss_db) / config.L_G

    paths_h = []
    h_all = np.empty((config.Q, config.N, config.K, config.N_R, config.N_T),
                     dtype=complex)
    for q in range(config.Q):
        paths = _draw_paths(config.theta_Hq, config.spread_H, config.L_H,
                            gain_h, theta_h[q], config, rng)
        paths_h.append(paths)
        h_all[q] = _beamspace(paths, config.N_R, config.N_T, config)

    paths_g = _draw_paths(config.theta_J, config.spread_G, config.L_G,
                          gain_g, theta_g, config, rng)
    g_all = _beamspace(paths_g, config.N_R, config.N_J, config)

    return ChannelSet(H=h_all, G=g_all, paths_H=tuple(paths_h), paths_G=paths_g)
