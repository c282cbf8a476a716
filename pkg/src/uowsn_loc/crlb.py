"""Fisher information and Cramer-Rao bound for RSS-based network localization.

Two constructions are provided:

* `fim_analytic` assembles the closed-form entries derived for the optical
  RSS likelihood term by term, verbatim (including the ``exp(-e)``
  factor and the ``d**-5`` / ``d**-7`` powers).
* `fim_oracle` is the textbook Gaussian-mean information
  ``sum_links grad(mu) grad(mu)^T / sigma^2`` with the gradient taken by
  central differences of the received-power model (or the exact range
  gradient in distance mode).

The two disagree in general; both are reported.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .channel import (
    DISTANCE_DOMAIN,
    POWER_DOMAIN,
    ChannelParams,
    extinction_coefficient,
    link_constant,
    received_power,
)

__all__ = [
    "FisherInfo",
    "CRLB",
    "SingularFisherError",
    "log_likelihood",
    "fim_analytic",
    "fim_oracle",
    "crlb_value",
    "power_gradient",
    "power_gradient_fd",
    "power_noise_std",
    "unobservable_sensors",
]


class SingularFisherError(np.linalg.LinAlgError):
    def __init__(self, message: str, sensors=()):
        super().__init__(message)
        self.sensors = list(sensors)


@dataclass
class FisherInfo:
    """Information over sensor coordinates ordered ``(x1, y1, x2, y2, ...)``."""

    matrix: np.ndarray
    neighbors: list[list[int]]
    k: float
    mu: float
    kind: str = "oracle"
    positions: np.ndarray | None = None

    @property
    def n_sensors(self) -> int:
        return self.matrix.shape[0] // 2


@dataclass(frozen=True)
class CRLB:
    trace: float
    per_node: float  # sqrt(trace / N_a), metres


def _link_sigma(sigma, k: int) -> np.ndarray:
    s = np.asarray(sigma, dtype=float)
    return np.full((k, k), float(s)) if s.ndim == 0 else s


def _neighbors(adjacency: np.ndarray, n_sensors: int) -> list[list[int]]:
    return [np.flatnonzero(adjacency[i]).tolist() for i in range(n_sensors)]


def power_noise_std(channel: ChannelParams, d, sigma_d):
    """Power-domain standard deviation equivalent to a range error ``sigma_d``.

    First-order: ``|dP/dd| * sigma_d``.
    """
    d = np.asarray(d, dtype=float)
    slope = received_power(channel, d) * (extinction_coefficient(channel) + 2.0 / d)
    return slope * np.asarray(sigma_d, dtype=float)


def power_gradient(channel: ChannelParams, p_i, p_j) -> np.ndarray:
    """Closed-form gradient of the received power w.r.t. ``p_i`` (x, y)."""
    diff = np.asarray(p_i, dtype=float) - np.asarray(p_j, dtype=float)
    d = math.hypot(*diff)
    return received_power(channel, d) * (-extinction_coefficient(channel) - 2.0 / d) * diff / d


def power_gradient_fd(channel: ChannelParams, p_i, p_j, rel_step: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of the received power w.r.t. ``p_i``; step ``rel_step * d``."""
    p_i = np.asarray(p_i, dtype=float)
    p_j = np.asarray(p_j, dtype=float)
    h = rel_step * math.hypot(*(p_i - p_j))
    g = np.empty(2)
    for axis in range(2):
        e = np.zeros(2)
        e[axis] = h
        plus = received_power(channel, math.hypot(*(p_i + e - p_j)))
        minus = received_power(channel, math.hypot(*(p_i - e - p_j)))
        g[axis] = (plus - minus) / (2.0 * h)
    return g


def log_likelihood(observed, positions, adjacency, n_sensors: int, channel: ChannelParams, sigma) -> float:
    """Gaussian log-likelihood of observed received powers.

    Sums over links ``(i, j)`` with ``i`` a sensor and ``j > i`` any node;
    ``observed`` and ``sigma`` are ``K x K`` (``sigma`` may be scalar).
    """
    pos = np.asarray(positions, dtype=float)
    obs = np.asarray(observed, dtype=float)
    adj = np.asarray(adjacency, dtype=bool)
    k = len(pos)
    sig = _link_sigma(sigma, k)
    total = 0.0
    for i in range(n_sensors):
        for j in range(i + 1, k):
            if not adj[i, j]:
                continue
            d = math.hypot(*(pos[i] - pos[j]))
            resid = obs[i, j] - received_power(channel, d)
            s = sig[i, j]
            total += -math.log(s * math.sqrt(2 * math.pi)) - resid**2 / (2 * s**2)
    return total


def fim_analytic(
    positions,
    adjacency,
    n_sensors: int,
    channel: ChannelParams,
    sigma,
    k: float | None = None,
) -> FisherInfo:
    """Closed-form information matrix entry by entry.

    Per link ``(i, j)`` with ``a = 3 k mu / (sigma^2 d^5)``:
    diagonal ``xx`` gains ``a (1 - 5 dx^2 / d^2)``, the sensor-sensor
    off-diagonal gets its negation; ``xy`` terms use
    ``b = 15 k mu dx dy / (sigma^2 d^7)`` with ``-b`` on the own block and
    ``+b`` across.  ``mu = exp(-e)`` with ``e`` the extinction coefficient.
    The result may be indefinite.  ``k`` overrides the link prefactor
    derived from ``channel``.
    """
    pos = np.asarray(positions, dtype=float)
    adj = np.asarray(adjacency, dtype=bool)
    sig = _link_sigma(sigma, len(pos))
    kc = link_constant(channel) if k is None else float(k)
    mu = math.exp(-extinction_coefficient(channel))
    F = np.zeros((2 * n_sensors, 2 * n_sensors))
    nbrs = _neighbors(adj, n_sensors)
    for i in range(n_sensors):
        xi, yi = 2 * i, 2 * i + 1
        for j in nbrs[i]:
            dx, dy = pos[i] - pos[j]
            d2 = dx * dx + dy * dy
            if d2 == 0:
                raise SingularFisherError(f"nodes {i} and {j} coincide", [i])
            d = math.sqrt(d2)
            s2 = sig[i, j] ** 2
            a = 3.0 * kc * mu / (s2 * d**5)
            fxx = a * (1.0 - 5.0 * dx * dx / d2)
            fyy = a * (1.0 - 5.0 * dy * dy / d2)
            fxy = 15.0 * kc * mu * dx * dy / (s2 * d**7)
            F[xi, xi] += fxx
            F[yi, yi] += fyy
            F[xi, yi] -= fxy
            F[yi, xi] -= fxy
            if j < n_sensors:
                xj, yj = 2 * j, 2 * j + 1
                F[xi, xj] = F[xj, xi] = -fxx
                F[yi, yj] = F[yj, yi] = -fyy
                F[xi, yj] = F[yj, xi] = fxy
                F[yi, xj] = F[xj, yi] = fxy
    return FisherInfo(F, nbrs, kc, mu, "analytic", pos)


def fim_oracle(
    positions,
    adjacency,
    n_sensors: int,
    channel: ChannelParams,
    sigma,
    mode: str = POWER_DOMAIN,
) -> FisherInfo:
    """Gaussian-mean information ``sum g g^T / sigma^2`` over links touching a sensor.

    ``g`` is the gradient of the link mean w.r.t. all sensor coordinates:
    the finite-difference received-power gradient in power mode (``sigma``
    in watts) or the unit direction vector in distance mode (``sigma`` in
    metres).  Anchor coordinates are known and carry no unknowns.
    """
    pos = np.asarray(positions, dtype=float)
    adj = np.asarray(adjacency, dtype=bool)
    k = len(pos)
    sig = _link_sigma(sigma, k)
    F = np.zeros((2 * n_sensors, 2 * n_sensors))
    iu, ju = np.nonzero(np.triu(adj, 1))
    for i, j in zip(iu.tolist(), ju.tolist()):
        if i >= n_sensors and j >= n_sensors:
            continue
        if mode == POWER_DOMAIN:
            gi = power_gradient_fd(channel, pos[i], pos[j])
        elif mode == DISTANCE_DOMAIN:
            diff = pos[i] - pos[j]
            gi = diff / math.hypot(*diff)
        else:
            raise ValueError(f"unknown mode {mode!r}")
        # the mean depends on p_i - p_j, so the gradient w.r.t. p_j is -gi;
        # g g^T then only touches the (i, j) 2x2 blocks
        block = np.outer(gi, gi) / sig[i, j] ** 2
        si, sj = slice(2 * i, 2 * i + 2), slice(2 * j, 2 * j + 2)
        if i < n_sensors:
            F[si, si] += block
        if j < n_sensors:
            F[sj, sj] += block
        if i < n_sensors and j < n_sensors:
            F[si, sj] -= block
            F[sj, si] -= block
    F = 0.5 * (F + F.T)
    return FisherInfo(
        F,
        _neighbors(adj, n_sensors),
        link_constant(channel),
        math.exp(-extinction_coefficient(channel)),
        f"oracle-{mode}",
        pos,
    )


def unobservable_sensors(positions, adjacency, n_sensors: int, rel_tol: float = 1e-9) -> list[int]:
    """Sensors with fewer than two neighbours or all neighbours on one line through them."""
    pos = np.asarray(positions, dtype=float)
    adj = np.asarray(adjacency, dtype=bool)
    bad = []
    for i in range(n_sensors):
        nb = np.flatnonzero(adj[i])
        if len(nb) < 2:
            bad.append(i)
            continue
        u = pos[nb] - pos[i]
        u = u / np.linalg.norm(u, axis=1, keepdims=True)
        s = np.linalg.svd(u, compute_uv=False)
        if s[1] <= rel_tol * s[0]:
            bad.append(i)
    return bad


def crlb_value(fisher: FisherInfo, adjacency=None, rcond: float = 1e-12) -> CRLB:
    """Trace of the inverse information and its per-node root, ``sqrt(trace / N_a)``.

    An indefinite matrix (possible for the analytic form) yields a negative
    trace and a NaN per-node value.

    Raises
    ------
    SingularFisherError
        When the matrix is numerically singular; ``sensors`` lists the
        geometrically deficient ones when ``adjacency`` is given.
    """
    F = np.asarray(fisher.matrix, dtype=float)
    n = F.shape[0] // 2
    if n == 0:
        raise SingularFisherError("no unknown coordinates")
    sv = np.linalg.svd(F, compute_uv=False)
    if sv[-1] <= rcond * sv[0]:
        bad = []
        if adjacency is not None and fisher.positions is not None:
            bad = unobservable_sensors(fisher.positions, adjacency, n)
        raise SingularFisherError(f"information matrix is singular; weak sensors: {bad}", bad)
    inv = np.linalg.solve(F, np.eye(F.shape[0]))
    tr = float(np.trace(inv))
    return CRLB(tr, math.sqrt(tr / n) if tr >= 0 else float("nan"))
