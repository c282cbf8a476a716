"""Underwater optical link model: received power vs. distance and its inverse.

The forward model is the line-of-sight Beer-Lambert link with geometric
spreading over the beam cone; the inverse uses the principal branch of the
Lambert W function.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

__all__ = [
    "ChannelParams",
    "RangeMeasurement",
    "MeasurementInvalidError",
    "POWER_DOMAIN",
    "DISTANCE_DOMAIN",
    "extinction_coefficient",
    "channel_gain",
    "link_constant",
    "received_power",
    "received_power_derivative",
    "lambert_w0",
    "range_from_power",
    "add_measurement_noise",
    "estimate_range",
    "estimate_ranges",
]

POWER_DOMAIN = "power"
DISTANCE_DOMAIN = "distance"
_NOISE_MODES = (POWER_DOMAIN, DISTANCE_DOMAIN)

_INV_E = math.exp(-1.0)


class MeasurementInvalidError(ValueError):
    """No usable sample survived for a link; the link is to be treated as missing."""


@dataclass(frozen=True)
class ChannelParams:
    """Constants of one optical link.

    Angles are in radians, power in watts, lengths in metres.  Defaults are
    clear-ocean water with boresight-aligned transceivers.
    """

    absorption: float = 0.114
    scattering: float = 0.037
    tx_power: float = 0.1
    tx_efficiency: float = 0.9
    rx_efficiency: float = 0.9
    aperture_area: float = 0.01
    pointing_angle: float = 0.0
    divergence_half_angle: float = math.pi / 3

    def __post_init__(self):
        if self.absorption < 0 or self.scattering < 0:
            raise ValueError("absorption and scattering must be non-negative")
        if self.absorption + self.scattering <= 0:
            raise ValueError("extinction coefficient must be positive")
        if self.tx_power <= 0 or self.aperture_area <= 0:
            raise ValueError("tx_power and aperture_area must be positive")
        for name in ("tx_efficiency", "rx_efficiency"):
            v = getattr(self, name)
            if not 0 < v <= 1:
                raise ValueError(f"{name} must lie in (0, 1], got {v}")
        if not 0 < self.divergence_half_angle < math.pi / 2:
            raise ValueError("divergence_half_angle must lie in (0, pi/2)")
        if not 0 <= self.pointing_angle < math.pi / 2:
            raise ValueError("pointing_angle must lie in [0, pi/2)")

    def with_tx_power(self, tx_power: float) -> "ChannelParams":
        return replace(self, tx_power=tx_power)


@dataclass(frozen=True)
class RangeMeasurement:
    """One noisy observation of a link, in watts or metres depending on ``mode``."""

    src: int
    dst: int
    observed_value: float
    noise_std: float
    mode: str = DISTANCE_DOMAIN

    def __post_init__(self):
        if self.src == self.dst:
            raise ValueError("a measurement needs two distinct endpoints")
        if self.noise_std < 0:
            raise ValueError("noise_std must be non-negative")
        if self.mode not in _NOISE_MODES:
            raise ValueError(f"unknown noise mode {self.mode!r}")


def extinction_coefficient(params: ChannelParams) -> float:
    """Absorption plus scattering, in 1/m."""
    return params.absorption + params.scattering


def channel_gain(e, d):
    """Attenuation factor ``exp(-e*d)`` of the water column."""
    return np.exp(-np.multiply(e, d))


def link_constant(params: ChannelParams) -> float:
    """Distance-independent prefactor of the received power (W m^2)."""
    return (
        params.tx_power
        * params.tx_efficiency
        * params.rx_efficiency
        * params.aperture_area
        * math.cos(params.pointing_angle)
        / (2.0 * math.pi * (1.0 - math.cos(params.divergence_half_angle)))
    )


def received_power(params: ChannelParams, d):
    """Received optical power at distance ``d`` (scalar or array, metres)."""
    d_arr = np.asarray(d, dtype=float)
    if np.any(d_arr <= 0):
        raise ValueError("received power is singular at d <= 0")
    p = link_constant(params) * np.exp(-extinction_coefficient(params) * d_arr) / d_arr**2
    return float(p) if p.ndim == 0 else p


def received_power_derivative(params: ChannelParams, d):
    """dP_r/dd = -P_r(d) * (e + 2/d)."""
    d_arr = np.asarray(d, dtype=float)
    return -received_power(params, d_arr) * (extinction_coefficient(params) + 2.0 / d_arr)


def _w0_initial(x: np.ndarray) -> np.ndarray:
    w = np.empty_like(x)
    big = x > math.e
    if np.any(big):
        l1 = np.log(x[big])
        l2 = np.log(l1)
        w[big] = l1 - l2 + l2 / l1
    small = ~big
    if np.any(small):
        xs = x[small]
        # branch-point series below zero, log1p-based guess above
        p = np.sqrt(np.maximum(2.0 * (math.e * xs + 1.0), 0.0))
        branch = -1.0 + p - p * p / 3.0 + 11.0 / 72.0 * p**3
        lp = np.log1p(np.maximum(xs, 0.0))
        pos = lp * (1.0 - np.log1p(lp) / (2.0 + lp))
        w[small] = np.where(xs < 0, branch, pos)
    return w


def lambert_w0(x, tol: float = 1e-14, max_iter: int = 50):
    """Principal branch of the Lambert W function for real ``x >= -1/e``.

    Halley iteration from an asymptotic (x > e) or series (x <= e) starting
    point.  Iteration stops once ``|w*exp(w) - x| <= tol * |x|`` or the
    Halley step drops to rounding level.

    Parameters
    ----------
    x : float or array_like
    tol : float
        Relative residual target.
    max_iter : int
        Hard cap on Halley steps.

    Returns
    -------
    float or ndarray
        ``w`` with ``w * exp(w) == x``.
    """
    x_arr = np.asarray(x, dtype=float)
    scalar = x_arr.ndim == 0
    x_arr = np.atleast_1d(x_arr)
    if np.any(np.isnan(x_arr)):
        raise ValueError("lambert_w0 received NaN")
    if np.any(x_arr < -_INV_E - 1e-15):
        raise ValueError("lambert_w0 is real only for x >= -1/e")
    x_arr = np.maximum(x_arr, -_INV_E)

    w = _w0_initial(x_arr)
    w[x_arr == 0] = 0.0
    w[x_arr == -_INV_E] = -1.0
    # relative to |x| so that tiny arguments keep full relative accuracy in w
    scale = np.abs(x_arr)
    active = np.abs(w * np.exp(w) - x_arr) > tol * scale
    for _ in range(max_iter):
        if not active.any():
            break
        wa, xa = w[active], x_arr[active]
        ew = np.exp(wa)
        f = wa * ew - xa
        wp1 = wa + 1.0
        # wp1 -> 0 only at the branch point, already handled above
        step = f / (ew * wp1 - (wa + 2.0) * f / (2.0 * wp1))
        wa = wa - step
        w[active] = wa
        done = (np.abs(wa * np.exp(wa) - xa) <= tol * scale[active]) | (
            np.abs(step) <= 4e-16 * (1.0 + np.abs(wa))
        )
        idx = np.flatnonzero(active)
        active[idx[done]] = False
    return float(w[0]) if scalar else w


def range_from_power(params: ChannelParams, p_r):
    """Distance that produces received power ``p_r``; exact inverse of `received_power`."""
    p_arr = np.asarray(p_r, dtype=float)
    if np.any(~(p_arr > 0)):
        raise MeasurementInvalidError("received power must be strictly positive")
    e = extinction_coefficient(params)
    arg = 0.5 * e * np.sqrt(link_constant(params) / p_arr)
    d = (2.0 / e) * lambert_w0(arg)
    return float(d) if np.ndim(d) == 0 else d


def add_measurement_noise(
    true_value: float,
    sigma: float,
    mode: str,
    rng: np.random.Generator,
    src: int = 0,
    dst: int = 1,
) -> RangeMeasurement:
    """Corrupt ``true_value`` with zero-mean Gaussian noise of standard deviation ``sigma``.

    ``sigma == 0`` is accepted and returns the value untouched (no draw).
    """
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    if mode not in _NOISE_MODES:
        raise ValueError(f"unknown noise mode {mode!r}")
    noise = rng.normal(0.0, sigma) if sigma > 0 else 0.0
    return RangeMeasurement(src, dst, float(true_value) + noise, float(sigma), mode)


def estimate_ranges(samples, sigma, mode: str, params: ChannelParams | None = None):
    """Vectorised range estimation over many links.

    Parameters
    ----------
    samples : ndarray, shape (L, n)
        ``n`` repeated observations for each of ``L`` links.
    sigma : float or ndarray of shape (L,)
        Per-sample noise standard deviation (watts in power mode, metres otherwise).
    mode : {"power", "distance"}
    params : ChannelParams
        Required in power mode.

    Returns
    -------
    d_est, sigma_est, valid : ndarray, ndarray, ndarray of bool
        Entries where ``valid`` is False carry NaN: power links with no
        positive sample and distance links whose mean is not positive.
    """
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    n_links = samples.shape[0]
    sigma = np.broadcast_to(np.asarray(sigma, dtype=float), (n_links,))
    if mode == DISTANCE_DOMAIN:
        n = samples.shape[1]
        d = samples.mean(axis=1)
        # a non-positive range is no range; the link is dropped, not clamped
        valid = d > 0
        return np.where(valid, d, np.nan), np.where(valid, sigma / math.sqrt(n), np.nan), valid
    if mode != POWER_DOMAIN:
        raise ValueError(f"unknown noise mode {mode!r}")
    if params is None:
        raise ValueError("power-domain estimation needs channel parameters")

    keep = samples > 0
    n_kept = keep.sum(axis=1)
    valid = n_kept > 0
    d_est = np.full(n_links, np.nan)
    s_est = np.full(n_links, np.nan)
    if valid.any():
        sums = np.where(keep, samples, 0.0).sum(axis=1)
        mean_p = sums[valid] / n_kept[valid]
        d = np.atleast_1d(range_from_power(params, mean_p))
        # first-order propagation through the inverse: |dd/dP| = 1 / |dP/dd|
        slope = np.abs(np.atleast_1d(received_power_derivative(params, d)))
        d_est[valid] = d
        s_est[valid] = sigma[valid] / np.sqrt(n_kept[valid]) / slope
    return d_est, s_est, valid


def estimate_range(
    measurements: Sequence[RangeMeasurement], params: ChannelParams | None = None
) -> tuple[float, float]:
    """Fuse repeated measurements of one link into ``(d_est, sigma_est)`` in metres.

    Non-positive power samples are discarded before averaging.

    Raises
    ------
    MeasurementInvalidError
        In power mode when no positive sample remains, in distance mode when
        the mean range is not positive.
    """
    if not measurements:
        raise ValueError("need at least one measurement")
    first = measurements[0]
    for m in measurements[1:]:
        if (m.src, m.dst, m.mode) != (first.src, first.dst, first.mode):
            raise ValueError("measurements must share endpoints and noise mode")
    samples = np.array([[m.observed_value for m in measurements]])
    d, s, valid = estimate_ranges(samples, first.noise_std, first.mode, params)
    if not valid[0]:
        raise MeasurementInvalidError(f"link ({first.src}, {first.dst}) has no usable sample")
    return float(d[0]), float(s[0])
