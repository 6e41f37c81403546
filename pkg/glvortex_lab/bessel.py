"""
Modified Bessel functions of order 0 and 1 without a special-function dependency.

For r <= 2 the ascending power series are used (the K functions with their
logarithmic terms). For r > 2 the integral representations
K_n(r) = ∫₀^∞ exp(-r cosh t) cosh(nt) dt and
I_n(r) = (1/2π) ∫₀^{2π} exp(r cos t) cos(nt) dt
are evaluated with the trapezoidal rule, which converges geometrically for
these analytic integrands.
"""

import math

import numpy as np

EULER_GAMMA = 0.57721566490153286061

# lim_{r->0} (K0(r) + log r)
L_CONSTANT = math.log(2.0) - EULER_GAMMA

SERIES_SWITCH = 2.0
_SERIES_TERMS = 30
_K_STEP = 1.0 / 16.0
_K_NODES = np.arange(0.0, 7.0 + 0.5 * _K_STEP, _K_STEP)
_K_WEIGHTS = np.full(_K_NODES.size, _K_STEP)
_K_WEIGHTS[0] = _K_WEIGHTS[-1] = 0.5 * _K_STEP
_I_POINTS = 128
_I_NODES = 2.0 * np.pi * np.arange(_I_POINTS) / _I_POINTS
_CHUNK = 4096

# Series coefficients: 1/(k!)^2, 1/(k!(k+1)!) and harmonic numbers H_k
_k = np.arange(_SERIES_TERMS)
_FACT = np.array([math.factorial(k) for k in range(_SERIES_TERMS + 1)], dtype=float)
_C0 = 1.0 / (_FACT[:-1] ** 2)
_C1 = 1.0 / (_FACT[:-1] * _FACT[1:])
_HARMONIC = np.concatenate([[0.0], np.cumsum(1.0 / np.arange(1, _SERIES_TERMS + 1))])
_H0 = _HARMONIC[:-1]
_H1 = _HARMONIC[1:]


def _powers(r: np.ndarray) -> np.ndarray:
    t = 0.25 * r * r
    return t[:, None] ** _k[None, :]


def _split(r) -> tuple:
    arr = np.asarray(r, dtype=float)
    flat = np.atleast_1d(arr).ravel()
    return arr.shape, flat, flat <= SERIES_SWITCH


def _chunked(fn, r: np.ndarray) -> np.ndarray:
    out = np.empty(r.size)
    for start in range(0, r.size, _CHUNK):
        out[start:start + _CHUNK] = fn(r[start:start + _CHUNK])
    return out


def _k_integral(r: np.ndarray, order: int) -> np.ndarray:
    cosh = np.cosh(_K_NODES)
    weight = _K_WEIGHTS * (cosh if order == 1 else 1.0)
    return _chunked(lambda x: np.exp(-x[:, None] * cosh[None, :]) @ weight, r)


def _i_integral(r: np.ndarray, order: int) -> np.ndarray:
    cos = np.cos(_I_NODES)
    weight = np.cos(order * _I_NODES) / _I_POINTS
    return _chunked(lambda x: np.exp(x[:, None] * cos[None, :]) @ weight, r)


def i0(r):
    """Modified Bessel function I₀."""
    shape, x, small = _split(r)
    out = np.empty(x.size)
    out[small] = _powers(x[small]) @ _C0
    out[~small] = _i_integral(x[~small], 0)
    return out.reshape(shape)


def i1(r):
    """Modified Bessel function I₁."""
    shape, x, small = _split(r)
    out = np.empty(x.size)
    xs = x[small]
    out[small] = 0.5 * xs * (_powers(xs) @ _C1)
    out[~small] = _i_integral(x[~small], 1)
    return out.reshape(shape)


def k0_plus_log(r):
    """K₀(r) + log r, finite at r = 0 where it equals log 2 - γ."""
    shape, x, small = _split(r)
    out = np.empty(x.size)
    xs = x[small]
    if xs.size:
        powers = _powers(xs)
        i0s = powers @ _C0
        tail = powers[:, 1:] @ (_H0[1:] * _C0[1:])
        log_r = np.log(np.where(xs > 0.0, xs, 1.0))
        out[small] = L_CONSTANT * i0s - log_r * (i0s - 1.0) + tail
    big = x[~small]
    out[~small] = _k_integral(big, 0) + np.log(big)
    return out.reshape(shape)


def k0(r):
    """Modified Bessel function K₀; +inf at r = 0."""
    shape, x, small = _split(r)
    out = np.empty(x.size)
    xs = x[small]
    if xs.size:
        with np.errstate(divide="ignore"):
            out[small] = k0_plus_log(xs) - np.log(xs)
    out[~small] = _k_integral(x[~small], 0)
    return out.reshape(shape)


def k1(r):
    """Modified Bessel function K₁; +inf at r = 0."""
    shape, x, small = _split(r)
    out = np.empty(x.size)
    xs = x[small]
    if xs.size:
        powers = _powers(xs)
        i1s = 0.5 * xs * (powers @ _C1)
        series = powers @ ((-2.0 * EULER_GAMMA + _H0 + _H1) * _C1)
        with np.errstate(divide="ignore"):
            out[small] = 1.0 / xs + i1s * np.log(0.5 * xs) - 0.25 * xs * series
    out[~small] = _k_integral(x[~small], 1)
    return out.reshape(shape)


class BesselKernel:
    """
    Function table for the free-space kernel of (-Δ+1).

    2π times the fundamental solution equals K₀(|z|); L is the limit of
    K₀(r) + log r at the origin.
    """

    L = L_CONSTANT

    k0 = staticmethod(k0)
    k1 = staticmethod(k1)
    i0 = staticmethod(i0)
    i1 = staticmethod(i1)
    k0_plus_log = staticmethod(k0_plus_log)

    @staticmethod
    def fundamental(r):
        """Fundamental solution K₀(r)/2π."""
        return k0(r) / (2.0 * math.pi)

    @staticmethod
    def limit_constant(r: float = 1.0e-9) -> float:
        """K₀(r) + log r evaluated through the K₀ implementation at a tiny radius."""
        return float(k0(r) + math.log(r))
