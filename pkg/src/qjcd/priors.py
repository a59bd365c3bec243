"""Entrywise priors and their scalar-channel quantities.

For a prior P and the complex pseudo-channel r = x + n, n ~ CN(0, v),
``denoise`` returns the posterior mean and variance of x. For the
"effective" channel y = sqrt(snr) x + w, w ~ CN(0, 1), ``mmse`` and
``mutual_info`` give the matching MMSE and mutual information (nats).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import optimize, special

from .numerics import gaussian_expectation

KINDS = ("known", "qpsk", "gaussian", "channel")


@dataclass(frozen=True)
class PriorSpec:
    kind: str
    power: float = 1.0
    value: complex = 0j

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown prior kind {self.kind!r}; expected one of {KINDS}")
        if self.kind != "known" and not self.power > 0:
            raise ValueError("prior power must be positive")

    @classmethod
    def known(cls, value=0j):
        return cls("known", 0.0, value)

    @classmethod
    def qpsk(cls, power=1.0):
        return cls("qpsk", float(power))

    @classmethod
    def gaussian(cls, power=1.0):
        return cls("gaussian", float(power))

    @classmethod
    def channel(cls, variance=1.0):
        return cls("channel", float(variance))

    @property
    def is_gaussian(self) -> bool:
        return self.kind in ("gaussian", "channel")


def denoise(r, v, prior: PriorSpec, value=None):
    """Posterior mean/variance of x given r = x + CN(0, v) noise.

    ``value`` overrides ``prior.value`` for known priors so that a whole
    pilot matrix can be passed at once.
    """
    if np.any(np.asarray(v) <= 0):
        raise ValueError("pseudo-channel variance must be positive")
    r = np.asarray(r)
    if prior.kind == "known":
        x0 = prior.value if value is None else value
        return np.broadcast_to(np.asarray(x0, dtype=complex), r.shape).copy(), np.zeros(r.shape)
    c = prior.power
    if prior.is_gaussian:
        g = c / (c + v)
        return g * r, g * v
    # QPSK: independent BPSK on each real dimension with amplitude sqrt(c/2)
    amp = np.sqrt(c / 2)
    gain = np.sqrt(2 * c) / v
    mean = amp * (np.tanh(gain * r.real) + 1j * np.tanh(gain * r.imag))
    var = np.maximum(c - np.abs(mean) ** 2, 0.0)
    return mean, var


def hard_decision(x, prior: PriorSpec):
    """Nearest constellation point (QPSK only)."""
    if prior.kind != "qpsk":
        raise ValueError("hard decisions are defined for QPSK priors only")
    amp = np.sqrt(prior.power / 2)
    return amp * (np.where(x.real >= 0, 1.0, -1.0) + 1j * np.where(x.imag >= 0, 1.0, -1.0))


def _bpsk_expect(fn, s):
    """E fn(s + sqrt(s) z) over z ~ N(0, 1)."""
    rs = np.sqrt(s)
    return gaussian_expectation(lambda z: fn(s + rs * z))


def mmse(snr: float, prior: PriorSpec) -> float:
    if snr < 0:
        raise ValueError("snr must be nonnegative")
    if prior.kind == "known":
        return 0.0
    c = prior.power
    if prior.is_gaussian:
        return c / (1.0 + c * snr)
    s = c * snr
    if s == 0:
        return c
    # 1 - E tanh(x) = 2 E expit(-2x), which keeps precision at high snr
    return c * _bpsk_expect(lambda x: 2.0 * special.expit(-2.0 * x), s)


def mutual_info(snr: float, prior: PriorSpec) -> float:
    """I(X; sqrt(snr) X + W) in nats, W ~ CN(0, 1)."""
    if snr < 0:
        raise ValueError("snr must be nonnegative")
    if prior.kind == "known":
        return 0.0
    c = prior.power
    if prior.is_gaussian:
        return float(np.log1p(c * snr))
    s = c * snr
    if s == 0:
        return 0.0
    # per real dimension: log 2 - E log(1 + exp(-2x))
    return 2.0 * (np.log(2.0) - _bpsk_expect(lambda x: np.logaddexp(0.0, -2.0 * x), s))


def snr_for_mmse(target: float, prior: PriorSpec) -> float:
    """Inverse of ``mmse`` in its first argument (inf when target is 0)."""
    c = prior.power
    if not 0 <= target <= c:
        raise ValueError("target MMSE must lie in [0, prior power]")
    if target == c:
        return 0.0
    if target == 0:
        return np.inf
    if prior.is_gaussian:
        return 1.0 / target - 1.0 / c
    hi = 1.0
    while mmse(hi, prior) > target:
        hi *= 4.0
        if hi > 1e8:
            return np.inf
    return optimize.brentq(lambda s: mmse(s, prior) - target, 0.0, hi, xtol=1e-14, rtol=1e-13)
