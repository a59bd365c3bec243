"""Uniform B-bit scalar ADC, its bin likelihoods and truncated-normal moments.

Bins are numbered 1..2^B and are half-open, bin b = (r_{b-1}, r_b] with
r_0 = -inf and r_{2^B} = +inf. The interior thresholds of a uniform
quantizer with step ``step`` are r_b = (b - 2^(B-1)) * step.

Every likelihood here takes the *complex* noise variance ``v`` of the
underlying circular Gaussian; each real dimension therefore carries v/2,
which is where the sqrt(2) factors come from.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np
from scipy import special

from .numerics import std_normal_pdf

SQRT2 = np.sqrt(2.0)
MIN_MASS = 1e-300
TAIL_SWITCH = 5.0  # switch to erfcx beyond this many standard deviations
_SQRT_2_OVER_PI = np.sqrt(2.0 / np.pi)


class DegenerateMassError(ArithmeticError):
    """Raised when a truncation interval carries (numerically) no mass."""


@dataclass(frozen=True)
class QuantizerSpec:
    bits: Optional[int]
    step: Optional[float]
    thresholds: np.ndarray = field(repr=False)
    representatives: np.ndarray = field(repr=False)
    unquantized: bool = False

    @property
    def n_bins(self) -> int:
        return 0 if self.unquantized else 1 << self.bits

    def bin_bounds(self, b):
        """(lo, hi) edges of bin(s) ``b`` (1-based)."""
        b = np.asarray(b)
        return self.thresholds[b - 1], self.thresholds[b]

    def to_dict(self) -> dict:
        if self.unquantized:
            return {"unquantized": True}
        return {"bits": self.bits, "step": self.step}

    def label(self) -> str:
        return "inf" if self.unquantized else str(self.bits)


class BinIndexPair(NamedTuple):
    re_bin: int
    im_bin: int


def make_quantizer(bits: int, step: float) -> QuantizerSpec:
    if int(bits) != bits or not 1 <= bits <= 12:
        raise ValueError(f"bits must be an integer in 1..12, got {bits!r}")
    if not step > 0 or not np.isfinite(step):
        raise ValueError(f"step must be a positive finite number, got {step!r}")
    bits = int(bits)
    n = 1 << bits
    b = np.arange(1, n)
    interior = (b - n // 2) * float(step)
    thresholds = np.concatenate(([-np.inf], interior, [np.inf]))
    reps = np.empty(n)
    reps[:-1] = interior - step / 2
    reps[-1] = interior[-1] + step / 2
    thresholds.setflags(write=False)
    reps.setflags(write=False)
    return QuantizerSpec(bits, float(step), thresholds, reps)


def unquantized() -> QuantizerSpec:
    """Pass-through marker: the receiver observes Z + W directly."""
    empty = np.empty(0)
    empty.setflags(write=False)
    return QuantizerSpec(None, None, empty, empty, unquantized=True)


def quantizer_from_dict(d: dict) -> QuantizerSpec:
    if d.get("unquantized", False):
        return unquantized()
    return make_quantizer(d["bits"], d["step"])


def bin_index(spec: QuantizerSpec, u):
    """1-based bin of real value(s) ``u`` under the (lo, hi] convention."""
    return np.searchsorted(spec.thresholds[1:-1], u, side="left") + 1


def quantize(spec: QuantizerSpec, y: complex):
    """Quantize one complex sample. Returns (BinIndexPair, representative)."""
    if spec.unquantized:
        raise ValueError("unquantized spec has no bins")
    rb = int(bin_index(spec, y.real))
    ib = int(bin_index(spec, y.imag))
    rep = complex(spec.representatives[rb - 1], spec.representatives[ib - 1])
    return BinIndexPair(rb, ib), rep


def quantize_array(spec: QuantizerSpec, y: np.ndarray):
    """Vectorized quantize: returns (re_bins, im_bins, representatives)."""
    rb = bin_index(spec, y.real)
    ib = bin_index(spec, y.imag)
    reps = spec.representatives[rb - 1] + 1j * spec.representatives[ib - 1]
    return rb, ib, reps


def _check_var(v):
    if np.any(np.asarray(v) <= 0):
        raise ValueError("variance must be positive")


def _std_args(spec, b, x, v):
    lo, hi = spec.bin_bounds(b)
    scale = SQRT2 / np.sqrt(v)
    return (lo - x) * scale, (hi - x) * scale


def interval_prob(a, b):
    """Φ(b) - Φ(a), evaluated on the tail side to avoid cancellation."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    upper = a > 0
    with np.errstate(invalid="ignore"):
        return np.where(upper, special.ndtr(-a) - special.ndtr(-b), special.ndtr(b) - special.ndtr(a))


def log_interval_prob(a, b):
    """log(Φ(b) - Φ(a)) for a < b, accurate far into either tail."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    upper = a > 0
    big = np.where(upper, special.log_ndtr(-a), special.log_ndtr(b))
    small = np.where(upper, special.log_ndtr(-b), special.log_ndtr(a))
    with np.errstate(divide="ignore", invalid="ignore"):
        return big + np.log1p(-np.exp(small - big))


def log_abs_pdf_diff(a, b):
    """log|φ(a) - φ(b)| (including the 1/sqrt(2π)); -inf when equal."""
    a = np.abs(np.asarray(a, dtype=float))
    b = np.abs(np.asarray(b, dtype=float))
    m = np.minimum(a, b)
    M = np.maximum(a, b)
    with np.errstate(divide="ignore", invalid="ignore"):
        gap = np.where(np.isinf(M), np.inf, (M - m) * (M + m))
        return -0.5 * m * m + np.log1p(-np.exp(-0.5 * gap)) - 0.5 * np.log(2.0 * np.pi)


def bin_prob(spec: QuantizerSpec, b, x, v):
    """Ψ_b(x): probability that Re/Im of x + w lands in bin b, w ~ CN(0, v)."""
    _check_var(v)
    a_lo, a_hi = _std_args(spec, b, x, v)
    return interval_prob(a_lo, a_hi)


def bin_prob_deriv(spec: QuantizerSpec, b, x, v):
    """∂Ψ_b/∂x."""
    _check_var(v)
    a_lo, a_hi = _std_args(spec, b, x, v)
    return SQRT2 / np.sqrt(v) * (std_normal_pdf(a_lo) - std_normal_pdf(a_hi))


def _std_truncated_moments(a, b):
    """Mean, variance and log-mass of a standard normal restricted to (a, b].

    Intervals lying entirely in one tail are handled through erfcx so that
    the inverse-Mills ratios stay finite where the mass underflows.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    flip = b <= 0
    # reflect lower-tail intervals onto the upper tail
    a2 = np.where(flip, -b, a)
    b2 = np.where(flip, -a, b)
    a2, b2 = np.broadcast_arrays(a2, b2)
    deep = a2 > TAIL_SWITCH

    with np.errstate(over="ignore", invalid="ignore", divide="ignore", under="ignore"):
        # tail-side CDF difference: no cancellation for a2 >= 0
        upper = a2 >= 0
        z = special.ndtr(np.where(upper, -a2, b2)) - special.ndtr(np.where(upper, -b2, a2))
        la = std_normal_pdf(a2) / z
        lb = std_normal_pdf(b2) / z
        logz = np.log(z)

        if np.any(deep):
            # far tail: everything relative to exp(-a^2/2) via erfcx
            ad, bd = a2[deep], b2[deep]
            ea = special.erfcx(ad / SQRT2)
            decay = np.where(np.isinf(bd), 0.0, np.exp(-0.5 * (bd - ad) * (bd + ad)))
            eb = np.where(np.isinf(bd), 0.0, special.erfcx(bd / SQRT2) * decay)
            d = ea - eb
            la = np.array(la, dtype=float)
            lb = np.array(lb, dtype=float)
            logz = np.array(logz, dtype=float)
            la[deep] = _SQRT_2_OVER_PI / d
            lb[deep] = _SQRT_2_OVER_PI * decay / d
            logz[deep] = np.log(0.5 * d) - 0.5 * ad * ad

        ta = np.where(np.isinf(a2), 0.0, a2 * la)
        tb = np.where(np.isinf(b2), 0.0, b2 * lb)
        mean = la - lb
        var = 1.0 + ta - tb - mean * mean
    mean = np.where(flip, -mean, mean)
    return mean, var, logz


def truncated_moments_array(lo, hi, mean, var):
    """Vectorized truncated-normal moments with boundary clamping.

    Where the interval mass is below ``MIN_MASS`` the mean is clamped to the
    nearest finite boundary and the variance set to a tiny fraction of
    ``var``. Returns (post_mean, post_var, degenerate_mask).
    """
    sd = np.sqrt(var)
    a = (lo - mean) / sd
    b = (hi - mean) / sd
    m, v, logz = _std_truncated_moments(a, b)
    post_mean = mean + sd * m
    post_var = var * np.clip(v, 1e-12, 1.0)
    bad = ~(logz >= np.log(MIN_MASS)) | ~np.isfinite(post_mean)
    if np.any(bad):
        nearest = np.where(np.abs(lo - mean) < np.abs(hi - mean), lo, hi)
        nearest = np.where(np.isfinite(nearest), nearest, np.where(np.isfinite(lo), lo, hi))
        post_mean = np.where(bad, nearest, post_mean)
        post_var = np.where(bad, 1e-12 * var, post_var)
    return post_mean, post_var, bad


def truncated_gauss_moments(lo: float, hi: float, mean: float, var: float):
    """Mean and variance of N(mean, var) conditioned on (lo, hi]."""
    if not lo < hi:
        raise ValueError("need lo < hi")
    _check_var(var)
    sd = np.sqrt(var)
    m, v, logz = _std_truncated_moments((lo - mean) / sd, (hi - mean) / sd)
    if not logz >= np.log(MIN_MASS):
        raise DegenerateMassError(f"interval ({lo}, {hi}] has mass below {MIN_MASS} under N({mean}, {var})")
    return float(mean + sd * m), float(var * min(max(float(v), 1e-12), 1.0))
