"""Special functions, Gaussian quadrature and seeded random streams.

Integrals over the standard normal measure

    ∫ Dz f(z),    Dz = (2π)^(-1/2) exp(-z^2/2) dz

are evaluated with probabilists' Gauss-Hermite rules whose weights are
rescaled to sum to one, so that ``sum(w * f(z))`` approximates ``E f(Z)``.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Callable

import numpy as np
from scipy import special

DEFAULT_ORDER = 64
MAX_ORDER = 1 << 14


def std_normal_cdf(x):
    """Φ(x), accurate in both tails (erfc based)."""
    return special.ndtr(x)


def q_function(x):
    """Q(x) = 1 - Φ(x), evaluated as Φ(-x) so there is no cancellation."""
    return special.ndtr(np.negative(x))


def log_std_normal_cdf(x):
    return special.log_ndtr(x)


def std_normal_pdf(x):
    x = np.asarray(x, dtype=float)
    return np.exp(-0.5 * x * x) / np.sqrt(2.0 * np.pi)


@dataclass(frozen=True)
class QuadratureRule:
    """Nodes/weights for expectations under the standard normal measure."""

    nodes: np.ndarray
    weights: np.ndarray
    order: int

    def integrate(self, f: Callable[[np.ndarray], np.ndarray]) -> float:
        return float(np.dot(self.weights, f(self.nodes)))


@lru_cache(maxsize=32)
def gauss_hermite(order: int) -> QuadratureRule:
    if int(order) != order or order < 2:
        raise ValueError(f"quadrature order must be an integer >= 2, got {order!r}")
    order = int(order)
    x, w = special.roots_hermitenorm(order)
    w = w / np.sqrt(2.0 * np.pi)
    # extreme nodes of large rules carry weights that underflow to zero
    keep = w > 0
    x, w = x[keep], w[keep]
    x.setflags(write=False)
    w.setflags(write=False)
    return QuadratureRule(nodes=x, weights=w, order=order)


def gaussian_expectation(
    f: Callable[[np.ndarray], np.ndarray],
    order: int = DEFAULT_ORDER,
    rtol: float = 1e-9,
    atol: float = 1e-300,
    max_order: int = MAX_ORDER,
) -> float:
    """E f(Z) for Z ~ N(0, 1), doubling the rule order until two successive
    estimates agree to ``rtol``.

    ``f`` must accept a 1-d array of nodes and return values of the same
    shape. If ``max_order`` is reached the last estimate is returned.
    """
    prev = gauss_hermite(order).integrate(f)
    while order < max_order:
        order *= 2
        cur = gauss_hermite(order).integrate(f)
        if abs(cur - prev) <= rtol * abs(cur) + atol:
            return cur
        prev = cur
    return prev


@dataclass(frozen=True)
class SeedSpec:
    """Key of a counter-based random stream.

    Streams with different ``stream_id`` never overlap: the pair is the
    128-bit Philox key, so draws do not depend on which other streams were
    consumed first.
    """

    master_seed: int
    stream_id: int = 0

    def __post_init__(self):
        for name in ("master_seed", "stream_id"):
            val = getattr(self, name)
            if not 0 <= val < 2**64:
                raise ValueError(f"{name} must fit in an unsigned 64-bit integer, got {val}")

    def child(self, stream_id: int) -> "SeedSpec":
        return SeedSpec(self.master_seed, stream_id)


def make_rng(seed: SeedSpec) -> np.random.Generator:
    key = np.array([seed.master_seed, seed.stream_id], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))
