"""Block-fading quantized MIMO uplink: Y~ = Q_c(H X / sqrt(K) + W)."""
from __future__ import annotations

from dataclasses import asdict, dataclass, replace
from typing import Optional

import numpy as np

from .numerics import SeedSpec, make_rng
from .priors import PriorSpec
from .quantizer import QuantizerSpec, make_quantizer, quantize_array

CONSTELLATIONS = ("qpsk", "gaussian")


@dataclass(frozen=True)
class SystemConfig:
    K: int
    N: int
    T1: int
    T2: int
    noise_var: float
    quantizer: QuantizerSpec
    channel_var: float = 1.0
    pilot_power: float = 1.0
    data_power: float = 1.0
    pilot_constellation: str = "qpsk"
    data_constellation: str = "qpsk"

    def __post_init__(self):
        for name in ("K", "N", "T1", "T2"):
            val = getattr(self, name)
            if int(val) != val or val < 1:
                raise ValueError(f"{name} must be a positive integer, got {val!r}")
        if not self.noise_var >= 0:
            raise ValueError("noise_var must be nonnegative")
        for name in ("channel_var", "pilot_power", "data_power"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.pilot_constellation != "qpsk":
            raise ValueError("pilot_constellation must be 'qpsk'")
        if self.data_constellation not in CONSTELLATIONS:
            raise ValueError(f"data_constellation must be one of {CONSTELLATIONS}")

    @property
    def T(self) -> int:
        return self.T1 + self.T2

    @property
    def alpha(self) -> float:
        return self.N / self.K

    @property
    def beta1(self) -> float:
        return self.T1 / self.K

    @property
    def beta2(self) -> float:
        return self.T2 / self.K

    @property
    def snr_db(self) -> float:
        return -10 * np.log10(self.noise_var)

    def with_snr_db(self, snr_db: float) -> "SystemConfig":
        return replace(self, noise_var=10 ** (-snr_db / 10))

    @property
    def data_prior(self) -> PriorSpec:
        return PriorSpec(self.data_constellation, self.data_power)

    @property
    def channel_prior(self) -> PriorSpec:
        return PriorSpec.channel(self.channel_var)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["quantizer"] = self.quantizer.to_dict()
        return d


@dataclass
class BlockInstance:
    H: np.ndarray
    X1: np.ndarray
    X2: np.ndarray
    W: np.ndarray
    Z: np.ndarray
    Y: np.ndarray  # bin representatives, or Z + W when unquantized
    re_bins: Optional[np.ndarray] = None
    im_bins: Optional[np.ndarray] = None

    @property
    def X(self) -> np.ndarray:
        return np.hstack([self.X1, self.X2])


def forward(H: np.ndarray, X: np.ndarray) -> np.ndarray:
    """Noiseless output Z = H X / sqrt(K)."""
    if H.ndim != 2 or X.ndim != 2 or H.shape[1] != X.shape[0]:
        raise ValueError(f"dimension mismatch: H {H.shape} vs X {X.shape}")
    return H @ X / np.sqrt(H.shape[1])


def _cgauss(rng, shape, var):
    return np.sqrt(var / 2) * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def _qpsk(rng, shape, power):
    b = rng.integers(0, 2, size=(2,) + tuple(shape))
    return np.sqrt(power / 2) * ((2 * b[0] - 1) + 1j * (2 * b[1] - 1))


def draw_symbols(rng, shape, constellation: str, power: float) -> np.ndarray:
    if constellation == "qpsk":
        return _qpsk(rng, shape, power)
    if constellation == "gaussian":
        return _cgauss(rng, shape, power)
    raise ValueError(f"unknown constellation {constellation!r}")


def generate_block(config: SystemConfig, seed: SeedSpec) -> BlockInstance:
    """Draw one block. Draw order is fixed (H, X1, X2, W) and the noise is
    drawn at unit variance before scaling, so trials sharing a seed share
    the same fading, symbols and noise shape across SNR points."""
    rng = make_rng(seed)
    K, N = config.K, config.N
    H = _cgauss(rng, (N, K), config.channel_var)
    X1 = draw_symbols(rng, (K, config.T1), config.pilot_constellation, config.pilot_power)
    X2 = draw_symbols(rng, (K, config.T2), config.data_constellation, config.data_power)
    W = np.sqrt(config.noise_var) * _cgauss(rng, (N, config.T), 1.0)
    Z = forward(H, np.hstack([X1, X2]))
    Y = Z + W
    if config.quantizer.unquantized:
        return BlockInstance(H, X1, X2, W, Z, Y)
    rb, ib, reps = quantize_array(config.quantizer, Y)
    return BlockInstance(H, X1, X2, W, Z, reps, rb, ib)


def default_quantizer() -> QuantizerSpec:
    return make_quantizer(3, 0.5)
