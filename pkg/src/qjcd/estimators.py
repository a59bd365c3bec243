"""Message-passing receivers for the quantized MIMO uplink.

``jcd_estimate`` runs bilinear GAMP (BiG-AMP) over the whole block: channel
entries and data symbols are both unknown, pilot columns enter as known
priors. ``detect_known_channel`` is the GAMP special case where the channel
is given, and ``pilot_only_pipeline`` pairs it with a least-squares channel
estimate from the pilot sub-block.

Internally the mixing matrix is A = H / sqrt(K); channel messages are
converted back to H units on the way out.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from .model import BlockInstance, SystemConfig
from .priors import PriorSpec, denoise as denoise_input, hard_decision
from .quantizer import QuantizerSpec, truncated_moments_array

__all__ = [
    "GampOptions", "GampState", "JcdResult", "Observation", "PriorSpec",
    "denoise_input", "denoise_output_quantized", "detect_known_channel",
    "jcd_estimate", "ls_channel_estimate", "observation", "pilot_only_pipeline",
]


MIN_STEP = 0.02


@dataclass(frozen=True)
class GampOptions:
    max_iter: int = 50
    tol: float = 1e-6
    damping: float = 0.7
    variance_floor: float = 1e-12
    # channel-only sweeps over the pilot columns before the joint iteration
    pilot_warmup: int = 20

    def __post_init__(self):
        if self.max_iter < 0 or self.pilot_warmup < 0:
            raise ValueError("max_iter and pilot_warmup must be nonnegative")
        if not 0 <= self.damping < 1:
            raise ValueError("damping must lie in [0, 1)")
        if not self.tol > 0 or not self.variance_floor > 0:
            raise ValueError("tol and variance_floor must be positive")


class Observation(NamedTuple):
    """Receiver-side view of a block: bin indices (None when unquantized) and
    the real-valued proxy (bin representatives or the raw samples)."""

    re_bins: Optional[np.ndarray]
    im_bins: Optional[np.ndarray]
    y: np.ndarray

    def columns(self, cols) -> "Observation":
        pick = lambda a: None if a is None else a[:, cols]
        return Observation(pick(self.re_bins), pick(self.im_bins), self.y[:, cols])

    @property
    def shape(self):
        return self.y.shape


def observation(block: BlockInstance) -> Observation:
    return Observation(block.re_bins, block.im_bins, block.Y)


@dataclass
class GampState:
    xhat: np.ndarray
    xvar: np.ndarray
    hhat: np.ndarray
    hvar: np.ndarray
    phat: np.ndarray
    pvar: np.ndarray
    shat: np.ndarray
    svar: np.ndarray
    iteration: int = 0
    residual_metric: float = np.inf


@dataclass
class JcdResult:
    hhat: Optional[np.ndarray]
    x2hat_soft: np.ndarray
    x2hat_hard: Optional[np.ndarray]
    x2var: np.ndarray
    per_iteration: list = field(default_factory=list)
    converged: bool = False
    iterations_used: int = 0
    state: Optional[GampState] = field(default=None, repr=False)


def denoise_output_quantized(re_bins, im_bins, phat, pvar, noise_var, spec: QuantizerSpec, y=None):
    """Posterior mean/variance of z ~ CN(phat, pvar) given the ADC output.

    Each real dimension of y = z + w is a N(Re phat, (pvar + noise_var)/2)
    variable restricted to its bin; its truncated moments are mapped back
    to z by Gaussian conditioning (cov(z, y) = pvar/2 per dimension). With
    an unquantized spec ``y`` holds the raw samples and this is the linear
    AWGN update.
    """
    phat = np.asarray(phat, dtype=complex)
    pvar = np.asarray(pvar, dtype=float)
    if np.any(pvar <= 0):
        raise ValueError("pvar must be positive")
    gain = pvar / (pvar + noise_var)
    if spec.unquantized:
        if y is None:
            raise ValueError("unquantized output denoising needs the raw samples")
        return phat + gain * (np.asarray(y) - phat), gain * noise_var
    yvar = 0.5 * (pvar + noise_var)
    base = 0.5 * pvar * (1.0 - gain)
    zhat = np.empty(np.broadcast(phat, re_bins).shape, dtype=complex)
    zvar = np.zeros(zhat.shape)
    for part, bins in ((0, re_bins), (1, im_bins)):
        lo, hi = spec.bin_bounds(bins)
        mu = phat.real if part == 0 else phat.imag
        my, vy, _ = truncated_moments_array(lo, hi, mu, yvar)
        m = mu + gain * (my - mu)
        if part == 0:
            zhat.real = m
        else:
            zhat.imag = m
        zvar = zvar + base + gain * gain * vy
    return zhat, np.minimum(zvar, pvar)


def _run(obs: Observation, config: SystemConfig, opts: GampOptions, pilots: Optional[np.ndarray],
         H: Optional[np.ndarray], init_channel=None, max_iter: Optional[int] = None):
    """Shared BiG-AMP loop. ``H`` given means the channel is known (GAMP).

    ``init_channel`` is an optional (ahat, avar) start in A = H/sqrt(K) units.
    When every column is a pilot the loop learns the channel only and the
    residual tracks the channel estimate instead of the data.
    """
    K = config.K
    N, T = obs.shape
    T1 = 0 if pilots is None else pilots.shape[1]
    floor = opts.variance_floor
    # weight on the fresh update; ``damping`` is the weight kept from the previous iterate
    d = 1.0 - opts.damping
    max_iter = opts.max_iter if max_iter is None else max_iter
    xprior = config.data_prior
    hprior_a = PriorSpec.channel(config.channel_var / K)
    noise_var = max(config.noise_var, floor)
    spec = config.quantizer
    learn = H is None
    has_data = T > T1
    xcap = 1e6 * max(config.data_power, config.pilot_power)
    acap = 1e6 * config.channel_var / K

    data = slice(T1, T)
    xhat = np.zeros((K, T), dtype=complex)
    xvar = np.full((K, T), float(config.data_power))
    if T1:
        xhat[:, :T1] = pilots
        xvar[:, :T1] = floor
    if not learn:
        ahat = H / np.sqrt(K)
        avar = np.zeros((N, K))
    elif init_channel is None:
        ahat = np.zeros((N, K), dtype=complex)
        avar = np.full((N, K), config.channel_var / K)
    else:
        ahat = np.array(init_channel[0], dtype=complex)
        avar = np.array(init_channel[1], dtype=float)
    shat = np.zeros((N, T), dtype=complex)
    svar = np.zeros((N, T))
    pvar = None
    xbar, abar = xhat.copy(), ahat.copy()
    history = []

    converged = False
    it = 0
    res = res_prev = np.inf
    phat = None
    for it in range(1, max_iter + 1):
        a2 = np.abs(ahat) ** 2
        x2 = np.abs(xhat) ** 2
        pvar_bar = a2 @ xvar + (avar @ x2 if learn else 0.0)
        pvar_new = pvar_bar + (avar @ xvar if learn else 0.0)
        pvar_new = np.maximum(pvar_new, floor)
        pvar = pvar_new if it == 1 else d * pvar_new + (1 - d) * pvar
        phat = ahat @ xhat - shat * pvar_bar

        zhat, zvar = denoise_output_quantized(obs.re_bins, obs.im_bins, phat, pvar, noise_var, spec, obs.y)
        shat_new = (zhat - phat) / pvar
        svar_new = np.maximum((1.0 - zvar / pvar) / pvar, floor)
        if it == 1:
            shat, svar = shat_new, svar_new
        else:
            shat = d * shat_new + (1 - d) * shat
            svar = d * svar_new + (1 - d) * svar

        a_old = ahat
        if has_data:
            xbar = xhat if it == 1 else d * xhat + (1 - d) * xbar
            rvar = 1.0 / np.maximum(a2.T @ svar, 1.0 / xcap)
            # 1/(1+c) rather than the first-order 1-c, which flips sign once c > 1
            keep = 1.0 / (1.0 + rvar * (avar.T @ svar)) if learn else 1.0
            rhat = xbar * keep + rvar * (ahat.conj().T @ shat)

        if learn:
            abar = ahat if it == 1 else d * ahat + (1 - d) * abar
            qvar = 1.0 / np.maximum(svar @ x2.T, 1.0 / acap)
            keep = 1.0 / (1.0 + qvar * (svar @ xvar.T))
            qhat = abar * keep + qvar * (shat @ xhat.conj().T)
            a_new, avar_new = denoise_input(qhat, qvar, hprior_a)
            ahat = a_new
            avar = np.maximum(avar_new, floor)

        if has_data:
            x_new, xv_new = denoise_input(rhat[:, data], rvar[:, data], xprior)
            res = float(np.mean(np.abs(x_new - xhat[:, data]) ** 2))
            xhat = xhat.copy()
            xvar = xvar.copy()
            xhat[:, data] = x_new
            xvar[:, data] = np.maximum(xv_new, floor)
        else:
            res = float(K * np.mean(np.abs(ahat - a_old) ** 2))
        # with a fixed (possibly wrong) channel, back off the step whenever the iterate oscillates
        if not learn and res > res_prev:
            d = max(0.5 * d, MIN_STEP)
        res_prev = res

        history.append({
            "iteration": it,
            "xvar_mean": float(np.mean(xvar[:, data])) if has_data else 0.0,
            "hvar_mean": float(K * np.mean(avar)),
            "residual": res,
            "min_var": float(min(xvar[:, data].min() if has_data else np.inf,
                                 avar.min() if learn else np.inf, pvar.min(), svar.min())),
            "pilots_pinned": bool(T1 == 0 or np.array_equal(xhat[:, :T1], pilots)),
        })
        # the first sweep only moves the channel when it starts at zero
        if res < opts.tol and it > 1:
            converged = True
            break

    st = GampState(xhat, xvar, np.sqrt(K) * ahat, K * avar,
                   np.zeros((N, T), complex) if phat is None else phat,
                   np.full((N, T), np.nan) if pvar is None else pvar,
                   shat, svar, it if max_iter else 0, res)
    return st, history, converged


def _result(st: GampState, history, converged, config: SystemConfig, T1: int, with_channel: bool) -> JcdResult:
    soft = st.xhat[:, T1:]
    hard = hard_decision(soft, config.data_prior) if config.data_constellation == "qpsk" else None
    return JcdResult(
        hhat=st.hhat if with_channel else None,
        x2hat_soft=soft, x2hat_hard=hard, x2var=st.xvar[:, T1:],
        per_iteration=history, converged=converged,
        iterations_used=st.iteration, state=st,
    )


def jcd_estimate(obs: Observation, X1: np.ndarray, config: SystemConfig, opts: GampOptions = GampOptions()) -> JcdResult:
    """Joint channel-and-data estimate from the whole quantized block."""
    if obs.shape != (config.N, config.T):
        raise ValueError(f"observation shape {obs.shape} does not match N x T = {(config.N, config.T)}")
    if X1.shape != (config.K, config.T1):
        raise ValueError(f"pilot shape {X1.shape} does not match K x T1 = {(config.K, config.T1)}")
    init = None
    warm_hist = []
    if opts.pilot_warmup and opts.max_iter:
        T1 = config.T1
        warm, warm_hist, _ = _run(obs.columns(slice(0, T1)), config, opts, X1, None,
                                  max_iter=opts.pilot_warmup)
        K = config.K
        init = (warm.hhat / np.sqrt(K), warm.hvar / K)
        for h in warm_hist:
            h["phase"] = "pilot"
    st, hist, ok = _run(obs, config, opts, X1, None, init_channel=init)
    return _result(st, warm_hist + hist, ok, config, config.T1, True)


def detect_known_channel(obs2: Observation, H: np.ndarray, config: SystemConfig,
                         opts: GampOptions = GampOptions()) -> JcdResult:
    """GAMP data detection on the data sub-block with the channel treated as exact."""
    if H.shape != (config.N, config.K):
        raise ValueError(f"channel shape {H.shape} does not match N x K")
    if obs2.shape != (config.N, config.T2):
        raise ValueError(f"observation shape {obs2.shape} does not match N x T2")
    st, hist, ok = _run(obs2, config, opts, None, np.asarray(H, dtype=complex))
    return _result(st, hist, ok, config, 0, False)


def ls_channel_estimate(R1: np.ndarray, X1: np.ndarray) -> np.ndarray:
    """Least-squares H from pilot-phase outputs: sqrt(K) R X1^H (X1 X1^H)^-1."""
    K = X1.shape[0]
    if R1.shape[1] != X1.shape[1]:
        raise ValueError("pilot length mismatch between outputs and pilots")
    gram = X1 @ X1.conj().T
    if X1.shape[1] < K or np.linalg.matrix_rank(gram) < K:
        raise np.linalg.LinAlgError("pilot Gram matrix X1 X1^H is rank deficient")
    rhs = (R1 @ X1.conj().T).conj().T
    return np.sqrt(K) * np.linalg.solve(gram, rhs).conj().T


def pilot_only_pipeline(obs: Observation, X1: np.ndarray, config: SystemConfig,
                        opts: GampOptions = GampOptions()) -> JcdResult:
    """LS channel from the pilots, then detection treating it as exact.

    A rank-deficient pilot block falls back to the minimum-norm solution and
    the trial is flagged as not converged.
    """
    T1 = config.T1
    try:
        hhat = ls_channel_estimate(obs.y[:, :T1], X1)
        ok = True
    except np.linalg.LinAlgError:
        hhat = np.sqrt(X1.shape[0]) * obs.y[:, :T1] @ np.linalg.pinv(X1)
        ok = False
    res = detect_known_channel(obs.columns(slice(T1, None)), hhat, config, opts)
    res.hhat = hhat
    res.converged = res.converged and ok
    return res
