"""Replica-symmetric predictions for the Bayes-optimal joint channel-and-data
estimator over a quantized MIMO uplink.

In the large-system limit every channel entry and every data symbol sees an
effective scalar channel y = sqrt(qt) x + CN(0, 1). The effective SNRs
(qt_H, qt_X2) and the overlaps (q_H, q_X2) are coupled through the
output-channel Fisher information ``chi`` of the quantized observation:

    qt_H  = beta1 * c_X1 * chi(q_H c_X1) + beta2 * q_X2 * chi(q_H q_X2)
    qt_X2 = alpha * q_H * chi(q_H q_X2)
    q_H   = c_H  - mmse_H(qt_H)
    q_X2  = c_X2 - mmse_X2(qt_X2)

Pilots are known, so their overlap is pinned at c_X1. The output integrals
run over a real standard-normal v and over all 2^B bins of one real
dimension; the complex observation contributes two such dimensions.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy import optimize

from . import priors
from .numerics import QuadratureRule, gauss_hermite, q_function
from .priors import PriorSpec
from .quantizer import SQRT2, QuantizerSpec, log_abs_pdf_diff, log_interval_prob

log = logging.getLogger(__name__)

MASS_GUARD = np.log(1e-300)
RULE_RTOL = 1e-10


@dataclass(frozen=True)
class ReplicaConfig:
    alpha: float
    beta1: float
    beta2: float
    noise_var: float
    quantizer: QuantizerSpec
    data_prior: str = "qpsk"
    c_H: float = 1.0
    c_X1: float = 1.0
    c_X2: float = 1.0
    mode: str = "jcd"

    def __post_init__(self):
        if self.mode not in ("jcd", "perfect-csi"):
            raise ValueError(f"mode must be 'jcd' or 'perfect-csi', got {self.mode!r}")
        if self.data_prior not in ("qpsk", "gaussian"):
            raise ValueError(f"data_prior must be 'qpsk' or 'gaussian', got {self.data_prior!r}")
        for name in ("alpha", "beta2", "noise_var", "c_H", "c_X1", "c_X2"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.beta1 < 0:
            raise ValueError("beta1 must be nonnegative")
        if self.mode == "jcd" and self.beta1 == 0:
            # without pilots q = 0 is an absorbing fixed point
            log.warning("jcd mode with beta1 = 0: the uninformative fixed point is stable")

    @property
    def x_prior(self) -> PriorSpec:
        return PriorSpec(self.data_prior, self.c_X2)

    @property
    def h_prior(self) -> PriorSpec:
        return PriorSpec.channel(self.c_H)


@dataclass
class ReplicaSolution:
    q_H: float
    q_X2: float
    qt_H: float
    qt_X2: float
    mse_H: float
    mse_X2: float
    chi1: float
    chi2: float
    free_entropy: float
    converged: bool
    iterations: int
    residual: float = np.nan
    candidates: list = field(default_factory=list, repr=False)

    @property
    def ber(self) -> float:
        return predict_ber_qpsk(self.qt_X2)


# ----------------------------------------------------------------------------
# output channel


def _effective_var(q_prod, cc, noise_var):
    s = noise_var + cc - q_prod
    if s <= 0:
        raise ValueError("q_H q_X exceeds c_H c_X: negative effective variance")
    return s


def _log_terms(spec: QuantizerSpec, q_prod: float, s: float, v: np.ndarray):
    """log Ψ_b and log (Ψ'_b)^2 on a (nodes, bins) grid."""
    mean = np.sqrt(q_prod) * v[:, None]
    edges = SQRT2 * spec.thresholds[None, :]
    scale = 1.0 / np.sqrt(s)
    a = (edges[:, :-1] - mean) * scale
    b = (edges[:, 1:] - mean) * scale
    log_psi = log_interval_prob(a, b)
    log_dpsi2 = 2.0 * log_abs_pdf_diff(a, b) - np.log(s)
    return log_psi, log_dpsi2


def _chi_integrand(spec, q_prod, s):
    def f(v):
        log_psi, log_dpsi2 = _log_terms(spec, q_prod, s, v)
        with np.errstate(invalid="ignore", under="ignore"):
            t = np.where(log_psi > MASS_GUARD, np.exp(log_dpsi2 - log_psi), 0.0)
        return np.nan_to_num(t, nan=0.0).sum(axis=1)

    return f


def _plogp_integrand(spec, q_prod, s):
    def f(v):
        log_psi, _ = _log_terms(spec, q_prod, s, v)
        with np.errstate(invalid="ignore", under="ignore"):
            t = np.where(log_psi > MASS_GUARD, np.exp(log_psi) * log_psi, 0.0)
        return t.sum(axis=1)

    return f


def select_rule(spec: QuantizerSpec, noise_var: float, cc: float, q_max: Optional[float] = None,
                order: int = 64, rtol: float = RULE_RTOL, max_order: int = 1 << 14) -> QuadratureRule:
    """Gauss-Hermite rule fine enough for ``chi`` over the whole overlap range.

    The integrand sharpens as the overlap grows, so the order is doubled
    until the most informative point (q_max, default cc) is resolved.
    Fixing the rule for a whole solve keeps the fixed-point map smooth.
    """
    if spec.unquantized:
        return gauss_hermite(order)
    q_max = cc * (1 - 1e-12) if q_max is None else q_max
    probes = [q_max, 0.5 * q_max]
    prev = [gauss_hermite(order).integrate(_chi_integrand(spec, q, _effective_var(q, cc, noise_var))) for q in probes]
    while order < max_order:
        order *= 2
        rule = gauss_hermite(order)
        cur = [rule.integrate(_chi_integrand(spec, q, _effective_var(q, cc, noise_var))) for q in probes]
        if all(abs(c - p) <= rtol * abs(c) for c, p in zip(cur, prev)):
            return rule
        prev = cur
    log.warning("quadrature did not settle below order %d", max_order)
    return gauss_hermite(max_order)


def chi(q_H: float, q_X: float, c_H: float, c_X: float, noise_var: float, spec: QuantizerSpec,
        rule: Optional[QuadratureRule] = None) -> float:
    """Fisher information of the quantized output about its Gaussian mean.

    Σ_b ∫Dv Ψ'_b(√(q_H q_X) v)^2 / Ψ_b(√(q_H q_X) v), with effective
    variance noise_var + c_H c_X - q_H q_X. Terms with Ψ_b < 1e-300 are
    dropped.
    """
    q_prod = q_H * q_X
    if q_prod < 0:
        raise ValueError("overlaps must be nonnegative")
    s = _effective_var(q_prod, c_H * c_X, noise_var)
    if spec.unquantized:
        return 1.0 / s
    if rule is None:
        rule = select_rule(spec, noise_var, c_H * c_X, q_max=q_prod if q_prod > 0 else None)
    return rule.integrate(_chi_integrand(spec, q_prod, s))


def output_entropy(q_prod: float, cc: float, noise_var: float, spec: QuantizerSpec,
                   rule: Optional[QuadratureRule] = None) -> float:
    """Σ_b ∫Dv Ψ_b log Ψ_b for one real dimension (differential form when
    unquantized)."""
    s = _effective_var(q_prod, cc, noise_var)
    if spec.unquantized:
        return -0.5 * np.log(2 * np.pi * np.e * s)
    if rule is None:
        rule = select_rule(spec, noise_var, cc)
    return rule.integrate(_plogp_integrand(spec, q_prod, s))


# ----------------------------------------------------------------------------
# scalar channel


def scalar_mmse(qt: float, prior: PriorSpec) -> float:
    return priors.mmse(qt, prior)


def predict_ber_qpsk(qt_X2: float) -> float:
    return float(q_function(np.sqrt(max(qt_X2, 0.0))))


def achievable_rate(qt_X2: float, prior: PriorSpec, beta1: float, beta2: float, discount: bool = True) -> float:
    """Separate-decoding rate in bits per channel use per user.

    With ``discount`` the rate is scaled by the data fraction
    beta2 / (beta1 + beta2).
    """
    bits = priors.mutual_info(qt_X2, prior) / np.log(2.0)
    if discount:
        bits *= beta2 / (beta1 + beta2)
    return float(bits)


# ----------------------------------------------------------------------------
# fixed point


class _System:
    """Fixed-point map of one configuration with a frozen quadrature rule."""

    def __init__(self, cfg: ReplicaConfig, rule: Optional[QuadratureRule] = None):
        self.cfg = cfg
        self.cc2 = cfg.c_H * cfg.c_X2
        if rule is None:
            rule = select_rule(cfg.quantizer, cfg.noise_var, max(cfg.c_H * cfg.c_X1, self.cc2))
        self.rule = rule

    def chis(self, q_H, q_X2):
        cfg = self.cfg
        chi2 = chi(q_H, q_X2, cfg.c_H, cfg.c_X2, cfg.noise_var, cfg.quantizer, self.rule)
        if cfg.mode == "perfect-csi" or cfg.beta1 == 0:
            return 0.0, chi2
        chi1 = chi(q_H, cfg.c_X1, cfg.c_H, cfg.c_X1, cfg.noise_var, cfg.quantizer, self.rule)
        return chi1, chi2

    def hat(self, q_H, q_X2):
        cfg = self.cfg
        chi1, chi2 = self.chis(q_H, q_X2)
        qt_H = cfg.beta1 * cfg.c_X1 * chi1 + cfg.beta2 * q_X2 * chi2
        qt_X2 = cfg.alpha * q_H * chi2
        return qt_H, qt_X2, chi1, chi2

    def step(self, q_H, q_X2):
        cfg = self.cfg
        qt_H, qt_X2, chi1, chi2 = self.hat(q_H, q_X2)
        if cfg.mode == "perfect-csi":
            new_H = cfg.c_H
        else:
            new_H = cfg.c_H - scalar_mmse(qt_H, cfg.h_prior)
        new_X = cfg.c_X2 - scalar_mmse(qt_X2, cfg.x_prior)
        return new_H, new_X

    def residual(self, q_H, q_X2):
        new_H, new_X = self.step(q_H, q_X2)
        return max(abs(new_H - q_H) / self.cfg.c_H, abs(new_X - q_X2) / self.cfg.c_X2)

    def free_entropy(self, q_H, q_X2, qt_H, qt_X2):
        cfg = self.cfg
        fe = 2 * cfg.alpha * cfg.beta2 * output_entropy(q_H * q_X2, self.cc2, cfg.noise_var, cfg.quantizer, self.rule)
        fe += cfg.beta2 * _input_term(q_X2, qt_X2, cfg.x_prior)
        if cfg.mode == "jcd":
            if cfg.beta1 > 0:
                fe += 2 * cfg.alpha * cfg.beta1 * output_entropy(
                    q_H * cfg.c_X1, cfg.c_H * cfg.c_X1, cfg.noise_var, cfg.quantizer, self.rule)
            fe += cfg.alpha * _input_term(q_H, qt_H, cfg.h_prior)
        return float(fe)


def _input_term(q, qt, prior: PriorSpec):
    """-I(qt) + (c - q) qt, with its qt -> inf limit."""
    if np.isinf(qt):
        return -np.inf if prior.is_gaussian else -2.0 * np.log(2.0)
    return -priors.mutual_info(qt, prior) + (prior.power - q) * qt


def free_entropy(q_H: float, q_X2: float, qt_H: float, qt_X2: float, cfg: ReplicaConfig,
                 rule: Optional[QuadratureRule] = None) -> float:
    """RS free entropy per K^2 at the given overlaps and effective SNRs.

    Output term (both real dimensions, both phases), minus the scalar-channel
    mutual informations, plus the (c - q) qt corrections. Known pilots carry
    no information term. In perfect-csi mode the channel terms vanish.
    """
    return _System(cfg, rule).free_entropy(q_H, q_X2, qt_H, qt_X2)


def potential(q_H: float, q_X2: float, cfg: ReplicaConfig, rule: Optional[QuadratureRule] = None) -> float:
    """Free entropy as a function of the overlaps alone.

    The effective SNRs are chosen so that the scalar channels reproduce the
    overlaps (c - q = mmse(qt)). Stationary points of this function are the
    fixed points; the Bayes-optimal one is its global maximum.
    """
    qt_H = priors.snr_for_mmse(cfg.c_H - q_H, cfg.h_prior) if cfg.mode == "jcd" else 0.0
    qt_X2 = priors.snr_for_mmse(cfg.c_X2 - q_X2, cfg.x_prior)
    return _System(cfg, rule).free_entropy(q_H, q_X2, qt_H, qt_X2)


def _iterate(system: _System, q_H, q_X2, damping, tol, max_iter):
    cfg = system.cfg
    for it in range(1, max_iter + 1):
        new_H, new_X = system.step(q_H, q_X2)
        new_H = damping * new_H + (1 - damping) * q_H
        new_X = damping * new_X + (1 - damping) * q_X2
        delta = max(abs(new_H - q_H) / cfg.c_H, abs(new_X - q_X2) / cfg.c_X2)
        q_H, q_X2 = new_H, new_X
        if delta < tol:
            return q_H, q_X2, True, it
    return q_H, q_X2, False, max_iter


def _polish(system: _System, q_H, q_X2):
    """Newton-type cleanup of a damped-iteration result."""
    cfg = system.cfg
    if cfg.mode == "perfect-csi":
        f = lambda x: system.step(cfg.c_H, x[0])[1] - x[0]
        sol = optimize.root(lambda x: [f(x)], [q_X2], method="hybr", options={"xtol": 1e-14})
        if sol.success and 0 <= sol.x[0] <= cfg.c_X2:
            return cfg.c_H, float(sol.x[0])
        return q_H, q_X2

    def g(x):
        a, b = system.step(x[0], x[1])
        return [a - x[0], b - x[1]]

    sol = optimize.root(g, [q_H, q_X2], method="hybr", options={"xtol": 1e-14})
    if sol.success and 0 <= sol.x[0] <= cfg.c_H and 0 <= sol.x[1] <= cfg.c_X2:
        cand = (float(sol.x[0]), float(sol.x[1]))
        if system.residual(*cand) <= system.residual(q_H, q_X2):
            return cand
    return q_H, q_X2


def _solution(system: _System, q_H, q_X2, converged, iterations) -> ReplicaSolution:
    cfg = system.cfg
    qt_H, qt_X2, chi1, chi2 = system.hat(q_H, q_X2)
    return ReplicaSolution(
        q_H=q_H, q_X2=q_X2, qt_H=qt_H, qt_X2=qt_X2,
        mse_H=cfg.c_H - q_H, mse_X2=cfg.c_X2 - q_X2,
        chi1=chi1, chi2=chi2,
        free_entropy=system.free_entropy(q_H, q_X2, qt_H, qt_X2),
        converged=converged, iterations=iterations,
        residual=system.residual(q_H, q_X2),
    )


def solve_fixed_point(cfg: ReplicaConfig, damping: float = 0.5, tol: float = 1e-10, max_iter: int = 10_000,
                      inits=None, rule: Optional[QuadratureRule] = None, polish: bool = True) -> ReplicaSolution:
    """Damped iteration of the fixed-point equations from several starts.

    Default starts are near-zero overlap, near-full overlap and the midpoint.
    Distinct converged fixed points (any overlap differing by more than
    1e-6) are ranked by free entropy and the largest wins; all of them are
    kept in ``candidates``.
    """
    system = _System(cfg, rule)
    eps = 1e-6
    if inits is None:
        inits = [(eps * cfg.c_H, eps * cfg.c_X2), ((1 - eps) * cfg.c_H, (1 - eps) * cfg.c_X2),
                 (0.5 * cfg.c_H, 0.5 * cfg.c_X2)]
    results = []
    for q_H, q_X2 in inits:
        if cfg.mode == "perfect-csi":
            q_H = cfg.c_H
        q_H, q_X2, ok, its = _iterate(system, q_H, q_X2, damping, tol, max_iter)
        if polish:
            q_H, q_X2 = _polish(system, q_H, q_X2)
        results.append(_solution(system, q_H, q_X2, ok, its))

    distinct: list[ReplicaSolution] = []
    for r in sorted(results, key=lambda r: not r.converged):
        if not any(abs(r.q_H - d.q_H) <= 1e-6 and abs(r.q_X2 - d.q_X2) <= 1e-6 for d in distinct):
            distinct.append(r)
    converged = [r for r in distinct if r.converged]
    if converged:
        best = max(converged, key=lambda r: r.free_entropy)
    else:
        best = min(distinct, key=lambda r: r.residual)
    best = replace(best, candidates=distinct)
    if len(converged) > 1:
        log.info("coexisting fixed points at %s: %s", cfg, [(c.q_H, c.q_X2, c.free_entropy) for c in converged])
    return best


def solve_perfect_csi(cfg: ReplicaConfig, rule: Optional[QuadratureRule] = None, grid: int = 200) -> ReplicaSolution:
    """Direct root solve of the known-channel SINR equation.

    qt_X = alpha c_H chi(c_H q_X) with q_X = c_X - mmse(qt_X); every sign
    change on a grid over q_X is bracketed and refined, and the root with
    the largest free entropy is returned.
    """
    cfg = replace(cfg, mode="perfect-csi")
    system = _System(cfg, rule)

    def g(q):
        return system.step(cfg.c_H, q)[1] - q

    qs = np.linspace(0.0, cfg.c_X2 * (1 - 1e-12), grid + 1)
    vals = np.array([g(q) for q in qs])
    roots = []
    for i in range(grid):
        if vals[i] == 0:
            roots.append(qs[i])
        elif vals[i] * vals[i + 1] < 0:
            roots.append(optimize.brentq(g, qs[i], qs[i + 1], xtol=1e-15, rtol=4 * np.finfo(float).eps))
    if not roots:
        roots = [qs[-1]]
    sols = [_solution(system, cfg.c_H, float(r), True, 0) for r in roots]
    best = max(sols, key=lambda s: s.free_entropy)
    return replace(best, candidates=sols)
