"""Per-trial error counts and their exact aggregation across trials."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np


def _check_shapes(a, b):
    if np.shape(a) != np.shape(b):
        raise ValueError(f"dimension mismatch: {np.shape(a)} vs {np.shape(b)}")


def bit_errors_qpsk(hard, truth) -> int:
    """Sign disagreements on the real and imaginary parts (Gray-mapped QPSK)."""
    hard = np.asarray(hard)
    truth = np.asarray(truth)
    _check_shapes(hard, truth)
    return int(np.count_nonzero(np.signbit(hard.real) != np.signbit(truth.real))
               + np.count_nonzero(np.signbit(hard.imag) != np.signbit(truth.imag)))


def ber_qpsk(hard, truth) -> "TrialMetrics":
    errs = bit_errors_qpsk(hard, truth)
    n = int(np.size(truth))
    return TrialMetrics(symbols_counted=n, bits_in_error=errs)


def sq_error_sum(estimate, truth) -> float:
    estimate = np.asarray(estimate)
    truth = np.asarray(truth)
    _check_shapes(estimate, truth)
    return float(np.sum(np.abs(estimate - truth) ** 2))


def mse_normalized(estimate, truth) -> float:
    """Mean of |estimate - truth|^2 over entries."""
    return sq_error_sum(estimate, truth) / max(int(np.size(truth)), 1)


@dataclass(frozen=True)
class TrialMetrics:
    """Additive error tallies; rates are derived on demand.

    Squared errors are stored as sums with their entry counts so that merging
    any number of trials divides exactly once.
    """

    symbols_counted: int = 0
    bits_in_error: int = 0
    sq_err_x2: float = 0.0
    entries_x2: int = 0
    sq_err_h: float = 0.0
    entries_h: int = 0
    trials: int = 0
    not_converged: int = 0

    @property
    def ber(self) -> float:
        bits = 2 * self.symbols_counted
        return self.bits_in_error / bits if bits else float("nan")

    @property
    def mse_x2(self) -> float:
        return self.sq_err_x2 / self.entries_x2 if self.entries_x2 else float("nan")

    @property
    def mse_h(self) -> float:
        return self.sq_err_h / self.entries_h if self.entries_h else float("nan")

    def merge(self, other: "TrialMetrics") -> "TrialMetrics":
        return TrialMetrics(*(a + b for a, b in zip(self._fields(), other._fields())))

    def _fields(self):
        return (self.symbols_counted, self.bits_in_error, self.sq_err_x2, self.entries_x2,
                self.sq_err_h, self.entries_h, self.trials, self.not_converged)


def trial_metrics(x2_truth, x2_soft, x2_hard=None, h_truth=None, h_est: Optional[np.ndarray] = None,
                  converged: bool = True) -> TrialMetrics:
    """Tally one trial. Bit errors need hard QPSK decisions; the channel MSE
    is skipped when no estimate is given."""
    m = TrialMetrics(sq_err_x2=sq_error_sum(x2_soft, x2_truth), entries_x2=int(np.size(x2_truth)),
                     trials=1, not_converged=int(not converged))
    if x2_hard is not None:
        m = m.merge(ber_qpsk(x2_hard, x2_truth))
    if h_est is not None:
        m = m.merge(TrialMetrics(sq_err_h=sq_error_sum(h_est, h_truth), entries_h=int(np.size(h_truth))))
    return m


def aggregate(items: Iterable[TrialMetrics]) -> TrialMetrics:
    total = TrialMetrics()
    for m in items:
        total = total.merge(m)
    return total
