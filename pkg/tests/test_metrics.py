import numpy as np
import pytest

from qjcd.metrics import TrialMetrics, aggregate, ber_qpsk, mse_normalized, trial_metrics


def qpsk_block(shape, seed=0):
    rng = np.random.default_rng(seed)
    return ((2 * rng.integers(0, 2, shape) - 1) + 1j * (2 * rng.integers(0, 2, shape) - 1)) / np.sqrt(2)


def test_ber_examples():
    x = qpsk_block((50, 450))
    assert ber_qpsk(x, x).ber == 0
    assert ber_qpsk(-x, x).ber == 1
    y = x.copy()
    y[3, 7] = complex(-y[3, 7].real, y[3, 7].imag)
    m = ber_qpsk(y, x)
    assert m.bits_in_error == 1 and m.ber == 1 / (2 * 50 * 450)


def test_mse_examples():
    x = qpsk_block((10, 20))
    assert mse_normalized(x, x) == 0
    assert mse_normalized(np.zeros_like(x), x) == pytest.approx(1.0)
    assert mse_normalized(np.array(1.0), np.array(1 + 1j)) == 1.0


def test_dimension_mismatch():
    with pytest.raises(ValueError):
        ber_qpsk(np.zeros((2, 3)), np.zeros((3, 2)))
    with pytest.raises(ValueError):
        mse_normalized(np.zeros(3), np.zeros(4))


def test_aggregation_is_exact_and_order_free():
    x = qpsk_block((4, 5))
    parts = []
    for s in range(6):
        est = x * np.where(np.random.default_rng(s).random(x.shape) < 0.2, -1, 1)
        parts.append(trial_metrics(x, est, est, np.ones((2, 2)), np.zeros((2, 2)), converged=s % 2 == 0))
    tot = aggregate(parts)
    assert tot.bits_in_error == sum(p.bits_in_error for p in parts)
    assert tot.ber == tot.bits_in_error / (2 * 6 * 20)
    assert tot.trials == 6 and tot.not_converged == 3
    assert tot.mse_h == 1.0
    rev = aggregate(parts[::-1])
    assert (rev.bits_in_error, rev.symbols_counted, rev.entries_x2) == (tot.bits_in_error, tot.symbols_counted,
                                                                        tot.entries_x2)


def test_empty_metrics():
    assert np.isnan(TrialMetrics().ber) and np.isnan(TrialMetrics().mse_h)
