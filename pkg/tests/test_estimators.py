import numpy as np
import pytest
from scipy import integrate

from qjcd.estimators import (GampOptions, Observation, denoise_output_quantized, detect_known_channel,
                             jcd_estimate, ls_channel_estimate, observation, pilot_only_pipeline)
from qjcd.metrics import bit_errors_qpsk
from qjcd.model import SystemConfig, forward, generate_block
from qjcd.numerics import SeedSpec, make_rng
from qjcd.quantizer import make_quantizer, unquantized

Q3 = make_quantizer(3, 0.5)


def small(**kw):
    base = dict(K=16, N=64, T1=16, T2=144, noise_var=10 ** -0.5, quantizer=Q3)
    base.update(kw)
    return SystemConfig(**base)


def dft_pilots(K):
    k = np.arange(K)
    return np.exp(-2j * np.pi * np.outer(k, k) / K)


def with_pilots(cfg, block, X1):
    """Rebuild a block's observation with replacement pilots (unquantized)."""
    Y = forward(block.H, np.hstack([X1, block.X2])) + block.W
    return Observation(None, None, Y)


# ---------------------------------------------------------------- output denoiser

def test_output_denoiser_unquantized_is_linear():
    phat, pvar, nv = np.array([0.3 - 0.1j]), np.array([0.8]), 0.2
    y = np.array([1.0 + 1.0j])
    z, v = denoise_output_quantized(None, None, phat, pvar, nv, unquantized(), y)
    assert z[0] == pytest.approx(phat[0] + 0.8 / 1.0 * (y[0] - phat[0]))
    assert v[0] == pytest.approx(0.8 * 0.2 / 1.0)


def test_output_denoiser_matches_numeric_posterior():
    # z ~ CN(phat, pvar); Re/Im of z + w observed through bins
    phat, pvar, nv = 0.4 - 0.9j, 0.6, 0.3
    rb, ib = 6, 2  # (0.5, 1.0] and (-1.5, -1.0]
    z, v = denoise_output_quantized(np.array([rb]), np.array([ib]), np.array([phat]), np.array([pvar]), nv, Q3)
    from scipy.stats import norm
    sw = np.sqrt(nv / 2)
    sz = np.sqrt(pvar / 2)
    want_m, want_v = [], 0.0
    for mu, b in ((phat.real, rb), (phat.imag, ib)):
        lo, hi = Q3.bin_bounds(b)
        like = lambda t: norm.cdf((hi - t) / sw) - norm.cdf((lo - t) / sw)
        w = lambda t: norm.pdf(t, mu, sz) * like(t)
        lim = (mu - 12 * sz, mu + 12 * sz)
        Z = integrate.quad(w, *lim, epsabs=1e-14)[0]
        m = integrate.quad(lambda t: t * w(t), *lim, epsabs=1e-14)[0] / Z
        s = integrate.quad(lambda t: (t - m) ** 2 * w(t), *lim, epsabs=1e-14)[0] / Z
        want_m.append(m)
        want_v += s
    assert z[0] == pytest.approx(complex(*want_m), rel=1e-8)
    assert v[0] == pytest.approx(want_v, rel=1e-7)


def test_output_denoiser_contraction():
    rng = make_rng(SeedSpec(5, 0))
    n = 2000
    phat = 3 * (rng.standard_normal(n) + 1j * rng.standard_normal(n))
    pvar = 10 ** rng.uniform(-6, 2, n)
    rb = rng.integers(1, 9, n)
    ib = rng.integers(1, 9, n)
    z, v = denoise_output_quantized(rb, ib, phat, pvar, 0.05, Q3)
    assert np.all(np.isfinite(z)) and np.all(v <= pvar) and np.all(v >= 0)


def test_output_denoiser_rejects_nonpositive_pvar():
    with pytest.raises(ValueError):
        denoise_output_quantized(np.array([1]), np.array([1]), np.zeros(1), np.zeros(1), 0.1, Q3)


# ---------------------------------------------------------------- options

@pytest.mark.parametrize("kw", [dict(max_iter=-1), dict(damping=1.0), dict(damping=-0.1), dict(tol=0.0),
                                dict(variance_floor=0.0), dict(pilot_warmup=-1)])
def test_options_validation(kw):
    with pytest.raises(ValueError):
        GampOptions(**kw)


# ---------------------------------------------------------------- LS and known channel

def test_ls_exact_without_noise():
    c = small(noise_var=0.0, quantizer=unquantized())
    b = generate_block(c, SeedSpec(1, 0))
    np.testing.assert_allclose(ls_channel_estimate(b.Y[:, :c.T1], b.X1), b.H, atol=1e-9)


def test_ls_scale_invariance():
    c = small(noise_var=0.0, quantizer=unquantized())
    b = generate_block(c, SeedSpec(1, 1))
    for s in (0.5, -3.0, 2j):
        X1 = s * b.X1
        np.testing.assert_allclose(ls_channel_estimate(forward(b.H, X1), X1), b.H, atol=1e-9)


def test_ls_rank_deficient():
    X1 = np.ones((4, 6), dtype=complex)
    with pytest.raises(np.linalg.LinAlgError):
        ls_channel_estimate(np.ones((8, 6)), X1)
    with pytest.raises(np.linalg.LinAlgError):
        ls_channel_estimate(np.ones((8, 3)), np.ones((4, 3)))


def test_known_channel_gamp_matches_lmmse():
    c = small(quantizer=unquantized(), data_constellation="gaussian", noise_var=0.1)
    b = generate_block(c, SeedSpec(2, 0))
    obs2 = observation(b).columns(slice(c.T1, None))
    res = detect_known_channel(obs2, b.H, c, GampOptions(max_iter=300, tol=1e-14))
    A = b.H / np.sqrt(c.K)
    G = A.conj().T @ A + c.noise_var * np.eye(c.K)
    lmmse = np.linalg.solve(G, A.conj().T @ obs2.y)
    assert np.sqrt(np.mean(np.abs(res.x2hat_soft - lmmse) ** 2)) < 1e-5


def test_known_channel_no_information():
    c = small(noise_var=1e8)
    b = generate_block(c, SeedSpec(3, 0))
    errs = n = 0
    for t in range(4):
        b = generate_block(c, SeedSpec(3, t))
        res = detect_known_channel(observation(b).columns(slice(c.T1, None)), b.H, c)
        errs += bit_errors_qpsk(res.x2hat_hard, b.X2)
        n += 2 * b.X2.size
    assert abs(errs / n - 0.5) < 0.01


def test_pilot_only_exact_channel_matches_known():
    c = small(noise_var=0.0, quantizer=unquantized())
    b = generate_block(c, SeedSpec(4, 0))
    X1 = dft_pilots(c.K)
    obs = with_pilots(c, b, X1)
    po = pilot_only_pipeline(obs, X1, c)
    kn = detect_known_channel(obs.columns(slice(c.T1, None)), b.H, c)
    np.testing.assert_allclose(po.hhat, b.H, atol=1e-9)
    np.testing.assert_allclose(po.x2hat_soft, kn.x2hat_soft, atol=1e-8)
    np.testing.assert_array_equal(po.x2hat_hard, kn.x2hat_hard)


def test_mismatched_channel_runs_to_completion():
    c = small()
    b = generate_block(c, SeedSpec(4, 1))
    junk = np.outer(np.ones(c.N), np.ones(c.K)) * 1e-3
    res = detect_known_channel(observation(b).columns(slice(c.T1, None)), junk, c)
    assert res.x2hat_soft.shape == (c.K, c.T2) and np.all(np.isfinite(res.x2hat_soft))


def test_shape_checks():
    c = small()
    b = generate_block(c, SeedSpec(0, 0))
    obs = observation(b)
    with pytest.raises(ValueError):
        jcd_estimate(obs.columns(slice(0, 10)), b.X1, c)
    with pytest.raises(ValueError):
        jcd_estimate(obs, b.X1[:, :3], c)
    with pytest.raises(ValueError):
        detect_known_channel(obs, b.H, c)
    with pytest.raises(ValueError):
        detect_known_channel(obs.columns(slice(c.T1, None)), b.H[:, :2], c)


# ---------------------------------------------------------------- JCD

def test_zero_iterations_returns_prior_means():
    c = small()
    b = generate_block(c, SeedSpec(0, 0))
    res = jcd_estimate(observation(b), b.X1, c, GampOptions(max_iter=0))
    assert np.all(res.x2hat_soft == 0) and np.all(res.hhat == 0)
    np.testing.assert_array_equal(res.state.xhat[:, :c.T1], b.X1)
    assert res.iterations_used == 0 and not res.converged


def test_high_snr_exact_recovery():
    c = SystemConfig(K=8, N=64, T1=8, T2=56, noise_var=1e-6, quantizer=unquantized())
    X1 = dft_pilots(8)
    for t in range(100):
        b = generate_block(c, SeedSpec(77, t))
        res = jcd_estimate(with_pilots(c, b, X1), X1, c)
        assert np.array_equal(res.x2hat_hard, b.X2), f"trial {t}"


def test_invariants_every_iteration():
    for t, q in enumerate([Q3, make_quantizer(1, 0.5), unquantized()]):
        c = small(quantizer=q, noise_var=0.1)
        b = generate_block(c, SeedSpec(8, t))
        res = jcd_estimate(observation(b), b.X1, c)
        for h in res.per_iteration:
            assert h["min_var"] >= 1e-12
            assert h["pilots_pinned"]
        np.testing.assert_array_equal(res.state.xhat[:, :c.T1], b.X1)
        assert np.all(res.x2var <= c.data_power)


def test_determinism():
    c = small()
    b = generate_block(c, SeedSpec(12, 0))
    r1 = jcd_estimate(observation(b), b.X1, c)
    r2 = jcd_estimate(observation(b), b.X1, c)
    assert np.array_equal(r1.x2hat_soft, r2.x2hat_soft) and np.array_equal(r1.hhat, r2.hhat)
    assert r1.per_iteration == r2.per_iteration


# Gaussian data: the iteration converges to an over-shrunk state (cross exceeds
# power by about 2%, even with T1 = 4K), so the identity is known not to hold.
@pytest.mark.parametrize("constellation, snr_db", [
    ("qpsk", 4.0),
    pytest.param("gaussian", 10.0, marks=pytest.mark.xfail(
        strict=True, reason="BiG-AMP stalls short of the Bayes-optimal state for Gaussian data")),
])
def test_nishimori_consistency(constellation, snr_db):
    c = small(data_constellation=constellation).with_snr_db(snr_db)
    cross, power = [], []
    for t in range(10):
        b = generate_block(c, SeedSpec(21, t))
        res = jcd_estimate(observation(b), b.X1, c)
        cross.append(np.mean((b.X2 * res.x2hat_soft.conj()).real))
        power.append(np.mean(np.abs(res.x2hat_soft) ** 2))
    cross, power = np.array(cross), np.array(power)
    diff = cross - power
    assert abs(diff.mean()) < 4 * diff.std(ddof=1) / np.sqrt(len(diff)) + 0.01 * power.mean()


def test_jcd_channel_beats_ls():
    c = SystemConfig(K=50, N=200, T1=50, T2=450, noise_var=0.1, quantizer=Q3)
    for t in range(2):
        b = generate_block(c, SeedSpec(31, t))
        obs = observation(b)
        jcd = jcd_estimate(obs, b.X1, c)
        ls = ls_channel_estimate(obs.y[:, :c.T1], b.X1)
        assert np.mean(np.abs(ls - b.H) ** 2) > np.mean(np.abs(jcd.hhat - b.H) ** 2)


def test_pilot_only_rank_deficient_is_flagged():
    c = small()
    b = generate_block(c, SeedSpec(40, 0))
    X1 = np.tile(b.X1[:, :1], (1, c.T1))
    res = pilot_only_pipeline(observation(b), X1, c)
    assert not res.converged and np.all(np.isfinite(res.hhat))


def test_mismatched_channel_settles():
    # an LS channel from square random pilots makes plain damping oscillate
    c = small().with_snr_db(15.0)
    finals = []
    for t in range(4):
        b = generate_block(c, SeedSpec(5, t))
        obs = observation(b)
        res = detect_known_channel(obs.columns(slice(c.T1, None)), ls_channel_estimate(obs.y[:, :c.T1], b.X1), c)
        finals.append(res.per_iteration[-1]["residual"])
    assert max(finals) < 1e-2
