import numpy as np
import pytest

from flattrack.errors import ConfigError
from flattrack.optics import NoiseModel, Psf, full_convolve, simulate_measurement
from flattrack.reconstruct import (WienerConfig, _wiener_padded,
                                   gradient_descent_tikhonov, psnr,
                                   reconstruct, register_reconstructor,
                                   tikhonov_objective, wiener_deconvolve)


def spiked_band_psf(alpha: float = 2.0) -> Psf:
    """5x5 contour band plus a center spike: well-conditioned test mask."""
    band = np.array([
        [0, 1, 1, 1, 0],
        [1, 0, 0, 0, 1],
        [1, 0, 0, 0, 1],
        [1, 0, 0, 0, 1],
        [0, 1, 1, 1, 0]], dtype=float)
    band[2, 2] = alpha * band.sum()
    return Psf(band / band.sum(), normalized=True)


def cfg_for(x, p, gamma=1e-5, clip01=False):
    return WienerConfig(gamma=gamma, output_h=x.shape[0], output_w=x.shape[1],
                        clip01=clip01)


def test_delta_psf_identity():
    rng = np.random.default_rng(0)
    x = rng.random((10, 12))
    p = Psf(np.array([[1.0]]), normalized=True)
    y = full_convolve(x, p)
    xh = wiener_deconvolve(y, p, cfg_for(x, p, gamma=1e-12))
    assert np.max(np.abs(xh - x)) < 1e-6


def test_shifted_delta_self_registers():
    # A delta anywhere in the psf support shifts Y; deconvolution undoes it.
    rng = np.random.default_rng(1)
    x = rng.random((9, 9))
    pd = np.zeros((3, 3))
    pd[1, 2] = 1.0
    p = Psf(pd, normalized=True)
    y = full_convolve(x, p)
    xh = wiener_deconvolve(y, p, cfg_for(x, p, gamma=1e-12))
    assert np.max(np.abs(xh - x)) < 1e-6


def test_near_exact_inversion_small_gamma():
    rng = np.random.default_rng(2)
    x = rng.random((8, 8))
    p = spiked_band_psf()
    y = full_convolve(x, p)
    xh = wiener_deconvolve(y, p, cfg_for(x, p, gamma=1e-5))
    assert np.max(np.abs(xh - x)) < 1e-3


def test_shrinkage_monotone_in_gamma():
    rng = np.random.default_rng(3)
    x = rng.random((12, 12))
    p = spiked_band_psf()
    y = full_convolve(x, p)
    norms = []
    for gamma in 10.0 ** np.arange(-6, 3):
        xh = wiener_deconvolve(y, p, cfg_for(x, p, gamma=gamma))
        norms.append(np.linalg.norm(xh))
    assert all(a > b for a, b in zip(norms, norms[1:]))


def test_wiener_linear_in_measurement():
    rng = np.random.default_rng(4)
    x1 = rng.random((8, 8))
    x2 = rng.random((8, 8))
    p = spiked_band_psf()
    y1 = full_convolve(x1, p)
    y2 = full_convolve(x2, p)
    a, b = 1.7, -0.6
    cfg = cfg_for(x1, p)
    lhs = wiener_deconvolve(a * y1 + b * y2, p, cfg)
    rhs = a * wiener_deconvolve(y1, p, cfg) + b * wiener_deconvolve(y2, p, cfg)
    scale = np.max(np.abs(rhs))
    assert np.max(np.abs(lhs - rhs)) / scale < 1e-9


def test_wiener_deterministic():
    rng = np.random.default_rng(5)
    x = rng.random((8, 8))
    p = spiked_band_psf()
    y = full_convolve(x, p)
    cfg = cfg_for(x, p)
    assert np.array_equal(wiener_deconvolve(y, p, cfg), wiener_deconvolve(y, p, cfg))


def test_wiener_config_validation():
    with pytest.raises(ConfigError):
        WienerConfig(gamma=0.0)
    p = spiked_band_psf()
    y = np.ones((8, 8))
    with pytest.raises(ConfigError):
        wiener_deconvolve(y, p, WienerConfig(gamma=1e-5, output_h=8, output_w=8))
    with pytest.raises(ConfigError):
        wiener_deconvolve(np.ones((3, 3)), p, WienerConfig(gamma=1e-5, output_h=1, output_w=1))


def test_clip01_only_affects_range():
    rng = np.random.default_rng(6)
    x = rng.random((8, 8))
    p = spiked_band_psf()
    y = simulate_measurement(x, p, NoiseModel("gaussian", 5e-2), 3)
    raw = wiener_deconvolve(y, p, cfg_for(x, p, gamma=1e-6))
    clipped = wiener_deconvolve(y, p, cfg_for(x, p, gamma=1e-6, clip01=True))
    assert np.array_equal(clipped, np.clip(raw, 0.0, 1.0))


# ---------------------------------------------------------------------------
# Tikhonov objective as optimization oracle
# ---------------------------------------------------------------------------

def test_objective_at_zero_equals_measurement_energy():
    rng = np.random.default_rng(7)
    x = rng.random((6, 6))
    p = spiked_band_psf()
    y = full_convolve(x, p)
    j = tikhonov_objective(np.zeros_like(x), y, p, gamma=0.5)
    assert j == pytest.approx(np.sum(y**2), rel=1e-12)


def test_objective_at_truth_is_pure_regularizer():
    rng = np.random.default_rng(8)
    x = rng.random((6, 6))
    p = spiked_band_psf()
    y = full_convolve(x, p)
    gamma = 2.5e-3
    j = tikhonov_objective(x, y, p, gamma)
    assert j == pytest.approx(gamma * np.sum(x**2), rel=1e-9)


def test_wiener_output_is_local_minimum():
    rng = np.random.default_rng(9)
    x = rng.random((8, 8))
    p = spiked_band_psf()
    y = full_convolve(x, p)
    gamma = 1e-5
    xh = wiener_deconvolve(y, p, cfg_for(x, p, gamma=gamma))
    j0 = tikhonov_objective(xh, y, p, gamma)
    for k in range(50):
        u = np.random.default_rng(1000 + k).standard_normal(xh.shape)
        u /= np.linalg.norm(u)
        assert tikhonov_objective(xh + 1e-2 * u, y, p, gamma) > j0


def test_closed_form_matches_gradient_descent():
    # Closed form vs long-run steepest descent on the padded circular model.
    rng = np.random.default_rng(10)
    for trial in range(5):
        h, w = rng.integers(6, 17, size=2)
        x = rng.random((h, w))
        p = rng.uniform(0.1, 1.0, (4, 4))
        p /= p.sum()
        psf = Psf(p, normalized=True)
        y = full_convolve(x, psf)
        gamma = 1e-3
        xg = gradient_descent_tikhonov(y, psf, gamma, max_iter=30000, tol=1e-22)
        xw = _wiener_padded(y, p, gamma)
        jg = tikhonov_objective(xg, y, psf, gamma)
        jw = tikhonov_objective(xw, y, psf, gamma)
        assert abs(jg - jw) / jw < 1e-6
        assert np.max(np.abs(xg - xw)) < 1e-3


def test_noise_monotonicity():
    rng = np.random.default_rng(11)
    x = rng.random((32, 32))
    p = spiked_band_psf()
    cfg = cfg_for(x, p)
    psnrs = []
    for sigma in (0.0, 1e-3, 1e-2):
        y = simulate_measurement(x, p, NoiseModel("gaussian", sigma), 77)
        psnrs.append(psnr(wiener_deconvolve(y, p, cfg), x))
    assert psnrs[0] >= psnrs[1] >= psnrs[2]


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------

def test_reconstruct_dispatches_to_wiener():
    rng = np.random.default_rng(12)
    x = rng.random((8, 8))
    p = spiked_band_psf()
    y = full_convolve(x, p)
    cfg = cfg_for(x, p)
    assert np.array_equal(reconstruct(y, p, cfg), wiener_deconvolve(y, p, cfg))


def test_identity_reconstructor_passthrough():
    rng = np.random.default_rng(13)
    y = rng.random((8, 8))
    p = spiked_band_psf()
    out = reconstruct(y, p, WienerConfig(gamma=1e-5, output_h=4, output_w=4),
                      method="identity")
    assert np.array_equal(out, y)


def test_reconstruct_unknown_method_and_registry():
    p = spiked_band_psf()
    with pytest.raises(ConfigError):
        reconstruct(np.ones((8, 8)), p, WienerConfig(gamma=1e-5, output_h=4, output_w=4),
                    method="nope")
    register_reconstructor("half", lambda y, p, cfg: 0.5 * np.asarray(y))
    out = reconstruct(np.ones((4, 4)), p,
                      WienerConfig(gamma=1e-5, output_h=4, output_w=4), method="half")
    assert np.array_equal(out, 0.5 * np.ones((4, 4)))


def test_psnr_helper():
    a = np.zeros((4, 4))
    assert psnr(a, a) == float("inf")
    b = a.copy()
    b[0, 0] = 0.4
    # mse = 0.01 -> 20 dB at unit peak
    assert psnr(b, a) == pytest.approx(20.0, abs=1e-9)
    with pytest.raises(ConfigError):
        psnr(np.zeros((2, 2)), np.zeros((3, 3)))
