import numpy as np
import pytest

from backend import random_image
from src.metrics import MS_SSIM_WEIGHTS, PSNR_CAP, gaussian_window, linf, metric_report, ms_ssim, psnr, ssim

C1, C2 = 0.01 ** 2, 0.03 ** 2


def naive_ssim_terms(a: np.ndarray, b: np.ndarray) -> tuple:
    window = gaussian_window()
    size = window.shape[0]
    full, contrast = [], []
    for i in range(a.shape[0] - size + 1):
        for j in range(a.shape[1] - size + 1):
            pa, pb = a[i:i + size, j:j + size], b[i:i + size, j:j + size]
            mu_a, mu_b = np.sum(window * pa), np.sum(window * pb)
            var_a = np.sum(window * (pa - mu_a) ** 2)
            var_b = np.sum(window * (pb - mu_b) ** 2)
            covariance = np.sum(window * (pa - mu_a) * (pb - mu_b))
            cs = (2 * covariance + C2) / (var_a + var_b + C2)
            contrast.append(cs)
            full.append((2 * mu_a * mu_b + C1) / (mu_a ** 2 + mu_b ** 2 + C1) * cs)
    return np.mean(full), np.mean(contrast)


def naive_downsample(x: np.ndarray) -> np.ndarray:
    out = np.zeros((x.shape[0] // 2, x.shape[1] // 2))
    for i in range(out.shape[0]):
        for j in range(out.shape[1]):
            out[i, j] = x[2 * i:2 * i + 2, 2 * j:2 * j + 2].mean()
    return out


def naive_ms_ssim(a: np.ndarray, b: np.ndarray, scales: int) -> float:
    weights = np.asarray(MS_SSIM_WEIGHTS[:scales]) / np.sum(MS_SSIM_WEIGHTS[:scales])
    values = []
    for c in range(a.shape[0]):
        x, y, value = a[c], b[c], 1.
        for scale in range(scales):
            full, cs = naive_ssim_terms(x, y)
            value *= max(full if scale == scales - 1 else cs, 0.) ** weights[scale]
            x, y = naive_downsample(x), naive_downsample(y)
        values.append(value)
    return float(np.mean(values))


def psnr_test():
    a = np.zeros((3, 8, 8))
    assert psnr(a, a) == PSNR_CAP
    assert np.isclose(psnr(a, np.full((3, 8, 8), 0.1)), 20.)
    assert psnr(a, np.full((3, 8, 8), 1e-7)) == PSNR_CAP
    rng = np.random.default_rng(0)
    x, y = random_image(rng, 8), random_image(rng, 8)
    assert psnr(x, y) == psnr(y, x)
    with pytest.raises(ValueError):
        psnr(a, np.zeros((3, 8, 4)))


def linf_test():
    a = np.zeros((3, 4, 4))
    b = a.copy()
    b[1, 2, 3] = -0.3
    assert np.isclose(linf(a, b), 0.3)


def gaussian_window_test():
    window = gaussian_window()
    assert window.shape == (11, 11)
    assert np.isclose(window.sum(), 1)
    assert np.allclose(window, window.T)


def ssim_test():
    rng = np.random.default_rng(0)
    a = random_image(rng, 16)
    b = np.clip(a + rng.normal(0, 0.1, a.shape), 0, 1)
    assert np.isclose(ssim(a, a), 1)
    assert np.isclose(ssim(a, b), ssim(b, a))
    assert ssim(a, b) < 1
    with pytest.raises(ValueError):
        ssim(np.zeros((3, 8, 8)), np.zeros((3, 8, 8)))


def ssim_matches_loop_test():
    rng = np.random.default_rng(3)
    a = random_image(rng, 20)
    b = np.clip(a + rng.normal(0, 0.1, a.shape), 0, 1)
    expected = np.mean([naive_ssim_terms(a[c], b[c])[0] for c in range(3)])
    assert abs(ssim(a, b) - expected) < 1e-8


def ssim_of_constant_images_test():
    for low, high in ((0., 1.), (0.2, 0.7)):
        a, b = np.full((3, 16, 16), low), np.full((3, 16, 16), high)
        expected = (2 * low * high + C1) / (low ** 2 + high ** 2 + C1)
        assert abs(ssim(a, b) - expected) < 1e-10


def ms_ssim_matches_loop_test():
    rng = np.random.default_rng(4)
    a = random_image(rng, 48)
    b = np.clip(a + rng.normal(0, 0.08, a.shape), 0, 1)
    assert abs(ms_ssim(a, b, scales=3) - naive_ms_ssim(a, b, 3)) < 1e-8


def ms_ssim_test():
    rng = np.random.default_rng(1)
    a = random_image(rng, 48)
    b = np.clip(a + rng.normal(0, 0.05, a.shape), 0, 1)
    assert np.isclose(ms_ssim(a, a), 1)
    assert 0 <= ms_ssim(a, b) < 1
    assert np.isclose(ms_ssim(a, a, scales=1), ssim(a, a))
    with pytest.raises(ValueError):
        ms_ssim(a[:, :32, :32], a[:, :32, :32], scales=3)
    with pytest.raises(ValueError):
        ms_ssim(a, a, scales=6)


def ms_ssim_is_clamped_test():
    rng = np.random.default_rng(2)
    a = random_image(rng, 16)
    assert 0 <= ms_ssim(a, 1 - a, scales=1) <= 1


def metric_report_test():
    image = np.full((3, 16, 16), 0.5)
    report = metric_report(image, image, bpp=0.25, delta_linf=0.08, scales=1)
    assert report.psnr_db == PSNR_CAP
    assert np.isclose(report.ms_ssim, 1)
    assert report.bpp == 0.25 and report.delta_linf == 0.08
