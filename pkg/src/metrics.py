"""
Image quality metrics on [C, H, W] float images with peak value 1.
"""
import math
import typing

import numpy as np
from scipy import signal

PSNR_CAP = 100.
MSE_FLOOR = 1e-10
MS_SSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)


class MetricReport(typing.NamedTuple):
    psnr_db: float
    ms_ssim: float
    bpp: float
    delta_linf: float


def _check_pair(a: np.ndarray, b: np.ndarray, name: str) -> typing.Tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"{name}: dims {list(a.shape)} and {list(b.shape)} differ")
    return a, b


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    a, b = _check_pair(a, b, "psnr")
    mse = float(np.mean(np.square(a - b)))
    if mse < MSE_FLOOR:
        return PSNR_CAP
    return min(PSNR_CAP, -10 * math.log10(mse))


def linf(a: np.ndarray, b: np.ndarray) -> float:
    a, b = _check_pair(a, b, "linf")
    return float(np.max(np.abs(a - b))) if a.size else 0.


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    coords = np.arange(size, dtype=np.float64) - (size - 1) / 2
    g = np.exp(-coords ** 2 / (2 * sigma ** 2))
    g /= g.sum()
    return np.outer(g, g)


def _ssim_components(a: np.ndarray, b: np.ndarray, window: np.ndarray, k1: float, k2: float
                     ) -> typing.Tuple[float, float]:
    """
    Mean SSIM and mean contrast-structure term of one channel over all fully covered window positions.
    """
    c1 = k1 ** 2
    c2 = k2 ** 2

    def filt(x):
        return signal.convolve2d(x, window, mode='valid')

    mu_a = filt(a)
    mu_b = filt(b)
    var_a = filt(a * a) - mu_a ** 2
    var_b = filt(b * b) - mu_b ** 2
    covariance = filt(a * b) - mu_a * mu_b
    cs_map = (2 * covariance + c2) / (var_a + var_b + c2)
    luminance = (2 * mu_a * mu_b + c1) / (mu_a ** 2 + mu_b ** 2 + c1)
    return float(np.mean(luminance * cs_map)), float(np.mean(cs_map))


def _check_window(a: np.ndarray, size: int, name: str) -> None:
    if a.ndim != 3 or min(a.shape[1:]) < size:
        raise ValueError(f"{name}: spatial dims {list(a.shape[1:])} smaller than the {size}px window")


def ssim(a: np.ndarray, b: np.ndarray, window: int = 11, k1: float = 0.01, k2: float = 0.03,
         sigma: float = 1.5) -> float:
    a, b = _check_pair(a, b, "ssim")
    _check_window(a, window, "ssim")
    kernel = gaussian_window(window, sigma)
    return float(np.mean([_ssim_components(a[c], b[c], kernel, k1, k2)[0] for c in range(a.shape[0])]))


def _downsample(x: np.ndarray) -> np.ndarray:
    height, width = x.shape[1] // 2 * 2, x.shape[2] // 2 * 2
    x = x[:, :height, :width]
    return 0.25 * (x[:, 0::2, 0::2] + x[:, 1::2, 0::2] + x[:, 0::2, 1::2] + x[:, 1::2, 1::2])


def ms_ssim(a: np.ndarray, b: np.ndarray, scales: int = 3, window: int = 11, k1: float = 0.01, k2: float = 0.03,
            sigma: float = 1.5) -> float:
    """
    Product over scales of contrast-structure terms (full SSIM at the coarsest scale) with the first `scales`
    standard weights renormalized to sum 1. Per-scale terms are clamped at 0 before exponentiation, the product is
    taken per channel and then averaged over channels.
    """
    a, b = _check_pair(a, b, "ms_ssim")
    if not 1 <= scales <= len(MS_SSIM_WEIGHTS):
        raise ValueError(f"ms_ssim supports 1 to {len(MS_SSIM_WEIGHTS)} scales, got {scales}")
    _check_window(a, window * 2 ** (scales - 1), f"ms_ssim with {scales} scales")
    weights = np.asarray(MS_SSIM_WEIGHTS[:scales])
    weights = weights / weights.sum()
    kernel = gaussian_window(window, sigma)

    values = np.ones(a.shape[0])
    for scale in range(scales):
        for c in range(a.shape[0]):
            full, cs = _ssim_components(a[c], b[c], kernel, k1, k2)
            term = full if scale == scales - 1 else cs
            values[c] *= max(term, 0.) ** weights[scale]
        if scale < scales - 1:
            a, b = _downsample(a), _downsample(b)
    return float(np.mean(values))


def metric_report(reconstruction: np.ndarray, target: np.ndarray, bpp: float, delta_linf: float,
                  scales: int = 3) -> MetricReport:
    report = MetricReport(psnr(reconstruction, target), ms_ssim(reconstruction, target, scales), float(bpp),
                          float(delta_linf))
    if not all(math.isfinite(v) for v in report):
        raise ValueError(f"non-finite metric report {report}")
    return report
