"""
JPEG-style transformation defense.

The round trip keeps the frequency-quantization part of baseline JPEG: full-range BT.601 YCbCr, 8x8 block DCT,
division by the quality-scaled Annex-K tables, rounding, and the inverse chain. There is no chroma subsampling and
no entropy coding. With rounding="soft" the rounding is replaced by x - sin(2 pi x) / (2 pi sharpness) and the
whole chain is differentiable.
"""
import math
import typing

import numpy as np
from scipy import fft

from . import ops
from .attack import AttackResult, GsmPair, run_attack
from .dataclass import AttackConfig, JpegConfig
from .graph import GradientTrackingError, Operation, Tensor, as_tensor, is_tracking, no_grad
from .model import CodecModel, forward, presentation

BLOCK = 8
LUMA_TABLE = np.array([[16, 11, 10, 16, 24, 40, 51, 61],
                       [12, 12, 14, 19, 26, 58, 60, 55],
                       [14, 13, 16, 24, 40, 57, 69, 56],
                       [14, 17, 22, 29, 51, 87, 80, 62],
                       [18, 22, 37, 56, 68, 109, 103, 77],
                       [24, 35, 55, 64, 81, 104, 113, 92],
                       [49, 64, 78, 87, 103, 121, 120, 101],
                       [72, 92, 95, 98, 112, 100, 103, 99]], dtype=np.float64)
CHROMA_TABLE = np.array([[17, 18, 24, 47, 99, 99, 99, 99],
                         [18, 21, 26, 66, 99, 99, 99, 99],
                         [24, 26, 56, 99, 99, 99, 99, 99],
                         [47, 66, 99, 99, 99, 99, 99, 99],
                         [99, 99, 99, 99, 99, 99, 99, 99],
                         [99, 99, 99, 99, 99, 99, 99, 99],
                         [99, 99, 99, 99, 99, 99, 99, 99],
                         [99, 99, 99, 99, 99, 99, 99, 99]], dtype=np.float64)
RGB_TO_YCBCR = np.array([[0.299, 0.587, 0.114],
                         [-0.168736, -0.331264, 0.5],
                         [0.5, -0.418688, -0.081312]])
YCBCR_TO_RGB = np.linalg.inv(RGB_TO_YCBCR)
# luma is level-shifted by -128; the +128 chroma offset cancels against the same shift
LEVEL_SHIFT = np.array([-128., 0., 0.]).reshape(3, 1, 1)


def quality_scale(quality: int) -> int:
    if not 1 <= quality <= 100:
        raise ValueError(f"quality has to be in [1, 100], got {quality}")
    return 5000 // quality if quality < 50 else 200 - 2 * quality


def quantization_tables(quality: int) -> np.ndarray:
    """
    [3, 8, 8] tables (luma, chroma, chroma) for the given quality, entries clamped to [1, 255].
    """
    scale = quality_scale(quality)
    tables = [np.clip(np.floor((table * scale + 50) / 100), 1, 255) for table in (LUMA_TABLE, CHROMA_TABLE)]
    return np.stack([tables[0], tables[1], tables[1]])


def _color(x: np.ndarray, matrix: np.ndarray) -> np.ndarray:
    return np.tensordot(matrix, x, axes=(1, 0))


def _to_blocks(x: np.ndarray) -> np.ndarray:
    channels, height, width = x.shape
    x = x.reshape(channels, height // BLOCK, BLOCK, width // BLOCK, BLOCK)
    return x.transpose(0, 1, 3, 2, 4)


def _from_blocks(x: np.ndarray) -> np.ndarray:
    channels, rows, cols = x.shape[:3]
    return x.transpose(0, 1, 3, 2, 4).reshape(channels, rows * BLOCK, cols * BLOCK)


def _analysis(x: np.ndarray, tables: np.ndarray) -> np.ndarray:
    """[0, 1] RGB -> quantizer-domain coefficients [3, H/8, W/8, 8, 8]."""
    shifted = _color(255 * x, RGB_TO_YCBCR) + LEVEL_SHIFT
    return fft.dctn(_to_blocks(shifted), axes=(-2, -1), norm='ortho') / tables[:, None, None]


def _analysis_adjoint(grad: np.ndarray, tables: np.ndarray) -> np.ndarray:
    blocks = fft.idctn(grad / tables[:, None, None], axes=(-2, -1), norm='ortho')
    return 255 * _color(_from_blocks(blocks), RGB_TO_YCBCR.T)


def _synthesis(coefficients: np.ndarray, tables: np.ndarray) -> np.ndarray:
    """Quantizer-domain coefficients -> unclamped [0, 1]-scaled RGB."""
    blocks = fft.idctn(coefficients * tables[:, None, None], axes=(-2, -1), norm='ortho')
    return _color(_from_blocks(blocks) - LEVEL_SHIFT, YCBCR_TO_RGB) / 255


def _synthesis_adjoint(grad: np.ndarray, tables: np.ndarray) -> np.ndarray:
    blocks = fft.dctn(_to_blocks(_color(grad / 255, YCBCR_TO_RGB.T)), axes=(-2, -1), norm='ortho')
    return blocks * tables[:, None, None]


def soft_round(x: np.ndarray, sharpness: float = 1.) -> np.ndarray:
    return x - np.sin(2 * math.pi * x) / (2 * math.pi * sharpness)


def soft_round_derivative(x: np.ndarray, sharpness: float = 1.) -> np.ndarray:
    return 1 - np.cos(2 * math.pi * x) / sharpness


def _check_dims(dims: typing.Sequence[int]) -> None:
    if len(dims) != 3 or dims[0] != 3:
        raise ValueError(f"jpeg_roundtrip needs a [3, H, W] image, got dims {list(dims)}")
    if dims[1] % BLOCK or dims[2] % BLOCK:
        raise ValueError(f"jpeg_roundtrip: spatial dims {list(dims[1:])} are not divisible by {BLOCK}")


class JpegRoundtrip(Operation):
    def __init__(self, x: Tensor, cfg: JpegConfig):
        _check_dims(x.dims)
        super().__init__([x], name="jpeg_roundtrip")
        if cfg.rounding == "hard" and self.tracked:
            raise GradientTrackingError("hard JPEG rounding is not differentiable; use rounding='soft' or "
                                        "wrap the call in graph.no_grad()")
        self.tables = quantization_tables(cfg.quality)
        self.sharpness = cfg.soft_sharpness
        self.coefficients = _analysis(x.data, self.tables)
        if cfg.rounding == "hard":
            rounded = ops.round_half_away(self.coefficients)
        else:
            rounded = soft_round(self.coefficients, self.sharpness)
        self.unclamped = _synthesis(rounded, self.tables)
        self._outputs = [self._tensor(np.clip(self.unclamped, 0, 1))]

    def gradient(self, grad_ys, wanted):
        inside = (self.unclamped >= 0) & (self.unclamped <= 1)
        grad = _synthesis_adjoint(grad_ys[0] * inside, self.tables)
        grad = grad * soft_round_derivative(self.coefficients, self.sharpness)
        return [_analysis_adjoint(grad, self.tables)]


def jpeg_roundtrip(x: typing.Union[Tensor, np.ndarray], cfg: JpegConfig) -> Tensor:
    return JpegRoundtrip(as_tensor(x), cfg).output


def jpeg_image(x: np.ndarray, cfg: JpegConfig) -> np.ndarray:
    """
    Non-differentiable evaluation round trip with hard rounding.
    """
    with no_grad():
        return jpeg_roundtrip(x, cfg.replace(rounding="hard")).data


def defended_reconstruction(model: CodecModel, x: np.ndarray, cfg: JpegConfig) -> np.ndarray:
    """
    Deployed pipeline behind the defense: hard JPEG, then the codec with hard quantization.
    """
    with no_grad():
        return presentation(forward(model, jpeg_image(x, cfg), "hard"))


def attack_through_defense(model: CodecModel, pair: GsmPair, cfg_attack: AttackConfig, cfg_jpeg: JpegConfig,
                           pair_index: int = 0) -> AttackResult:
    soft = cfg_jpeg.replace(rounding="soft")
    if not is_tracking():
        raise GradientTrackingError("attack_through_defense needs gradient tracking")
    return run_attack(model, pair, cfg_attack, pair_index, transform=lambda t: jpeg_roundtrip(t, soft))
