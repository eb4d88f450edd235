"""
Factorized logistic prior over the quantized latent: one (location, log-scale) pair per latent channel.
"""
import math
import typing

import numpy as np
from scipy.special import expit

from .. import ops
from ..graph import Operation, Tensor

PROBABILITY_FLOOR = 1e-9


class RateEstimate(typing.NamedTuple):
    bits: Tensor
    bpp: Tensor


def bin_probability(y_hat: np.ndarray, location: np.ndarray, log_scale: np.ndarray
                    ) -> typing.Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Probability mass of the unit bin around every latent value plus the standardized bin edges.
    Tail differences are taken on the side where both CDF values are small to avoid cancellation.
    """
    scale = np.exp(log_scale)[:, None, None]
    centered = y_hat - location[:, None, None]
    upper = (centered + 0.5) / scale
    lower = (centered - 0.5) / scale
    sign = np.where(upper + lower > 0, -1., 1.)
    probability = np.abs(expit(sign * upper) - expit(sign * lower))
    return probability, upper, lower


class LogisticRate(Operation):
    def __init__(self, y_hat: Tensor, location: Tensor, log_scale: Tensor):
        if len(y_hat.dims) != 3 or location.dims != [y_hat.dims[0]] or log_scale.dims != [y_hat.dims[0]]:
            raise ValueError(f"entropy parameters {location.dims}/{log_scale.dims} do not match latent dims "
                             f"{y_hat.dims}")
        super().__init__([y_hat, location, log_scale], name="logistic_rate")
        self.probability, self.upper, self.lower = bin_probability(y_hat.data, location.data, log_scale.data)
        bits = -np.log2(np.maximum(self.probability, PROBABILITY_FLOOR))
        self._outputs = [self._tensor(np.sum(bits))]

    def gradient(self, grad_ys, wanted):
        scale = np.exp(self.inputs[2].data)[:, None, None]
        engaged = self.probability > PROBABILITY_FLOOR
        dbits = np.where(engaged, -1 / (np.where(engaged, self.probability, 1.) * math.log(2)), 0.) * grad_ys[0]
        density_upper = expit(self.upper) * expit(-self.upper)
        density_lower = expit(self.lower) * expit(-self.lower)
        dp_dy = (density_upper - density_lower) / scale
        dy_hat = dbits * dp_dy
        dlocation = -dy_hat.sum((1, 2)) if wanted[1] else None
        dlog_scale = None
        if wanted[2]:
            dlog_scale = (dbits * -(density_upper * self.upper - density_lower * self.lower)).sum((1, 2))
        return [dy_hat if wanted[0] else None, dlocation, dlog_scale]


def bits_estimate(location: Tensor, log_scale: Tensor, y_hat: Tensor, height: typing.Optional[int] = None,
                  width: typing.Optional[int] = None) -> RateEstimate:
    """
    :param height: image height the latent codes, defaults to 4x the latent height
    :param width: image width, defaults to 4x the latent width
    """
    height = 4 * y_hat.dims[1] if height is None else height
    width = 4 * y_hat.dims[2] if width is None else width
    bits = LogisticRate(y_hat, location, log_scale).output
    return RateEstimate(bits, ops.scale(bits, 1 / (height * width)))
