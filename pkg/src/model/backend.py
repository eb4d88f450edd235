import typing

import numpy as np

from ..graph import ParameterSet, Tensor
from ..utils_core import int_reduce_mul

RELU_GAIN = 2 ** 0.5
NORMAL_STDDEV = 0.02


class OrthogonalInit:
    """
    QR-based orthogonal initializer. The first axis is treated as fan-out, the remaining axes as fan-in, and the
    matrix is transposed when it has more rows than columns so that it is always semi-orthogonal.
    """

    def __init__(self, shape: typing.Sequence[int], gain: float = 1.):
        self.sizes = list(shape)
        fan_out = self.sizes[0]
        fan_in = int_reduce_mul(self.sizes[1:])
        self.transpose = transpose = fan_out > fan_in
        self.shape = (fan_out, fan_in) if transpose else (fan_in, fan_out)
        self.gain = gain

    def __call__(self, rng: np.random.Generator) -> np.ndarray:
        q, r = np.linalg.qr(rng.standard_normal(self.shape))
        q *= np.sign(np.diag(r))
        if not self.transpose:
            q = q.T
        return self.gain * q.reshape(self.sizes)


class NormalInit:
    def __init__(self, shape: typing.Sequence[int], stddev: float = NORMAL_STDDEV, mean: float = 0.):
        self.sizes = list(shape)
        self.stddev = stddev
        self.mean = mean

    def __call__(self, rng: np.random.Generator) -> np.ndarray:
        return self.mean + self.stddev * rng.standard_normal(self.sizes)


class ZerosInit:
    def __init__(self, shape: typing.Sequence[int], **kwargs):
        self.sizes = list(shape)

    def __call__(self, rng: np.random.Generator) -> np.ndarray:
        return np.zeros(self.sizes)


INITIALIZERS = {"orthogonal": OrthogonalInit, "normal": NormalInit, "zeros": ZerosInit}


def get_var(parameters: ParameterSet, name: str, shape: typing.Sequence[int], initializer: str,
            rng: np.random.Generator, **kwargs) -> Tensor:
    if initializer not in INITIALIZERS:
        raise ValueError(f"Unknown initializer {initializer!r}, use one of {list(INITIALIZERS)}")
    return parameters.add(name, INITIALIZERS[initializer](shape, **kwargs)(rng))


def initializer_kwargs(initializer: str, gain: float) -> typing.Dict[str, float]:
    """
    Maps a layer gain onto the keyword the initializer understands: orthogonal scales by gain, normal uses it as a
    multiple of the default stddev, zeros ignores it.
    """
    if initializer == "orthogonal":
        return {"gain": gain}
    if initializer == "normal":
        return {"stddev": NORMAL_STDDEV * gain}
    return {}


def zeros_var(parameters: ParameterSet, name: str, shape: typing.Sequence[int]) -> Tensor:
    return parameters.add(name, np.zeros(list(shape)))
