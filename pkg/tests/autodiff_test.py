import typing

import numpy as np
import pytest

from backend import OperationTest
from src import ops
from src.graph import GradientTrackingError, NonFiniteError, Tensor, backward, gradient_check, is_tracking, no_grad
from src.model.activation import leaky_relu
from src.model.convolution import conv2d, deconv2d, output_size, transposed_size
from src.model.entropy import bits_estimate
from src.model.quantization import quantize


class Multiply(OperationTest):
    def _point(self) -> np.ndarray:
        self.other = self.rng.standard_normal((3, 8, 8))
        return super()._point()

    def _function(self, x: Tensor) -> Tensor:
        return ops.multiply(x, self.other)


class SelfProduct(OperationTest):
    def _function(self, x: Tensor) -> Tensor:
        return ops.subtract(ops.multiply(x, x), ops.scale(x, 3.))


class SquaredNorm(OperationTest):
    def _function(self, x: Tensor) -> Tensor:
        return ops.add(ops.squared_norm(x), ops.reduce_sum(x))


class ConvInput(OperationTest):
    def _point(self) -> np.ndarray:
        self.kernel = Tensor(self.rng.standard_normal((4, 3, 4, 4)))
        self.bias = Tensor(self.rng.standard_normal(4))
        return super()._point()

    def _function(self, x: Tensor) -> Tensor:
        return conv2d(x, self.kernel, self.bias, 2, 1)


class ConvKernel(OperationTest):
    def _point(self) -> np.ndarray:
        self.x = Tensor(self.rng.standard_normal((3, 8, 8)))
        self.bias = Tensor(self.rng.standard_normal(4))
        return self.rng.standard_normal((4, 3, 4, 4))

    def _function(self, kernel: Tensor) -> Tensor:
        return conv2d(self.x, kernel, self.bias, 2, 1)


class ConvBias(OperationTest):
    def _point(self) -> np.ndarray:
        self.x = Tensor(self.rng.standard_normal((3, 9, 9)))
        self.kernel = Tensor(self.rng.standard_normal((2, 3, 3, 3)))
        return self.rng.standard_normal(2)

    def _function(self, bias: Tensor) -> Tensor:
        return conv2d(self.x, self.kernel, bias, 1, 0)


class DeconvInput(OperationTest):
    def _point(self) -> np.ndarray:
        self.kernel = Tensor(self.rng.standard_normal((3, 2, 4, 4)))
        self.bias = Tensor(self.rng.standard_normal(2))
        return self.rng.standard_normal((3, 4, 4))

    def _function(self, x: Tensor) -> Tensor:
        return deconv2d(x, self.kernel, self.bias, 2, 1)


class DeconvKernel(OperationTest):
    def _point(self) -> np.ndarray:
        self.x = Tensor(self.rng.standard_normal((3, 4, 4)))
        self.bias = Tensor(self.rng.standard_normal(2))
        return self.rng.standard_normal((3, 2, 4, 4))

    def _function(self, kernel: Tensor) -> Tensor:
        return deconv2d(self.x, kernel, self.bias, 2, 1)


class LeakyRelu(OperationTest):
    def _point(self) -> np.ndarray:
        return self.rng.choice([-1., 1.], (3, 8, 8)) * self.rng.uniform(0.05, 1., (3, 8, 8))

    def _function(self, x: Tensor) -> Tensor:
        return leaky_relu(x, 0.01)


class RateTest(OperationTest):
    def _point(self) -> np.ndarray:
        self.y_hat = self.rng.integers(-3, 4, (3, 4, 4)).astype(np.float64)
        self.location = self.rng.normal(0, 0.5, 3)
        self.log_scale = self.rng.uniform(-0.5, 1., 3)
        return self.y_hat

    def _bits(self, y_hat, location, log_scale) -> Tensor:
        return bits_estimate(Tensor(location) if isinstance(location, np.ndarray) else location,
                             Tensor(log_scale) if isinstance(log_scale, np.ndarray) else log_scale,
                             Tensor(y_hat) if isinstance(y_hat, np.ndarray) else y_hat).bits


class RateLatent(RateTest):
    def _function(self, y_hat: Tensor) -> Tensor:
        return self._bits(y_hat, self.location, self.log_scale)


class RateLocation(RateTest):
    def _point(self) -> np.ndarray:
        super()._point()
        return self.location

    def _function(self, location: Tensor) -> Tensor:
        return self._bits(self.y_hat, location, self.log_scale)


class RateLogScale(RateTest):
    def _point(self) -> np.ndarray:
        super()._point()
        return self.log_scale

    def _function(self, log_scale: Tensor) -> Tensor:
        return self._bits(self.y_hat, self.location, log_scale)


@pytest.mark.parametrize("test", [Multiply, SelfProduct, SquaredNorm, ConvInput, ConvKernel, ConvBias, DeconvInput,
                                  DeconvKernel, LeakyRelu, RateLatent, RateLocation, RateLogScale])
@pytest.mark.parametrize("seed", list(range(50)))
def gradient_test(test: typing.Type, seed: int):
    test(seed=seed)()


def conv_reference(x: np.ndarray, kernel: np.ndarray, bias: np.ndarray, stride: int, pad: int) -> np.ndarray:
    x = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    k = kernel.shape[-1]
    out_h = (x.shape[1] - k) // stride + 1
    out_w = (x.shape[2] - k) // stride + 1
    out = np.zeros((kernel.shape[0], out_h, out_w))
    for o in range(kernel.shape[0]):
        for i in range(out_h):
            for j in range(out_w):
                patch = x[:, i * stride:i * stride + k, j * stride:j * stride + k]
                out[o, i, j] = np.sum(patch * kernel[o]) + bias[o]
    return out


def deconv_reference(x: np.ndarray, kernel: np.ndarray, bias: np.ndarray, stride: int, pad: int) -> np.ndarray:
    k = kernel.shape[-1]
    full = np.zeros((kernel.shape[1], (x.shape[1] - 1) * stride + k, (x.shape[2] - 1) * stride + k))
    for c in range(x.shape[0]):
        for i in range(x.shape[1]):
            for j in range(x.shape[2]):
                full[:, i * stride:i * stride + k, j * stride:j * stride + k] += x[c, i, j] * kernel[c]
    return full[:, pad:full.shape[1] - pad, pad:full.shape[2] - pad] + bias[:, None, None]


@pytest.mark.parametrize("seed", [0, 1, 2])
def conv_matches_loop_test(seed: int):
    rng = np.random.default_rng(seed)
    x, kernel, bias = rng.standard_normal((3, 8, 8)), rng.standard_normal((5, 3, 4, 4)), rng.standard_normal(5)
    out = conv2d(Tensor(x), Tensor(kernel), Tensor(bias), 2, 1).data
    assert np.max(np.abs(out - conv_reference(x, kernel, bias, 2, 1))) < 1e-10


@pytest.mark.parametrize("seed", [0, 1, 2])
def deconv_matches_loop_test(seed: int):
    rng = np.random.default_rng(seed)
    x, kernel, bias = rng.standard_normal((3, 4, 4)), rng.standard_normal((3, 5, 4, 4)), rng.standard_normal(5)
    out = deconv2d(Tensor(x), Tensor(kernel), Tensor(bias), 2, 1).data
    assert out.shape == (5, 8, 8)
    assert np.max(np.abs(out - deconv_reference(x, kernel, bias, 2, 1))) < 1e-10


@pytest.mark.parametrize("transposed", [False, True])
def convolution_is_linear_test(transposed: bool):
    rng = np.random.default_rng(int(transposed))
    fn = deconv2d if transposed else conv2d
    x, y = rng.standard_normal((2, 3, 8, 8))
    kernel = Tensor(rng.standard_normal((3, 5, 4, 4) if transposed else (5, 3, 4, 4)))
    bias = Tensor(np.zeros(5))
    a, b = 1.7, -0.3
    combined = fn(Tensor(a * x + b * y), kernel, bias, 2, 1).data
    separate = a * fn(Tensor(x), kernel, bias, 2, 1).data + b * fn(Tensor(y), kernel, bias, 2, 1).data
    assert np.max(np.abs(combined - separate)) < 1e-10


def rate_ignores_spatial_order_test():
    rng = np.random.default_rng(0)
    y_hat = rng.integers(-4, 5, (3, 6, 6)).astype(np.float64)
    location, log_scale = Tensor(rng.normal(0, 0.5, 3)), Tensor(rng.uniform(-0.5, 1., 3))
    order = rng.permutation(36)
    shuffled = y_hat.reshape(3, 36)[:, order].reshape(3, 6, 6)
    bits = bits_estimate(location, log_scale, Tensor(y_hat)).bits.item()
    assert np.isclose(bits_estimate(location, log_scale, Tensor(shuffled)).bits.item(), bits, rtol=1e-12)


def noise_quantizer_is_unbiased_test():
    y = Tensor(np.zeros((1, 100, 1000)))
    noisy = quantize(y, "noise", np.random.default_rng(0)).data
    assert abs(noisy.mean()) < 0.01
    assert noisy.min() >= -0.5 and noisy.max() <= 0.5


def hard_quantization_is_idempotent_test():
    y = Tensor(np.random.default_rng(0).normal(0, 3, (2, 5, 5)))
    with no_grad():
        once = quantize(y, "hard").data
        twice = quantize(Tensor(once), "hard").data
    assert np.array_equal(once, twice)


def sizes_test():
    assert output_size(64, 4, 2, 1) == 32
    assert transposed_size(16, 4, 2, 1) == 32
    with pytest.raises(ValueError):
        output_size(8, 5, 2, 1)


def dims_mismatch_test():
    with pytest.raises(ValueError):
        ops.add(Tensor(np.zeros(3)), Tensor(np.zeros(4)))
    with pytest.raises(ValueError):
        conv2d(Tensor(np.zeros((2, 8, 8))), Tensor(np.zeros((4, 3, 4, 4))), Tensor(np.zeros(4)), 2, 1)


def gradient_accumulates_test():
    x = Tensor(np.array([1., 2., 3.]), requires_grad=True)
    backward(ops.squared_norm(x), [x])
    backward(ops.squared_norm(x), [x])
    assert np.array_equal(x.grad, 4 * x.data)
    x.zero_grad()
    assert np.array_equal(x.grad, np.zeros(3))


def unused_source_gets_zero_gradient_test():
    x = Tensor(np.ones(3), requires_grad=True)
    unused = Tensor(np.ones(2), requires_grad=True)
    backward(ops.reduce_sum(x), [x, unused])
    assert np.array_equal(unused.grad, np.zeros(2))


def no_grad_test():
    x = Tensor(np.ones(3), requires_grad=True)
    with no_grad():
        assert not is_tracking()
        y = ops.scale(x, 2.)
    assert is_tracking()
    assert y.operation is None and not y.requires_grad


def non_finite_test():
    with pytest.raises(NonFiniteError):
        Tensor(np.array([1., np.nan]))
    with pytest.raises(NonFiniteError):
        ops.scale(Tensor(np.array([1e308])), 1e10)


def hard_quantization_refuses_tracking_test():
    y = Tensor(np.array([[[0.4, -1.5]]]), requires_grad=True)
    with pytest.raises(GradientTrackingError):
        quantize(y, "hard")
    with no_grad():
        assert np.array_equal(quantize(y, "hard").data, np.array([[[0., -2.]]]))


def rounding_is_half_away_from_zero_test():
    assert np.array_equal(ops.round_half_away(np.array([-2.5, -0.5, 0.5, 1.5, 2.4])),
                          np.array([-3., -1., 1., 2., 2.]))


def straight_through_gradient_is_identity_test():
    y = Tensor(np.random.default_rng(0).standard_normal((2, 3, 3)), requires_grad=True)
    weights = np.random.default_rng(1).standard_normal((2, 3, 3))
    out = quantize(y, "ste")
    assert np.array_equal(out.data, ops.round_half_away(y.data))
    backward(ops.reduce_sum(ops.multiply(out, Tensor(weights))), [y])
    assert np.array_equal(y.grad, weights)


def noise_quantization_test():
    y = Tensor(np.zeros((4, 8, 8)))
    out = quantize(y, "noise", np.random.default_rng(0))
    assert np.all(np.abs(out.data) <= 0.5)
    assert np.array_equal(out.data, quantize(y, "noise", np.random.default_rng(0)).data)
    with pytest.raises(ValueError):
        quantize(y, "noise")


def gradient_check_detects_wrong_gradient_test():
    class Wrong(ops.Scale):
        def gradient(self, grad_ys, wanted):
            return [grad_ys[0] * 2 * self.factor]

    error = gradient_check(lambda x: ops.reduce_sum(Wrong(x, 3.).output), np.ones(4))
    assert error > 0.1
