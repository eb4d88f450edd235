"""
Elementwise and reduction primitives. No broadcasting: binary operations require equal dims.
"""
import typing

import numpy as np

from .graph import Operation, Tensor, as_tensor


def round_half_away(data: np.ndarray) -> np.ndarray:
    return np.sign(data) * np.floor(np.abs(data) + 0.5)


def _check_same_dims(a: Tensor, b: Tensor, name: str) -> None:
    if a.dims != b.dims:
        raise ValueError(f"{name}: dims {a.dims} and {b.dims} differ")


class Add(Operation):
    def __init__(self, a: Tensor, b: Tensor):
        _check_same_dims(a, b, "add")
        super().__init__([a, b], name="add")
        self._outputs = [self._tensor(a.data + b.data)]

    def gradient(self, grad_ys, wanted):
        return [grad_ys[0], grad_ys[0]]


class Subtract(Operation):
    def __init__(self, a: Tensor, b: Tensor):
        _check_same_dims(a, b, "subtract")
        super().__init__([a, b], name="subtract")
        self._outputs = [self._tensor(a.data - b.data)]

    def gradient(self, grad_ys, wanted):
        return [grad_ys[0], -grad_ys[0]]


class Multiply(Operation):
    def __init__(self, a: Tensor, b: Tensor):
        _check_same_dims(a, b, "multiply")
        super().__init__([a, b], name="multiply")
        self._outputs = [self._tensor(a.data * b.data)]

    def gradient(self, grad_ys, wanted):
        a, b = self.inputs
        return [grad_ys[0] * b.data if wanted[0] else None,
                grad_ys[0] * a.data if wanted[1] else None]


class Scale(Operation):
    def __init__(self, x: Tensor, factor: float):
        super().__init__([x], name="scale")
        self.factor = float(factor)
        self._outputs = [self._tensor(x.data * self.factor)]

    def gradient(self, grad_ys, wanted):
        return [grad_ys[0] * self.factor]


class Sum(Operation):
    def __init__(self, x: Tensor):
        super().__init__([x], name="sum")
        self._outputs = [self._tensor(np.sum(x.data))]

    def gradient(self, grad_ys, wanted):
        return [np.full_like(self.inputs[0].data, grad_ys[0])]


class SquaredNorm(Operation):
    def __init__(self, x: Tensor):
        super().__init__([x], name="squared_norm")
        self._outputs = [self._tensor(np.sum(np.square(x.data)))]

    def gradient(self, grad_ys, wanted):
        return [2 * grad_ys[0] * self.inputs[0].data]


def add(a: typing.Union[Tensor, np.ndarray], b: typing.Union[Tensor, np.ndarray]) -> Tensor:
    return Add(as_tensor(a), as_tensor(b)).output


def subtract(a: typing.Union[Tensor, np.ndarray], b: typing.Union[Tensor, np.ndarray]) -> Tensor:
    return Subtract(as_tensor(a), as_tensor(b)).output


def multiply(a: typing.Union[Tensor, np.ndarray], b: typing.Union[Tensor, np.ndarray]) -> Tensor:
    return Multiply(as_tensor(a), as_tensor(b)).output


def scale(x: Tensor, factor: float) -> Tensor:
    return Scale(x, factor).output


def reduce_sum(x: Tensor) -> Tensor:
    return Sum(x).output


def squared_norm(x: Tensor) -> Tensor:
    return SquaredNorm(x).output


def mean_squared_error(a: Tensor, b: typing.Union[Tensor, np.ndarray]) -> Tensor:
    return scale(squared_norm(subtract(a, b)), 1 / a.size)
