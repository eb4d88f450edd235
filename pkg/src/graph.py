"""
Minimal reverse-mode differentiation layer.

A Tensor wraps a float64 numpy array. Every differentiable primitive is an Operation subclass that computes its
output eagerly in __init__ and implements `gradient(grad_ys, wanted)`. While gradient tracking is enabled, outputs of
operations whose inputs require gradients keep a reference to the producing operation; `backward` walks those
operations in reverse topological order, restricted to the ops downstream of the requested sources.
"""
import contextlib
import typing

import numpy as np

from .utils_core import random_name

_TRACKING = [True]


class NonFiniteError(ArithmeticError):
    pass


class GradientTrackingError(RuntimeError):
    pass


@contextlib.contextmanager
def no_grad():
    _TRACKING.append(False)
    try:
        yield
    finally:
        _TRACKING.pop()


def is_tracking() -> bool:
    return _TRACKING[-1]


def check_finite(data: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(data)):
        raise NonFiniteError(f"{what} produced {int(np.sum(~np.isfinite(data)))} non-finite values")


class Tensor:
    def __init__(self, data: typing.Union[np.ndarray, float, typing.Sequence], requires_grad: bool = False,
                 operation: typing.Optional['Operation'] = None, name: str = ''):
        data = np.asarray(data, dtype=np.float64)
        check_finite(data, name or (operation.name if operation is not None else "tensor"))
        self.data = data
        self.grad: typing.Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.operation = operation
        self.name = name

    @property
    def dims(self) -> typing.List[int]:
        return list(self.data.shape)

    @property
    def size(self) -> int:
        return int(self.data.size)

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() needs a single-element tensor, got dims {self.dims}")
        return float(self.data.reshape(()))

    def __repr__(self) -> str:
        return f"Tensor(name={self.name!r}, dims={self.dims}, requires_grad={self.requires_grad})"


def as_tensor(value: typing.Union[Tensor, np.ndarray, float]) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


class Operation:
    def __init__(self, inputs: typing.List[Tensor], name: str):
        self.inputs = inputs
        self.name = random_name(name)
        self.tracked = is_tracking() and any(inp.requires_grad for inp in inputs)
        self._outputs: typing.List[Tensor] = []

    def _tensor(self, data: np.ndarray) -> Tensor:
        if self.tracked:
            return Tensor(data, requires_grad=True, operation=self, name=self.name)
        return Tensor(data, name=self.name)

    @property
    def outputs(self) -> typing.List[Tensor]:
        return self._outputs

    @property
    def output(self) -> Tensor:
        return self._outputs[0]

    def gradient(self, grad_ys: typing.List[typing.Optional[np.ndarray]], wanted: typing.List[bool]
                 ) -> typing.List[typing.Optional[np.ndarray]]:
        raise NotImplementedError


def _topological_order(tensor: Tensor) -> typing.List[Operation]:
    order = []
    seen = set()
    stack = [(tensor.operation, False)] if tensor.operation is not None else []
    while stack:
        op, expanded = stack.pop()
        if expanded:
            order.append(op)
            continue
        if id(op) in seen:
            continue
        seen.add(id(op))
        stack.append((op, True))
        for inp in op.inputs:
            if inp.operation is not None and id(inp.operation) not in seen:
                stack.append((inp.operation, False))
    return order


def _leaves(operations: typing.List[Operation]) -> typing.List[Tensor]:
    leaves = {}
    for op in operations:
        for inp in op.inputs:
            if inp.operation is None and inp.requires_grad:
                leaves[id(inp)] = inp
    return list(leaves.values())


def backward(loss: Tensor, sources: typing.Optional[typing.Sequence[Tensor]] = None,
             upstream: typing.Optional[np.ndarray] = None) -> None:
    """
    Accumulates d(loss)/d(source) into `source.grad` for every source. Gradients are added to whatever is already
    stored, so callers zero them between steps.
    :param loss: tensor to differentiate, usually a scalar
    :param sources: leaves that receive gradients; defaults to every leaf that requires gradients
    :param upstream: upstream gradient, ones by default
    """
    operations = _topological_order(loss)
    if sources is None:
        sources = _leaves(operations)
    upstream = np.ones_like(loss.data) if upstream is None else np.asarray(upstream, dtype=np.float64)
    if upstream.shape != loss.data.shape:
        raise ValueError(f"upstream gradient dims {list(upstream.shape)} do not match loss dims {loss.dims}")

    downstream = {id(src) for src in sources}
    for op in operations:
        if any(id(inp) in downstream for inp in op.inputs):
            downstream |= {id(out) for out in op.outputs}

    tensor_to_gradient: typing.Dict[int, np.ndarray] = {id(loss): upstream}
    for op in operations[::-1]:
        grad_ys = [tensor_to_gradient.get(id(out)) for out in op.outputs]
        if all(g is None for g in grad_ys):
            continue
        wanted = [id(inp) in downstream for inp in op.inputs]
        if not any(wanted):
            continue
        for inp, want, grad in zip(op.inputs, wanted, op.gradient(grad_ys, wanted)):
            if not want or grad is None:
                continue
            key = id(inp)
            tensor_to_gradient[key] = grad if key not in tensor_to_gradient else tensor_to_gradient[key] + grad

    for src in sources:
        grad = tensor_to_gradient.get(id(src))
        if grad is None:
            grad = np.zeros_like(src.data)
        check_finite(grad, f"gradient of {src.name or 'tensor'}")
        src.grad = grad.copy() if src.grad is None else src.grad + grad


class ParameterSet(typing.Dict[str, Tensor]):
    """
    Ordered name -> Tensor map. Insertion order is iteration order, which is also the on-disk order of weights.
    """

    def add(self, name: str, data: np.ndarray) -> Tensor:
        if name in self:
            raise ValueError(f"Parameter {name} already exists")
        self[name] = tensor = Tensor(data, requires_grad=True, name=name)
        return tensor

    def zero_grad(self) -> None:
        for tensor in self.values():
            tensor.zero_grad()

    def copy(self) -> 'ParameterSet':
        out = ParameterSet()
        for name, tensor in self.items():
            out.add(name, tensor.data.copy())
        return out

    def assign(self, other: 'ParameterSet') -> None:
        if list(self.keys()) != list(other.keys()):
            raise ValueError("Parameter names differ, cannot assign")
        for name, tensor in self.items():
            tensor.data = other[name].data.copy()
            tensor.grad = None


def gradient_check(f: typing.Callable[[Tensor], Tensor], at: typing.Union[Tensor, np.ndarray], step: float = 1e-4,
                   max_coordinates: typing.Optional[int] = None, seed: int = 0) -> float:
    """
    Compares the analytic gradient of a scalar function with central differences.
    :param f: scalar-valued function of one tensor
    :param at: evaluation point
    :param step: finite-difference step
    :param max_coordinates: check only this many (seeded, random) coordinates
    :param seed: coordinate sampling seed
    :return: max over checked coordinates of |analytic - numeric| / max(1e-8, |analytic| + |numeric|)
    """
    if step <= 0:
        raise ValueError(f"step has to be positive, got {step}")
    base = np.array(at.data if isinstance(at, Tensor) else at, dtype=np.float64)
    point = Tensor(base.copy(), requires_grad=True, name="gradient_check")
    with contextlib.ExitStack() as stack:
        if not is_tracking():
            stack.enter_context(_enable_tracking())
        value = f(point)
        if value.size != 1:
            raise ValueError(f"gradient_check needs a scalar function, got dims {value.dims}")
        backward(value, [point])
    analytic = point.grad.ravel()

    flat = base.ravel()
    coordinates = np.arange(flat.size)
    if max_coordinates is not None and max_coordinates < flat.size:
        coordinates = np.sort(np.random.default_rng(seed).choice(flat.size, max_coordinates, replace=False))

    error = 0.
    with no_grad():
        for idx in coordinates:
            shifted = flat.copy()
            shifted[idx] = flat[idx] + step
            plus = f(Tensor(shifted.reshape(base.shape))).item()
            shifted[idx] = flat[idx] - step
            minus = f(Tensor(shifted.reshape(base.shape))).item()
            numeric = (plus - minus) / (2 * step)
            if not np.isfinite(numeric):
                raise NonFiniteError(f"f is not finite around coordinate {idx}")
            denominator = max(1e-8, abs(analytic[idx]) + abs(numeric))
            error = max(error, abs(analytic[idx] - numeric) / denominator)
    return float(error)


@contextlib.contextmanager
def _enable_tracking():
    _TRACKING.append(True)
    try:
        yield
    finally:
        _TRACKING.pop()
