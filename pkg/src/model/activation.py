import numpy as np

from ..graph import Operation, Tensor


class LeakyReluForward(Operation):
    def __init__(self, x: Tensor, slope: float):
        if not 0 <= slope < 1:
            raise ValueError(f"leaky_relu slope has to be in [0, 1), got {slope}")
        super().__init__([x], name="leaky_relu")
        self.slope = slope
        self._outputs = [self._tensor(np.where(x.data > 0, x.data, slope * x.data))]

    def gradient(self, grad_ys, wanted):
        # subgradient at exactly 0 is the negative-side slope
        return [grad_ys[0] * np.where(self.inputs[0].data > 0, 1., self.slope)]


def leaky_relu(x: Tensor, slope: float = 0.01) -> Tensor:
    return LeakyReluForward(x, slope).output
