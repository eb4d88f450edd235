"""
Latent quantization Q and its training/attack surrogates.
"""
import typing

import numpy as np

from .. import ops
from ..graph import GradientTrackingError, Operation, Tensor, is_tracking

MODES = ("noise", "ste", "hard")


class StraightThroughRound(Operation):
    def __init__(self, y: Tensor):
        super().__init__([y], name="ste_round")
        self._outputs = [self._tensor(ops.round_half_away(y.data))]

    def gradient(self, grad_ys, wanted):
        return [grad_ys[0]]


def quantize(y: Tensor, mode: str, rng: typing.Optional[np.random.Generator] = None) -> Tensor:
    """
    :param y: latent
    :param mode: "noise" adds U(-0.5, 0.5) (needs `rng`), "ste" rounds with an identity gradient, "hard" rounds and
    refuses to run inside a gradient-tracked computation.
    """
    if mode == "noise":
        if rng is None:
            raise ValueError("noise quantization needs a seeded numpy Generator")
        return ops.add(y, Tensor(rng.uniform(-0.5, 0.5, size=y.data.shape)))
    if mode == "ste":
        return StraightThroughRound(y).output
    if mode == "hard":
        if y.requires_grad and is_tracking():
            raise GradientTrackingError("hard quantization is inference-only; wrap the call in graph.no_grad()")
        return Tensor(ops.round_half_away(y.data), name="hard_round")
    raise ValueError(f"Unknown quantization mode {mode!r}, use one of {MODES}")
