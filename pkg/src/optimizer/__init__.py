"""
Parameter updates. Training uses plain, momentum-free gradient descent.
"""
import typing

from .learning_rate import ReduceOnPlateau, get_learning_rate
from ..graph import Tensor, check_finite


def update(variables: typing.Iterable[Tensor], learning_rate: float) -> None:
    """
    var <- var - learning_rate * var.grad for every variable holding a gradient. Raises NonFiniteError before
    touching any variable if one of the updates would not be finite.
    """
    updates = []
    for var in variables:
        if var.grad is None:
            continue
        updated = var.data - learning_rate * var.grad
        check_finite(updated, f"update of {var.name}")
        updates.append((var, updated))
    for var, updated in updates:
        var.data = updated
