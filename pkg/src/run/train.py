import typing

import numpy as np

from ..graph import NonFiniteError, backward
from ..model import CodecModel, rd_loss, validate_image
from ..optimizer import ReduceOnPlateau, update
from ..utils_core import color_print, warn


class TrainingHistory:
    def __init__(self):
        self.losses: typing.List[float] = []
        self.learning_rates: typing.List[float] = []
        self.diverged = False


def train(model: CodecModel, dataset: typing.Sequence[np.ndarray], epochs: int, lr: float, seed: int,
          plateau_timespan: int = 0, plateau_reduction: float = 2., print_every: int = 10
          ) -> typing.Tuple[CodecModel, TrainingHistory]:
    """
    Rate-distortion training with noise quantization, one image per step, visiting the dataset in a seeded order
    each epoch. The model is updated in place and returned.
    On a non-finite loss or update the parameters are rolled back to the end of the last finished epoch and training
    stops with history.diverged set.
    """
    if not dataset:
        raise ValueError("train needs a non-empty dataset")
    if epochs < 0 or lr <= 0:
        raise ValueError(f"epochs has to be >= 0 and lr > 0, got {epochs}, {lr}")
    images = [validate_image(x, f"dataset[{i}]") for i, x in enumerate(dataset)]
    if any(x.shape != images[0].shape for x in images):
        raise ValueError("train needs images of uniform shape")

    rng = np.random.default_rng(seed)
    plateau = ReduceOnPlateau(lr, plateau_timespan, plateau_reduction)
    history = TrainingHistory()
    variables = model.parameters()
    learning_rate = lr

    for epoch in range(epochs):
        checkpoint = model.copy()
        total = 0.
        try:
            for idx in rng.permutation(len(images)):
                model.zero_grad()
                loss = rd_loss(model, images[idx], "noise", rng)
                backward(loss, variables)
                update(variables, learning_rate)
                total += loss.item()
        except NonFiniteError as exc:
            warn(f"Training diverged in epoch {epoch} ({exc}). Restoring the weights of epoch {epoch - 1}.")
            for restored, target in zip(checkpoint.parameter_sets(), model.parameter_sets()):
                target.assign(restored)
            history.diverged = True
            break
        epoch_loss = total / len(images)
        history.losses.append(epoch_loss)
        history.learning_rates.append(learning_rate)
        learning_rate = plateau(epoch_loss)
        if print_every and (epoch % print_every == 0 or epoch == epochs - 1):
            color_print(f"epoch {epoch:5d} | rd loss {epoch_loss:.6f} | lr {history.learning_rates[-1]:.3g}")
    model.zero_grad()
    return model, history
