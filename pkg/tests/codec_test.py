import os

import numpy as np
import pytest

from backend import GRADIENT_TOLERANCE, random_image, tiny_model
from src import ops
from src.attack import gsm_objective
from src.graph import NonFiniteError, Tensor, backward, gradient_check, no_grad
from src.metrics import psnr
from src.model import (CodecModel, bits_estimate, build_model, decode, encode, forward, presentation, rd_loss,
                       validate_image)
from src.model.checkpoint import MAGIC, WeightFormatError, load_weights, save_weights
from src.model.entropy import bin_probability
from src.run.train import train


def shapes_test():
    model = build_model(latent_channels=6, hidden_channels=5, seed=1)
    x = random_image(np.random.default_rng(0), 16)
    y = encode(model, x)
    assert y.dims == [6, 4, 4]
    assert decode(model, y).dims == [3, 16, 16]
    assert model.kernel_size == 4 and model.pad == 1


def orthogonal_init_test():
    model = build_model(latent_channels=4, hidden_channels=8, seed=3)
    kernel = model.encoder["encoder/conv0/kernel"].data.reshape(8, -1)
    assert np.allclose(kernel @ kernel.T, 2 * np.eye(8))
    kernel = model.encoder["encoder/conv1/kernel"].data.reshape(4, -1)
    assert np.allclose(kernel @ kernel.T, np.eye(4))


def normal_initializer_test():
    model = build_model(latent_channels=4, hidden_channels=8, seed=3, initializer="normal")
    orthogonal = build_model(latent_channels=4, hidden_channels=8, seed=3)
    kernel = model.encoder["encoder/conv1/kernel"].data
    assert not np.allclose(kernel, orthogonal.encoder["encoder/conv1/kernel"].data)
    assert 0.015 < kernel.std() < 0.025
    assert 0.015 * 2 ** 0.5 < model.encoder["encoder/conv0/kernel"].data.std() < 0.025 * 2 ** 0.5


def unknown_initializer_test():
    with pytest.raises(ValueError, match="initializer"):
        build_model(latent_channels=2, hidden_channels=3, initializer="xavier")


def entropy_dims_are_checked_test():
    model = tiny_model()
    for name in ("entropy/location", "entropy/log_scale"):
        entropy = model.entropy.copy()
        entropy[name].data = np.zeros(model.latent_channels + 1)
        with pytest.raises(ValueError, match=name):
            CodecModel(model.encoder, model.decoder, entropy, model.lam)


def zero_model_outputs_bias_test():
    model = build_model(latent_channels=2, hidden_channels=3, initializer="zeros")
    model.decoder["decoder/deconv1/bias"].data = np.array([0.1, 0.2, 0.3])
    with no_grad():
        out = forward(model, random_image(np.random.default_rng(0), 8), "hard").data
    assert np.allclose(out, np.array([0.1, 0.2, 0.3])[:, None, None] * np.ones((3, 8, 8)))


def validate_image_test():
    with pytest.raises(ValueError):
        validate_image(np.zeros((3, 6, 8)))
    with pytest.raises(ValueError):
        validate_image(np.full((3, 8, 8), 1.5))
    with pytest.raises(ValueError):
        validate_image(np.zeros((1, 8, 8)))
    assert validate_image(np.zeros((3, 8, 8))).dtype == np.float64


def presentation_clamps_test():
    assert np.array_equal(presentation(np.array([-0.5, 0.5, 1.5])), np.array([0., 0.5, 1.]))


def bin_probabilities_sum_to_one_test():
    values = np.arange(-200, 201, dtype=np.float64).reshape(1, 1, -1)
    for location, log_scale in ((0., 0.), (1.3, -0.7), (-4.2, 1.5)):
        probability, _, _ = bin_probability(values, np.array([location]), np.array([log_scale]))
        assert abs(probability.sum() - 1) < 1e-9


def rate_test():
    model = tiny_model()
    y_hat = Tensor(np.zeros((2, 4, 4)))
    rate = bits_estimate(model, y_hat, 16, 16)
    # unit logistic at location 0 puts sigmoid(0.5) - sigmoid(-0.5) on the zero bin
    expected = -32 * np.log2(1 / (1 + np.exp(-0.5)) - 1 / (1 + np.exp(0.5)))
    assert np.isclose(rate.bits.item(), expected)
    assert np.isclose(rate.bpp.item(), expected / 256)


def rd_loss_test():
    model = tiny_model(lam=10.)
    x = random_image(np.random.default_rng(0), 8)
    with no_grad():
        loss = rd_loss(model, x, "hard").item()
        y_hat = ops.round_half_away(encode(model, x).data)
        x_hat = decode(model, Tensor(y_hat)).data
        rate = bits_estimate(model, Tensor(y_hat), 8, 8).bpp.item()
    assert np.isclose(loss, rate + 10. * np.mean(np.square(x_hat - x)))


def rd_loss_gradient_test():
    model = tiny_model()
    x = random_image(np.random.default_rng(0), 8)
    model.zero_grad()
    backward(rd_loss(model, x, "noise", np.random.default_rng(0)), model.parameters())
    assert all(np.all(np.isfinite(p.grad)) for p in model.parameters())
    assert np.any(model.entropy["entropy/log_scale"].grad != 0)


@pytest.mark.parametrize("seed", [0, 1, 2])
def straight_through_objective_gradient_test(seed: int):
    """
    Straight-through gradients equal the exact gradient of D(E(x) + c) with the rounding offset c frozen at x0.
    """
    rng = np.random.default_rng(seed)
    model = tiny_model(seed)
    x0 = random_image(rng, 8, 0.2, 0.8)
    x_q = random_image(rng, 8)
    with no_grad():
        y0 = encode(model, x0).data
    offset = Tensor(ops.round_half_away(y0) - y0)

    def surrogate(x: Tensor) -> Tensor:
        reconstruction = decode(model, ops.add(encode(model, x), offset))
        return ops.scale(ops.squared_norm(ops.subtract(reconstruction, x_q)), -0.5)

    assert gradient_check(surrogate, x0, step=1e-6, max_coordinates=40, seed=seed) < GRADIENT_TOLERANCE

    point = Tensor(x0.copy(), requires_grad=True)
    backward(surrogate(point), [point])
    delta = Tensor(np.zeros_like(x0), requires_grad=True)
    phi = gsm_objective(model, x0, delta, x_q)
    assert np.isclose(phi, surrogate(Tensor(x0)).item())
    assert np.allclose(delta.grad, point.grad, rtol=1e-8, atol=1e-10)


def checkpoint_round_trip_test(tmp_path):
    model = tiny_model(seed=4, lam=123.)
    path = os.path.join(tmp_path, "codec.weights")
    save_weights(model, path)
    loaded = load_weights(path)
    assert loaded.lam == 123.
    assert [name for name, _ in loaded.named_parameters()] == [name for name, _ in model.named_parameters()]
    for (_, a), (_, b) in zip(model.named_parameters(), loaded.named_parameters()):
        assert np.array_equal(a.data, b.data)


def checkpoint_errors_test(tmp_path):
    path = os.path.join(tmp_path, "codec.weights")
    save_weights(tiny_model(), path)
    with open(path, 'rb') as f:
        data = f.read()
    cases = {"magic": b"XXXX" + data[4:], "truncated": data[:-5], "trailing": data + b"\0"}
    for name, content in cases.items():
        broken = os.path.join(tmp_path, f"{name}.weights")
        with open(broken, 'wb') as f:
            f.write(content)
        with pytest.raises(WeightFormatError, match="offset"):
            load_weights(broken)
    assert data[:4] == MAGIC


def training_reduces_loss_test():
    image = np.full((3, 8, 8), 0.5)
    model = tiny_model(seed=0, lam=100.)
    model, history = train(model, [image], epochs=200, lr=1e-3, seed=0, print_every=0)
    assert not history.diverged
    assert len(history.losses) == 200
    assert history.losses[-1] < 0.5 * history.losses[0]


def zero_epochs_leave_weights_untouched_test():
    model = tiny_model(seed=2)
    before = [p.data.copy() for p in model.parameters()]
    trained, history = train(model, [random_image(np.random.default_rng(0), 8)], epochs=0, lr=1e-3, seed=0)
    assert history.losses == [] and not history.diverged
    for a, b in zip(before, trained.parameters()):
        assert np.array_equal(a, b.data)


def constant_image_is_memorized_test():
    image = np.full((3, 8, 8), 0.5)
    model = build_model(latent_channels=2, hidden_channels=3, lam=100., initializer="zeros")
    model, history = train(model, [image], epochs=300, lr=1e-3, seed=0, print_every=0)
    assert not history.diverged
    with no_grad():
        reconstruction = forward(model, image, "hard").data
    assert np.mean(np.square(reconstruction - image)) < 1e-3
    assert psnr(presentation(reconstruction), image) >= 28


def training_is_deterministic_test():
    rng = np.random.default_rng(0)
    images = [random_image(rng, 8) for _ in range(3)]
    first, _ = train(tiny_model(), images, epochs=3, lr=1e-3, seed=7, print_every=0)
    second, _ = train(tiny_model(), images, epochs=3, lr=1e-3, seed=7, print_every=0)
    for (_, a), (_, b) in zip(first.named_parameters(), second.named_parameters()):
        assert np.array_equal(a.data, b.data)


def training_divergence_restores_weights_test():
    image = np.full((3, 8, 8), 0.5)
    model, history = train(tiny_model(), [image], epochs=50, lr=1e6, seed=0, print_every=0)
    assert history.diverged
    assert len(history.losses) < 50
    assert all(np.all(np.isfinite(p.data)) for p in model.parameters())


def training_rejects_bad_arguments_test():
    with pytest.raises(ValueError):
        train(tiny_model(), [], epochs=1, lr=1e-3, seed=0)
    with pytest.raises(ValueError):
        train(tiny_model(), [np.zeros((3, 8, 8))], epochs=1, lr=0., seed=0)


def non_finite_input_test():
    with pytest.raises(NonFiniteError):
        encode(tiny_model(), np.full((3, 8, 8), np.inf))
