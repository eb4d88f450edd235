"""
Toy learned image codec f = D o Q^-1 o Q o E.

E: conv(3 -> hidden, stride 2) -> leaky_relu -> conv(hidden -> latent, stride 2)
D: deconv(latent -> hidden, stride 2) -> leaky_relu -> deconv(hidden -> 3, stride 2)
Q^-1 is the identity; the rate is measured by a factorized logistic prior per latent channel.
"""
import typing

import numpy as np

from .activation import leaky_relu
from .backend import RELU_GAIN, get_var, initializer_kwargs, zeros_var
from .convolution import conv2d, deconv2d
from .entropy import RateEstimate, bits_estimate as _bits_estimate
from .quantization import quantize
from .. import ops
from ..graph import ParameterSet, Tensor, as_tensor

STRIDE = 2
DOWNSAMPLING = STRIDE * STRIDE
LEAKY_SLOPE = 0.01
IMAGE_CHANNELS = 3


class CodecModel:
    def __init__(self, encoder: ParameterSet, decoder: ParameterSet, entropy: ParameterSet, lam: float):
        self.encoder = encoder
        self.decoder = decoder
        self.entropy = entropy
        self.lam = float(lam)
        if self.lam < 0:
            raise ValueError(f"lambda has to be >= 0, got {lam}")
        self.kernel_size = encoder["encoder/conv0/kernel"].dims[-1]
        self.pad = padding(self.kernel_size)
        self.hidden_channels = encoder["encoder/conv0/kernel"].dims[0]
        self.latent_channels = encoder["encoder/conv1/kernel"].dims[0]
        expected = {"decoder/deconv0/kernel": decoder["decoder/deconv0/kernel"].dims[0],
                    "entropy/location": entropy["entropy/location"].dims,
                    "entropy/log_scale": entropy["entropy/log_scale"].dims}
        for name, dims in expected.items():
            if dims not in (self.latent_channels, [self.latent_channels]):
                raise ValueError(f"encoder emits {self.latent_channels} latent channels but {name} expects {dims}")

    def parameter_sets(self) -> typing.List[ParameterSet]:
        return [self.encoder, self.decoder, self.entropy]

    def parameters(self) -> typing.List[Tensor]:
        return [tensor for parameters in self.parameter_sets() for tensor in parameters.values()]

    def named_parameters(self) -> typing.List[typing.Tuple[str, Tensor]]:
        return [item for parameters in self.parameter_sets() for item in parameters.items()]

    def zero_grad(self) -> None:
        for parameters in self.parameter_sets():
            parameters.zero_grad()

    def copy(self) -> 'CodecModel':
        return CodecModel(self.encoder.copy(), self.decoder.copy(), self.entropy.copy(), self.lam)


def padding(kernel_size: int) -> int:
    if kernel_size < STRIDE or (kernel_size - STRIDE) % 2:
        raise ValueError(f"kernel_size has to be >= {STRIDE} and have the parity of the stride, got {kernel_size}")
    return (kernel_size - STRIDE) // 2


def build_model(latent_channels: int = 32, hidden_channels: int = 64, kernel_size: int = 4, lam: float = 650.,
                seed: int = 0, initializer: str = "orthogonal") -> CodecModel:
    """
    Creates a freshly initialized codec. initializer is one of orthogonal, normal or zeros; "zeros" gives all-zero
    weights, which makes the network output exactly its last bias.
    """
    padding(kernel_size)
    rng = np.random.default_rng(seed)
    encoder, decoder, entropy = ParameterSet(), ParameterSet(), ParameterSet()
    layers = [(encoder, "encoder/conv0", [hidden_channels, IMAGE_CHANNELS], RELU_GAIN),
              (encoder, "encoder/conv1", [latent_channels, hidden_channels], 1.),
              (decoder, "decoder/deconv0", [latent_channels, hidden_channels], RELU_GAIN),
              (decoder, "decoder/deconv1", [hidden_channels, IMAGE_CHANNELS], 1.)]
    for parameters, name, channels, gain in layers:
        shape = channels + [kernel_size, kernel_size]
        get_var(parameters, f"{name}/kernel", shape, initializer, rng, **initializer_kwargs(initializer, gain))
        # conv kernels are [out, in, k, k], deconv kernels [in, out, k, k]
        zeros_var(parameters, f"{name}/bias", [channels[1] if "deconv" in name else channels[0]])
    zeros_var(entropy, "entropy/location", [latent_channels])
    zeros_var(entropy, "entropy/log_scale", [latent_channels])
    return CodecModel(encoder, decoder, entropy, lam)


def validate_image(x: np.ndarray, name: str = "image") -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3 or x.shape[0] != IMAGE_CHANNELS:
        raise ValueError(f"{name} has to be [3, H, W], got dims {list(x.shape)}")
    if x.shape[1] % DOWNSAMPLING or x.shape[2] % DOWNSAMPLING:
        raise ValueError(f"{name} spatial dims {list(x.shape[1:])} are not divisible by {DOWNSAMPLING}")
    if np.any(x < 0) or np.any(x > 1):
        raise ValueError(f"{name} pixels have to lie in [0, 1]")
    return x


def _layer(parameters: ParameterSet, name: str, x: Tensor, model: CodecModel, transposed: bool) -> Tensor:
    fn = deconv2d if transposed else conv2d
    return fn(x, parameters[f"{name}/kernel"], parameters[f"{name}/bias"], STRIDE, model.pad)


def encode(model: CodecModel, x: typing.Union[Tensor, np.ndarray]) -> Tensor:
    """
    Maps a [3, H, W] image (H, W divisible by 4) to the latent [latent_channels, H/4, W/4]. Inputs outside [0, 1]
    are accepted as tensors since attack iterates x_p + delta leave the pixel range.
    """
    x = as_tensor(x)
    if len(x.dims) != 3 or x.dims[0] != IMAGE_CHANNELS:
        raise ValueError(f"encode needs a [3, H, W] input, got dims {x.dims}")
    if x.dims[1] % DOWNSAMPLING or x.dims[2] % DOWNSAMPLING:
        raise ValueError(f"encode: spatial dims {x.dims[1:]} are not divisible by {DOWNSAMPLING}")
    hidden = leaky_relu(_layer(model.encoder, "encoder/conv0", x, model, False), LEAKY_SLOPE)
    return _layer(model.encoder, "encoder/conv1", hidden, model, False)


def decode(model: CodecModel, y_hat: Tensor) -> Tensor:
    """
    Raw, unclamped reconstruction. Use `presentation` for the [0, 1] image.
    """
    if len(y_hat.dims) != 3 or y_hat.dims[0] != model.latent_channels:
        raise ValueError(f"decode needs a [{model.latent_channels}, h, w] latent, got dims {y_hat.dims}")
    hidden = leaky_relu(_layer(model.decoder, "decoder/deconv0", y_hat, model, True), LEAKY_SLOPE)
    return _layer(model.decoder, "decoder/deconv1", hidden, model, True)


def presentation(x_hat: typing.Union[Tensor, np.ndarray]) -> np.ndarray:
    return np.clip(x_hat.data if isinstance(x_hat, Tensor) else x_hat, 0, 1)


def forward(model: CodecModel, x: typing.Union[Tensor, np.ndarray], mode: str,
            rng: typing.Optional[np.random.Generator] = None) -> Tensor:
    return decode(model, quantize(encode(model, x), mode, rng))


def bits_estimate(model: CodecModel, y_hat: Tensor, height: typing.Optional[int] = None,
                  width: typing.Optional[int] = None) -> RateEstimate:
    return _bits_estimate(model.entropy["entropy/location"], model.entropy["entropy/log_scale"], y_hat, height,
                          width)


def rd_loss(model: CodecModel, x: typing.Union[Tensor, np.ndarray], mode: str,
            rng: typing.Optional[np.random.Generator] = None) -> Tensor:
    """
    bits / (H * W) + lambda * MSE(x, x_hat)
    """
    x = as_tensor(x)
    y_hat = quantize(encode(model, x), mode, rng)
    x_hat = decode(model, y_hat)
    rate = bits_estimate(model, y_hat, x.dims[1], x.dims[2]).bpp
    return ops.add(rate, ops.scale(ops.mean_squared_error(x_hat, x), model.lam))
