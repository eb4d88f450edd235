import numpy as np

from ..graph import Operation, Tensor


def output_size(size: int, kernel_size: int, stride: int, pad: int, name: str = "conv2d") -> int:
    if stride < 1 or pad < 0:
        raise ValueError(f"{name}: stride has to be >= 1 and pad >= 0, got stride={stride} pad={pad}")
    span = size + 2 * pad - kernel_size
    if span < 0 or span % stride:
        raise ValueError(f"{name}: (size + 2*pad - k) / stride + 1 is not integral for size={size}, k={kernel_size}, "
                         f"stride={stride}, pad={pad}")
    return span // stride + 1


def transposed_size(size: int, kernel_size: int, stride: int, pad: int, name: str = "deconv2d") -> int:
    if stride < 1 or pad < 0:
        raise ValueError(f"{name}: stride has to be >= 1 and pad >= 0, got stride={stride} pad={pad}")
    out = (size - 1) * stride - 2 * pad + kernel_size
    if out < 1:
        raise ValueError(f"{name}: output size {out} for size={size}, k={kernel_size}, stride={stride}, pad={pad}")
    return out


def get_windows(padded: np.ndarray, kernel_size: int, stride: int, out_h: int, out_w: int) -> np.ndarray:
    """
    Read-only view of all k*k patches: [C, out_h, out_w, k, k].
    """
    padded = np.ascontiguousarray(padded)
    channel_str, height_str, width_str = padded.strides
    return np.lib.stride_tricks.as_strided(padded, (padded.shape[0], out_h, out_w, kernel_size, kernel_size),
                                           (channel_str, stride * height_str, stride * width_str, height_str,
                                            width_str),
                                           writeable=False)


def scatter_windows(cols: np.ndarray, stride: int, full_h: int, full_w: int) -> np.ndarray:
    """
    Adjoint of get_windows: accumulates [C, h, w, k, k] patches into a [C, full_h, full_w] canvas.
    """
    channels, height, width, kernel_size, _ = cols.shape
    out = np.zeros((channels, full_h, full_w))
    for i in range(kernel_size):
        for j in range(kernel_size):
            out[:, i:i + stride * (height - 1) + 1:stride, j:j + stride * (width - 1) + 1:stride] += cols[:, :, :, i, j]
    return out


def _pad(x: np.ndarray, pad: int) -> np.ndarray:
    return np.pad(x, ((0, 0), (pad, pad), (pad, pad))) if pad else x


def correlate(x: np.ndarray, kernel: np.ndarray, stride: int, pad: int) -> np.ndarray:
    """
    [C_in, H, W] (*) [C_out, C_in, k, k] -> [C_out, H', W'] cross-correlation without bias.
    """
    kernel_size = kernel.shape[-1]
    out_h = output_size(x.shape[1], kernel_size, stride, pad)
    out_w = output_size(x.shape[2], kernel_size, stride, pad)
    windows = get_windows(_pad(x, pad), kernel_size, stride, out_h, out_w)
    return np.tensordot(kernel, windows, axes=([1, 2, 3], [0, 3, 4]))


def transpose_correlate(y: np.ndarray, kernel: np.ndarray, stride: int, pad: int, height: int, width: int
                        ) -> np.ndarray:
    """
    Adjoint of `correlate` w.r.t. its input: [C_out, H', W'] with kernel [C_out, C_in, k, k] -> [C_in, height, width].
    """
    cols = np.tensordot(kernel, y, axes=([0], [0])).transpose(0, 3, 4, 1, 2)
    full = scatter_windows(cols, stride, height + 2 * pad, width + 2 * pad)
    return full[:, pad:pad + height, pad:pad + width]


def _check_layer(x: Tensor, kernel: Tensor, bias: Tensor, in_axis: int, out_axis: int, name: str) -> None:
    if len(x.dims) != 3:
        raise ValueError(f"{name}: input has to be [C, H, W], got dims {x.dims}")
    if len(kernel.dims) != 4 or kernel.dims[2] != kernel.dims[3]:
        raise ValueError(f"{name}: kernel has to be [*, *, k, k], got dims {kernel.dims}")
    if kernel.dims[in_axis] != x.dims[0]:
        raise ValueError(f"{name}: input channels {x.dims[0]} do not match kernel dims {kernel.dims}")
    if bias.dims != [kernel.dims[out_axis]]:
        raise ValueError(f"{name}: bias dims {bias.dims} do not match kernel dims {kernel.dims}")


class Conv2dForward(Operation):
    def __init__(self, x: Tensor, kernel: Tensor, bias: Tensor, stride: int, pad: int):
        _check_layer(x, kernel, bias, 1, 0, "conv2d")
        super().__init__([x, kernel, bias], name="conv2d")
        self.stride = stride
        self.pad = pad
        out = correlate(x.data, kernel.data, stride, pad)
        self._outputs = [self._tensor(out + bias.data[:, None, None])]

    def gradient(self, grad_ys, wanted):
        x, kernel, _ = self.inputs
        dy = grad_ys[0]
        dx = dkernel = dbias = None
        if wanted[0]:
            dx = transpose_correlate(dy, kernel.data, self.stride, self.pad, x.dims[1], x.dims[2])
        if wanted[1]:
            windows = get_windows(_pad(x.data, self.pad), kernel.dims[-1], self.stride, dy.shape[1], dy.shape[2])
            dkernel = np.tensordot(dy, windows, axes=([1, 2], [1, 2]))
        if wanted[2]:
            dbias = dy.sum((1, 2))
        return [dx, dkernel, dbias]


class Deconv2dForward(Operation):
    """
    Transposed convolution, kernel layout [C_in, C_out, k, k]. Its input gradient is `correlate` of the upstream
    gradient with the very same kernel array.
    """

    def __init__(self, x: Tensor, kernel: Tensor, bias: Tensor, stride: int, pad: int):
        _check_layer(x, kernel, bias, 0, 1, "deconv2d")
        super().__init__([x, kernel, bias], name="deconv2d")
        self.stride = stride
        self.pad = pad
        kernel_size = kernel.dims[-1]
        height = transposed_size(x.dims[1], kernel_size, stride, pad)
        width = transposed_size(x.dims[2], kernel_size, stride, pad)
        out = transpose_correlate(x.data, kernel.data, stride, pad, height, width)
        self._outputs = [self._tensor(out + bias.data[:, None, None])]

    def gradient(self, grad_ys, wanted):
        x, kernel, _ = self.inputs
        dy = grad_ys[0]
        dx = dkernel = dbias = None
        if wanted[0]:
            dx = correlate(dy, kernel.data, self.stride, self.pad)
        if wanted[1]:
            windows = get_windows(_pad(dy, self.pad), kernel.dims[-1], self.stride, x.dims[1], x.dims[2])
            dkernel = np.tensordot(x.data, windows, axes=([1, 2], [1, 2]))
        if wanted[2]:
            dbias = dy.sum((1, 2))
        return [dx, dkernel, dbias]


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor, stride: int = 1, pad: int = 0) -> Tensor:
    return Conv2dForward(x, kernel, bias, stride, pad).output


def deconv2d(x: Tensor, kernel: Tensor, bias: Tensor, stride: int = 1, pad: int = 0) -> Tensor:
    return Deconv2dForward(x, kernel, bias, stride, pad).output

