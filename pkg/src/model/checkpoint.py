"""
Binary weight files.

Layout (little endian):
    b"GSMF" | version u32 | lambda f64 | tensor count u32 |
    per tensor: name length u32, utf-8 name, ndim u32, dims u32 * ndim, data f64 * prod(dims)
"""
import struct
import typing

import numpy as np

from . import CodecModel
from ..graph import ParameterSet
from ..utils_core import int_reduce_mul

MAGIC = b"GSMF"
FORMAT_VERSION = 1
SECTIONS = ("encoder", "decoder", "entropy")


class WeightFormatError(ValueError):
    pass


def save_weights(model: CodecModel, path: str) -> None:
    parameters = model.named_parameters()
    chunks = [MAGIC, struct.pack("<IdI", FORMAT_VERSION, model.lam, len(parameters))]
    for name, tensor in parameters:
        encoded = name.encode("utf-8")
        chunks.append(struct.pack(f"<I{len(encoded)}sI", len(encoded), encoded, len(tensor.dims)))
        chunks.append(struct.pack(f"<{len(tensor.dims)}I", *tensor.dims))
        chunks.append(tensor.data.astype("<f8").tobytes())
    with open(path, 'wb') as f:
        f.write(b''.join(chunks))


class _Reader:
    def __init__(self, buffer: bytes, path: str):
        self.buffer = buffer
        self.offset = 0
        self.path = path

    def take(self, size: int, what: str) -> bytes:
        if self.offset + size > len(self.buffer):
            raise WeightFormatError(f"{self.path}: truncated at byte offset {self.offset} while reading {what} "
                                    f"({size} bytes needed, {len(self.buffer) - self.offset} left)")
        out = self.buffer[self.offset:self.offset + size]
        self.offset += size
        return out

    def unpack(self, fmt: str, what: str) -> typing.Tuple:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def load_weights(path: str) -> CodecModel:
    with open(path, 'rb') as f:
        reader = _Reader(f.read(), path)
    magic = reader.take(len(MAGIC), "magic")
    if magic != MAGIC:
        raise WeightFormatError(f"{path}: bad magic {magic!r} at byte offset 0, expected {MAGIC!r}")
    version_offset = reader.offset
    version, lam, count = reader.unpack("<IdI", "header")
    if version != FORMAT_VERSION:
        raise WeightFormatError(f"{path}: unsupported format version {version} at byte offset {version_offset}")

    sections = {section: ParameterSet() for section in SECTIONS}
    for _ in range(count):
        name_offset = reader.offset
        length, = reader.unpack("<I", "name length")
        try:
            name = reader.take(length, "name").decode("utf-8")
        except UnicodeDecodeError as exc:
            raise WeightFormatError(f"{path}: tensor name at byte offset {name_offset} is not utf-8") from exc
        section = name.split('/')[0]
        if section not in sections:
            raise WeightFormatError(f"{path}: unknown tensor {name!r} at byte offset {name_offset}")
        ndim, = reader.unpack("<I", f"rank of {name}")
        dims = list(reader.unpack(f"<{ndim}I", f"dims of {name}"))
        data_offset = reader.offset
        data = np.frombuffer(reader.take(8 * int_reduce_mul(dims), f"data of {name}"), dtype="<f8")
        if not np.all(np.isfinite(data)):
            raise WeightFormatError(f"{path}: non-finite values in {name} at byte offset {data_offset}")
        sections[section].add(name, data.astype(np.float64).reshape(dims))
    if reader.offset != len(reader.buffer):
        raise WeightFormatError(f"{path}: {len(reader.buffer) - reader.offset} trailing bytes at byte offset "
                                f"{reader.offset}")
    try:
        return CodecModel(sections["encoder"], sections["decoder"], sections["entropy"], lam)
    except (KeyError, ValueError) as exc:
        raise WeightFormatError(f"{path}: incomplete or inconsistent parameter set ({exc})") from exc
