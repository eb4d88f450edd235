"""
Contains the input pipeline: binary PPM reading/writing (headers validated here, pixel payload through Pillow), the
desk-scale victim-target benchmark and the crop samplers that feed codec training and residual calibration.
"""
import os
import re
import typing

import numpy as np
from PIL import Image

from .attack import GsmPair

MAXVAL = 255
PPM_SUFFIXES = (".ppm",)
_WHITESPACE = b" \t\n\r\x0b\x0c"
_TOKEN = re.compile(rb"\d+")


class ImageFormatError(ValueError):
    pass


class _HeaderReader:
    def __init__(self, data: bytes, path: str):
        self.data = data
        self.path = path
        self.offset = 0

    def fail(self, message: str) -> typing.NoReturn:
        raise ImageFormatError(f"{self.path}: {message} at byte {self.offset}")

    def skip_separators(self):
        while self.offset < len(self.data):
            char = self.data[self.offset:self.offset + 1]
            if char == b"#":
                end = self.data.find(b"\n", self.offset)
                self.offset = len(self.data) if end < 0 else end + 1
            elif char in _WHITESPACE:
                self.offset += 1
            else:
                return

    def integer(self, field: str) -> int:
        self.skip_separators()
        match = _TOKEN.match(self.data, self.offset)
        if match is None:
            self.fail(f"expected {field}")
        self.offset = match.end()
        return int(match.group())


def load_image(path: str) -> np.ndarray:
    """
    Reads a binary P6 file with maxval 255 into a [3, H, W] float64 array with values v / 255.
    """
    with open(path, 'rb') as f:
        data = f.read()
    reader = _HeaderReader(data, path)
    if data[:2] != b"P6":
        reader.fail(f"bad magic {data[:2]!r}, expected b'P6'")
    reader.offset = 2
    width = reader.integer("width")
    height = reader.integer("height")
    maxval = reader.integer("maxval")
    if maxval != MAXVAL:
        reader.fail(f"unsupported maxval {maxval}, only {MAXVAL} is supported")
    if width < 1 or height < 1:
        reader.fail(f"empty image {width}x{height}")
    if reader.offset >= len(data) or data[reader.offset:reader.offset + 1] not in _WHITESPACE:
        reader.fail("expected a single whitespace byte after maxval")
    reader.offset += 1
    expected = width * height * 3
    available = len(data) - reader.offset
    if available < expected:
        reader.fail(f"truncated pixel data, {available} of {expected} bytes present")
    with Image.open(path, formats=["PPM"]) as image:
        pixels = np.asarray(image.convert("RGB"))
    return pixels.transpose(2, 0, 1).astype(np.float64) / MAXVAL


def save_image(x: np.ndarray, path: str) -> None:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3 or x.shape[0] != 3:
        raise ValueError(f"save_image needs a [3, H, W] image, got dims {list(x.shape)}")
    pixels = np.clip(np.rint(x * MAXVAL), 0, MAXVAL).astype(np.uint8).transpose(1, 2, 0)
    Image.fromarray(np.ascontiguousarray(pixels)).save(path, format="PPM")


def list_images(source_dir: str) -> typing.List[str]:
    if not os.path.isdir(source_dir):
        raise ValueError(f"source directory {source_dir!r} does not exist")
    return sorted(os.path.join(source_dir, name) for name in os.listdir(source_dir)
                  if name.lower().endswith(PPM_SUFFIXES))


def load_directory(source_dir: str, crop: int) -> typing.List[typing.Tuple[str, np.ndarray]]:
    images = [(path, load_image(path)) for path in list_images(source_dir)]
    if len(images) < 2:
        raise ValueError(f"{source_dir!r} holds {len(images)} PPM images, at least 2 are needed")
    for path, image in images:
        if min(image.shape[1:]) < crop:
            raise ValueError(f"{path} is {image.shape[2]}x{image.shape[1]}, smaller than the {crop}px crop")
    return images


def orientation(image: np.ndarray) -> str:
    return "portrait" if image.shape[1] > image.shape[2] else "landscape"


def random_crop(image: np.ndarray, crop: int, rng: np.random.Generator) -> typing.Tuple[np.ndarray, int, int]:
    top = int(rng.integers(0, image.shape[1] - crop + 1))
    left = int(rng.integers(0, image.shape[2] - crop + 1))
    return image[:, top:top + crop, left:left + crop].copy(), top, left


def make_benchmark(source_dir: str, crop: int = 64, pairs: int = 8, seed: int = 0) -> typing.List[GsmPair]:
    """
    Images are grouped by orientation (sorted by file name). The first image of each group provides that group's
    target crop, every other image is a source. Pair i draws a source image and crop position from a generator
    seeded with `seed` and is matched with the target of its source's orientation group. Crop coordinates are kept
    in the pair metadata.
    """
    if crop <= 0 or crop % 8:
        raise ValueError(f"crop has to be a positive multiple of 8, got {crop}")
    if pairs < 0:
        raise ValueError(f"pairs has to be >= 0, got {pairs}")
    if not pairs:
        return []
    images = load_directory(source_dir, crop)
    rng = np.random.default_rng(seed)

    groups: typing.Dict[str, typing.List[typing.Tuple[str, np.ndarray]]] = {}
    for path, image in images:
        groups.setdefault(orientation(image), []).append((path, image))
    targets = {}
    for name in sorted(groups):
        path, image = groups[name][0]
        target, top, left = random_crop(image, crop, rng)
        targets[name] = (path, target, top, left)
    sources = [(path, image) for name in sorted(groups) for path, image in groups[name][1:]]
    if not sources:
        raise ValueError(f"{source_dir!r}: every image is a target, no source images remain")

    out = []
    for idx in range(pairs):
        path, image = sources[int(rng.integers(0, len(sources)))]
        source, top, left = random_crop(image, crop, rng)
        target_path, target, target_top, target_left = targets[orientation(image)]
        out.append(GsmPair(source, target, f"pair{idx}",
                           {"source": os.path.basename(path), "source_top": top, "source_left": left,
                            "target": os.path.basename(target_path), "target_top": target_top,
                            "target_left": target_left}))
    return out


def sample_crops(source_dir: str, crop: int, count: int, seed: int, stream: int = 0) -> typing.List[np.ndarray]:
    """
    `count` crops from uniformly drawn images of the directory. Different `stream` values give independent crop
    sets for the same seed (0 = training, 1 = held-out calibration).
    """
    if count < 0:
        raise ValueError(f"count has to be >= 0, got {count}")
    images = load_directory(source_dir, crop)
    rng = np.random.default_rng(np.random.SeedSequence([seed, stream]))
    return [random_crop(images[int(rng.integers(0, len(images)))][1], crop, rng)[0] for _ in range(count)]
