"""procedurally generated PPM source images for the desk-scale benchmark"""

import argparse
import os
import sys

import numpy as np

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from src.inputs import save_image  # noqa: E402
from src.utils_core import color_print  # noqa: E402

parser = argparse.ArgumentParser()
parser.add_argument("--output_dir", type=str, default="data/sources", help="Where to put the .ppm files")
parser.add_argument("--count", type=int, default=12, help="Number of images")
parser.add_argument("--portrait", type=int, default=2, help="How many of them are portrait (taller than wide)")
parser.add_argument("--height", type=int, default=128, help="Short side of every image")
parser.add_argument("--width", type=int, default=192, help="Long side of every image")
parser.add_argument("--seed", type=int, default=0, help="Generator seed")


def synthetic_image(height: int, width: int, rng: np.random.Generator) -> np.ndarray:
    """
    Smooth color gradient, a few soft-edged discs and rectangles, and fine sinusoidal texture.
    """
    rows, cols = np.meshgrid(np.linspace(0, 1, height), np.linspace(0, 1, width), indexing='ij')
    start, end = rng.uniform(0.1, 0.9, (2, 3, 1, 1))
    angle = rng.uniform(0, 2 * np.pi)
    ramp = np.cos(angle) * rows + np.sin(angle) * cols
    ramp = (ramp - ramp.min()) / max(np.ptp(ramp), 1e-12)
    image = start + (end - start) * ramp

    for _ in range(int(rng.integers(3, 7))):
        color = rng.uniform(0, 1, (3, 1, 1))
        center = rng.uniform(0, 1, 2)
        size = rng.uniform(0.08, 0.3)
        if rng.uniform() < 0.5:
            distance = np.hypot(rows - center[0], (cols - center[1]) * width / height)
        else:
            distance = np.maximum(np.abs(rows - center[0]), np.abs(cols - center[1]) * width / height)
        mask = 1 / (1 + np.exp((distance - size) * 60))
        image = image * (1 - mask) + color * mask

    frequency = rng.uniform(10, 40, 2)
    texture = np.sin(2 * np.pi * (frequency[0] * rows + rng.uniform())) * np.sin(2 * np.pi * frequency[1] * cols)
    image = image + rng.uniform(0.02, 0.06) * texture
    return np.clip(image, 0, 1)


def main():
    args = parser.parse_args()
    if args.count < 2 or not 0 <= args.portrait <= args.count:
        raise ValueError(f"need count >= 2 and 0 <= portrait <= count, got {args.count}, {args.portrait}")
    os.makedirs(args.output_dir, exist_ok=True)
    rng = np.random.default_rng(args.seed)
    for idx in range(args.count):
        image = synthetic_image(args.height, args.width, rng)
        if idx >= args.count - args.portrait:
            image = image.transpose(0, 2, 1)
        path = os.path.join(args.output_dir, f"synth{idx:02d}.ppm")
        save_image(image, path)
        color_print(f"Wrote {path} ({image.shape[2]}x{image.shape[1]})")


if __name__ == "__main__":
    main()
