"""
Instruments for reading attack dynamics: lazy cosine similarity, the reconstruction residual and the region it puts
an input in, the amplification check for successful examples, and stage segmentation of LCS trajectories.
"""
import csv
import enum
import math
import typing

import numpy as np

from . import ops
from .graph import Tensor, backward, no_grad
from .metrics import psnr
from .model import CodecModel, forward, presentation

UNDEFINED = math.nan
NORM_FLOOR = 1e-12
TRAJECTORY_COLUMNS = ("t", "alpha", "objective", "lcs", "residual_norm", "delta_linf")

Preprocess = typing.Optional[typing.Callable[[np.ndarray], np.ndarray]]


class RegionLabel(enum.Enum):
    IDENTITY = "Identity"
    AMPLIFICATION = "Amplification"


class TrajectoryRecord(typing.NamedTuple):
    t: int
    alpha_t: float
    objective: float
    lcs: float
    residual_norm: float
    delta_linf: float


class StageSegmentation(typing.NamedTuple):
    lazying_end: int
    oscillating_end: int
    refining_detected: bool
    lcs_acme: typing.Tuple[int, float]
    final_smoothed_lcs: float


class Lemma1Report(typing.NamedTuple):
    target_psnr: float
    eta: float
    eta0: float
    pair_distance: float
    region: RegionLabel
    successful: bool
    verdict: str


class GradientAlignment(typing.NamedTuple):
    identity_jacobian: float
    lazy_direction: float


def is_undefined(value: float) -> bool:
    return math.isnan(value)


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    norm_a = float(np.linalg.norm(a))
    norm_b = float(np.linalg.norm(b))
    if norm_a < NORM_FLOOR or norm_b < NORM_FLOOR:
        return UNDEFINED
    return float(np.clip(np.vdot(a, b) / (norm_a * norm_b), -1, 1))


def lcs(delta: typing.Union[Tensor, np.ndarray], x_p: np.ndarray, x_q: np.ndarray, epsilon: float) -> float:
    """
    Cosine similarity between delta and the lazy perturbation clip(x_q - x_p, -eps, eps). NaN when either is zero.
    """
    delta = delta.data if isinstance(delta, Tensor) else np.asarray(delta)
    if delta.shape != np.shape(x_p) or np.shape(x_p) != np.shape(x_q):
        raise ValueError(f"lcs: dims {list(delta.shape)}, {list(np.shape(x_p))}, {list(np.shape(x_q))} differ")
    return cosine(delta, np.clip(x_q - x_p, -epsilon, epsilon))


def deployed_output(model: CodecModel, x: np.ndarray, preprocess: Preprocess = None) -> np.ndarray:
    """
    Raw output of the deployed pipeline: the optional preprocess (e.g. hard JPEG), then the hard-quantized codec.
    """
    with no_grad():
        return forward(model, x if preprocess is None else preprocess(x), "hard").data


def residual_norm(model: CodecModel, x: np.ndarray, preprocess: Preprocess = None) -> float:
    """
    eta = ||g(x) - x||_2 of the deployed pipeline g (hard quantization, optional preprocess in front).
    """
    return float(np.linalg.norm(deployed_output(model, x, preprocess) - x))


def classify_region(eta: float, eta0: float) -> RegionLabel:
    if eta < 0 or eta0 < 0:
        raise ValueError(f"eta and eta0 have to be >= 0, got {eta}, {eta0}")
    return RegionLabel.IDENTITY if eta <= eta0 else RegionLabel.AMPLIFICATION


def calibrate_eta0(model: CodecModel, images: typing.Sequence[np.ndarray], multiple: float = 3.,
                   preprocess: Preprocess = None) -> float:
    if not images:
        raise ValueError("calibrate_eta0 needs at least one clean image")
    return multiple * float(np.median([residual_norm(model, x, preprocess) for x in images]))


def identity_ratio(model: CodecModel, x_p: np.ndarray, x_q: np.ndarray, preprocess: Preprocess = None) -> float:
    """
    eta(x_p) / ||x_q - x_p||_2; the codec acts like the identity on the pair when this is well below 1.
    """
    distance = float(np.linalg.norm(x_q - x_p))
    if distance < NORM_FLOOR:
        return math.inf
    return residual_norm(model, x_p, preprocess) / distance


def check_lemma1(model: CodecModel, x_p: np.ndarray, x_q: np.ndarray, adversarial: np.ndarray,
                 success_threshold_psnr: float, eta0: float, preprocess: Preprocess = None) -> Lemma1Report:
    """
    A successful example (target PSNR >= threshold) has to sit in the amplification region. Unsuccessful examples
    pass vacuously; "violated" is reported, never raised.
    """
    output = deployed_output(model, adversarial, preprocess)
    target_psnr = psnr(presentation(output), x_q)
    eta = float(np.linalg.norm(output - adversarial))
    region = classify_region(eta, eta0)
    successful = target_psnr >= success_threshold_psnr
    if not successful:
        verdict = "vacuous"
    else:
        verdict = "holds" if region == RegionLabel.AMPLIFICATION else "violated"
    return Lemma1Report(target_psnr, eta, eta0, float(np.linalg.norm(x_q - x_p)), region, successful, verdict)


def gradient_alignment(model: CodecModel, x_p: np.ndarray, delta: np.ndarray, x_q: np.ndarray) -> GradientAlignment:
    """
    Cosine between the straight-through gradient of -1/2 ||f(x_p + delta) - x_q||^2 and the two approximations
    that hold where f acts like the identity: x_q - f(x_p + delta) and x_q - x_p.
    """
    delta_t = Tensor(np.array(delta, dtype=np.float64), requires_grad=True, name="delta")
    reconstruction = forward(model, ops.add(Tensor(x_p), delta_t), "ste")
    phi = ops.scale(ops.squared_norm(ops.subtract(reconstruction, x_q)), -0.5)
    backward(phi, [delta_t])
    return GradientAlignment(cosine(delta_t.grad, x_q - reconstruction.data), cosine(delta_t.grad, x_q - x_p))


def smooth_lcs(values: typing.Sequence[float], window: int = 5) -> np.ndarray:
    """
    Trailing mean over the last `window` defined values; NaN where the window holds none.
    """
    values = np.asarray(values, dtype=np.float64)
    out = np.full(values.shape, UNDEFINED)
    for idx in range(values.size):
        chunk = values[max(0, idx - window + 1):idx + 1]
        chunk = chunk[~np.isnan(chunk)]
        if chunk.size:
            out[idx] = chunk.mean()
    return out


def segment_stages(trajectory: typing.Sequence[TrajectoryRecord], window: int = 5, oscillating_fraction: float = 0.6,
                   refining_fraction: float = 0.5) -> StageSegmentation:
    """
    Lazying ends at the smoothed-LCS acme (ties within 1e-12 resolve to the earliest step), oscillating ends at the
    first later step whose smoothed LCS drops below `oscillating_fraction` * acme (T if never), and refining is
    detected when that happened and the final smoothed LCS is below `refining_fraction` * acme.
    """
    if not trajectory:
        raise ValueError("segment_stages needs a non-empty trajectory")
    smoothed = smooth_lcs([record.lcs for record in trajectory], window)
    defined = np.flatnonzero(~np.isnan(smoothed))
    if not defined.size:
        raise ValueError("segment_stages: every LCS value of the trajectory is undefined")
    end = trajectory[-1].t + 1
    peak = np.nanmax(smoothed)
    acme_idx = int(defined[np.argmax(smoothed[defined] >= peak - 1e-12 * max(1., abs(peak)))])
    acme = float(smoothed[acme_idx])

    later = smoothed[acme_idx + 1:]
    dropped = np.flatnonzero(~np.isnan(later) & (later < oscillating_fraction * acme))
    oscillating_end = trajectory[acme_idx + 1 + int(dropped[0])].t if dropped.size else end
    final = float(smoothed[defined[-1]])
    refining = bool(oscillating_end < end and final < refining_fraction * acme)
    return StageSegmentation(trajectory[acme_idx].t, oscillating_end, refining, (trajectory[acme_idx].t, acme), final)


def success_rate(target_psnrs: typing.Dict[str, typing.Sequence[float]], threshold: float
                 ) -> typing.Dict[str, float]:
    """
    Fraction of seeds per pair whose attack reached the success threshold. Pairs near 1 start in an active region,
    pairs near 0 in a dead one.
    """
    return {pair_id: float(np.mean(np.asarray(values) >= threshold)) if len(values) else 0.
            for pair_id, values in target_psnrs.items()}


def format_real(value: float) -> str:
    return f"{value:.17g}"


def write_trajectory_csv(trajectory: typing.Iterable[TrajectoryRecord], path: str) -> None:
    with open(path, 'w', newline='') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(TRAJECTORY_COLUMNS)
        for record in trajectory:
            writer.writerow([str(record.t)] + [format_real(v) for v in record[1:]])
