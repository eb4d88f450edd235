"""
Targeted l-infinity attacks on the codec: the global-semantic-manipulation objective, PGD with the periodic
geometric step-size schedule, and the fixed-step baseline (schedule="fixed").
"""
import math
import typing

import numpy as np

from . import ops
from .dataclass import AttackConfig
from .diagnostics import TrajectoryRecord, lcs
from .graph import NonFiniteError, Tensor, backward, no_grad
from .model import CodecModel, forward, validate_image
from .optimizer.learning_rate import get_learning_rate
from .utils_core import warn

Transform = typing.Callable[[Tensor], Tensor]


class GsmPair:
    def __init__(self, source: np.ndarray, target: np.ndarray, pair_id: str = "pair0",
                 metadata: typing.Optional[typing.Dict[str, typing.Any]] = None):
        self.source = validate_image(source, f"{pair_id} source")
        self.target = validate_image(target, f"{pair_id} target")
        if self.source.shape != self.target.shape:
            raise ValueError(f"{pair_id}: source dims {list(self.source.shape)} and target dims "
                             f"{list(self.target.shape)} differ")
        self.pair_id = pair_id
        self.metadata = {} if metadata is None else metadata


class AttackResult:
    def __init__(self, adversarial: np.ndarray, final_delta: np.ndarray, trajectory: typing.List[TrajectoryRecord],
                 final_objective: float, best_delta: np.ndarray, best_objective: float,
                 error: typing.Optional[str] = None):
        self.adversarial = adversarial
        self.final_delta = final_delta
        self.trajectory = trajectory
        self.final_objective = final_objective
        self.best_delta = best_delta
        self.best_objective = best_objective
        self.error = error


def _objective_graph(model: CodecModel, x_p: np.ndarray, delta: Tensor, x_q: np.ndarray,
                     transform: typing.Optional[Transform] = None) -> typing.Tuple[Tensor, Tensor, Tensor]:
    if delta.dims != list(np.shape(x_p)) or np.shape(x_p) != np.shape(x_q):
        raise ValueError(f"gsm_objective: dims {delta.dims}, {list(np.shape(x_p))}, {list(np.shape(x_q))} differ")
    attacked = ops.add(Tensor(x_p), delta)
    codec_input = attacked if transform is None else transform(attacked)
    reconstruction = forward(model, codec_input, "ste")
    phi = ops.scale(ops.squared_norm(ops.subtract(reconstruction, x_q)), -0.5)
    return phi, reconstruction, codec_input


def gsm_objective(model: CodecModel, x_p: np.ndarray, delta: Tensor, x_q: np.ndarray,
                  transform: typing.Optional[Transform] = None) -> float:
    """
    phi = -1/2 ||f(x_p + delta) - x_q||^2 through the straight-through quantizer. Adds d(phi)/d(delta) to
    delta.grad. `transform` is applied to x_p + delta before the codec.
    """
    phi, _, _ = _objective_graph(model, x_p, delta, x_q, transform)
    backward(phi, [delta])
    return phi.item()


def gsm_pairs_objective(model: CodecModel, pairs: typing.Sequence[GsmPair], deltas: typing.Sequence[Tensor],
                        transform: typing.Optional[Transform] = None) -> float:
    """
    Mean single-pair objective over a set of victim-target pairs; every delta receives its gradient.
    """
    if len(pairs) != len(deltas) or not pairs:
        raise ValueError(f"gsm_pairs_objective needs one delta per pair, got {len(pairs)} pairs, {len(deltas)} deltas")
    total = None
    for pair, delta in zip(pairs, deltas):
        phi, _, _ = _objective_graph(model, pair.source, delta, pair.target, transform)
        total = phi if total is None else ops.add(total, phi)
    mean = ops.scale(total, 1 / len(pairs))
    backward(mean, list(deltas))
    return mean.item()


def schedule_step_size(cfg: AttackConfig, t: int) -> float:
    if not 0 <= t < cfg.steps:
        raise ValueError(f"step {t} outside [0, {cfg.steps})")
    return get_learning_rate(cfg.alpha0, t, cfg.schedule, cfg)


def lazy_perturbation(x_p: np.ndarray, x_q: np.ndarray, epsilon: float) -> np.ndarray:
    if np.shape(x_p) != np.shape(x_q):
        raise ValueError(f"lazy_perturbation: dims {list(np.shape(x_p))} and {list(np.shape(x_q))} differ")
    return np.clip(np.asarray(x_q) - np.asarray(x_p), -epsilon, epsilon)


def pgd_step(delta: np.ndarray, grad: np.ndarray, alpha_t: float, epsilon: float) -> np.ndarray:
    if np.shape(delta) != np.shape(grad):
        raise ValueError(f"pgd_step: dims {list(np.shape(delta))} and {list(np.shape(grad))} differ")
    if alpha_t <= 0:
        raise ValueError(f"pgd_step needs alpha_t > 0, got {alpha_t}")
    return np.clip(delta + alpha_t * np.sign(grad), -epsilon, epsilon)


def init_delta(cfg: AttackConfig, shape: typing.Sequence[int], pair_index: int = 0) -> np.ndarray:
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, pair_index]))
    return rng.uniform(-cfg.epsilon, cfg.epsilon, size=tuple(shape))


def run_attack(model: CodecModel, pair: GsmPair, cfg: AttackConfig, pair_index: int = 0,
               transform: typing.Optional[Transform] = None) -> AttackResult:
    """
    delta(0) ~ U(-eps, eps) from a stream seeded by (cfg.seed, pair_index), then T steps of
    delta <- clip(delta + alpha_t * sgn(grad phi), -eps, eps). Returns clip(x_p + delta(T), 0, 1) together with the
    per-step trajectory and the best delta seen. A non-finite objective or gradient stops the loop; the best delta so
    far is returned and `error` is set.
    """
    x_p, x_q = pair.source, pair.target
    epsilon = cfg.epsilon
    if cfg.schedule == "periodic_geometric" and cfg.schedule_period > cfg.steps:
        warn(f"decay period {cfg.schedule_period} exceeds {cfg.steps} steps, the schedule never decays")

    delta = init_delta(cfg, x_p.shape, pair_index)
    trajectory: typing.List[TrajectoryRecord] = []
    best_delta = delta.copy()
    best_objective = -math.inf
    final_objective = -math.inf
    error = None

    for t in range(cfg.steps + 1):
        delta_t = Tensor(delta, requires_grad=t < cfg.steps, name="delta")
        try:
            if t == cfg.steps:
                with no_grad():
                    phi, _, _ = _objective_graph(model, x_p, delta_t, x_q, transform)
            else:
                phi, reconstruction, codec_input = _objective_graph(model, x_p, delta_t, x_q, transform)
                backward(phi, [delta_t])
        except NonFiniteError as exc:
            error = f"non-finite objective at step {t}: {exc}"
            break
        objective = phi.item()
        if objective > best_objective:
            best_objective = objective
            best_delta = delta.copy()
        if t == cfg.steps:
            final_objective = objective
            break
        alpha_t = schedule_step_size(cfg, t)
        residual = float(np.linalg.norm(reconstruction.data - codec_input.data))
        trajectory.append(TrajectoryRecord(t, alpha_t, objective, lcs(delta, x_p, x_q, epsilon), residual,
                                           float(np.max(np.abs(delta)))))
        delta = pgd_step(delta, delta_t.grad, alpha_t, epsilon)

    if error is not None:
        warn(f"{pair.pair_id}: {error}. Returning the best perturbation so far.")
        delta = best_delta
        final_objective = best_objective
    return AttackResult(np.clip(x_p + delta, 0, 1), delta, trajectory, final_objective, best_delta, best_objective,
                        error)
