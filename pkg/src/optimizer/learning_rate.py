"""
Step-size schedules shared by codec training and the attack loop.
Every schedule is a function mutating a LearningRateCtx; `get_learning_rate` applies the configured one.
"""
import typing

from ..utils_core import warn


class LearningRateCtx:
    def __init__(self, learning_rate: float, step: int, config: typing.Any = None):
        self.learning_rate = learning_rate
        self.step = step
        self.config = config


def fixed(ctx: LearningRateCtx):
    pass


def periodic_geometric(ctx: LearningRateCtx):
    decay = ctx.config.effective_decay_factor ** (ctx.step // ctx.config.schedule_period)
    ctx.learning_rate = ctx.learning_rate * decay


MODULES = {"fixed": fixed,
           "periodic_geometric": periodic_geometric}


def get_learning_rate(base: float, step: int, schedule: str, config: typing.Any = None) -> float:
    if schedule not in MODULES:
        raise ValueError(f"Unknown schedule {schedule!r}, use one of {list(MODULES)}")
    ctx = LearningRateCtx(base, step, config)
    MODULES[schedule](ctx)
    return ctx.learning_rate


class ReduceOnPlateau:
    """
    Divides the learning rate by `reduction` once the epoch loss failed to improve on its best value for `timespan`
    consecutive epochs. timespan = 0 disables it.
    """

    def __init__(self, learning_rate: float, timespan: int = 0, reduction: float = 2.):
        if timespan < 0 or reduction < 1:
            raise ValueError(f"plateau timespan has to be >= 0 and reduction >= 1, got {timespan}, {reduction}")
        self.learning_rate = learning_rate
        self.timespan = timespan
        self.reduction = reduction
        self.best = float('inf')
        self.stale = 0

    def __call__(self, loss: float) -> float:
        if loss < self.best:
            self.best = loss
            self.stale = 0
            return self.learning_rate
        self.stale += 1
        if self.timespan and self.stale >= self.timespan:
            self.learning_rate /= self.reduction
            self.stale = 0
            warn(f"Loss plateaued at {self.best:.6g}, learning rate reduced to {self.learning_rate:.6g}")
        return self.learning_rate
