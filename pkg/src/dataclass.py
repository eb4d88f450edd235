"""
Contains the config classes of an experiment and the config-file loader.
"""
import hashlib
import json
import os
import typing

import jsonpickle

from .model.backend import INITIALIZERS


class ConfigError(ValueError):
    pass


class ConfigSection:
    """
    Attribute defaults are set by subclasses before calling `_update`. Unknown keys are kept but reported.
    """

    def _update(self, config: typing.Dict[str, typing.Any]):
        if isinstance(config, ConfigSection):
            config = config.dict()
        for k, v in config.items():
            if k not in self.__dict__:
                print(f"WARNING: Unknown {type(self).__name__} {k}={v!r}")
            self.__dict__[k] = v
        self._validate()

    def _validate(self):
        pass

    def _require(self, condition: bool, message: str):
        if not condition:
            raise ConfigError(f"{type(self).__name__}: {message}")

    def dict(self) -> typing.Dict[str, typing.Any]:
        return {k: v for k, v in self.__dict__.items() if not k.startswith('_')}

    def replace(self, **overrides):
        return type(self)(**{**self.dict(), **overrides})

    def __repr__(self) -> str:
        return f"{type(self).__name__}({self.dict()})"


class CodecConfig(ConfigSection):
    def __init__(self, **config):
        self.latent_channels = 32
        self.hidden_channels = 64
        self.kernel_size = 4
        self.lam = 650.
        self.initializer = "orthogonal"
        self.learning_rate = 3e-4
        self.epochs = 100
        self.seed = 0
        self.reduce_lr_on_plateau_timespan = 5
        self.reduce_lr_on_plateau_reduction = 2.
        self.print_every = 10
        self._update(config)

    def _validate(self):
        self._require(self.latent_channels >= 1 and self.hidden_channels >= 1, "channel counts have to be >= 1")
        self._require(self.kernel_size >= 2 and self.kernel_size % 2 == 0,
                      f"kernel_size has to be even and >= 2 for stride-2 layers, got {self.kernel_size}")
        self._require(self.lam >= 0, f"lam has to be >= 0, got {self.lam}")
        self._require(self.learning_rate > 0 and self.epochs >= 0, "learning_rate > 0 and epochs >= 0 required")
        self._require(self.initializer in INITIALIZERS,
                      f"unknown initializer {self.initializer!r}, use one of {sorted(INITIALIZERS)}")


class DataConfig(ConfigSection):
    def __init__(self, **config):
        self.source_dir = ""
        self.crop = 64
        self.pairs = 8
        self.seed = 0
        self.train_crops = 256
        self.heldout_crops = 32
        self._update(config)

    def _validate(self):
        self._require(self.crop >= 16 and self.crop % 8 == 0,
                      f"crop has to be a multiple of 8 and >= 16, got {self.crop}")
        self._require(self.pairs >= 0, "pairs has to be >= 0")
        self._require(not self.source_dir or os.path.isdir(self.source_dir),
                      f"source_dir {self.source_dir!r} does not exist")


class AttackConfig(ConfigSection):
    """
    Everything the PGD loop consumes. decay_factor multiplies the step size every `period` steps; with
    reciprocal_decay the step size is divided by it instead (the ablation grid is given as divisors).
    """

    def __init__(self, **config):
        self.epsilon = 0.08
        self.steps = 500
        self.alpha0 = 0.01
        self.decay_factor = 0.5
        self.period: typing.Optional[int] = None
        self.seed = 0
        self.schedule = "periodic_geometric"
        self.reciprocal_decay = False
        self.pairs: typing.List[typing.List[str]] = []
        self.seeds = [0, 1, 2]
        self.success_threshold_psnr = 22.
        self.baseline_alphas = [0.01, 0.005, 0.001]
        self.sweep_epsilons = [0.06, 0.08, 0.10]
        self.sweep_steps = [500, 2000, 5000]
        self.ablation_grid = [0.33, 0.4, 0.5, 0.67, 1.0]
        self._update(config)

    def _validate(self):
        self._require(0 <= self.epsilon <= 1, f"epsilon has to be in [0, 1], got {self.epsilon}")
        self._require(self.steps >= 0, f"steps has to be >= 0, got {self.steps}")
        self._require(self.alpha0 > 0, f"alpha0 has to be > 0, got {self.alpha0}")
        self._require(self.schedule in ("fixed", "periodic_geometric"), f"unknown schedule {self.schedule!r}")
        self._require(self.period is None or self.period >= 1, f"period has to be >= 1, got {self.period}")
        if self.reciprocal_decay:
            self._require(self.decay_factor >= 1, f"reciprocal decay_factor has to be >= 1, got {self.decay_factor}")
        else:
            self._require(0 < self.decay_factor <= 1, f"decay_factor has to be in (0, 1], got {self.decay_factor}")
        for pair in self.pairs:
            self._require(len(pair) == 2, f"pairs entries have to be [source, target], got {pair!r}")
            for path in pair:
                self._require(os.path.isfile(path), f"pair image {path!r} does not exist")

    @property
    def schedule_period(self) -> int:
        return max(1, self.steps // 5) if self.period is None else self.period

    @property
    def effective_decay_factor(self) -> float:
        return 1 / self.decay_factor if self.reciprocal_decay else self.decay_factor


class DiagnosticsConfig(ConfigSection):
    def __init__(self, **config):
        self.smoothing_window = 5
        self.oscillating_fraction = 0.6
        self.refining_fraction = 0.5
        self.eta0: typing.Optional[float] = None
        self.eta0_multiple = 3.
        self.identity_ratio_threshold = 0.15
        self._update(config)

    def _validate(self):
        self._require(self.smoothing_window >= 1, "smoothing_window has to be >= 1")
        self._require(0 < self.refining_fraction and 0 < self.oscillating_fraction, "acme fractions have to be > 0")


class JpegConfig(ConfigSection):
    def __init__(self, **config):
        self.enabled = False
        self.quality = 90
        self.rounding = "soft"
        self.soft_sharpness = 1.
        self._update(config)

    def _validate(self):
        self._require(isinstance(self.quality, int) and 1 <= self.quality <= 100,
                      f"quality has to be an integer in [1, 100], got {self.quality!r}")
        self._require(self.rounding in ("hard", "soft"), f"rounding has to be hard or soft, got {self.rounding!r}")
        self._require(0 < self.soft_sharpness < float('inf'), f"soft_sharpness has to be finite and > 0")


class OutputConfig(ConfigSection):
    def __init__(self, **config):
        self.directory = "runs/default"
        self.emit_plots = True
        self.save_images = True
        self._update(config)


SECTIONS = {"codec": CodecConfig,
            "data": DataConfig,
            "attack": AttackConfig,
            "diagnostics": DiagnosticsConfig,
            "defense": JpegConfig,
            "output": OutputConfig}


class ExperimentParameter(typing.Dict[str, typing.Any]):
    def __init__(self, config: typing.Optional[typing.Dict[str, typing.Any]] = None):
        super().__init__()
        config = {} if config is None else config
        if isinstance(config, ExperimentParameter):
            config = config.dict()
        for key in config:
            if key not in SECTIONS:
                print(f"WARNING: Unknown ExperimentParameter section {key}={config[key]!r}")
        for key, cls in SECTIONS.items():
            section = config.get(key, {})
            if not isinstance(section, (dict, ConfigSection)):
                raise ConfigError(f"section {key!r} has to be a mapping, got {section!r}")
            self.__dict__[key] = cls(**(section.dict() if isinstance(section, ConfigSection) else section))

    codec: CodecConfig
    data: DataConfig
    attack: AttackConfig
    diagnostics: DiagnosticsConfig
    defense: JpegConfig
    output: OutputConfig

    def __getitem__(self, key: str) -> typing.Any:
        return self.__dict__[key]

    def __setitem__(self, key: str, value: typing.Any) -> None:
        self.__dict__[key] = value

    def get(self, key: str, default: typing.Any = None) -> typing.Any:
        return self.__dict__.get(key, default)

    def __str__(self) -> str:
        return str(self.dict())

    def __repr__(self) -> str:
        return str(self)

    def dict(self) -> typing.Dict[str, typing.Any]:
        return {key: self.__dict__[key].dict() for key in SECTIONS}

    def config_hash(self) -> str:
        canonical = json.dumps(self.dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def parse_flat_config(text: str, path: str = "<string>") -> typing.Dict[str, typing.Dict[str, typing.Any]]:
    """
    `section.key = value` per line, `#` starts a comment. Values are JSON literals; anything that does not parse as
    JSON is taken as a bare string.
    """
    config: typing.Dict[str, typing.Dict[str, typing.Any]] = {}
    for number, line in enumerate(text.splitlines(), 1):
        line = line.split('#', 1)[0].strip()
        if not line:
            continue
        if '=' not in line:
            raise ConfigError(f"{path}:{number}: expected 'section.key = value', got {line!r}")
        key, value = (part.strip() for part in line.split('=', 1))
        if key.count('.') != 1 or not all(key.split('.')):
            raise ConfigError(f"{path}:{number}: key {key!r} has to be 'section.key'")
        section, name = key.split('.')
        try:
            parsed = json.loads(value)
        except json.JSONDecodeError:
            parsed = value
        config.setdefault(section, {})[name] = parsed
    return config


def load_config(path: str) -> ExperimentParameter:
    if not os.path.isfile(path):
        raise ConfigError(f"config file {path!r} does not exist")
    with open(path) as f:
        text = f.read()
    if path.endswith(".json"):
        try:
            config = jsonpickle.loads(text)
        except ValueError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        if not isinstance(config, dict):
            raise ConfigError(f"{path}: top level has to be an object")
    else:
        config = parse_flat_config(text, path)
    try:
        return ExperimentParameter(config)
    except TypeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
