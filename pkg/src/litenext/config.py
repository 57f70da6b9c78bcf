"""Flat ``key=value`` run configuration covering model, trainer and loss settings.

Precedence when building a run: command-line flag > config file > default.
Zero for ``image_size``, ``batch_size`` or ``gcf_dim`` means "choose
automatically"; :meth:`RunConfig.resolve` replaces them with concrete values
so that a written ``resolved.cfg`` alone pins the run down.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

from .losses import LossConfig, MwlConfig
from .model import ModelConfig
from .trainer import TrainerConfig

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    data: str = ""
    # model
    base_channels: int = 16
    dw_kernel: int = 7
    local_kernel: int = 3
    gcf_dim: int = 0
    head_channels: int = 128
    context_scale: int = 4
    proj_reduction: int = 4
    image_size: int = 0  # 0: native size of the dataset
    # trainer
    epochs: int = 300
    batch_size: int = 0  # 0: 16 up to 128 px, else 8
    lr: float = 1e-4
    weight_decay: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    momentum_decay: float = 0.004
    ema_alpha: float = 0.99
    patience: int = 30
    lr_factor: float = 0.75
    plateau_threshold: float = 1e-6
    val_fraction: float = 0.2
    seed: int = 0
    serp: bool = True
    augment: bool = True
    # losses
    loss: str = "mwl"
    w_b: float = 0.1
    w_o: float = 0.3
    w_m: float = 0.6
    mwl_k: int = 9
    serp_eps: float = 1e-8
    wbce_beta: float = 2.0
    focal_gamma: float = 2.0
    focal_alpha: float = 0.25

    @classmethod
    def keys(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    @classmethod
    def _types(cls) -> dict[str, type]:
        defaults = asdict(cls())
        return {k: type(v) for k, v in defaults.items()}

    @classmethod
    def parse_value(cls, key: str, text: str):
        types = cls._types()
        if key not in types:
            raise ConfigError(f"unknown config key {key!r}")
        kind = types[key]
        text = text.strip()
        try:
            if kind is bool:
                low = text.lower()
                if low in _TRUE:
                    return True
                if low in _FALSE:
                    return False
                raise ValueError(text)
            return kind(text)
        except ValueError:
            raise ConfigError(f"{key}: cannot parse {text!r} as {kind.__name__}") from None

    @classmethod
    def parse(cls, text: str, source: str = "<config>") -> dict:
        """Parse ``key=value`` lines into a dict of typed overrides."""
        out = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{source}:{lineno}: expected key=value, got {raw.strip()!r}")
            key, _, value = line.partition("=")
            key = key.strip()
            try:
                out[key] = cls.parse_value(key, value)
            except ConfigError as exc:
                raise ConfigError(f"{source}:{lineno}: {exc}") from None
        return out

    @classmethod
    def load(cls, path) -> dict:
        path = Path(path)
        return cls.parse(path.read_text(), str(path))

    def with_overrides(self, overrides: dict) -> "RunConfig":
        unknown = sorted(set(overrides) - set(self.keys()))
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
        return replace(self, **overrides)

    def resolve(self, native_size: int | None) -> "RunConfig":
        """Fill automatic values and validate every sub-config."""
        size = self.image_size or native_size
        if not size:
            raise ConfigError("image_size is 0 and the dataset has no single native size")
        batch = self.batch_size or (16 if size <= 128 else 8)
        gcf = self.gcf_dim or 8 * self.base_channels
        out = replace(self, image_size=size, batch_size=batch, gcf_dim=gcf)
        try:
            out.model_config()
            out.trainer_config()
            out.loss_config()
            out.mwl_config().validate(1e-6)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        return out

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            base_channels=self.base_channels,
            dw_kernel=self.dw_kernel,
            local_kernel=self.local_kernel,
            gcf_dim=self.gcf_dim or None,
            head_channels=self.head_channels,
            context_scale=self.context_scale,
            proj_reduction=self.proj_reduction,
            image_size=self.image_size or 256,
        )

    def trainer_config(self) -> TrainerConfig:
        names = {f.name for f in fields(TrainerConfig)}
        kw = {k: v for k, v in asdict(self).items() if k in names}
        kw["batch_size"] = self.batch_size or 8
        return TrainerConfig(**kw)

    def loss_config(self) -> LossConfig:
        return LossConfig(self.serp_eps, self.wbce_beta, self.focal_gamma, self.focal_alpha, self.loss)

    def mwl_config(self) -> MwlConfig:
        return MwlConfig(self.w_b, self.w_o, self.w_m, self.mwl_k)

    def to_text(self) -> str:
        lines = ["# fully resolved run configuration"]
        for k, v in asdict(self).items():
            if isinstance(v, bool):
                v = "true" if v else "false"
            elif isinstance(v, float):
                v = repr(v)
            lines.append(f"{k}={v}")
        return "\n".join(lines) + "\n"
