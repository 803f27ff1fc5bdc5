"""Model and training configuration with full-scale (``paper``) and desk-scale presets.

Every field carries a ``help`` string in its metadata; the CLI prints these
with the full-scale default.
"""
import dataclasses
from dataclasses import dataclass, field

import yaml


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending key path."""


def _f(default, help, **kw):
    if isinstance(default, (list, dict, tuple)):
        val = default
        return field(default_factory=lambda: type(val)(val), metadata={"help": help}, **kw)
    return field(default=default, metadata={"help": help}, **kw)


@dataclass
class BackboneConfig:
    window_size: int = _f(23, "spot-pathway temporal window (odd; grid 15/19/23)")
    num_frames: int = _f(29, "frames per clip seen by the fast pathway")
    in_channels: int = _f(3, "input channels (3 = RGB, 1 = grayscale)")
    input_size: int = _f(112, "spatial side of the network input")
    stage_channels_spot: list = _f([64, 256, 512, 1024, 2048],
                                   "spot widths: stem then each residual stage")
    stage_channels_fast: list = _f([8, 32, 64, 128, 256],
                                   "fast widths: stem then each residual stage")
    spatial_strides: list = _f([2, 1, 2, 2, 2], "spatial stride of the stem and each stage")
    blocks_per_stage: list = _f([3, 4, 6, 3], "residual blocks in each stage")
    stem_pool: bool = _f(True, "3x3 spatial max pool (stride 2) after the stem")
    stem_kernel: list = _f([5, 7, 7], "stem conv kernel (t, h, w)")
    temporal_kernel: int = _f(3, "temporal kernel of residual convs (stride 1)")
    lateral_beta: int = _f(2, "fusion channel multiplier: C_fast -> beta*C_fast")
    fusion_kernel: int = _f(5, "temporal kernel of the fusion conv")
    scale: str = _f("paper", "preset tag: paper or desk")

    @property
    def c_spot(self):
        return self.stage_channels_spot[-1]

    @property
    def c_fast(self):
        return self.stage_channels_fast[-1]

    def validate(self):
        if self.window_size % 2 == 0 or not 1 <= self.window_size <= self.num_frames:
            raise ConfigError("backbone.window_size: must be odd and <= num_frames")
        n = len(self.stage_channels_spot)
        if len(self.stage_channels_fast) != n or len(self.spatial_strides) != n:
            raise ConfigError("backbone.stage_channels_*: stem+stage lists must have equal length")
        if len(self.blocks_per_stage) != n - 1:
            raise ConfigError("backbone.blocks_per_stage: needs one entry per stage")
        if self.scale == "paper":
            if (self.c_spot, self.c_fast) != (2048, 256) or self.window_size not in (15, 19, 23):
                raise ConfigError("backbone: full-scale preset requires 2048/256 widths and window in {15,19,23}")
        elif self.scale == "desk":
            if self.c_spot % 8 or self.c_fast % 8 or self.c_spot < 4 * self.c_fast:
                raise ConfigError("backbone: desk widths must be multiples of 8 with C_spot >= 4*C_fast")
        else:
            raise ConfigError(f"backbone.scale: unknown preset {self.scale!r}")


@dataclass
class MemoryConfig:
    enabled: bool = _f(True, "product-key memory in the layer before the last")
    heads: int = _f(4, "memory heads (own query net and sub-keys, shared values)")
    key_dim: int = _f(128, "query/key width, split in two halves")
    k: int = _f(32, "nearest keys read per head")
    n_keys_spot: int = _f(168, "sub-keys per half in the spot memory (n^2 values)")
    n_keys_fast: int = _f(50, "sub-keys per half in the fast memory (n^2 values)")
    value_dropout: float = _f(0.1, "dropout on the memory readout")
    query_batchnorm: bool = _f(True, "batchnorm on the query projection")

    def validate(self):
        if self.key_dim % 2:
            raise ConfigError("memory.key_dim: must be even")
        for name in ("n_keys_spot", "n_keys_fast"):
            n = getattr(self, name)
            if not 1 <= self.k <= n * n:
                raise ConfigError(f"memory.k: must lie in [1, {name}^2]")


@dataclass
class TransformerConfig:
    enabled: bool = _f(True, "lateral transformers between backbone and back-end")
    layers: int = _f(6, "encoder layers per pathway")
    attn_heads: int = _f(8, "attention heads")
    model_dim: int = _f(512, "encoder width (backbone features projected to it)")
    ff_dim: int = _f(2048, "feed-forward width")
    memory_layer: int = _f(5, "1-based layer carrying the memory (layers - 1)")
    pe_dropout: float = _f(0.1, "dropout after positional encoding")
    dropout: float = _f(0.1, "attention/feed-forward residual dropout")

    def validate(self):
        if self.memory_layer != self.layers - 1:
            raise ConfigError("transformer.memory_layer: must equal layers - 1")
        if self.model_dim % self.attn_heads:
            raise ConfigError("transformer.model_dim: must be divisible by attn_heads")


@dataclass
class PreprocessConfig:
    crop_box: list = _f([112, 80, 96, 96], "fixed mouth box (top, left, height, width)")
    train_upsample: list = _f([122, 146], "inclusive range of the random upsample side")
    crop_size: int = _f(112, "side of the random/center crop")
    eval_upsample: int = _f(122, "upsample side at evaluation")
    flip_prob: float = _f(0.5, "horizontal flip probability")
    grayscale: bool = _f(False, "convert frames to one luminance channel")
    mean: float = _f(0.45, "normalization mean")
    std: float = _f(0.225, "normalization std")


@dataclass
class ModelConfig:
    num_classes: int = _f(500, "word classes")
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    transformer: TransformerConfig = field(default_factory=TransformerConfig)
    memory: MemoryConfig = field(default_factory=MemoryConfig)
    tc_kernels: list = _f([3, 5], "temporal-conv kernels (spot, fast)")

    def validate(self):
        self.backbone.validate()
        self.transformer.validate()
        self.memory.validate()
        if self.num_classes < 2:
            raise ConfigError("model.num_classes: must be >= 2")


@dataclass
class PhasePlan:
    phase_id: int = _f(1, "training phase (1, 2 or 3)")
    lr0: float = _f(2.5e-4, "initial learning rate")
    weight_decay: float = _f(1e-4, "Adam weight decay")
    batch_size: int = _f(84, "clips per step")
    epochs: int = _f(10, "epochs in this phase")
    warmup_steps: int = _f(2000, "linear warmup steps")
    frozen: list = _f([], "parameter groups held fixed (e.g. backbone)")
    schedulers: list = _f(["warmup", "cosine"], "lr factors applied in order")
    t0: float = _f(5.0, "cosine restart period in epochs")
    t_mul: float = _f(1.0, "cosine period multiplier")
    eta_min: float = _f(0.0, "cosine floor")
    plateau_factor: float = _f(2.0, "lr divisor when validation loss stalls")
    plateau_patience: int = _f(1, "non-improving evaluations before a reduction")
    label_smoothing: float = _f(0.1, "label-smoothing epsilon")
    use_transformer: bool = _f(False, "route features through the lateral transformers")


@dataclass
class ExperimentConfig:
    preset: str = _f("paper", "paper or desk")
    seed: int = _f(0, "global seed")
    data_root: str = _f("", "dataset root in word/split layout")
    out_dir: str = _f("runs", "checkpoints and metrics")
    model: ModelConfig = field(default_factory=ModelConfig)
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    phases: list = field(default_factory=list, metadata={"help": "three phase plans"})


def paper_phases():
    return [
        PhasePlan(1, 2.5e-4, 1e-4, 84, 10, 2000, [], ["warmup", "cosine"]),
        PhasePlan(2, 2.25e-4, 3e-4, 84, 5, 1000, ["backbone"], ["warmup", "cosine"],
                  use_transformer=True),
        PhasePlan(3, 1.566e-4, 1e-4, 64, 30, 1000, [], ["warmup", "cosine", "plateau"],
                  use_transformer=True),
    ]


def paper_config(window_size=23, num_classes=500):
    cfg = ExperimentConfig(preset="paper", phases=paper_phases())
    cfg.model.num_classes = num_classes
    cfg.model.backbone.window_size = window_size
    return cfg


def desk_phases():
    plans = paper_phases()
    for plan, epochs, warmup in zip(plans, (3, 2, 5), (50, 25, 25)):
        plan.batch_size = 8
        plan.epochs = epochs
        plan.warmup_steps = warmup
    return plans


def desk_backbone(window_size=7):
    return BackboneConfig(
        window_size=window_size,
        input_size=32,
        stage_channels_spot=[16, 32, 64],
        stage_channels_fast=[8, 16, 16],
        spatial_strides=[2, 2, 2],
        blocks_per_stage=[1, 1],
        stem_pool=False,
        stem_kernel=[3, 5, 5],
        scale="desk",
    )


def desk_config(window_size=7, num_classes=10):
    """Small enough to train on one CPU core; same topology and control flow."""
    model = ModelConfig(
        num_classes=num_classes,
        backbone=desk_backbone(window_size),
        transformer=TransformerConfig(model_dim=64, ff_dim=128),
        memory=MemoryConfig(heads=2, key_dim=16, k=4, n_keys_spot=8, n_keys_fast=8),
    )
    pre = PreprocessConfig(crop_box=[8, 8, 32, 32], train_upsample=[35, 42],
                           crop_size=32, eval_upsample=35)
    return ExperimentConfig(preset="desk", model=model, preprocess=pre, phases=desk_phases())


PRESETS = {"paper": paper_config, "desk": desk_config}


def _merge(obj, overrides, path):
    if not isinstance(overrides, dict):
        raise ConfigError(f"{path or '<root>'}: expected a mapping")
    names = {f.name: f for f in dataclasses.fields(obj)}
    for key, value in overrides.items():
        where = f"{path}.{key}" if path else key
        if key not in names:
            raise ConfigError(f"{where}: unknown key")
        current = getattr(obj, key)
        if dataclasses.is_dataclass(current):
            _merge(current, value, where)
        elif key == "phases":
            if not isinstance(value, list):
                raise ConfigError(f"{where}: expected a list")
            plans = []
            for i, item in enumerate(value):
                base = current[i] if i < len(current) else PhasePlan(phase_id=i + 1)
                _merge(base, item, f"{where}[{i}]")
                plans.append(base)
            setattr(obj, key, plans + current[len(plans):])
        else:
            if isinstance(current, bool) != isinstance(value, bool) or (
                    isinstance(current, (int, float)) and not isinstance(value, (int, float))) or (
                    isinstance(current, (list, str)) and not isinstance(value, type(current))):
                raise ConfigError(f"{where}: expected {type(current).__name__}, got {type(value).__name__}")
            if isinstance(current, float) and isinstance(value, int):
                value = float(value)
            setattr(obj, key, value)


def from_dict(data: dict) -> ExperimentConfig:
    data = dict(data or {})
    preset = data.get("preset", "paper")
    if preset not in PRESETS:
        raise ConfigError(f"preset: unknown preset {preset!r}")
    cfg = PRESETS[preset]()
    _merge(cfg, data, "")
    cfg.model.validate()
    return cfg


def load_config(path) -> ExperimentConfig:
    with open(path) as fh:
        return from_dict(yaml.safe_load(fh))


def to_dict(cfg) -> dict:
    return dataclasses.asdict(cfg)


def model_config_from_dict(data: dict) -> ModelConfig:
    cfg = ModelConfig()
    _merge(cfg, data, "model")
    return cfg


def describe(obj=None, prefix=""):
    """Yield ``(key, full_scale_default, help)`` for every config leaf."""
    obj = obj if obj is not None else paper_config()
    for f in dataclasses.fields(obj):
        value = getattr(obj, f.name)
        key = f"{prefix}{f.name}"
        if dataclasses.is_dataclass(value):
            yield from describe(value, key + ".")
        elif f.name == "phases":
            for i, plan in enumerate(value):
                yield from describe(plan, f"{key}[{i}].")
        else:
            yield key, value, f.metadata.get("help", "")
