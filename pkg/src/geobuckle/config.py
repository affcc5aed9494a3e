"""Architecture and training hyperparameters, with named presets."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields, replace

from .errors import InputError


@dataclass(frozen=True)
class ModelConfig:
    in_features: int = 6  # coordinates + normals
    out_features: int = 3  # u_x, u_y, u_z
    width: int = 64  # D
    heads: int = 4  # H
    head_width: int = 16  # D_h
    slices: int = 8  # S
    blocks: int = 2  # L
    mlp_hidden: int = 64
    basis: int = 128  # p
    branch_width: int = 128
    branch_depth: int = 3
    trunk_width: int = 128
    trunk_residual: int = 2
    ln_eps: float = 1e-5

    def __post_init__(self):
        if self.width != self.heads * self.head_width:
            raise InputError(
                f"width ({self.width}) must equal heads*head_width ({self.heads}*{self.head_width})"
            )
        for name in ("in_features", "out_features", "heads", "head_width", "slices", "blocks",
                     "mlp_hidden", "basis", "branch_width", "branch_depth", "trunk_width"):
            if getattr(self, name) < 1:
                raise InputError(f"{name} must be at least 1")
        if self.trunk_residual < 0:
            raise InputError("trunk_residual must be non-negative")

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


PAPER_MODEL = ModelConfig(width=128, heads=8, head_width=16, slices=32, blocks=4, mlp_hidden=128)
DESK_MODEL = ModelConfig()
TOY_MODEL = ModelConfig(
    width=16, heads=2, head_width=8, slices=4, blocks=2, mlp_hidden=16,
    basis=16, branch_width=16, trunk_width=16,
)

MODEL_PRESETS = {"paper": PAPER_MODEL, "desk": DESK_MODEL, "toy": TOY_MODEL}


@dataclass(frozen=True)
class TrainConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    epochs: int = 2000
    batch_size: int = 1
    max_lr: float = 1e-3
    warmup_fraction: float = 0.3
    initial_divisor: float = 25.0
    final_divisor: float = 1e4
    split_ratio: float = 0.9
    split_seed: int = 0
    init_seed: int = 0
    shuffle_seed: int = 0
    eval_interval: int = 50
    precision: str = "f32"

    def __post_init__(self):
        if self.batch_size != 1:
            raise InputError("only batch_size=1 (one geometry per step) is supported")
        if not 0.0 < self.split_ratio < 1.0:
            raise InputError("split_ratio must lie in (0, 1)")
        if self.epochs < 0:
            raise InputError("epochs must be non-negative")
        if self.eval_interval < 1:
            raise InputError("eval_interval must be at least 1")
        if self.precision not in ("f32", "f64"):
            raise InputError("precision must be 'f32' or 'f64'")

    @property
    def dtype(self):
        import numpy as np

        return np.float32 if self.precision == "f32" else np.float64

    def with_overrides(self, **kw) -> "TrainConfig":
        return replace(self, **{k: v for k, v in kw.items() if v is not None})

    def to_json(self) -> dict:
        d = asdict(self)
        d["model"] = self.model.to_json()
        return d

    @classmethod
    def from_json(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        model = ModelConfig.from_json(d.pop("model", {}))
        known = {f.name for f in fields(cls)}
        return cls(model=model, **{k: v for k, v in d.items() if k in known})


TRAIN_PRESETS = {
    "paper": TrainConfig(model=PAPER_MODEL, epochs=10000),
    "desk": TrainConfig(model=DESK_MODEL, epochs=2000),
}


def train_preset(name: str) -> TrainConfig:
    try:
        return TRAIN_PRESETS[name]
    except KeyError:
        raise InputError(f"unknown preset {name!r}; choose from {sorted(TRAIN_PRESETS)}") from None
