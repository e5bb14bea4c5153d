"""Training and probe configuration."""

from dataclasses import asdict, dataclass, field, fields

from .augment import AugmentConfig

HEAD_INPUT_CLASS = "class"
HEAD_INPUT_CLASS_PLUS_MEAN_PATCH = "class_plus_mean_patch"


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 128
    learning_rate: float = 5e-5
    epochs: int = 20
    soft_epochs: int = 15
    num_prototypes: int = 8192
    num_local_crops: int = 8
    teacher_momentum: float = 0.996
    teacher_temp: float = 0.04
    student_temp: float = 0.1
    center_momentum: float = 0.9
    head_output_dim: int = 256
    seed: int = 0
    # class-token embedding always feeds the head; optionally summed with the
    # mean patch embedding so spatial prototypes receive a direct signal
    head_input: str = HEAD_INPUT_CLASS_PLUS_MEAN_PATCH
    # the backbone stays fixed during prototype learning by default; desk-scale
    # runs on synthetic data may instead train a small ViT jointly with the bank
    freeze_backbone: bool = True
    augment: AugmentConfig = field(default_factory=AugmentConfig)

    def __post_init__(self):
        if self.soft_epochs > self.epochs:
            raise ValueError(f"soft_epochs {self.soft_epochs} exceeds epochs {self.epochs}")
        if self.num_prototypes < 2:
            raise ValueError("need at least 2 prototypes")
        if not 0.0 < self.teacher_momentum < 1.0:
            raise ValueError("teacher_momentum must lie strictly inside (0, 1)")
        if self.head_input not in (HEAD_INPUT_CLASS, HEAD_INPUT_CLASS_PLUS_MEAN_PATCH):
            raise ValueError(f"unknown head_input {self.head_input!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, obj: dict) -> "TrainConfig":
        obj = dict(obj)
        aug = obj.pop("augment", {})
        aug = {k: tuple(v) if isinstance(v, list) else v for k, v in aug.items()}
        known = {f.name for f in fields(cls)} - {"augment"}
        unknown = set(obj) - known
        if unknown:
            raise ValueError(f"unknown train config keys: {sorted(unknown)}")
        return cls(augment=AugmentConfig(**aug), **obj)


@dataclass(frozen=True)
class ProbeConfig:
    epochs: int = 20
    learning_rate: float = 0.001
    batch_size: int = 256
    feature_source: str = "class_prototype_embedding"
    val_fraction: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("probe epochs must be >= 1")
        if self.feature_source != "class_prototype_embedding":
            raise ValueError(f"unknown feature_source {self.feature_source!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, obj: dict) -> "ProbeConfig":
        return cls(**obj)
