"""Run configuration: a YAML document with fixed sections, every field defaulted.

Unknown sections or keys are rejected so typos fail loudly.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .distill import DEFAULT_PROMPT, DistillConfig
from .ensemble import EnsembleConfig
from .student import StudentConfig
from .trajectory import TrajConfig


class ConfigError(ValueError):
    pass


@dataclass
class DataSection:
    n_scenes: int = 2000
    holdout_frac: float = 0.2
    omit_prob: float = 0.3
    n_traj_scenes: int = 1000
    n_expert_scenes: int = 1000


@dataclass
class VocabSection:
    max_size: int = 32


@dataclass
class StudentSection:
    backbone: str = "conv"
    embed_dim: int = 64
    image_size: int = 64
    conv_widths: list[int] = field(default_factory=lambda: [16, 32, 64])
    attn_width: int = 32
    attn_depth: int = 2
    attn_heads: int = 4
    patch: int = 4
    embed_norm: bool = True
    head_init_std: float = 0.1


@dataclass
class DistillSection:
    epochs: int = 10
    batch_size: int = 32
    lr0: float = 1e-4
    expert_epochs: int = 6
    traj_epochs: int = 8


@dataclass
class EnsembleSection:
    epochs: int = 20
    batch_size: int = 32
    lr0: float = 1e-2
    gate_widths: list[int] = field(default_factory=lambda: [8, 16])
    query_dim: int = 0  # 0 means embed_dim


@dataclass
class TrajectorySection:
    hidden: int = 32
    layers: int = 2
    epochs: int = 30
    batch_size: int = 32
    lr0: float = 3e-3
    beta: float = 1.0


@dataclass
class EvalSection:
    threshold: float = 0.15
    ks: list[int] = field(default_factory=lambda: [1, 3, 5])


@dataclass
class TeacherSection:
    mode: str = "synthetic_oracle"
    prompt: str = DEFAULT_PROMPT
    endpoint: str = ""
    cache_path: str = ""
    timeout: float = 30.0
    max_workers: int = 4


SECTIONS = {
    "data": DataSection,
    "vocab": VocabSection,
    "student": StudentSection,
    "distill": DistillSection,
    "ensemble": EnsembleSection,
    "trajectory": TrajectorySection,
    "eval": EvalSection,
    "teacher": TeacherSection,
}


@dataclass
class Config:
    seed: int = 0
    data: DataSection = field(default_factory=DataSection)
    vocab: VocabSection = field(default_factory=VocabSection)
    student: StudentSection = field(default_factory=StudentSection)
    distill: DistillSection = field(default_factory=DistillSection)
    ensemble: EnsembleSection = field(default_factory=EnsembleSection)
    trajectory: TrajectorySection = field(default_factory=TrajectorySection)
    eval: EvalSection = field(default_factory=EvalSection)
    teacher: TeacherSection = field(default_factory=TeacherSection)

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    def hash(self) -> str:
        """Hash of the effective config without the seed (runs differ by seed, not hash)."""
        d = self.to_dict()
        d.pop("seed")
        blob = json.dumps(d, sort_keys=True, separators=(",", ":")).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()[:12]

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=True, default_flow_style=False)

    def with_seed(self, seed: int) -> Config:
        return dataclasses.replace(self, seed=int(seed))

    # -------------------------------------------------- typed views
    def student_config(self, backbone: str | None = None) -> StudentConfig:
        s = self.student
        return StudentConfig(backbone or s.backbone, s.embed_dim, s.image_size, tuple(s.conv_widths),
                             s.attn_width, s.attn_depth, s.attn_heads, s.patch, s.embed_norm,
                             s.head_init_std)

    def distill_config(self, seed: int | None = None, n_scenes: int | None = None,
                       epochs: int | None = None) -> DistillConfig:
        return DistillConfig(epochs=epochs or self.distill.epochs, batch_size=self.distill.batch_size,
                             lr0=self.distill.lr0, seed=self.seed if seed is None else seed,
                             vocab_size=self.vocab.max_size, n_scenes=n_scenes or self.data.n_scenes,
                             holdout_frac=self.data.holdout_frac, omit_prob=self.data.omit_prob,
                             threshold=self.eval.threshold)

    def ensemble_config(self) -> EnsembleConfig:
        e = self.ensemble
        return EnsembleConfig(e.epochs, e.batch_size, e.lr0, tuple(e.gate_widths), e.query_dim or None,
                              self.eval.threshold)

    def traj_config(self) -> TrajConfig:
        t = self.trajectory
        return TrajConfig(t.hidden, t.layers, t.epochs, t.batch_size, t.lr0, t.beta)


def _coerce(cls, name: str, values: Any):
    if values is None:
        return cls()
    if not isinstance(values, dict):
        raise ConfigError(f"section {name!r} must be a mapping")
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(values) - set(known))
    if unknown:
        raise ConfigError(f"unknown key(s) in section {name!r}: {', '.join(unknown)}")
    out = cls()
    for key, val in values.items():
        default = getattr(out, key)
        if isinstance(default, bool):
            ok = isinstance(val, bool)
        elif isinstance(default, float):
            ok = isinstance(val, (int, float)) and not isinstance(val, bool)
            val = float(val) if ok else val
        elif isinstance(default, int):
            ok = isinstance(val, int) and not isinstance(val, bool)
        elif isinstance(default, list):
            ok = isinstance(val, list)
        else:
            ok = isinstance(val, str)
        if not ok:
            raise ConfigError(f"{name}.{key}: expected {type(default).__name__}, got {val!r}")
        setattr(out, key, val)
    return out


def config_from_dict(raw: dict | None) -> Config:
    raw = dict(raw or {})
    unknown = sorted(set(raw) - set(SECTIONS) - {"seed"})
    if unknown:
        raise ConfigError(f"unknown config section(s): {', '.join(unknown)}")
    seed = raw.pop("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0 or seed >= 2 ** 64:
        raise ConfigError("seed must be an unsigned 64-bit integer")
    cfg = Config(seed=seed, **{k: _coerce(SECTIONS[k], k, raw.get(k)) for k in SECTIONS})
    validate(cfg)
    return cfg


def validate(cfg: Config) -> None:
    if cfg.student.backbone not in ("conv", "attention"):
        raise ConfigError(f"student.backbone must be conv or attention, got {cfg.student.backbone!r}")
    if cfg.teacher.mode not in ("synthetic_oracle", "replay_file", "remote"):
        raise ConfigError(f"teacher.mode {cfg.teacher.mode!r} is not supported")
    if not 0.0 < cfg.data.holdout_frac < 1.0:
        raise ConfigError("data.holdout_frac must lie in (0, 1)")
    if not 0.0 <= cfg.data.omit_prob < 1.0:
        raise ConfigError("data.omit_prob must lie in [0, 1)")
    if not 0.0 < cfg.eval.threshold < 1.0:
        raise ConfigError("eval.threshold must lie in (0, 1)")
    for name in ("n_scenes", "n_traj_scenes", "n_expert_scenes"):
        if getattr(cfg.data, name) < 10:
            raise ConfigError(f"data.{name} must be at least 10")
    for sec in (cfg.distill, cfg.ensemble, cfg.trajectory):
        if sec.epochs < 1 or sec.batch_size < 1 or sec.lr0 <= 0:
            raise ConfigError("epochs, batch_size and lr0 must be positive")
    if cfg.vocab.max_size < 1:
        raise ConfigError("vocab.max_size must be positive")


def load_config(path: str | Path | None) -> Config:
    if path is None:
        return config_from_dict({})
    try:
        raw = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML ({exc})") from exc
    if raw is not None and not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return config_from_dict(raw)
