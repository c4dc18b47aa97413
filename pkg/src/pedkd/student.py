"""Distillation students: conv or attention image encoders with a two-layer
MLP head over the label vocabulary, and banks of frozen specialist experts."""

from __future__ import annotations

from dataclasses import dataclass, field, asdict
from typing import Sequence

import numpy as np

from . import autograd as ag
from . import rng as rngmod
from .autograd import ContractError, Tensor
from .nn import AttentionBackbone, ConvBackbone, LayerNorm, MLPHead, Module


@dataclass(frozen=True)
class StudentConfig:
    backbone: str = "conv"
    embed_dim: int = 64
    image_size: int = 64
    conv_widths: tuple[int, ...] = (16, 32, 64)
    attn_width: int = 32
    attn_depth: int = 2
    attn_heads: int = 4
    patch: int = 4
    embed_norm: bool = True
    # a zero output layer lets the head fit label priors before the backbone
    # learns anything, and the ReLU units then die; a small random init avoids it
    head_init_std: float = 0.1

    def __post_init__(self):
        if self.backbone not in ("conv", "attention"):
            raise ValueError(f"unknown backbone {self.backbone!r}")
        object.__setattr__(self, "conv_widths", tuple(self.conv_widths))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["conv_widths"] = list(self.conv_widths)
        return d


class StudentEncoder(Module):
    """f_theta: image -> (embedding, logits over C labels)."""

    def __init__(self, n_classes: int, config: StudentConfig | None = None, seed: int = 0):
        self.config = config or StudentConfig()
        self.n_classes = n_classes
        cfg = self.config
        r = rngmod.stream(seed, "student", cfg.backbone)
        if cfg.backbone == "conv":
            self.backbone = ConvBackbone(r, 3, cfg.conv_widths, cfg.embed_dim)
        else:
            self.backbone = AttentionBackbone(r, cfg.image_size, 3, cfg.patch, cfg.attn_width,
                                              cfg.attn_depth, cfg.attn_heads, cfg.embed_dim)
        self.norm = LayerNorm(cfg.embed_dim) if cfg.embed_norm else None
        self.head = MLPHead(r, cfg.embed_dim, cfg.embed_dim, n_classes, cfg.head_init_std)

    @property
    def embed_dim(self) -> int:
        return self.config.embed_dim

    def _check(self, x) -> Tensor:
        x = ag.as_tensor(x)
        s = self.config.image_size
        if x.ndim == 3:
            x = x.reshape(1, *x.shape)
        if x.ndim != 4 or x.shape[1:] != (3, s, s):
            raise ContractError(f"expected images of shape (B, 3, {s}, {s}), got {x.shape}")
        return x

    def embed(self, x) -> Tensor:
        emb = self.backbone(self._check(x))
        return self.norm(emb) if self.norm is not None else emb

    def __call__(self, x) -> tuple[Tensor, Tensor]:
        emb = self.embed(x)
        return emb, self.head(emb)


def forward(encoder: StudentEncoder, image) -> tuple[Tensor, Tensor]:
    return encoder(image)


def embed_images(encoder: StudentEncoder, images: np.ndarray, batch_size: int = 64) -> np.ndarray:
    """Gradient-free embeddings for a stack of images."""
    out = []
    for i in range(0, len(images), batch_size):
        out.append(encoder.embed(np.asarray(images[i:i + batch_size], dtype=np.float64)).data)
    return np.concatenate(out) if out else np.zeros((0, encoder.embed_dim))


def predict_probs(encoder: StudentEncoder, images: np.ndarray, batch_size: int = 64) -> np.ndarray:
    out = []
    for i in range(0, len(images), batch_size):
        _, logits = encoder(np.asarray(images[i:i + batch_size], dtype=np.float64))
        out.append(ag.sigmoid_np(logits.data))
    return np.concatenate(out) if out else np.zeros((0, encoder.n_classes))


# ---------------------------------------------------------------- expert bank

@dataclass
class ExpertBank:
    experts: list[StudentEncoder]
    specialties: list[tuple[str, ...]]
    label_masks: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        dims = {e.embed_dim for e in self.experts}
        if len(dims) > 1:
            raise ContractError(f"experts disagree on embed_dim: {sorted(dims)}")
        for e in self.experts:
            e.freeze()

    @property
    def N(self) -> int:
        return len(self.experts)

    @property
    def embed_dim(self) -> int:
        return self.experts[0].embed_dim

    def embed_all(self, images: np.ndarray, batch_size: int = 64) -> np.ndarray:
        """(B, N, d_e) expert embeddings, computed without gradients."""
        return np.stack([embed_images(e, images, batch_size) for e in self.experts], axis=1)


DEFAULT_SPECIALTIES: tuple[tuple[str, ...], ...] = (
    ("pedestrian_type", "carried_object"),  # global semantics
    ("surface", "lighting"),                 # spatial / surface
    ("behavior",),                           # human pose
)


def specialty_masks(vocab_labels: Sequence[str], specialties: Sequence[Sequence[str]]) -> list[np.ndarray]:
    """One 0/1 mask over the vocabulary per specialty; specialties must partition the label families."""
    from .scenes import word_family

    fams = [word_family(lab.split(" ")[0]) for lab in vocab_labels]
    flat = [f for spec in specialties for f in spec]
    if any(len(spec) == 0 for spec in specialties):
        raise ValueError("empty specialty")
    if len(flat) != len(set(flat)):
        raise ValueError("specialties overlap")
    missing = {f for f in fams if f not in flat}
    if missing:
        raise ValueError(f"specialties do not cover label families {sorted(map(str, missing))}")
    return [np.array([1.0 if f in spec else 0.0 for f in fams]) for spec in specialties]


def build_expert_bank(seeds: Sequence[int], specialties: Sequence[Sequence[str]], data, train_config,
                      student_config: StudentConfig | None = None) -> ExpertBank:
    """Distil one expert per specialty with the other labels masked out of the loss, then freeze."""
    from .distill import train_on_data

    if len(seeds) != len(specialties):
        raise ValueError("need one seed per specialty")
    masks = specialty_masks(data.vocab.labels, specialties)
    experts = []
    for seed, mask in zip(seeds, masks):
        enc = StudentEncoder(data.vocab.C, student_config, seed=seed)
        train_on_data(train_config, enc, data, label_mask=mask, seed=seed)
        experts.append(enc)
    return ExpertBank(experts, [tuple(s) for s in specialties], masks)
