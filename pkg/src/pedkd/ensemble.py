"""Combining frozen expert embeddings: mixture-of-experts gating and a
learnable-query cross-attention ensemble, each followed by a shared head."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from . import rng as rngmod
from .autograd import ContractError, Tensor
from .distill import TrainingHistory, bce_loss
from .metrics import evaluate
from .nn import Conv2d, Linear, MLPHead, Module, _param
from .optim import Adam, LinearDecay
from .student import ExpertBank


@dataclass(frozen=True)
class EnsembleConfig:
    epochs: int = 10
    batch_size: int = 32
    lr0: float = 1e-3
    gate_widths: tuple[int, ...] = (8, 16)
    query_dim: int | None = None  # defaults to the expert embed_dim
    threshold: float = 0.15


@dataclass
class EnsembleOutput:
    combined: Tensor   # (B, d)
    weights: Tensor    # (B, N), rows sum to 1


class GateNetwork(Module):
    """Small conv net over the image -> softmax over experts. Starts uniform."""

    def __init__(self, rng: np.random.Generator, n_experts: int, widths=(8, 16)):
        chans = (3,) + tuple(widths)
        self.convs = [Conv2d(rng, chans[i], chans[i + 1]) for i in range(len(widths))]
        self.out = Linear(rng, widths[-1], n_experts, zero=True)

    def logits(self, x) -> Tensor:
        x = ag.as_tensor(x)
        for conv in self.convs:
            x = ag.avg_pool2d(ag.relu(conv(x)))
        return self.out(ag.mean(x, axis=(2, 3)))

    def __call__(self, x) -> Tensor:
        return ag.softmax(self.logits(x), axis=-1)


class QueryEnsembleParams(Module):
    def __init__(self, rng: np.random.Generator, embed_dim: int, d: int | None = None,
                 d_v: int | None = None):
        d = d or embed_dim
        d_v = d_v or embed_dim
        if d <= 0 or d_v <= 0:
            raise ContractError("query and value dims must be positive")
        self.Q = _param(rng.normal(0.0, 1.0 / np.sqrt(d), d), "Q")
        self.W_k = _param(rng.normal(0.0, 1.0 / np.sqrt(embed_dim), (embed_dim, d)), "W_k")
        self.W_v = _param(rng.normal(0.0, 1.0 / np.sqrt(embed_dim), (embed_dim, d_v)), "W_v")

    @property
    def d(self) -> int:
        return self.Q.shape[0]


def _as_stack(E) -> Tensor:
    E = ag.as_tensor(E)
    if E.ndim == 2:
        E = E.reshape(1, *E.shape)
    if E.ndim != 3:
        raise ContractError(f"expert embeddings must be (B, N, d_e), got {E.shape}")
    return E


def moe_mix(E, weights) -> EnsembleOutput:
    """sum_i g_i * E_i for E of shape (B, N, d_e) and weights (B, N)."""
    E, weights = _as_stack(E), ag.as_tensor(weights)
    B, N, D = E.shape
    if weights.shape != (B, N):
        raise ContractError(f"gate weights {weights.shape} do not match {N} experts")
    return EnsembleOutput((weights.reshape(B, 1, N) @ E).reshape(B, D), weights)


def query_mix(E, params: QueryEnsembleParams) -> EnsembleOutput:
    """Softmax(Q (E W_k)^T / sqrt(d)) (E W_v) over the N experts."""
    E = _as_stack(E)
    B, N, D = E.shape
    if params.W_k.shape[0] != D:
        raise ContractError(f"W_k expects embed_dim {params.W_k.shape[0]}, experts give {D}")
    keys = E @ params.W_k                                   # (B, N, d)
    values = E @ params.W_v                                 # (B, N, d_v)
    scores = (keys @ params.Q.reshape(-1, 1)).reshape(B, N) * (1.0 / np.sqrt(params.d))
    w = ag.softmax(scores, axis=-1)
    return EnsembleOutput((w.reshape(B, 1, N) @ values).reshape(B, values.shape[2]), w)


def moe_combine(image, experts: ExpertBank, gate: GateNetwork) -> EnsembleOutput:
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 3:
        image = image[None]
    return moe_mix(experts.embed_all(image), gate(image))


def query_combine(image, experts: ExpertBank, params: QueryEnsembleParams) -> EnsembleOutput:
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 3:
        image = image[None]
    return query_mix(experts.embed_all(image), params)


class EnsembleModel(Module):
    """Combiner + shared two-layer head. ``single`` uses one expert's embedding as is."""

    def __init__(self, mechanism: str, n_experts: int, embed_dim: int, n_classes: int,
                 config: EnsembleConfig | None = None, seed: int = 0, expert_index: int = 0):
        config = config or EnsembleConfig()
        if mechanism not in ("moe", "query", "single"):
            raise ValueError(f"unknown mechanism {mechanism!r}")
        self.mechanism = mechanism
        self.expert_index = expert_index
        r = rngmod.stream(seed, "ensemble", mechanism)
        self.gate = GateNetwork(r, n_experts, config.gate_widths) if mechanism == "moe" else None
        self.query = QueryEnsembleParams(r, embed_dim, config.query_dim) if mechanism == "query" else None
        d_out = self.query.W_v.shape[1] if self.query is not None else embed_dim
        self.head = MLPHead(r, d_out, embed_dim, n_classes)

    def combine(self, images, E) -> EnsembleOutput:
        E = _as_stack(E)
        if self.mechanism == "moe":
            return moe_mix(E, self.gate(images))
        if self.mechanism == "query":
            return query_mix(E, self.query)
        B = E.shape[0]
        w = np.zeros((B, E.shape[1]))
        w[:, self.expert_index] = 1.0
        return EnsembleOutput(E[:, self.expert_index, :], Tensor(w))

    def __call__(self, images, E) -> tuple[Tensor, EnsembleOutput]:
        out = self.combine(images, E)
        return self.head(out.combined), out


def ensemble_probs(model: EnsembleModel, images, E, batch_size: int = 64) -> np.ndarray:
    out = []
    for i in range(0, len(E), batch_size):
        imgs = np.asarray(images[i:i + batch_size], dtype=np.float64) if model.mechanism == "moe" else None
        logits, _ = model(imgs, E[i:i + batch_size])
        out.append(ag.sigmoid_np(logits.data))
    return np.concatenate(out)


def train_ensemble(config: EnsembleConfig, experts: ExpertBank, mechanism: str, data,
                   seed: int = 0, E: np.ndarray | None = None,
                   expert_index: int = 0) -> tuple[EnsembleModel, TrainingHistory]:
    """Train only the combiner and head; the experts are never touched.

    ``E`` may carry precomputed (N_images, N_experts, d_e) embeddings for ``data.images``.
    """
    if any(p.requires_grad for e in experts.experts for _, p in e.named_parameters(include_frozen=True)):
        raise ContractError("experts must be frozen before ensemble training")
    if E is None:
        E = experts.embed_all(data.images)
    model = EnsembleModel(mechanism, experts.N, experts.embed_dim, data.C, config, seed, expert_index)
    params = model.parameters()
    n = len(data.train_idx)
    n_batches = (n + config.batch_size - 1) // config.batch_size
    opt = Adam(params, LinearDecay(config.lr0, config.epochs * n_batches))
    hist = TrainingHistory()
    for epoch in range(config.epochs):
        t0 = time.perf_counter()
        order = data.train_idx[rngmod.stream(seed, "ensemble-batches", epoch).permutation(n)]
        total = 0.0
        for b in range(n_batches):
            idx = np.sort(order[b * config.batch_size:(b + 1) * config.batch_size])
            imgs = data.images[idx].astype(np.float64) if mechanism == "moe" else None
            logits, _ = model(imgs, E[idx])
            loss = bce_loss(logits, data.targets[idx])
            opt.zero_grad()
            ag.backward(loss)
            opt.step()
            total += loss.item() * len(idx)
        hist.loss.append(total / n)
        hist.heldout.append(ensemble_heldout(model, data, E, config.threshold))
        hist.seconds.append(time.perf_counter() - t0)
    return model, hist


def ensemble_heldout(model: EnsembleModel, data, E, threshold: float) -> dict[str, float]:
    idx = data.test_idx
    probs = ensemble_probs(model, data.images[idx], E[idx])
    return evaluate(probs, data.targets[idx], data.vocab.labels, threshold).as_dict()
