"""Pedestrian trajectory prediction: a stacked tanh RNN rolled out
autoregressively, optionally fed a frozen image embedding at every step."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import autograd as ag
from . import rng as rngmod
from .autograd import ContractError, Tensor
from .nn import Module, _param
from .optim import Adam, LinearDecay
from .scenes import FUTURE_LEN, HISTORY_LEN, SceneParams, TrajectorySample, generate_scene, mean_future
from .student import StudentEncoder, embed_images


@dataclass(frozen=True)
class TrajConfig:
    hidden: int = 32
    layers: int = 2
    epochs: int = 30
    batch_size: int = 32
    lr0: float = 3e-3
    beta: float = 1.0   # smooth L1 transition point, metres


class RnnPredictor(Module):
    """Stacked tanh cells; layer 0 sees [x_t, e] (or x_t alone in baseline mode)."""

    def __init__(self, mode: str = "baseline", embed_dim: int = 0, hidden: int = 32, layers: int = 2,
                 seed: int = 0, history_len: int = HISTORY_LEN, horizon: int = FUTURE_LEN):
        if mode not in ("baseline", "fusion"):
            raise ValueError(f"unknown mode {mode!r}")
        if mode == "fusion" and embed_dim <= 0:
            raise ValueError("fusion mode needs a positive embed_dim")
        if layers < 1 or hidden < 1:
            raise ValueError("need at least one layer and one hidden unit")
        self.mode = mode
        self.embed_dim = embed_dim if mode == "fusion" else 0
        self.hidden = hidden
        self.history_len = history_len
        self.horizon = horizon
        r = rngmod.stream(seed, "rnn", mode)
        self.W_x = []
        self.W_h = []
        self.b = []
        for layer in range(layers):
            n_in = 2 + self.embed_dim if layer == 0 else hidden
            self.W_x.append(_param(r.normal(0.0, 1.0 / np.sqrt(n_in), (n_in, hidden)), f"W_x{layer}"))
            self.W_h.append(_param(r.normal(0.0, 0.5 / np.sqrt(hidden), (hidden, hidden)), f"W_h{layer}"))
            self.b.append(_param(np.zeros(hidden), f"b{layer}"))
        self.W_o = _param(r.normal(0.0, 0.1 / np.sqrt(hidden), (hidden, 2)), "W_o")
        self.b_o = _param(np.zeros(2), "b_o")

    @property
    def layers(self) -> int:
        return len(self.W_x)

    def step(self, x, e, hs: list) -> tuple[Tensor, list]:
        inp = ag.concat([x, e], axis=-1) if e is not None else x
        new = []
        for layer in range(self.layers):
            h = inp @ self.W_x[layer] + self.b[layer]
            if hs[layer] is not None:
                h = h + hs[layer] @ self.W_h[layer]
            h = ag.tanh(h)
            new.append(h)
            inp = h
        return inp @ self.W_o + self.b_o, new


def rnn_rollout(model: RnnPredictor, history, embedding=None) -> Tensor:
    """Warm up over the history, then predict ``model.horizon`` points, feeding each back.

    ``history`` is (T, 2) or (B, T, 2); ``embedding`` (d,) or (B, d). Returns (B, horizon, 2)
    or (horizon, 2) for unbatched input.
    """
    history = ag.as_tensor(history)
    single = history.ndim == 2
    if single:
        history = history.reshape(1, *history.shape)
    if history.ndim != 3 or history.shape[1:] != (model.history_len, 2):
        raise ContractError(f"history must be ({model.history_len}, 2) points, got {history.shape}")
    B = history.shape[0]
    if (embedding is None) != (model.mode == "baseline"):
        raise ContractError(f"{model.mode} model {'needs' if model.mode == 'fusion' else 'takes no'} embedding")
    e = None
    if embedding is not None:
        e = ag.as_tensor(embedding)
        if e.ndim == 1:
            e = e.reshape(1, -1)
        if e.shape != (B, model.embed_dim):
            raise ContractError(f"embedding shape {e.shape} != ({B}, {model.embed_dim})")
    hs: list = [None] * model.layers
    for t in range(model.history_len):
        _, hs = model.step(history[:, t, :], e, hs)
    x = history[:, model.history_len - 1, :]
    preds = []
    for _ in range(model.horizon):
        x, hs = model.step(x, e, hs)
        preds.append(x.reshape(B, 1, 2))
    out = ag.concat(preds, axis=1)
    return out.reshape(model.horizon, 2) if single else out


def ade_fde(pred, truth) -> tuple[float, float]:
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape or pred.shape[-1] != 2:
        raise ContractError(f"prediction {pred.shape} and truth {truth.shape} differ")
    d = np.sqrt(((pred - truth) ** 2).sum(axis=-1))
    return float(d.mean()), float(d[..., -1].mean())


# ----------------------------------------------------------------- datasets

@dataclass
class TrajData:
    """Samples in a frame centred on each sample's last history point."""
    history: np.ndarray        # (N, 10, 2)
    future: np.ndarray         # (N, 30, 2)
    origin: np.ndarray         # (N, 2)
    behaviors: list[str]
    scene_seeds: list[int]

    @classmethod
    def from_samples(cls, samples: Sequence[TrajectorySample]) -> TrajData:
        hist = np.stack([s.history for s in samples]).astype(np.float64)
        fut = np.stack([s.future for s in samples]).astype(np.float64)
        origin = hist[:, -1, :].copy()
        return cls(hist - origin[:, None], fut - origin[:, None], origin,
                   [s.behavior for s in samples], [s.scene_seed for s in samples])

    def __len__(self) -> int:
        return len(self.history)


@dataclass
class EmbeddingScaler:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, E: np.ndarray) -> EmbeddingScaler:
        return cls(E.mean(axis=0), E.std(axis=0) + 1e-6)

    def __call__(self, E: np.ndarray) -> np.ndarray:
        return (E - self.mean) / self.std


def scene_embeddings(encoder: StudentEncoder, scene_seeds: Sequence[int],
                     params: SceneParams | None = None) -> np.ndarray:
    images = np.stack([generate_scene(s, params).image for s in scene_seeds])
    return embed_images(encoder, images)


@dataclass
class TrajModel:
    net: RnnPredictor
    scaler: EmbeddingScaler | None = None
    loss: list[float] = field(default_factory=list)
    seconds: list[float] = field(default_factory=list)

    def predict(self, data: TrajData, E: np.ndarray | None = None, batch_size: int = 256) -> np.ndarray:
        """Absolute-frame predictions (N, 30, 2)."""
        out = []
        for i in range(0, len(data), batch_size):
            e = None if self.scaler is None else self.scaler(E[i:i + batch_size])
            out.append(rnn_rollout(self.net, data.history[i:i + batch_size], e).data)
        return np.concatenate(out) + data.origin[:, None]


def train_traj(config: TrajConfig, data: TrajData, mode: str, encoder: StudentEncoder | None = None,
               E: np.ndarray | None = None, seed: int = 0,
               params: SceneParams | None = None) -> TrajModel:
    """Smooth-L1 over the full autoregressive rollout. Fusion mode reads embeddings
    from the frozen ``encoder`` (or takes precomputed ``E`` aligned with ``data``)."""
    scaler = None
    if mode == "fusion":
        if E is None:
            if encoder is None:
                raise ContractError("fusion mode needs a distilled encoder or precomputed embeddings")
            if any(p.requires_grad for p in encoder.parameters()):
                raise ContractError("encoder must be frozen for fusion training")
            E = scene_embeddings(encoder, data.scene_seeds, params)
        scaler = EmbeddingScaler.fit(E)
        embed_dim = E.shape[1]
    else:
        embed_dim = 0
    net = RnnPredictor(mode, embed_dim, config.hidden, config.layers, seed)
    model = TrajModel(net, scaler)
    En = scaler(E) if scaler is not None else None
    n = len(data)
    n_batches = (n + config.batch_size - 1) // config.batch_size
    opt = Adam(net.parameters(), LinearDecay(config.lr0, config.epochs * n_batches))
    for epoch in range(config.epochs):
        t0 = time.perf_counter()
        order = rngmod.stream(seed, "traj-batches", mode, epoch).permutation(n)
        total = 0.0
        for b in range(n_batches):
            idx = np.sort(order[b * config.batch_size:(b + 1) * config.batch_size])
            pred = rnn_rollout(net, data.history[idx], None if En is None else En[idx])
            loss = ag.smooth_l1(pred, data.future[idx], config.beta)
            opt.zero_grad()
            ag.backward(loss)
            opt.step()
            total += loss.item() * len(idx)
        model.loss.append(total / n)
        model.seconds.append(time.perf_counter() - t0)
    return model


def behavior_oracle(data: TrajData) -> np.ndarray:
    """Knows each sample's behavior class; anchors the mean path on the history mean."""
    anchors = data.history.mean(axis=1) + data.origin
    return np.stack([mean_future(b, a) for b, a in zip(data.behaviors, anchors)])


def evaluate_traj(pred: np.ndarray, data: TrajData) -> dict[str, float]:
    ade, fde = ade_fde(pred, data.future + data.origin[:, None])
    return {"ade": ade, "fde": fde, "n_samples": len(data)}
