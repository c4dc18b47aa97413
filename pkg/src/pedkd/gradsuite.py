"""Finite-difference checks over small instances of every trainable module."""

from __future__ import annotations

import time
from typing import Callable

import numpy as np

from . import autograd as ag
from .autograd import GradCheckReport, Tensor
from .distill import bce_loss
from .ensemble import EnsembleConfig, EnsembleModel
from .nn import MLPHead
from .student import StudentConfig, StudentEncoder
from .trajectory import RnnPredictor, rnn_rollout

TOLERANCE = 1e-4


def _randomize_zero_layers(module, rng: np.random.Generator) -> None:
    # zero-initialised output layers make upstream gradients vanish, which
    # would let a broken backward pass look correct
    for _, p in module.named_parameters():
        if not p.data.any():
            p.data = rng.normal(0.0, 0.3, p.shape)


def _student_case(backbone: str, seed: int):
    r = np.random.default_rng(seed)
    cfg = StudentConfig(backbone=backbone, embed_dim=6, image_size=8 if backbone == "attention" else 16,
                        conv_widths=(3, 4, 5), attn_width=8, attn_depth=2, attn_heads=4, patch=4)
    enc = StudentEncoder(4, cfg, seed=seed)
    _randomize_zero_layers(enc, r)
    x = r.uniform(0.0, 1.0, (2, 3, cfg.image_size, cfg.image_size))
    y = (r.uniform(size=(2, 4)) < 0.5).astype(float)
    return (lambda *_: bce_loss(enc(x)[1], y)), enc.parameters()


def _head_case(seed: int):
    r = np.random.default_rng(seed)
    head = MLPHead(r, 6, 6, 4)
    _randomize_zero_layers(head, r)
    e = r.normal(size=(3, 6))
    y = (r.uniform(size=(3, 4)) < 0.5).astype(float)
    return (lambda *_: bce_loss(head(Tensor(e)), y)), head.parameters()


def _ensemble_case(mechanism: str, seed: int):
    r = np.random.default_rng(seed)
    model = EnsembleModel(mechanism, 3, 6, 4, EnsembleConfig(gate_widths=(2, 3)), seed=seed)
    _randomize_zero_layers(model, r)
    images = r.uniform(0.0, 1.0, (2, 3, 8, 8))
    E = r.normal(size=(2, 3, 6))
    y = (r.uniform(size=(2, 4)) < 0.5).astype(float)
    return (lambda *_: bce_loss(model(images, E)[0], y)), model.parameters()


def _rnn_case(seed: int):
    r = np.random.default_rng(seed)
    net = RnnPredictor("fusion", embed_dim=3, hidden=6, layers=2, seed=seed)
    hist = r.normal(0.0, 0.3, (2, 10, 2))
    emb = r.normal(size=(2, 3))
    fut = r.normal(0.0, 1.0, (2, 30, 2))
    return (lambda *_: ag.smooth_l1(rnn_rollout(net, hist, emb), fut)), net.parameters()


CASES: dict[str, Callable] = {
    "student_conv": lambda s: _student_case("conv", s),
    "student_attention": lambda s: _student_case("attention", s),
    "mlp_head": _head_case,
    "moe_gate": lambda s: _ensemble_case("moe", s),
    "query_ensemble": lambda s: _ensemble_case("query", s),
    "rnn_rollout_40_steps": _rnn_case,
}


def run_gradient_suite(seed: int = 0, max_coords: int | None = 60) -> dict[str, tuple[GradCheckReport, float]]:
    """Name -> (report, seconds). ``max_coords`` caps probes per parameter tensor."""
    out = {}
    for name, make in CASES.items():
        t0 = time.perf_counter()
        f, params = make(seed)
        rep = ag.grad_check(f, params, eps=1e-5, max_coords=max_coords, seed=seed)
        out[name] = (rep, time.perf_counter() - t0)
    return out
