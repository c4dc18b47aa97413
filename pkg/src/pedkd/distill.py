"""Hard-label knowledge distillation: teacher access, data preparation, the
multi-label BCE objective and the training loop."""

from __future__ import annotations

import base64
import json
import logging
import os
import time
import urllib.request
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import autograd as ag
from . import rng as rngmod
from .autograd import ContractError, Tensor
from .labels import Annotation, Vocabulary, build_vocabulary, encode_corpus, read_corpus, write_corpus
from .metrics import evaluate
from .optim import Adam, LinearDecay
from .scenes import Scene, SceneParams, generate_scenes, teacher_annotate
from .student import StudentEncoder, predict_probs

log = logging.getLogger(__name__)

DEFAULT_PROMPT = (
    "You are a helpful autonomous driving agent. Describe the action and behavior of the "
    "pedestrian and the unusual situation in the scene that requires the driver's attention."
)
TEACHER_URL_ENV = "PEDKD_TEACHER_URL"
LOG_EPS = 1e-12


class CacheMiss(KeyError):
    pass


def bce_loss(logits, y, mask=None) -> Tensor:
    """Mean over samples of -(1/C) sum_i [y_i log s(l_i) + (1 - y_i) log(1 - s(l_i))].

    With ``mask`` (0/1 per label) the inner mean runs over unmasked labels only.
    """
    logits = ag.as_tensor(logits)
    y = np.asarray(y, dtype=np.float64)
    if logits.shape[-1] != y.shape[-1] or (y.ndim == logits.ndim and y.shape != logits.shape):
        raise ContractError(f"bce_loss: logits {logits.shape} vs targets {y.shape}")
    p = ag.sigmoid(logits)
    ll = y * ag.log(ag.clamp_min(p, LOG_EPS)) + (1.0 - y) * ag.log(ag.clamp_min(1.0 - p, LOG_EPS))
    if mask is None:
        per_sample = ag.mean(ll, axis=-1)
    else:
        mask = np.asarray(mask, dtype=np.float64)
        per_sample = ag.tsum(ll * mask, axis=-1) * (1.0 / mask.sum())
    return -ag.mean(per_sample)


@dataclass
class DistillConfig:
    epochs: int = 10
    batch_size: int = 32
    lr0: float = 1e-4
    seed: int = 0
    vocab_size: int = 256
    n_scenes: int = 2000
    holdout_frac: float = 0.2
    omit_prob: float = 0.3
    threshold: float = 0.15

    def __post_init__(self):
        if self.epochs < 1 or self.lr0 <= 0 or self.batch_size < 1:
            raise ValueError("need epochs >= 1, lr0 > 0, batch_size >= 1")


@dataclass
class TrainingHistory:
    loss: list[float] = field(default_factory=list)
    heldout: list[dict[str, float]] = field(default_factory=list)
    seconds: list[float] = field(default_factory=list)


# ---------------------------------------------------------------- teacher

@dataclass
class TeacherClient:
    mode: str = "synthetic_oracle"
    prompt: str = DEFAULT_PROMPT
    cache: dict[str, str] = field(default_factory=dict)
    omit_prob: float = 0.3
    seed: int = 0
    endpoint: str | None = None
    cache_path: str | None = None
    timeout: float = 30.0
    max_workers: int = 4

    def __post_init__(self):
        if self.mode not in ("synthetic_oracle", "replay_file", "remote"):
            raise ValueError(f"unknown teacher mode {self.mode!r}")
        if self.mode == "replay_file" and self.cache_path and not self.cache:
            self.cache = {a.image_id: a.text for a in read_corpus(self.cache_path)}
        if self.mode == "remote" and self.endpoint is None:
            self.endpoint = os.environ.get(TEACHER_URL_ENV)

    def persist(self) -> None:
        if self.cache_path:
            write_corpus([Annotation(k, self.cache[k]) for k in sorted(self.cache)], self.cache_path)


def _request_body(teacher: TeacherClient, image_id: str, image) -> bytes:
    raw = np.ascontiguousarray(image, dtype="<f4").tobytes()
    return json.dumps({
        "prompt": teacher.prompt,
        "image": base64.b64encode(raw).decode("ascii"),
        "image_id": image_id,
    }).encode("utf-8")


def _remote_text(teacher: TeacherClient, image_id: str, image) -> str:
    if not teacher.endpoint:
        raise ContractError(f"remote teacher needs an endpoint (config or ${TEACHER_URL_ENV})")
    req = urllib.request.Request(teacher.endpoint, data=_request_body(teacher, image_id, image),
                                 headers={"Content-Type": "application/json"}, method="POST")
    with urllib.request.urlopen(req, timeout=teacher.timeout) as resp:
        payload = json.loads(resp.read().decode("utf-8"))
    return str(payload["text"])


def fetch_annotation(teacher: TeacherClient, image_id: str, image) -> Annotation:
    """Annotation for one image. Synthetic mode needs a :class:`Scene` as ``image``."""
    if teacher.mode == "replay_file":
        if image_id not in teacher.cache:
            raise CacheMiss(f"replay cache has no entry for image {image_id!r}")
        return Annotation(image_id, teacher.cache[image_id])
    if teacher.mode == "synthetic_oracle":
        if not isinstance(image, Scene):
            raise ContractError("synthetic_oracle teacher needs the Scene, not just pixels")
        ann = teacher_annotate(image, teacher.omit_prob, teacher.seed)
        return Annotation(image_id, ann.text)
    text = _remote_text(teacher, image_id, image)
    teacher.cache[image_id] = text
    teacher.persist()
    return Annotation(image_id, text)


def precollect(teacher: TeacherClient, items: Sequence[tuple[str, object]]) -> list[Annotation]:
    """Fetch many annotations; remote requests run bounded-parallel and land in the
    cache in image_id order."""
    if teacher.mode != "remote":
        return [fetch_annotation(teacher, i, img) for i, img in items]
    todo = [(i, img) for i, img in items if i not in teacher.cache]
    with ThreadPoolExecutor(max_workers=max(1, teacher.max_workers)) as pool:
        texts = list(pool.map(lambda it: _remote_text(teacher, it[0], it[1]), todo))
    for (image_id, _), text in sorted(zip(todo, texts), key=lambda p: p[0][0]):
        teacher.cache[image_id] = text
    teacher.persist()
    return [Annotation(i, teacher.cache[i]) for i, _ in items]


# ------------------------------------------------------------------ data

@dataclass
class DistillData:
    vocab: Vocabulary
    images: np.ndarray      # (N, 3, H, W) float32
    targets: np.ndarray     # (N, C)
    train_idx: np.ndarray
    test_idx: np.ndarray
    scenes: list[Scene]
    annotations: list[Annotation]
    n_skipped: int = 0

    @property
    def C(self) -> int:
        return self.vocab.C


def prepare_data(config: DistillConfig, teacher: TeacherClient, params: SceneParams | None = None,
                 scenes: list[Scene] | None = None) -> DistillData:
    """Render scenes, query the teacher, mine the vocabulary on the train split, encode targets."""
    if scenes is None:
        scenes = generate_scenes(rngmod.derive_seed(config.seed, "dataset"), config.n_scenes, params)
    anns = precollect(teacher, [(s.image_id, s) for s in scenes])
    images = np.stack([s.image for s in scenes]).astype(np.float32)
    return assemble_data(images, anns, config.holdout_frac, config.vocab_size, scenes=scenes)


def assemble_data(images: np.ndarray, anns: Sequence[Annotation], holdout_frac: float,
                  vocab_size: int, vocab: Vocabulary | None = None,
                  scenes: Sequence[Scene] | None = None) -> DistillData:
    """Drop empty annotations, split train/held-out in order, mine the vocabulary
    on the train split unless one is given."""
    if len(images) != len(anns):
        raise ContractError(f"{len(images)} images but {len(anns)} annotations")
    keep = [i for i, a in enumerate(anns) if a.text.strip()]
    n_skipped = len(anns) - len(keep)
    if n_skipped:
        log.warning("skipped %d scenes with empty teacher annotations", n_skipped)
    anns = [anns[i] for i in keep]
    images = np.asarray(images, dtype=np.float32)[keep]
    scenes = [scenes[i] for i in keep] if scenes is not None else []
    n_test = int(round(len(anns) * holdout_frac))
    n_train = len(anns) - n_test
    if n_train < 1:
        raise ContractError("no training samples left after the held-out split")
    if vocab is None:
        vocab = build_vocabulary(anns[:n_train], vocab_size)
    return DistillData(vocab, images, encode_corpus(anns, vocab), np.arange(n_train),
                       np.arange(n_train, len(anns)), scenes, anns, n_skipped)


# -------------------------------------------------------------- training

def heldout_metrics(encoder: StudentEncoder, data: DistillData, threshold: float,
                    label_mask=None) -> dict[str, float]:
    probs = predict_probs(encoder, data.images[data.test_idx])
    truth = data.targets[data.test_idx]
    labels = list(data.vocab.labels)
    if label_mask is not None:
        keep = np.flatnonzero(np.asarray(label_mask) > 0)
        probs, truth, labels = probs[:, keep], truth[:, keep], [labels[i] for i in keep]
    return evaluate(probs, truth, labels, threshold).as_dict()


def train_on_data(config: DistillConfig, encoder: StudentEncoder, data: DistillData,
                  label_mask=None, seed: int | None = None, eval_each_epoch: bool = True) -> TrainingHistory:
    """Minibatch Adam on the BCE objective; deterministic given the seed."""
    seed = config.seed if seed is None else seed
    params = encoder.parameters()
    n = len(data.train_idx)
    n_batches = (n + config.batch_size - 1) // config.batch_size
    opt = Adam(params, LinearDecay(config.lr0, config.epochs * n_batches))
    hist = TrainingHistory()
    for epoch in range(config.epochs):
        t0 = time.perf_counter()
        order = data.train_idx[rngmod.stream(seed, "batches", epoch).permutation(n)]
        total = 0.0
        for b in range(n_batches):
            idx = np.sort(order[b * config.batch_size:(b + 1) * config.batch_size])
            _, logits = encoder(data.images[idx].astype(np.float64))
            loss = bce_loss(logits, data.targets[idx], label_mask)
            opt.zero_grad()
            ag.backward(loss)
            opt.step()
            total += loss.item() * len(idx)
        hist.loss.append(total / n)
        if eval_each_epoch and len(data.test_idx):
            hist.heldout.append(heldout_metrics(encoder, data, config.threshold, label_mask))
        hist.seconds.append(time.perf_counter() - t0)
        log.info("epoch %d loss %.5f", epoch + 1, hist.loss[-1])
    return hist


def train_distill(config: DistillConfig, encoder: StudentEncoder, teacher: TeacherClient,
                  data: DistillData | None = None) -> tuple[StudentEncoder, TrainingHistory]:
    if data is None:
        data = prepare_data(config, teacher)
    if encoder.n_classes != data.C:
        raise ContractError(f"encoder has {encoder.n_classes} outputs, vocabulary has {data.C}")
    return encoder, train_on_data(config, encoder, data)
