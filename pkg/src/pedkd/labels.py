"""Mine a uni-/bi-gram label vocabulary from teacher annotations and encode
annotations as multi-hot label vectors."""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

_SENTENCE_SPLIT = re.compile(r"[.!?;:\n]+")
_WORD = re.compile(r"[a-z0-9]+")

# -ly words that are not adverbs
ADVERB_EXCEPTIONS = frozenset({
    "elderly", "family", "early", "daily", "friendly", "holy", "ugly", "lonely", "jelly",
    "belly", "bully", "rally", "supply", "reply", "apply", "fly", "italy", "july", "only",
    "lily", "assembly", "anomaly", "butterfly", "curly", "silly", "hilly", "chilly", "oily",
})


@dataclass(frozen=True)
class Annotation:
    image_id: str
    text: str


@dataclass(frozen=True)
class Vocabulary:
    labels: tuple[str, ...]
    frequencies: tuple[int, ...]

    def __post_init__(self):
        if len(set(self.labels)) != len(self.labels):
            raise ValueError("vocabulary labels must be unique")
        if len(self.labels) != len(self.frequencies):
            raise ValueError("labels and frequencies differ in length")

    @property
    def C(self) -> int:
        return len(self.labels)

    def __len__(self) -> int:
        return len(self.labels)

    def index(self, label: str) -> int:
        return self.labels.index(label)

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for label, freq in zip(self.labels, self.frequencies):
                fh.write(f"{label}\t{freq}\n")

    @classmethod
    def load(cls, path: str | Path) -> Vocabulary:
        labels, freqs = [], []
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.rstrip("\n")
                if not line:
                    continue
                try:
                    label, freq = line.split("\t")
                    freqs.append(int(freq))
                except ValueError as exc:
                    raise ValueError(f"{path}:{lineno}: expected 'label<TAB>frequency'") from exc
                labels.append(label)
        return cls(tuple(labels), tuple(freqs))


def default_stopwords() -> frozenset[str]:
    text = resources.files("pedkd").joinpath("stopwords.txt").read_text(encoding="utf-8")
    return frozenset(w.strip() for w in text.splitlines() if w.strip() and not w.startswith("#"))


def is_adverb(token: str) -> bool:
    return len(token) > 3 and token.endswith("ly") and token not in ADVERB_EXCEPTIONS


def tokenize_sentences(text: str, stopwords: Iterable[str] | None = None) -> list[list[str]]:
    """Content tokens grouped by sentence; empty sentences are dropped."""
    stop = default_stopwords() if stopwords is None else stopwords
    out = []
    for sentence in _SENTENCE_SPLIT.split(text.lower()):
        toks = [t for t in _WORD.findall(sentence) if t not in stop and not is_adverb(t)]
        if toks:
            out.append(toks)
    return out


def tokenize(text: str, stopwords: Iterable[str] | None = None) -> list[str]:
    return [t for sent in tokenize_sentences(text, stopwords) for t in sent]


def ngrams(sentences: Sequence[Sequence[str]]) -> list[str]:
    """Uni-grams plus adjacent bi-grams; bi-grams never cross a sentence break."""
    grams = []
    for sent in sentences:
        grams.extend(sent)
        grams.extend(f"{a} {b}" for a, b in zip(sent, sent[1:]))
    return grams


def build_vocabulary(corpus: Sequence[Annotation], max_size: int = 256,
                     stopwords: Iterable[str] | None = None) -> Vocabulary:
    """Top ``max_size`` n-grams by (count desc, label asc).

    Counts are occurrences over the whole corpus.
    """
    if max_size < 1:
        raise ValueError("max_size must be >= 1")
    if not corpus:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    stop = default_stopwords() if stopwords is None else frozenset(stopwords)
    counts: Counter[str] = Counter()
    for ann in corpus:
        counts.update(ngrams(tokenize_sentences(ann.text, stop)))
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[:max_size]
    return Vocabulary(tuple(k for k, _ in ranked), tuple(v for _, v in ranked))


def encode_labels(annotation: Annotation | str, vocab: Vocabulary,
                  stopwords: Iterable[str] | None = None) -> np.ndarray:
    """Multi-hot vector: 1 where the label occurs in the annotation."""
    text = annotation.text if isinstance(annotation, Annotation) else annotation
    present = set(ngrams(tokenize_sentences(text, stopwords)))
    return np.array([1.0 if lab in present else 0.0 for lab in vocab.labels])


def encode_corpus(corpus: Sequence[Annotation], vocab: Vocabulary,
                  stopwords: Iterable[str] | None = None) -> np.ndarray:
    stop = default_stopwords() if stopwords is None else frozenset(stopwords)
    return np.stack([encode_labels(a, vocab, stop) for a in corpus]) if corpus else np.zeros((0, vocab.C))


def read_corpus(path: str | Path) -> list[Annotation]:
    """Read ``image_id<TAB>text`` lines. Blank texts are kept; callers decide."""
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            if "\t" not in line:
                raise ValueError(f"{path}:{lineno}: expected 'image_id<TAB>text'")
            image_id, text = line.split("\t", 1)
            out.append(Annotation(image_id, text))
    return out


def write_corpus(corpus: Iterable[Annotation], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for ann in corpus:
            text = " ".join(ann.text.split())
            fh.write(f"{ann.image_id}\t{text}\n")
