"""Synthetic pedestrian scenes: renderer, pixel-signature detector, an oracle
teacher that writes noisy annotations, and behavior-conditioned trajectories.

Each attribute value owns a signature colour that no other scene element uses
(pairwise L-inf separation >= 0.3), so :func:`detect_attributes` can recover
the full attribute set from pixels alone.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import rng as rngmod
from .labels import Annotation

IMAGE_SIZE = 64
HISTORY_LEN = 10
FUTURE_LEN = 30
FRAME_RATE = 10.0
TRAJ_NOISE = 0.02
SPEEDS = {"crossing": 1.2, "walking": 1.0}
DIRECTIONS = {"crossing": (0.0, 1.0), "walking": (1.0, 0.0)}

FAMILIES: dict[str, tuple[str, ...]] = {
    "pedestrian_type": ("adult", "child", "elderly", "worker"),
    "behavior": ("crossing", "waiting", "standing", "walking"),
    "carried_object": ("umbrella", "dog", "stroller", "phone"),
    "surface": ("crosswalk", "sidewalk", "road"),
    "lighting": ("day", "night"),
}
MANDATORY = ("pedestrian_type", "behavior")
# day is the unmarked default and has no annotation word
WORDS: dict[str, tuple[str, ...]] = {v: (v,) for fam in FAMILIES.values() for v in fam}
WORDS["day"] = ()

COLORS = {
    "sky_day": (0.55, 0.75, 0.95), "sky_night": (0.05, 0.07, 0.20),
    "road": (0.35, 0.35, 0.35), "sidewalk": (0.75, 0.65, 0.45), "stripe": (0.95, 0.95, 0.95),
    "adult": (0.15, 0.30, 0.90), "child": (0.95, 0.85, 0.10),
    "elderly": (0.60, 0.20, 0.70), "worker": (1.00, 0.50, 0.00),
    "crossing": (0.90, 0.10, 0.10), "waiting": (0.10, 0.80, 0.20),
    "standing": (0.10, 0.85, 0.85), "walking": (0.95, 0.20, 0.80),
    "umbrella": (0.45, 0.05, 0.15), "dog": (0.65, 0.40, 0.05),
    "stroller": (1.00, 0.60, 0.75), "phone": (0.20, 1.00, 0.55),
}
SKY_ROWS = 16
NOISE_STD = 0.03


@dataclass(frozen=True)
class AttributeSet:
    pedestrian_type: str
    behavior: str
    carried_object: str | None
    surface: str
    lighting: str

    def __post_init__(self):
        for fam, values in FAMILIES.items():
            val = getattr(self, fam)
            if val is None and fam == "carried_object":
                continue
            if val not in values:
                raise ValueError(f"{fam}={val!r} not in {values}")

    def values(self) -> list[str]:
        return [v for v in (getattr(self, f) for f in FAMILIES) if v is not None]

    def words(self) -> set[str]:
        return {w for v in self.values() for w in WORDS[v]}


def word_family(word: str) -> str | None:
    """Attribute family a label word belongs to, or None."""
    for fam, values in FAMILIES.items():
        if any(word in WORDS[v] for v in values):
            return fam
    return None


@dataclass(frozen=True)
class SceneParams:
    """Marginal probability tables, one per family. ``carried_object`` has an extra "none" key."""

    marginals: Mapping[str, Mapping[str, float]] = field(default_factory=lambda: {
        "pedestrian_type": {"adult": 0.25, "child": 0.25, "elderly": 0.25, "worker": 0.25},
        "behavior": {"crossing": 0.25, "waiting": 0.25, "standing": 0.25, "walking": 0.25},
        "carried_object": {"none": 0.4, "umbrella": 0.15, "dog": 0.15, "stroller": 0.15, "phone": 0.15},
        "surface": {"crosswalk": 1 / 3, "sidewalk": 1 / 3, "road": 1 / 3},
        "lighting": {"day": 0.7, "night": 0.3},
    })

    def __post_init__(self):
        if set(self.marginals) != set(FAMILIES):
            raise ValueError(f"marginals must cover exactly {sorted(FAMILIES)}")
        for fam, table in self.marginals.items():
            allowed = set(FAMILIES[fam]) | ({"none"} if fam == "carried_object" else set())
            if not set(table) <= allowed:
                raise ValueError(f"{fam}: unknown values {sorted(set(table) - allowed)}")
            probs = np.array(list(table.values()), dtype=float)
            if (probs < 0).any() or not np.isfinite(probs).all() or abs(probs.sum() - 1.0) > 1e-9:
                raise ValueError(f"{fam}: probabilities must be >= 0 and sum to 1")

    def to_json(self) -> str:
        return json.dumps({f: dict(t) for f, t in self.marginals.items()}, sort_keys=True)

    def hash(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()[:16]

    @classmethod
    def with_behaviors(cls, probs: Mapping[str, float]) -> SceneParams:
        base = {f: dict(t) for f, t in cls().marginals.items()}
        base["behavior"] = dict(probs)
        return cls(base)


def ambiguity_params() -> SceneParams:
    """Waiting and crossing only, equally likely."""
    return SceneParams.with_behaviors({"crossing": 0.5, "waiting": 0.5})


@dataclass(frozen=True)
class Scene:
    image: np.ndarray  # (3, H, W) in [0, 1]
    truth: AttributeSet
    seed: int

    @property
    def image_id(self) -> str:
        return f"{self.seed:016x}"


def _pick(rng: np.random.Generator, table: Mapping[str, float]) -> str:
    keys = list(table)
    p = np.array([table[k] for k in keys], dtype=float)
    return keys[int(rng.choice(len(keys), p=p / p.sum()))]


def sample_attributes(seed: int, params: SceneParams) -> AttributeSet:
    r = rngmod.stream(seed, "attributes")
    vals = {fam: _pick(r, params.marginals[fam]) for fam in FAMILIES}
    if vals["carried_object"] == "none":
        vals["carried_object"] = None
    return AttributeSet(**vals)


def _fill(img: np.ndarray, rows: tuple[int, int], cols: tuple[int, int], color) -> None:
    r0, r1 = max(rows[0], 0), min(rows[1], img.shape[1])
    c0, c1 = max(cols[0], 0), min(cols[1], img.shape[2])
    img[:, r0:r1, c0:c1] = np.asarray(color)[:, None, None]


def render(truth: AttributeSet, seed: int) -> np.ndarray:
    r = rngmod.stream(seed, "render")
    S = IMAGE_SIZE
    img = np.empty((3, S, S))
    _fill(img, (0, SKY_ROWS), (0, S), COLORS["sky_night" if truth.lighting == "night" else "sky_day"])
    ground = "sidewalk" if truth.surface == "sidewalk" else "road"
    _fill(img, (SKY_ROWS, S), (0, S), COLORS[ground])
    if truth.surface == "crosswalk":
        phase = int(r.integers(0, 7))
        for c in range(phase, S, 7):
            _fill(img, (SKY_ROWS + 8, S), (c, c + 3), COLORS["stripe"])

    # pedestrian-centred crop: the figure fills most of the frame height
    cx = 32 + int(r.integers(-4, 5))
    base = 60 + int(r.integers(-2, 2))
    body = COLORS[truth.pedestrian_type]
    torso_h = 10 if truth.pedestrian_type == "child" else 18
    leg_top = base - 16
    torso_top = leg_top - torso_h
    _fill(img, (torso_top, leg_top), (cx - 7, cx + 7), body)
    _fill(img, (torso_top - 8, torso_top), (cx - 4, cx + 4), body)

    legs = COLORS[truth.behavior]
    if truth.behavior == "crossing":
        spans = [(cx - 10, cx - 5), (cx + 5, cx + 10)]
    elif truth.behavior == "walking":
        spans = [(cx - 7, cx - 2), (cx + 2, cx + 7)]
    else:
        spans = [(cx - 5, cx + 5)]
    for c0, c1 in spans:
        _fill(img, (leg_top, base), (c0, c1), legs)

    obj = truth.carried_object
    if obj == "umbrella":
        _fill(img, (torso_top - 14, torso_top - 9), (cx - 12, cx + 12), COLORS[obj])
    elif obj == "dog":
        _fill(img, (base - 8, base), (cx + 11, cx + 23), COLORS[obj])
    elif obj == "stroller":
        _fill(img, (base - 12, base), (cx - 23, cx - 11), COLORS[obj])
    elif obj == "phone":
        _fill(img, (torso_top + 4, torso_top + 10), (cx + 7, cx + 11), COLORS[obj])

    img += r.normal(0.0, NOISE_STD, img.shape)
    return np.clip(img, 0.0, 1.0)


def generate_scene(seed: int, params: SceneParams | None = None) -> Scene:
    params = params or SceneParams()
    truth = sample_attributes(seed, params)
    return Scene(render(truth, seed), truth, int(seed))


def scene_seeds(seed: int, n: int) -> list[int]:
    return [rngmod.derive_seed(seed, "scene", i) for i in range(n)]


def generate_scenes(seed: int, n: int, params: SceneParams | None = None) -> list[Scene]:
    return [generate_scene(s, params) for s in scene_seeds(seed, n)]


# ------------------------------------------------------------------ detector

def _color_counts(image: np.ndarray, names: Sequence[str], tol: float = 0.1) -> dict[str, int]:
    px = image.reshape(3, -1).T
    return {n: int((np.abs(px - np.asarray(COLORS[n])).max(axis=1) <= tol).sum()) for n in names}


def detect_attributes(image: np.ndarray) -> AttributeSet:
    """Recover the attribute set from pixel signatures."""
    sky = image[2, :SKY_ROWS // 2].mean()
    lighting = "day" if sky > 0.5 else "night"
    ground = _color_counts(image[:, SKY_ROWS:], ("road", "sidewalk", "stripe"))
    if ground["stripe"] >= 40:
        surface = "crosswalk"
    else:
        surface = "sidewalk" if ground["sidewalk"] > ground["road"] else "road"
    types = _color_counts(image, FAMILIES["pedestrian_type"])
    behaviors = _color_counts(image, FAMILIES["behavior"])
    objects = _color_counts(image, FAMILIES["carried_object"])
    best_obj = max(objects, key=lambda k: objects[k])
    return AttributeSet(
        pedestrian_type=max(types, key=lambda k: types[k]),
        behavior=max(behaviors, key=lambda k: behaviors[k]),
        carried_object=best_obj if objects[best_obj] >= 3 else None,
        surface=surface,
        lighting=lighting,
    )


# ------------------------------------------------------------------- teacher

_TEMPLATES = {
    "pedestrian_type": ("There is {art} {w}.", "This is {art} {w}.", "Here is the {w}."),
    "behavior": ("It is {w}.", "They are {w}.", "The {w} is what it does."),
    "carried_object": ("It has {art} {w}.", "With {art} {w}.", "They have {art} {w} with them."),
    "surface": ("It is on the {w}.", "They are on the {w}.", "On the {w}."),
    "lighting": ("It is {w}.", "At {w}."),
}


def _sentence(r: np.random.Generator, family: str, word: str) -> str:
    options = _TEMPLATES[family]
    art = "an" if word[0] in "aeiou" else "a"
    return options[int(r.integers(len(options)))].format(w=word, art=art)


def teacher_annotate(scene: Scene, omit_prob: float = 0.3, seed: int = 0) -> Annotation:
    """Oracle teacher: mandatory attributes always, optional ones kept with prob 1 - omit_prob."""
    if not 0.0 <= omit_prob <= 1.0:
        raise ValueError("omit_prob must lie in [0, 1]")
    r = rngmod.stream(seed, "teacher", scene.seed)
    parts = []
    for fam in FAMILIES:
        val = getattr(scene.truth, fam)
        if val is None:
            continue
        keep = fam in MANDATORY or r.random() >= omit_prob
        for word in WORDS[val]:
            if keep:
                parts.append(_sentence(r, fam, word))
    return Annotation(scene.image_id, " ".join(parts))


# --------------------------------------------------------------- trajectories

@dataclass(frozen=True)
class TrajectorySample:
    history: np.ndarray  # (10, 2) metres, 10 Hz
    future: np.ndarray   # (30, 2)
    scene_seed: int
    behavior: str = ""


def generate_trajectory(scene: Scene, seed: int | None = None) -> TrajectorySample:
    """History depends only on the seed; the future depends on the behavior."""
    seed = scene.seed if seed is None else seed
    anchor = rngmod.stream(seed, "anchor").uniform(-2.0, 2.0, 2)
    history = anchor + rngmod.stream(seed, "history").normal(0.0, TRAJ_NOISE, (HISTORY_LEN, 2))
    behavior = scene.truth.behavior
    t = np.arange(1, FUTURE_LEN + 1)[:, None] / FRAME_RATE
    speed = SPEEDS.get(behavior, 0.0)
    direction = np.asarray(DIRECTIONS.get(behavior, (0.0, 0.0)))
    future = anchor + speed * t * direction
    future = future + rngmod.stream(seed, "future").normal(0.0, TRAJ_NOISE, (FUTURE_LEN, 2))
    return TrajectorySample(history, future, int(scene.seed), behavior)


def mean_future(behavior: str, anchor: np.ndarray) -> np.ndarray:
    """Noise-free future path for a behavior; the behavior oracle predicts this."""
    t = np.arange(1, FUTURE_LEN + 1)[:, None] / FRAME_RATE
    return anchor + SPEEDS.get(behavior, 0.0) * t * np.asarray(DIRECTIONS.get(behavior, (0.0, 0.0)))


# ------------------------------------------------------------------ file I/O

def write_manifest(path: str | Path, seeds: Sequence[int], params: SceneParams) -> None:
    h = params.hash()
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for s in seeds:
            fh.write(f"{s}\t{h}\n")


def read_manifest(path: str | Path) -> list[tuple[int, str]]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                s, h = line.rstrip("\n").split("\t")
                out.append((int(s), h))
    return out


def export_raw(images: Sequence[np.ndarray], blob_path: str | Path, manifest_path: str | Path) -> None:
    """Flat little-endian float32 blob plus a text manifest of shapes."""
    with open(blob_path, "wb") as blob, open(manifest_path, "w", encoding="utf-8") as man:
        offset = 0
        for i, img in enumerate(images):
            arr = np.ascontiguousarray(img, dtype="<f4")
            blob.write(arr.tobytes())
            man.write(f"{i}\t{'x'.join(map(str, arr.shape))}\t{offset}\n")
            offset += arr.nbytes


def import_raw(blob_path: str | Path, manifest_path: str | Path) -> list[np.ndarray]:
    data = Path(blob_path).read_bytes()
    out = []
    with open(manifest_path, encoding="utf-8") as man:
        for line in man:
            _, shape_s, off = line.rstrip("\n").split("\t")
            shape = tuple(int(v) for v in shape_s.split("x"))
            n = int(np.prod(shape))
            out.append(np.frombuffer(data, dtype="<f4", count=n, offset=int(off)).reshape(shape))
    return out


def write_trajectories(path: str | Path, samples: Sequence[TrajectorySample]) -> None:
    """One sample per line: scene seed, then 40 x,y pairs (history then future)."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for s in samples:
            pts = np.concatenate([s.history, s.future]).reshape(-1)
            fh.write(",".join([str(s.scene_seed)] + [repr(float(v)) for v in pts]) + "\n")


def read_trajectories(path: str | Path) -> list[TrajectorySample]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            fields = line.strip().split(",")
            if len(fields) != 1 + 2 * (HISTORY_LEN + FUTURE_LEN):
                raise ValueError(f"{path}:{lineno}: expected seed + 80 coordinates")
            pts = np.array([float(v) for v in fields[1:]]).reshape(-1, 2)
            out.append(TrajectorySample(pts[:HISTORY_LEN], pts[HISTORY_LEN:], int(fields[0])))
    return out
