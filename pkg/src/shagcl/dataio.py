"""Synthetic long-tailed scene graphs, annotation files and run configuration.

Annotation files are JSON lines, one scene per line::

    {"image_id": 0, "objects": [{"class": "obj03", "box": [x1, y1, x2, y2]}, ...],
     "relations": [{"sub": 0, "obj": 2, "pred": "pred07"}, ...]}

A generated dataset directory holds ``train.jsonl``, ``test.jsonl`` and
``meta.json`` (class lists plus the feature-synthesis settings). Visual
features are never stored: :class:`FeatureSynthesizer` rebuilds them from the
annotations, so the files stay small and any conforming annotation file can be
fed to the model.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import sys
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError, DataError, ParseError
from .grouping import PredicateVocabulary, sort_vocabulary

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


@dataclass
class SceneRecord:
    image_id: int
    classes: list[str]
    boxes: np.ndarray  # [n, 4], x1 <= x2, y1 <= y2, all in [0, 1]
    relations: list[tuple[int, int, str]]

    def __post_init__(self):
        self.boxes = np.asarray(self.boxes, dtype=np.float64).reshape(-1, 4)
        n = len(self.classes)
        if self.boxes.shape[0] != n:
            raise DataError(f"image {self.image_id}: {n} classes but {self.boxes.shape[0]} boxes")
        if n and ((self.boxes < 0).any() or (self.boxes > 1).any()
                  or (self.boxes[:, 0] > self.boxes[:, 2]).any()
                  or (self.boxes[:, 1] > self.boxes[:, 3]).any()):
            raise DataError(f"image {self.image_id}: boxes must be ordered and within [0, 1]")
        for s, o, _ in self.relations:
            if s == o or not (0 <= s < n and 0 <= o < n):
                raise DataError(f"image {self.image_id}: bad relation endpoints ({s}, {o})")

    @property
    def num_objects(self) -> int:
        return len(self.classes)

    def to_json(self) -> dict:
        return {
            "image_id": self.image_id,
            "objects": [{"class": c, "box": [round(float(v), 4) for v in b]}
                        for c, b in zip(self.classes, self.boxes)],
            "relations": [{"sub": s, "obj": o, "pred": p} for s, o, p in self.relations],
        }

    def __eq__(self, other):
        if not isinstance(other, SceneRecord):
            return NotImplemented
        return (self.image_id == other.image_id and self.classes == other.classes
                and np.array_equal(self.boxes, other.boxes)
                and list(self.relations) == list(other.relations))


@dataclass
class SyntheticSpec:
    object_classes: int = 10
    predicate_classes: int = 20
    zipf_exponent: float = 1.2
    scenes: int = 2858
    objects_per_scene: tuple[int, int] = (3, 5)
    relations_per_scene: tuple[int, int] = (1, 2)
    feature_dim: int = 32
    seed: int = 0
    test_fraction: float = 0.3
    relation_signal: float = 1.0
    object_signal: float = 1.0
    noise: float = 1.0
    overlap: float = 0.0
    parents: int = 3

    def validate(self):
        lo, hi = self.objects_per_scene
        rlo, rhi = self.relations_per_scene
        if self.object_classes < 1 or self.predicate_classes < 1:
            raise ConfigError("need at least one object and one predicate class")
        if self.zipf_exponent < 0:
            raise ConfigError("zipf_exponent must be >= 0")
        if self.scenes < 2:
            raise ConfigError("need at least two scenes")
        if not 2 <= lo <= hi:
            raise ConfigError(f"objects_per_scene {self.objects_per_scene} must satisfy 2 <= lo <= hi")
        if not 1 <= rlo <= rhi:
            raise ConfigError(f"relations_per_scene {self.relations_per_scene} must satisfy 1 <= lo <= hi")
        if rlo > lo // 2:
            raise ConfigError(f"{rlo} disjoint relations do not fit in {lo} objects")
        if not 0 < self.test_fraction < 1:
            raise ConfigError("test_fraction must lie in (0, 1)")
        if self.feature_dim < 1:
            raise ConfigError("feature_dim must be positive")
        if not 0 <= self.overlap < 1:
            raise ConfigError("overlap must lie in [0, 1)")
        if self.parents < 1:
            raise ConfigError("parents must be >= 1")


def zipf_probabilities(m: int, s: float) -> np.ndarray:
    w = np.arange(1, m + 1, dtype=np.float64) ** (-s)
    return w / w.sum()


def class_names(prefix: str, n: int) -> list[str]:
    width = max(2, len(str(n - 1)))
    return [f"{prefix}{i:0{width}d}" for i in range(n)]


@dataclass
class FeatureSettings:
    dim: int
    seed: int
    relation_signal: float = 1.0
    object_signal: float = 1.0
    noise: float = 1.0
    overlap: float = 0.0
    parents: int = 3


class FeatureSynthesizer:
    """Builds per-object visual features from a scene's annotations.

    ``v_i = object_signal * c[class_i] + relation_signal * (a[p] if i is the
    subject of predicate p, b[p] if the object) + noise * N(0, I)`` with fixed
    unit directions ``c``, ``a``, ``b``. Predicates are therefore only
    separable through the visual features of both endpoints.

    With ``overlap > 0`` every predicate ranked below the first ``parents``
    leans towards one of them (``a[p] ~ overlap * a[parent] + ...``), so rare
    predicates look like refinements of frequent ones and a frequency-biased
    classifier falls back to the frequent parent.
    """

    def __init__(self, settings: FeatureSettings, object_classes: Sequence[str],
                 predicate_classes: Sequence[str]):
        self.settings = settings
        self.object_index = {c: i for i, c in enumerate(object_classes)}
        self.predicate_index = {p: i for i, p in enumerate(predicate_classes)}
        rng = np.random.default_rng([settings.seed, 7919])
        d = settings.dim
        self.object_dirs = _unit_rows(rng.normal(size=(len(object_classes), d)))
        self.subject_dirs = _lean(_unit_rows(rng.normal(size=(len(predicate_classes), d))),
                                  settings.overlap, settings.parents)
        self.object_role_dirs = _lean(_unit_rows(rng.normal(size=(len(predicate_classes), d))),
                                      settings.overlap, settings.parents)

    def visual(self, scene: SceneRecord) -> np.ndarray:
        st = self.settings
        rng = np.random.default_rng([st.seed, 104729, scene.image_id])
        v = st.noise * rng.normal(size=(scene.num_objects, st.dim))
        for i, c in enumerate(scene.classes):
            v[i] += st.object_signal * self.object_dirs[self.object_index[c]]
        for s, o, p in scene.relations:
            k = self.predicate_index[p]
            v[s] += st.relation_signal * self.subject_dirs[k]
            v[o] += st.relation_signal * self.object_role_dirs[k]
        return v


def _unit_rows(a: np.ndarray) -> np.ndarray:
    return a / np.linalg.norm(a, axis=1, keepdims=True)


def _lean(dirs: np.ndarray, overlap: float, parents: int) -> np.ndarray:
    if overlap == 0:
        return dirs
    out = dirs.copy()
    for p in range(parents, len(dirs)):
        out[p] = overlap * dirs[p % parents] + np.sqrt(1 - overlap ** 2) * dirs[p]
    return _unit_rows(out)


@dataclass
class Dataset:
    train: list[SceneRecord]
    test: list[SceneRecord]
    object_classes: list[str]
    predicate_classes: list[str]
    features: FeatureSettings
    spec: dict = field(default_factory=dict)

    @property
    def vocab(self) -> PredicateVocabulary:
        return training_vocabulary(self.train, self.predicate_classes)

    def synthesizer(self) -> FeatureSynthesizer:
        return FeatureSynthesizer(self.features, self.object_classes, self.predicate_classes)

    def digest(self) -> str:
        h = hashlib.sha256()
        for name in ("train", "test"):
            for scene in getattr(self, name):
                h.update(json.dumps(scene.to_json(), separators=(",", ":")).encode())
        h.update(json.dumps(self.meta(), sort_keys=True).encode())
        return h.hexdigest()

    def meta(self) -> dict:
        return {
            "object_classes": self.object_classes,
            "predicate_classes": self.predicate_classes,
            "features": dataclasses.asdict(self.features),
            "spec": self.spec,
        }


def training_vocabulary(scenes: Sequence[SceneRecord], names: Sequence[str] | None = None
                        ) -> PredicateVocabulary:
    """Predicate counts tallied over ``scenes``; classes never seen are dropped."""
    tally = Counter(p for s in scenes for _, _, p in s.relations)
    order = list(names) if names is not None else sorted(tally)
    return sort_vocabulary([(n, tally[n]) for n in order if tally[n] > 0])


def _random_box(rng: np.random.Generator) -> list[float]:
    w, h = rng.uniform(0.1, 0.6, size=2)
    x1 = rng.uniform(0, 1 - w)
    y1 = rng.uniform(0, 1 - h)
    return [round(x1, 4), round(y1, 4), round(x1 + w, 4), round(y1 + h, 4)]


def generate_dataset(spec: SyntheticSpec) -> Dataset:
    """Zipf-distributed predicates over random scenes, stratified into train/test."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    objects = class_names("obj", spec.object_classes)
    preds = class_names("pred", spec.predicate_classes)
    probs = zipf_probabilities(spec.predicate_classes, spec.zipf_exponent)
    scenes = []
    for image_id in range(spec.scenes):
        n = int(rng.integers(spec.objects_per_scene[0], spec.objects_per_scene[1] + 1))
        classes = [objects[i] for i in rng.integers(0, spec.object_classes, size=n)]
        boxes = [_random_box(rng) for _ in range(n)]
        r = int(rng.integers(spec.relations_per_scene[0], spec.relations_per_scene[1] + 1))
        r = min(r, n // 2)
        order = rng.permutation(n)
        labels = rng.choice(spec.predicate_classes, size=r, p=probs)
        relations = [(int(order[2 * t]), int(order[2 * t + 1]), preds[labels[t]]) for t in range(r)]
        scenes.append(SceneRecord(image_id, classes, np.array(boxes), relations))
    train, test = stratified_split(scenes, preds, spec.test_fraction, rng)
    features = FeatureSettings(spec.feature_dim, spec.seed, spec.relation_signal,
                               spec.object_signal, spec.noise, spec.overlap, spec.parents)
    return Dataset(train, test, objects, preds, features, _spec_dict(spec))


def _spec_dict(spec: SyntheticSpec) -> dict:
    d = dataclasses.asdict(spec)
    d["objects_per_scene"] = list(spec.objects_per_scene)
    d["relations_per_scene"] = list(spec.relations_per_scene)
    return d


def stratified_split(scenes: list[SceneRecord], predicate_order: Sequence[str],
                     test_fraction: float, rng: np.random.Generator):
    """Split scenes so each predicate keeps roughly ``test_fraction`` of its scenes in test.

    Scenes are stratified by their rarest predicate (largest rank in
    ``predicate_order``); each stratum with two or more scenes sends at least
    one to test. The total is then trimmed to ``round(test_fraction * N)`` by
    moving scenes from the largest strata.
    """
    rank = {p: i for i, p in enumerate(predicate_order)}
    strata: dict[int, list[int]] = {}
    for idx, scene in enumerate(scenes):
        key = max(rank[p] for _, _, p in scene.relations) if scene.relations else -1
        strata.setdefault(key, []).append(idx)
    in_test: dict[int, list[int]] = {}
    rest: dict[int, list[int]] = {}
    for key in sorted(strata):
        members = [strata[key][i] for i in rng.permutation(len(strata[key]))]
        n_test = int(round(test_fraction * len(members)))
        if len(members) >= 2:
            n_test = min(max(n_test, 1), len(members) - 1)
        else:
            n_test = 0
        in_test[key] = members[:n_test]
        rest[key] = members[n_test:]
    target = int(round(test_fraction * len(scenes)))
    by_size = sorted(strata, key=lambda k: (-len(strata[k]), k))
    current = sum(len(v) for v in in_test.values())
    for key in by_size:
        if current == target:
            break
        if current < target:
            move = min(target - current, max(len(rest[key]) - 1, 0))
            in_test[key] += rest[key][:move]
            rest[key] = rest[key][move:]
            current += move
        else:
            move = min(current - target, max(len(in_test[key]) - 1, 0))
            rest[key] = in_test[key][len(in_test[key]) - move:] + rest[key]
            in_test[key] = in_test[key][: len(in_test[key]) - move]
            current -= move
    test_ids = {i for v in in_test.values() for i in v}
    train = [s for i, s in enumerate(scenes) if i not in test_ids]
    test = [s for i, s in enumerate(scenes) if i in test_ids]
    return train, test


# ---------------------------------------------------------------- files

def write_annotations(path: str | Path, scenes: Sequence[SceneRecord]):
    with open(path, "w") as fh:
        for scene in scenes:
            fh.write(json.dumps(scene.to_json(), separators=(",", ":")))
            fh.write("\n")


def write_dataset(dataset: Dataset, out_dir: str | Path) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_annotations(out / "train.jsonl", dataset.train)
    write_annotations(out / "test.jsonl", dataset.test)
    with open(out / "meta.json", "w") as fh:
        json.dump(dataset.meta(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return out


def parse_annotations(path: str | Path, object_classes: Sequence[str] | None = None,
                      predicate_classes: Sequence[str] | None = None) -> list[SceneRecord]:
    """Read a JSON-lines annotation file, validating class names when lists are given."""
    known_obj = set(object_classes) if object_classes is not None else None
    known_pred = set(predicate_classes) if predicate_classes is not None else None
    scenes = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                raw = json.loads(line)
                image_id = int(raw["image_id"])
                classes = [str(o["class"]) for o in raw["objects"]]
                boxes = [[float(v) for v in o["box"]] for o in raw["objects"]]
                rels = [(int(r["sub"]), int(r["obj"]), str(r["pred"])) for r in raw["relations"]]
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ParseError(f"{path}: {exc}", line=lineno) from None
            if any(len(b) != 4 for b in boxes):
                raise ParseError(f"{path}: boxes need 4 coordinates", line=lineno)
            if known_obj is not None:
                for c in classes:
                    if c not in known_obj:
                        raise DataError(f"{path}:{lineno}: unknown object class {c!r}")
            if known_pred is not None:
                for _, _, p in rels:
                    if p not in known_pred:
                        raise DataError(f"{path}:{lineno}: unknown predicate {p!r}")
            try:
                scenes.append(SceneRecord(image_id, classes, np.array(boxes).reshape(-1, 4), rels))
            except DataError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
    if not scenes:
        raise ParseError(f"{path}: no scenes")
    return scenes


def load_annotations(path: str | Path) -> Dataset:
    """Load a dataset directory, or a single annotation file treated as training data.

    Predicate counts (and so the vocabulary order) come from the training split.
    """
    path = Path(path)
    if path.is_dir():
        meta_path = path / "meta.json"
        if not meta_path.exists():
            raise ParseError(f"{path}: missing meta.json")
        with open(meta_path) as fh:
            meta = json.load(fh)
        objects, preds = meta["object_classes"], meta["predicate_classes"]
        train = parse_annotations(path / "train.jsonl", objects, preds)
        test_path = path / "test.jsonl"
        test = parse_annotations(test_path, objects, preds) if test_path.exists() else []
        features = FeatureSettings(**meta["features"])
        return Dataset(train, test, objects, preds, features, meta.get("spec", {}))
    if not path.exists():
        raise FileNotFoundError(path)
    train = parse_annotations(path)
    objects = sorted({c for s in train for c in s.classes})
    preds = sorted({p for s in train for _, _, p in s.relations})
    return Dataset(train, [], objects, preds, FeatureSettings(SyntheticSpec.feature_dim, 0))


# ---------------------------------------------------------------- run config

@dataclass
class RunConfig:
    """Settings for one training run; every field can be set from a TOML file."""

    mu: float = 4.0
    alpha: float = 1.0
    strategy: str = "topdown"
    mode: str = "predcls"
    gcl: bool = True
    ckd: bool = True
    resample: bool = True
    obj_layers: int = 4
    rel_layers: int = 2
    model_dim: int = 32
    heads: int = 4
    ffn_dim: int = 64
    embed_dim: int = 32
    spatial_dim: int = 16
    union_dim: int = 32
    seed: int = 1
    steps: int = 2000
    batch_size: int = 8
    lr: float = 1e-3
    optimizer: str = "sgd"
    momentum: float = 0.9
    weight_decay: float = 0.0
    warmup_fraction: float = 0.05
    decay_at: tuple[float, ...] = (0.7, 0.9)
    decay_factor: float = 0.1
    label_noise: float = 0.2
    box_jitter: float = 0.02
    log_every: int = 50

    def validate(self):
        if self.mu < 1:
            raise ConfigError(f"mu must be >= 1, got {self.mu}")
        if self.alpha < 0:
            raise ConfigError(f"alpha must be >= 0, got {self.alpha}")
        if self.strategy not in ("adjacent", "topdown"):
            raise ConfigError(f"unknown strategy {self.strategy!r}")
        if self.mode not in ("predcls", "sgcls", "sgdet_sim"):
            raise ConfigError(f"unknown mode {self.mode!r}")
        if self.optimizer not in ("sgd", "adam"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        for name in ("obj_layers", "rel_layers", "model_dim", "heads", "ffn_dim",
                     "embed_dim", "spatial_dim", "union_dim", "steps", "batch_size"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.model_dim % self.heads:
            raise ConfigError("model_dim must be divisible by heads")
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        return self

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **{k: v for k, v in changes.items() if v is not None})

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["decay_at"] = list(self.decay_at)
        return d

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        fields = {f.name: f for f in dataclasses.fields(cls)}
        unknown = set(raw) - set(fields)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        values = {}
        defaults = cls()
        for key, value in raw.items():
            kind = type(getattr(defaults, key))
            try:
                if kind is bool:
                    if not isinstance(value, bool):
                        raise TypeError
                    values[key] = value
                elif kind is tuple:
                    values[key] = tuple(float(v) for v in value)
                else:
                    values[key] = kind(value)
            except (TypeError, ValueError):
                raise ConfigError(f"config key {key!r}: cannot use {value!r}") from None
        return cls(**values).validate()


PACKAGED_CONFIGS = Path(__file__).parent / "configs"


def resolve_config_path(path: str | Path) -> Path:
    """An existing file, or the name of a config shipped with the package (``benchmark``)."""
    path = Path(path)
    if path.exists():
        return path
    packaged = PACKAGED_CONFIGS / (path.name if path.suffix else path.name + ".toml")
    if packaged.exists():
        return packaged
    raise ConfigError(f"config file not found: {path}")


def read_data_spec(path: str | Path) -> SyntheticSpec:
    """Dataset settings from a config's ``[data]`` table (defaults when absent)."""
    with open(resolve_config_path(path), "rb") as fh:
        try:
            raw = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
    return synthetic_spec_from_dict(raw.get("data", {}))


def read_config(path: str | Path) -> RunConfig:
    path = resolve_config_path(path)
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    raw.pop("data", None)
    return RunConfig.from_dict(raw)


def dump_config(config: RunConfig) -> str:
    lines = []
    for key, value in config.to_dict().items():
        if isinstance(value, bool):
            text = "true" if value else "false"
        elif isinstance(value, str):
            text = json.dumps(value)
        elif isinstance(value, list):
            text = "[" + ", ".join(repr(v) for v in value) + "]"
        else:
            text = repr(value)
        lines.append(f"{key} = {text}")
    return "\n".join(lines) + "\n"


def synthetic_spec_from_dict(raw: dict) -> SyntheticSpec:
    fields = {f.name for f in dataclasses.fields(SyntheticSpec)}
    unknown = set(raw) - fields
    if unknown:
        raise ConfigError(f"unknown dataset keys: {sorted(unknown)}")
    raw = dict(raw)
    for key in ("objects_per_scene", "relations_per_scene"):
        if key in raw:
            raw[key] = tuple(int(v) for v in raw[key])
    spec = SyntheticSpec(**raw)
    spec.validate()
    return spec


def expected_class_counts(spec: SyntheticSpec) -> np.ndarray:
    """Expected relation count per predicate rank over all scenes (train and test)."""
    ns = range(spec.objects_per_scene[0], spec.objects_per_scene[1] + 1)
    rs = range(spec.relations_per_scene[0], spec.relations_per_scene[1] + 1)
    mean_rel = float(np.mean([min(r, n // 2) for n in ns for r in rs]))
    return spec.scenes * mean_rel * zipf_probabilities(spec.predicate_classes, spec.zipf_exponent)

