"""Encoder-decoder scene-graph pipeline over synthetic proposals.

Objects are refined by an SHA stack over a visual stream ``[v_i, FC(s_i)]`` and
a semantic stream ``Emb(l_i)``; labels are decoded from the refined features;
a second SHA stack over ``[v_i, x_i]`` and ``Emb(l'_i)`` yields pair features
for the predicate classifiers.

Scenes are batched only when they have the same number of objects, so the
attention never needs masking.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import numcore as nc
from .dataio import RunConfig, SceneRecord
from .errors import DataError, ShapeError
from .gcl import ClassifierBank, RelationBatch
from .grouping import GroupPartition
from .layers import Embedding, Linear
from .sha import ShaStack

MODES = ("predcls", "sgcls", "sgdet_sim")
UNION_GEOMETRY_DIM = 8


@dataclass
class Proposal:
    visual: np.ndarray
    spatial: np.ndarray
    initial_label: int

    def __post_init__(self):
        self.spatial = np.asarray(self.spatial, dtype=np.float64)
        if self.spatial.shape != (4,):
            raise ShapeError("spatial feature needs exactly 4 box coordinates")
        x1, y1, x2, y2 = self.spatial
        if x1 > x2 or y1 > y2:
            raise DataError(f"box {self.spatial} is not ordered")


@dataclass
class EntityState:
    refined: np.ndarray  # x_i
    final_label: int  # l'_i
    final_feature: np.ndarray  # x'_i


@dataclass
class SceneBatch:
    """Scenes with equal object counts stacked along a leading axis."""

    visual: np.ndarray  # [B, n, F]
    boxes: np.ndarray  # [B, n, 4]
    initial_labels: np.ndarray  # [B, n]
    gt_labels: np.ndarray  # [B, n]
    relations: np.ndarray  # [R, 4] rows (scene, subject, object, predicate vocab index)
    image_ids: list[int] = field(default_factory=list)

    @property
    def num_scenes(self) -> int:
        return self.visual.shape[0]

    @property
    def num_objects(self) -> int:
        return self.visual.shape[1]


def generate_proposals(scene: SceneRecord, visual: np.ndarray, object_index: dict,
                       mode: str = "predcls", seed: int = 0, label_noise: float = 0.2,
                       box_jitter: float = 0.02) -> list[Proposal]:
    """Stand-in for a detector.

    ``predcls`` keeps ground-truth boxes and labels; ``sgcls`` keeps boxes but
    replaces each label with a different random class with probability
    ``label_noise``; ``sgdet_sim`` additionally jitters the boxes. This only
    emulates detection noise; no detector is involved.
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    if scene.num_objects < 2:
        raise DataError(f"image {scene.image_id} has fewer than two objects")
    labels = np.array([object_index[c] for c in scene.classes])
    boxes = scene.boxes.copy()
    if mode != "predcls":
        rng = np.random.default_rng([seed, 15485863, scene.image_id])
        num_classes = len(object_index)
        flip = rng.random(len(labels)) < label_noise
        if num_classes > 1:
            shift = rng.integers(1, num_classes, size=len(labels))
            labels = np.where(flip, (labels + shift) % num_classes, labels)
        if mode == "sgdet_sim":
            boxes = np.clip(boxes + rng.normal(0, box_jitter, size=boxes.shape), 0.0, 1.0)
            boxes = np.concatenate([np.minimum(boxes[:, :2], boxes[:, 2:]),
                                    np.maximum(boxes[:, :2], boxes[:, 2:])], axis=1)
    return [Proposal(visual[i], boxes[i], int(labels[i])) for i in range(scene.num_objects)]


def union_geometry(sub_boxes: np.ndarray, obj_boxes: np.ndarray) -> np.ndarray:
    """Union box plus centre offset and log size ratios of subject vs object."""
    union = np.concatenate([np.minimum(sub_boxes[:, :2], obj_boxes[:, :2]),
                            np.maximum(sub_boxes[:, 2:], obj_boxes[:, 2:])], axis=1)
    sw = np.maximum(sub_boxes[:, 2] - sub_boxes[:, 0], 1e-3)
    sh = np.maximum(sub_boxes[:, 3] - sub_boxes[:, 1], 1e-3)
    ow = np.maximum(obj_boxes[:, 2] - obj_boxes[:, 0], 1e-3)
    oh = np.maximum(obj_boxes[:, 3] - obj_boxes[:, 1], 1e-3)
    dx = (obj_boxes[:, 0] + obj_boxes[:, 2] - sub_boxes[:, 0] - sub_boxes[:, 2]) / 2
    dy = (obj_boxes[:, 1] + obj_boxes[:, 3] - sub_boxes[:, 1] - sub_boxes[:, 3]) / 2
    extra = np.stack([dx, dy, np.log(ow / sw), np.log(oh / sh)], axis=1)
    return np.concatenate([union, extra], axis=1)


@dataclass
class EncodedBatch:
    refined: nc.Tensor  # [B, n, d] object encoder output x_i
    object_logits: nc.Tensor  # [B, n, C]
    final_labels: np.ndarray  # [B, n]
    relation_features: nc.Tensor  # [B, n, d] relation encoder output x'_i


class SceneGraphModel(nc.Module):
    """Object encoder, object decoder, relation encoder, union features and classifier bank."""

    def __init__(self, config: RunConfig, feature_dim: int, num_object_classes: int,
                 partition: GroupPartition):
        rng = np.random.default_rng(config.seed)
        c = config
        self.feature_dim = feature_dim
        self.num_object_classes = num_object_classes
        self.mode = c.mode
        self.embed = Embedding(num_object_classes, c.embed_dim, rng)
        self.spatial_fc = Linear(4, c.spatial_dim, rng)
        self.obj_visual_in = Linear(feature_dim + c.spatial_dim, c.model_dim, rng)
        self.obj_semantic_in = Linear(c.embed_dim, c.model_dim, rng)
        self.obj_encoder = ShaStack(c.obj_layers, c.model_dim, c.heads, c.ffn_dim, rng)
        self.obj_decoder = Linear(c.model_dim, num_object_classes, rng)
        self.rel_visual_in = Linear(feature_dim + c.model_dim, c.model_dim, rng)
        self.rel_semantic_in = Linear(c.embed_dim, c.model_dim, rng)
        self.rel_encoder = ShaStack(c.rel_layers, c.model_dim, c.heads, c.ffn_dim, rng)
        self.union_fc = Linear(2 * feature_dim + UNION_GEOMETRY_DIM, c.union_dim, rng)
        self.bank = ClassifierBank(partition, c.model_dim, c.union_dim, rng)

    def encode_objects(self, visual: np.ndarray, boxes: np.ndarray, labels: np.ndarray) -> nc.Tensor:
        labels = np.asarray(labels)
        if labels.size and (labels.min() < 0 or labels.max() >= self.num_object_classes):
            raise DataError(f"object label outside 0..{self.num_object_classes - 1}")
        spatial = nc.relu(self.spatial_fc(nc.Tensor(boxes)))
        x = self.obj_visual_in(nc.concat([nc.Tensor(visual), spatial], axis=-1))
        y = self.obj_semantic_in(self.embed(labels))
        return self.obj_encoder(x, y)

    def object_logits(self, refined: nc.Tensor) -> nc.Tensor:
        return self.obj_decoder(refined)

    def encode_relations(self, visual: np.ndarray, refined: nc.Tensor, labels: np.ndarray) -> nc.Tensor:
        if refined.shape[:-1] != np.shape(labels) or visual.shape[:-1] != np.shape(labels):
            raise DataError("visual features, refined features and labels are misaligned")
        x = self.rel_visual_in(nc.concat([nc.Tensor(visual), refined], axis=-1))
        y = self.rel_semantic_in(self.embed(labels))
        return self.rel_encoder(x, y)

    def encode(self, batch: SceneBatch) -> EncodedBatch:
        refined = self.encode_objects(batch.visual, batch.boxes, batch.initial_labels)
        logits = self.object_logits(refined)
        if self.mode == "predcls":
            final = batch.gt_labels
        else:
            final = argmax_lowest(logits.data)
        rel = self.encode_relations(batch.visual, refined, final)
        return EncodedBatch(refined, logits, final, rel)

    def pair_batch(self, batch: SceneBatch, encoded: EncodedBatch, pairs: np.ndarray,
                   labels: np.ndarray | None = None) -> RelationBatch:
        """Gather subject/object features for ``pairs`` rows ``(scene, sub, obj)``."""
        pairs = np.asarray(pairs, dtype=np.intp).reshape(-1, 3)
        n = batch.num_objects
        flat = nc.reshape(encoded.relation_features, (-1, encoded.relation_features.shape[-1]))
        si = pairs[:, 0] * n + pairs[:, 1]
        oi = pairs[:, 0] * n + pairs[:, 2]
        vis = batch.visual.reshape(-1, batch.visual.shape[-1])
        boxes = batch.boxes.reshape(-1, 4)
        union_in = np.concatenate([vis[si], vis[oi], union_geometry(boxes[si], boxes[oi])], axis=1)
        union = nc.relu(self.union_fc(nc.Tensor(union_in)))
        if labels is None:
            labels = np.full(len(pairs), -1)
        return RelationBatch(nc.take_rows(flat, si), nc.take_rows(flat, oi), union,
                             np.asarray(labels, dtype=np.intp))

    def relation_pairs(self, batch: SceneBatch, encoded: EncodedBatch | None = None) -> RelationBatch:
        """Pairs for the annotated relations of ``batch`` (training)."""
        encoded = encoded or self.encode(batch)
        rel = batch.relations
        return self.pair_batch(batch, encoded, rel[:, :3], rel[:, 3])

    def object_loss(self, batch: SceneBatch, encoded: EncodedBatch) -> nc.Tensor:
        logits = nc.reshape(encoded.object_logits, (-1, self.num_object_classes))
        target = batch.gt_labels.reshape(-1)
        return nc.mean(nc.neg(nc.pick(nc.log_softmax(logits, axis=-1), target)))


def argmax_lowest(scores: np.ndarray, axis: int = -1) -> np.ndarray:
    """Argmax that resolves ties to the lowest index (numpy's documented behaviour)."""
    return np.argmax(scores, axis=axis)


def all_directed_pairs(num_scenes: int, n: int) -> np.ndarray:
    sub, obj = np.nonzero(~np.eye(n, dtype=bool))
    rows = [np.stack([np.full(len(sub), b), sub, obj], axis=1) for b in range(num_scenes)]
    return np.concatenate(rows, axis=0)


def predict_predicates(pairs: RelationBatch, bank: ClassifierBank) -> tuple[np.ndarray, np.ndarray]:
    """Argmax predicate and full distribution from the last classifier only."""
    with nc.no_grad():
        probs = nc.softmax(bank.logits(bank.K, pairs), axis=-1).data
    return argmax_lowest(probs), probs


def decode_object_labels(refined: nc.Tensor, model: SceneGraphModel) -> np.ndarray:
    return argmax_lowest(model.object_logits(refined).data)


def stack_scenes(scenes: Sequence[SceneRecord], visuals: Sequence[np.ndarray],
                 proposals: Sequence[Sequence[Proposal]], object_index: dict,
                 predicate_index: dict) -> SceneBatch:
    n = scenes[0].num_objects
    if any(s.num_objects != n for s in scenes):
        raise ShapeError("scenes in one batch must have the same number of objects")
    rel_rows = []
    for b, scene in enumerate(scenes):
        for s, o, p in scene.relations:
            if p in predicate_index:
                rel_rows.append((b, s, o, predicate_index[p]))
    relations = np.array(rel_rows, dtype=np.intp).reshape(-1, 4)
    return SceneBatch(
        visual=np.stack(visuals),
        boxes=np.stack([[p.spatial for p in props] for props in proposals]),
        initial_labels=np.array([[p.initial_label for p in props] for props in proposals]),
        gt_labels=np.array([[object_index[c] for c in s.classes] for s in scenes]),
        relations=relations,
        image_ids=[s.image_id for s in scenes],
    )


def encode_objects(model: SceneGraphModel, proposals: Sequence[Proposal]) -> nc.Tensor:
    """Refined features ``x_i`` for one scene's proposals, shape ``[n, d]``."""
    if not proposals:
        raise DataError("no proposals")
    visual = np.stack([p.visual for p in proposals])
    boxes = np.stack([p.spatial for p in proposals])
    labels = np.array([p.initial_label for p in proposals])
    return model.encode_objects(visual, boxes, labels)


def encode_relations(model: SceneGraphModel, proposals: Sequence[Proposal], refined: nc.Tensor,
                     labels: Sequence[int]) -> nc.Tensor:
    if len(proposals) != refined.shape[0] or len(labels) != len(proposals):
        raise DataError("proposals, refined features and labels must align")
    visual = np.stack([p.visual for p in proposals])
    return model.encode_relations(visual, refined, np.asarray(labels))
