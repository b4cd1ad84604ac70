"""Training-time augmentation.

Each of noise, scaling, rotation and dropout is switched on independently
with probability 0.5 and the active ones run in a random order. With
``with_attacks`` a random catalogue attack is added half of the time.
Re-normalization always runs last. Validation and test clouds are never
augmented.

The plan (which ops, in which order) comes from stream 0 of the seed and the
op parameters from stream 1, so plan_augmentation() reports exactly what
augment() does.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, List, Optional

import numpy as np

from point_watermark import watermark_config as cfg
from point_watermark.attacks import (
    AttackSpec,
    add_gaussian_noise,
    apply_attack,
    attack_catalogue,
    drop_points,
    floor_count,
    random_rotation,
    rotate,
)
from point_watermark.geometry_io import as_cloud, normalize
from point_watermark.seeding import derive_seed, make_rng

AUGMENT_OPS = ("noise", "scale", "rotation", "dropout")


@dataclass
class AugmentationPlan:
    ops: List[str] = field(default_factory=list)
    attack: Optional[AttackSpec] = None


def plan_augmentation(seed: int, with_attacks: bool = False) -> AugmentationPlan:
    rng = make_rng(seed, 0)
    active = rng.random(len(AUGMENT_OPS)) < cfg.AUGMENT_PROBABILITY
    order = rng.permutation(len(AUGMENT_OPS))
    plan = AugmentationPlan(ops=[AUGMENT_OPS[i] for i in order if active[i]])
    if with_attacks and rng.random() < cfg.AUGMENT_PROBABILITY:
        catalogue = attack_catalogue()
        choice = catalogue[int(rng.integers(len(catalogue)))]
        plan.attack = choice.with_seed(derive_seed(seed, 2))
    return plan


def _apply_op(pts: np.ndarray, op: str, rng: np.random.Generator) -> np.ndarray:
    if op == "noise":
        return add_gaussian_noise(pts, cfg.AUGMENT_NOISE_SIGMA, rng)
    if op == "scale":
        low, high = cfg.AUGMENT_SCALE_RANGE
        return pts * rng.uniform(low, high)
    if op == "rotation":
        return rotate(pts, random_rotation(rng))
    return drop_points(pts, floor_count(cfg.AUGMENT_DROPOUT_FRACTION, len(pts)), rng)


def augment(cloud: Any, seed: int, with_attacks: bool = False) -> np.ndarray:
    """Randomly augmented, re-normalized copy of ``cloud``."""
    pts = as_cloud(cloud)
    plan = plan_augmentation(seed, with_attacks)
    rng = make_rng(seed, 1)
    for op in plan.ops:
        pts = _apply_op(pts, op, rng)
    if plan.attack is not None:
        pts = apply_attack(pts, plan.attack)
    return normalize(pts)[0]
