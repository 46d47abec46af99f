#!/usr/bin/env python3
"""
Scene Graph

Background Gaussians in the world frame, object Gaussians in their local
frames carried by pose tracks, the sky cubemap and the semantic class table.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Dict, Tuple

from geometry.camera import Camera
from scene.gaussians import GaussianSet, BACKGROUND_VECTOR, OBJECT_SCALAR
from scene.pose import PoseTrack
from scene.sky import SkyCubemap
from utils.errors import ValidationError

logger = logging.getLogger(__name__)

DEFAULT_CLASS_NAMES = ('sky', 'road', 'vehicle', 'building', 'vegetation', 'pole', 'sign', 'other')
DEFAULT_VEHICLE_CLASS = 2


@dataclass
class ObjectModel:
    object_id: str
    gaussians: GaussianSet
    track: PoseTrack

    def copy(self):
        return ObjectModel(self.object_id, self.gaussians.copy(), self.track.copy())


@dataclass
class SceneGraph:
    background: GaussianSet
    objects: List[ObjectModel]
    sky: SkyCubemap
    num_classes: int = len(DEFAULT_CLASS_NAMES)
    vehicle_class_index: int = DEFAULT_VEHICLE_CLASS
    class_names: Tuple[str, ...] = DEFAULT_CLASS_NAMES
    cameras: Dict[Tuple[int, int], Camera] = field(default_factory=dict)

    def __post_init__(self):
        self.class_names = tuple(self.class_names)
        self.validate()

    def validate(self):
        if not 0 <= self.vehicle_class_index < self.num_classes:
            raise ValidationError(
                f"vehicle class {self.vehicle_class_index} outside [0, {self.num_classes})")
        if len(self.class_names) != self.num_classes:
            raise ValidationError("class_names length must equal num_classes")
        ids = [obj.object_id for obj in self.objects]
        if len(set(ids)) != len(ids):
            raise ValidationError(f"duplicate object ids: {ids}")
        if self.background.semantic.kind != BACKGROUND_VECTOR:
            raise ValidationError("background semantic field must be a vector field")
        if self.background.semantic.num_classes != self.num_classes:
            raise ValidationError("background semantic width differs from num_classes")
        for obj in self.objects:
            if obj.gaussians.semantic.kind != OBJECT_SCALAR:
                raise ValidationError(f"object {obj.object_id} semantic field must be scalar")
            if obj.gaussians.semantic.num_classes != self.num_classes:
                raise ValidationError(
                    f"object {obj.object_id} expands to {obj.gaussians.semantic.num_classes} classes, "
                    f"scene has {self.num_classes}")

    @property
    def object_ids(self):
        return [obj.object_id for obj in self.objects]

    def get_object(self, object_id):
        for obj in self.objects:
            if obj.object_id == str(object_id):
                return obj
        raise ValidationError(f"unknown object id {object_id!r}")

    def point_count(self):
        return self.background.count + sum(obj.gaussians.count for obj in self.objects)

    def copy(self):
        return SceneGraph(self.background.copy(), [obj.copy() for obj in self.objects],
                          self.sky.copy(), self.num_classes, self.vehicle_class_index,
                          self.class_names, dict(self.cameras))
