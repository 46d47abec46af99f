#!/usr/bin/env python3
"""
Scene Editing

Edit scripts translate, rotate or swap objects. Frame ranges are half-open
[start, end); omitted ranges cover the whole track.

Script format (JSON):

    {"edits": [
        {"op": "translate", "object_id": "3", "delta": [1.0, 0, 0], "frames": [0, 10]},
        {"op": "rotate_yaw", "object_id": "3", "angle": 0.5},
        {"op": "swap", "object_ids": ["3", "7"]}
    ]}
"""

import logging
from dataclasses import dataclass
from typing import List, Optional, Tuple, Union

import numpy as np

from utils.errors import ValidationError
from utils.storage import load_json

logger = logging.getLogger(__name__)


@dataclass
class Translate:
    object_id: str
    delta: np.ndarray
    frames: Optional[Tuple[int, int]] = None


@dataclass
class RotateYaw:
    object_id: str
    angle: float
    frames: Optional[Tuple[int, int]] = None


@dataclass
class Swap:
    object_id_a: str
    object_id_b: str


Edit = Union[Translate, RotateYaw, Swap]


@dataclass
class EditScript:
    edits: List[Edit]

    @classmethod
    def from_dict(cls, data):
        edits = []
        for i, entry in enumerate(data.get('edits', [])):
            op = entry.get('op')
            frames = tuple(int(v) for v in entry['frames']) if entry.get('frames') is not None else None
            if frames is not None and len(frames) != 2:
                raise ValidationError(f"edit {i}: frames must be [start, end]")
            try:
                if op == 'translate':
                    delta = np.array(entry['delta'], dtype=np.float64).reshape(3)
                    edits.append(Translate(str(entry['object_id']), delta, frames))
                elif op == 'rotate_yaw':
                    edits.append(RotateYaw(str(entry['object_id']), float(entry['angle']), frames))
                elif op == 'swap':
                    a, b = entry['object_ids']
                    edits.append(Swap(str(a), str(b)))
                else:
                    raise ValidationError(f"edit {i}: unknown op {op!r}")
            except (KeyError, TypeError, ValueError) as e:
                if isinstance(e, ValidationError):
                    raise
                raise ValidationError(f"edit {i}: malformed {op} edit: {e}") from e
        return cls(edits)

    @classmethod
    def load(cls, path):
        return cls.from_dict(load_json(path))

    def validate(self, scene):
        for i, edit in enumerate(self.edits):
            ids = (edit.object_id_a, edit.object_id_b) if isinstance(edit, Swap) else (edit.object_id,)
            for object_id in ids:
                if object_id not in scene.object_ids:
                    raise ValidationError(f"edit {i}: unknown object id {object_id!r}")
            if not isinstance(edit, Swap) and edit.frames is not None:
                start, end = edit.frames
                n = scene.get_object(edit.object_id).track.frame_count
                if not 0 <= start < end <= n:
                    raise ValidationError(f"edit {i}: frame range [{start}, {end}) outside [0, {n})")


def _frame_slice(edit, track):
    if edit.frames is None:
        return slice(0, track.frame_count)
    return slice(*edit.frames)


def apply_edit(scene, script):
    """
    Apply an edit script to a copy of ``scene``.

    Args:
        scene (SceneGraph): Source scene (left untouched)
        script (EditScript): Edits applied in order

    Returns:
        SceneGraph: Edited copy
    """
    script.validate(scene)
    edited = scene.copy()
    for edit in script.edits:
        if isinstance(edit, Translate):
            track = edited.get_object(edit.object_id).track
            track.delta_translations[_frame_slice(edit, track)] += edit.delta
        elif isinstance(edit, RotateYaw):
            track = edited.get_object(edit.object_id).track
            track.delta_yaws[_frame_slice(edit, track)] += edit.angle
        else:
            a, b = edited.get_object(edit.object_id_a), edited.get_object(edit.object_id_b)
            a.gaussians, b.gaussians = b.gaussians, a.gaussians
        logger.info(f"Applied {type(edit).__name__} edit")
    return edited
