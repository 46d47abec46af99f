#!/usr/bin/env python3
"""
Evaluation

Renders held-out frames, saves them as PNG and computes PSNR, SSIM, PSNR*
and mIoU from the saved files, so a report can be recomputed from disk.
"""

import os
import math
import logging

import numpy as np

from apps.metrics import psnr, ssim, psnr_star, miou
from renderer.rasterizer import RenderConfig, render
from utils.storage import write_png, write_png_raw, read_png, read_png_raw, save_json

logger = logging.getLogger(__name__)


def json_number(value):
    """Report-safe number: +inf becomes the string 'inf', NaN becomes None."""
    if value is None:
        return None
    if math.isinf(value):
        return 'inf' if value > 0 else '-inf'
    if math.isnan(value):
        return None
    return value


def _mean(values):
    values = [v for v in values if v is not None and not math.isnan(v)]
    if not values:
        return None
    return float(np.mean(values))


def frame_metrics(image, target, frame, tracklets, labels=None, num_classes=None):
    """Metrics for one saved render."""
    record = {'psnr': psnr(image, target), 'ssim': ssim(image, target),
              'psnr_star': psnr_star(image, target, tracklets, frame.camera, frame.timestep),
              'miou': None}
    if labels is not None and frame.semantic is not None:
        record['miou'], _ = miou(labels, frame.semantic, num_classes)
    return record


def evaluate(scene, dataset, frame_indices, output_dir, tile_size=16, num_threads=1):
    """
    Render and score the given frames.

    Args:
        scene (SceneGraph): Trained scene
        dataset (Dataset): Dataset with targets and tracklets
        frame_indices (list): Frames to evaluate
        output_dir (str): Directory for renders
        tile_size (int): Rasterizer tile size
        num_threads (int): Rasterizer threads

    Returns:
        dict: JSON-ready report with per-frame and aggregate metrics
    """
    render_dir = os.path.join(output_dir, 'renders')
    os.makedirs(render_dir, exist_ok=True)
    per_frame = []
    for index in frame_indices:
        frame = dataset.frames[index]
        config = RenderConfig(tile_size=tile_size, timestep=frame.timestep, num_threads=num_threads)
        outputs = render(scene, frame.camera, config)
        color_path = os.path.join(render_dir, f"{index:04d}.png")
        write_png(outputs.color, color_path)
        label_path = None
        if frame.semantic is not None:
            label_path = os.path.join(render_dir, f"{index:04d}_sem.png")
            write_png_raw(np.argmax(outputs.semantic, axis=-1).astype(np.uint8), label_path)
        # score what was saved, not the float render
        image = read_png(color_path)
        target = np.rint(np.clip(frame.image[..., :3], 0.0, 1.0) * 255.0) / 255.0
        labels = read_png_raw(label_path) if label_path else None
        record = frame_metrics(image, target, frame, dataset.tracklets, labels, dataset.num_classes)
        record.update({'frame': index, 'timestep': frame.timestep, 'camera_id': frame.camera_id,
                       'render': os.path.relpath(color_path, output_dir)})
        per_frame.append(record)
        logger.info(f"Frame {index}: PSNR {record['psnr']:.2f} dB, SSIM {record['ssim']:.4f}")

    aggregate = {
        'psnr': _mean([r['psnr'] for r in per_frame]),
        'ssim': _mean([r['ssim'] for r in per_frame]),
        'psnr_star': _mean([r['psnr_star'] for r in per_frame]),
        'miou': _mean([r['miou'] for r in per_frame]),
        'num_frames': len(per_frame),
    }
    report = {
        'frames': [{k: json_number(v) if isinstance(v, float) else v for k, v in r.items()}
                   for r in per_frame],
        'aggregate': {k: json_number(v) if isinstance(v, float) else v for k, v in aggregate.items()},
    }
    return report


def write_report(report, path):
    return save_json(report, path)
