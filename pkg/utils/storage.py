#!/usr/bin/env python3
"""
Storage Utilities

This module provides functions for storing and retrieving JSON documents,
JSON-lines logs, PNG images and raw float dumps.
"""

import os
import json
import logging

import cv2
import numpy as np

from utils.errors import ValidationError

logger = logging.getLogger(__name__)

FLOAT_DUMP_MAGIC = 'streetsplat-float'


def save_json(data, filename):
    """
    Save a document to a JSON file.

    Args:
        data (dict): JSON-serializable document
        filename (str): Target path

    Returns:
        str: Path to saved file
    """
    directory = os.path.dirname(filename)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(filename, 'w') as f:
        json.dump(data, f, indent=2)
        f.write('\n')
    logger.debug(f"Saved JSON to {filename}")
    return filename


def load_json(filename):
    """
    Load a JSON file.

    Args:
        filename (str): Path to JSON file

    Returns:
        dict: Parsed document
    """
    if not os.path.exists(filename):
        raise FileNotFoundError(f"File not found: {filename}")
    try:
        with open(filename, 'r') as f:
            return json.load(f)
    except json.JSONDecodeError as e:
        raise ValidationError(f"{filename}: invalid JSON: {e}") from e


def append_jsonl(record, filename):
    """Append one record to a JSON-lines file."""
    with open(filename, 'a') as f:
        f.write(json.dumps(record) + '\n')


def write_png(image, filename, bits=8):
    """
    Write an RGB or single-channel image in [0, 1] as PNG.

    Args:
        image (np.ndarray): [H, W, 3] or [H, W] float image
        filename (str): Target path
        bits (int): 8 or 16
    """
    if bits not in (8, 16):
        raise ValidationError(f"unsupported PNG depth {bits}")
    scale = 255.0 if bits == 8 else 65535.0
    dtype = np.uint8 if bits == 8 else np.uint16
    data = np.rint(np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0) * scale).astype(dtype)
    write_png_raw(data, filename)


def write_png_raw(data, filename):
    """Write integer image data (uint8 or uint16; RGB order for 3 channels)."""
    directory = os.path.dirname(filename)
    if directory:
        os.makedirs(directory, exist_ok=True)
    if data.ndim == 3:
        data = cv2.cvtColor(data, cv2.COLOR_RGB2BGR)
    if not cv2.imwrite(filename, data):
        raise OSError(f"Failed to write image {filename}")


def read_png_raw(filename):
    """Read a PNG without conversion; RGB order for color images."""
    if not os.path.exists(filename):
        raise FileNotFoundError(f"File not found: {filename}")
    data = cv2.imread(filename, cv2.IMREAD_UNCHANGED)
    if data is None:
        raise ValidationError(f"{filename}: unreadable image")
    if data.ndim == 3:
        if data.shape[2] == 4:
            data = data[:, :, :3]
        data = cv2.cvtColor(data, cv2.COLOR_BGR2RGB)
    return data


def read_png(filename):
    """Read a PNG as a float image in [0, 1]."""
    data = read_png_raw(filename)
    scale = 65535.0 if data.dtype == np.uint16 else 255.0
    return data.astype(np.float64) / scale


def save_float_dump(arrays, filename):
    """
    Write named float arrays as one raw dump: an 8-byte little-endian header
    length, a JSON header describing names/shapes/offsets, then the
    little-endian float32 payload.
    """
    entries, offset, payload = [], 0, []
    for name, array in arrays.items():
        data = np.ascontiguousarray(np.asarray(array, dtype='<f4'))
        entries.append({'name': name, 'shape': list(data.shape), 'offset': offset})
        offset += data.nbytes
        payload.append(data.tobytes())
    header = json.dumps({'format': FLOAT_DUMP_MAGIC, 'dtype': '<f4', 'arrays': entries}).encode()
    with open(filename, 'wb') as f:
        f.write(np.array([len(header)], dtype='<u8').tobytes())
        f.write(header)
        for chunk in payload:
            f.write(chunk)
    return filename


def load_float_dump(filename):
    """Read a dump written by save_float_dump into a dict of float32 arrays."""
    with open(filename, 'rb') as f:
        raw = f.read()
    header_len = int(np.frombuffer(raw[:8], dtype='<u8')[0])
    header = json.loads(raw[8:8 + header_len].decode())
    if header.get('format') != FLOAT_DUMP_MAGIC:
        raise ValidationError(f"{filename}: not a float dump")
    body = raw[8 + header_len:]
    arrays = {}
    for entry in header['arrays']:
        count = int(np.prod(entry['shape'])) if entry['shape'] else 1
        arrays[entry['name']] = np.frombuffer(body, dtype='<f4', count=count,
                                              offset=entry['offset']).reshape(entry['shape'])
    return arrays
