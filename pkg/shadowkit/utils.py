"""Shared utilities: image IO, CSV writing, seeds and paths."""

import csv
import os
import re

import numpy as np
from PIL import Image


def sanitize_stem(text: str) -> str:
    """Turn a file stem into a clean output name."""
    text = text.strip()
    text = re.sub(r'[^\w.-]', '-', text)
    text = re.sub(r'-+', '-', text)
    return text.strip('-') or 'image'


def file_stem(path: str) -> str:
    """Return the file name without directory and extension."""
    return os.path.splitext(os.path.basename(path))[0]


def ensure_dir(path: str):
    """Create the parent directory of ``path`` if it doesn't exist."""
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)


def derive_seed(seed: int, index: int) -> int:
    """Per-item seed: ``seed XOR index``, kept non-negative."""
    return (int(seed) ^ int(index)) & 0x7FFFFFFF


# ============================================================
#  IMAGE IO
# ============================================================

def load_rgb(path: str) -> np.ndarray:
    """Load any image as an H×W×3 uint8 array."""
    with Image.open(path) as img:
        return np.array(img.convert('RGB'), dtype=np.uint8)


def load_binary(path: str) -> np.ndarray:
    """Load a 0/255 (or 16-bit) mask as a boolean H×W array."""
    with Image.open(path) as img:
        if img.mode in ('I', 'I;16', 'I;16B', 'I;16L'):
            return np.array(img) > 0
        return np.array(img.convert('L')) > 127


def load_soft16(path: str) -> np.ndarray:
    """Load a 16-bit probability PNG back into [0, 1] floats."""
    with Image.open(path) as img:
        return np.array(img, dtype=np.float64) / 65535.0


def save_rgb(image: np.ndarray, path: str):
    ensure_dir(path)
    Image.fromarray(np.asarray(image, dtype=np.uint8)).save(path)


def save_binary_png(mask: np.ndarray, path: str):
    """Write a boolean mask as an 8-bit PNG with values 0/255."""
    ensure_dir(path)
    data = np.where(np.asarray(mask, dtype=bool), 255, 0).astype(np.uint8)
    Image.fromarray(data).save(path)


def save_soft_png(values: np.ndarray, path: str):
    """Write [0, 1] values as 16-bit grayscale (value × 65535, rounded)."""
    ensure_dir(path)
    data = np.rint(np.clip(values, 0.0, 1.0) * 65535.0).astype(np.uint16)
    Image.fromarray(data).save(path)


def save_label_png(labels: np.ndarray, path: str):
    """Write an integer label map as a 16-bit PNG."""
    ensure_dir(path)
    Image.fromarray(np.asarray(labels).astype(np.uint16)).save(path)


# ============================================================
#  TEXT OUTPUTS
# ============================================================

def write_csv(path: str, header: list, rows):
    """Write rows to CSV; floats are written with full precision."""
    ensure_dir(path)
    with open(path, 'w', newline='') as f:
        writer = csv.writer(f)
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v
                             for v in row])
