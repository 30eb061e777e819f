"""Training data: groundtruth shadow edges, balanced patch sampling on a 3×3
lattice of Canny pixels, normalization statistics and dataset manifests."""

import glob
import json
import os
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy import ndimage

from .cnn import PATCH_SIZE
from .errors import ConfigError, ShapeError
from .utils import ensure_dir, file_stem, load_binary


HALF_PATCH = PATCH_SIZE // 2
GRID_STEP = 3
MAX_SAMPLES_PER_CLASS = 800
STD_FLOOR = 1e-8


@dataclass
class LabeledPatch:
    """A 28×28×3 input patch and its row-major structured label."""
    x: np.ndarray
    y: np.ndarray
    image_id: str = ''
    center: tuple = (0, 0)

    @property
    def positive(self) -> bool:
        return bool(np.any(self.y))


# ============================================================
#  GROUNDTRUTH EDGES
# ============================================================

def region_mask_to_edge_gt(mask: np.ndarray) -> np.ndarray:
    """Mark pixels whose 4-neighbourhood contains both mask values."""
    mask = np.asarray(mask, dtype=bool)
    edges = np.zeros(mask.shape, dtype=bool)
    vertical = mask[:-1, :] != mask[1:, :]
    horizontal = mask[:, :-1] != mask[:, 1:]
    edges[:-1, :] |= vertical
    edges[1:, :] |= vertical
    edges[:, :-1] |= horizontal
    edges[:, 1:] |= horizontal
    return edges


def disc(radius: int) -> np.ndarray:
    """Disc structuring element x² + y² <= r²."""
    r = int(radius)
    yy, xx = np.mgrid[-r:r + 1, -r:r + 1]
    return (xx * xx + yy * yy) <= r * r


def dilate(edges: np.ndarray, radius: int) -> np.ndarray:
    """Morphological dilation with a disc; radius 0 is the identity."""
    if radius < 0:
        raise ConfigError('dilation radius must be non-negative', key='dilation_radius')
    edges = np.asarray(edges, dtype=bool)
    if radius == 0 or not edges.any():
        return edges.copy()
    return ndimage.binary_dilation(edges, structure=disc(radius))


# ============================================================
#  PATCH SAMPLING
# ============================================================

def lattice_candidates(edge_map: np.ndarray, margin: int = HALF_PATCH) -> np.ndarray:
    """Row-major (row, col) pairs of edge pixels on the 3×3 lattice anchored at (0, 0)
    that are at least ``margin`` pixels from every border."""
    h, w = edge_map.shape
    rows = np.arange(h) % GRID_STEP == 0
    cols = np.arange(w) % GRID_STEP == 0
    eligible = np.zeros(edge_map.shape, dtype=bool)
    eligible[margin:h - margin, margin:w - margin] = True
    eligible &= rows[:, None] & cols[None, :]
    return np.argwhere(eligible & edge_map)


def crop_patch(image: np.ndarray, row: int, col: int) -> np.ndarray:
    """28×28 crop whose central 5×5 block is centred on (row, col)."""
    return np.asarray(image[row - HALF_PATCH:row + HALF_PATCH, col - HALF_PATCH:col + HALF_PATCH],
                      dtype=np.float64)


def crop_label(gt_edges: np.ndarray, row: int, col: int, label_size: int) -> np.ndarray:
    half = label_size // 2
    block = gt_edges[row - half:row + half + 1, col - half:col + half + 1]
    return block.astype(np.uint8).reshape(-1)


def sample_patches(image: np.ndarray, canny_edges: np.ndarray, gt_edges: np.ndarray,
                   n_max: int = MAX_SAMPLES_PER_CLASS, seed: int = 0,
                   dilation_radius: int = 2, label_size: int = 5,
                   image_id: str = '') -> list:
    """Balanced positive/negative patches centred on Canny pixels of the 3×3 lattice.

    Positives are centres that fall on the dilated groundtruth edges and carry
    the crop of ``gt_edges``; negatives are the remaining centres with all-zero
    labels. Per image, each class is capped at ``n_max`` and the negatives at
    the number of positives drawn. Patches are returned un-normalized.
    """
    if not 1 <= n_max <= MAX_SAMPLES_PER_CLASS:
        raise ConfigError(f'n_max must lie in [1, {MAX_SAMPLES_PER_CLASS}]', key='n_max', got=n_max)
    image = np.asarray(image)
    canny_edges = np.asarray(canny_edges, dtype=bool)
    gt_edges = np.asarray(gt_edges, dtype=bool)
    for name, arr in (('canny', canny_edges), ('gt_edges', gt_edges)):
        if arr.shape != image.shape[:2]:
            raise ShapeError(f'{name} map {arr.shape} does not match image {image.shape[:2]}',
                             axis=name, expected=image.shape[:2], got=arr.shape)

    centers = lattice_candidates(canny_edges)
    if len(centers) == 0:
        return []
    near_gt = dilate(gt_edges, dilation_radius)
    on_gt = near_gt[centers[:, 0], centers[:, 1]]

    rng = np.random.default_rng(seed)
    positives = centers[on_gt][rng.permutation(int(on_gt.sum()))][:n_max]
    negatives = centers[~on_gt][rng.permutation(int((~on_gt).sum()))][:min(n_max, len(positives))]

    units = label_size * label_size
    patches = []
    for row, col in positives:
        patches.append(LabeledPatch(crop_patch(image, row, col),
                                    crop_label(gt_edges, row, col, label_size),
                                    image_id, (int(row), int(col))))
    for row, col in negatives:
        patches.append(LabeledPatch(crop_patch(image, row, col), np.zeros(units, dtype=np.uint8),
                                    image_id, (int(row), int(col))))
    return patches


# ============================================================
#  NORMALIZATION
# ============================================================

@dataclass
class NormStats:
    mean: np.ndarray
    std: np.ndarray


def compute_normalization(samples: list) -> NormStats:
    """Per-channel mean and std over all training patches (std floored at 1e-8)."""
    if not samples:
        raise ConfigError('cannot compute normalization from zero samples', key='samples')
    x = np.stack([np.asarray(s.x, dtype=np.float64) for s in samples])
    mean = x.mean(axis=(0, 1, 2))
    std = np.maximum(x.std(axis=(0, 1, 2)), STD_FLOOR)
    return NormStats(mean=mean, std=std)


def apply_normalization(samples: list, stats: NormStats) -> list:
    return [replace(s, x=(np.asarray(s.x, dtype=np.float64) - stats.mean) / stats.std)
            for s in samples]


# ============================================================
#  DATASET MANIFEST
# ============================================================

@dataclass
class ManifestEntry:
    stem: str
    image: str
    mask: str
    edges: Optional[str] = None


@dataclass
class DatasetManifest:
    """Images paired with region masks (and optional edge groundtruth) by stem."""
    root: str = ''
    split: str = 'train'
    entries: list = field(default_factory=list)
    warnings: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.entries)


def load_manifest(root: str, split: str = 'train') -> DatasetManifest:
    """Pair ``images/*.png`` with ``masks/*.png`` and optional ``edges/*.png`` by stem.

    Images without a mask are skipped and recorded as warnings.
    """
    manifest = DatasetManifest(root=os.path.abspath(root), split=split)
    for image_path in sorted(glob.glob(os.path.join(root, 'images', '*.png'))):
        stem = file_stem(image_path)
        mask_path = os.path.join(root, 'masks', f'{stem}.png')
        if not os.path.isfile(mask_path):
            manifest.warnings.append({'level': 'warning', 'stem': stem,
                                      'message': 'image has no region mask; skipped'})
            continue
        edges_path = os.path.join(root, 'edges', f'{stem}.png')
        manifest.entries.append(ManifestEntry(
            stem=stem,
            image=image_path,
            mask=mask_path,
            edges=edges_path if os.path.isfile(edges_path) else None,
        ))
    return manifest


def split_even_odd(manifest: DatasetManifest) -> tuple:
    """Even-indexed entries for training, odd-indexed for testing."""
    train = replace(manifest, split='train', entries=manifest.entries[0::2], warnings=list(manifest.warnings))
    test = replace(manifest, split='test', entries=manifest.entries[1::2], warnings=list(manifest.warnings))
    return train, test


def load_edge_groundtruth(entry: ManifestEntry) -> tuple:
    """(region mask, shadow-edge groundtruth) for an entry; edges come from the
    edge file when present, otherwise from the region mask boundary."""
    mask = load_binary(entry.mask)
    edges = load_binary(entry.edges) if entry.edges else region_mask_to_edge_gt(mask)
    return mask, edges


def write_warnings(manifest: DatasetManifest, path: str):
    """Dump manifest warnings as JSON lines."""
    ensure_dir(path)
    with open(path, 'w') as f:
        for warning in manifest.warnings:
            f.write(json.dumps(warning, sort_keys=True) + '\n')
