"""Superpixel segmentation, adjacency graph and shadow/bright boundary classification."""

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from skimage.color import rgb2lab
from skimage.segmentation import slic

from .errors import ConfigError, ShapeError


FOUR_CONNECTED = ndimage.generate_binary_structure(2, 1)
EIGHT_CONNECTED = np.ones((3, 3), dtype=bool)


@dataclass
class SuperpixelSegmentation:
    """Label map plus per-superpixel Lab mean, centroid (row, col), area and
    adjacency pairs (i < j)."""
    labels: np.ndarray
    mean_lab: np.ndarray
    centroids: np.ndarray
    areas: np.ndarray
    adjacency: np.ndarray

    @property
    def n(self) -> int:
        return len(self.areas)

    @property
    def lightness(self) -> np.ndarray:
        return self.mean_lab[:, 0]

    def neighbours(self) -> list:
        """Adjacency as one sorted id list per superpixel."""
        nbrs = [[] for _ in range(self.n)]
        for i, j in self.adjacency:
            nbrs[i].append(int(j))
            nbrs[j].append(int(i))
        return [sorted(n) for n in nbrs]


@dataclass
class BoundarySets:
    shd: set = field(default_factory=set)
    lit: set = field(default_factory=set)
    ambiguous: set = field(default_factory=set)

    def to_dict(self) -> dict:
        return {name: sorted(int(i) for i in getattr(self, name)) for name in ('shd', 'lit', 'ambiguous')}


# ============================================================
#  SEGMENTATION
# ============================================================

def _to_float_rgb(image: np.ndarray) -> np.ndarray:
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ShapeError(f'expected an H×W×3 image, got {image.shape}', axis='channels',
                         expected=3, got=image.shape)
    if np.issubdtype(image.dtype, np.integer):
        return image.astype(np.float64) / 255.0
    return image.astype(np.float64)


def _merge_orphans(labels: np.ndarray) -> bool:
    """Merge every non-largest 4-connected piece of a label into its largest
    4-adjacent superpixel. Returns True when anything changed."""
    changed = False
    areas = np.bincount(labels.ravel())
    h, w = labels.shape
    for k, box in enumerate(ndimage.find_objects(labels + 1)):
        if box is None:
            continue
        # grow the box by one pixel so the neighbours are visible
        rows = slice(max(0, box[0].start - 1), min(h, box[0].stop + 1))
        cols = slice(max(0, box[1].start - 1), min(w, box[1].stop + 1))
        window = labels[rows, cols]
        pieces, count = ndimage.label(window == k, structure=FOUR_CONNECTED)
        if count <= 1:
            continue
        sizes = np.bincount(pieces.ravel())[1:]
        keep = int(np.argmax(sizes)) + 1
        for piece in range(1, count + 1):
            if piece == keep:
                continue
            region = pieces == piece
            ring = ndimage.binary_dilation(region, structure=FOUR_CONNECTED) & ~region
            candidates = np.unique(window[ring])
            candidates = candidates[candidates != k]
            if len(candidates) == 0:
                continue
            target = candidates[np.argmax(areas[candidates])]
            window[region] = target
            areas[target] += int(region.sum())
            areas[k] -= int(region.sum())
            changed = True
    return changed


def enforce_connectivity(labels: np.ndarray) -> np.ndarray:
    """Make every label 4-connected and relabel to contiguous ids 0..N-1."""
    labels = np.array(labels, dtype=np.int64, copy=True)
    while _merge_orphans(labels):
        pass
    _, contiguous = np.unique(labels, return_inverse=True)
    return contiguous.reshape(labels.shape)


def adjacency_pairs(labels: np.ndarray) -> np.ndarray:
    """Unique 4-neighbour label pairs (i < j) as an M×2 array."""
    a = np.concatenate([labels[:, :-1].ravel(), labels[:-1, :].ravel()])
    b = np.concatenate([labels[:, 1:].ravel(), labels[1:, :].ravel()])
    differ = a != b
    pairs = np.stack([np.minimum(a[differ], b[differ]), np.maximum(a[differ], b[differ])], axis=1)
    if len(pairs) == 0:
        return np.zeros((0, 2), dtype=np.int64)
    return np.unique(pairs, axis=0).astype(np.int64)


def from_labels(labels: np.ndarray, image: np.ndarray) -> SuperpixelSegmentation:
    """Statistics for an existing contiguous label map."""
    labels = np.asarray(labels, dtype=np.int64)
    rgb = _to_float_rgb(image)
    if labels.shape != rgb.shape[:2]:
        raise ShapeError('label map does not match image', axis='labels',
                         expected=rgb.shape[:2], got=labels.shape)
    n = int(labels.max()) + 1
    flat = labels.ravel()
    areas = np.bincount(flat, minlength=n)
    if np.any(areas == 0):
        raise ShapeError('superpixel ids must be contiguous and non-empty', axis='labels')
    lab = rgb2lab(rgb).reshape(-1, 3)
    mean_lab = np.stack([np.bincount(flat, weights=lab[:, c], minlength=n) for c in range(3)], axis=1)
    mean_lab /= areas[:, None]
    rows, cols = np.indices(labels.shape)
    centroids = np.stack([np.bincount(flat, weights=rows.ravel(), minlength=n),
                          np.bincount(flat, weights=cols.ravel(), minlength=n)], axis=1) / areas[:, None]
    return SuperpixelSegmentation(labels=labels, mean_lab=mean_lab, centroids=centroids,
                                  areas=areas, adjacency=adjacency_pairs(labels))


def segment(image: np.ndarray, region_size: int = 14, compactness: float = 10.0,
            iterations: int = 10) -> SuperpixelSegmentation:
    """Grid-seeded (colour, position) clustering into nearly regular superpixels.

    An image smaller than one region becomes a single superpixel.
    """
    if region_size < 4:
        raise ConfigError('region_size must be at least 4', key='region_size', got=region_size)
    if iterations < 1:
        raise ConfigError('iterations must be at least 1', key='iterations', got=iterations)
    rgb = _to_float_rgb(image)
    h, w = rgb.shape[:2]
    if h * w <= region_size * region_size:
        return from_labels(np.zeros((h, w), dtype=np.int64), rgb)
    n_segments = max(1, int(round(h * w / float(region_size * region_size))))
    labels = slic(rgb, n_segments=n_segments, compactness=compactness, max_num_iter=iterations,
                  convert2lab=True, enforce_connectivity=False, start_label=0, channel_axis=-1)
    return from_labels(enforce_connectivity(labels), rgb)


# ============================================================
#  BOUNDARY CLASSIFICATION
# ============================================================

def edge_pixel_counts(labels: np.ndarray, edges: np.ndarray) -> np.ndarray:
    """Per superpixel, the number of edge pixels inside it or on its 8-neighbour border."""
    n = int(labels.max()) + 1
    ys, xs = np.nonzero(edges)
    if len(ys) == 0:
        return np.zeros(n, dtype=np.int64)
    padded = np.pad(labels, 1, constant_values=-1)
    seen = np.stack([padded[ys + 1 + dy, xs + 1 + dx] for dy in (-1, 0, 1) for dx in (-1, 0, 1)], axis=1)
    seen = np.sort(seen, axis=1)
    # count each label once per edge pixel
    first = np.ones(seen.shape, dtype=bool)
    first[:, 1:] = seen[:, 1:] != seen[:, :-1]
    hits = seen[first & (seen >= 0)]
    return np.bincount(hits, minlength=n)


def classify_boundaries(seg: SuperpixelSegmentation, shadow_edges: np.ndarray,
                        min_pixels: int = 10, min_fraction: float = 0.02,
                        lightness_tolerance: float = 0.0) -> BoundarySets:
    """Split superpixels on shadow edges into shadow (shd) and bright (lit) boundaries.

    A superpixel is at the edge when at least max(min_pixels, min_fraction·area)
    edge pixels lie in or next to it. It joins ``shd`` (``lit``) when its mean
    lightness is below (above) every adjacent at-edge superpixel; otherwise it
    is ambiguous, as is an at-edge superpixel without at-edge neighbours.
    Neighbours within ``lightness_tolerance`` of it are treated as the same
    side and skipped.
    """
    shadow_edges = np.asarray(shadow_edges, dtype=bool)
    if shadow_edges.shape != seg.labels.shape:
        raise ShapeError('edge map does not match label map', axis='edges',
                         expected=seg.labels.shape, got=shadow_edges.shape)
    bounds = BoundarySets()
    if not shadow_edges.any():
        return bounds

    counts = edge_pixel_counts(seg.labels, shadow_edges)
    at_edge = counts >= np.maximum(min_pixels, min_fraction * seg.areas)
    light = seg.lightness
    for k, nbrs in enumerate(seg.neighbours()):
        if not at_edge[k]:
            continue
        others = np.array([light[j] for j in nbrs if at_edge[j]])
        others = others[np.abs(others - light[k]) > lightness_tolerance]
        if len(others) == 0:
            bounds.ambiguous.add(k)
        elif np.all(light[k] < others):
            bounds.shd.add(k)
        elif np.all(light[k] > others):
            bounds.lit.add(k)
        else:
            bounds.ambiguous.add(k)
    return bounds
