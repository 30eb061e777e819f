"""Dense structured prediction: run the CNN at every Canny pixel and fuse the
overlapping label predictions into one shadow-edge probability per pixel."""

from dataclasses import dataclass

import numpy as np

from .cnn import CnnModel, PATCH_SIZE, forward
from .dataprep import HALF_PATCH
from .errors import ShapeError


PREDICT_BATCH = 256


@dataclass
class EdgeProbabilityMap:
    """Fused probability and vote count per pixel; probability is 0 where no vote landed."""
    prob: np.ndarray
    votes: np.ndarray

    @property
    def height(self) -> int:
        return self.prob.shape[0]

    @property
    def width(self) -> int:
        return self.prob.shape[1]


def _check_inputs(image: np.ndarray, canny_edges: np.ndarray):
    if image.ndim != 3 or image.shape[2] != 3:
        raise ShapeError(f'expected an H×W×3 image, got {image.shape}', axis='channels',
                         expected=3, got=image.shape)
    if image.shape[0] < PATCH_SIZE or image.shape[1] < PATCH_SIZE:
        axis = 'height' if image.shape[0] < PATCH_SIZE else 'width'
        raise ShapeError(f'image must be at least {PATCH_SIZE}×{PATCH_SIZE}', axis=axis,
                         expected=PATCH_SIZE, got=image.shape[:2])
    if canny_edges.shape != image.shape[:2]:
        raise ShapeError('edge map does not match image', axis='edges',
                         expected=image.shape[:2], got=canny_edges.shape)


def patch_probabilities(model: CnnModel, image: np.ndarray, centers: np.ndarray,
                        batch_size: int = PREDICT_BATCH) -> np.ndarray:
    """Model probabilities (len(centers) × units) for patches centred on ``centers``.

    The image is reflect-padded by half a patch so that every pixel can be a centre.
    """
    padded = np.pad(np.asarray(image, dtype=np.float64),
                    ((HALF_PATCH, HALF_PATCH), (HALF_PATCH, HALF_PATCH), (0, 0)), mode='reflect')
    out = np.zeros((len(centers), model.units))
    for start in range(0, len(centers), batch_size):
        chunk = centers[start:start + batch_size]
        patches = np.stack([padded[r:r + PATCH_SIZE, c:c + PATCH_SIZE] for r, c in chunk])
        out[start:start + len(chunk)] = forward(model, model.normalize(patches))
    return out


def fuse_votes(centers: np.ndarray, probs: np.ndarray, canny_edges: np.ndarray,
               label_size: int) -> EdgeProbabilityMap:
    """Average every cell prediction that lands on a Canny pixel.

    Votes are accumulated cell by cell in row-major centre order, so the sums
    are bit-reproducible. The mean is clipped to the range of incoming votes,
    which makes unanimous votes come out exact.
    """
    h, w = canny_edges.shape
    total = np.zeros((h, w))
    votes = np.zeros((h, w), dtype=np.int64)
    low = np.full((h, w), np.inf)
    high = np.full((h, w), -np.inf)
    half = label_size // 2

    for cell in range(label_size * label_size):
        di, dj = divmod(cell, label_size)
        rows = centers[:, 0] + di - half
        cols = centers[:, 1] + dj - half
        inside = (rows >= 0) & (rows < h) & (cols >= 0) & (cols < w)
        rows, cols, p = rows[inside], cols[inside], probs[inside, cell]
        on_edge = canny_edges[rows, cols]
        rows, cols, p = rows[on_edge], cols[on_edge], p[on_edge]
        np.add.at(total, (rows, cols), p)
        np.add.at(votes, (rows, cols), 1)
        np.minimum.at(low, (rows, cols), p)
        np.maximum.at(high, (rows, cols), p)

    prob = np.zeros((h, w))
    voted = votes > 0
    prob[voted] = np.clip(total[voted] / votes[voted], low[voted], high[voted])
    return EdgeProbabilityMap(prob=prob, votes=votes)


def predict_structured(model: CnnModel, image: np.ndarray, canny_edges: np.ndarray,
                       batch_size: int = PREDICT_BATCH) -> EdgeProbabilityMap:
    """Shadow-edge probability at every Canny pixel of ``image``."""
    image = np.asarray(image)
    canny_edges = np.asarray(canny_edges, dtype=bool)
    _check_inputs(image, canny_edges)
    centers = np.argwhere(canny_edges)
    if len(centers) == 0:
        return EdgeProbabilityMap(prob=np.zeros(canny_edges.shape),
                                  votes=np.zeros(canny_edges.shape, dtype=np.int64))
    probs = patch_probabilities(model, image, centers, batch_size)
    return fuse_votes(centers, probs, canny_edges, model.label_size)


def threshold_edges(edge_map: EdgeProbabilityMap, t: float = 0.5) -> np.ndarray:
    """Binary shadow edges: voted pixels with probability >= t (t clamped to [0, 1])."""
    t = min(max(float(t), 0.0), 1.0)
    return (edge_map.prob >= t) & (edge_map.votes >= 1)
