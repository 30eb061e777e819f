"""Canny edge detector: Gaussian smoothing, Sobel gradients, non-maximum
suppression and hysteresis thresholding."""

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import ConfigError


LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])


@dataclass
class CannyParams:
    """Smoothing sigma in pixels; thresholds are fractions of the max gradient magnitude."""
    sigma: float = 1.4
    low: float = 0.1
    high: float = 0.2

    def __post_init__(self):
        if not self.sigma > 0:
            raise ConfigError('canny sigma must be positive', key='canny_sigma')
        if not 0 < self.low < self.high <= 1:
            raise ConfigError('canny thresholds must satisfy 0 < low < high <= 1',
                              key='canny_low', low=self.low, high=self.high)


def to_gray(image: np.ndarray) -> np.ndarray:
    """Luminance of an RGB image as float64."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 2:
        return image
    return image[..., :3] @ LUMA_WEIGHTS


def _shift(a: np.ndarray, dy: int, dx: int) -> np.ndarray:
    """Value of the neighbour at (y + dy, x + dx); zero outside the image."""
    out = np.zeros_like(a)
    h, w = a.shape
    ys = slice(max(0, -dy), min(h, h - dy))
    xs = slice(max(0, -dx), min(w, w - dx))
    yd = slice(max(0, dy), min(h, h + dy))
    xd = slice(max(0, dx), min(w, w + dx))
    out[ys, xs] = a[yd, xd]
    return out


def _along_gradient(magnitude: np.ndarray, gx: np.ndarray, gy: np.ndarray):
    """Magnitude one step forward and one step backward along the gradient.

    The step lands between an axis neighbour and a diagonal neighbour; the value
    there is linearly interpolated from the two.
    """
    ax, ay = np.abs(gx), np.abs(gy)
    steep = ay >= ax
    with np.errstate(divide='ignore', invalid='ignore'):
        w = np.where(steep, ax / ay, ay / ax)
    w = np.nan_to_num(w, nan=0.0)
    sy = np.where(gy >= 0, 1, -1)
    sx = np.where(gx >= 0, 1, -1)
    forward = np.zeros_like(magnitude)
    backward = np.zeros_like(magnitude)
    for is_steep in (True, False):
        for dy in (1, -1):
            for dx in (1, -1):
                sel = (steep == is_steep) & (sy == dy) & (sx == dx)
                if not sel.any():
                    continue
                py, px = (dy, 0) if is_steep else (0, dx)
                ahead = (1 - w) * _shift(magnitude, py, px) + w * _shift(magnitude, dy, dx)
                behind = (1 - w) * _shift(magnitude, -py, -px) + w * _shift(magnitude, -dy, -dx)
                forward[sel] = ahead[sel]
                backward[sel] = behind[sel]
    return forward, backward


def non_maximum_suppression(magnitude: np.ndarray, gx: np.ndarray, gy: np.ndarray) -> np.ndarray:
    """Keep pixels that are maxima along their (interpolated) gradient direction.

    A pixel must be >= its forward value and > its backward value, so a
    plateau two pixels wide yields a single-pixel line.
    """
    forward, backward = _along_gradient(magnitude, gx, gy)
    keep = (magnitude >= forward) & (magnitude > backward) & (magnitude > 0)
    keep[0, :] = keep[-1, :] = False
    keep[:, 0] = keep[:, -1] = False
    return keep


def hysteresis(candidates: np.ndarray, magnitude: np.ndarray, low: float, high: float) -> np.ndarray:
    """Weak pixels survive only when 8-connected to a strong pixel."""
    weak = candidates & (magnitude >= low)
    strong = candidates & (magnitude >= high)
    labels, count = ndimage.label(weak, structure=np.ones((3, 3), dtype=bool))
    if count == 0:
        return np.zeros(candidates.shape, dtype=bool)
    keep = np.zeros(count + 1, dtype=bool)
    keep[np.unique(labels[strong])] = True
    keep[0] = False
    return keep[labels]


def canny(image: np.ndarray, params: CannyParams = None) -> np.ndarray:
    """Binary edge map of an RGB (or gray) image. A constant image has no edges."""
    params = params or CannyParams()
    gray = to_gray(image)
    smoothed = ndimage.gaussian_filter(gray, sigma=params.sigma, mode='nearest')
    gx = ndimage.sobel(smoothed, axis=1, mode='nearest')
    gy = ndimage.sobel(smoothed, axis=0, mode='nearest')
    magnitude = np.hypot(gx, gy)
    peak = magnitude.max() if magnitude.size else 0.0
    # numerical noise on flat images stays far below this
    if peak <= 1e-9 * max(1.0, np.abs(gray).max()):
        return np.zeros(gray.shape, dtype=bool)
    candidates = non_maximum_suppression(magnitude, gx, gy)
    return hysteresis(candidates, magnitude, params.low * peak, params.high * peak)
