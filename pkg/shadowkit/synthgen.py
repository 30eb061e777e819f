"""Synthetic shadow scenes with exact shadow masks and shadow-edge groundtruth."""

import json
import os
from dataclasses import asdict, dataclass, field

import numpy as np
from PIL import Image, ImageDraw
from scipy import ndimage

from .dataprep import DatasetManifest, load_manifest, region_mask_to_edge_gt
from .errors import ConfigError, DegenerateSceneError
from .utils import derive_seed, ensure_dir, save_binary_png, save_rgb


@dataclass
class Occluder:
    """A disc (``points`` = [(cx, cy)], ``radius``) or a polygon (``points`` = vertices)."""
    kind: str
    points: list
    radius: float = 0.0

    def __post_init__(self):
        if self.kind not in ('disc', 'polygon'):
            raise ConfigError(f'unknown occluder kind {self.kind!r}', key='occluder')
        if self.kind == 'disc' and (len(self.points) != 1 or self.radius <= 0):
            raise ConfigError('a disc needs one centre and a positive radius', key='occluder')
        if self.kind == 'polygon' and len(self.points) < 3:
            raise ConfigError('a polygon needs at least three vertices', key='occluder')


@dataclass
class Material:
    """Axis-aligned rectangle (x0, y0, x1, y1) of a different albedo: a reflectance edge."""
    box: tuple
    color: tuple


@dataclass
class SceneSpec:
    size: tuple = (128, 128)
    occluders: list = field(default_factory=list)
    light_offset: tuple = (12, 12)
    attenuation: float = 0.5
    penumbra: float = 0.0
    background: tuple = (200, 180, 160)
    object_color: tuple = (230, 230, 230)
    materials: list = field(default_factory=list)
    noise_std: float = 0.0

    def __post_init__(self):
        if not 0 < self.attenuation < 1:
            raise ConfigError('attenuation must lie in (0, 1)', key='attenuation', got=self.attenuation)
        if self.penumbra < 0:
            raise ConfigError('penumbra width must be non-negative', key='penumbra')
        if self.noise_std < 0:
            raise ConfigError('noise std must be non-negative', key='noise_std')
        if min(self.size) < 1:
            raise ConfigError('canvas must be at least 1×1', key='size', got=self.size)

    def to_dict(self) -> dict:
        return asdict(self)


# ============================================================
#  RASTERISATION
# ============================================================

def rasterize_occluders(occluders: list, size: tuple, offset: tuple = (0, 0)) -> np.ndarray:
    """Boolean H×W union of the occluder shapes translated by ``offset`` (dx, dy)."""
    width, height = size
    dx, dy = offset
    canvas = Image.new('L', (width, height), 0)
    draw = ImageDraw.Draw(canvas)
    for occ in occluders:
        if occ.kind == 'disc':
            cx, cy = occ.points[0]
            r = occ.radius
            draw.ellipse((cx + dx - r, cy + dy - r, cx + dx + r, cy + dy + r), fill=255)
        else:
            draw.polygon([(x + dx, y + dy) for x, y in occ.points], fill=255)
    return np.array(canvas) > 0


def _albedo(spec: SceneSpec, occluder_mask: np.ndarray) -> np.ndarray:
    width, height = spec.size
    canvas = Image.new('RGB', (width, height), tuple(spec.background))
    draw = ImageDraw.Draw(canvas)
    for material in spec.materials:
        draw.rectangle(tuple(material.box), fill=tuple(material.color))
    albedo = np.array(canvas, dtype=np.float64)
    albedo[occluder_mask] = spec.object_color
    return albedo


def shading_factor(shadow: np.ndarray, attenuation: float, penumbra: float) -> np.ndarray:
    """Per-pixel light factor: 1 when lit, ramping linearly to ``attenuation``
    over ``penumbra`` pixels inside the shadow."""
    factor = np.ones(shadow.shape, dtype=np.float64)
    if not shadow.any():
        return factor
    if penumbra <= 0:
        factor[shadow] = attenuation
        return factor
    depth = ndimage.distance_transform_edt(shadow)
    ramp = np.clip(depth / penumbra, 0.0, 1.0)
    factor[shadow] = 1.0 - (1.0 - attenuation) * ramp[shadow]
    return factor


def generate_scene(spec: SceneSpec, seed: int = 0) -> tuple:
    """Render a scene. Returns (H×W×3 uint8 image, shadow mask, shadow-edge map).

    The shadow is the occluders translated by the light offset minus the
    occluders themselves; noise is added after shading.
    """
    if not spec.occluders:
        raise DegenerateSceneError('scene has no occluders')
    occluder_mask = rasterize_occluders(spec.occluders, spec.size)
    cast = rasterize_occluders(spec.occluders, spec.size, spec.light_offset)
    shadow = cast & ~occluder_mask
    if not shadow.any():
        raise DegenerateSceneError('degenerate scene: the shadow falls outside the canvas',
                                   offset=tuple(spec.light_offset))

    shaded = _albedo(spec, occluder_mask) * shading_factor(shadow, spec.attenuation, spec.penumbra)[..., None]
    if spec.noise_std > 0:
        rng = np.random.default_rng(seed)
        shaded = shaded + rng.normal(0.0, spec.noise_std, size=shaded.shape)
    image = np.rint(np.clip(shaded, 0, 255)).astype(np.uint8)
    return image, shadow, region_mask_to_edge_gt(shadow)


# ============================================================
#  RANDOM SUITES
# ============================================================

def _random_color(rng: np.random.Generator, low: int, high: int) -> tuple:
    return tuple(int(v) for v in rng.integers(low, high, size=3))


def _random_occluder(rng: np.random.Generator, size: tuple) -> Occluder:
    width, height = size
    cx = float(rng.uniform(0.3, 0.7) * width)
    cy = float(rng.uniform(0.3, 0.7) * height)
    radius = float(rng.uniform(0.08, 0.15) * min(size))
    if rng.random() < 0.5:
        return Occluder('disc', [(cx, cy)], radius)
    n = int(rng.integers(3, 7))
    angles = np.sort(rng.uniform(0, 2 * np.pi, size=n))
    radii = radius * rng.uniform(0.7, 1.2, size=n)
    points = [(float(cx + r * np.cos(a)), float(cy + r * np.sin(a))) for a, r in zip(angles, radii)]
    return Occluder('polygon', points)


def random_scene_spec(rng: np.random.Generator, size: tuple = (128, 128),
                      materials: bool = True) -> SceneSpec:
    """Draw a random scene: one or two occluders, a cast shadow, optional albedo patches."""
    width, height = size
    occluders = [_random_occluder(rng, size) for _ in range(int(rng.integers(1, 3)))]
    angle = rng.uniform(0, 2 * np.pi)
    length = rng.uniform(0.08, 0.18) * min(size)
    offset = (int(round(length * np.cos(angle))), int(round(length * np.sin(angle))))
    if offset == (0, 0):
        offset = (int(max(1, round(length))), 0)

    patches = []
    if materials:
        for _ in range(int(rng.integers(0, 3))):
            x0 = int(rng.integers(0, width * 3 // 4))
            y0 = int(rng.integers(0, height * 3 // 4))
            x1 = int(min(width - 1, x0 + rng.integers(width // 8, width // 3)))
            y1 = int(min(height - 1, y0 + rng.integers(height // 8, height // 3)))
            patches.append(Material((x0, y0, x1, y1), _random_color(rng, 120, 255)))

    return SceneSpec(
        size=tuple(size),
        occluders=occluders,
        light_offset=offset,
        attenuation=float(rng.uniform(0.35, 0.6)),
        penumbra=float(rng.choice([0.0, 1.0, 2.0])),
        background=_random_color(rng, 150, 240),
        object_color=_random_color(rng, 60, 255),
        materials=patches,
        noise_std=2.0,
    )


def generate_suite(count: int, seed: int, output_dir: str, size: tuple = (128, 128),
                   verbose: bool = False) -> DatasetManifest:
    """Write ``count`` random scenes as images/, masks/ and edges/ PNGs plus a
    ``scenes.jsonl`` record of every spec, and return the dataset manifest."""
    if count < 1:
        raise ConfigError('scene count must be at least 1', key='count', got=count)
    specs_path = os.path.join(output_dir, 'scenes.jsonl')
    ensure_dir(specs_path)
    with open(specs_path, 'w') as f:
        for i in range(count):
            spec = random_scene_spec(np.random.default_rng([seed, i]), size)
            image, mask, edges = generate_scene(spec, derive_seed(seed, i))
            stem = f'scene_{i:04d}'
            save_rgb(image, os.path.join(output_dir, 'images', f'{stem}.png'))
            save_binary_png(mask, os.path.join(output_dir, 'masks', f'{stem}.png'))
            save_binary_png(edges, os.path.join(output_dir, 'edges', f'{stem}.png'))
            f.write(json.dumps({'stem': stem, **spec.to_dict()}, sort_keys=True) + '\n')
            if verbose:
                print(f"  ✓ {stem}  shadow={int(mask.sum())}px  edges={int(edges.sum())}px")
    return load_manifest(output_dir)
