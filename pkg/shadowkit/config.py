"""Run configuration: defaults, flat ``key = value`` files and command-line overrides."""

from dataclasses import asdict, dataclass, field, fields
from typing import Optional

from .canny import CannyParams
from .errors import ConfigError
from .measures import MeasureParams
from .training import TrainConfig
from .utils import ensure_dir


def _option(default, help: str, low=None, high=None, open_low: bool = False, choices=None):
    return field(default=default, metadata={
        'help': help, 'low': low, 'high': high, 'open_low': open_low, 'choices': choices,
    })


@dataclass
class Config:
    seed: int = _option(0, 'base seed for sampling, initialization, shuffling and synthesis', low=0)

    # edges
    canny_sigma: float = _option(1.4, 'Canny Gaussian sigma in pixels', low=0, open_low=True)
    canny_low: float = _option(0.1, 'Canny low threshold (fraction of max gradient)', low=0, high=1, open_low=True)
    canny_high: float = _option(0.2, 'Canny high threshold (fraction of max gradient)', low=0, high=1, open_low=True)
    edge_threshold: float = _option(0.5, 'probability threshold for binary shadow edges', low=0, high=1)

    # training data
    dilation_radius: int = _option(2, 'groundtruth edge dilation radius for positive centres', low=0, high=10)
    samples_per_class: int = _option(800, 'max positive (and negative) patches per image', low=1, high=800)
    label_size: int = _option(5, 'structured output side: 5, or 1 for the unary ablation', choices=(5, 1))

    # training
    learning_rate: float = _option(0.05, 'initial SGD learning rate', low=0, open_low=True)
    lr_decay: float = _option(0.95, 'learning rate decay per epoch', low=0, high=1, open_low=True)
    epochs: int = _option(200, 'training epochs', low=1)
    batch_size: int = _option(16, 'minibatch size', low=1)
    init_scale: float = _option(1.0, 'scale of the Glorot-uniform initialization (0 = zeros)', low=0)

    # superpixels
    region_size: int = _option(14, 'nominal superpixel side in pixels', low=4)
    compactness: float = _option(10.0, 'superpixel colour/position trade-off', low=0, open_low=True)
    slic_iterations: int = _option(10, 'superpixel clustering iterations', low=1)
    edge_min_pixels: int = _option(10, 'edge pixels needed to put a superpixel at a shadow edge', low=1)
    edge_min_fraction: float = _option(0.02, 'same, as a fraction of the superpixel area', low=0, high=1)
    lightness_tolerance: float = _option(0.5, 'neighbours within this lightness count as the same side', low=0)

    # measures
    sigma_clr: float = _option(5.0, 'colour sigma of the geodesic affinity', low=0, open_low=True)
    sigma_con: float = _option(1.0, 'connectivity sigma of the local measure', low=0, open_low=True)
    sigma_app: float = _option(10.0, 'colour sigma of the global propagation', low=0, open_low=True)
    sigma_spa: float = _option(0.0, 'spatial sigma of the global propagation (0 = quarter diagonal)', low=0)
    squared_con: bool = _option(False, 'square the connectivity in the local measure')

    # optimization
    lam: float = _option(0.001, 'weight of the boundary anchor term', low=0)
    mu: float = _option(0.1, 'constant added to every smoothness weight', low=0)
    ridge_eps: float = _option(1e-9, 'diagonal ridge that keeps the system positive definite',
                               low=0, open_low=True)
    shadow_threshold: float = _option(0.5, 'shadow value threshold for the binary mask', low=0, high=1)

    # evaluation and synthesis
    roc_thresholds: int = _option(256, 'threshold levels of the exported ROC curve', low=2)
    synth_size: int = _option(128, 'side of synthetic scenes in pixels', low=32)

    def __post_init__(self):
        self.validate()

    def validate(self):
        for f in fields(self):
            value = getattr(self, f.name)
            meta = f.metadata
            if f.type is bool or f.type == 'bool':
                if not isinstance(value, bool):
                    raise ConfigError(f'{f.name} must be true or false', key=f.name, got=value)
                continue
            if meta['choices'] is not None and value not in meta['choices']:
                raise ConfigError(f'{f.name} must be one of {list(meta["choices"])}', key=f.name, got=value)
            low, high = meta['low'], meta['high']
            if low is not None and (value <= low if meta['open_low'] else value < low):
                bound = '>' if meta['open_low'] else '>='
                raise ConfigError(f'{f.name} must be {bound} {low}', key=f.name, got=value)
            if high is not None and value > high:
                raise ConfigError(f'{f.name} must be <= {high}', key=f.name, got=value)
        if not self.canny_low < self.canny_high:
            raise ConfigError('canny_low must be below canny_high', key='canny_low',
                              low=self.canny_low, high=self.canny_high)

    # ------------------------------------------------------------
    #  Views for the individual stages
    # ------------------------------------------------------------

    def canny_params(self) -> CannyParams:
        return CannyParams(sigma=self.canny_sigma, low=self.canny_low, high=self.canny_high)

    def train_config(self) -> TrainConfig:
        return TrainConfig(learning_rate=self.learning_rate, epochs=self.epochs,
                           batch_size=self.batch_size, seed=self.seed,
                           init_scale=self.init_scale, lr_decay=self.lr_decay)

    def measure_params(self) -> MeasureParams:
        return MeasureParams(sigma_clr=self.sigma_clr, sigma_con=self.sigma_con,
                             sigma_app=self.sigma_app, sigma_spa=self.sigma_spa or None,
                             squared_con=self.squared_con)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_text(self) -> str:
        lines = ['# resolved shadowkit configuration']
        for f in fields(self):
            value = getattr(self, f.name)
            lines.append(f'{f.name} = {_format_value(value)}')
        return '\n'.join(lines) + '\n'


# ============================================================
#  PARSING
# ============================================================

_TRUE = {'true', 'yes', 'on', '1'}
_FALSE = {'false', 'no', 'off', '0'}


def _format_value(value) -> str:
    if isinstance(value, bool):
        return 'true' if value else 'false'
    return repr(value) if isinstance(value, float) else str(value)


def _field_types() -> dict:
    types = {}
    for f in fields(Config):
        kind = f.type if isinstance(f.type, type) else {'int': int, 'float': float, 'bool': bool}[f.type]
        types[f.name] = kind
    return types


def config_options() -> list:
    """(name, type, default, help) for every configuration key, in declaration order."""
    types = _field_types()
    return [(f.name, types[f.name], f.default, f.metadata['help']) for f in fields(Config)]


def parse_value(key: str, raw) -> object:
    """Coerce a raw string (or already-typed value) to the type of ``key``."""
    types = _field_types()
    if key not in types:
        raise ConfigError(f'unknown configuration key {key!r}', key=key)
    kind = types[key]
    if not isinstance(raw, str):
        if kind is float and isinstance(raw, int) and not isinstance(raw, bool):
            return float(raw)
        return raw
    text = raw.strip()
    try:
        if kind is bool:
            if text.lower() in _TRUE:
                return True
            if text.lower() in _FALSE:
                return False
            raise ValueError(text)
        if kind is int:
            return int(text)
        return float(text)
    except ValueError:
        raise ConfigError(f'{key} expects {kind.__name__}, got {text!r}', key=key, got=text)


def read_config_file(path: str) -> dict:
    """Parse ``key = value`` (or ``key value``) lines; ``#`` starts a comment."""
    values = {}
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            line = line.split('#', 1)[0].strip()
            if not line:
                continue
            if '=' in line:
                key, _, raw = line.partition('=')
            else:
                parts = line.split(None, 1)
                if len(parts) != 2:
                    raise ConfigError(f'line {lineno} has no value', key=parts[0], line=lineno)
                key, raw = parts
            key = key.strip().replace('-', '_')
            values[key] = parse_value(key, raw)
    return values


def resolve_config(path: Optional[str] = None, overrides: Optional[dict] = None) -> Config:
    """Defaults, then the config file, then command-line overrides (None = not given)."""
    values = {}
    if path:
        values.update(read_config_file(path))
    for key, raw in (overrides or {}).items():
        if raw is not None:
            values[key] = parse_value(key, raw)
    return Config(**values)


def write_resolved_config(config: Config, path: str):
    ensure_dir(path)
    with open(path, 'w') as f:
        f.write(config.to_text())
