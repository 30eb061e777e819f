"""Structured-output convolutional network built on numpy.

The architecture is fixed: a 28×28×3 patch goes through

    conv 5×5 ×6 → tanh → maxpool 3×3/1 → conv 5×5 ×12 → tanh → maxpool 3×3/1
    → dense 3072→64 → tanh → structured head 64 → label_size² two-way softmax units

Spatial extents run 28→24→22→18→16 and channels 3→6→6→12→12. Every layer
function accepts either a single sample (H×W×C) or a batch (N×H×W×C); all
arithmetic is float64.
"""

from dataclasses import dataclass, asdict, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeError


PATCH_SIZE = 28
PATCH_CHANNELS = 3
POOL_WINDOW = 3
POOL_STRIDE = 1
HIDDEN_UNITS = 64
LABEL_SIZES = (5, 1)
PROB_CLAMP = 1e-12

# Declaration order of parameter tensors (also their order in the model file)
PARAM_ORDER = (
    'conv1.w', 'conv1.b',
    'conv2.w', 'conv2.b',
    'dense.w', 'dense.b',
    'head.w', 'head.b',
)


@dataclass(frozen=True)
class LayerSpec:
    """One layer of the fixed chain."""
    kind: str  # conv | maxpool | dense | structured-head
    name: str
    kernel: int = 0
    stride: int = 1
    in_channels: int = 0
    out_channels: int = 0
    in_size: int = 0
    out_size: int = 0

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> 'LayerSpec':
        return cls(**data)


def build_architecture(label_size: int = 5) -> list:
    """Return the LayerSpec chain for the canonical network."""
    if label_size not in LABEL_SIZES:
        raise ShapeError(f'label size must be one of {LABEL_SIZES}', axis='label',
                         expected=LABEL_SIZES, got=label_size)
    return [
        LayerSpec('conv', 'conv1', kernel=5, in_channels=3, out_channels=6, in_size=28, out_size=24),
        LayerSpec('maxpool', 'pool1', kernel=3, in_channels=6, out_channels=6, in_size=24, out_size=22),
        LayerSpec('conv', 'conv2', kernel=5, in_channels=6, out_channels=12, in_size=22, out_size=18),
        LayerSpec('maxpool', 'pool2', kernel=3, in_channels=12, out_channels=12, in_size=18, out_size=16),
        LayerSpec('dense', 'dense', in_channels=16 * 16 * 12, out_channels=HIDDEN_UNITS, in_size=1, out_size=1),
        LayerSpec('structured-head', 'head', in_channels=HIDDEN_UNITS, out_channels=label_size * label_size,
                  in_size=1, out_size=label_size),
    ]


def check_architecture(layers: list):
    """Verify the extent/channel arithmetic of a layer chain and that it is the canonical one."""
    if len(layers) != 6:
        raise ShapeError('architecture must have 6 layers', axis='layers', expected=6, got=len(layers))
    label_size = layers[-1].out_size
    canonical = build_architecture(label_size)
    for layer, expected in zip(layers, canonical):
        if layer.kind in ('conv', 'maxpool'):
            derived = (layer.in_size - layer.kernel) // layer.stride + 1
            if derived != layer.out_size:
                raise ShapeError(f'{layer.name}: {layer.in_size} with kernel {layer.kernel} '
                                 f'gives {derived}, not {layer.out_size}',
                                 axis=f'{layer.name}.spatial', expected=derived, got=layer.out_size)
        if layer != expected:
            raise ShapeError(f'{layer.name} differs from the fixed architecture',
                             axis=layer.name, expected=expected.to_dict(), got=layer.to_dict())
    for prev, nxt in zip(layers[:4], layers[1:4]):
        if prev.out_size != nxt.in_size or prev.out_channels != nxt.in_channels:
            raise ShapeError(f'{prev.name} output does not feed {nxt.name}', axis=nxt.name)


def param_shapes(layers: list) -> dict:
    """Map parameter name to its tensor shape for a layer chain."""
    shapes = {}
    for layer in layers:
        if layer.kind == 'conv':
            shapes[f'{layer.name}.w'] = (layer.kernel, layer.kernel, layer.in_channels, layer.out_channels)
            shapes[f'{layer.name}.b'] = (layer.out_channels,)
        elif layer.kind == 'dense':
            shapes[f'{layer.name}.w'] = (layer.in_channels, layer.out_channels)
            shapes[f'{layer.name}.b'] = (layer.out_channels,)
        elif layer.kind == 'structured-head':
            shapes[f'{layer.name}.w'] = (layer.in_channels, layer.out_channels, 2)
            shapes[f'{layer.name}.b'] = (layer.out_channels, 2)
    return shapes


@dataclass
class CnnModel:
    """Layer chain, parameters, normalization statistics and training metadata."""
    layers: list
    params: dict
    norm_mean: np.ndarray = field(default_factory=lambda: np.zeros(PATCH_CHANNELS))
    norm_std: np.ndarray = field(default_factory=lambda: np.ones(PATCH_CHANNELS))
    seed: int = 0
    version: int = 1

    def __post_init__(self):
        check_architecture(self.layers)
        shapes = param_shapes(self.layers)
        if tuple(self.params) != PARAM_ORDER:
            raise ShapeError('parameters must be given in declaration order', axis='params',
                             expected=PARAM_ORDER, got=tuple(self.params))
        for name, shape in shapes.items():
            got = tuple(np.shape(self.params[name]))
            if got != shape:
                raise ShapeError(f'{name} has shape {got}, expected {shape}', axis=name,
                                 expected=shape, got=got)
        self.norm_mean = np.asarray(self.norm_mean, dtype=np.float64).reshape(PATCH_CHANNELS)
        self.norm_std = np.asarray(self.norm_std, dtype=np.float64).reshape(PATCH_CHANNELS)
        if not np.all(self.norm_std > 0):
            raise ShapeError('normalization std must be strictly positive', axis='norm_std',
                             got=self.norm_std.tolist())

    @property
    def label_size(self) -> int:
        return self.layers[-1].out_size

    @property
    def units(self) -> int:
        return self.label_size * self.label_size

    @property
    def parameter_count(self) -> int:
        return int(sum(np.size(v) for v in self.params.values()))

    def copy(self) -> 'CnnModel':
        return CnnModel(
            layers=list(self.layers),
            params={k: np.array(v, dtype=np.float64, copy=True) for k, v in self.params.items()},
            norm_mean=self.norm_mean.copy(),
            norm_std=self.norm_std.copy(),
            seed=self.seed,
            version=self.version,
        )

    def normalize(self, patches: np.ndarray) -> np.ndarray:
        """Apply the per-channel normalization stored with the model."""
        return (np.asarray(patches, dtype=np.float64) - self.norm_mean) / self.norm_std


def _fans(name: str, shape: tuple) -> tuple:
    if name.startswith('conv'):
        k, _, cin, cout = shape
        return k * k * cin, k * k * cout
    if name.startswith('dense'):
        return shape
    return shape[0], shape[1] * shape[2]


def init_model(seed: int = 0, label_size: int = 5, init_scale: float = 1.0) -> CnnModel:
    """Fresh model: weights uniform in ±scale·sqrt(6/(fan_in+fan_out)), biases zero."""
    layers = build_architecture(label_size)
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in param_shapes(layers).items():
        if name.endswith('.b') or init_scale == 0:
            params[name] = np.zeros(shape)
            continue
        fan_in, fan_out = _fans(name, shape)
        bound = init_scale * np.sqrt(6.0 / (fan_in + fan_out))
        params[name] = rng.uniform(-bound, bound, size=shape)
    return CnnModel(layers=layers, params=params, seed=seed)


# ============================================================
#  LAYER KERNELS
# ============================================================

def _batched(x: np.ndarray, rank: int) -> tuple:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == rank - 1:
        return x[None], True
    if x.ndim != rank:
        raise ShapeError(f'expected a {rank - 1}- or {rank}-axis tensor, got {x.ndim}',
                         axis='rank', expected=rank, got=x.ndim)
    return x, False


def conv2d_forward(x: np.ndarray, kernels: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Valid, unit-stride convolution (cross-correlation) plus bias.

    x is H×W×C (or N×H×W×C), kernels k×k×C×F, bias length F.
    """
    x, single = _batched(x, 4)
    kernels = np.asarray(kernels, dtype=np.float64)
    bias = np.asarray(bias, dtype=np.float64)
    if kernels.ndim != 4 or kernels.shape[0] != kernels.shape[1]:
        raise ShapeError('kernels must be k×k×C×F', axis='kernel', got=kernels.shape)
    k, _, cin, cout = kernels.shape
    if x.shape[3] != cin:
        raise ShapeError(f'input has {x.shape[3]} channels, kernels expect {cin}',
                         axis='channels', expected=cin, got=x.shape[3])
    if x.shape[1] < k:
        raise ShapeError(f'input height {x.shape[1]} smaller than kernel {k}', axis='height',
                         expected=k, got=x.shape[1])
    if x.shape[2] < k:
        raise ShapeError(f'input width {x.shape[2]} smaller than kernel {k}', axis='width',
                         expected=k, got=x.shape[2])
    if bias.shape != (cout,):
        raise ShapeError(f'bias must have length {cout}', axis='bias', expected=cout, got=bias.shape)

    windows = sliding_window_view(x, (k, k), axis=(1, 2))  # N×H'×W'×C×k×k
    out = np.einsum('nhwcij,ijcf->nhwf', windows, kernels, optimize=True) + bias
    return out[0] if single else out


def conv2d_backward(x: np.ndarray, kernels: np.ndarray, dout: np.ndarray,
                    need_input_grad: bool = True) -> tuple:
    """Gradients of a valid convolution. Returns (dx, dkernels, dbias); dx is None when not needed."""
    k = kernels.shape[0]
    windows = sliding_window_view(x, (k, k), axis=(1, 2))
    dkernels = np.einsum('nhwcij,nhwf->ijcf', windows, dout, optimize=True)
    dbias = dout.sum(axis=(0, 1, 2))
    if not need_input_grad:
        return None, dkernels, dbias
    padded = np.pad(dout, ((0, 0), (k - 1, k - 1), (k - 1, k - 1), (0, 0)))
    pwindows = sliding_window_view(padded, (k, k), axis=(1, 2))  # N×H×W×F×k×k
    dx = np.einsum('nhwfij,ijcf->nhwc', pwindows, kernels[::-1, ::-1], optimize=True)
    return dx, dkernels, dbias


def maxpool_forward(x: np.ndarray, window: int = POOL_WINDOW, stride: int = POOL_STRIDE) -> tuple:
    """Max pooling. Returns (output, argmax) where argmax is the row-major offset
    inside each window; ties go to the first maximum in row-major order."""
    x, single = _batched(x, 4)
    if x.shape[1] < window:
        raise ShapeError(f'input height {x.shape[1]} smaller than pooling window {window}',
                         axis='height', expected=window, got=x.shape[1])
    if x.shape[2] < window:
        raise ShapeError(f'input width {x.shape[2]} smaller than pooling window {window}',
                         axis='width', expected=window, got=x.shape[2])
    windows = sliding_window_view(x, (window, window), axis=(1, 2))[:, ::stride, ::stride]
    flat = windows.reshape(windows.shape[:4] + (window * window,))
    argmax = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, argmax[..., None], axis=-1)[..., 0]
    if single:
        return out[0], argmax[0]
    return out, argmax


def maxpool_backward(dout: np.ndarray, argmax: np.ndarray, input_shape: tuple,
                     window: int = POOL_WINDOW, stride: int = POOL_STRIDE) -> np.ndarray:
    """Route pooled gradients back to the selected window positions."""
    dx = np.zeros(input_shape)
    out_h, out_w = dout.shape[1:3]
    for offset in range(window * window):
        di, dj = divmod(offset, window)
        routed = np.where(argmax == offset, dout, 0.0)
        dx[:, di:di + stride * (out_h - 1) + 1:stride, dj:dj + stride * (out_w - 1) + 1:stride, :] += routed
    return dx


def dense_forward(x: np.ndarray, weights: np.ndarray, bias: np.ndarray,
                  activate: bool = True) -> np.ndarray:
    """Affine map x·W + b, followed by tanh unless ``activate`` is False."""
    x = np.asarray(x, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    if weights.ndim != 2 or x.shape[-1] != weights.shape[0]:
        raise ShapeError(f'input has {x.shape[-1]} features, weights expect '
                         f'{weights.shape[0] if weights.ndim else "?"}', axis='features',
                         expected=weights.shape, got=x.shape)
    if np.shape(bias) != (weights.shape[1],):
        raise ShapeError('bias does not match dense output', axis='bias',
                         expected=weights.shape[1], got=np.shape(bias))
    pre = x @ weights + bias
    return np.tanh(pre) if activate else pre


def two_way_softmax(logits: np.ndarray) -> np.ndarray:
    """Softmax over the trailing axis of size 2."""
    shifted = logits - logits.max(axis=-1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=-1, keepdims=True)


def structured_head_forward(hidden: np.ndarray, weights: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Independent two-way softmax units.

    Returns class probabilities shaped (..., units, 2); column 1 is the
    shadow-edge probability of each cell of the central patch, row-major.
    """
    hidden = np.asarray(hidden, dtype=np.float64)
    if hidden.shape[-1] != weights.shape[0]:
        raise ShapeError('hidden width does not match head weights', axis='features',
                         expected=weights.shape[0], got=hidden.shape[-1])
    logits = np.einsum('...k,kuc->...uc', hidden, weights) + bias
    return two_way_softmax(logits)


# ============================================================
#  NETWORK
# ============================================================

def _check_patches(x: np.ndarray):
    for axis, idx, expected in (('height', 1, PATCH_SIZE), ('width', 2, PATCH_SIZE),
                                ('channels', 3, PATCH_CHANNELS)):
        if x.shape[idx] != expected:
            raise ShapeError(f'patch {axis} is {x.shape[idx]}, expected {expected}', axis=axis,
                             expected=expected, got=x.shape[idx])


def forward_cached(model: CnnModel, x: np.ndarray) -> tuple:
    """Batch forward pass keeping the activations needed for backprop.

    Returns (shadow probabilities N×units, cache).
    """
    p = model.params
    z1 = conv2d_forward(x, p['conv1.w'], p['conv1.b'])
    a1 = np.tanh(z1)
    m1, arg1 = maxpool_forward(a1)
    z2 = conv2d_forward(m1, p['conv2.w'], p['conv2.b'])
    a2 = np.tanh(z2)
    m2, arg2 = maxpool_forward(a2)
    flat = m2.reshape(m2.shape[0], -1)
    hidden = dense_forward(flat, p['dense.w'], p['dense.b'])
    class_probs = structured_head_forward(hidden, p['head.w'], p['head.b'])
    cache = {
        'x': x, 'a1': a1, 'm1': m1, 'arg1': arg1, 'a2': a2, 'm2': m2, 'arg2': arg2,
        'flat': flat, 'hidden': hidden, 'class_probs': class_probs,
    }
    return class_probs[..., 1], cache


def forward(model: CnnModel, patch: np.ndarray) -> np.ndarray:
    """Shadow-edge probabilities for one normalized patch (units,) or a batch (N×units)."""
    x, single = _batched(patch, 4)
    _check_patches(x)
    probs, _ = forward_cached(model, x)
    return probs[0] if single else probs


def _check_labels(y: np.ndarray, units: int) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64)
    if y.shape[-1] != units:
        raise ShapeError(f'label has {y.shape[-1]} cells, model predicts {units}', axis='label',
                         expected=units, got=y.shape[-1])
    if not np.all((y == 0) | (y == 1)):
        raise ValueError('label values must be 0 or 1')
    return y


def batch_loss_and_grads(model: CnnModel, x: np.ndarray, y: np.ndarray) -> tuple:
    """Summed cross-entropy over a batch and the summed gradient of every parameter."""
    p = model.params
    probs, cache = forward_cached(model, x)
    clamped = np.clip(probs, PROB_CLAMP, 1.0 - PROB_CLAMP)
    loss = float(-np.sum(y * np.log(clamped) + (1.0 - y) * np.log(1.0 - clamped)))

    # softmax + cross-entropy: dL/dlogits = probs - onehot
    dlogits = cache['class_probs'].copy()
    dlogits[..., 1] -= y
    dlogits[..., 0] -= 1.0 - y

    grads = {}
    hidden = cache['hidden']
    grads['head.w'] = np.einsum('nk,nuc->kuc', hidden, dlogits, optimize=True)
    grads['head.b'] = dlogits.sum(axis=0)
    dhidden = np.einsum('nuc,kuc->nk', dlogits, p['head.w'], optimize=True)

    dz_dense = dhidden * (1.0 - hidden ** 2)
    grads['dense.w'] = cache['flat'].T @ dz_dense
    grads['dense.b'] = dz_dense.sum(axis=0)
    dm2 = (dz_dense @ p['dense.w'].T).reshape(cache['m2'].shape)

    da2 = maxpool_backward(dm2, cache['arg2'], cache['a2'].shape)
    dz2 = da2 * (1.0 - cache['a2'] ** 2)
    dm1, grads['conv2.w'], grads['conv2.b'] = conv2d_backward(cache['m1'], p['conv2.w'], dz2)

    da1 = maxpool_backward(dm1, cache['arg1'], cache['a1'].shape)
    dz1 = da1 * (1.0 - cache['a1'] ** 2)
    _, grads['conv1.w'], grads['conv1.b'] = conv2d_backward(x, p['conv1.w'], dz1, need_input_grad=False)

    return loss, {name: grads[name] for name in PARAM_ORDER}, cache


def loss_and_backward(model: CnnModel, patch: np.ndarray, label: np.ndarray) -> tuple:
    """Loss −Σ[y log p + (1−y) log(1−p)] over the units of one patch, and its gradients."""
    x, single = _batched(patch, 4)
    _check_patches(x)
    y = _check_labels(label, model.units).reshape(x.shape[0], model.units)
    loss, grads, _ = batch_loss_and_grads(model, x, y)
    return loss, grads
