"""Least-squares optimization of per-superpixel shadow values and their
rasterization to a pixel mask."""

from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.linalg import LinAlgError, cho_factor, cho_solve
from scipy.sparse.linalg import cg

from .errors import ConfigError, NonFiniteSystemError, ShapeError, SolverError
from .measures import MeasureSet, gaussian_affinity
from .superpixels import BoundarySets, SuperpixelSegmentation


RESIDUAL_TOL = 1e-8
DENSE_LIMIT = 5000
REFINE_STEPS = 3


@dataclass
class EnergyWeights:
    """Unary pulls towards 0 (``w_shd``) and 1 (``w_brt``), pairwise smoothness
    on adjacent superpixels, and λ-weighted anchors on boundary superpixels."""
    w_shd: np.ndarray
    w_brt: np.ndarray
    pairs: np.ndarray
    w_pair: np.ndarray
    lam: float
    anchored: np.ndarray
    anchor_values: np.ndarray
    eps: float = 1e-9

    def __post_init__(self):
        if self.lam < 0:
            raise ConfigError('lambda must be non-negative', key='lam', got=self.lam)
        if not self.eps > 0:
            raise ConfigError('ridge eps must be strictly positive', key='eps', got=self.eps)
        for name in ('w_shd', 'w_brt', 'w_pair'):
            if np.any(np.asarray(getattr(self, name)) < 0):
                raise ConfigError(f'{name} must be non-negative', key=name)
        self.pairs = np.asarray(self.pairs, dtype=np.int64).reshape(-1, 2)
        if len(self.w_pair) != len(self.pairs):
            raise ShapeError('one smoothness weight per pair required', axis='w_pair',
                             expected=len(self.pairs), got=len(self.w_pair))

    @property
    def n(self) -> int:
        return len(self.w_shd)


@dataclass
class ShadowMap:
    values: np.ndarray
    soft: np.ndarray
    mask: np.ndarray
    threshold: float


def build_weights(measures: MeasureSet, seg: SuperpixelSegmentation, bounds: BoundarySets,
                  lam: float = 0.001, mu: float = 0.1, sigma_clr: float = 5.0,
                  eps: float = 1e-9) -> EnergyWeights:
    """Unary weights from the global measures, w_ij = exp(-d²/2σ²) + μ on adjacent pairs."""
    if mu < 0:
        raise ConfigError('mu must be non-negative', key='mu', got=mu)
    pairs = np.asarray(seg.adjacency, dtype=np.int64).reshape(-1, 2)
    diff = seg.mean_lab[pairs[:, 0]] - seg.mean_lab[pairs[:, 1]]
    w_pair = gaussian_affinity(np.sqrt(np.sum(diff * diff, axis=1)), sigma_clr) + mu
    anchored = np.zeros(seg.n, dtype=bool)
    anchor_values = np.zeros(seg.n)
    anchored[sorted(bounds.shd | bounds.lit)] = True
    anchor_values[sorted(bounds.shd)] = 1.0
    return EnergyWeights(
        w_shd=np.asarray(measures.global_shd, dtype=np.float64),
        w_brt=np.asarray(measures.global_lit, dtype=np.float64),
        pairs=pairs, w_pair=w_pair, lam=float(lam),
        anchored=anchored, anchor_values=anchor_values, eps=float(eps),
    )


def laplacian(n: int, pairs: np.ndarray, w_pair: np.ndarray) -> sparse.csr_matrix:
    """Graph Laplacian with each unordered pair counted once."""
    i, j = pairs[:, 0], pairs[:, 1]
    rows = np.concatenate([i, j, i, j])
    cols = np.concatenate([j, i, i, j])
    vals = np.concatenate([-w_pair, -w_pair, w_pair, w_pair])
    return sparse.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()


def assemble_system(weights: EnergyWeights) -> tuple:
    """(A, b) with A s = b the stationarity condition of the energy plus a ridge ε."""
    n = weights.n
    diagonal = weights.w_shd + weights.w_brt + weights.lam * weights.anchored + weights.eps
    A = sparse.diags(diagonal, format='csr') + laplacian(n, weights.pairs, weights.w_pair)
    b = weights.w_brt + weights.lam * weights.anchor_values * weights.anchored
    return A.tocsr(), b


def residual_norm(A, s: np.ndarray, b: np.ndarray) -> float:
    return float(np.max(np.abs(A @ s - b))) if len(b) else 0.0


def solve(A, b: np.ndarray, dense_limit: int = DENSE_LIMIT, tol: float = RESIDUAL_TOL) -> np.ndarray:
    """Solve the symmetric positive definite system to ‖As − b‖∞ < tol.

    Up to ``dense_limit`` unknowns use a Cholesky factorization with a few
    steps of iterative refinement; larger systems use conjugate gradients.
    """
    A = sparse.csr_matrix(A, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if A.shape != (len(b), len(b)):
        raise ShapeError('system matrix and right-hand side disagree', axis='rows',
                         expected=(len(b), len(b)), got=A.shape)
    if not (np.all(np.isfinite(A.data)) and np.all(np.isfinite(b))):
        raise NonFiniteSystemError('system contains non-finite entries', n=len(b))
    if len(b) == 0:
        return np.zeros(0)

    if len(b) <= dense_limit:
        try:
            factor = cho_factor(A.toarray())
        except LinAlgError as e:
            raise SolverError(f'cholesky factorization failed: {e}', n=len(b))
        s = cho_solve(factor, b)
        for _ in range(REFINE_STEPS):
            if residual_norm(A, s, b) < tol:
                break
            s = s + cho_solve(factor, b - A @ s)
    else:
        jacobi = sparse.diags(1.0 / A.diagonal())
        s, info = cg(A, b, rtol=0.0, atol=tol / 10.0, maxiter=10 * len(b), M=jacobi)
        if info < 0:
            raise SolverError('conjugate gradient breakdown', n=len(b), info=info)

    residual = residual_norm(A, s, b)
    if not residual < tol:
        raise SolverError('solver did not reach the residual target', n=len(b),
                          residual=residual, tol=tol)
    return s


def energy(weights: EnergyWeights, s: np.ndarray) -> float:
    """Shadow energy of the values ``s`` (the ridge is not part of it)."""
    s = np.asarray(s, dtype=np.float64)
    unary = np.sum(weights.w_shd * s * s) + np.sum(weights.w_brt * (1.0 - s) ** 2)
    if len(weights.pairs):
        diff = s[weights.pairs[:, 0]] - s[weights.pairs[:, 1]]
        smooth = np.sum(weights.w_pair * diff * diff)
    else:
        smooth = 0.0
    anchor = weights.lam * np.sum(((s - weights.anchor_values) ** 2)[weights.anchored])
    return float(unary + smooth + anchor)


def rasterize(values: np.ndarray, seg, threshold: float = 0.5) -> ShadowMap:
    """Paint each superpixel with its value clamped to [0, 1]; mask = value >= threshold.

    ``seg`` is a segmentation or a bare label map.
    """
    if not 0 <= threshold <= 1:
        raise ConfigError('shadow threshold must lie in [0, 1]', key='shadow_threshold', got=threshold)
    labels = seg.labels if isinstance(seg, SuperpixelSegmentation) else np.asarray(seg)
    values = np.asarray(values, dtype=np.float64)
    if not np.all(np.isfinite(values)):
        raise NonFiniteSystemError('shadow values must be finite')
    soft = np.clip(values, 0.0, 1.0)[labels]
    return ShadowMap(values=values, soft=soft, mask=soft >= threshold, threshold=float(threshold))


def optimize_shadows(seg: SuperpixelSegmentation, bounds: BoundarySets, measures: MeasureSet,
                     lam: float = 0.001, mu: float = 0.1, sigma_clr: float = 5.0,
                     eps: float = 1e-9, threshold: float = 0.5) -> tuple:
    """Weights, solve and rasterize in one go. Returns (ShadowMap, EnergyWeights)."""
    weights = build_weights(measures, seg, bounds, lam=lam, mu=mu, sigma_clr=sigma_clr, eps=eps)
    A, b = assemble_system(weights)
    s = solve(A, b)
    return rasterize(s, seg, threshold), weights
