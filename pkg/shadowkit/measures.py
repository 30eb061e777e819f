"""Geodesic distances on the superpixel graph and the shadow/bright
connectivity, local and global measures built on them."""

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.sparse.csgraph import csgraph_from_dense, dijkstra
from scipy.spatial.distance import cdist

from .errors import ConfigError
from .superpixels import BoundarySets, SuperpixelSegmentation
from .utils import write_csv


@dataclass
class MeasureParams:
    """Gaussian widths. ``sigma_spa`` of None means a quarter of the image diagonal."""
    sigma_clr: float = 5.0
    sigma_con: float = 1.0
    sigma_app: float = 10.0
    sigma_spa: Optional[float] = None
    squared_con: bool = False

    def __post_init__(self):
        for key in ('sigma_clr', 'sigma_con', 'sigma_app', 'sigma_spa'):
            value = getattr(self, key)
            if value is not None and not value > 0:
                raise ConfigError(f'{key} must be strictly positive', key=key, got=value)

    def spatial_sigma(self, shape: tuple) -> float:
        if self.sigma_spa is not None:
            return float(self.sigma_spa)
        return 0.25 * float(np.hypot(*shape[:2]))


@dataclass
class SuperpixelGraph:
    """Undirected weighted edges (i < j); ``weights`` may hold inf."""
    n: int
    pairs: np.ndarray
    weights: np.ndarray


@dataclass
class Connectivity:
    con_shd: np.ndarray
    con_lit: np.ndarray
    len_shd: np.ndarray
    len_lit: np.ndarray
    area: np.ndarray


@dataclass
class MeasureSet:
    con_shd: np.ndarray
    con_lit: np.ndarray
    local_shd: np.ndarray
    local_lit: np.ndarray
    global_shd: np.ndarray
    global_lit: np.ndarray
    len_shd: np.ndarray
    len_lit: np.ndarray
    area: np.ndarray

    @property
    def pr_loc_shd(self) -> np.ndarray:
        return 1.0 - self.local_shd

    @property
    def pr_loc_lit(self) -> np.ndarray:
        return 1.0 - self.local_lit

    @property
    def pr_glb_shd(self) -> np.ndarray:
        return 1.0 - self.global_shd

    @property
    def pr_glb_lit(self) -> np.ndarray:
        return 1.0 - self.global_lit


CSV_COLUMNS = ['id', 'con_shd', 'con_lit', 'local_shd', 'local_lit', 'global_shd', 'global_lit',
               'pr_loc_shd', 'pr_loc_lit', 'pr_glb_shd', 'pr_glb_lit', 'len_shd', 'len_lit', 'area']


# ============================================================
#  GRAPH AND GEODESICS
# ============================================================

def build_graph(seg: SuperpixelSegmentation, bounds: BoundarySets) -> SuperpixelGraph:
    """Adjacent superpixels joined by their Lab colour distance; shd–lit edges are cut (inf)."""
    pairs = np.asarray(seg.adjacency, dtype=np.int64).reshape(-1, 2)
    diff = seg.mean_lab[pairs[:, 0]] - seg.mean_lab[pairs[:, 1]]
    weights = np.sqrt(np.sum(diff * diff, axis=1))
    shd = np.zeros(seg.n, dtype=bool)
    lit = np.zeros(seg.n, dtype=bool)
    shd[list(bounds.shd)] = True
    lit[list(bounds.lit)] = True
    a, b = pairs[:, 0], pairs[:, 1]
    weights[(shd[a] & lit[b]) | (lit[a] & shd[b])] = np.inf
    return SuperpixelGraph(n=seg.n, pairs=pairs, weights=weights)


def geodesic_all_pairs(graph: SuperpixelGraph) -> np.ndarray:
    """Shortest accumulated edge weight between every pair; inf when unreachable."""
    dense = np.full((graph.n, graph.n), np.inf)
    finite = np.isfinite(graph.weights)
    i, j = graph.pairs[finite, 0], graph.pairs[finite, 1]
    dense[i, j] = graph.weights[finite]
    dense[j, i] = graph.weights[finite]
    # inf marks a missing edge, so zero-weight edges survive
    sparse = csgraph_from_dense(dense, null_value=np.inf)
    geo = dijkstra(sparse, directed=True)
    geo = np.minimum(geo, geo.T)
    np.fill_diagonal(geo, 0.0)
    return geo


# ============================================================
#  MEASURES
# ============================================================

def gaussian_affinity(distance: np.ndarray, sigma: float) -> np.ndarray:
    """exp(-d² / 2σ²); an infinite distance gives 0."""
    d = np.asarray(distance, dtype=np.float64)
    return np.exp(-(d * d) / (2.0 * sigma * sigma))


def connectivity(geo: np.ndarray, bounds: BoundarySets, sigma_clr: float) -> Connectivity:
    """Boundary connectivity con = Len / sqrt(Area) towards the shd and lit sets."""
    if not sigma_clr > 0:
        raise ConfigError('sigma_clr must be strictly positive', key='sigma_clr')
    affinity = gaussian_affinity(geo, sigma_clr)
    area = affinity.sum(axis=1)
    len_shd = affinity[:, sorted(bounds.shd)].sum(axis=1)
    len_lit = affinity[:, sorted(bounds.lit)].sum(axis=1)
    root = np.sqrt(area)
    return Connectivity(con_shd=len_shd / root, con_lit=len_lit / root,
                        len_shd=len_shd, len_lit=len_lit, area=area)


def local_measures(con: np.ndarray, sigma_con: float, squared: bool = False) -> tuple:
    """(γ, Pr_loc) with γ = exp(-con / 2σ²); ``squared`` uses con² instead."""
    if not sigma_con > 0:
        raise ConfigError('sigma_con must be strictly positive', key='sigma_con')
    con = np.asarray(con, dtype=np.float64)
    x = con * con if squared else con
    gamma = np.exp(-x / (2.0 * sigma_con * sigma_con))
    return gamma, 1.0 - gamma


def global_measures(gamma: np.ndarray, seg: SuperpixelSegmentation, sigma_app: float,
                    sigma_spa: float) -> tuple:
    """(Γ, Pr_glb): colour- and position-weighted average of γ over all superpixels."""
    gamma = np.asarray(gamma, dtype=np.float64)
    weights = (gaussian_affinity(cdist(seg.mean_lab, seg.mean_lab), sigma_app)
               * gaussian_affinity(cdist(seg.centroids, seg.centroids), sigma_spa))
    spread = weights @ gamma / weights.sum(axis=1)
    spread = np.clip(spread, gamma.min(), gamma.max())
    return spread, 1.0 - spread


def compute_measures(seg: SuperpixelSegmentation, bounds: BoundarySets,
                     params: MeasureParams = None) -> MeasureSet:
    params = params or MeasureParams()
    geo = geodesic_all_pairs(build_graph(seg, bounds))
    conn = connectivity(geo, bounds, params.sigma_clr)
    local_shd, _ = local_measures(conn.con_shd, params.sigma_con, params.squared_con)
    local_lit, _ = local_measures(conn.con_lit, params.sigma_con, params.squared_con)
    sigma_spa = params.spatial_sigma(seg.labels.shape)
    global_shd, _ = global_measures(local_shd, seg, params.sigma_app, sigma_spa)
    global_lit, _ = global_measures(local_lit, seg, params.sigma_app, sigma_spa)
    return MeasureSet(
        con_shd=conn.con_shd, con_lit=conn.con_lit,
        local_shd=local_shd, local_lit=local_lit,
        global_shd=global_shd, global_lit=global_lit,
        len_shd=conn.len_shd, len_lit=conn.len_lit, area=conn.area,
    )


def write_measures_csv(measures: MeasureSet, path: str, shadow_values: np.ndarray = None):
    """One row per superpixel; an optional ``s`` column holds the optimized shadow values."""
    header = list(CSV_COLUMNS) + (['s'] if shadow_values is not None else [])
    rows = []
    for i in range(len(measures.area)):
        row = [i] + [float(getattr(measures, name)[i]) for name in CSV_COLUMNS[1:]]
        if shadow_values is not None:
            row.append(float(shadow_values[i]))
        rows.append(row)
    write_csv(path, header, rows)
