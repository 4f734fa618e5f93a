"""Triangle meshes, geodesic distances, and adjacency construction.

Geodesics are edge-weighted shortest paths (Dijkstra), which is accurate
enough for clustering: only relative proximity matters downstream.
"""

import logging

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components, dijkstra

log = logging.getLogger(__name__)

HEMISPHERES = ("L", "R")


class Mesh:
    """Triangle mesh with per-vertex hemisphere labels.

    vertices: V x 3 float positions (mm)
    triangles: F x 3 integer vertex indices
    hemisphere: length-V array of 'L'/'R' labels
    """

    def __init__(self, vertices, triangles, hemisphere):
        self.vertices = np.asarray(vertices, dtype=np.float64)
        self.triangles = np.asarray(triangles, dtype=np.intp)
        self.hemisphere = np.asarray(hemisphere, dtype="U1")
        self._validate()

    def _validate(self):
        v = self.vertices.shape[0]
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 3:
            raise ValueError(f"vertices must be V x 3, got {self.vertices.shape}")
        if self.triangles.ndim != 2 or self.triangles.shape[1] != 3:
            raise ValueError(f"triangles must be F x 3, got {self.triangles.shape}")
        if self.hemisphere.shape != (v,):
            raise ValueError("hemisphere labels must be per-vertex")
        if not np.isin(self.hemisphere, HEMISPHERES).all():
            raise ValueError("hemisphere labels must be 'L' or 'R'")
        if self.triangles.size and (self.triangles.min() < 0
                                    or self.triangles.max() >= v):
            raise ValueError("triangle index out of range")
        tri_hemi = self.hemisphere[self.triangles]
        if not (tri_hemi == tri_hemi[:, :1]).all():
            raise ValueError("a triangle spans both hemispheres")

    @property
    def n_vertices(self):
        return self.vertices.shape[0]

    def vertex_ids(self, hemisphere):
        if hemisphere not in HEMISPHERES:
            raise ValueError(f"unknown hemisphere {hemisphere!r}")
        return np.flatnonzero(self.hemisphere == hemisphere)

    def edges(self):
        """Unique undirected edges as an E x 2 index array."""
        t = self.triangles
        pairs = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        pairs = np.sort(pairs, axis=1)
        return np.unique(pairs, axis=0)


class AdjacencyMatrix:
    """Symmetric vertex-affinity matrix in [0,1] for one hemisphere."""

    def __init__(self, kind, values, vertex_ids):
        if kind not in ("structural", "functional"):
            raise ValueError(f"unknown adjacency kind {kind!r}")
        values = np.asarray(values, dtype=np.float64)
        n = len(vertex_ids)
        if values.shape != (n, n):
            raise ValueError(f"values must be {n} x {n}, got {values.shape}")
        if np.abs(values - values.T).max() > 1e-12:
            raise ValueError("adjacency must be symmetric")
        if np.abs(np.diag(values)).max() > 0:
            raise ValueError("adjacency diagonal must be zero")
        if values.min() < 0 or values.max() > 1:
            raise ValueError("adjacency entries must lie in [0,1]")
        self.kind = kind
        self.values = values
        self.vertex_ids = np.asarray(vertex_ids, dtype=np.intp)


def _edge_graph(mesh, hemisphere):
    ids = mesh.vertex_ids(hemisphere)
    local = -np.ones(mesh.n_vertices, dtype=np.intp)
    local[ids] = np.arange(ids.size)
    edges = mesh.edges()
    keep = np.isin(edges[:, 0], ids)  # triangles never span hemispheres
    edges = edges[keep]
    i, j = local[edges[:, 0]], local[edges[:, 1]]
    w = np.linalg.norm(mesh.vertices[edges[:, 0]] - mesh.vertices[edges[:, 1]],
                       axis=1)
    n = ids.size
    graph = coo_matrix((np.concatenate([w, w]),
                        (np.concatenate([i, j]), np.concatenate([j, i]))),
                       shape=(n, n)).tocsr()
    return ids, graph


def geodesic_distances(mesh, hemisphere):
    """All-pairs shortest-path distances over one hemisphere's edge graph."""
    ids, graph = _edge_graph(mesh, hemisphere)
    n_comp, labels = connected_components(graph, directed=False)
    if n_comp > 1:
        sizes = np.bincount(labels)
        raise ValueError(
            f"hemisphere {hemisphere} is disconnected: smallest component "
            f"has {sizes.min()} of {ids.size} vertices")
    dist = dijkstra(graph, directed=False)
    return dist


def structural_adjacency(dist, vertex_ids):
    """Affinity 1 - d/max(d) with a forced-zero diagonal."""
    dist = np.asarray(dist, dtype=np.float64)
    dmax = dist.max()
    if dmax <= 0:
        raise ValueError("degenerate mesh: all geodesic distances are zero")
    values = 1.0 - dist / dmax
    np.fill_diagonal(values, 0.0)
    values = 0.5 * (values + values.T)
    return AdjacencyMatrix("structural", values, vertex_ids)


def functional_adjacency(subject_data, vertex_ids, split_tags=None):
    """Mean Pearson correlation across subjects, mapped to [0,1].

    subject_data: list of T x n arrays (n = len(vertex_ids)); callers must
    pass only training and validation subjects, asserted via split_tags.
    """
    if split_tags is not None:
        bad = [t for t in split_tags if t not in ("train", "val")]
        if bad:
            raise ValueError(f"functional adjacency fit on held-out split: {bad}")
    n = len(vertex_ids)
    acc = np.zeros((n, n))
    warned = False
    for x in subject_data:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != n:
            raise ValueError(f"subject array must be T x {n}, got {x.shape}")
        if x.shape[0] < 2:
            raise ValueError("need at least 2 timepoints per subject")
        centered = x - x.mean(axis=0)
        std = centered.std(axis=0)
        dead = std == 0
        if dead.any() and not warned:
            log.warning("zero-variance vertices present; their correlations "
                        "are defined as 0")
            warned = True
        safe = np.where(dead, 1.0, std)
        zn = centered / safe
        r = (zn.T @ zn) / x.shape[0]
        r[dead, :] = 0.0
        r[:, dead] = 0.0
        np.clip(r, -1.0, 1.0, out=r)
        acc += r
    acc /= len(subject_data)
    values = (acc + 1.0) / 2.0
    np.fill_diagonal(values, 0.0)
    values = 0.5 * (values + values.T)
    np.clip(values, 0.0, 1.0, out=values)
    return AdjacencyMatrix("functional", values, vertex_ids)
