"""Spectral clustering of surface vertices and cluster/patch packing."""

import logging

import numpy as np

from .diffcore import SeededRng

log = logging.getLogger(__name__)


class ClusterAssignment:
    """Per-vertex cluster ids for both hemispheres.

    assignment maps every vertex (global id) to a cluster id; ids are dense
    in [0, k) within each hemisphere and clusters never span hemispheres.
    """

    def __init__(self, k_per_hemisphere, assignment, mode, seed, hemisphere):
        self.k_per_hemisphere = int(k_per_hemisphere)
        self.assignment = np.asarray(assignment, dtype=np.intp)
        self.mode = mode
        self.seed = int(seed)
        self.hemisphere = np.asarray(hemisphere, dtype="U1")
        if mode not in ("structural", "functional"):
            raise ValueError(f"unknown clustering mode {mode!r}")
        if self.assignment.shape != self.hemisphere.shape:
            raise ValueError("assignment and hemisphere labels must align")
        sizes = []
        for h in ("L", "R"):
            ids = self.assignment[self.hemisphere == h]
            if ids.size == 0:
                continue
            counts = np.bincount(ids, minlength=self.k_per_hemisphere)
            if ids.min() < 0 or ids.max() >= self.k_per_hemisphere:
                raise ValueError("cluster id out of range")
            if (counts == 0).any():
                raise ValueError(f"empty cluster in hemisphere {h}")
            sizes.append(counts)
        sizes = np.concatenate(sizes)
        self.max_cluster_size = int(sizes.max())
        ratio = sizes.max() / np.median(sizes)
        log.info("cluster sizes: max %d, median %.1f, max/median %.2f",
                 sizes.max(), np.median(sizes), ratio)

    def cluster_members(self, hemisphere):
        """List of ascending global vertex-id arrays, one per cluster."""
        ids = np.flatnonzero(self.hemisphere == hemisphere)
        labels = self.assignment[ids]
        return [ids[labels == c] for c in range(self.k_per_hemisphere)]


def graph_laplacian(adj, degree="count"):
    """L = D - A. The shipped convention puts the vertex count n on the
    diagonal of D; degree="rowsum" gives the standard combinatorial form.
    """
    a = adj.values
    n = a.shape[0]
    if degree == "count":
        d = np.full(n, float(n))
    elif degree == "rowsum":
        d = a.sum(axis=1)
    else:
        raise ValueError(f"unknown degree convention {degree!r}")
    return np.diag(d) - a


def smallest_eigenvectors(laplacian, k):
    """Orthonormal eigenvectors of the k algebraically smallest eigenvalues."""
    laplacian = np.asarray(laplacian, dtype=np.float64)
    if np.abs(laplacian - laplacian.T).max() > 1e-9:
        raise ValueError("Laplacian must be symmetric")
    vals, vecs = np.linalg.eigh(0.5 * (laplacian + laplacian.T))
    return vals[:k], vecs[:, :k]


def _kmeans_once(points, k, rng):
    n = points.shape[0]
    # k-means++ seeding
    centers = np.empty((k, points.shape[1]))
    first = int(rng.integers(0, n))
    centers[0] = points[first]
    d2 = ((points - centers[0]) ** 2).sum(axis=1)
    for c in range(1, k):
        total = d2.sum()
        if total <= 0:
            idx = int(rng.integers(0, n))
        else:
            idx = int(rng.choice(n, p=d2 / total))
        centers[c] = points[idx]
        d2 = np.minimum(d2, ((points - centers[c]) ** 2).sum(axis=1))

    labels = None
    for _ in range(300):
        dist = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        new_labels = np.argmin(dist, axis=1)  # argmin ties -> lowest id
        counts = np.bincount(new_labels, minlength=k)
        if (counts == 0).any():
            return None, None, np.inf
        if labels is not None and np.array_equal(new_labels, labels):
            break
        labels = new_labels
        for c in range(k):
            centers[c] = points[labels == c].mean(axis=0)
    dist = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    inertia = dist[np.arange(n), labels].sum()
    return labels, centers, inertia


def kmeans(points, k, seed, restarts=100):
    """Seeded k-means++ with restarts; best inertia wins, ties keep the
    earliest restart. Restarts that produce an empty cluster are invalid.
    """
    points = np.asarray(points, dtype=np.float64)
    if k > points.shape[0]:
        raise ValueError(f"k={k} exceeds {points.shape[0]} points")
    best_labels, best_inertia = None, np.inf
    for r in range(restarts):
        rng = SeededRng(seed, f"kmeans/{r}")
        labels, _, inertia = _kmeans_once(points, k, rng)
        if labels is not None and inertia < best_inertia:
            best_labels, best_inertia = labels, inertia
    if best_labels is None:
        raise RuntimeError("k-means failed: every restart left a cluster empty")
    return best_labels, best_inertia


def _relabel_dense(labels, k):
    """Relabel clusters by ascending first-occurrence so output ids do not
    depend on k-means internals beyond the partition itself."""
    order = {}
    out = np.empty_like(labels)
    for i, lab in enumerate(labels):
        if lab not in order:
            order[lab] = len(order)
        out[i] = order[lab]
    if len(order) != k:
        raise ValueError("cluster ids not dense")
    return out


def spectral_cluster_hemisphere(adj, k, seed):
    """k-means on rows of the bottom-k eigenvector matrix of L."""
    n = adj.values.shape[0]
    if k >= n:
        raise ValueError(f"k={k} must be smaller than n={n}")
    lap = graph_laplacian(adj)
    _, vecs = smallest_eigenvectors(lap, k)
    labels, _ = kmeans(vecs, k, seed)
    return _relabel_dense(labels, k)


def cluster_mesh(mesh, adj_left, adj_right, k, mode, seed):
    """Cluster both hemispheres and assemble one ClusterAssignment."""
    assignment = np.full(mesh.n_vertices, -1, dtype=np.intp)
    for adj, h in ((adj_left, "L"), (adj_right, "R")):
        ids = mesh.vertex_ids(h)
        if not np.array_equal(np.asarray(adj.vertex_ids), ids):
            raise ValueError(f"adjacency vertex ids do not match hemisphere {h}")
        assignment[ids] = spectral_cluster_hemisphere(adj, k, seed)
    return ClusterAssignment(k, assignment, mode, seed, mesh.hemisphere)


def patch_indices(ca, hemisphere):
    """Gather/scatter bookkeeping for one hemisphere's patch tensor.

    Returns (gather, mask): gather is a flat length k*m array of vertex
    positions into the hemisphere's local vertex order (pads point at 0),
    mask is 1.0 on real entries and 0.0 on pads.
    """
    members = ca.cluster_members(hemisphere)
    local = {int(v): i for i, v in
             enumerate(np.flatnonzero(ca.hemisphere == hemisphere))}
    m = ca.max_cluster_size
    gather = np.zeros((ca.k_per_hemisphere, m), dtype=np.intp)
    mask = np.zeros((ca.k_per_hemisphere, m))
    for c, verts in enumerate(members):
        loc = np.array([local[int(v)] for v in verts], dtype=np.intp)
        gather[c, :loc.size] = loc
        mask[c, :loc.size] = 1.0
    return gather.reshape(-1), mask.reshape(-1)


def patchify(x, ca, hemisphere):
    """Pack a vertex vector into a zero-padded [k, max_cluster_size] array."""
    x = np.asarray(x, dtype=np.float64)
    ids = np.flatnonzero(ca.hemisphere == hemisphere)
    if x.shape != (ca.assignment.size,):
        raise ValueError(f"expected vector of length {ca.assignment.size}, "
                         f"got {x.shape}")
    gather, mask = patch_indices(ca, hemisphere)
    patches = x[ids][gather] * mask
    return patches.reshape(ca.k_per_hemisphere, ca.max_cluster_size)


def unpatchify(patches, ca, hemisphere, out=None, full_length=None):
    """Scatter a [k, max_cluster_size] patch array back onto vertices."""
    patches = np.asarray(patches, dtype=np.float64)
    m = ca.max_cluster_size
    if patches.shape != (ca.k_per_hemisphere, m):
        raise ValueError(f"expected patches {(ca.k_per_hemisphere, m)}, "
                         f"got {patches.shape}")
    ids = np.flatnonzero(ca.hemisphere == hemisphere)
    if out is None:
        out = np.zeros(full_length or ca.assignment.size)
    flat = patches.reshape(-1)
    gather, mask = patch_indices(ca, hemisphere)
    local = np.zeros(ids.size)
    real = mask > 0
    local[gather[real]] = flat[real]
    out[ids] = local
    return out
