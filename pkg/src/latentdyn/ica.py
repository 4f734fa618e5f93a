"""InfoMax independent component analysis, the blind-separation null model.

Observations are timepoints, mixture channels are voxels: the unmixing is fit
on train subjects concatenated along time, then applied per subject.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .diffcore import SeededRng
from .signal import reference_timecourses

MAP_THRESHOLD = 0.1


@dataclass
class Whitening:
    """PCA projection to unit-variance coordinates."""

    matrix: np.ndarray  # n_components x dims
    mean: np.ndarray  # dims
    explained: np.ndarray  # retained covariance eigenvalues, descending

    def project(self, x):
        return (np.asarray(x, dtype=np.float64) - self.mean) @ self.matrix.T


@dataclass
class IcaModel:
    n_components: int
    whitening: Whitening
    unmixing: np.ndarray  # square on the whitened space, unit-norm rows
    mixing: np.ndarray  # dims x n_components, pseudo-inverse of total unmix
    timecourses: np.ndarray  # fit-data components, samples x n_components

    def transform(self, x):
        """Component timecourses for new data with the fitted unmixing."""
        return self.whitening.project(x) @ self.unmixing.T


def whiten(x, n_components):
    """Project to the top principal subspace and scale to unit variance.

    Returns (z, Whitening) with cov(z) = I on the retained directions.
    """
    x = np.asarray(x, dtype=np.float64)
    n, dims = x.shape
    if n_components < 1 or n_components > dims:
        raise ValueError(f"n_components must be in [1, {dims}]")
    if n <= n_components:
        raise ValueError(
            f"need more than {n_components} samples to whiten, got {n}")
    mean = x.mean(axis=0)
    xc = x - mean
    cov = (xc.T @ xc) / (n - 1)
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1]
    eigvals, eigvecs = eigvals[order], eigvecs[:, order]
    rank = int((eigvals > eigvals[0] * 1e-10).sum())
    if rank < n_components:
        raise ValueError(
            f"effective rank {rank} is below the requested "
            f"{n_components} components")
    keep_vals = eigvals[:n_components]
    keep_vecs = eigvecs[:, :n_components]
    # fix eigenvector signs so repeated fits agree
    anchor = np.abs(keep_vecs).argmax(axis=0)
    keep_vecs = keep_vecs * np.sign(keep_vecs[anchor, np.arange(n_components)])
    matrix = keep_vecs.T / np.sqrt(keep_vals)[:, None]
    w = Whitening(matrix=matrix, mean=mean, explained=keep_vals)
    return xc @ matrix.T, w


def amari_index(p):
    """Permutation- and scale-invariant distance of p from perm*diag, in
    [0, 1]; zero iff p is a scaled permutation.
    """
    p = np.abs(np.asarray(p, dtype=np.float64))
    n = p.shape[0]
    if p.shape != (n, n):
        raise ValueError(f"square matrix required, got {p.shape}")
    rows = (p.sum(axis=1) / p.max(axis=1) - 1.0).sum()
    cols = (p.sum(axis=0) / p.max(axis=0) - 1.0).sum()
    return float((rows + cols) / (2.0 * n * (n - 1)))


def infomax_fit(z, seed, whitening=None, lr=1e-3, batch_size=32,
                max_epochs=500, tol=1e-7):
    """Natural-gradient InfoMax with a logistic nonlinearity.

    Update per minibatch: W += lr * (I + (1 - 2*g(u)) u^T / B) W with
    u = W z.  The rate anneals by 0.9 whenever successive epoch updates
    turn by more than 60 degrees; convergence is declared when every
    update in an epoch has Frobenius norm below `tol`.
    """
    z = np.asarray(z, dtype=np.float64)
    n, dims = z.shape
    if whitening is None:
        whitening = Whitening(matrix=np.eye(dims), mean=np.zeros(dims),
                              explained=np.ones(dims))
    rng = SeededRng(seed, "ica/shuffle")
    w = np.eye(dims)
    eye = np.eye(dims)
    prev_delta = None
    for _ in range(max_epochs):
        perm = rng.permutation(n)
        start = w.copy()
        max_step = 0.0
        for lo in range(0, n, batch_size):
            zb = z[perm[lo:lo + batch_size]]
            u = zb @ w.T
            g = expit(u)
            grad = eye + ((1.0 - 2.0 * g).T @ u) / zb.shape[0]
            dw = lr * grad @ w
            w += dw
            max_step = max(max_step, float(np.linalg.norm(dw)))
            if np.linalg.norm(w) > 1e6:
                raise RuntimeError(
                    "unmixing matrix diverged; try a lower learning rate")
        delta = w - start
        if prev_delta is not None:
            denom = np.linalg.norm(delta) * np.linalg.norm(prev_delta)
            if denom > 0:
                cosine = float((delta * prev_delta).sum() / denom)
                if np.degrees(np.arccos(np.clip(cosine, -1.0, 1.0))) > 60.0:
                    lr *= 0.9
        prev_delta = delta
        if max_step < tol:
            break
    w /= np.linalg.norm(w, axis=1, keepdims=True)
    total = w @ whitening.matrix
    return IcaModel(n_components=dims, whitening=whitening, unmixing=w,
                    mixing=np.linalg.pinv(total), timecourses=z @ w.T)


def fit_ica(x, n_components, seed, **kwargs):
    """Whiten then unmix; the standard two-stage fit."""
    z, whitening = whiten(x, n_components)
    return infomax_fit(z, seed, whitening=whitening, **kwargs)


def ica_factors_and_maps(dataset, n_components=16, seed=0, **kwargs):
    """Fit on concatenated train data; project every subject.

    Returns (timecourses [n_subjects, T, n_components], maps
    [n_components, V]).  Each map is the matching mixing column,
    sign-flipped to correlate positively with its best sub-task regressor,
    max-abs normalized, and zeroed below the reporting threshold.
    """
    train = dataset.split_arrays("train")
    model = fit_ica(np.concatenate(train, axis=0), n_components, seed,
                    **kwargs)
    tcs = np.stack([model.transform(s.data) for s in dataset.subjects])
    refs = reference_timecourses(dataset.design)
    tiled = np.tile(refs, (1, len(train)))
    return tcs, aligned_maps(model.mixing, model.timecourses, tiled)


def aligned_maps(mixing, fit_timecourses, refs):
    """Mixing columns as reporting maps: sign from the best-matching
    reference row, then max-abs normalized and thresholded.
    """
    maps = np.array(mixing.T, dtype=np.float64)
    for j in range(maps.shape[0]):
        corr = _correlations(fit_timecourses[:, j], refs)
        if corr[np.abs(corr).argmax()] < 0:
            maps[j] = -maps[j]
        peak = np.abs(maps[j]).max()
        if peak > 0:
            maps[j] /= peak
        maps[j, np.abs(maps[j]) < MAP_THRESHOLD] = 0.0
    return maps


def _correlations(series, refs):
    """Pearson correlation of one series against each row of refs."""
    s = series - series.mean()
    r = refs - refs.mean(axis=1, keepdims=True)
    denom = np.sqrt((s * s).sum()) * np.sqrt((r * r).sum(axis=1))
    denom[denom == 0] = 1.0
    return (r @ s) / denom
