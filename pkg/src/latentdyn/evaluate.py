"""Factor-recovery evaluation: sub-task correlation, reconstruction
correlation, latent-traversal spatial maps, and a 2-d trajectory embedding.
"""

from dataclasses import dataclass

import numpy as np

from .diffcore import SeededRng, Tensor
from .signal import reference_timecourses

MAP_THRESHOLD = 0.1
TRAVERSAL_RANGE = (-3.0, 3.0)
TRAVERSAL_STEPS = 50


@dataclass
class EvalReport:
    subtask_scores: list  # (subtask name, best factor id, |r|) per subtask
    mean_abs_corr: float
    recon_corr_mean: float
    recon_corr_std: float
    spatial_maps: np.ndarray  # n_factors x V

    def to_dict(self):
        return {
            "subtask_scores": [[name, int(j), float(r)]
                               for name, j, r in self.subtask_scores],
            "mean_abs_corr": float(self.mean_abs_corr),
            "recon_corr_mean": float(self.recon_corr_mean),
            "recon_corr_std": float(self.recon_corr_std),
        }


def _corr_matrix(a, b):
    """Pearson correlations between rows of a and rows of b; zero-variance
    rows correlate at 0 by convention.
    """
    ac = a - a.mean(axis=1, keepdims=True)
    bc = b - b.mean(axis=1, keepdims=True)
    an = np.sqrt((ac * ac).sum(axis=1))
    bn = np.sqrt((bc * bc).sum(axis=1))
    an[an == 0] = np.inf
    bn[bn == 0] = np.inf
    return (ac / an[:, None]) @ (bc / bn[:, None]).T


def subtask_correlation(factors, regressors, names=None):
    """Match every regressor to its best factor by absolute Pearson r.

    factors: [T, n_factors] (posterior means, already averaged over the
    evaluation subjects); regressors: [n_subtasks, T].  Returns
    (scores, mean) where scores holds one (name, factor id, |r|) per
    sub-task and mean is the average of the |r| maxima.
    """
    factors = np.asarray(factors, dtype=np.float64)
    regressors = np.asarray(regressors, dtype=np.float64)
    if factors.shape[0] != regressors.shape[1]:
        raise ValueError(
            f"timestep mismatch: factors {factors.shape[0]} vs "
            f"regressors {regressors.shape[1]}")
    if names is None:
        names = [str(i) for i in range(regressors.shape[0])]
    r = np.abs(_corr_matrix(regressors, factors.T))
    best = r.argmax(axis=1)
    scores = [(names[s], int(best[s]), float(r[s, best[s]]))
              for s in range(regressors.shape[0])]
    return scores, float(r.max(axis=1).mean())


def reconstruction_correlation(xs, xhats):
    """Per-voxel Pearson r over time, averaged over voxels per subject;
    returns (mean, std) over subjects.  Zero-variance voxels are skipped.
    """
    per_subject = []
    for x, xhat in zip(xs, xhats):
        x = np.asarray(x, dtype=np.float64)
        xhat = np.asarray(xhat, dtype=np.float64)
        if x.shape != xhat.shape:
            raise ValueError(f"shape mismatch: {x.shape} vs {xhat.shape}")
        xc = x - x.mean(axis=0)
        hc = xhat - xhat.mean(axis=0)
        xn = np.sqrt((xc * xc).sum(axis=0))
        hn = np.sqrt((hc * hc).sum(axis=0))
        keep = (xn > 0) & (hn > 0)
        r = (xc[:, keep] * hc[:, keep]).sum(axis=0) / (xn[keep] * hn[keep])
        per_subject.append(float(r.mean()))
    arr = np.asarray(per_subject)
    return float(arr.mean()), float(arr.std())


def traversal_spatial_maps(decode, n_factors, n_steps=TRAVERSAL_STEPS,
                           lo=TRAVERSAL_RANGE[0], hi=TRAVERSAL_RANGE[1],
                           threshold=MAP_THRESHOLD):
    """Sweep each factor over [lo, hi] with the others at zero; the map is
    the per-voxel variance of the decodes, max-normalized and thresholded.

    decode: callable [n_steps, n_factors] -> [n_steps, V].
    """
    grid = np.linspace(lo, hi, n_steps)
    maps = []
    for j in range(n_factors):
        z = np.zeros((n_steps, n_factors))
        z[:, j] = grid
        maps.append(np.asarray(decode(z)).var(axis=0))
    maps = np.stack(maps)
    for j in range(n_factors):
        peak = maps[j].max()
        if peak > 0:
            maps[j] /= peak
        maps[j, maps[j] < threshold] = 0.0
    return maps


def model_decoder(model):
    """The trained spatial decoder as a plain array function."""
    def decode(z):
        return model.spatial_decode(Tensor(z)).data
    return decode


def _pairwise_sq_dists(x):
    sq = (x * x).sum(axis=1)
    d = sq[:, None] + sq[None, :] - 2.0 * (x @ x.T)
    np.fill_diagonal(d, 0.0)
    return np.maximum(d, 0.0)


def _conditional_affinities(x, perplexity, tol=1e-4, max_iter=200):
    """Per-point Gaussian affinities with bandwidths binary-searched so each
    row's perplexity matches the target within tol.
    """
    d = _pairwise_sq_dists(np.asarray(x, dtype=np.float64))
    n = d.shape[0]
    cond = np.zeros((n, n))
    for i in range(n):
        idx = np.arange(n) != i
        di = d[i, idx]
        beta, lo, hi = 1.0, 0.0, np.inf
        for _ in range(max_iter):
            p = np.exp(-di * beta)
            total = p.sum()
            if total <= 0:
                perp = 0.0
                p = np.zeros_like(p)
            else:
                p /= total
                nz = p > 0
                entropy = -(p[nz] * np.log2(p[nz])).sum()
                perp = 2.0 ** entropy
            if abs(perp - perplexity) < tol:
                break
            if perp > perplexity:
                lo = beta
                beta = beta * 2.0 if hi == np.inf else (beta + hi) / 2.0
            else:
                hi = beta
                beta = (beta + lo) / 2.0
        cond[i, idx] = p
    return cond


def joint_affinities(x, perplexity):
    """Symmetrized t-SNE input affinities; the matrix sums to 1."""
    cond = _conditional_affinities(x, perplexity)
    joint = (cond + cond.T) / (2.0 * cond.shape[0])
    return np.maximum(joint, 1e-12)


def tsne_embed(trajectory, perplexity=30.0, seed=0, n_iter=1000, lr=200.0):
    """Exact t-SNE to 2 dimensions.

    Early exaggeration x12 for the first 250 iterations, momentum 0.5
    switching to 0.8 at iteration 250.
    """
    x = np.asarray(trajectory, dtype=np.float64)
    n = x.shape[0]
    if n <= 3 * perplexity:
        raise ValueError(
            f"perplexity {perplexity} too large for {n} points; need "
            f"more than 3x perplexity")
    p = joint_affinities(x, perplexity)
    rng = SeededRng(seed, "tsne/init")
    y = rng.standard_normal((n, 2)) * 1e-4
    velocity = np.zeros_like(y)
    exaggerated = p * 12.0
    for it in range(n_iter):
        p_now = exaggerated if it < 250 else p
        momentum = 0.5 if it < 250 else 0.8
        num = 1.0 / (1.0 + _pairwise_sq_dists(y))
        np.fill_diagonal(num, 0.0)
        q = np.maximum(num / num.sum(), 1e-12)
        pq = (p_now - q) * num
        grad = 4.0 * ((np.diag(pq.sum(axis=1)) - pq) @ y)
        velocity = momentum * velocity - lr * grad
        y = y + velocity
        y = y - y.mean(axis=0)
    return y


def trajectory_export(embedding, design):
    """Per-timepoint rows (t, x, y, task label, opacity) for plotting.

    Opacity ramps 0.5 to 1.0 over the first 5 frames of a block and back
    down over the last 5; frames outside every block carry label "none"
    at full opacity.
    """
    embedding = np.asarray(embedding, dtype=np.float64)
    frames = embedding.shape[0]
    labels = ["none"] * frames
    position = np.full(frames, -1)
    length = np.zeros(frames, dtype=int)
    for sub, onset, dur in design.blocks:
        inside = [t for t in range(frames)
                  if onset <= t * design.tr < onset + dur]
        for i, t in enumerate(inside):
            labels[t] = design.subtasks[sub]
            position[t] = i
            length[t] = len(inside)
    rows = []
    for t in range(frames):
        if position[t] < 0:
            opacity = 1.0
        else:
            i, n = int(position[t]), int(length[t])
            opacity = 0.5 + min(min(i, 4), min(n - 1 - i, 4)) * 0.125
        rows.append({"t": t, "x": float(embedding[t, 0]),
                     "y": float(embedding[t, 1]), "task": labels[t],
                     "opacity": opacity})
    return rows


def evaluate_model(model, dataset, split="test"):
    """The full protocol on one trained model: factor timecourses averaged
    over the split's subjects, matched to band-limited task regressors;
    reconstruction correlation; traversal maps.
    """
    subjects = [s for s in dataset.subjects if s.split == split]
    if not subjects:
        raise ValueError(f"no subjects in split {split!r}")
    mus, xs, xhats = [], [], []
    for s in subjects:
        fs, xhat = model.forward(s.data, sample=False)
        mus.append(fs.mu.data)
        xs.append(s.data)
        xhats.append(xhat.data)
    mean_factors = np.mean(mus, axis=0)
    refs = reference_timecourses(dataset.design)
    scores, mean_abs = subtask_correlation(mean_factors, refs,
                                           names=list(dataset.design.subtasks))
    rc_mean, rc_std = reconstruction_correlation(xs, xhats)
    maps = traversal_spatial_maps(model_decoder(model), model.cfg.n_factors)
    return EvalReport(subtask_scores=scores, mean_abs_corr=mean_abs,
                      recon_corr_mean=rc_mean, recon_corr_std=rc_std,
                      spatial_maps=maps)
