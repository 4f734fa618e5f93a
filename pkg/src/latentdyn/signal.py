"""Hemodynamic response, block-design regressors, and timeseries cleanup."""

import logging
from dataclasses import dataclass

import numpy as np
from scipy.stats import gamma

log = logging.getLogger(__name__)

SUBTASKS = ("left_hand", "right_hand", "left_foot", "right_foot", "tongue")

HRF_DT = 0.1  # s, fine grid for regressor construction


@dataclass(frozen=True)
class TaskDesign:
    """Block design: (subtask index, onset s, duration s) triples."""

    blocks: tuple
    tr: float
    n_frames: int
    subtasks: tuple = SUBTASKS

    def __post_init__(self):
        total = self.n_frames * self.tr
        for sub, onset, dur in self.blocks:
            if not 0 <= sub < len(self.subtasks):
                raise ValueError(f"subtask index {sub} out of range")
            if dur <= 0:
                raise ValueError("block duration must be positive")
            if not 0 <= onset < total:
                raise ValueError(f"block onset {onset} outside [0, {total})")

    def to_dict(self):
        return {"blocks": [[int(s), float(o), float(d)] for s, o, d in self.blocks],
                "tr": self.tr, "n_frames": self.n_frames,
                "subtasks": list(self.subtasks)}

    @classmethod
    def from_dict(cls, d):
        return cls(blocks=tuple((int(s), float(o), float(du))
                                for s, o, du in d["blocks"]),
                   tr=float(d["tr"]), n_frames=int(d["n_frames"]),
                   subtasks=tuple(d.get("subtasks", SUBTASKS)))


def canonical_hrf(dt, duration=32.0):
    """Double-gamma impulse response sampled at dt, peak-normalized to 1."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    t = np.arange(0.0, duration, dt)
    h = gamma.pdf(t, a=6, scale=1.0) - gamma.pdf(t, a=16, scale=1.0) / 6.0
    return h / h.max()


def task_regressors(design):
    """Expected response per subtask: boxcar convolved with the canonical
    response on a 0.1 s grid, sampled at frame times, max-normalized.
    """
    n_sub = len(design.subtasks)
    total = design.n_frames * design.tr
    n_fine = int(np.ceil(total / HRF_DT)) + 1
    hrf = canonical_hrf(HRF_DT)
    out = np.zeros((n_sub, design.n_frames))
    frame_idx = np.round(np.arange(design.n_frames) * design.tr / HRF_DT)
    frame_idx = np.minimum(frame_idx.astype(np.intp), n_fine - 1)
    for s in range(n_sub):
        box = np.zeros(n_fine)
        covered = 0.0
        for sub, onset, dur in design.blocks:
            if sub != s:
                continue
            a = int(round(onset / HRF_DT))
            b = min(int(round((onset + dur) / HRF_DT)), n_fine)
            if box[a:b].any():
                log.warning("overlapping blocks for subtask %s merged",
                            design.subtasks[s])
            box[a:b] = 1.0
            covered += dur
        fine = np.convolve(box, hrf)[:n_fine]
        reg = fine[frame_idx]
        peak = np.abs(reg).max()
        if peak > 0:
            reg = reg / peak
        out[s] = reg
    return out


def reference_timecourses(design):
    """Per-subtask regressors passed through the same band-pass and detrend
    applied to the data, so comparisons against them are like for like.
    Returns [n_subtasks, n_frames].
    """
    reg = task_regressors(design)
    return detrend_linear(bandpass(reg.T, design.tr)).T


def bandpass(x, tr, low=0.01, high=0.15, taper=0.005):
    """Zero-phase FFT filter: unit gain in [low, high] Hz, raised-cosine
    roll-off of width `taper` outside the band, zero elsewhere (DC included).

    Works on 1-d series or on the time axis (axis 0) of a 2-d array.
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    if n < 16:
        raise ValueError("need at least 16 timepoints to filter")
    freqs = np.fft.rfftfreq(n, d=tr)
    if not ((freqs >= low) & (freqs <= high)).any():
        raise ValueError(
            f"band [{low}, {high}] Hz holds no frequency bin at tr={tr}")
    gain = np.zeros_like(freqs)
    gain[(freqs >= low) & (freqs <= high)] = 1.0
    rising = (freqs >= low - taper) & (freqs < low)
    gain[rising] = 0.5 * (1 + np.cos(np.pi * (low - freqs[rising]) / taper))
    falling = (freqs > high) & (freqs <= high + taper)
    gain[falling] = 0.5 * (1 + np.cos(np.pi * (freqs[falling] - high) / taper))
    gain[freqs == 0.0] = 0.0
    spec = np.fft.rfft(x, axis=0)
    shaped = gain if x.ndim == 1 else gain[:, None]
    return np.fft.irfft(spec * shaped, n=n, axis=0)


def detrend_linear(x):
    """Subtract the least-squares line along axis 0."""
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    t = np.arange(n, dtype=np.float64)
    t = t - t.mean()
    xm = x.mean(axis=0)
    slope = (t @ (x - xm)) / (t @ t)
    if x.ndim == 1:
        return x - xm - slope * t
    return x - xm - np.outer(t, slope)


class MinMaxNormalizer:
    """Per-voxel symmetric max-abs scaling, fitted on the training split.

    Transforming clips to [-1, 1] so held-out values cannot leave the
    decoder's Tanh codomain. Constant (zero-scale) voxels map to 0.
    """

    def __init__(self):
        self.scale = None

    def fit(self, train_arrays):
        stack = np.concatenate([np.asarray(a, dtype=np.float64)
                                for a in train_arrays], axis=0)
        self.scale = np.abs(stack).max(axis=0)
        return self

    def transform(self, x):
        if self.scale is None:
            raise RuntimeError("normalizer not fitted")
        safe = np.where(self.scale == 0, 1.0, self.scale)
        out = np.asarray(x, dtype=np.float64) / safe
        out[:, self.scale == 0] = 0.0
        return np.clip(out, -1.0, 1.0)
