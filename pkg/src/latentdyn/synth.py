"""Synthetic ground-truth benchmark: icosphere hemispheres, planted spatial
sources, hemodynamic timecourses, linear or saturating mixing, AR(1) noise.
"""

from dataclasses import dataclass, field

import numpy as np

from .diffcore import SeededRng
from .signal import (
    MinMaxNormalizer,
    SUBTASKS,
    TaskDesign,
    bandpass,
    detrend_linear,
    task_regressors,
)
from .surface import Mesh, geodesic_distances

SPHERE_RADIUS_MM = 50.0
HEMISPHERE_OFFSET_MM = 15.0
ICOSPHERE_VERTICES = {12: 0, 42: 1, 162: 2, 642: 3, 2562: 4}

# contralateral organization: hand/foot sources live on the opposite
# hemisphere, the tongue source is bilateral
SOURCE_HEMISPHERES = {
    "left_hand": ("R",),
    "right_hand": ("L",),
    "left_foot": ("R",),
    "right_foot": ("L",),
    "tongue": ("L", "R"),
}


@dataclass(frozen=True)
class SynthConfig:
    vertices_per_hemisphere: int = 642
    n_sources: int = 5
    blob_radius: float = 18.0  # geodesic mm
    design: TaskDesign = None
    noise_sigma: float = 0.5
    ar1_coeff: float = 0.4
    mixing: str = "linear"
    seed: int = 42
    n_subjects: int = 60

    def __post_init__(self):
        if self.vertices_per_hemisphere not in ICOSPHERE_VERTICES:
            raise ValueError(
                f"vertices_per_hemisphere must be one of "
                f"{sorted(ICOSPHERE_VERTICES)}, got {self.vertices_per_hemisphere}")
        if self.mixing not in ("linear", "tanh"):
            raise ValueError(f"mixing must be linear or tanh, got {self.mixing!r}")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be nonnegative")
        if self.n_sources > len(SUBTASKS):
            raise ValueError(f"at most {len(SUBTASKS)} sources supported")


@dataclass
class SubjectTimeseries:
    subject_id: str
    data: np.ndarray  # T x V
    split: str  # train | val | test


@dataclass
class GroundTruth:
    maps: np.ndarray  # n_sources x V
    timecourses: np.ndarray  # n_subjects x n_sources x T
    seed_vertices: dict  # source name -> list of global vertex ids


@dataclass
class SynthDataset:
    subjects: list
    mesh: Mesh
    design: TaskDesign
    ground_truth: GroundTruth
    config: SynthConfig
    tr: float = field(init=False)

    def __post_init__(self):
        self.tr = self.design.tr

    def split_arrays(self, split):
        return [s.data for s in self.subjects if s.split == split]


def icosphere(level):
    """Unit icosphere by repeated 4-way subdivision of an icosahedron."""
    phi = (1.0 + np.sqrt(5.0)) / 2.0
    verts = np.array([
        (-1, phi, 0), (1, phi, 0), (-1, -phi, 0), (1, -phi, 0),
        (0, -1, phi), (0, 1, phi), (0, -1, -phi), (0, 1, -phi),
        (phi, 0, -1), (phi, 0, 1), (-phi, 0, -1), (-phi, 0, 1),
    ], dtype=np.float64)
    verts /= np.linalg.norm(verts, axis=1, keepdims=True)
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    for _ in range(level):
        verts_list = list(verts)
        midpoint = {}

        def mid(a, b):
            key = (a, b) if a < b else (b, a)
            if key not in midpoint:
                m = verts_list[a] + verts_list[b]
                verts_list.append(m / np.linalg.norm(m))
                midpoint[key] = len(verts_list) - 1
            return midpoint[key]

        new_faces = []
        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new_faces
        verts = np.array(verts_list)
    return verts, np.array(faces, dtype=np.intp)


def make_hemisphere_meshes(cfg):
    """Two icospheres of 50 mm radius, offset -/+15 mm on x, labeled L/R."""
    level = ICOSPHERE_VERTICES[cfg.vertices_per_hemisphere]
    verts, faces = icosphere(level)
    verts = verts * SPHERE_RADIUS_MM
    v = verts.shape[0]
    left = verts + np.array([-HEMISPHERE_OFFSET_MM, 0.0, 0.0])
    right = verts + np.array([HEMISPHERE_OFFSET_MM, 0.0, 0.0])
    vertices = np.concatenate([left, right])
    triangles = np.concatenate([faces, faces + v])
    hemisphere = np.array(["L"] * v + ["R"] * v)
    return Mesh(vertices, triangles, hemisphere)


def plant_sources(mesh, cfg):
    """Gaussian geodesic blobs, one seed vertex per source per hemisphere.

    Returns (maps, seed_vertices): maps is n_sources x V with each row
    max-normalized; seed_vertices maps source name to global vertex ids.
    """
    names = SUBTASKS[:cfg.n_sources]
    dists = {h: geodesic_distances(mesh, h) for h in ("L", "R")}
    ids = {h: mesh.vertex_ids(h) for h in ("L", "R")}
    rng = SeededRng(cfg.seed, "sources")
    min_sep = 2.0 * cfg.blob_radius

    needed = {h: [n for n in names if h in SOURCE_HEMISPHERES[n]]
              for h in ("L", "R")}
    local_seed = {}
    # the bilateral source reuses one local id on both hemispheres, which
    # translated-copy hemispheres make geometrically equivalent
    bilateral = [n for n in names if len(SOURCE_HEMISPHERES[n]) == 2]
    if bilateral:
        t0 = int(rng.integers(0, ids["L"].size))
        for n in bilateral:
            local_seed[("L", n)] = t0
            local_seed[("R", n)] = t0
    for h in ("L", "R"):
        todo = [n for n in needed[h] if (h, n) not in local_seed]
        fixed = [local_seed[(h, n)] for n in needed[h] if (h, n) in local_seed]
        if todo:
            picks = _place_seeds_around(dists[h], len(todo), fixed, min_sep, rng)
            for n, p in zip(todo, picks):
                local_seed[(h, n)] = p

    maps = np.zeros((len(names), mesh.n_vertices))
    seed_vertices = {n: [] for n in names}
    for si, n in enumerate(names):
        for h in SOURCE_HEMISPHERES[n]:
            loc = local_seed[(h, n)]
            d = dists[h][loc]
            maps[si, ids[h]] += np.exp(-d * d / (2.0 * cfg.blob_radius ** 2))
            seed_vertices[n].append(int(ids[h][loc]))
        maps[si] /= maps[si].max()
    return maps, seed_vertices


def _place_seeds_around(dist, count, fixed, min_sep, rng):
    """Like _place_seeds but keeps min_sep from already-fixed vertices too."""
    n = dist.shape[0]
    for _ in range(200):
        picks = []
        ok_base = np.ones(n, dtype=bool)
        for f in fixed:
            ok_base &= dist[f] >= min_sep
        for _ in range(count):
            ok = ok_base.copy()
            for p in picks:
                ok &= dist[p] >= min_sep
            cands = np.flatnonzero(ok)
            if cands.size == 0:
                picks = None
                break
            picks.append(int(cands[rng.integers(0, cands.size)]))
        if picks is not None:
            return picks
    raise RuntimeError("could not place sources with requested separation; "
                       "reduce blob_radius or n_sources")


def default_design(seed, tr=1.44, block_s=12.0, gap_s=7.0, rest_s=8.0,
                   repeats=2):
    """Each subtask `repeats` times in shuffled order, never back to back."""
    rng = SeededRng(seed, "design")
    order = np.repeat(np.arange(len(SUBTASKS)), repeats)
    for _ in range(1000):
        perm = order[rng.permutation(order.size)]
        if not (perm[1:] == perm[:-1]).any():
            break
    else:
        raise RuntimeError("could not shuffle blocks without repeats")
    blocks = []
    t = rest_s
    for sub in perm:
        blocks.append((int(sub), t, block_s))
        t += block_s + gap_s
    total = t - gap_s + rest_s
    n_frames = int(np.ceil(total / tr))
    return TaskDesign(blocks=tuple(blocks), tr=tr, n_frames=n_frames)


def _split_tags(n):
    """70/10/20 split by subject index; val and test non-empty for n >= 3."""
    if n < 3:
        return ["train"] * n
    n_val = max(1, int(round(0.1 * n)))
    n_test = max(1, int(round(0.2 * n)))
    n_train = n - n_val - n_test
    return ["train"] * n_train + ["val"] * n_val + ["test"] * n_test


def generate(cfg):
    """Build the full synthetic dataset with ground truth attached."""
    mesh = make_hemisphere_meshes(cfg)
    maps, seed_vertices = plant_sources(mesh, cfg)
    design = cfg.design if cfg.design is not None else default_design(cfg.seed)
    regs = task_regressors(design)[:cfg.n_sources]
    t_frames, v = design.n_frames, mesh.n_vertices

    raw, courses = [], []
    for i in range(cfg.n_subjects):
        amp_rng = SeededRng(cfg.seed, f"amp/{i}")
        amps = 1.0 + 0.4 * (amp_rng.uniform(size=cfg.n_sources) - 0.5)
        tc = amps[:, None] * regs
        x = tc.T @ maps
        if cfg.mixing == "tanh":
            x = np.tanh(1.5 * x)
        if cfg.noise_sigma > 0:
            noise_rng = SeededRng(cfg.seed, f"noise/{i}")
            innov = cfg.noise_sigma * noise_rng.standard_normal((t_frames, v))
            noise = np.empty_like(innov)
            noise[0] = innov[0]
            for t in range(1, t_frames):
                noise[t] = cfg.ar1_coeff * noise[t - 1] + innov[t]
            x = x + noise
        x = detrend_linear(bandpass(x, design.tr))
        raw.append(x)
        courses.append(tc)

    tags = _split_tags(cfg.n_subjects)
    norm = MinMaxNormalizer().fit([x for x, tag in zip(raw, tags)
                                   if tag == "train"])
    subjects = [SubjectTimeseries(f"sub-{i:03d}", norm.transform(x), tag)
                for i, (x, tag) in enumerate(zip(raw, tags))]
    truth = GroundTruth(maps=maps, timecourses=np.array(courses),
                        seed_vertices=seed_vertices)
    return SynthDataset(subjects=subjects, mesh=mesh, design=design,
                        ground_truth=truth, config=cfg)
