"""Bit-exact file formats and atomic writes.

Binary containers use little-endian integers and 32-bit floats throughout:
- timeseries: magic "FTS1", u32 version, u32 subject count, then per
  subject u32 T, u32 V and T*V floats in time-major order, with a JSON
  sidecar of subject ids, tr, and split tags;
- checkpoints: magic "SVAE", u32 version, u32 tensor count, per tensor a
  u16-length UTF-8 name, u8 rank, u32 dims, and float data, closed by a
  u32 CRC32 of the tensor payload.
"""

import hashlib
import json
import os
import struct
import subprocess
import tempfile
import zlib
from dataclasses import dataclass, field
from datetime import datetime, timezone

import numpy as np

TIMESERIES_MAGIC = b"FTS1"
CHECKPOINT_MAGIC = b"SVAE"
FORMAT_VERSION = 1


def atomic_write_bytes(path, data):
    """Write via a temp file in the same directory, then rename."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text):
    atomic_write_bytes(path, text.encode("utf-8"))


def write_json(path, obj):
    atomic_write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def read_json(path):
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


def config_hash(obj):
    """Stable hash of a JSON-serializable config, key order independent."""
    canon = json.dumps(obj, sort_keys=True, separators=(",", ":"))
    return hashlib.blake2b(canon.encode("utf-8"), digest_size=8).hexdigest()


def _sidecar_path(path):
    return str(path) + ".json"


def write_timeseries(path, arrays, subject_ids, tr, splits, extra=None):
    """FTS1 container plus sidecar; data stored as little-endian float32."""
    if not (len(arrays) == len(subject_ids) == len(splits)):
        raise ValueError("arrays, subject_ids and splits must align")
    chunks = [TIMESERIES_MAGIC,
              struct.pack("<II", FORMAT_VERSION, len(arrays))]
    for a in arrays:
        a = np.asarray(a)
        if a.ndim != 2:
            raise ValueError(f"timeseries must be T x V, got {a.shape}")
        chunks.append(struct.pack("<II", a.shape[0], a.shape[1]))
        chunks.append(np.ascontiguousarray(a, dtype="<f4").tobytes())
    atomic_write_bytes(path, b"".join(chunks))
    sidecar = {"subjects": list(subject_ids), "tr": float(tr),
               "splits": list(splits)}
    sidecar.update(extra or {})
    write_json(_sidecar_path(path), sidecar)


def read_timeseries(path):
    """Returns (arrays as float64, sidecar dict)."""
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != TIMESERIES_MAGIC:
        raise ValueError(f"{path}: not a timeseries container "
                         f"(magic {blob[:4]!r})")
    version, count = struct.unpack_from("<II", blob, 4)
    if version != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported version {version}")
    offset = 12
    arrays = []
    for _ in range(count):
        t, v = struct.unpack_from("<II", blob, offset)
        offset += 8
        n = t * v * 4
        data = np.frombuffer(blob, dtype="<f4", count=t * v, offset=offset)
        arrays.append(data.reshape(t, v).astype(np.float64))
        offset += n
    return arrays, read_json(_sidecar_path(path))


def write_mesh(path, mesh, extra=None):
    d = {"vertices": mesh.vertices.tolist(),
         "triangles": mesh.triangles.tolist(),
         "hemisphere": mesh.hemisphere.tolist()}
    d.update(extra or {})
    write_json(path, d)


def read_mesh(path):
    from .surface import Mesh
    d = read_json(path)
    return Mesh(d["vertices"], d["triangles"], d["hemisphere"])


def write_clusters(path, ca, extra=None):
    d = {"k": ca.k_per_hemisphere, "mode": ca.mode, "seed": ca.seed,
         "assignment": ca.assignment.tolist(),
         "max_cluster_size": ca.max_cluster_size}
    d.update(extra or {})
    write_json(path, d)


def read_clusters(path, hemisphere):
    """Rebuild a ClusterAssignment; hemisphere labels come from the mesh."""
    from .spectral import ClusterAssignment
    d = read_json(path)
    ca = ClusterAssignment(d["k"], d["assignment"], d["mode"], d["seed"],
                           hemisphere)
    if ca.max_cluster_size != d["max_cluster_size"]:
        raise ValueError(
            f"{path}: stored max_cluster_size {d['max_cluster_size']} "
            f"disagrees with assignment ({ca.max_cluster_size})")
    return ca


def write_checkpoint(path, tensors, kind, meta=None):
    """Named float32 tensors with a CRC32 trailer and a JSON sidecar."""
    payload = [struct.pack("<I", len(tensors))]
    for name in sorted(tensors):
        arr = np.asarray(tensors[name])
        encoded = name.encode("utf-8")
        if len(encoded) > 0xFFFF:
            raise ValueError(f"tensor name too long: {name!r}")
        if arr.ndim > 0xFF:
            raise ValueError(f"tensor rank too large: {arr.ndim}")
        payload.append(struct.pack("<H", len(encoded)))
        payload.append(encoded)
        payload.append(struct.pack("<B", arr.ndim))
        payload.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        payload.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    body = b"".join(payload)
    blob = (CHECKPOINT_MAGIC + struct.pack("<I", FORMAT_VERSION) + body
            + struct.pack("<I", zlib.crc32(body)))
    atomic_write_bytes(path, blob)
    sidecar = {"kind": kind}
    sidecar.update(meta or {})
    write_json(_sidecar_path(path), sidecar)


def read_checkpoint(path):
    """Returns ({name: float64 array}, sidecar dict); verifies the CRC."""
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint (magic {blob[:4]!r})")
    version, = struct.unpack_from("<I", blob, 4)
    if version != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported version {version}")
    body, stored = blob[8:-4], struct.unpack("<I", blob[-4:])[0]
    if zlib.crc32(body) != stored:
        raise ValueError(f"{path}: CRC mismatch, file corrupt")
    count, = struct.unpack_from("<I", body, 0)
    offset = 4
    tensors = {}
    for _ in range(count):
        name_len, = struct.unpack_from("<H", body, offset)
        offset += 2
        name = body[offset:offset + name_len].decode("utf-8")
        offset += name_len
        rank, = struct.unpack_from("<B", body, offset)
        offset += 1
        dims = struct.unpack_from(f"<{rank}I", body, offset)
        offset += 4 * rank
        n = int(np.prod(dims)) if rank else 1
        data = np.frombuffer(body, dtype="<f4", count=n, offset=offset)
        tensors[name] = data.reshape(dims).astype(np.float64)
        offset += 4 * n
    return tensors, read_json(_sidecar_path(path))


def write_csv_rows(path, fieldnames, rows):
    """UTF-8 CSV with a header; floats rendered with repr for exactness."""
    lines = [",".join(fieldnames)]
    for row in rows:
        cells = []
        for name in fieldnames:
            value = row[name]
            cells.append(repr(value) if isinstance(value, float) else str(value))
        lines.append(",".join(cells))
    atomic_write_text(path, "\n".join(lines) + "\n")


def git_describe():
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty"],
                             capture_output=True, text=True, timeout=10)
        if out.returncode == 0:
            return out.stdout.strip()
    except OSError:
        pass
    return "unknown"


@dataclass
class RunManifest:
    config_hash: str
    seed: int
    git: str = field(default_factory=git_describe)
    created: str = field(
        default_factory=lambda: datetime.now(timezone.utc).isoformat())
    inputs: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)

    def write(self, path):
        write_json(path, {"config_hash": self.config_hash, "seed": self.seed,
                          "git": self.git, "created": self.created,
                          "inputs": self.inputs, "outputs": self.outputs})


DATASET_FILES = {"mesh": "mesh.json", "timeseries": "timeseries.fts",
                 "design": "design.json", "ground_truth": "ground_truth.json",
                 "config": "config.json"}


def dataset_paths(root):
    return {key: os.path.join(root, name)
            for key, name in DATASET_FILES.items()}


def write_dataset(root, ds):
    """Lay a synthetic dataset out as a directory; returns its config hash.

    Every file carries the hash so downstream artifacts can be traced back
    to the generating configuration.
    """
    from dataclasses import asdict
    os.makedirs(root, exist_ok=True)
    cfg = {key: value for key, value in asdict(ds.config).items()
           if key != "design"}
    design = ds.design.to_dict()
    tag = {"config_hash": config_hash({**cfg, "design": design})}
    paths = dataset_paths(root)
    write_mesh(paths["mesh"], ds.mesh, extra=tag)
    write_timeseries(paths["timeseries"], [s.data for s in ds.subjects],
                     [s.subject_id for s in ds.subjects], ds.tr,
                     [s.split for s in ds.subjects], extra=tag)
    write_json(paths["design"], {**design, **tag})
    gt = ds.ground_truth
    write_json(paths["ground_truth"],
               {"maps": gt.maps.tolist(),
                "timecourses": gt.timecourses.tolist(),
                "seed_vertices": {name: np.asarray(ids).tolist()
                                  for name, ids in gt.seed_vertices.items()},
                **tag})
    write_json(paths["config"], {**cfg, **tag})
    return tag["config_hash"]


def read_dataset(root):
    from .signal import TaskDesign
    from .synth import (GroundTruth, SubjectTimeseries, SynthConfig,
                        SynthDataset)
    paths = dataset_paths(root)
    design = TaskDesign.from_dict(read_json(paths["design"]))
    cfg = {key: value for key, value in read_json(paths["config"]).items()
           if key != "config_hash"}
    arrays, sidecar = read_timeseries(paths["timeseries"])
    subjects = [SubjectTimeseries(sid, data, split) for sid, data, split
                in zip(sidecar["subjects"], arrays, sidecar["splits"])]
    gt = read_json(paths["ground_truth"])
    return SynthDataset(
        subjects, read_mesh(paths["mesh"]), design,
        GroundTruth(np.asarray(gt["maps"], dtype=np.float64),
                    np.asarray(gt["timecourses"], dtype=np.float64),
                    {name: list(ids)
                     for name, ids in gt["seed_vertices"].items()}),
        SynthConfig(design=design, **cfg))
