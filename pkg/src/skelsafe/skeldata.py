"""Skeleton sequences, synthetic domains, modality mapping, corruptions and the SKEL1 format.

Joint layouts
-------------
NTU-25 (3D, model-facing)::

     0 spine base    1 spine mid     2 neck          3 head
     4 L shoulder    5 L elbow       6 L wrist       7 L hand
     8 R shoulder    9 R elbow      10 R wrist      11 R hand
    12 L hip        13 L knee       14 L ankle      15 L foot
    16 R hip        17 R knee       18 R ankle      19 R foot
    20 spine shoulder 21 L hand tip 22 L thumb      23 R hand tip   24 R thumb

COCO-17 (2D)::

     0 nose  1 L eye  2 R eye  3 L ear  4 R ear  5 L shoulder  6 R shoulder
     7 L elbow  8 R elbow  9 L wrist  10 R wrist  11 L hip  12 R hip
    13 L knee  14 R knee  15 L ankle  16 R ankle

The 17 -> 25 mapping copies (x, y) of the anatomical counterparts listed in
``COCO_TO_NTU``, derives neck, spine base and spine mid as midpoints, and
leaves every other NTU joint (hands, hand tips, thumbs, feet, spine
shoulder) at zero. Depth is always zero.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

from .numerics import SeededRng

NTU_JOINTS = 25
COCO_JOINTS = 17

# NTU target joint <- COCO source joint
COCO_TO_NTU = {
    3: 0,    # head <- nose
    4: 5,    # L shoulder
    5: 7,    # L elbow
    6: 9,    # L wrist
    8: 6,    # R shoulder
    9: 8,    # R elbow
    10: 10,  # R wrist
    12: 11,  # L hip
    13: 13,  # L knee
    14: 15,  # L ankle
    16: 12,  # R hip
    17: 14,  # R knee
    18: 16,  # R ankle
}
# derived NTU joints: target <- midpoint of two COCO joints
DERIVED_FROM_COCO = {
    2: (5, 6),    # neck <- shoulders
    0: (11, 12),  # spine base <- hips
}
SPINE_MID = 1  # midpoint(neck, spine base)
ZERO_FILLED = (7, 11, 15, 19, 20, 21, 22, 23, 24)

# COCO joint <- NTU joint, used when rendering a 3D skeleton as a 2D detection.
# Eyes and ears have no NTU counterpart and sit on the head joint.
NTU_FOR_COCO = np.array([3, 3, 3, 3, 3, 4, 8, 5, 9, 6, 10, 12, 16, 13, 17, 14, 18])

# rest pose in body-height units, y up, z towards the camera
REST_POSE = np.array([
    [0.00, 0.00, 0.0], [0.00, 0.22, 0.0], [0.00, 0.45, 0.0], [0.00, 0.58, 0.02],
    [-0.17, 0.42, 0.0], [-0.20, 0.18, 0.0], [-0.22, -0.04, 0.02], [-0.22, -0.10, 0.03],
    [0.17, 0.42, 0.0], [0.20, 0.18, 0.0], [0.22, -0.04, 0.02], [0.22, -0.10, 0.03],
    [-0.09, -0.02, 0.0], [-0.10, -0.26, 0.01], [-0.10, -0.50, 0.0], [-0.10, -0.53, 0.08],
    [0.09, -0.02, 0.0], [0.10, -0.26, 0.01], [0.10, -0.50, 0.0], [0.10, -0.53, 0.08],
    [0.00, 0.40, 0.0], [-0.22, -0.15, 0.04], [-0.20, -0.08, 0.06], [0.22, -0.15, 0.04],
    [0.20, -0.08, 0.06],
])

# joint group of every NTU joint and how strongly it follows the group motion
JOINT_GROUPS = ("torso", "head", "left_arm", "right_arm", "left_leg", "right_leg")
_GROUP_OF = np.array([0, 0, 0, 1, 2, 2, 2, 2, 3, 3, 3, 3, 4, 4, 4, 4, 5, 5, 5, 5, 0, 2, 2, 3, 3])
_REACH = np.array([0.2, 0.5, 0.8, 1.0, 0.3, 0.7, 1.0, 1.1, 0.3, 0.7, 1.0, 1.1,
                   0.2, 0.6, 1.0, 1.1, 0.2, 0.6, 1.0, 1.1, 0.7, 1.2, 1.15, 1.2, 1.15])

SOURCE_FREQUENCIES = (0.5, 1.0, 1.5, 2.0)
SEMANTIC_FREQUENCIES = (2.5, 3.0, 3.5)

KINDS = ("source3d", "style_shift_2d", "semantic_shift")


class DatasetFormatError(Exception):
    """Base class for SKEL1 read failures."""


class MalformedHeader(DatasetFormatError):
    pass


class TruncatedPayload(DatasetFormatError):
    pass


class CountMismatch(DatasetFormatError):
    pass


class ChecksumMismatch(DatasetFormatError):
    pass


@dataclass
class SkeletonSequence:
    coords: np.ndarray  # (T, J, C)
    label: int
    domain_tag: str = "source3d"

    def __post_init__(self):
        self.coords = np.asarray(self.coords, dtype=np.float64)
        if self.coords.ndim != 3 or self.coords.shape[2] not in (2, 3):
            raise ValueError(f"coords must be T x J x (2|3), got {self.coords.shape}")
        if not np.all(np.isfinite(self.coords)):
            raise ValueError("coords must be finite")

    @property
    def frames(self) -> int:
        return self.coords.shape[0]

    @property
    def joints(self) -> int:
        return self.coords.shape[1]

    @property
    def channels(self) -> int:
        return self.coords.shape[2]


@dataclass
class DomainSpec:
    """Parameters of one synthetic domain.

    ``class_params[c][g]`` is ``[ax, ay, az, frequency, phase]`` for joint group
    ``g`` of class ``c``: the group oscillates along (ax, ay, az) with the
    given frequency in cycles per sequence.
    """

    kind: str
    class_params: list
    frames: int = 8
    azimuth_range: tuple = (0.0, 0.0)
    elevation_range: tuple = (0.0, 0.0)
    noise_std: float = 0.01
    scale_range: tuple = (0.9, 1.1)
    phase_jitter: float = 0.3
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown domain kind {self.kind!r}")
        self.azimuth_range = tuple(self.azimuth_range)
        self.elevation_range = tuple(self.elevation_range)
        self.scale_range = tuple(self.scale_range)

    @property
    def n_classes(self) -> int:
        return len(self.class_params)

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("azimuth_range", "elevation_range", "scale_range"):
            d[k] = list(d[k])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DomainSpec":
        return cls(**d)


def _class_params(rng: np.random.Generator, n_classes: int, frequencies) -> list:
    params = []
    for _ in range(n_classes):
        groups = []
        for _ in JOINT_GROUPS:
            direction = rng.normal(size=3)
            direction /= np.linalg.norm(direction)
            amp = rng.uniform(0.05, 0.2)
            freq = float(rng.choice(frequencies))
            phase = rng.uniform(0, 2 * np.pi)
            groups.append([round(float(v), 6) for v in (*(amp * direction), freq, phase)])
        params.append(groups)
    return params


def source_spec(n_classes: int = 8, frames: int = 8, seed: int = 0, **kw) -> DomainSpec:
    rng = SeededRng(seed).child("class-templates").generator
    return DomainSpec("source3d", _class_params(rng, n_classes, SOURCE_FREQUENCIES), frames=frames, seed=seed, **kw)


def style_shift_spec(source: DomainSpec, seed: int, azimuth_range=(-45.0, 45.0),
                     elevation_range=(-15.0, 15.0), **kw) -> DomainSpec:
    """Same class templates as ``source``, seen through a random monocular camera.

    Defaults add coordinate noise (0.05 body heights) and a wider person-scale
    range, standing in for pose-estimator error and camera distance.
    """
    base = dict(frames=source.frames, noise_std=0.05, scale_range=(0.7, 1.3),
                phase_jitter=source.phase_jitter)
    base.update(kw)
    return DomainSpec("style_shift_2d", [list(map(list, c)) for c in source.class_params],
                      azimuth_range=azimuth_range, elevation_range=elevation_range, seed=seed, **base)


def semantic_shift_spec(source: DomainSpec, seed: int, n_classes: int | None = None,
                        azimuth_range=(-45.0, 45.0), elevation_range=(-15.0, 15.0), **kw) -> DomainSpec:
    """New class templates whose frequencies never occur in the source domain.

    Semantic-shift samples are also rendered through the 2D camera pipeline.
    """
    rng = SeededRng(seed).child("class-templates").generator
    base = dict(frames=source.frames, noise_std=0.05, scale_range=(0.7, 1.3),
                phase_jitter=source.phase_jitter)
    base.update(kw)
    params = _class_params(rng, n_classes or source.n_classes, SEMANTIC_FREQUENCIES)
    return DomainSpec("semantic_shift", params, azimuth_range=azimuth_range,
                      elevation_range=elevation_range, seed=seed, **base)


@dataclass
class DatasetBundle:
    coords: np.ndarray  # (n, T, J, C) float64
    labels: np.ndarray  # (n,) int64
    class_names: list
    domain_spec: DomainSpec
    split_tag: str = "train"

    def __post_init__(self):
        self.coords = np.asarray(self.coords, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.coords.ndim != 4 or len(self.labels) != len(self.coords):
            raise ValueError("coords must be (n, T, J, C) with one label per sample")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= len(self.class_names)):
            raise ValueError("label out of range")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    @property
    def domain_tag(self) -> str:
        return self.domain_spec.kind

    @property
    def sequences(self) -> Iterator[SkeletonSequence]:
        for x, y in zip(self.coords, self.labels):
            yield SkeletonSequence(x, int(y), self.domain_tag)

    def subset(self, idx, split_tag: str | None = None) -> "DatasetBundle":
        idx = np.asarray(idx, dtype=np.int64)
        return DatasetBundle(self.coords[idx], self.labels[idx], list(self.class_names),
                             self.domain_spec, split_tag or self.split_tag)

    def with_coords(self, coords) -> "DatasetBundle":
        return DatasetBundle(coords, self.labels.copy(), list(self.class_names), self.domain_spec, self.split_tag)

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, DatasetBundle)
            and self.coords.shape == other.coords.shape
            and self.coords.tobytes() == other.coords.tobytes()
            and np.array_equal(self.labels, other.labels)
            and list(self.class_names) == list(other.class_names)
            and self.domain_spec.to_dict() == other.domain_spec.to_dict()
            and self.split_tag == other.split_tag
        )


# --- modality mapping and projection ----------------------------------------------------------

def _coords_of(seq):
    return seq.coords if isinstance(seq, SkeletonSequence) else np.asarray(seq, dtype=np.float64)


def _rewrap(seq, coords, tag=None):
    if isinstance(seq, SkeletonSequence):
        return SkeletonSequence(coords, seq.label, tag or seq.domain_tag)
    return coords


def map_coco17_to_ntu25(seq):
    """Embed a 17-keypoint 2D pose sequence into the 25-joint 3D layout.

    Accepts a SkeletonSequence or a raw array whose last two axes are
    (17, 2); leading axes (frames, batch) are preserved.
    """
    x = _coords_of(seq)
    if x.ndim < 2 or x.shape[-2:] != (COCO_JOINTS, 2):
        raise ValueError(f"expected (..., 17, 2) input, got {x.shape}")
    out = np.zeros(x.shape[:-2] + (NTU_JOINTS, 3))
    for ntu, coco in COCO_TO_NTU.items():
        out[..., ntu, :2] = x[..., coco, :]
    for ntu, (a, b) in DERIVED_FROM_COCO.items():
        out[..., ntu, :2] = 0.5 * (x[..., a, :] + x[..., b, :])
    out[..., SPINE_MID, :2] = 0.5 * (out[..., 2, :2] + out[..., 0, :2])
    return _rewrap(seq, out)


def rotation(azimuth_deg: float, elevation_deg: float) -> np.ndarray:
    """Camera rotation: yaw about the vertical y axis, then pitch about x.

    With yaw ``a`` a point maps to x' = x cos a + z sin a, so a 90 degree yaw
    puts the original depth on the image x axis and 180 degrees mirrors x.
    """
    a, e = np.deg2rad(azimuth_deg), np.deg2rad(elevation_deg)
    yaw = np.array([[np.cos(a), 0, np.sin(a)], [0, 1, 0], [-np.sin(a), 0, np.cos(a)]])
    pitch = np.array([[1, 0, 0], [0, np.cos(e), -np.sin(e)], [0, np.sin(e), np.cos(e)]])
    return pitch @ yaw


def project_to_2d(seq, azimuth: float = 0.0, elevation: float = 0.0, scale: float = 1.0):
    """Orthographic view of a 25-joint 3D sequence as 17 COCO keypoints."""
    x = _coords_of(seq)
    if x.shape[-2:] != (NTU_JOINTS, 3):
        raise ValueError(f"expected (..., 25, 3) input, got {x.shape}")
    cam = x @ rotation(azimuth, elevation).T
    out = scale * cam[..., NTU_FOR_COCO, :2]
    return _rewrap(seq, out)


# --- corruptions ------------------------------------------------------------------------------

def bbox_diagonal(coords: np.ndarray) -> float:
    flat = np.asarray(coords).reshape(-1, np.shape(coords)[-1])
    return float(np.linalg.norm(flat.max(axis=0) - flat.min(axis=0)))


def jitter_joints(seq, sigma: float, rng: SeededRng | np.random.Generator):
    """Add Gaussian noise with std ``sigma * bbox_diag`` to every coordinate."""
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    x = _coords_of(seq)
    if sigma == 0:
        return _rewrap(seq, x.copy())
    gen = rng.generator if isinstance(rng, SeededRng) else rng
    noisy = x + gen.normal(0.0, sigma * bbox_diagonal(x), size=x.shape)
    return _rewrap(seq, noisy)


def drop_keypoints(seq, k: int, rng: SeededRng | np.random.Generator):
    """Zero ``k`` distinct joints in every frame, chosen uniformly per frame."""
    x = _coords_of(seq)
    n_joints = x.shape[-2]
    if not 0 <= k <= n_joints:
        raise ValueError(f"k must lie in [0, {n_joints}], got {k}")
    out = x.copy()
    if k == 0:
        return _rewrap(seq, out)
    gen = rng.generator if isinstance(rng, SeededRng) else rng
    frames = x.shape[:-2]
    chosen = np.argsort(gen.random(frames + (n_joints,)), axis=-1)[..., :k]
    mask = np.zeros(frames + (n_joints,), dtype=bool)
    np.put_along_axis(mask, chosen, True, axis=-1)
    out[mask] = 0.0
    return _rewrap(seq, out)


def corrupt_bundle(bundle: DatasetBundle, sigma: float, k: int, rng: SeededRng) -> DatasetBundle:
    """Apply jitter then keypoint dropout sample by sample (per-sample bbox)."""
    jit, drop = rng.child("jitter").generator, rng.child("drop").generator
    out = np.empty_like(bundle.coords)
    for i, x in enumerate(bundle.coords):
        out[i] = drop_keypoints(jitter_joints(x, sigma, jit), k, drop)
    return bundle.with_coords(out)


# --- generation -------------------------------------------------------------------------------

def _render_3d(params: np.ndarray, frames: int, scale: float, phase_shift: float) -> np.ndarray:
    t = np.arange(frames) / frames
    amp, freq, phase = params[:, :3], params[:, 3], params[:, 4]
    wave = np.sin(2 * np.pi * freq[None, :] * t[:, None] + phase[None, :] + phase_shift)  # (T, G)
    motion = wave[:, _GROUP_OF, None] * amp[_GROUP_OF][None] * _REACH[None, :, None]
    return scale * (REST_POSE[None] + motion)


def generate_domain(spec: DomainSpec, n: int, rng: SeededRng | None = None, split_tag: str = "train") -> DatasetBundle:
    """Sample ``n`` labelled sequences; labels cycle round-robin over the classes.

    Coordinates are rounded to float32 before widening back so the bundle
    survives a SKEL1 roundtrip bit-exactly.
    """
    if n <= 0:
        raise ValueError("n must be positive")
    rng = rng or SeededRng(spec.seed)
    gen = rng.generator
    params = np.asarray(spec.class_params, dtype=np.float64)
    labels = np.arange(n) % spec.n_classes
    out = np.empty((n, spec.frames, NTU_JOINTS, 3))
    for i, c in enumerate(labels):
        scale = gen.uniform(*spec.scale_range)
        shift = gen.uniform(-spec.phase_jitter, spec.phase_jitter)
        x = _render_3d(params[c], spec.frames, scale, shift)
        x = x + gen.normal(0.0, spec.noise_std, size=x.shape)
        if spec.kind != "source3d":
            az = gen.uniform(*spec.azimuth_range)
            el = gen.uniform(*spec.elevation_range)
            x = map_coco17_to_ntu25(project_to_2d(x, az, el))
        out[i] = x
    out = out.astype(np.float32).astype(np.float64)
    prefix = "sem" if spec.kind == "semantic_shift" else "action"
    names = [f"{prefix}_{c:02d}" for c in range(spec.n_classes)]
    return DatasetBundle(out, labels, names, spec, split_tag)


def stratified_split(labels, fraction: float, rng: SeededRng) -> tuple[np.ndarray, np.ndarray]:
    """Indices (rest, held_out) with ``fraction`` of each class held out."""
    gen = rng.generator
    labels = np.asarray(labels)
    held = []
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        idx = idx[gen.permutation(len(idx))]
        held.extend(idx[: max(1, int(round(fraction * len(idx))))])
    held = np.sort(np.asarray(held, dtype=np.int64))
    rest = np.setdiff1d(np.arange(len(labels)), held)
    return rest, held


# --- SKEL1 on-disk format ---------------------------------------------------------------------

FORMAT = "SKEL1"


def write_dataset(bundle: DatasetBundle, path) -> Path:
    """Write ``manifest.json``, ``coords.bin`` (float32 LE) and ``labels.csv`` under ``path``."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    payload = bundle.coords.astype("<f4").tobytes()
    n, T, J, C = bundle.coords.shape
    manifest = {
        "format": FORMAT,
        "n": n,
        "T": T,
        "J": J,
        "C_dim": C,
        "class_names": list(bundle.class_names),
        "domain_spec": bundle.domain_spec.to_dict(),
        "split_tag": bundle.split_tag,
        "payload_sha256": hashlib.sha256(payload).hexdigest(),
    }
    (path / "coords.bin").write_bytes(payload)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["index", "label"])
    w.writerows((i, int(y)) for i, y in enumerate(bundle.labels))
    (path / "labels.csv").write_text(buf.getvalue())
    (path / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def read_dataset(path) -> DatasetBundle:
    path = Path(path)
    try:
        manifest = json.loads((path / "manifest.json").read_text())
        if manifest.get("format") != FORMAT:
            raise MalformedHeader(f"format is {manifest.get('format')!r}, expected {FORMAT}")
        n, T, J, C = (int(manifest[k]) for k in ("n", "T", "J", "C_dim"))
        spec = DomainSpec.from_dict(manifest["domain_spec"])
        names, digest = manifest["class_names"], manifest["payload_sha256"]
    except DatasetFormatError:
        raise
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise MalformedHeader(f"bad manifest in {path}: {exc}") from exc

    payload = (path / "coords.bin").read_bytes()
    sample_bytes = T * J * C * 4
    if sample_bytes == 0 or len(payload) % sample_bytes:
        raise TruncatedPayload(f"coords.bin holds {len(payload)} bytes, not a whole number of samples")
    if len(payload) // sample_bytes != n:
        raise CountMismatch(f"manifest says {n} samples, payload holds {len(payload) // sample_bytes}")
    if hashlib.sha256(payload).hexdigest() != digest:
        raise ChecksumMismatch(f"payload checksum mismatch in {path}")

    with open(path / "labels.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != ["index", "label"]:
        raise MalformedHeader("labels.csv header must be 'index,label'")
    if len(rows) - 1 != n:
        raise CountMismatch(f"manifest says {n} samples, labels.csv has {len(rows) - 1}")
    labels = np.array([int(r[1]) for r in rows[1:]], dtype=np.int64)
    coords = np.frombuffer(payload, dtype="<f4").astype(np.float64).reshape(n, T, J, C)
    return DatasetBundle(coords, labels, names, spec, manifest["split_tag"])
