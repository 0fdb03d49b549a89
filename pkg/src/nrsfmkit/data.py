"""Synthetic deforming-sequence generation and file I/O.

Scenes are generated by forward kinematics over a skeleton tree: per-joint
sinusoidal angles (seeded random axis, frequency and phase) deform the rest
pose, a smoothly sweeping camera produces orthographic 2D measurements, and
the ground truth is retained for evaluation.

All interchange files are JSON with a ``version`` and ``kind`` header; floats
round-trip exactly (shortest-repr encoding).
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import FileFormatError
from .geometry import centralize, project_sequence, rotation_about_axis, slerp

FILE_VERSION = 1


# ---------------------------------------------------------------------------
# skeletons


@dataclass(frozen=True)
class Skeleton:
    """A rooted bone tree: parents[i] < i for every non-root joint."""

    name: str
    parents: tuple  # -1 marks the root
    bone_lengths: tuple  # mm; entry for the root is 0
    rest_directions: tuple  # unit child-from-parent offsets in the rest pose

    def __post_init__(self):
        if self.parents[0] != -1 or any(p == -1 for p in self.parents[1:]):
            raise ValueError("skeleton must have exactly one root at index 0")
        for i, p in enumerate(self.parents[1:], start=1):
            if not 0 <= p < i:
                raise ValueError(f"parent of joint {i} must precede it, got {p}")
        if any(l <= 0 for l in self.bone_lengths[1:]):
            raise ValueError("bone lengths must be positive")

    @property
    def num_joints(self):
        return len(self.parents)

    def depth(self):
        depths = [0] * self.num_joints
        for i, p in enumerate(self.parents[1:], start=1):
            depths[i] = depths[p] + 1
        return max(depths)

    def total_reach(self):
        return float(sum(self.bone_lengths))

    def mean_bone_length(self):
        return float(np.mean(self.bone_lengths[1:]))

    def rest_pose(self):
        """Rest-pose joint positions (P, 3) in mm, root at the origin."""
        pos = np.zeros((self.num_joints, 3))
        for i in range(1, self.num_joints):
            d = np.asarray(self.rest_directions[i], dtype=np.float64)
            pos[i] = pos[self.parents[i]] + self.bone_lengths[i] * d / np.linalg.norm(d)
        return pos


def _human17():
    parents = (-1, 0, 1, 2, 0, 4, 5, 0, 7, 8, 9, 8, 11, 12, 8, 14, 15)
    lengths = (0, 130, 450, 440, 130, 450, 440, 230, 250, 120, 120, 170, 280, 250, 170, 280, 250)
    dirs = (
        (0, 0, 0),
        (-1, 0, 0),  # right hip
        (0, -1, 0),  # right knee
        (0, -1, 0.12),  # right ankle
        (1, 0, 0),  # left hip
        (0, -1, 0),  # left knee
        (0, -1, 0.12),  # left ankle
        (0, 1, 0.1),  # spine
        (0, 1, -0.1),  # thorax
        (0, 1, 0),  # neck
        (0, 0.9, 0.45),  # head
        (1, 0.1, 0),  # left shoulder
        (0.95, -0.25, 0.2),  # left elbow
        (0.98, -0.1, 0.18),  # left wrist
        (-1, 0.1, 0),  # right shoulder
        (-0.95, -0.25, 0.2),  # right elbow
        (-0.98, -0.1, 0.18),  # right wrist
    )
    return Skeleton("human17", parents, lengths, dirs)


def _human14():
    parents = (-1, 0, 0, 2, 3, 0, 5, 6, 0, 8, 9, 0, 11, 12)
    lengths = (0, 200, 170, 280, 250, 170, 280, 250, 520, 450, 440, 520, 450, 440)
    dirs = (
        (0, 0, 0),
        (0, 1, 0.2),  # head from neck
        (-1, 0.05, 0),  # right shoulder
        (-0.95, -0.3, 0.15),  # right elbow
        (-0.98, -0.1, 0.2),  # right wrist
        (1, 0.05, 0),  # left shoulder
        (0.95, -0.3, 0.15),  # left elbow
        (0.98, -0.1, 0.2),  # left wrist
        (-0.25, -1, 0),  # right hip (down the torso)
        (0, -1, 0.05),  # right knee
        (0, -1, 0.12),  # right ankle
        (0.25, -1, 0),  # left hip
        (0, -1, 0.05),  # left knee
        (0, -1, 0.12),  # left ankle
    )
    return Skeleton("human14", parents, lengths, dirs)


_SKELETONS = {"human17": _human17, "human14": _human14}


def skeleton_by_name(name):
    try:
        return _SKELETONS[name]()
    except KeyError:
        raise ValueError(f"unknown skeleton {name!r}; available: {sorted(_SKELETONS)}") from None


def skeleton_by_joints(num_joints):
    for build in _SKELETONS.values():
        s = build()
        if s.num_joints == num_joints:
            return s
    raise ValueError(f"no shipped skeleton with {num_joints} joints (have 14 and 17)")


# ---------------------------------------------------------------------------
# synthetic scenes


_FREQ_CHOICES = (0.5, 1.0, 1.5, 2.0)


@dataclass
class SyntheticScene:
    """A generated deforming sequence with retained ground truth."""

    gt_shapes: np.ndarray  # (F, P, 3) centralized, mm
    gt_rotations: np.ndarray  # (F, 3, 3) camera rotations
    measurements: np.ndarray  # (F, P, 2)
    noise_sigma: float
    skeleton: Skeleton
    generator: dict = field(default_factory=dict)

    @property
    def num_frames(self):
        return self.gt_shapes.shape[0]

    @property
    def num_joints(self):
        return self.gt_shapes.shape[1]

    def displacement_bound(self):
        """Conservative bound on inter-frame joint displacement of gt_shapes."""
        g = self.generator
        step = g["amplitude"] * 2.0 * math.pi * max(_FREQ_CHOICES) / g["frames"]
        return 2.0 * self.skeleton.depth() * step * self.skeleton.total_reach()


def generate(skeleton, frames, deformation_amplitude=0.2, camera_sweep=0.8, noise_sigma=0.0, seed=0):
    """Generate a SyntheticScene.

    Per-joint angles follow ``amplitude * sin(2 pi freq * i/F + phase)`` about
    seeded random axes; the camera slerps between two endpoints a total of
    ``camera_sweep`` radians apart.  Deterministic for a fixed seed.
    """
    if frames < 1:
        raise ValueError("frames must be >= 1")
    if deformation_amplitude < 0 or camera_sweep < 0 or noise_sigma < 0:
        raise ValueError("amplitudes must be non-negative")
    rng = np.random.default_rng(seed)
    p = skeleton.num_joints

    axes = rng.standard_normal((p, 3))
    axes /= np.linalg.norm(axes, axis=1, keepdims=True)
    freqs = rng.choice(_FREQ_CHOICES, size=p)
    phases = rng.uniform(0.0, 2.0 * math.pi, size=p)

    sweep_axis = rng.standard_normal(3)
    sweep_axis /= np.linalg.norm(sweep_axis)
    cam_a = rotation_about_axis(sweep_axis, -camera_sweep / 2.0)
    cam_b = rotation_about_axis(sweep_axis, camera_sweep / 2.0)

    shapes = np.zeros((frames, p, 3))
    rotations = np.zeros((frames, 3, 3))
    for i in range(frames):
        angles = deformation_amplitude * np.sin(2.0 * math.pi * freqs * (i / frames) + phases)
        pos = np.zeros((p, 3))
        frames_acc = [np.eye(3)] * p
        for j in range(1, p):
            parent = skeleton.parents[j]
            local = rotation_about_axis(axes[j], angles[j]) if deformation_amplitude > 0 else np.eye(3)
            frames_acc[j] = frames_acc[parent] @ local
            d = np.asarray(skeleton.rest_directions[j], dtype=np.float64)
            d = d / np.linalg.norm(d)
            pos[j] = pos[parent] + frames_acc[j] @ (skeleton.bone_lengths[j] * d)
        shapes[i] = centralize(pos)
        u = i / (frames - 1) if frames > 1 else 0.0
        rotations[i] = slerp(cam_a, cam_b, u)

    measurements = project_sequence(rotations, shapes)
    if noise_sigma > 0:
        measurements = measurements + noise_sigma * rng.standard_normal(measurements.shape)
    return SyntheticScene(
        gt_shapes=shapes,
        gt_rotations=rotations,
        measurements=measurements,
        noise_sigma=float(noise_sigma),
        skeleton=skeleton,
        generator={
            "amplitude": float(deformation_amplitude),
            "camera_sweep": float(camera_sweep),
            "frames": int(frames),
            "seed": int(seed),
        },
    )


# ---------------------------------------------------------------------------
# JSON I/O


def write_json_atomic(path, obj):
    """Serialize to a temp file in the target directory, then rename."""
    path = os.fspath(path)
    tmp = f"{path}.tmp{os.getpid()}"
    with open(tmp, "w") as fh:
        json.dump(obj, fh, indent=1)
        fh.write("\n")
    os.replace(tmp, path)


def read_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise FileFormatError(f"{path}: parse error at line {exc.lineno} column {exc.colno}") from exc


def _require(doc, key, path):
    if key not in doc:
        raise FileFormatError(f"{path}: missing field '{key}'")
    return doc[key]


def _check_version_kind(doc, expected_kind, path):
    version = _require(doc, "version", path)
    if version != FILE_VERSION:
        raise FileFormatError(f"{path}: unsupported version {version} in field 'version'")
    kind = _require(doc, "kind", path)
    if expected_kind is not None and kind != expected_kind:
        raise FileFormatError(f"{path}: field 'kind' is '{kind}', expected '{expected_kind}'")
    return kind


def _array_field(doc, key, shape, path):
    raw = _require(doc, key, path)
    try:
        arr = np.asarray(raw, dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise FileFormatError(f"{path}: field '{key}' is not numeric") from exc
    if arr.shape != shape:
        raise FileFormatError(f"{path}: field '{key}' has shape {arr.shape}, header implies {shape}")
    if not np.all(np.isfinite(arr)):
        raise FileFormatError(f"{path}: field '{key}' contains non-finite values")
    return arr


def _skeleton_dict(skeleton):
    return {
        "name": skeleton.name,
        "parents": list(skeleton.parents),
        "bone_lengths": list(skeleton.bone_lengths),
        "rest_directions": [list(d) for d in skeleton.rest_directions],
    }


def _skeleton_from_dict(doc, path):
    for key in ("name", "parents", "bone_lengths", "rest_directions"):
        if key not in doc:
            raise FileFormatError(f"{path}: skeleton is missing field '{key}'")
    return Skeleton(
        doc["name"],
        tuple(doc["parents"]),
        tuple(doc["bone_lengths"]),
        tuple(tuple(d) for d in doc["rest_directions"]),
    )


@dataclass
class SequenceFile:
    points: np.ndarray  # (F, P, dims)
    rotations: np.ndarray | None = None
    skeleton: Skeleton | None = None


def save_sequence(path, points, rotations=None, skeleton=None):
    points = np.asarray(points, dtype=np.float64)
    frames, joints, dims = points.shape
    doc = {
        "version": FILE_VERSION,
        "kind": "sequence",
        "num_frames": frames,
        "num_joints": joints,
        "dims": dims,
        "points": points.tolist(),
    }
    if rotations is not None:
        doc["rotations"] = np.asarray(rotations, dtype=np.float64).tolist()
    if skeleton is not None:
        doc["skeleton"] = _skeleton_dict(skeleton)
    write_json_atomic(path, doc)


def load_sequence(path):
    doc = read_json(path)
    _check_version_kind(doc, "sequence", path)
    frames = _require(doc, "num_frames", path)
    joints = _require(doc, "num_joints", path)
    dims = _require(doc, "dims", path)
    if dims not in (2, 3):
        raise FileFormatError(f"{path}: field 'dims' must be 2 or 3, got {dims}")
    points = _array_field(doc, "points", (frames, joints, dims), path)
    rotations = None
    if "rotations" in doc:
        rotations = _array_field(doc, "rotations", (frames, 3, 3), path)
    skeleton = _skeleton_from_dict(doc["skeleton"], path) if "skeleton" in doc else None
    return SequenceFile(points=points, rotations=rotations, skeleton=skeleton)


def save_scene(path, scene):
    doc = {
        "version": FILE_VERSION,
        "kind": "scene",
        "num_frames": scene.num_frames,
        "num_joints": scene.num_joints,
        "noise_sigma": scene.noise_sigma,
        "points": scene.gt_shapes.tolist(),
        "rotations": scene.gt_rotations.tolist(),
        "measurements": scene.measurements.tolist(),
        "skeleton": _skeleton_dict(scene.skeleton),
        "generator": scene.generator,
    }
    write_json_atomic(path, doc)


def load_scene(path):
    doc = read_json(path)
    _check_version_kind(doc, "scene", path)
    frames = _require(doc, "num_frames", path)
    joints = _require(doc, "num_joints", path)
    return SyntheticScene(
        gt_shapes=_array_field(doc, "points", (frames, joints, 3), path),
        gt_rotations=_array_field(doc, "rotations", (frames, 3, 3), path),
        measurements=_array_field(doc, "measurements", (frames, joints, 2), path),
        noise_sigma=float(_require(doc, "noise_sigma", path)),
        skeleton=_skeleton_from_dict(_require(doc, "skeleton", path), path),
        generator=doc.get("generator", {}),
    )


def load_measurements(path):
    """Measurements (F, P, 2) from a scene file or a dims-2 sequence file."""
    doc = read_json(path)
    kind = _check_version_kind(doc, None, path)
    if kind == "scene":
        return load_scene(path).measurements
    if kind == "sequence":
        seq = load_sequence(path)
        if seq.points.shape[2] != 2:
            raise FileFormatError(f"{path}: field 'dims' must be 2 for measurement input")
        return seq.points
    raise FileFormatError(f"{path}: field 'kind' is '{kind}', expected 'scene' or 'sequence'")


def load_pose_sequence(path):
    """3D poses (F, P, 3) from a scene (ground truth) or dims-3 sequence file."""
    doc = read_json(path)
    kind = _check_version_kind(doc, None, path)
    if kind == "scene":
        return load_scene(path).gt_shapes
    if kind == "sequence":
        seq = load_sequence(path)
        if seq.points.shape[2] != 3:
            raise FileFormatError(f"{path}: field 'dims' must be 3 for pose input")
        return seq.points
    raise FileFormatError(f"{path}: field 'kind' is '{kind}', expected 'scene' or 'sequence'")


def save_checkpoint(path, kind, header, params):
    """Versioned checkpoint container: header fields plus named flat arrays."""
    doc = {"version": FILE_VERSION, "kind": kind}
    doc.update(header)
    doc["params"] = {
        name: {"shape": list(arr.shape), "values": np.asarray(arr).ravel().tolist()}
        for name, arr in params.items()
    }
    write_json_atomic(path, doc)


def load_checkpoint(path, kind):
    doc = read_json(path)
    _check_version_kind(doc, kind, path)
    raw = _require(doc, "params", path)
    params = {}
    for name, entry in raw.items():
        shape = tuple(entry.get("shape", ()))
        values = np.asarray(entry.get("values", []), dtype=np.float64)
        if values.size != int(np.prod(shape)):
            raise FileFormatError(f"{path}: parameter '{name}' has {values.size} values, shape {shape}")
        params[name] = values.reshape(shape)
        if not np.all(np.isfinite(params[name])):
            raise FileFormatError(f"{path}: parameter '{name}' contains non-finite values")
    return doc, params
