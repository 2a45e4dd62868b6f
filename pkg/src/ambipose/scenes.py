"""Procedural ambiguous scenes: landmark layouts, trajectories, datasets.

A scene is a set of tagged 3D landmarks whose positions are invariant under
a cyclic rotation group of order k about the world z-axis.  Cameras travel a
ring around the layout looking at the origin.  Observations are fixed-length
feature vectors with two parts:

  * 48 bearing/range channels (16 azimuth bins x 3 range shells) computed
    from the camera pose reduced to the fundamental symmetry sector.  The
    reduced pose is quantized to a 1e-6 grid before feature math, so poses
    related by the symmetry group render bit-identical channels - ambiguity
    holds exactly, not just approximately.
  * 16 landmark-identity channels scaled by the distinguishing strength
    eta, computed from the true (unreduced) pose.  With eta = 0 they vanish
    and symmetric poses are indistinguishable; with eta > 0 they reveal
    which symmetric replica the camera actually faces.

Datasets are persisted as manifest.json plus little-endian float32 record
files (observation, translation, unit quaternion wxyz with w >= 0).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geometry import Pose, quat_from_rotation, rot_z, rotation_from_quat
from .model import SceneBounds

N_AZIMUTH_BINS = 16
N_RANGE_SHELLS = 3
N_ID_CHANNELS = 16
OBS_DIM = N_AZIMUTH_BINS * N_RANGE_SHELLS + N_ID_CHANNELS

_POSE_QUANTUM = 1e-6  # canonical poses snap to this grid before rendering
_SECTOR_EPS = 1e-9  # absorbs float noise in sector assignment at boundaries
_TEST_SEED_XOR = 0x5EED7E57
_FORMAT_VERSION = 1


@dataclass(frozen=True)
class SceneSpec:
    """Procedural scene description with a known symmetry group."""

    name: str
    symmetry_order: int  # k equivalent modes under rotation about z
    bounds: SceneBounds
    ring_radius: float
    camera_height: float
    landmark_positions: np.ndarray  # (L, 3)
    landmark_tags: np.ndarray  # (L,) ints, identity channel = tag % 16
    noise_std: float = 0.01
    distinguishing_strength: float = 0.0  # eta in [0, 1]

    def __post_init__(self):
        pos = np.asarray(self.landmark_positions, dtype=np.float64).reshape(-1, 3)
        tags = np.asarray(self.landmark_tags, dtype=np.int64).reshape(-1)
        if self.symmetry_order < 1:
            raise ValueError("symmetry_order must be >= 1")
        if self.ring_radius <= 0:
            raise ValueError("ring_radius must be positive")
        if not 0.0 <= self.distinguishing_strength <= 1.0:
            raise ValueError("distinguishing_strength must lie in [0, 1]")
        if pos.shape[0] != tags.shape[0] or pos.shape[0] == 0:
            raise ValueError("need matching, nonempty landmark positions and tags")
        object.__setattr__(self, "landmark_positions", pos)
        object.__setattr__(self, "landmark_tags", tags)

    @property
    def obs_dim(self):
        return OBS_DIM

    @property
    def scale(self) -> float:
        return self.bounds.scale


@dataclass(frozen=True)
class OracleModeSet:
    """Group orbit of a true pose: the k equally likely poses."""

    poses: tuple  # k Pose values, index 0 is the input pose
    symmetry_order: int

    def __len__(self):
        return len(self.poses)

    def __getitem__(self, i) -> Pose:
        return self.poses[i]


def _ring(radius, z, count, tag0, phase=0.0):
    ang = phase + 2.0 * np.pi * np.arange(count) / count
    pts = np.stack([radius * np.cos(ang), radius * np.sin(ang), np.full(count, z)], axis=1)
    return pts, np.arange(tag0, tag0 + count)


def _make_round_table(noise_std, eta):
    legs, t0 = _ring(0.8, 0.35, 4, 0)
    rim, t1 = _ring(1.1, 0.78, 8, 4, phase=np.pi / 8)
    center = np.array([[0.0, 0.0, 0.9]])
    pos = np.concatenate([legs, rim, center])
    tags = np.concatenate([t0, t1, [12]])
    return SceneSpec(
        name="round_table",
        symmetry_order=4,
        bounds=SceneBounds([-2.6, -2.6, 0.6], [2.6, 2.6, 1.8]),
        ring_radius=2.0,
        camera_height=1.2,
        landmark_positions=pos,
        landmark_tags=tags,
        noise_std=noise_std,
        distinguishing_strength=eta,
    )


def _make_dinner_table(noise_std, eta):
    corners = np.array(
        [[1.2, 0.7, 0.4], [-1.2, -0.7, 0.4], [1.2, -0.7, 0.4], [-1.2, 0.7, 0.4]]
    )
    ends = np.array([[1.5, 0.0, 0.75], [-1.5, 0.0, 0.75]])
    sides = np.array([[0.0, 0.9, 0.75], [0.0, -0.9, 0.75]])
    center = np.array([[0.0, 0.0, 0.8]])
    pos = np.concatenate([corners, ends, sides, center])
    tags = np.arange(9)
    return SceneSpec(
        name="dinner_table",
        symmetry_order=2,
        bounds=SceneBounds([-2.9, -2.9, 0.6], [2.9, 2.9, 1.8]),
        ring_radius=2.2,
        camera_height=1.2,
        landmark_positions=pos,
        landmark_tags=tags,
        noise_std=noise_std,
        distinguishing_strength=eta,
    )


def _make_ceiling_grid(noise_std, eta):
    posts, t0 = _ring(0.9, 0.5, 6, 0)
    rim, t1 = _ring(1.2, 0.9, 12, 6, phase=np.pi / 12)
    center = np.array([[0.0, 0.0, 1.0]])
    pos = np.concatenate([posts, rim, center])
    tags = np.concatenate([t0, t1, [18]])
    return SceneSpec(
        name="ceiling_grid",
        symmetry_order=6,
        bounds=SceneBounds([-2.4, -2.4, 0.5], [2.4, 2.4, 1.7]),
        ring_radius=1.8,
        camera_height=1.1,
        landmark_positions=pos,
        landmark_tags=tags,
        noise_std=noise_std,
        distinguishing_strength=eta,
    )


def _make_unambiguous(noise_std, eta):
    ang = np.deg2rad([0.0, 50.0, 110.0, 160.0, 230.0, 280.0, 340.0])
    rad = np.array([0.5, 0.9, 1.2, 0.7, 1.0, 0.6, 1.1])
    hgt = np.array([0.3, 0.8, 0.5, 1.0, 0.4, 0.9, 0.6])
    pos = np.stack([rad * np.cos(ang), rad * np.sin(ang), hgt], axis=1)
    return SceneSpec(
        name="unambiguous",
        symmetry_order=1,
        bounds=SceneBounds([-2.6, -2.6, 0.6], [2.6, 2.6, 1.8]),
        ring_radius=2.0,
        camera_height=1.2,
        landmark_positions=pos,
        landmark_tags=np.arange(7),
        noise_std=noise_std,
        distinguishing_strength=eta,
    )


_BUILDERS = {
    "round_table": (_make_round_table, 0.0),
    "dinner_table": (_make_dinner_table, 0.0),
    "ceiling_grid": (_make_ceiling_grid, 0.0),
    "unambiguous": (_make_unambiguous, 1.0),
}


def scene_names():
    return sorted(_BUILDERS)


def builtin_scene(name, noise_std=0.01, distinguishing_strength=None) -> SceneSpec:
    """One of the built-in layouts; eta defaults per scene (1 for unambiguous)."""
    if name not in _BUILDERS:
        raise ValueError(f"unknown scene {name!r}; known: {', '.join(scene_names())}")
    builder, default_eta = _BUILDERS[name]
    eta = default_eta if distinguishing_strength is None else distinguishing_strength
    return builder(noise_std, eta)


# ---------------------------------------------------------------------------
# Symmetry group and trajectories
# ---------------------------------------------------------------------------


def symmetry_rotation(spec: SceneSpec, j) -> np.ndarray:
    """World-frame rotation of the j-th group element (identity for j = 0)."""
    j = j % spec.symmetry_order
    if j == 0:
        return np.eye(3)
    return rot_z(2.0 * np.pi * j / spec.symmetry_order)


def apply_symmetry(pose: Pose, g: np.ndarray) -> Pose:
    """Rotate a camera pose rigidly about the scene's vertical axis."""
    return Pose(g @ pose.t, g @ pose.R)


def oracle_modes(spec: SceneSpec, pose: Pose) -> OracleModeSet:
    """The k poses equivalent to `pose` under the scene's symmetry group."""
    if not spec.bounds.contains(pose.t):
        raise ValueError("pose lies outside the scene bounds")
    poses = [pose]
    for j in range(1, spec.symmetry_order):
        poses.append(apply_symmetry(pose, symmetry_rotation(spec, j)))
    return OracleModeSet(tuple(poses), spec.symmetry_order)


def look_at_origin(t) -> Pose:
    """Camera pose at position t with the viewing axis through the origin."""
    t = np.asarray(t, dtype=np.float64)
    f = -t / np.linalg.norm(t)
    up = np.array([0.0, 0.0, 1.0])
    x = np.cross(up, f)
    nx = np.linalg.norm(x)
    if nx < 1e-12:
        raise ValueError("camera directly above the origin; viewing axis undefined")
    x = x / nx
    y = np.cross(f, x)
    return Pose(t, np.stack([x, y, f], axis=1))


def sample_trajectory(
    spec: SceneSpec, n, seed, radius_jitter=0.03, height_jitter=0.03
):
    """n ring poses with yaw exactly uniform over [0, 2pi).

    Radius is jittered multiplicatively by +-radius_jitter and height
    additively by +-height_jitter meters (uniform, seeded); yaw stays exact
    so symmetric replicas of a pose appear in trajectories whose length is a
    multiple of the symmetry order.
    """
    if n < 1:
        raise ValueError("need at least one pose")
    rng = np.random.default_rng(seed)
    u = rng.uniform(-1.0, 1.0, size=(n, 2))
    poses = []
    for i in range(n):
        yaw = 2.0 * np.pi * i / n
        r = spec.ring_radius * (1.0 + radius_jitter * u[i, 0])
        h = spec.camera_height + height_jitter * u[i, 1]
        t = np.array([r * np.cos(yaw), r * np.sin(yaw), h])
        poses.append(look_at_origin(t))
    return poses


# ---------------------------------------------------------------------------
# Observation rendering
# ---------------------------------------------------------------------------


def _canonical_pose_arrays(spec: SceneSpec, pose: Pose):
    """Reduce a pose to the fundamental symmetry sector and quantize it.

    Poses in the same group orbit land on the same quantized (t, R) arrays,
    which is what makes the shared feature channels exactly ambiguous.
    """
    k = spec.symmetry_order
    if k == 1:
        t, R = pose.t, pose.R
    else:
        sector_angle = 2.0 * np.pi / k
        yaw = np.mod(np.arctan2(pose.t[1], pose.t[0]), 2.0 * np.pi)
        j = int(np.floor(yaw / sector_angle + _SECTOR_EPS)) % k
        g_inv = rot_z(-sector_angle * j)
        t, R = g_inv @ pose.t, g_inv @ pose.R
    q = _POSE_QUANTUM
    return np.round(t / q) * q, np.round(R / q) * q


def _landmark_responses(spec: SceneSpec, t, R):
    """Per-landmark visibility weight, azimuth and range in the camera frame."""
    cam = (spec.landmark_positions - t) @ R  # rows: landmark, cols: x,y,z camera axes
    rho = np.linalg.norm(cam, axis=1)
    rho = np.maximum(rho, 1e-9)
    forward = np.maximum(cam[:, 2] / rho, 0.0)
    falloff = 1.0 / (1.0 + (rho / spec.ring_radius) ** 2)
    vis = forward**2 * falloff
    azimuth = np.arctan2(cam[:, 0], cam[:, 2])
    return vis, azimuth, rho


def _bearing_range_channels(spec: SceneSpec, t, R):
    vis, az, rho = _landmark_responses(spec, t, R)
    centers = -np.pi + (np.arange(N_AZIMUTH_BINS) + 0.5) * (2.0 * np.pi / N_AZIMUTH_BINS)
    diff = az[:, None] - centers[None, :]
    diff = np.mod(diff + np.pi, 2.0 * np.pi) - np.pi
    sigma_az = 2.0 * np.pi / N_AZIMUTH_BINS
    az_w = np.exp(-0.5 * (diff / sigma_az) ** 2)  # (L, bins)

    shell_centers = spec.ring_radius * (0.5 + 0.5 * np.arange(N_RANGE_SHELLS))
    sigma_r = 0.35 * spec.ring_radius
    r_w = np.exp(-0.5 * ((rho[:, None] - shell_centers[None, :]) / sigma_r) ** 2)

    grid = np.einsum("l,lb,ls->bs", vis, az_w, r_w)
    return grid.reshape(-1)


def _identity_channels(spec: SceneSpec, pose: Pose):
    eta = spec.distinguishing_strength
    if eta == 0.0:
        return np.zeros(N_ID_CHANNELS)
    vis, _, _ = _landmark_responses(spec, pose.t, pose.R)
    out = np.zeros(N_ID_CHANNELS)
    np.add.at(out, spec.landmark_tags % N_ID_CHANNELS, eta * vis)
    return out


def render_observation(spec: SceneSpec, pose: Pose, rng=None) -> np.ndarray:
    """Feature vector seen from a pose (plus Gaussian noise when rng given).

    With eta = 0 and no noise, poses in the same symmetry orbit produce
    identical vectors.
    """
    if not spec.bounds.contains(pose.t):
        raise ValueError("pose lies outside the scene bounds")
    t_c, R_c = _canonical_pose_arrays(spec, pose)
    obs = np.concatenate(
        [_bearing_range_channels(spec, t_c, R_c), _identity_channels(spec, pose)]
    )
    if rng is not None and spec.noise_std > 0.0:
        obs = obs + rng.normal(0.0, spec.noise_std, size=obs.shape)
    return obs


# ---------------------------------------------------------------------------
# Dataset persistence
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LabeledSample:
    """One training/evaluation record: observation plus ground-truth pose."""

    obs: np.ndarray
    pose: Pose


@dataclass(frozen=True)
class DatasetSplit:
    observations: np.ndarray  # (N, obs_dim) float64
    translations: np.ndarray  # (N, 3)
    rotations: np.ndarray  # (N, 3, 3)

    def __len__(self):
        return self.observations.shape[0]

    def pose(self, i) -> Pose:
        return Pose(self.translations[i], self.rotations[i])

    def sample(self, i) -> LabeledSample:
        return LabeledSample(self.observations[i], self.pose(i))


@dataclass(frozen=True)
class Dataset:
    spec: SceneSpec
    train: DatasetSplit
    test: DatasetSplit
    manifest: dict


def spec_to_manifest(spec: SceneSpec) -> dict:
    return {
        "name": spec.name,
        "symmetry_order": spec.symmetry_order,
        "bounds": {"mins": list(spec.bounds.mins), "maxs": list(spec.bounds.maxs)},
        "ring_radius": spec.ring_radius,
        "camera_height": spec.camera_height,
        "noise_std": spec.noise_std,
        "distinguishing_strength": spec.distinguishing_strength,
        "landmarks": [
            [float(p[0]), float(p[1]), float(p[2]), int(tag)]
            for p, tag in zip(spec.landmark_positions, spec.landmark_tags)
        ],
    }


def spec_from_manifest(entry: dict) -> SceneSpec:
    landmarks = np.asarray(entry["landmarks"], dtype=np.float64)
    return SceneSpec(
        name=entry["name"],
        symmetry_order=int(entry["symmetry_order"]),
        bounds=SceneBounds(entry["bounds"]["mins"], entry["bounds"]["maxs"]),
        ring_radius=float(entry["ring_radius"]),
        camera_height=float(entry["camera_height"]),
        landmark_positions=landmarks[:, :3],
        landmark_tags=landmarks[:, 3].astype(np.int64),
        noise_std=float(entry["noise_std"]),
        distinguishing_strength=float(entry["distinguishing_strength"]),
    )


def _render_split(spec: SceneSpec, n, traj_seed):
    poses = sample_trajectory(spec, n, traj_seed)
    rows = np.empty((n, OBS_DIM + 7), dtype="<f4")
    for i, pose in enumerate(poses):
        rng = np.random.default_rng([traj_seed, i])
        rows[i, :OBS_DIM] = render_observation(spec, pose, rng)
        rows[i, OBS_DIM : OBS_DIM + 3] = pose.t
        rows[i, OBS_DIM + 3 :] = quat_from_rotation(pose.R)
    return rows


def generate_dataset(spec: SceneSpec, n_train, n_test, seed, out_dir) -> Path:
    """Render train/test splits along disjoint-seed trajectories and persist them.

    Regeneration with identical arguments is byte-identical.
    """
    if n_train < 1 or n_test < 1:
        raise ValueError("split sizes must be >= 1")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    seed = int(seed)
    test_seed = seed ^ _TEST_SEED_XOR

    (out / "train.bin").write_bytes(_render_split(spec, n_train, seed).tobytes())
    (out / "test.bin").write_bytes(_render_split(spec, n_test, test_seed).tobytes())

    manifest = {
        "format_version": _FORMAT_VERSION,
        "obs_dim": OBS_DIM,
        "n_train": int(n_train),
        "n_test": int(n_test),
        "seed": seed,
        "test_seed": test_seed,
        "scene": spec_to_manifest(spec),
    }
    (out / "manifest.json").write_text(
        json.dumps(manifest, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    return out


def _read_split(path: Path, n, obs_dim) -> DatasetSplit:
    raw = np.frombuffer(path.read_bytes(), dtype="<f4")
    expected = n * (obs_dim + 7)
    if raw.size != expected:
        raise ValueError(f"{path.name}: expected {expected} floats, found {raw.size}")
    rows = raw.reshape(n, obs_dim + 7).astype(np.float64)
    quats = rows[:, obs_dim + 3 :]
    rotations = np.stack([rotation_from_quat(q) for q in quats])
    return DatasetSplit(rows[:, :obs_dim], rows[:, obs_dim : obs_dim + 3], rotations)


def load_dataset(directory) -> Dataset:
    """Read a dataset directory written by generate_dataset."""
    root = Path(directory)
    manifest = json.loads((root / "manifest.json").read_text(encoding="utf-8"))
    if manifest.get("format_version") != _FORMAT_VERSION:
        raise ValueError("unsupported dataset format version")
    spec = spec_from_manifest(manifest["scene"])
    obs_dim = int(manifest["obs_dim"])
    train = _read_split(root / "train.bin", int(manifest["n_train"]), obs_dim)
    test = _read_split(root / "test.bin", int(manifest["n_test"]), obs_dim)
    return Dataset(spec, train, test, manifest)
