"""SO(3)/SE(3) primitives: 6D rotation recovery, distances, averaging.

Rotations are plain 3x3 numpy arrays (row-major, float64) throughout.
Unit quaternions (w, x, y, z, w >= 0) appear only as a compact storage
format for datasets; all math happens on matrices.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

ORTHONORMAL_TOL = 1e-6


class RotationRecoveryError(ValueError):
    """6D input violates the Gram-Schmidt precondition (zero or parallel vectors)."""


class DegenerateMeanError(ValueError):
    """Rotation mean is rank-deficient (e.g. antipodal inputs in equal measure)."""


def is_rotation(R, tol=ORTHONORMAL_TOL):
    """True if R has orthonormal columns and det(R) = 1 within tol."""
    R = np.asarray(R, dtype=np.float64)
    if R.shape != (3, 3) or not np.all(np.isfinite(R)):
        return False
    err = np.max(np.abs(R.T @ R - np.eye(3)))
    return err <= tol and abs(np.linalg.det(R) - 1.0) <= tol


def rot_z(angle):
    """Rotation by angle (radians) about the +z axis."""
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def rot_x(angle):
    """Rotation by angle (radians) about the +x axis."""
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(angle):
    """Rotation by angle (radians) about the +y axis."""
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


@dataclass(frozen=True)
class Pose:
    """Rigid transform: camera position t (meters) and orientation R (3x3).

    Columns of R are the camera axes expressed in world coordinates; the
    third column is the viewing direction.
    """

    t: np.ndarray
    R: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.t, dtype=np.float64).reshape(3)
        R = np.asarray(self.R, dtype=np.float64).reshape(3, 3)
        if not np.all(np.isfinite(t)):
            raise ValueError("translation must be finite")
        if not is_rotation(R):
            raise ValueError("R is not a valid rotation matrix")
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "R", R)


@dataclass(frozen=True)
class PoseSampleSet:
    """Ordered Monte Carlo pose samples representing one posterior p(y|x)."""

    translations: np.ndarray  # (M, 3)
    rotations: np.ndarray  # (M, 3, 3)
    seed: int | None = None

    def __post_init__(self):
        t = np.asarray(self.translations, dtype=np.float64)
        R = np.asarray(self.rotations, dtype=np.float64)
        if t.ndim != 2 or t.shape[1] != 3 or R.shape != (t.shape[0], 3, 3):
            raise ValueError("expected translations (M,3) and rotations (M,3,3)")
        if t.shape[0] < 1:
            raise ValueError("sample set must contain at least one pose")
        object.__setattr__(self, "translations", t)
        object.__setattr__(self, "rotations", R)

    def __len__(self):
        return self.translations.shape[0]

    def __getitem__(self, i) -> Pose:
        return Pose(self.translations[i], self.rotations[i])


@dataclass(frozen=True)
class PoseDistanceWeights:
    """Weights balancing translation (1/m scale) and rotation terms."""

    lam_t: float = 5.0
    lam_r: float = 2.0

    def __post_init__(self):
        if not (self.lam_t > 0.0 and self.lam_r > 0.0):
            raise ValueError("pose distance weights must be strictly positive")


def rotation_from_6d(r6):
    """Recover rotation matrices from the continuous 6D representation.

    The first three entries (after normalization) become column 1, the last
    three are orthogonalized against it for column 2, and column 3 is their
    cross product.  Accepts shape (..., 6), returns (..., 3, 3).

    Raises RotationRecoveryError when a 3-vector block is (near) zero or the
    two blocks are (near) parallel.
    """
    u = np.asarray(r6, dtype=np.float64)
    if u.shape[-1] != 6:
        raise ValueError(f"expected trailing dimension 6, got {u.shape}")
    a = u[..., :3]
    b = u[..., 3:]

    na = np.linalg.norm(a, axis=-1, keepdims=True)
    if np.any(na < 1e-12):
        raise RotationRecoveryError("first 3-vector has (near) zero norm")
    a1 = a / na

    w = b - np.sum(a1 * b, axis=-1, keepdims=True) * a1
    nw = np.linalg.norm(w, axis=-1, keepdims=True)
    if np.any(nw < 1e-12):
        raise RotationRecoveryError("6D blocks are (near) parallel")
    a2 = w / nw
    a3 = np.cross(a1, a2)
    return np.stack([a1, a2, a3], axis=-1)


def rotation_from_6d_backward(r6, grad_R):
    """Vector-Jacobian product of rotation_from_6d.

    Given upstream gradients grad_R of shape (..., 3, 3) with respect to the
    recovered matrices, returns gradients of shape (..., 6) with respect to
    the raw 6D inputs.  Reverse-mode through normalize, Gram-Schmidt
    projection and cross product.
    """
    u = np.asarray(r6, dtype=np.float64)
    g = np.asarray(grad_R, dtype=np.float64)
    a = u[..., :3]
    b = u[..., 3:]

    na = np.linalg.norm(a, axis=-1, keepdims=True)
    a1 = a / na
    w = b - np.sum(a1 * b, axis=-1, keepdims=True) * a1
    nw = np.linalg.norm(w, axis=-1, keepdims=True)
    a2 = w / nw

    g1 = g[..., :, 0]
    g2 = g[..., :, 1]
    g3 = g[..., :, 2]

    # a3 = a1 x a2: d/da1 = -[a2]x, d/da2 = [a1]x (transposed for the VJP)
    g1 = g1 + np.cross(a2, g3)
    g2 = g2 + np.cross(g3, a1)

    # a2 = w / |w|
    gw = (g2 - np.sum(g2 * a2, axis=-1, keepdims=True) * a2) / nw

    # w = b - (a1.b) a1
    gb = gw - np.sum(gw * a1, axis=-1, keepdims=True) * a1
    g1 = g1 - np.sum(gw * a1, axis=-1, keepdims=True) * b
    g1 = g1 - np.sum(a1 * b, axis=-1, keepdims=True) * gw

    # a1 = a / |a|
    ga = (g1 - np.sum(g1 * a1, axis=-1, keepdims=True) * a1) / na
    return np.concatenate([ga, gb], axis=-1)


def chordal_distance(Ra, Rb):
    """Frobenius norm ||Ra - Rb||_F; equals 2*sqrt(2)*sin(theta/2)."""
    Ra = np.asarray(Ra, dtype=np.float64)
    Rb = np.asarray(Rb, dtype=np.float64)
    d = Ra - Rb
    return np.sqrt(np.sum(d * d, axis=(-2, -1)))


def geodesic_angle(Ra, Rb):
    """Relative rotation angle in radians, range [0, pi].

    arccos((trace(Ra^T Rb) - 1) / 2) with the argument clamped to [-1, 1]
    for floating-point safety at 0 and pi.
    """
    Ra = np.asarray(Ra, dtype=np.float64)
    Rb = np.asarray(Rb, dtype=np.float64)
    tr = np.einsum("...ij,...ij->...", Ra, Rb)
    return np.arccos(np.clip((tr - 1.0) / 2.0, -1.0, 1.0))


def pose_distance(a: Pose, b: Pose, w: PoseDistanceWeights) -> float:
    """Weighted pose error: lam_t * |t_a - t_b|_2 + lam_r * ||R_a - R_b||_F."""
    return float(
        w.lam_t * np.linalg.norm(a.t - b.t) + w.lam_r * chordal_distance(a.R, b.R)
    )


def pose_distances(translations, rotations, ref: Pose, w: PoseDistanceWeights):
    """pose_distance of each sample in a batch against a single reference."""
    t = np.asarray(translations, dtype=np.float64)
    R = np.asarray(rotations, dtype=np.float64)
    return w.lam_t * np.linalg.norm(t - ref.t, axis=-1) + w.lam_r * chordal_distance(
        R, ref.R
    )


def chordal_l2_mean(rotations):
    """Rotation minimizing the summed squared chordal distance to the inputs.

    Projects the arithmetic mean matrix onto SO(3) via SVD, correcting the
    sign of the smallest singular value so the result is a proper rotation
    (no reflection) even for near-degenerate means.
    """
    Rs = np.asarray(rotations, dtype=np.float64)
    if Rs.ndim == 2:
        Rs = Rs[None]
    if Rs.shape[0] < 1 or Rs.shape[-2:] != (3, 3):
        raise ValueError("expected a nonempty array of 3x3 rotations")
    M = np.mean(Rs, axis=0)
    U, S, Vt = np.linalg.svd(M)
    if S[-1] < 1e-9 and S[1] < 1e-9:
        # Two vanishing singular values: the mean no longer determines a
        # unique nearest rotation (antipodal inputs in equal measure).
        raise DegenerateMeanError("mean rotation matrix is rank-deficient")
    d = np.sign(np.linalg.det(U @ Vt))
    return U @ np.diag([1.0, 1.0, d]) @ Vt


def point_prediction(samples: PoseSampleSet) -> Pose:
    """Collapse a sample set to one pose: mean translation, chordal-L2 mean rotation."""
    t = np.mean(samples.translations, axis=0)
    R = chordal_l2_mean(samples.rotations)
    return Pose(t, R)


def quat_from_rotation(R):
    """Unit quaternion (w, x, y, z) with w >= 0 from a rotation matrix.

    Shepperd's method: pick the largest of the four squared components to
    avoid cancellation.
    """
    R = np.asarray(R, dtype=np.float64)
    tr = R[0, 0] + R[1, 1] + R[2, 2]
    if tr > 0:
        s = np.sqrt(tr + 1.0) * 2.0
        q = np.array(
            [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s]
        )
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2]) * 2.0
        q = np.array(
            [(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s]
        )
    elif R[1, 1] > R[2, 2]:
        s = np.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2]) * 2.0
        q = np.array(
            [(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s]
        )
    else:
        s = np.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1]) * 2.0
        q = np.array(
            [(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s]
        )
    q = q / np.linalg.norm(q)
    if q[0] < 0:
        q = -q
    return q


def rotation_from_quat(q):
    """Rotation matrix from a unit quaternion (w, x, y, z)."""
    q = np.asarray(q, dtype=np.float64)
    w, x, y, z = q / np.linalg.norm(q)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )
