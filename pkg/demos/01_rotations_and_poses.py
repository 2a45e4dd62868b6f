"""Tour of the SO(3)/SE(3) primitives.

Run:  python3 demos/01_rotations_and_poses.py
"""

import numpy as np

from ambipose import (
    Pose,
    PoseDistanceWeights,
    chordal_distance,
    chordal_l2_mean,
    geodesic_angle,
    pose_distance,
    rotation_from_6d,
)
from ambipose.geometry import rot_z

# --- Recovering rotations from the continuous 6D representation ------------
# Any two non-parallel 3-vectors define a rotation: the first is normalized,
# the second is orthogonalized against it, the third column is their cross
# product.  Networks can therefore regress rotations without worrying about
# orthonormality.

r6 = np.array([2.0, 0.0, 0.0, 3.0, 5.0, 0.0])
R = rotation_from_6d(r6)
print("6D input      :", r6)
print("recovered R   :\n", np.round(R, 6))
print("orthonormality:", np.max(np.abs(R.T @ R - np.eye(3))))

# --- Distances --------------------------------------------------------------
# The chordal distance ||Ra - Rb||_F relates to the geodesic angle theta by
# 2*sqrt(2)*sin(theta/2); it is smooth at the antipode, which is why the
# training loss uses it instead of the angle itself.

a, b = rot_z(0.0), rot_z(np.pi / 2)
print("\nchordal(I, Rz90)  =", chordal_distance(a, b))
print("geodesic(I, Rz90) =", np.degrees(geodesic_angle(a, b)), "deg")

w = PoseDistanceWeights(lam_t=5.0, lam_r=2.0)
p1 = Pose([0.0, 0.0, 0.0], a)
p2 = Pose([0.1, 0.0, 0.0], b)
print("pose distance      =", pose_distance(p1, p2, w))

# --- Averaging rotations ----------------------------------------------------
# The chordal L2 mean projects the arithmetic mean matrix back onto SO(3);
# for single-axis inputs it lands exactly between them.

mean = chordal_l2_mean([rot_z(np.deg2rad(10)), rot_z(np.deg2rad(20)), rot_z(np.deg2rad(30))])
print("\nmean of Rz(10,20,30) -> yaw:", np.degrees(np.arctan2(mean[1, 0], mean[0, 0])), "deg")
