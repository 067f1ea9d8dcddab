"""Planar poses ``(x, y, yaw, c)`` and the frames they induce.

The fourth coordinate ``c`` is a discrete-valued channel: gripper closure for
the robot, standing/lying flag for objects. Frames translate it like any
other coordinate so that relative flags show up in local observations.
"""
import numpy as np

from .gauss import Frame

POSE_DIM = 4
YAW = 2
ANGLE_DIMS = (YAW,)
ANGLE_MASK = np.array([False, False, True, False])
CONTINUOUS = np.array([True, True, True, False])


def wrap(a):
    """Wrap angles to (-pi, pi]."""
    return a - 2.0 * np.pi * np.ceil((np.asarray(a, dtype=float) - np.pi) / (2.0 * np.pi))


def frame_matrix(yaw: float) -> np.ndarray:
    c, s = np.cos(yaw), np.sin(yaw)
    A = np.eye(POSE_DIM)
    A[0, 0], A[0, 1], A[1, 0], A[1, 1] = c, -s, s, c
    return A


def pose_frame(pose) -> Frame:
    pose = np.asarray(pose, dtype=float)
    return Frame(frame_matrix(pose[YAW]), pose.copy())


def frame_arrays(poses):
    """Stacked ``(A, b)`` arrays for a list of poses (kernel input format)."""
    poses = np.asarray(poses, dtype=float).reshape(-1, POSE_DIM)
    As = np.stack([frame_matrix(p[YAW]) for p in poses])
    return As, poses.copy()


def to_local(x, pose) -> np.ndarray:
    """Express global pose ``x`` in the frame of ``pose`` (yaw wrapped)."""
    x = np.asarray(x, dtype=float)
    pose = np.asarray(pose, dtype=float)
    d = x - pose
    c, s = np.cos(pose[YAW]), np.sin(pose[YAW])
    out = d.copy()
    out[0] = c * d[0] + s * d[1]
    out[1] = -s * d[0] + c * d[1]
    out[YAW] = wrap(d[YAW])
    return out


def to_global(x_local, pose) -> np.ndarray:
    out = pose_frame(pose).to_global(x_local)
    out[YAW] = wrap(out[YAW])
    return out


def align_angles(x, ref, angle_dims=ANGLE_DIMS) -> np.ndarray:
    """Shift angle coordinates of ``x`` by multiples of 2*pi to sit nearest ``ref``."""
    x = np.array(x, dtype=float)
    for i in angle_dims:
        x[..., i] = ref[..., i] + wrap(x[..., i] - ref[..., i])
    return x


def normalize_pose(x) -> np.ndarray:
    x = np.array(x, dtype=float)
    x[YAW] = wrap(x[YAW])
    return x
