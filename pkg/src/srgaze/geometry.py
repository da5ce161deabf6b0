"""Gaze geometry: pitch/yaw angles, 3D direction vectors, angular error."""

import numpy as np

PITCH_LIMIT = np.pi / 2
YAW_LIMIT = np.pi


def _check_angles(angles, name="angles"):
    a = np.asarray(angles, dtype=np.float64)
    if a.shape[-1] != 2:
        raise ValueError(f"{name}: expected (..., 2) pitch/yaw array, got shape {a.shape}")
    pitch, yaw = a[..., 0], a[..., 1]
    if np.any(np.abs(pitch) > PITCH_LIMIT) or np.any(np.abs(yaw) > YAW_LIMIT):
        raise ValueError(f"{name}: pitch must lie in [-pi/2, pi/2] and yaw in [-pi, pi]")
    return a


def pitchyaw_to_vector(angles):
    """Convert (..., 2) pitch/yaw radians to unit 3D direction vectors.

    Convention: (0, 0) looks along -z (toward the camera);
    returns (-cos(p)*sin(y), -sin(p), -cos(p)*cos(y)).
    """
    a = _check_angles(angles)
    pitch, yaw = a[..., 0], a[..., 1]
    cp = np.cos(pitch)
    v = np.stack([-cp * np.sin(yaw), -np.sin(pitch), -cp * np.cos(yaw)], axis=-1)
    return v


def vector_to_pitchyaw(vectors):
    """Invert pitchyaw_to_vector. Input must be unit-norm within 1e-4."""
    v = np.asarray(vectors, dtype=np.float64)
    if v.shape[-1] != 3:
        raise ValueError(f"expected (..., 3) vectors, got shape {v.shape}")
    norm = np.linalg.norm(v, axis=-1)
    if np.any(norm < 1e-8):
        raise ValueError("zero vector has no direction")
    if np.any(np.abs(norm - 1.0) > 1e-4):
        raise ValueError("vectors must be unit norm within 1e-4")
    v = v / norm[..., None]
    pitch = np.arcsin(np.clip(-v[..., 1], -1.0, 1.0))
    yaw = np.arctan2(-v[..., 0], -v[..., 2])
    return np.stack([pitch, yaw], axis=-1)


def angular_error_deg(a, b):
    """Angle in degrees between the gaze directions of two pitch/yaw pairs."""
    va = pitchyaw_to_vector(_check_angles(a, "a"))
    vb = pitchyaw_to_vector(_check_angles(b, "b"))
    dot = np.sum(va * vb, axis=-1)
    cross = np.linalg.norm(np.cross(va, vb), axis=-1)
    # atan2 form of arccos(clamp(dot, -1, 1)): identical value, but exact at
    # identity and stable near parallel/antiparallel vectors
    return np.degrees(np.arctan2(cross, dot))


def mean_angular_error(pred, gt):
    """Mean pairwise angular error (degrees) over two equal-length angle lists."""
    p = np.asarray(pred, dtype=np.float64)
    g = np.asarray(gt, dtype=np.float64)
    if p.ndim != 2 or g.ndim != 2:
        raise ValueError("expected (N, 2) arrays of pitch/yaw")
    if len(p) == 0:
        raise ValueError("empty prediction list")
    if p.shape != g.shape:
        raise ValueError(f"length mismatch: {p.shape} vs {g.shape}")
    return float(np.mean(angular_error_deg(p, g)))
