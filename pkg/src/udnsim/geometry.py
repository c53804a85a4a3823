"""Shared geometry helpers: rotations, angle wrapping, bearings.

Conventions used throughout the package:
  - world frame: x east, y north, z up, metres
  - azimuth: angle in the x-y plane measured from +x toward +y, wrapped to (-pi, pi]
  - elevation: polar angle from the +z axis, in [0, pi] (pi/2 is the horizon)
"""

from __future__ import annotations

import numpy as np

TWO_PI = 2.0 * np.pi


def wrap_angle(a):
    """Wrap angle(s) to (-pi, pi]."""
    w = np.mod(np.asarray(a) + np.pi, TWO_PI) - np.pi
    w = np.where(w == -np.pi, np.pi, w)
    if np.isscalar(a):
        return float(w)
    return w


def rot_x(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def euler_to_rotmat(yaw: float, pitch: float, roll: float) -> np.ndarray:
    """World-from-frame rotation, R = Rz(yaw) @ Ry(pitch) @ Rx(roll).

    Columns are the frame's basis vectors expressed in world coordinates;
    ``R @ v_frame`` maps a frame vector to world, ``R.T @ v_world`` the inverse.
    """
    return rot_z(yaw) @ rot_y(pitch) @ rot_x(roll)


def angles_to_direction(azimuth, elevation):
    """Unit vector(s) pointing toward (azimuth, elevation). Broadcasts."""
    se = np.sin(elevation)
    return np.stack(
        [se * np.cos(azimuth), se * np.sin(azimuth), np.cos(elevation) * np.ones_like(azimuth)],
        axis=-1,
    )


def direction_to_angles(u):
    """Inverse of :func:`angles_to_direction` for unit or non-unit vectors."""
    u = np.asarray(u, dtype=float)
    r = np.linalg.norm(u, axis=-1)
    az = np.arctan2(u[..., 1], u[..., 0])
    el = np.arccos(np.clip(u[..., 2] / np.where(r == 0.0, 1.0, r), -1.0, 1.0))
    return az, el


def bearing_in_frame(p_from, p_to, rotmat=None):
    """Azimuth/elevation of ``p_to`` as seen from ``p_from`` in a local frame.

    ``rotmat`` is the world-from-frame rotation of the observer; identity if None.
    Raises ValueError for coincident points.
    """
    d = np.asarray(p_to, dtype=float) - np.asarray(p_from, dtype=float)
    dist = float(np.linalg.norm(d))
    if dist == 0.0:
        raise ValueError("coincident positions have no bearing")
    if rotmat is not None:
        d = rotmat.T @ d
    az, el = direction_to_angles(d)
    return float(az), float(el), dist
