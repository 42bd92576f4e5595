"""SO(3) exponential/logarithm maps and their Jacobians.

Rotations are plain 3x3 float64 arrays. Tangent vectors are length-3 arrays
in radians. Perturbations throughout the stack are applied on the right,
R <- R @ so3_exp(dphi).
"""

import math

import numpy as np

_SMALL_ANGLE = 1e-8
_NEAR_PI = 1e-3


def skew(v: np.ndarray) -> np.ndarray:
    """Cross-product matrix, skew(a) @ b == np.cross(a, b)."""
    x, y, z = np.asarray(v, dtype=float).reshape(3)
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def vee(m: np.ndarray) -> np.ndarray:
    return np.array([m[2, 1], m[0, 2], m[1, 0]], dtype=float)


def so3_exp(omega: np.ndarray) -> np.ndarray:
    """Rodrigues formula, second-order Taylor expansion near the identity."""
    w = np.asarray(omega, dtype=float).reshape(3)
    theta = math.sqrt(float(w @ w))
    wx = skew(w)
    if theta < _SMALL_ANGLE:
        return np.eye(3) + wx + 0.5 * (wx @ wx)
    a = math.sin(theta) / theta
    b = (1.0 - math.cos(theta)) / (theta * theta)
    return np.eye(3) + a * wx + b * (wx @ wx)


def so3_log(rotation: np.ndarray) -> np.ndarray:
    """Principal logarithm, norm <= pi.

    The angle comes from atan2 of the antisymmetric and symmetric parts,
    which stays well conditioned over the whole range. Within 1e-3 of pi
    the axis is taken from the largest diagonal entry of the symmetric part.
    """
    r = np.asarray(rotation, dtype=float)
    cos_theta = min(1.0, max(-1.0, 0.5 * (float(np.trace(r)) - 1.0)))
    s_vec = 0.5 * vee(r - r.T)
    sin_theta = float(np.linalg.norm(s_vec))
    theta = math.atan2(sin_theta, cos_theta)

    if theta < _SMALL_ANGLE:
        return s_vec
    if math.pi - theta < _NEAR_PI:
        sym = 0.5 * (r + r.T) - cos_theta * np.eye(3)
        sym /= 1.0 - cos_theta
        k = int(np.argmax(np.diag(sym)))
        axis = sym[:, k] / math.sqrt(max(sym[k, k], 1e-300))
        axis /= np.linalg.norm(axis)
        if axis @ s_vec < 0.0:
            axis = -axis
        return theta * axis
    return (theta / sin_theta) * s_vec


def right_jacobian(phi: np.ndarray) -> np.ndarray:
    """Jr(phi) with Exp(phi + d) ~= Exp(phi) Exp(Jr(phi) d)."""
    w = np.asarray(phi, dtype=float).reshape(3)
    theta = math.sqrt(float(w @ w))
    wx = skew(w)
    if theta < 1e-5:
        return np.eye(3) - 0.5 * wx + (wx @ wx) / 6.0
    t2 = theta * theta
    return (
        np.eye(3)
        - ((1.0 - math.cos(theta)) / t2) * wx
        + ((theta - math.sin(theta)) / (t2 * theta)) * (wx @ wx)
    )


def right_jacobian_inv(phi: np.ndarray) -> np.ndarray:
    w = np.asarray(phi, dtype=float).reshape(3)
    theta = math.sqrt(float(w @ w))
    wx = skew(w)
    if theta < 1e-5:
        return np.eye(3) + 0.5 * wx + (wx @ wx) / 12.0
    coeff = 1.0 / (theta * theta) - (1.0 + math.cos(theta)) / (2.0 * theta * math.sin(theta))
    return np.eye(3) + 0.5 * wx + coeff * (wx @ wx)


def left_jacobian(phi: np.ndarray) -> np.ndarray:
    """Jl(phi) = Jr(-phi); also the integral of Exp(t*phi) over t in [0, 1]."""
    return right_jacobian(-np.asarray(phi, dtype=float))


def normalize_rotation(rotation: np.ndarray) -> np.ndarray:
    """Closest rotation matrix in the Frobenius sense."""
    u, _, vt = np.linalg.svd(np.asarray(rotation, dtype=float))
    r = u @ vt
    if np.linalg.det(r) < 0.0:
        u[:, -1] *= -1.0
        r = u @ vt
    return r


def is_rotation(rotation: np.ndarray, tol: float = 1e-9) -> bool:
    r = np.asarray(rotation, dtype=float)
    if r.shape != (3, 3) or not np.all(np.isfinite(r)):
        return False
    return bool(
        np.allclose(r.T @ r, np.eye(3), atol=tol) and abs(np.linalg.det(r) - 1.0) < tol
    )


def rotation_angle(rotation: np.ndarray) -> float:
    return float(np.linalg.norm(so3_log(rotation)))
