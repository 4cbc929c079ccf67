"""Pure-numpy width kernels (reference implementation and fallback backend).

The width of a vertex is its perpendicular distance to the infinite line
through its part's central bone; a degenerate bone (length < 1e-9) falls back
to the distance to the bone's first joint.
"""

from __future__ import annotations

import numpy as np

_DEGENERATE_SQ = 1e-18  # squared bone-length threshold (1e-9 squared)


def _geometry(mesh, joints, bone_a, bone_b, part):
    a_idx = bone_a[part]
    b_idx = bone_b[part]
    a = joints[a_idx]
    b = joints[b_idx]
    d = b - a
    dd = np.einsum("kd,kd->k", d, d)
    u = mesh - a
    safe = np.where(dd < _DEGENERATE_SQ, 1.0, dd)
    t = np.where(dd < _DEGENERATE_SQ, 0.0, np.einsum("kd,kd->k", u, d) / safe)
    r = u - t[:, None] * d
    w = np.sqrt(np.einsum("kd,kd->k", r, r))
    return a_idx, b_idx, t, r, w


def widths(mesh, joints, bone_a, bone_b, part):
    """Per-vertex width (K,) of ``mesh`` against the part bones of ``joints``."""
    mesh = np.ascontiguousarray(mesh, dtype=np.float64)
    joints = np.ascontiguousarray(joints, dtype=np.float64)
    _, _, _, _, w = _geometry(mesh, joints, bone_a, bone_b, part)
    return w


def widths_backward(mesh, joints, bone_a, bone_b, part, grad_w):
    """Back-propagate d(loss)/d(width) to the mesh and joints.

    Returns ``(grad_mesh (K,3), grad_joints (J,3))``. A vertex lying exactly
    on its bone line has no defined direction; its gradient is taken as zero.
    """
    mesh = np.ascontiguousarray(mesh, dtype=np.float64)
    joints = np.ascontiguousarray(joints, dtype=np.float64)
    grad_w = np.ascontiguousarray(grad_w, dtype=np.float64)
    a_idx, b_idx, t, r, w = _geometry(mesh, joints, bone_a, bone_b, part)
    rhat = np.where(w[:, None] > 0.0, r / np.where(w == 0.0, 1.0, w)[:, None], 0.0)
    grad_mesh = grad_w[:, None] * rhat
    grad_joints = np.zeros_like(joints)
    np.add.at(grad_joints, a_idx, grad_mesh * (t - 1.0)[:, None])
    np.add.at(grad_joints, b_idx, grad_mesh * (-t)[:, None])
    return grad_mesh, grad_joints
