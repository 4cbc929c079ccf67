# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled width kernels; mirrors _geom_np semantics exactly."""

import numpy as np

cimport numpy as cnp
from libc.math cimport sqrt

cnp.import_array()

DEF DEGENERATE_SQ = 1e-18


def widths(mesh, joints, bone_a, bone_b, part):
    """Per-vertex width (K,) of ``mesh`` against the part bones of ``joints``."""
    cdef const double[:, ::1] m = np.ascontiguousarray(mesh, dtype=np.float64)
    cdef const double[:, ::1] x = np.ascontiguousarray(joints, dtype=np.float64)
    cdef const long long[::1] ba = np.ascontiguousarray(bone_a, dtype=np.int64)
    cdef const long long[::1] bb = np.ascontiguousarray(bone_b, dtype=np.int64)
    cdef const long long[::1] pt = np.ascontiguousarray(part, dtype=np.int64)
    cdef Py_ssize_t k = m.shape[0]
    out_arr = np.empty(k, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t i
    cdef long long p, a, b
    cdef double dx, dy, dz, ux, uy, uz, dd, t, rx, ry, rz
    for i in range(k):
        p = pt[i]
        a = ba[p]
        b = bb[p]
        dx = x[b, 0] - x[a, 0]
        dy = x[b, 1] - x[a, 1]
        dz = x[b, 2] - x[a, 2]
        ux = m[i, 0] - x[a, 0]
        uy = m[i, 1] - x[a, 1]
        uz = m[i, 2] - x[a, 2]
        dd = dx * dx + dy * dy + dz * dz
        if dd < DEGENERATE_SQ:
            t = 0.0
        else:
            t = (ux * dx + uy * dy + uz * dz) / dd
        rx = ux - t * dx
        ry = uy - t * dy
        rz = uz - t * dz
        out[i] = sqrt(rx * rx + ry * ry + rz * rz)
    return out_arr


def widths_backward(mesh, joints, bone_a, bone_b, part, grad_w):
    """Back-propagate d(loss)/d(width); returns (grad_mesh (K,3), grad_joints (J,3))."""
    cdef const double[:, ::1] m = np.ascontiguousarray(mesh, dtype=np.float64)
    cdef const double[:, ::1] x = np.ascontiguousarray(joints, dtype=np.float64)
    cdef const long long[::1] ba = np.ascontiguousarray(bone_a, dtype=np.int64)
    cdef const long long[::1] bb = np.ascontiguousarray(bone_b, dtype=np.int64)
    cdef const long long[::1] pt = np.ascontiguousarray(part, dtype=np.int64)
    cdef const double[::1] gw = np.ascontiguousarray(grad_w, dtype=np.float64)
    cdef Py_ssize_t k = m.shape[0]
    gm_arr = np.zeros((k, 3), dtype=np.float64)
    gj_arr = np.zeros((x.shape[0], 3), dtype=np.float64)
    cdef double[:, ::1] gm = gm_arr
    cdef double[:, ::1] gj = gj_arr
    cdef Py_ssize_t i
    cdef long long p, a, b
    cdef double dx, dy, dz, ux, uy, uz, dd, t, rx, ry, rz, w, g, cx, cy, cz
    for i in range(k):
        p = pt[i]
        a = ba[p]
        b = bb[p]
        dx = x[b, 0] - x[a, 0]
        dy = x[b, 1] - x[a, 1]
        dz = x[b, 2] - x[a, 2]
        ux = m[i, 0] - x[a, 0]
        uy = m[i, 1] - x[a, 1]
        uz = m[i, 2] - x[a, 2]
        dd = dx * dx + dy * dy + dz * dz
        if dd < DEGENERATE_SQ:
            t = 0.0
        else:
            t = (ux * dx + uy * dy + uz * dz) / dd
        rx = ux - t * dx
        ry = uy - t * dy
        rz = uz - t * dz
        w = sqrt(rx * rx + ry * ry + rz * rz)
        if w <= 0.0:
            continue
        g = gw[i] / w
        cx = g * rx
        cy = g * ry
        cz = g * rz
        gm[i, 0] = cx
        gm[i, 1] = cy
        gm[i, 2] = cz
        gj[a, 0] += cx * (t - 1.0)
        gj[a, 1] += cy * (t - 1.0)
        gj[a, 2] += cz * (t - 1.0)
        gj[b, 0] += cx * (-t)
        gj[b, 1] += cy * (-t)
        gj[b, 2] += cz * (-t)
    return gm_arr, gj_arr
