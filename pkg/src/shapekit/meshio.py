"""Minimal ASCII OBJ read/write for triangle meshes."""

from __future__ import annotations

import os

import numpy as np


def save_obj(path: str | os.PathLike, vertices: np.ndarray, faces: np.ndarray | None = None) -> None:
    """Write vertices (and optional triangle faces) as ASCII OBJ."""
    vertices = np.asarray(vertices, dtype=np.float64)
    if vertices.ndim != 2 or vertices.shape[1] != 3:
        raise ValueError(f"vertices must be (K,3), got {vertices.shape}")
    with open(path, "w", encoding="utf-8") as fh:
        for v in vertices:
            fh.write(f"v {v[0]:.9g} {v[1]:.9g} {v[2]:.9g}\n")
        if faces is not None:
            faces = np.asarray(faces, dtype=np.int64)
            if faces.ndim != 2 or faces.shape[1] != 3:
                raise ValueError(f"faces must be (F,3), got {faces.shape}")
            for f in faces:
                fh.write(f"f {f[0] + 1} {f[1] + 1} {f[2] + 1}\n")


def load_obj(path: str | os.PathLike) -> tuple[np.ndarray, np.ndarray]:
    """Read an ASCII OBJ; returns (vertices (K,3), faces (F,3) zero-based)."""
    vertices: list[list[float]] = []
    faces: list[list[int]] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            if parts[0] == "v":
                if len(parts) < 4:
                    raise ValueError(f"{path!s}:{lineno}: vertex line needs 3 coordinates")
                vertices.append([float(parts[1]), float(parts[2]), float(parts[3])])
            elif parts[0] == "f":
                if len(parts) != 4:
                    raise ValueError(f"{path!s}:{lineno}: only triangle faces are supported")
                faces.append([int(tok.split("/")[0]) - 1 for tok in parts[1:]])
    verts = np.asarray(vertices, dtype=np.float64).reshape(-1, 3)
    face_arr = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
    if face_arr.size and (face_arr.min() < 0 or face_arr.max() >= len(verts)):
        raise ValueError(f"{path!s}: face index out of range")
    return verts, face_arr
