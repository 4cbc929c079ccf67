"""Closed-form cross-model shape conversion.

Given surface sample points regressed from a source mesh and a destination
body model with its own point regressor, solve for the destination shape
coefficients and a translation by linear least squares over the stacked
3p-row system, with a tiny ridge for conditioning.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse

from .errors import RankDeficientError
from .model_core import BodyModel

DEFAULT_RIDGE = 1e-10
CONDITION_LIMIT = 1e12


@dataclass(frozen=True)
class PointRegressor:
    """Sparse p x K matrix mapping mesh vertices to surface sample points."""

    matrix: scipy.sparse.csr_matrix

    def __post_init__(self):
        m = self.matrix
        if m.ndim != 2:
            raise ValueError("regressor must be a 2D matrix")
        if not np.all(np.isfinite(m.data)):
            raise ValueError("regressor contains non-finite entries")
        row_nnz = np.diff(m.indptr)
        empty = np.flatnonzero(row_nnz == 0)
        if empty.size:
            raise ValueError(f"regressor row {int(empty[0])} has no nonzero entries")

    @property
    def p(self) -> int:
        return self.matrix.shape[0]

    @property
    def num_vertices(self) -> int:
        return self.matrix.shape[1]

    def apply(self, mesh: np.ndarray) -> np.ndarray:
        return self.matrix @ np.asarray(mesh, dtype=np.float64)

    @staticmethod
    def from_dense(mat) -> "PointRegressor":
        return PointRegressor(scipy.sparse.csr_matrix(np.asarray(mat, dtype=np.float64)))


def save_triplets(reg: PointRegressor, path: str | os.PathLike) -> None:
    """Write 'row col value' lines sorted by (row, col); deterministic bytes."""
    coo = reg.matrix.tocoo()
    order = np.lexsort((coo.col, coo.row))
    with open(path, "w", encoding="utf-8") as fh:
        for i in order:
            fh.write(f"{int(coo.row[i])} {int(coo.col[i])} {coo.data[i]:.17g}\n")


def load_triplets(
    path: str | os.PathLike, num_rows: int | None = None, num_cols: int | None = None
) -> PointRegressor:
    """Read a 'row col value' text file; dimensions default to the max index + 1."""
    rows, cols, vals = [], [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 3:
                raise ValueError(f"{path!s}:{lineno}: expected 'row col value', got {line!r}")
            rows.append(int(parts[0]))
            cols.append(int(parts[1]))
            vals.append(float(parts[2]))
    if not rows:
        raise ValueError(f"{path!s} holds no triplets")
    shape = (
        num_rows if num_rows is not None else max(rows) + 1,
        num_cols if num_cols is not None else max(cols) + 1,
    )
    matrix = scipy.sparse.coo_matrix((vals, (rows, cols)), shape=shape).tocsr()
    return PointRegressor(matrix)


@dataclass(frozen=True)
class ConversionResult:
    """Destination coefficients plus alignment diagnostics.

    ``translation`` is the offset of the source samples relative to the
    fitted destination samples: regressed(mesh(beta_dst)) + translation
    best matches the source points.
    """

    beta_dst: np.ndarray
    translation: np.ndarray
    residual_rms: float
    gram_condition: float

    def to_json_dict(self) -> dict:
        return {
            "beta": [float(v) for v in self.beta_dst],
            "t": [float(v) for v in self.translation],
            "residual_rms": float(self.residual_rms),
            "gram_condition": float(self.gram_condition),
        }

    def save(self, path: str | os.PathLike) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def build_system(
    src_mesh: np.ndarray, h_src: PointRegressor, dst_model: BodyModel, h_dst: PointRegressor
) -> tuple[np.ndarray, np.ndarray]:
    """Stacked least-squares system (A, b) for the conversion fit.

    A's left block maps destination coefficients to sample-point
    displacements; the right block holds one negated 3x3 identity per sample
    for the translation unknown. b is the flattened gap between the
    regressed source points and the destination template's points.
    """
    src_mesh = np.asarray(src_mesh, dtype=np.float64)
    if src_mesh.ndim != 2 or src_mesh.shape[1] != 3:
        raise ValueError(f"source mesh must be (K,3), got {src_mesh.shape}")
    if h_src.num_vertices != src_mesh.shape[0]:
        raise ValueError(
            f"source regressor expects {h_src.num_vertices} vertices, mesh has {src_mesh.shape[0]}"
        )
    if h_dst.num_vertices != dst_model.num_vertices:
        raise ValueError(
            f"destination regressor expects {h_dst.num_vertices} vertices, "
            f"model has {dst_model.num_vertices}"
        )
    if h_src.p != h_dst.p:
        raise ValueError(f"regressors disagree on sample count: {h_src.p} vs {h_dst.p}")
    p = h_dst.p
    s = dst_model.num_coeffs
    if 3 * p < s + 3:
        raise ValueError(f"underdetermined system: 3p = {3 * p} < s + 3 = {s + 3}")
    n = dst_model.num_vertices
    basis_points = h_dst.matrix @ dst_model.shape_basis.reshape(n, 3 * s)
    a = np.empty((3 * p, s + 3))
    a[:, :s] = basis_points.reshape(p, 3, s).reshape(3 * p, s)
    a[:, s:] = np.tile(-np.eye(3), (p, 1))
    b = (h_src.apply(src_mesh) - h_dst.apply(dst_model.template_vertices)).ravel()
    return a, b


def cross_model_fit(
    src_mesh: np.ndarray,
    h_src: PointRegressor,
    dst_model: BodyModel,
    h_dst: PointRegressor,
    ridge: float = DEFAULT_RIDGE,
) -> ConversionResult:
    """Fit destination shape coefficients and translation to source sample points.

    Solves the normal equations of the stacked system with a tiny ridge.
    Raises RankDeficientError when the Gram matrix condition exceeds 1e12
    (degenerate sample set).
    """
    a, b = build_system(src_mesh, h_src, dst_model, h_dst)
    s = dst_model.num_coeffs
    gram = a.T @ a
    condition = float(np.linalg.cond(gram))
    if condition > CONDITION_LIMIT:
        raise RankDeficientError(condition)
    xi = scipy.linalg.cho_solve(
        scipy.linalg.cho_factor(gram + ridge * np.eye(s + 3)), a.T @ b
    )
    residual = a @ xi - b
    rms = float(np.sqrt(np.mean(residual * residual)))
    return ConversionResult(
        beta_dst=xi[:s],
        translation=-xi[s:],
        residual_rms=rms,
        gram_condition=condition,
    )
