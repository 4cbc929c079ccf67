"""Part decomposition and the bone-length / slice-width shape descriptor.

Every vertex belongs to the part with its strongest blend weight. Each part
owns a central bone (parent joint -> joint; the root part borrows the bone to
its first child). Parts are cut into ``n`` equal slices along the bone, with
each vertex's slice fixed once from the template mesh; a mesh's descriptor is
its bone lengths plus the mean vertex-to-bone distance over every slice cell.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import EmptySliceError
from .model_core import BodyModel, regress_joints

_SLICE_EPS = 1e-9
_DEGENERATE_SQ = 1e-18


@dataclass(frozen=True)
class PartDecomposition:
    """Static structure tying a model to its parts and slice cells.

    ``bone_of_part[j]`` is the (joint_a, joint_b) central bone of part j;
    ``slice_of_vertex`` is the template-mesh binning of each vertex into
    [0, n); ``template_widths[j, i]`` is the template's mean width of cell
    (j, i) — the denominators of the analytical broadening step.
    """

    n: int
    part_of_vertex: np.ndarray  # (K,)
    bone_of_part: np.ndarray  # (J, 2)
    slice_of_vertex: np.ndarray  # (K,)
    template_widths: np.ndarray  # (J, n)
    cell_counts: np.ndarray  # (J, n)
    template_bone_param: np.ndarray  # (K,) unclamped template projection parameter

    @property
    def num_parts(self) -> int:
        return self.bone_of_part.shape[0]

    @property
    def bone_a(self) -> np.ndarray:
        return self.bone_of_part[:, 0]

    @property
    def bone_b(self) -> np.ndarray:
        return self.bone_of_part[:, 1]


def bone_parameters(
    mesh: np.ndarray, joints: np.ndarray, bone_a: np.ndarray, bone_b: np.ndarray, part: np.ndarray
) -> np.ndarray:
    """Unclamped normalized projection (K,) of each vertex onto its part's bone.

    Degenerate bones (length < 1e-9) give parameter 0.
    """
    a = joints[bone_a[part]]
    b = joints[bone_b[part]]
    d = b - a
    dd = np.einsum("kd,kd->k", d, d)
    safe = np.where(dd < _DEGENERATE_SQ, 1.0, dd)
    t = np.einsum("kd,kd->k", np.asarray(mesh, dtype=np.float64) - a, d) / safe
    return np.where(dd < _DEGENERATE_SQ, 0.0, t)


def slice_indices(t: np.ndarray, n: int) -> np.ndarray:
    """Slice index per vertex: floor(n * t) with t clamped into [0, 1 - 1e-9]."""
    clamped = np.clip(t, 0.0, 1.0 - _SLICE_EPS)
    return np.floor(n * clamped).astype(np.int64)


def build_decomposition(model: BodyModel, n: int) -> PartDecomposition:
    """Segment the model into parts and fix the n-slice binning from its template.

    Part assignment is the blend-weight argmax (ties to the lowest joint
    index). Raises EmptySliceError if some (part, slice) cell holds no
    vertices — the chosen n is too fine for this model.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    part = np.argmax(model.blend_weights, axis=1).astype(np.int64)
    j = model.num_joints
    root = model.root
    bone = np.empty((j, 2), dtype=np.int64)
    for joint in range(j):
        if joint == root:
            bone[joint] = (root, model.first_child_of_root())
        else:
            bone[joint] = (model.parents[joint], joint)

    template = model.template_vertices
    joints = regress_joints(model, template)
    t = bone_parameters(template, joints, bone[:, 0], bone[:, 1], part)
    sl = slice_indices(t, n)
    counts = np.bincount(part * n + sl, minlength=j * n).reshape(j, n)
    empties = np.argwhere(counts == 0)
    if empties.size:
        bad_part, bad_slice = (int(v) for v in empties[0])
        raise EmptySliceError(bad_part, bad_slice)

    w = kernels.widths(template, joints, bone[:, 0], bone[:, 1], part)
    sums = np.bincount(part * n + sl, weights=w, minlength=j * n)
    template_widths = (sums / counts.ravel()).reshape(j, n)
    if np.any(template_widths <= 0.0):
        bad_part, bad_slice = (int(v) for v in np.argwhere(template_widths <= 0.0)[0])
        raise ValueError(
            f"template width of part {bad_part}, slice {bad_slice} is zero; "
            "widths cannot be rescaled on this model"
        )
    return PartDecomposition(
        n=n,
        part_of_vertex=part,
        bone_of_part=bone,
        slice_of_vertex=sl,
        template_widths=template_widths,
        cell_counts=counts,
        template_bone_param=t,
    )


def vertex_width(mesh: np.ndarray, joints: np.ndarray, decomp: PartDecomposition, k: int) -> float:
    """Perpendicular distance of vertex k to the infinite line of its part's bone.

    A degenerate bone (length < 1e-9) falls back to the distance to the
    bone's first joint.
    """
    mesh = np.asarray(mesh, dtype=np.float64)
    joints = np.asarray(joints, dtype=np.float64)
    part = int(decomp.part_of_vertex[k])
    a = joints[decomp.bone_of_part[part, 0]]
    b = joints[decomp.bone_of_part[part, 1]]
    p = mesh[k]
    d = b - a
    dd = float(d @ d)
    if dd < _DEGENERATE_SQ:
        return float(np.linalg.norm(p - a))
    t = float((p - a) @ d) / dd
    return float(np.linalg.norm(p - a - t * d))


def vertex_widths(decomp: PartDecomposition, mesh: np.ndarray, joints: np.ndarray) -> np.ndarray:
    """All K widths at once, through the active geometry kernel backend."""
    return kernels.widths(
        np.asarray(mesh, dtype=np.float64),
        np.asarray(joints, dtype=np.float64),
        decomp.bone_a,
        decomp.bone_b,
        decomp.part_of_vertex,
    )


def slice_mean_widths(decomp: PartDecomposition, w: np.ndarray) -> np.ndarray:
    """Mean of per-vertex widths over each fixed (part, slice) cell -> (J, n)."""
    j, n = decomp.cell_counts.shape
    sums = np.bincount(
        decomp.part_of_vertex * n + decomp.slice_of_vertex, weights=w, minlength=j * n
    )
    return (sums / decomp.cell_counts.ravel()).reshape(j, n)


def bone_lengths(model: BodyModel, joints: np.ndarray) -> np.ndarray:
    """Lengths (J-1,) of the bones (parents[j], j), one per non-root joint in index order."""
    non_root = np.flatnonzero(model.parents != -1)
    return np.linalg.norm(joints[non_root] - joints[model.parents[non_root]], axis=1)


def non_root_joints(model: BodyModel) -> np.ndarray:
    """Joint indices owning a bone-length entry, in descriptor order."""
    return np.flatnonzero(model.parents != -1)


def part_target_lengths(model: BodyModel, decomp: PartDecomposition, lengths: np.ndarray) -> np.ndarray:
    """Map a (J-1,) bone-length vector onto parts: each part's central-bone length.

    The root part shares its first child's bone length.
    """
    slot = np.full(model.num_joints, -1, dtype=np.int64)
    slot[non_root_joints(model)] = np.arange(model.num_joints - 1)
    return np.asarray(lengths, dtype=np.float64)[slot[decomp.bone_b]]


@dataclass
class ShapeDescriptor:
    """Bone lengths l (J-1,) plus per-part slice widths w (J, n), meters."""

    bone_lengths: np.ndarray
    slice_widths: np.ndarray

    def __post_init__(self):
        self.bone_lengths = np.asarray(self.bone_lengths, dtype=np.float64).reshape(-1)
        self.slice_widths = np.atleast_2d(np.asarray(self.slice_widths, dtype=np.float64))
        values = np.concatenate([self.bone_lengths, self.slice_widths.ravel()])
        if not np.all(np.isfinite(values)):
            raise ValueError("descriptor contains non-finite entries")
        if values.size and values.min() <= 0.0:
            raise ValueError("descriptor entries must be strictly positive")

    @property
    def n(self) -> int:
        return self.slice_widths.shape[1]

    @property
    def num_parts(self) -> int:
        return self.slice_widths.shape[0]

    def copy(self) -> "ShapeDescriptor":
        return ShapeDescriptor(self.bone_lengths.copy(), self.slice_widths.copy())

    def to_json_dict(self) -> dict:
        return {
            "n": self.n,
            "bone_lengths": [float(v) for v in self.bone_lengths],
            "slice_widths": [[float(v) for v in row] for row in self.slice_widths],
        }

    @staticmethod
    def from_json_dict(data: dict) -> "ShapeDescriptor":
        desc = ShapeDescriptor(
            np.asarray(data["bone_lengths"], dtype=np.float64),
            np.asarray(data["slice_widths"], dtype=np.float64),
        )
        if desc.n != int(data["n"]):
            raise ValueError(f"descriptor says n={data['n']} but slice_widths rows have {desc.n}")
        return desc

    def save(self, path: str | os.PathLike) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @staticmethod
    def load(path: str | os.PathLike) -> "ShapeDescriptor":
        with open(path, encoding="utf-8") as fh:
            return ShapeDescriptor.from_json_dict(json.load(fh))


def extract_descriptor(model: BodyModel, decomp: PartDecomposition, mesh: np.ndarray) -> ShapeDescriptor:
    """Descriptor of a rest-pose mesh: bone lengths from its regressed joints,
    slice widths averaged over the decomposition's fixed cells."""
    mesh = np.asarray(mesh, dtype=np.float64)
    joints = regress_joints(model, mesh)
    w = vertex_widths(decomp, mesh, joints)
    return ShapeDescriptor(bone_lengths(model, joints), slice_mean_widths(decomp, w))
