"""Image-plane affine augmentation of shape annotations.

Geometry projects orthographically: pixel = scale * (x, y) + offset. An
augmentation maps pixel coordinates by T = S(a, b) @ R(phi). Because an
affine map scales every (2D width x 2D bone length) product by det T = a*b,
post-transform widths follow in closed form from the transformed bone
lengths alone — no vertex geometry has to be re-measured. The functions here
implement both the closed forms and the brute-force transform used to verify
them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .decompose import PartDecomposition, ShapeDescriptor, non_root_joints
from .errors import DegenerateBone2DError, UnsolvableStretchError
from .model_core import BodyModel

_DEGENERATE_2D = 1e-9  # pixels
_STRETCH_TOL = 1e-6  # pixels


@dataclass(frozen=True)
class AffineAugment:
    """Image-plane map: rotate by phi, then scale x by a and y by b."""

    a: float
    b: float
    phi: float = 0.0

    def __post_init__(self):
        if self.a <= 0 or self.b <= 0:
            raise ValueError("scaling factors must be positive")

    @property
    def matrix(self) -> np.ndarray:
        c, s = np.cos(self.phi), np.sin(self.phi)
        return np.array([[self.a * c, -self.a * s], [self.b * s, self.b * c]])

    @property
    def det(self) -> float:
        return self.a * self.b


@dataclass(frozen=True)
class OrthoCamera:
    """Orthographic projection: pixel = scale * (x, y) + offset."""

    scale: float
    offset: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if self.scale <= 0:
            raise ValueError("camera scale must be positive")

    def project_points(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64)
        return self.scale * points[..., :2] + np.asarray(self.offset, dtype=np.float64)


def sample_augmentation(rng: np.random.Generator, phi: float = 0.0) -> AffineAugment:
    """Draw a random area-preserving anisotropic scale.

    The aspect ratio a/b is uniform on (0.4, 1.0) with probability 1/3 and
    uniform on (1.0, 2.5) otherwise — biased toward widening; a = sqrt(ratio),
    b = 1/a, so the image area is unchanged.
    """
    if rng.uniform() < 1.0 / 3.0:
        ratio = rng.uniform(0.4, 1.0)
    else:
        ratio = rng.uniform(1.0, 2.5)
    a = float(np.sqrt(ratio))
    return AffineAugment(a=a, b=1.0 / a, phi=phi)


@dataclass(frozen=True)
class Projected2D:
    """Pixel-space snapshot of a posed body: points, per-vertex widths, bone lengths.

    Carries its part structure so it can be transformed standalone.
    """

    joints_2d: np.ndarray  # (J, 2) pixels
    vertex_2d: np.ndarray  # (K, 2) pixels
    widths_2d: np.ndarray  # (K,) pixels
    bone_lengths_2d: np.ndarray  # (J,) pixels, central bone per part
    part_of_vertex: np.ndarray  # (K,)
    bone_of_part: np.ndarray  # (J, 2)

    @property
    def num_parts(self) -> int:
        return self.bone_of_part.shape[0]


def _widths_against_bones(
    points2d: np.ndarray, joints2d: np.ndarray, bone_of_part: np.ndarray, part: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Per-vertex point-to-bone-line distances and per-part bone lengths, in pixels.

    A degenerate 2D bone (< 1e-9 px) degrades to point distance, mirroring
    the 3D convention; callers that need a usable bone length must check.
    """
    a = joints2d[bone_of_part[part, 0]]
    b = joints2d[bone_of_part[part, 1]]
    d = b - a
    dd = np.einsum("kd,kd->k", d, d)
    u = np.asarray(points2d, dtype=np.float64) - a
    degenerate = dd < _DEGENERATE_2D * _DEGENERATE_2D
    t = np.where(degenerate, 0.0, np.einsum("kd,kd->k", u, d) / np.where(degenerate, 1.0, dd))
    r = u - t[:, None] * d
    widths = np.sqrt(np.einsum("kd,kd->k", r, r))
    bone_vec = joints2d[bone_of_part[:, 1]] - joints2d[bone_of_part[:, 0]]
    lengths = np.linalg.norm(bone_vec, axis=1)
    return widths, lengths


def project(
    model: BodyModel,
    decomp: PartDecomposition,
    posed_mesh: np.ndarray,
    posed_joints: np.ndarray,
    cam: OrthoCamera,
) -> Projected2D:
    """Orthographic pixel-space snapshot of a posed mesh and its skeleton."""
    posed_mesh = np.asarray(posed_mesh, dtype=np.float64)
    posed_joints = np.asarray(posed_joints, dtype=np.float64)
    if posed_mesh.shape != (model.num_vertices, 3):
        raise ValueError(f"mesh shape {posed_mesh.shape} does not match model")
    if posed_joints.shape != (model.num_joints, 3):
        raise ValueError(f"joints shape {posed_joints.shape} does not match model")
    joints_2d = cam.project_points(posed_joints)
    vertex_2d = cam.project_points(posed_mesh)
    widths, lengths = _widths_against_bones(
        vertex_2d, joints_2d, decomp.bone_of_part, decomp.part_of_vertex
    )
    return Projected2D(
        joints_2d=joints_2d,
        vertex_2d=vertex_2d,
        widths_2d=widths,
        bone_lengths_2d=lengths,
        part_of_vertex=decomp.part_of_vertex,
        bone_of_part=decomp.bone_of_part,
    )


def transform_2d(p: Projected2D, aug: AffineAugment) -> Projected2D:
    """Apply the affine map to every projected point and re-measure everything.

    This is the brute-force oracle the closed forms are checked against.
    The map is applied about the pixel origin; recentering offsets are the
    caller's concern (widths and lengths are unaffected by them).
    """
    t = aug.matrix.T
    joints_2d = p.joints_2d @ t
    vertex_2d = p.vertex_2d @ t
    widths, lengths = _widths_against_bones(vertex_2d, joints_2d, p.bone_of_part, p.part_of_vertex)
    return Projected2D(
        joints_2d=joints_2d,
        vertex_2d=vertex_2d,
        widths_2d=widths,
        bone_lengths_2d=lengths,
        part_of_vertex=p.part_of_vertex,
        bone_of_part=p.bone_of_part,
    )


def _transformed_part_lengths(p: Projected2D, aug: AffineAugment) -> np.ndarray:
    bone_vec = p.joints_2d[p.bone_of_part[:, 1]] - p.joints_2d[p.bone_of_part[:, 0]]
    return np.linalg.norm(bone_vec @ aug.matrix.T, axis=1)


def _check_bone_lengths(before: np.ndarray, after: np.ndarray, occupied: np.ndarray) -> None:
    for lengths in (after, before):
        bad = np.flatnonzero(occupied & (lengths < _DEGENERATE_2D))
        if bad.size:
            part = int(bad[0])
            raise DegenerateBone2DError(part, float(lengths[part]))


def derive_widths_2d(p: Projected2D, aug: AffineAugment) -> np.ndarray:
    """Post-transform per-vertex 2D widths in closed form.

    w_new = (a*b * l_old / l_new) * w_old per vertex, with each part's bone
    length taken from transforming the joint projections alone. Raises
    DegenerateBone2DError when a populated part's bone collapses below
    1e-9 px (viewed end-on).
    """
    l_before = p.bone_lengths_2d
    l_after = _transformed_part_lengths(p, aug)
    occupied = np.zeros(p.num_parts, dtype=bool)
    occupied[np.unique(p.part_of_vertex)] = True
    _check_bone_lengths(l_before, l_after, occupied)
    factor = aug.det * l_before / np.where(l_after < _DEGENERATE_2D, 1.0, l_after)
    return factor[p.part_of_vertex] * p.widths_2d


def derive_widths_3d(
    desc: ShapeDescriptor, p: Projected2D, aug: AffineAugment, s: float, s_bar: float
) -> np.ndarray:
    """Post-transform 3D slice widths: (s_bar/s) * (a*b * l2d_old / l2d_new) per part.

    ``s_bar`` is the caller's post-transform projection scale; it is never
    inferred here. Returns a (J, n) width array; bone lengths come from
    stretch_bones_to_projection.
    """
    if s <= 0 or s_bar <= 0:
        raise ValueError("projection scales must be positive")
    if desc.num_parts != p.num_parts:
        raise ValueError(
            f"descriptor has {desc.num_parts} parts but projection has {p.num_parts}"
        )
    l_before = p.bone_lengths_2d
    l_after = _transformed_part_lengths(p, aug)
    occupied = np.ones(p.num_parts, dtype=bool)
    _check_bone_lengths(l_before, l_after, occupied)
    factor = (s_bar / s) * aug.det * l_before / l_after
    return desc.slice_widths * factor[:, None]


def stretch_bones_to_projection(
    model: BodyModel,
    rest_joints: np.ndarray,
    posed_joints: np.ndarray,
    p_before: Projected2D,
    p_after: Projected2D,
    cam_after: OrthoCamera,
) -> np.ndarray:
    """Bone lengths (J-1,) that make the skeleton reproject onto the target joints.

    Each bone keeps its depth extent (from the posed skeleton) and takes the
    in-plane extent that reprojects, under ``cam_after``, exactly onto the
    transformed 2D bone vector. A bone seen end-on (in-plane extent below
    1e-6 px before the transform) cannot reproduce a nonzero target bone and
    raises UnsolvableStretchError.
    """
    rest_joints = np.asarray(rest_joints, dtype=np.float64)
    posed_joints = np.asarray(posed_joints, dtype=np.float64)
    j = model.num_joints
    if rest_joints.shape != (j, 3) or posed_joints.shape != (j, 3):
        raise ValueError("joint arrays do not match the model's joint count")
    non_root = non_root_joints(model)
    parents = model.parents[non_root]
    u2 = p_before.joints_2d[non_root] - p_before.joints_2d[parents]
    target2 = p_after.joints_2d[non_root] - p_after.joints_2d[parents]
    dz = posed_joints[non_root, 2] - posed_joints[parents, 2]
    norm_u2 = np.linalg.norm(u2, axis=1)
    norm_t2 = np.linalg.norm(target2, axis=1)
    bad = np.flatnonzero((norm_u2 < _STRETCH_TOL) & (norm_t2 > _STRETCH_TOL))
    if bad.size:
        joint = int(non_root[bad[0]])
        raise UnsolvableStretchError(
            f"bone into joint {joint} is perpendicular to the image plane "
            f"({norm_u2[bad[0]]:.3e} px) but the target 2D bone is {norm_t2[bad[0]]:.3e} px"
        )
    in_plane = norm_t2 / cam_after.scale
    return np.hypot(in_plane, dz)
