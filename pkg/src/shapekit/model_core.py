"""Linear-PCA, linear-blend-skinned body model: loading, shaping, posing.

A model is a directory holding ``manifest.json`` plus ``payload.bin`` with the
arrays concatenated in manifest order (float32 / int32, little-endian). All
in-memory geometry is float64; payloads are stored float32 and promoted on
load.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import ModelFormatError

PARENT_SENTINEL = -1

# Fixed array order inside payload.bin.
_ARRAY_ORDER = ("template", "shape_basis", "blend_weights", "joint_regressor", "parents", "faces")
_INT_ARRAYS = frozenset({"parents", "faces"})


@dataclass
class BodyModel:
    """Immutable body model: template mesh + linear shape basis + skinning data.

    Shapes: template_vertices (K,3), shape_basis (3K,s), blend_weights (K,J),
    joint_regressor (J,K), parents (J,), faces (F,3). ``root_bone_child``
    optionally overrides which child joint closes the root part's central bone.
    """

    template_vertices: np.ndarray
    shape_basis: np.ndarray
    blend_weights: np.ndarray
    joint_regressor: np.ndarray
    parents: np.ndarray
    faces: np.ndarray
    root_bone_child: int | None = None
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def num_vertices(self) -> int:
        return self.template_vertices.shape[0]

    @property
    def num_joints(self) -> int:
        return self.parents.shape[0]

    @property
    def num_coeffs(self) -> int:
        return self.shape_basis.shape[1]

    @property
    def root(self) -> int:
        return int(np.flatnonzero(self.parents == PARENT_SENTINEL)[0])

    def first_child_of_root(self) -> int:
        if self.root_bone_child is not None:
            return int(self.root_bone_child)
        children = np.flatnonzero(self.parents == self.root)
        return int(children[0])

    def freeze(self) -> "BodyModel":
        """Mark all arrays read-only; the model is shared across threads as-is."""
        for name in _ARRAY_ORDER:
            arr = getattr(self, _FIELD_OF[name])
            arr.setflags(write=False)
        return self

    def validate(self) -> "BodyModel":
        """Check every structural invariant; raises ModelFormatError on the first violation."""
        k = self.num_vertices
        j = self.num_joints
        if self.template_vertices.shape != (k, 3):
            raise ModelFormatError("template", f"expected (K,3), got {self.template_vertices.shape}")
        if self.shape_basis.shape[0] != 3 * k:
            raise ModelFormatError(
                "shape_basis", f"expected {3 * k} rows for K={k}, got {self.shape_basis.shape[0]}"
            )
        if self.blend_weights.shape != (k, j):
            raise ModelFormatError("blend_weights", f"expected ({k},{j}), got {self.blend_weights.shape}")
        if self.joint_regressor.shape != (j, k):
            raise ModelFormatError(
                "joint_regressor", f"expected ({j},{k}), got {self.joint_regressor.shape}"
            )
        if np.any(self.blend_weights < 0):
            raise ModelFormatError("blend_weights", "negative entries")
        row_sums = self.blend_weights.sum(axis=1)
        worst = float(np.abs(row_sums - 1.0).max())
        if worst > 1e-6:
            raise ModelFormatError("blend_weights", f"row sums deviate from 1 by {worst:.3e} (> 1e-6)")
        reg_sums = self.joint_regressor.sum(axis=1)
        worst = float(np.abs(reg_sums - 1.0).max())
        if worst > 1e-5:
            raise ModelFormatError("joint_regressor", f"row sums deviate from 1 by {worst:.3e} (> 1e-5)")
        _validate_tree(self.parents)
        if self.faces.size and (self.faces.min() < 0 or self.faces.max() >= k):
            raise ModelFormatError("faces", f"vertex index out of range [0,{k})")
        if self.root_bone_child is not None:
            c = int(self.root_bone_child)
            if not (0 <= c < j) or self.parents[c] != self.root:
                raise ModelFormatError("root_bone_child", f"joint {c} is not a child of the root")
        return self


_FIELD_OF = {
    "template": "template_vertices",
    "shape_basis": "shape_basis",
    "blend_weights": "blend_weights",
    "joint_regressor": "joint_regressor",
    "parents": "parents",
    "faces": "faces",
}


def _validate_tree(parents: np.ndarray) -> None:
    j = parents.shape[0]
    roots = np.flatnonzero(parents == PARENT_SENTINEL)
    if roots.size != 1:
        raise ModelFormatError("parents", f"expected exactly one root sentinel, found {roots.size}")
    for joint in range(j):
        p = int(parents[joint])
        if p != PARENT_SENTINEL and not (0 <= p < j):
            raise ModelFormatError("parents", f"joint {joint} has out-of-range parent {p}")
    # Walk each joint to the root; a chain longer than J implies a cycle.
    for joint in range(j):
        cur, steps = joint, 0
        while parents[cur] != PARENT_SENTINEL:
            cur = int(parents[cur])
            steps += 1
            if steps > j:
                raise ModelFormatError("parents", f"cycle detected walking up from joint {joint}")


def topological_order(parents: np.ndarray) -> np.ndarray:
    """Joint indices ordered so every parent precedes its children."""
    j = parents.shape[0]
    depth = np.zeros(j, dtype=np.int64)
    for joint in range(j):
        cur = joint
        while parents[cur] != PARENT_SENTINEL:
            cur = int(parents[cur])
            depth[joint] += 1
    return np.argsort(depth, kind="stable")


# ---------------------------------------------------------------------------
# Neutral asset format


def _manifest_for(model: BodyModel) -> tuple[dict, list[np.ndarray]]:
    payload_arrays = []
    entries = []
    offset = 0
    for name in _ARRAY_ORDER:
        arr = getattr(model, _FIELD_OF[name])
        if name in _INT_ARRAYS:
            out = np.ascontiguousarray(arr, dtype="<i4")
        else:
            out = np.ascontiguousarray(arr, dtype="<f4")
        payload_arrays.append(out)
        entries.append({"name": name, "shape": list(out.shape), "offset": offset})
        offset += out.nbytes
    manifest = {
        "k": model.num_vertices,
        "j": model.num_joints,
        "s": model.num_coeffs,
        "f": int(model.faces.shape[0]),
        "dtype": "f32",
        "byte_order": "little",
        "arrays": entries,
    }
    if model.root_bone_child is not None:
        manifest["root_bone_child"] = int(model.root_bone_child)
    return manifest, payload_arrays


def save_model(model: BodyModel, path: str | os.PathLike) -> None:
    """Write ``manifest.json`` + ``payload.bin`` under ``path`` (created if missing).

    Output bytes are deterministic for a given model.
    """
    model.validate()
    os.makedirs(path, exist_ok=True)
    manifest, payload_arrays = _manifest_for(model)
    with open(os.path.join(path, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(os.path.join(path, "payload.bin"), "wb") as fh:
        for arr in payload_arrays:
            fh.write(arr.tobytes())


def load_model(path: str | os.PathLike) -> BodyModel:
    """Load and validate a neutral-format model directory."""
    manifest_path = os.path.join(path, "manifest.json")
    payload_path = os.path.join(path, "payload.bin")
    if not os.path.isfile(manifest_path):
        raise ModelFormatError("manifest.json", f"missing file under {path!s}")
    if not os.path.isfile(payload_path):
        raise ModelFormatError("payload.bin", f"missing file under {path!s}")
    with open(manifest_path, encoding="utf-8") as fh:
        manifest = json.load(fh)
    for key in ("k", "j", "s", "f", "dtype", "arrays"):
        if key not in manifest:
            raise ModelFormatError(key, "missing manifest field")
    if manifest["dtype"] != "f32":
        raise ModelFormatError("dtype", f"unsupported payload dtype {manifest['dtype']!r}")
    k, j, s, f = (int(manifest[key]) for key in ("k", "j", "s", "f"))
    expected_shapes = {
        "template": (k, 3),
        "shape_basis": (3 * k, s),
        "blend_weights": (k, j),
        "joint_regressor": (j, k),
        "parents": (j,),
        "faces": (f, 3),
    }
    payload = np.fromfile(payload_path, dtype=np.uint8)
    by_name = {entry["name"]: entry for entry in manifest["arrays"]}
    arrays = {}
    for name in _ARRAY_ORDER:
        if name not in by_name:
            raise ModelFormatError(name, "missing manifest array entry")
        entry = by_name[name]
        shape = tuple(int(v) for v in entry["shape"])
        if shape != expected_shapes[name]:
            raise ModelFormatError(
                name, f"manifest shape {shape} does not match header ({expected_shapes[name]})"
            )
        dtype = np.dtype("<i4") if name in _INT_ARRAYS else np.dtype("<f4")
        offset = int(entry["offset"])
        nbytes = int(np.prod(shape)) * dtype.itemsize
        if offset < 0 or offset + nbytes > payload.nbytes:
            raise ModelFormatError(
                name, f"payload has {payload.nbytes} bytes, need [{offset},{offset + nbytes})"
            )
        raw = payload[offset : offset + nbytes].view(dtype).reshape(shape)
        if name in _INT_ARRAYS:
            arrays[name] = raw.astype(np.int64)
        else:
            arrays[name] = raw.astype(np.float64)
    model = BodyModel(
        template_vertices=arrays["template"],
        shape_basis=arrays["shape_basis"],
        blend_weights=arrays["blend_weights"],
        joint_regressor=arrays["joint_regressor"],
        parents=arrays["parents"],
        faces=arrays["faces"],
        root_bone_child=manifest.get("root_bone_child"),
    )
    return model.validate().freeze()


# ---------------------------------------------------------------------------
# Shape blending, joint regression, posing


def _as_beta(model: BodyModel, beta) -> np.ndarray:
    beta = np.asarray(beta, dtype=np.float64).reshape(-1)
    if beta.shape[0] != model.num_coeffs:
        raise ValueError(f"beta has length {beta.shape[0]}, model expects {model.num_coeffs}")
    if not np.all(np.isfinite(beta)):
        raise ValueError("beta contains non-finite entries")
    return beta


def shape_to_mesh(model: BodyModel, beta) -> np.ndarray:
    """Rest-pose mesh for shape coefficients ``beta``: template + basis @ beta."""
    beta = _as_beta(model, beta)
    offsets = (model.shape_basis @ beta).reshape(-1, 3)
    return model.template_vertices + offsets


def shape_to_mesh_batch(model: BodyModel, betas) -> np.ndarray:
    """Vectorized shape_to_mesh: (B,s) -> (B,K,3)."""
    betas = np.asarray(betas, dtype=np.float64)
    offsets = (betas @ model.shape_basis.T).reshape(betas.shape[0], -1, 3)
    return model.template_vertices[None] + offsets


def regress_joints(model: BodyModel, mesh: np.ndarray) -> np.ndarray:
    """Joint positions from a mesh: joint_regressor @ mesh."""
    mesh = np.asarray(mesh, dtype=np.float64)
    if mesh.shape != (model.num_vertices, 3):
        raise ValueError(f"mesh shape {mesh.shape} does not match model (K={model.num_vertices})")
    return model.joint_regressor @ mesh


@dataclass
class Pose:
    """Per-joint axis-angle rotations (J,3) plus a global translation (3,).

    Axis-angle magnitudes are wrapped into [0, 2*pi) on construction; the
    rotation is unchanged by the wrap.
    """

    rotations: np.ndarray
    translation: np.ndarray

    def __init__(self, rotations, translation=(0.0, 0.0, 0.0)):
        rotations = np.array(rotations, dtype=np.float64)
        translation = np.array(translation, dtype=np.float64).reshape(3)
        if rotations.ndim != 2 or rotations.shape[1] != 3:
            raise ValueError(f"rotations must be (J,3), got {rotations.shape}")
        if not (np.all(np.isfinite(rotations)) and np.all(np.isfinite(translation))):
            raise ValueError("pose contains non-finite entries")
        angles = np.linalg.norm(rotations, axis=1)
        wrap = angles >= 2.0 * np.pi
        if np.any(wrap):
            wrapped = np.mod(angles[wrap], 2.0 * np.pi)
            scale = np.where(angles[wrap] > 0, wrapped / angles[wrap], 0.0)
            rotations[wrap] *= scale[:, None]
        self.rotations = rotations
        self.translation = translation

    @staticmethod
    def identity(num_joints: int) -> "Pose":
        return Pose(np.zeros((num_joints, 3)))


def rodrigues(axis_angle: np.ndarray) -> np.ndarray:
    """Axis-angle vectors (J,3) to rotation matrices (J,3,3)."""
    aa = np.asarray(axis_angle, dtype=np.float64)
    theta = np.linalg.norm(aa, axis=-1, keepdims=True)
    small = theta[..., 0] < 1e-12
    axis = np.where(theta > 0, aa / np.where(theta == 0, 1.0, theta), 0.0)
    kx, ky, kz = axis[..., 0], axis[..., 1], axis[..., 2]
    zero = np.zeros_like(kx)
    skew = np.stack(
        [
            np.stack([zero, -kz, ky], axis=-1),
            np.stack([kz, zero, -kx], axis=-1),
            np.stack([-ky, kx, zero], axis=-1),
        ],
        axis=-2,
    )
    eye = np.broadcast_to(np.eye(3), skew.shape)
    sin = np.sin(theta)[..., None]
    cos = np.cos(theta)[..., None]
    rot = eye + sin * skew + (1.0 - cos) * (skew @ skew)
    rot[small] = eye[small]
    return rot


def joint_world_transforms(
    model: BodyModel, rest_joints: np.ndarray, pose: Pose
) -> tuple[np.ndarray, np.ndarray]:
    """World rotation (J,3,3) and translation (J,3) of every joint under ``pose``."""
    j = model.num_joints
    if pose.rotations.shape[0] != j:
        raise ValueError(f"pose has {pose.rotations.shape[0]} joints, model has {j}")
    local_rot = rodrigues(pose.rotations)
    world_rot = np.empty((j, 3, 3))
    world_pos = np.empty((j, 3))
    for joint in topological_order(model.parents):
        p = int(model.parents[joint])
        if p == PARENT_SENTINEL:
            world_rot[joint] = local_rot[joint]
            world_pos[joint] = rest_joints[joint]
        else:
            world_rot[joint] = world_rot[p] @ local_rot[joint]
            world_pos[joint] = world_pos[p] + world_rot[p] @ (rest_joints[joint] - rest_joints[p])
    return world_rot, world_pos


def pose_mesh(model: BodyModel, rest_mesh: np.ndarray, pose: Pose) -> np.ndarray:
    """Standard linear blend skinning of ``rest_mesh`` under ``pose``.

    The identity pose returns the rest mesh (to rounding of the weight sums).
    """
    rest_mesh = np.asarray(rest_mesh, dtype=np.float64)
    rest_joints = regress_joints(model, rest_mesh)
    world_rot, world_pos = joint_world_transforms(model, rest_joints, pose)
    # Skinning transform of joint j maps a rest point v to
    # world_rot[j] @ (v - rest_joints[j]) + world_pos[j].
    skin_t = world_pos - np.einsum("jab,jb->ja", world_rot, rest_joints)
    # Blend per-vertex: M_k = sum_j w_kj [R_j | t_j], then apply to v_k.
    blended_rot = np.einsum("kj,jab->kab", model.blend_weights, world_rot)
    blended_t = model.blend_weights @ skin_t
    posed = np.einsum("kab,kb->ka", blended_rot, rest_mesh) + blended_t
    return posed + pose.translation


def posed_joints(model: BodyModel, rest_mesh: np.ndarray, pose: Pose) -> np.ndarray:
    """Joint positions under ``pose`` from the LBS transform chain (not re-regressed)."""
    rest_joints = regress_joints(model, np.asarray(rest_mesh, dtype=np.float64))
    _, world_pos = joint_world_transforms(model, rest_joints, pose)
    return world_pos + pose.translation


# ---------------------------------------------------------------------------
# Toy fixture: capsule-chain body with analytic ground truth

_TOY_RING_SIZE = 4
_TOY_WIDTH_COEF = 0.15  # beta[0]=+1 scales every width by 1 + this
_TOY_LENGTH_COEF = 0.15  # beta[1]=+1 scales every bone length by 1 + this
_TOY_PROFILE_COEF = 0.15  # per-part width response of the mixed coefficients
_TOY_ELLIPTIC_COEF = 0.038  # cross-section response of the mixed coefficients


@dataclass(frozen=True)
class ToyReference:
    """Analytic ground truth of the toy fixture, for tests and calibration."""

    num_parts: int
    rings_per_part: int
    radii: np.ndarray  # (J,) template ring radius of each part
    segment_lengths: np.ndarray  # (J-1,) template bone lengths, joint j-1 -> j
    width_coef: float  # width factor per unit beta[0] above 1
    length_coef: float  # length factor per unit beta[1] above 1
    width_profiles: np.ndarray  # (s-2, J) per-part width response of beta[2:]
    elliptic_profiles: np.ndarray  # (s-2, J) per-part cross-section response of beta[2:]

    @property
    def num_coeffs(self) -> int:
        return 2 + self.width_profiles.shape[0]


def _toy_layout(num_parts: int, verts_per_part: int, seed: int):
    if num_parts < 2:
        raise ValueError("num_parts must be >= 2")
    if verts_per_part < 8:
        raise ValueError("verts_per_part must be >= 8")
    j = num_parts
    rings = verts_per_part // _TOY_RING_SIZE
    seg_lengths = 0.16 + 0.02 * ((np.arange(1, j) - 1) % 4)
    radii = 0.42 + 0.03 * (np.arange(j) % 3)
    rng = np.random.default_rng(seed)
    n_mixed = max(0, min(6, j + 1) - 2)
    width_profiles = rng.uniform(-1.0, 1.0, size=(n_mixed, j))
    elliptic_profiles = rng.uniform(-1.0, 1.0, size=(n_mixed, j))
    return j, rings, seg_lengths, radii, width_profiles, elliptic_profiles


def toy_reference(num_parts: int, verts_per_part: int, seed: int) -> ToyReference:
    """Analytic quantities of the model ``make_toy_model`` builds with the same arguments."""
    j, rings, seg_lengths, radii, width_profiles, elliptic_profiles = _toy_layout(
        num_parts, verts_per_part, seed
    )
    return ToyReference(
        num_parts=j,
        rings_per_part=rings,
        radii=radii,
        segment_lengths=seg_lengths,
        width_coef=_TOY_WIDTH_COEF,
        length_coef=_TOY_LENGTH_COEF,
        width_profiles=_TOY_PROFILE_COEF * width_profiles,
        elliptic_profiles=_TOY_ELLIPTIC_COEF * elliptic_profiles,
    )


def make_toy_model(num_parts: int, verts_per_part: int, seed: int) -> BodyModel:
    """Deterministic capsule-chain test model with analytically known descriptors.

    Parts form a kinematic chain along +y. Each part carries
    ``verts_per_part // 4`` rings of 4 vertices around its central bone (the
    remainder of ``verts_per_part`` is dropped). Shape coefficient 0 scales
    every width by ``1 + 0.15*beta[0]``; coefficient 1 scales every bone
    length by ``1 + 0.15*beta[1]``. Remaining coefficients mix a per-part
    width profile with a cross-section change that mean widths cannot see,
    so descriptor-based recovery of them is deliberately imperfect.
    """
    j, rings, seg_lengths, radii, width_profiles, elliptic_profiles = _toy_layout(
        num_parts, verts_per_part, seed
    )
    joints = np.zeros((j, 3))
    joints[1:, 1] = np.cumsum(seg_lengths)
    parents = np.full(j, PARENT_SENTINEL, dtype=np.int64)
    parents[1:] = np.arange(j - 1)

    # part j's central bone: root part shares the (0,1) segment with part 1
    bone_a = np.maximum(np.arange(j) - 1, 0)
    bone_b = np.maximum(np.arange(j), 1)

    per_part = rings * _TOY_RING_SIZE
    k = j * per_part
    verts = np.zeros((k, 3))
    radial = np.zeros((k, 3))  # template offset from the bone axis
    axial = np.zeros((k, 3))  # template projection point on the axis
    part_of_vertex = np.zeros(k, dtype=np.int64)
    taus = np.linspace(0.0, 1.0, rings) if rings > 1 else np.array([0.5])
    for part in range(j):
        a, b = joints[bone_a[part]], joints[bone_b[part]]
        for m in range(rings):
            center = a + taus[m] * (b - a)
            for c in range(_TOY_RING_SIZE):
                phi = 2.0 * np.pi * c / _TOY_RING_SIZE + 0.39 * part + 0.17 * m
                idx = part * per_part + m * _TOY_RING_SIZE + c
                offset = radii[part] * np.array([np.cos(phi), 0.0, np.sin(phi)])
                verts[idx] = center + offset
                radial[idx] = offset
                axial[idx] = center
                part_of_vertex[idx] = part

    blend_weights = np.zeros((k, j))
    blend_weights[np.arange(k), part_of_vertex] = 1.0

    # joint 0 <- ring of part 0 at tau=0; joint p (p>=1) <- ring of part p at tau=1
    joint_regressor = np.zeros((j, k))
    last_ring = rings - 1
    joint_regressor[0, 0 : _TOY_RING_SIZE] = 1.0 / _TOY_RING_SIZE
    for p in range(1, j):
        start = p * per_part + last_ring * _TOY_RING_SIZE
        joint_regressor[p, start : start + _TOY_RING_SIZE] = 1.0 / _TOY_RING_SIZE

    # shape basis columns as (K,3) displacement fields
    n_mixed = width_profiles.shape[0]
    s = 2 + n_mixed
    basis = np.zeros((k, 3, s))
    basis[:, :, 0] = _TOY_WIDTH_COEF * radial
    basis[:, :, 1] = _TOY_LENGTH_COEF * axial  # root sits at the origin
    elliptic = np.stack([radial[:, 0], np.zeros(k), -radial[:, 2]], axis=1)
    for m in range(n_mixed):
        g = width_profiles[m][part_of_vertex][:, None]
        h = elliptic_profiles[m][part_of_vertex][:, None]
        basis[:, :, 2 + m] = _TOY_PROFILE_COEF * g * radial + _TOY_ELLIPTIC_COEF * h * elliptic

    faces = []
    for part in range(j):
        base = part * per_part
        for m in range(rings - 1):
            for c in range(_TOY_RING_SIZE):
                c2 = (c + 1) % _TOY_RING_SIZE
                v00 = base + m * _TOY_RING_SIZE + c
                v01 = base + m * _TOY_RING_SIZE + c2
                v10 = base + (m + 1) * _TOY_RING_SIZE + c
                v11 = base + (m + 1) * _TOY_RING_SIZE + c2
                faces.append((v00, v01, v11))
                faces.append((v00, v11, v10))
    faces = np.asarray(faces, dtype=np.int64).reshape(-1, 3)

    # round through f32 so an asset round trip reproduces the model exactly
    model = BodyModel(
        template_vertices=verts.astype(np.float32).astype(np.float64),
        shape_basis=basis.reshape(3 * k, s).astype(np.float32).astype(np.float64),
        blend_weights=blend_weights,
        joint_regressor=joint_regressor,
        parents=parents,
        faces=faces,
    )
    return model.validate().freeze()
