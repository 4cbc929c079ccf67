"""Semi-analytical shape recovery from a bone-length / slice-width descriptor.

The analytical stage stretches the template skeleton to the target bone
lengths, rescales every vertex's offset from its part bones by the ratio of
target to template slice widths, blends the per-part adjustments with the
LBS weights, and projects the deformed template onto the shape basis by
ridge-regularized least squares. A small dense network then refines the
projected coefficients; it is trained against the decomposition loss with
hand-written backpropagation.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from . import kernels
from .decompose import (
    PartDecomposition,
    ShapeDescriptor,
    bone_lengths,
    non_root_joints,
    part_target_lengths,
    slice_indices,
    slice_mean_widths,
    vertex_widths,
)
from .errors import TrainingDivergedError
from .model_core import BodyModel, regress_joints, shape_to_mesh, topological_order

_DEGENERATE_SQ = 1e-18
DEFAULT_PROJECTION_RIDGE = 1e-6


@dataclass(frozen=True)
class LossWeights:
    """Scalar weights of the loss terms (regularizer, 2D vertex term, pipeline mixing)."""

    mu0: float = 0.01
    mu1: float = 0.01
    mu2: float = 0.1
    mu3: float = 1.0

    def __post_init__(self):
        if min(self.mu0, self.mu1, self.mu2, self.mu3) < 0:
            raise ValueError("loss weights must be >= 0")


@dataclass(frozen=True)
class AnalyticalResult:
    """Output of the analytical stage.

    ``deformed_template`` is the stretched-and-broadened template mesh;
    ``beta0`` its projection onto the shape basis; ``achieved`` the
    descriptor of the mesh at beta0; ``delta_l``/``delta_w`` the residuals
    target - achieved.
    """

    deformed_template: np.ndarray
    beta0: np.ndarray
    achieved: ShapeDescriptor
    delta_l: np.ndarray
    delta_w: np.ndarray


def template_joints(model: BodyModel) -> np.ndarray:
    """Regressed joints of the template mesh (cached on the model)."""
    cached = model._cache.get("template_joints")
    if cached is None:
        cached = regress_joints(model, model.template_vertices)
        cached.setflags(write=False)
        model._cache["template_joints"] = cached
    return cached


def stretch_skeleton(model: BodyModel, joints: np.ndarray, target_lengths: np.ndarray) -> np.ndarray:
    """Rescale every bone of ``joints`` to the target lengths, root outward.

    Each joint moves along its existing bone direction so the bone reaches
    its target length; the root stays put. Raises on a zero-length bone.
    """
    target_lengths = np.asarray(target_lengths, dtype=np.float64)
    slot = np.full(model.num_joints, -1, dtype=np.int64)
    slot[non_root_joints(model)] = np.arange(model.num_joints - 1)
    out = np.array(joints, dtype=np.float64)
    for joint in topological_order(model.parents):
        p = int(model.parents[joint])
        if p == -1:
            continue
        d = joints[joint] - joints[p]
        length = float(np.linalg.norm(d))
        if length < 1e-9:
            raise ValueError(f"template bone into joint {joint} has zero length")
        out[joint] = out[p] + target_lengths[slot[joint]] * (d / length)
    return out


def _shape_projection_solver(model: BodyModel, ridge: float):
    key = ("shape_projection", float(ridge))
    solver = model._cache.get(key)
    if solver is None:
        basis = model.shape_basis
        gram = basis.T @ basis + ridge * np.eye(model.num_coeffs)
        solver = scipy.linalg.cho_factor(gram)
        model._cache[key] = solver
    return solver


def project_to_shape_coeffs(
    model: BodyModel, displacement: np.ndarray, ridge: float = DEFAULT_PROJECTION_RIDGE
) -> np.ndarray:
    """Ridge least-squares coefficients for a (K,3) template displacement field."""
    rhs = model.shape_basis.T @ np.asarray(displacement, dtype=np.float64).ravel()
    return scipy.linalg.cho_solve(_shape_projection_solver(model, ridge), rhs)


def analytical_reconstruct(
    model: BodyModel,
    decomp: PartDecomposition,
    target: ShapeDescriptor,
    ridge: float = DEFAULT_PROJECTION_RIDGE,
) -> AnalyticalResult:
    """Stretch-and-broaden the template toward ``target``, then project to coefficients."""
    if target.n != decomp.n or target.num_parts != decomp.num_parts:
        raise ValueError(
            f"descriptor ({target.num_parts} parts, n={target.n}) does not match "
            f"decomposition ({decomp.num_parts} parts, n={decomp.n})"
        )
    template = model.template_vertices
    tj = template_joints(model)
    stretched = stretch_skeleton(model, tj, target.bone_lengths)

    deformed = np.zeros_like(template)
    for part in range(decomp.num_parts):
        weight = model.blend_weights[:, part]
        idx = np.flatnonzero(weight > 0.0)
        if idx.size == 0:
            continue
        ja, jb = (int(v) for v in decomp.bone_of_part[part])
        a, b = tj[ja], tj[jb]
        d = b - a
        dd = float(d @ d)
        if dd < _DEGENERATE_SQ:
            raise ValueError(f"template bone of part {part} has zero length")
        t = ((template[idx] - a) @ d) / dd
        q = a + t[:, None] * d
        cell = slice_indices(t, decomp.n)
        ratio = target.slice_widths[part, cell] / decomp.template_widths[part, cell]
        xa, xb = stretched[ja], stretched[jb]
        adjusted = xa + t[:, None] * (xb - xa) + ratio[:, None] * (template[idx] - q)
        deformed[idx] += weight[idx, None] * adjusted

    beta0 = project_to_shape_coeffs(model, deformed - template, ridge)
    achieved = _extract(model, decomp, shape_to_mesh(model, beta0))
    return AnalyticalResult(
        deformed_template=deformed,
        beta0=beta0,
        achieved=achieved,
        delta_l=target.bone_lengths - achieved.bone_lengths,
        delta_w=target.slice_widths - achieved.slice_widths,
    )


def _extract(model: BodyModel, decomp: PartDecomposition, mesh: np.ndarray) -> ShapeDescriptor:
    joints = regress_joints(model, mesh)
    w = vertex_widths(decomp, mesh, joints)
    return ShapeDescriptor(bone_lengths(model, joints), slice_mean_widths(decomp, w))


# ---------------------------------------------------------------------------
# Losses


def decompose_loss(
    model: BodyModel,
    decomp: PartDecomposition,
    refined,
    target: ShapeDescriptor,
    weights: LossWeights = LossWeights(),
) -> tuple[float, np.ndarray]:
    """Decomposition loss of coefficients ``refined`` against a target descriptor.

    Returns (value, gradient wrt refined). Terms: L1 distance of the regressed
    joints to the stretched target skeleton and of the bone lengths to the
    target lengths; squared slice-width error plus squared width error
    normalized by each part's bone length; mu1 times the squared coefficient
    norm.
    """
    beta = np.asarray(refined, dtype=np.float64).reshape(-1)
    mesh = shape_to_mesh(model, beta)
    joints = regress_joints(model, mesh)
    non_root = non_root_joints(model)
    parents = model.parents[non_root]

    x_hat = stretch_skeleton(model, template_joints(model), target.bone_lengths)
    l_hat = target.bone_lengths
    w_hat = target.slice_widths

    bone_vec = joints[non_root] - joints[parents]
    l_tilde = np.linalg.norm(bone_vec, axis=1)
    w_vert = vertex_widths(decomp, mesh, joints)
    w_tilde = slice_mean_widths(decomp, w_vert)
    ba, bb = decomp.bone_a, decomp.bone_b
    part_vec = joints[bb] - joints[ba]
    lam_tilde = np.linalg.norm(part_vec, axis=1)
    lam_hat = part_target_lengths(model, decomp, l_hat)

    joint_diff = joints - x_hat
    len_diff = l_tilde - l_hat
    dw = w_tilde - w_hat
    dwn = w_tilde / lam_tilde[:, None] - w_hat / lam_hat[:, None]
    loss = (
        float(np.abs(joint_diff).sum())
        + float(np.abs(len_diff).sum())
        + float((dw * dw).sum())
        + float((dwn * dwn).sum())
        + weights.mu1 * float(beta @ beta)
    )

    # gradient wrt joints: L1 joint term, L1 length term, width normalization term
    g_joints = np.sign(joint_diff)
    safe_l = np.where(l_tilde > 0, l_tilde, 1.0)
    unit = np.where(l_tilde[:, None] > 0, bone_vec / safe_l[:, None], 0.0)
    s_len = np.sign(len_diff)[:, None] * unit
    np.add.at(g_joints, non_root, s_len)
    np.add.at(g_joints, parents, -s_len)
    g_lam = -(2.0 * dwn * w_tilde).sum(axis=1) / (lam_tilde * lam_tilde)
    unit_part = part_vec / lam_tilde[:, None]
    np.add.at(g_joints, bb, g_lam[:, None] * unit_part)
    np.add.at(g_joints, ba, -g_lam[:, None] * unit_part)

    # gradient through slice means to per-vertex widths
    g_w_tilde = 2.0 * dw + 2.0 * dwn / lam_tilde[:, None]
    per_cell = g_w_tilde / decomp.cell_counts
    g_w_vert = per_cell[decomp.part_of_vertex, decomp.slice_of_vertex]
    g_mesh, g_joints_w = kernels.widths_backward(
        mesh, joints, ba, bb, decomp.part_of_vertex, g_w_vert
    )
    g_joints += g_joints_w

    g_mesh = g_mesh + model.joint_regressor.T @ g_joints
    grad = model.shape_basis.T @ g_mesh.ravel() + 2.0 * weights.mu1 * beta
    return loss, grad


def shape_loss(
    pred_widths_2d,
    target_widths_2d,
    pred_vertex_widths_2d,
    target_vertex_widths_2d,
    weights: LossWeights = LossWeights(),
) -> float:
    """Squared part-slice width error plus mu0 times squared per-vertex width error."""
    pw = np.asarray(pred_widths_2d, dtype=np.float64).ravel()
    tw = np.asarray(target_widths_2d, dtype=np.float64).ravel()
    pv = np.asarray(pred_vertex_widths_2d, dtype=np.float64).ravel()
    tv = np.asarray(target_vertex_widths_2d, dtype=np.float64).ravel()
    if pw.shape != tw.shape:
        raise ValueError(f"part width arrays differ in length: {pw.shape} vs {tw.shape}")
    if pv.shape != tv.shape:
        raise ValueError(f"vertex width arrays differ in length: {pv.shape} vs {tv.shape}")
    d_part = pw - tw
    d_vert = pv - tv
    return float((d_part * d_part).sum() + weights.mu0 * (d_vert * d_vert).sum())


# ---------------------------------------------------------------------------
# Refiner network

_NEGATIVE_SLOPE = 0.01
_NET_MAGIC = b"SKRN"


class _MLP:
    """Dense net: 4 linear layers, LeakyReLU(0.01) after the first three."""

    def __init__(self, sizes: list[int], rng: np.random.Generator | None, zero_last: bool):
        self.sizes = list(sizes)
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        for i in range(len(sizes) - 1):
            fan_in, fan_out = sizes[i], sizes[i + 1]
            last = i == len(sizes) - 2
            if rng is None:
                w = np.zeros((fan_out, fan_in))
            elif last and zero_last:
                w = np.zeros((fan_out, fan_in))
            else:
                scale = np.sqrt(2.0 / fan_in) if not last else 0.01 / np.sqrt(fan_in)
                w = rng.standard_normal((fan_out, fan_in)) * scale
            self.weights.append(w)
            self.biases.append(np.zeros(fan_out))

    def forward(self, x: np.ndarray) -> np.ndarray:
        y, _ = self.forward_with_cache(x)
        return y

    def forward_with_cache(self, x: np.ndarray):
        acts = [np.asarray(x, dtype=np.float64)]
        pre: list[np.ndarray] = []
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = acts[-1] @ w.T + b
            pre.append(z)
            if i < last:
                acts.append(np.where(z > 0, z, _NEGATIVE_SLOPE * z))
            else:
                acts.append(z)
        return acts[-1], (acts, pre)

    def backward(self, cache, grad_out: np.ndarray):
        """Gradients of sum(loss) wrt weights/biases given d(loss)/d(output)."""
        acts, pre = cache
        grads_w = [np.empty(0)] * len(self.weights)
        grads_b = [np.empty(0)] * len(self.biases)
        delta = np.asarray(grad_out, dtype=np.float64)
        for i in range(len(self.weights) - 1, -1, -1):
            grads_w[i] = delta.T @ acts[i]
            grads_b[i] = delta.sum(axis=0)
            if i > 0:
                delta = delta @ self.weights[i]
                slope = np.where(pre[i - 1] > 0, 1.0, _NEGATIVE_SLOPE)
                delta = delta * slope
        return grads_w, grads_b


@dataclass
class RefinerNet:
    """Coefficient refiner: maps descriptor evidence to shape coefficients.

    The "hybrid" variant consumes concat(beta0, l, w, delta_l, delta_w) and
    outputs a residual added to beta0; the "nn" variant consumes concat(l, w)
    and outputs coefficients directly.
    """

    variant: str
    n: int
    num_parts: int
    num_coeffs: int
    mlp: _MLP
    seed: int
    final_train_loss: float = float("nan")
    history: list = field(default_factory=list, repr=False)

    @property
    def residual(self) -> bool:
        return self.variant == "hybrid"

    @property
    def input_dim(self) -> int:
        return self.mlp.sizes[0]

    def input_vector(self, analytical: AnalyticalResult | None, target: ShapeDescriptor) -> np.ndarray:
        lw = np.concatenate([target.bone_lengths, target.slice_widths.ravel()])
        if self.variant == "nn":
            return lw
        if analytical is None:
            raise ValueError("hybrid refiner requires the analytical result")
        return np.concatenate(
            [analytical.beta0, lw, analytical.delta_l, analytical.delta_w.ravel()]
        )


def expected_input_dim(variant: str, num_parts: int, num_coeffs: int, n: int) -> int:
    bones = num_parts - 1
    if variant == "nn":
        return bones + n * num_parts
    return num_coeffs + 2 * (bones + n * num_parts)


def make_refiner(
    variant: str, num_parts: int, num_coeffs: int, n: int, seed: int, hidden: int = 512
) -> RefinerNet:
    """Freshly initialized refiner; the hybrid variant starts as the identity."""
    if variant not in ("hybrid", "nn"):
        raise ValueError(f"unknown refiner variant {variant!r}")
    rng = np.random.default_rng(seed)
    sizes = [expected_input_dim(variant, num_parts, num_coeffs, n), hidden, hidden, hidden, num_coeffs]
    mlp = _MLP(sizes, rng, zero_last=(variant == "hybrid"))
    return RefinerNet(
        variant=variant, n=n, num_parts=num_parts, num_coeffs=num_coeffs, mlp=mlp, seed=seed
    )


def refine(
    model: BodyModel,
    decomp: PartDecomposition,
    net: RefinerNet,
    analytical: AnalyticalResult | None,
    target: ShapeDescriptor,
) -> np.ndarray:
    """Refined shape coefficients for ``target``; pure function of (weights, inputs)."""
    if net.n != decomp.n or net.num_parts != decomp.num_parts or net.num_coeffs != model.num_coeffs:
        raise ValueError(
            f"refiner was trained for n={net.n}, {net.num_parts} parts, "
            f"s={net.num_coeffs}; got n={decomp.n}, {decomp.num_parts} parts, "
            f"s={model.num_coeffs}"
        )
    x = net.input_vector(analytical, target)
    if x.shape[0] != net.input_dim:
        raise ValueError(f"refiner expects input length {net.input_dim}, got {x.shape[0]}")
    out = net.mlp.forward(x[None])[0]
    if net.residual:
        return analytical.beta0 + out
    return out


# ---------------------------------------------------------------------------
# Training


@dataclass
class TrainConfig:
    """Refiner training settings; everything is seeded and single-threaded."""

    num_samples: int = 20000
    batch_size: int = 32
    noise_ratio: float = 0.0
    lr: float = 1e-3
    lr_decay_factor: float = 0.1
    lr_decay_fraction: float = 0.75
    momentum: float = 0.9
    seed: int = 0
    variant: str = "hybrid"
    hidden: int = 512
    loss_weights: LossWeights = field(default_factory=LossWeights)
    log_every: int = 0


def train_refiner(model: BodyModel, decomp: PartDecomposition, config: TrainConfig) -> RefinerNet:
    """Train a refiner on Gaussian-sampled shapes against the decomposition loss.

    Each minibatch draws fresh coefficients, extracts their descriptors
    (optionally perturbed by multiplicative noise), runs the analytical stage
    for the hybrid variant, and descends the decomposition loss with
    momentum SGD; the learning rate drops by ``lr_decay_factor`` after
    ``lr_decay_fraction`` of the iterations. Raises TrainingDivergedError on
    a non-finite loss.
    """
    rng = np.random.default_rng(config.seed)
    net = make_refiner(
        config.variant, decomp.num_parts, model.num_coeffs, decomp.n, config.seed, config.hidden
    )
    mlp = net.mlp
    iters = max(1, config.num_samples // config.batch_size)
    decay_at = int(iters * config.lr_decay_fraction)
    vel_w = [np.zeros_like(w) for w in mlp.weights]
    vel_b = [np.zeros_like(b) for b in mlp.biases]

    for it in range(iters):
        lr = config.lr * (config.lr_decay_factor if it >= decay_at else 1.0)
        betas = rng.standard_normal((config.batch_size, model.num_coeffs))
        targets: list[ShapeDescriptor] = []
        analyticals: list[AnalyticalResult | None] = []
        rows = []
        for b in range(config.batch_size):
            desc = _extract(model, decomp, shape_to_mesh(model, betas[b]))
            if config.noise_ratio > 0.0:
                noisy = np.concatenate([desc.bone_lengths, desc.slice_widths.ravel()])
                noisy = noisy * (1.0 + config.noise_ratio * rng.standard_normal(noisy.size))
                noisy = np.maximum(noisy, 1e-9)
                bones = decomp.num_parts - 1
                desc = ShapeDescriptor(
                    noisy[:bones], noisy[bones:].reshape(decomp.num_parts, decomp.n)
                )
            ana = analytical_reconstruct(model, decomp, desc) if net.residual else None
            targets.append(desc)
            analyticals.append(ana)
            rows.append(net.input_vector(ana, desc))
        x = np.stack(rows)
        out, cache = mlp.forward_with_cache(x)
        loss_sum = 0.0
        grad_out = np.empty_like(out)
        for b in range(config.batch_size):
            refined = (analyticals[b].beta0 + out[b]) if net.residual else out[b]
            value, grad = decompose_loss(model, decomp, refined, targets[b], config.loss_weights)
            loss_sum += value
            grad_out[b] = grad
        mean_loss = loss_sum / config.batch_size
        if not np.isfinite(mean_loss):
            raise TrainingDivergedError(f"loss became non-finite at iteration {it}")
        grads_w, grads_b = mlp.backward(cache, grad_out / config.batch_size)
        for i in range(len(mlp.weights)):
            vel_w[i] = config.momentum * vel_w[i] - lr * grads_w[i]
            vel_b[i] = config.momentum * vel_b[i] - lr * grads_b[i]
            mlp.weights[i] += vel_w[i]
            mlp.biases[i] += vel_b[i]
        net.history.append((it, mean_loss))
        if config.log_every and (it % config.log_every == 0 or it == iters - 1):
            print(f"iter {it:6d}  lr {lr:.2e}  loss {mean_loss:.6f}")

    net.final_train_loss = net.history[-1][1] if net.history else float("nan")
    return net


# ---------------------------------------------------------------------------
# Refiner serialization: length-prefixed JSON header + little-endian f64 blob


def save_refiner(net: RefinerNet, path: str | os.PathLike) -> None:
    header = {
        "format": "shapekit-refiner",
        "version": 1,
        "variant": net.variant,
        "layer_sizes": net.mlp.sizes,
        "negative_slope": _NEGATIVE_SLOPE,
        "n": net.n,
        "num_parts": net.num_parts,
        "num_coeffs": net.num_coeffs,
        "seed": net.seed,
        "final_train_loss": None
        if not np.isfinite(net.final_train_loss)
        else float(net.final_train_loss),
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_NET_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for w, b in zip(net.mlp.weights, net.mlp.biases):
            fh.write(np.ascontiguousarray(w, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(b, dtype="<f8").tobytes())


def load_refiner(path: str | os.PathLike) -> RefinerNet:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _NET_MAGIC:
            raise ValueError(f"{path!s} is not a refiner file (bad magic {magic!r})")
        (length,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(length).decode("utf-8"))
        sizes = [int(v) for v in header["layer_sizes"]]
        mlp = _MLP(sizes, rng=None, zero_last=False)
        for i in range(len(sizes) - 1):
            fan_in, fan_out = sizes[i], sizes[i + 1]
            w = np.frombuffer(fh.read(8 * fan_in * fan_out), dtype="<f8").reshape(fan_out, fan_in)
            b = np.frombuffer(fh.read(8 * fan_out), dtype="<f8")
            mlp.weights[i] = w.astype(np.float64)
            mlp.biases[i] = b.astype(np.float64)
    net = RefinerNet(
        variant=header["variant"],
        n=int(header["n"]),
        num_parts=int(header["num_parts"]),
        num_coeffs=int(header["num_coeffs"]),
        mlp=mlp,
        seed=int(header["seed"]),
    )
    loss = header.get("final_train_loss")
    net.final_train_loss = float("nan") if loss is None else float(loss)
    return net
