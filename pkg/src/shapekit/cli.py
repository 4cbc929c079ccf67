"""Command-line entry points (`shapekit <command> ...`)."""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from .augment import (
    AffineAugment,
    OrthoCamera,
    derive_widths_2d,
    derive_widths_3d,
    project,
    sample_augmentation,
    stretch_bones_to_projection,
    transform_2d,
)
from .convert import cross_model_fit, load_triplets
from .decompose import ShapeDescriptor, build_decomposition, extract_descriptor
from .errors import ShapekitError
from .eval_harness import ALGORITHMS, run_grid
from .meshio import load_obj, save_obj
from .model_core import (
    Pose,
    load_model,
    make_toy_model,
    pose_mesh,
    posed_joints,
    regress_joints,
    save_model,
    shape_to_mesh,
)
from .reconstruct import (
    TrainConfig,
    analytical_reconstruct,
    load_refiner,
    refine,
    save_refiner,
    train_refiner,
)


def _read_floats(path: str) -> np.ndarray:
    """Read a CSV/whitespace-separated float file; returns a flat array."""
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    values = [float(tok) for tok in text.replace(",", " ").split()]
    if not values:
        raise ValueError(f"{path}: no numbers found")
    return np.asarray(values, dtype=np.float64)


def _read_beta(path: str, num_coeffs: int) -> np.ndarray:
    beta = _read_floats(path)
    if beta.size != num_coeffs:
        raise ValueError(f"{path}: expected {num_coeffs} coefficients, found {beta.size}")
    return beta


def _read_beta_rows(path: str, num_coeffs: int) -> np.ndarray:
    flat = _read_floats(path)
    if flat.size % num_coeffs:
        raise ValueError(
            f"{path}: {flat.size} values do not divide into rows of {num_coeffs}"
        )
    return flat.reshape(-1, num_coeffs)


def _write_beta(path: str, beta: np.ndarray) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(f"{v:.17g}" for v in np.asarray(beta).ravel()) + "\n")


def _read_pose(path: str, num_joints: int) -> Pose:
    flat = _read_floats(path)
    if flat.size == 3 * num_joints + 3:
        return Pose(flat[: 3 * num_joints].reshape(num_joints, 3), flat[-3:])
    if flat.size == 3 * num_joints:
        return Pose(flat.reshape(num_joints, 3))
    raise ValueError(
        f"{path}: expected {3 * num_joints} axis-angle values "
        f"(optionally plus 3 translation values), found {flat.size}"
    )


def _parse_floats_arg(text: str, count: int, what: str) -> list[float]:
    parts = [p for p in text.split(",") if p]
    if len(parts) != count:
        raise ValueError(f"{what} needs {count} comma-separated numbers, got {text!r}")
    return [float(p) for p in parts]


def _cmd_make_toy(args) -> int:
    model = make_toy_model(args.parts, args.verts_per_part, args.seed)
    save_model(model, args.out)
    print(
        f"wrote toy model to {args.out}: K={model.num_vertices} J={model.num_joints} "
        f"s={model.num_coeffs} F={model.faces.shape[0]}"
    )
    return 0


def _cmd_validate_model(args) -> int:
    model = load_model(args.model)
    print(
        f"{args.model}: K={model.num_vertices} J={model.num_joints} "
        f"s={model.num_coeffs} F={model.faces.shape[0]} ok"
    )
    return 0


def _cmd_extract(args) -> int:
    model = load_model(args.model)
    beta = _read_beta(args.beta, model.num_coeffs)
    decomp = build_decomposition(model, args.n)
    desc = extract_descriptor(model, decomp, shape_to_mesh(model, beta))
    desc.save(args.out)
    print(f"wrote descriptor (n={args.n}, {decomp.num_parts} parts) to {args.out}")
    return 0


def _cmd_reconstruct(args) -> int:
    model = load_model(args.model)
    target = ShapeDescriptor.load(args.descriptor)
    decomp = build_decomposition(model, target.n)
    if args.analytical_only:
        beta = analytical_reconstruct(model, decomp, target).beta0
    else:
        if not args.refiner:
            raise ValueError("pass --refiner net.bin or --analytical-only")
        net = load_refiner(args.refiner)
        analytical = (
            analytical_reconstruct(model, decomp, target) if net.residual else None
        )
        beta = refine(model, decomp, net, analytical, target)
    _write_beta(args.out, beta)
    print(f"wrote {beta.size} coefficients to {args.out}")
    return 0


def _cmd_train_refiner(args) -> int:
    model = load_model(args.model)
    decomp = build_decomposition(model, args.n)
    config = TrainConfig(
        num_samples=args.samples,
        batch_size=args.batch_size,
        noise_ratio=args.noise,
        lr=args.lr,
        seed=args.seed,
        variant=args.variant,
        hidden=args.hidden,
        log_every=args.log_every,
    )
    net = train_refiner(model, decomp, config)
    save_refiner(net, args.out)
    print(
        f"trained {net.variant} refiner (n={net.n}, final loss {net.final_train_loss:.6f}), "
        f"wrote {args.out}"
    )
    return 0


def _cmd_augment(args) -> int:
    model = load_model(args.model)
    beta = _read_beta(args.beta, model.num_coeffs)
    pose = _read_pose(args.pose, model.num_joints)
    decomp = build_decomposition(model, args.n)

    s, ox, oy = _parse_floats_arg(args.cam, 3, "--cam")
    cam = OrthoCamera(scale=s, offset=(ox, oy))
    if args.aug is not None:
        a, b, phi = _parse_floats_arg(args.aug, 3, "--aug")
        aug = AffineAugment(a=a, b=b, phi=phi)
    elif args.sample_aug is not None:
        aug = sample_augmentation(np.random.default_rng(args.sample_aug))
    else:
        raise ValueError("pass --aug a,b,phi or --sample-aug SEED")
    s_bar = args.sbar if args.sbar is not None else s

    rest_mesh = shape_to_mesh(model, beta)
    rest_joints = regress_joints(model, rest_mesh)
    mesh_posed = pose_mesh(model, rest_mesh, pose)
    joints_posed = posed_joints(model, rest_mesh, pose)
    desc = extract_descriptor(model, decomp, rest_mesh)

    before = project(model, decomp, mesh_posed, joints_posed, cam)
    after = transform_2d(before, aug)
    lengths = stretch_bones_to_projection(
        model, rest_joints, joints_posed, before, after, OrthoCamera(scale=s_bar)
    )
    widths_3d = derive_widths_3d(desc, before, aug, s=s, s_bar=s_bar)
    widths_2d = derive_widths_2d(before, aug)

    payload = {
        "aug": {"a": aug.a, "b": aug.b, "phi": aug.phi},
        "scale_before": s,
        "scale_after": s_bar,
        "n": decomp.n,
        "bone_lengths": [float(v) for v in lengths],
        "slice_widths": [[float(v) for v in row] for row in widths_3d],
        "widths_2d": [float(v) for v in widths_2d],
        "joints_2d": [[float(v) for v in row] for row in after.joints_2d],
    }
    with open(args.out, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"wrote augmented annotations (a={aug.a:.4f}, b={aug.b:.4f}) to {args.out}")
    return 0


def _cmd_convert(args) -> int:
    src_mesh, _ = load_obj(args.src_mesh)
    h_src = load_triplets(args.h_src, num_cols=src_mesh.shape[0])
    dst_model = load_model(args.dst_model)
    h_dst = load_triplets(args.h_dst, num_cols=dst_model.num_vertices)
    result = cross_model_fit(src_mesh, h_src, dst_model, h_dst, ridge=args.ridge)
    result.save(args.out)
    print(
        f"wrote conversion (residual_rms={result.residual_rms:.3e}, "
        f"gram_condition={result.gram_condition:.3e}) to {args.out}"
    )
    return 0


def _cmd_eval_noise(args) -> int:
    model = load_model(args.model)
    ns = [int(v) for v in args.ns.split(",") if v]
    ratios = [float(v) for v in args.ratios.split(",") if v]
    algorithms = [v for v in args.algorithms.split(",") if v]
    if args.shapes:
        shapes = _read_beta_rows(args.shapes, model.num_coeffs)
    else:
        rng = np.random.default_rng(args.shape_seed)
        shapes = rng.standard_normal((args.num_shapes, model.num_coeffs))
    refiners = {}
    for algorithm in algorithms:
        if algorithm in ("hybrid", "nn"):
            if not args.refiner_dir:
                raise ValueError(f"algorithm {algorithm!r} needs --refiner-dir")
            for n in ns:
                path = f"{args.refiner_dir}/{algorithm}_n{n}.bin"
                refiners[(algorithm, n)] = load_refiner(path)
    report = run_grid(
        model,
        shapes,
        algorithms,
        ns,
        ratios,
        seed=args.seed,
        refiners=refiners,
        noise_kind=args.noise_kind,
        noise_target=args.noise_on,
    )
    base = args.out
    for ext in (".csv", ".json"):
        if base.endswith(ext):
            base = base[: -len(ext)]
    report.save_csv(base + ".csv")
    report.save_json(base + ".json")
    print(f"wrote {base}.csv and {base}.json ({len(report.cells)} grid cells)")
    return 0


def _cmd_export_obj(args) -> int:
    model = load_model(args.model)
    beta = _read_beta(args.beta, model.num_coeffs)
    mesh = shape_to_mesh(model, beta)
    if args.pose:
        mesh = pose_mesh(model, mesh, _read_pose(args.pose, model.num_joints))
    save_obj(args.out, mesh, model.faces)
    print(f"wrote {mesh.shape[0]} vertices, {model.faces.shape[0]} faces to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="shapekit",
        description="Part-based body-shape descriptors: extract, reconstruct, augment, convert, evaluate.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-toy", help="generate the synthetic capsule-chain model")
    p.add_argument("--parts", type=int, default=12)
    p.add_argument("--verts-per-part", type=int, default=48)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output model directory")
    p.set_defaults(func=_cmd_make_toy)

    p = sub.add_parser("validate-model", help="load a model directory and check its invariants")
    p.add_argument("--model", required=True)
    p.set_defaults(func=_cmd_validate_model)

    p = sub.add_parser("extract", help="extract a bone-length / slice-width descriptor")
    p.add_argument("--model", required=True, help="model directory")
    p.add_argument("--beta", required=True, help="CSV of shape coefficients")
    p.add_argument("--n", type=int, required=True, help="slices per part")
    p.add_argument("--out", required=True, help="output descriptor.json")
    p.set_defaults(func=_cmd_extract)

    p = sub.add_parser("reconstruct", help="recover shape coefficients from a descriptor")
    p.add_argument("--model", required=True)
    p.add_argument("--descriptor", required=True)
    p.add_argument("--refiner", help="trained refiner net.bin")
    p.add_argument("--analytical-only", action="store_true")
    p.add_argument("--out", required=True, help="output beta.csv")
    p.set_defaults(func=_cmd_reconstruct)

    p = sub.add_parser("train-refiner", help="train a coefficient refiner")
    p.add_argument("--model", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--samples", type=int, default=20000)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--variant", choices=("hybrid", "nn"), default="hybrid")
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--hidden", type=int, default=512)
    p.add_argument("--log-every", type=int, default=0)
    p.add_argument("--out", required=True, help="output net.bin")
    p.set_defaults(func=_cmd_train_refiner)

    p = sub.add_parser("augment", help="affine-augment projected annotations")
    p.add_argument("--model", required=True)
    p.add_argument("--beta", required=True)
    p.add_argument("--pose", required=True, help="CSV of J axis-angle triples (+ optional translation)")
    p.add_argument("--n", type=int, default=1, help="slices per part")
    p.add_argument("--cam", required=True, help="s,ox,oy orthographic scale and pixel offset")
    p.add_argument("--aug", help="a,b,phi affine parameters")
    p.add_argument("--sample-aug", type=int, help="draw the augmentation from seed")
    p.add_argument("--sbar", type=float, help="post-transform projection scale (default: s)")
    p.add_argument("--out", required=True, help="output aug.json")
    p.set_defaults(func=_cmd_augment)

    p = sub.add_parser("convert", help="fit destination coefficients to source sample points")
    p.add_argument("--src-mesh", required=True, help="source mesh .obj")
    p.add_argument("--h-src", required=True, help="source point regressor triplets")
    p.add_argument("--dst-model", required=True, help="destination model directory")
    p.add_argument("--h-dst", required=True, help="destination point regressor triplets")
    p.add_argument("--ridge", type=float, default=1e-10)
    p.add_argument("--out", required=True, help="output result.json")
    p.set_defaults(func=_cmd_convert)

    p = sub.add_parser("eval-noise", help="noise-robustness grid over algorithms, n, ratios")
    p.add_argument("--model", required=True)
    p.add_argument("--refiner-dir", help="directory holding <algorithm>_n<N>.bin refiners")
    p.add_argument("--ns", required=True, help="comma list of slice counts")
    p.add_argument("--ratios", required=True, help="comma list of noise ratios")
    p.add_argument("--algorithms", default="analytical,hybrid,nn", help=f"subset of {ALGORITHMS}")
    p.add_argument("--shapes", help="CSV of evaluation coefficients (rows of s values)")
    p.add_argument("--num-shapes", type=int, default=100, help="Gaussian shapes when --shapes is absent")
    p.add_argument("--shape-seed", type=int, default=12345, help="seed for sampled shapes")
    p.add_argument("--seed", type=int, default=0, help="noise seed")
    p.add_argument("--noise-kind", choices=("gaussian", "uniform"), default="gaussian")
    p.add_argument("--noise-on", choices=("both", "lengths", "widths"), default="both")
    p.add_argument("--out", required=True, help="output base path (writes base.csv and base.json)")
    p.set_defaults(func=_cmd_eval_noise)

    p = sub.add_parser("export-obj", help="write the mesh for coefficients as ASCII OBJ")
    p.add_argument("--model", required=True)
    p.add_argument("--beta", required=True)
    p.add_argument("--pose", help="optional pose CSV to apply before export")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_export_obj)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ShapekitError, ValueError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
