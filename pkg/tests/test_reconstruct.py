import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

import oracles
from shapekit import (
    LossWeights,
    ShapeDescriptor,
    TrainConfig,
    TrainingDivergedError,
    analytical_reconstruct,
    build_decomposition,
    decompose_loss,
    extract_descriptor,
    load_refiner,
    make_refiner,
    make_toy_model,
    refine,
    regress_joints,
    shape_loss,
    shape_to_mesh,
    stretch_skeleton,
    toy_reference,
    train_refiner,
)
from shapekit.decompose import bone_lengths, part_target_lengths, slice_mean_widths, vertex_widths
from shapekit.reconstruct import expected_input_dim, project_to_shape_coeffs, save_refiner


def _random_descriptor(model, decomp, rng, scale=1.0):
    beta = scale * rng.standard_normal(model.num_coeffs)
    return extract_descriptor(model, decomp, shape_to_mesh(model, beta)), beta


def _stretch_by_loops(parents, joints, lengths_by_nonroot):
    non_root = [q for q in range(len(parents)) if parents[q] >= 0]
    slot = {q: i for i, q in enumerate(non_root)}
    out = np.array(joints, dtype=float)
    remaining = list(range(len(parents)))
    done = {q for q in remaining if parents[q] == -1}
    while len(done) < len(parents):
        for q in remaining:
            if q in done or parents[q] not in done:
                continue
            d = joints[q] - joints[parents[q]]
            d = d / np.linalg.norm(d)
            out[q] = out[parents[q]] + lengths_by_nonroot[slot[q]] * d
            done.add(q)
    return out


class TestStretchSkeleton:
    def test_reaches_target_lengths(self, toy_model, rng):
        joints = regress_joints(toy_model, toy_model.template_vertices)
        for _ in range(10):
            targets = rng.uniform(0.05, 0.6, toy_model.num_joints - 1)
            stretched = stretch_skeleton(toy_model, joints, targets)
            assert_allclose(bone_lengths(toy_model, stretched), targets, rtol=1e-12)

    def test_root_stays_fixed(self, toy_model, rng):
        joints = regress_joints(toy_model, toy_model.template_vertices)
        stretched = stretch_skeleton(toy_model, joints, rng.uniform(0.1, 0.5, 11))
        assert_array_equal(stretched[toy_model.root], joints[toy_model.root])

    def test_directions_preserved(self, toy_model, rng):
        joints = regress_joints(toy_model, toy_model.template_vertices)
        targets = rng.uniform(0.05, 0.6, 11)
        stretched = stretch_skeleton(toy_model, joints, targets)
        for q in range(1, toy_model.num_joints):
            p = toy_model.parents[q]
            before = joints[q] - joints[p]
            after = stretched[q] - stretched[p]
            cos = (before @ after) / (np.linalg.norm(before) * np.linalg.norm(after))
            assert cos == pytest.approx(1.0, abs=1e-12)

    def test_identity_when_targets_match(self, toy_model):
        joints = regress_joints(toy_model, toy_model.template_vertices)
        stretched = stretch_skeleton(toy_model, joints, bone_lengths(toy_model, joints))
        assert_allclose(stretched, joints, atol=1e-12)

    def test_matches_loop_oracle(self, toy_model, rng):
        joints = regress_joints(
            toy_model, shape_to_mesh(toy_model, rng.standard_normal(toy_model.num_coeffs))
        )
        targets = rng.uniform(0.05, 0.6, 11)
        assert_allclose(
            stretch_skeleton(toy_model, joints, targets),
            _stretch_by_loops(toy_model.parents, joints, targets),
            atol=1e-12,
        )

    def test_zero_length_bone_rejected(self, toy_model):
        joints = regress_joints(toy_model, toy_model.template_vertices).copy()
        joints[3] = joints[2]
        with pytest.raises(ValueError):
            stretch_skeleton(toy_model, joints, np.full(11, 0.2))


class TestProjection:
    def test_satisfies_normal_equations(self, toy_model, rng):
        basis = toy_model.shape_basis
        for _ in range(10):
            d = rng.standard_normal(3 * toy_model.num_vertices)
            beta = project_to_shape_coeffs(toy_model, d.reshape(-1, 3))
            rhs = basis.T @ d
            residual = (basis.T @ basis + 1e-6 * np.eye(toy_model.num_coeffs)) @ beta - rhs
            assert np.abs(residual).max() <= 1e-8 * (1.0 + np.abs(rhs).max())

    def test_matches_stacked_lstsq_oracle(self, toy_model, rng):
        for _ in range(5):
            d = rng.standard_normal(3 * toy_model.num_vertices)
            beta = project_to_shape_coeffs(toy_model, d.reshape(-1, 3))
            expected = oracles.ridge_least_squares(toy_model.shape_basis, d, 1e-6)
            assert_allclose(beta, expected, atol=1e-9)


class TestAnalyticalReconstruct:
    def test_template_descriptor_is_fixed_point(self, toy_model, toy_decomp):
        target = extract_descriptor(toy_model, toy_decomp, toy_model.template_vertices)
        res = analytical_reconstruct(toy_model, toy_decomp, target)
        assert np.abs(res.beta0).max() < 1e-6
        assert np.abs(res.delta_l).max() < 1e-8
        assert np.abs(res.delta_w).max() < 1e-8
        assert_allclose(res.deformed_template, toy_model.template_vertices, atol=1e-9)

    def test_doubled_widths_recover_width_coefficient(self):
        dense = make_toy_model(12, 384, 0)
        decomp = build_decomposition(dense, 1)
        desc = extract_descriptor(dense, decomp, dense.template_vertices)
        target = ShapeDescriptor(desc.bone_lengths, 2.0 * desc.slice_widths)
        res = analytical_reconstruct(dense, decomp, target)
        ideal = np.zeros(dense.num_coeffs)
        ideal[0] = 1.0 / toy_reference(12, 384, 0).width_coef
        assert np.abs(res.beta0 - ideal).max() < 1e-6

    def test_residuals_are_target_minus_achieved(self, toy_model, toy_decomp, rng):
        target, _ = _random_descriptor(toy_model, toy_decomp, rng, scale=0.5)
        res = analytical_reconstruct(toy_model, toy_decomp, target)
        again = extract_descriptor(toy_model, toy_decomp, shape_to_mesh(toy_model, res.beta0))
        assert_allclose(res.delta_l, target.bone_lengths - again.bone_lengths, atol=1e-12)
        assert_allclose(res.delta_w, target.slice_widths - again.slice_widths, atol=1e-12)

    def test_beta0_solves_projection_of_deformation(self, toy_model, toy_decomp, rng):
        target, _ = _random_descriptor(toy_model, toy_decomp, rng, scale=0.5)
        res = analytical_reconstruct(toy_model, toy_decomp, target)
        expected = oracles.ridge_least_squares(
            toy_model.shape_basis,
            (res.deformed_template - toy_model.template_vertices).ravel(),
            1e-6,
        )
        assert_allclose(res.beta0, expected, atol=1e-9)

    def test_stretched_lengths_visible_in_deformed_template(self, toy_model, toy_decomp, rng):
        target, _ = _random_descriptor(toy_model, toy_decomp, rng, scale=0.5)
        res = analytical_reconstruct(toy_model, toy_decomp, target)
        joints = regress_joints(toy_model, res.deformed_template)
        assert_allclose(bone_lengths(toy_model, joints), target.bone_lengths, rtol=1e-6)

    def test_descriptor_shape_mismatch_rejected(self, toy_model, toy_decomp):
        bad = ShapeDescriptor(np.full(11, 0.2), np.full((12, 2), 0.3))
        with pytest.raises(ValueError):
            analytical_reconstruct(toy_model, toy_decomp, bad)


class TestDecomposeLoss:
    def _loss_by_loops(self, model, decomp, beta, target, mu1):
        mesh = shape_to_mesh(model, beta)
        joints = regress_joints(model, mesh)
        x_hat = _stretch_by_loops(
            model.parents,
            regress_joints(model, model.template_vertices),
            target.bone_lengths,
        )
        lengths, widths = oracles.descriptor_by_loops(
            mesh,
            joints,
            model.parents,
            decomp.part_of_vertex,
            decomp.bone_of_part,
            decomp.slice_of_vertex,
            decomp.n,
        )
        lam = np.array(
            [
                np.linalg.norm(joints[b] - joints[a])
                for a, b in decomp.bone_of_part
            ]
        )
        lam_hat = part_target_lengths(model, decomp, target.bone_lengths)
        value = float(np.abs(joints - x_hat).sum())
        value += float(np.abs(lengths - target.bone_lengths).sum())
        value += float(((widths - target.slice_widths) ** 2).sum())
        value += float(
            ((widths / lam[:, None] - target.slice_widths / lam_hat[:, None]) ** 2).sum()
        )
        value += mu1 * float(beta @ beta)
        return value

    def test_value_matches_loop_oracle(self, toy_model, toy_decomp, rng):
        for _ in range(5):
            target, _ = _random_descriptor(toy_model, toy_decomp, rng)
            beta = rng.standard_normal(toy_model.num_coeffs)
            value, _ = decompose_loss(toy_model, toy_decomp, beta, target)
            expected = self._loss_by_loops(toy_model, toy_decomp, beta, target, 0.01)
            assert value == pytest.approx(expected, rel=1e-10)

    def test_loss_at_exact_match_is_regularizer_only(self, toy_model, toy_decomp, rng):
        beta = 0.5 * rng.standard_normal(toy_model.num_coeffs)
        target = extract_descriptor(toy_model, toy_decomp, shape_to_mesh(toy_model, beta))
        value, _ = decompose_loss(toy_model, toy_decomp, beta, target)
        assert value == pytest.approx(0.01 * float(beta @ beta), abs=1e-7)

    def test_gradient_matches_finite_differences_at_generic_points(
        self, toy_model, toy_decomp, rng
    ):
        # Generic points only: the two L1 terms are non-differentiable where a
        # residual crosses zero, so points near an optimum are excluded by design.
        checked = 0
        for _ in range(3):
            target, _ = _random_descriptor(toy_model, toy_decomp, rng)
            beta = rng.standard_normal(toy_model.num_coeffs)
            _, grad = decompose_loss(toy_model, toy_decomp, beta, target)

            def value_of(b):
                v, _ = decompose_loss(toy_model, toy_decomp, b, target)
                return v

            fd = oracles.finite_difference_gradient(value_of, beta, eps=1e-6)
            scale = max(1.0, np.abs(fd).max())
            assert_allclose(grad, fd, atol=1e-4 * scale)
            checked += beta.size
        assert checked >= 18

    def test_custom_mu1_scales_regularizer(self, toy_model, toy_decomp, rng):
        target, _ = _random_descriptor(toy_model, toy_decomp, rng)
        beta = rng.standard_normal(toy_model.num_coeffs)
        v1, g1 = decompose_loss(toy_model, toy_decomp, beta, target, LossWeights(mu1=0.0))
        v2, g2 = decompose_loss(toy_model, toy_decomp, beta, target, LossWeights(mu1=2.0))
        assert v2 - v1 == pytest.approx(2.0 * float(beta @ beta), rel=1e-12)
        assert_allclose(g2 - g1, 4.0 * beta, atol=1e-12)

    def test_negative_weights_rejected(self):
        with pytest.raises(ValueError):
            LossWeights(mu1=-0.1)


class TestShapeLoss:
    def test_value(self, rng):
        pw, tw = rng.standard_normal(8), rng.standard_normal(8)
        pv, tv = rng.standard_normal(30), rng.standard_normal(30)
        expected = float(((pw - tw) ** 2).sum() + 0.01 * ((pv - tv) ** 2).sum())
        assert shape_loss(pw, tw, pv, tv) == pytest.approx(expected, rel=1e-12)

    def test_shape_mismatch_rejected(self, rng):
        with pytest.raises(ValueError):
            shape_loss(np.zeros(3), np.zeros(4), np.zeros(2), np.zeros(2))
        with pytest.raises(ValueError):
            shape_loss(np.zeros(3), np.zeros(3), np.zeros(2), np.zeros(5))


class TestRefiner:
    def test_untrained_hybrid_is_identity_on_analytical(self, toy_model, toy_decomp, rng):
        net = make_refiner("hybrid", 12, toy_model.num_coeffs, 3, seed=5)
        target, _ = _random_descriptor(toy_model, toy_decomp, rng, scale=0.5)
        res = analytical_reconstruct(toy_model, toy_decomp, target)
        out = refine(toy_model, toy_decomp, net, res, target)
        assert_array_equal(out, res.beta0)

    def test_input_dimensions(self, toy_model):
        s = toy_model.num_coeffs
        hybrid = make_refiner("hybrid", 12, s, 3, seed=0)
        nn = make_refiner("nn", 12, s, 3, seed=0)
        assert hybrid.input_dim == expected_input_dim("hybrid", 12, s, 3) == s + 2 * (11 + 36)
        assert nn.input_dim == expected_input_dim("nn", 12, s, 3) == 11 + 36
        assert hybrid.mlp.sizes == [hybrid.input_dim, 512, 512, 512, s]

    def test_unknown_variant_rejected(self):
        with pytest.raises(ValueError):
            make_refiner("transformer", 12, 6, 3, seed=0)

    def test_hybrid_without_analytical_rejected(self, toy_model, toy_decomp, rng):
        net = make_refiner("hybrid", 12, toy_model.num_coeffs, 3, seed=0)
        target, _ = _random_descriptor(toy_model, toy_decomp, rng)
        with pytest.raises(ValueError):
            refine(toy_model, toy_decomp, net, None, target)

    def test_mismatched_decomposition_rejected(self, toy_model, toy_decomp, toy_decomp_n1, rng):
        net = make_refiner("nn", 12, toy_model.num_coeffs, 1, seed=0)
        target, _ = _random_descriptor(toy_model, toy_decomp, rng)
        with pytest.raises(ValueError):
            refine(toy_model, toy_decomp, net, None, target)

    def test_refine_is_pure(self, toy_model, toy_decomp_n1, rng):
        net = make_refiner("nn", 12, toy_model.num_coeffs, 1, seed=9)
        before = [w.copy() for w in net.mlp.weights]
        target, _ = _random_descriptor(toy_model, toy_decomp_n1, rng, scale=0.5)
        first = refine(toy_model, toy_decomp_n1, net, None, target)
        second = refine(toy_model, toy_decomp_n1, net, None, target)
        assert_array_equal(first, second)
        for w_before, w_now in zip(before, net.mlp.weights):
            assert_array_equal(w_before, w_now)

    def test_forward_matches_plain_loop_mlp(self, toy_model, toy_decomp_n1, rng):
        net = make_refiner("nn", 12, toy_model.num_coeffs, 1, seed=11)
        target, _ = _random_descriptor(toy_model, toy_decomp_n1, rng, scale=0.5)
        x = net.input_vector(None, target)
        expected = oracles.dense_layer_stack(x, net.mlp.weights, net.mlp.biases, negative_slope=0.01)
        out = refine(toy_model, toy_decomp_n1, net, None, target)
        assert_allclose(out, expected, atol=1e-12)


class TestTraining:
    def test_deterministic(self, small_model):
        decomp = build_decomposition(small_model, 1)
        cfg = TrainConfig(num_samples=192, batch_size=32, seed=7, variant="nn", hidden=32)
        a = train_refiner(small_model, decomp, cfg)
        b = train_refiner(small_model, decomp, cfg)
        for wa, wb in zip(a.mlp.weights, b.mlp.weights):
            assert_array_equal(wa, wb)
        assert a.history == b.history

    def test_nn_training_reduces_loss(self, small_model):
        decomp = build_decomposition(small_model, 1)
        cfg = TrainConfig(num_samples=640, batch_size=32, seed=3, variant="nn", hidden=64)
        net = train_refiner(small_model, decomp, cfg)
        assert net.history[-1][1] < net.history[0][1]
        assert net.final_train_loss == net.history[-1][1]
        assert len(net.history) == 640 // 32

    def test_divergence_detected(self, small_model):
        decomp = build_decomposition(small_model, 1)
        cfg = TrainConfig(num_samples=192, batch_size=32, seed=3, variant="nn", lr=1e9, hidden=32)
        with pytest.raises(TrainingDivergedError), np.errstate(all="ignore"):
            train_refiner(small_model, decomp, cfg)


class TestRefinerSerialization:
    def test_round_trip_preserves_forward(self, small_model, rng, tmp_path):
        decomp = build_decomposition(small_model, 1)
        cfg = TrainConfig(num_samples=96, batch_size=32, seed=1, variant="hybrid", hidden=32)
        net = train_refiner(small_model, decomp, cfg)
        path = tmp_path / "net.bin"
        save_refiner(net, path)
        loaded = load_refiner(path)
        assert loaded.variant == net.variant
        assert loaded.n == net.n
        assert loaded.num_parts == net.num_parts
        assert loaded.num_coeffs == net.num_coeffs
        assert loaded.final_train_loss == net.final_train_loss
        for wa, wb in zip(net.mlp.weights, loaded.mlp.weights):
            assert_array_equal(wa, wb)
        x = rng.standard_normal(net.input_dim)
        assert_array_equal(net.mlp.forward(x[None]), loaded.mlp.forward(x[None]))

    def test_saved_bytes_deterministic(self, small_model, tmp_path):
        decomp = build_decomposition(small_model, 1)
        net = make_refiner("nn", 5, small_model.num_coeffs, 1, seed=2, hidden=16)
        save_refiner(net, tmp_path / "a.bin")
        save_refiner(load_refiner(tmp_path / "a.bin"), tmp_path / "b.bin")
        assert (tmp_path / "a.bin").read_bytes() == (tmp_path / "b.bin").read_bytes()

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "junk.bin"
        path.write_bytes(b"NOPE" + b"\x00" * 64)
        with pytest.raises(ValueError):
            load_refiner(path)
