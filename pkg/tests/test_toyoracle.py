import numpy as np
import pytest

from conftest import random_state
from ogd.geomstate import project_zero_cog, random_rotation
from ogd.toyoracle import (
    Bond,
    LennardJones,
    ToyPotential,
    evaluate,
    evaluate_batch,
    harmonic_chain,
    hessian_vector_product,
    objective,
    objective_batch,
    objective_gradient,
    radius_of_gyration,
    relax,
    relax_batch,
)

PAIR = ToyPotential((Bond(0, 1, 1.0, 1.0),))


def fd_gradient(pot, pos, h=1e-6):
    """Independent oracle: central finite differences of the energy."""
    grad = np.zeros_like(pos)
    for i in range(pos.shape[0]):
        for c in range(3):
            p, m = pos.copy(), pos.copy()
            p[i, c] += h
            m[i, c] -= h
            grad[i, c] = (evaluate(pot, p).energy - evaluate(pot, m).energy) / (2 * h)
    return grad


class TestEvaluate:
    def test_stretched_bond(self):
        pos = np.array([[0.0, 0, 0], [2.0, 0, 0]])
        ev = evaluate(PAIR, pos)
        assert ev.energy == pytest.approx(0.5)
        np.testing.assert_allclose(np.linalg.norm(ev.gradient, axis=1), [1.0, 1.0])
        np.testing.assert_allclose(ev.gradient, [[-1.0, 0, 0], [1.0, 0, 0]])

    def test_rest_length(self):
        pos = np.array([[0.0, 0, 0], [1.0, 0, 0]])
        ev = evaluate(PAIR, pos)
        assert ev.energy == pytest.approx(0.0, abs=1e-15)
        np.testing.assert_allclose(ev.gradient, 0.0, atol=1e-15)

    def test_lj_minimum(self):
        pot = ToyPotential((), lj=LennardJones(epsilon=0.7, sigma=1.1, cutoff=10.0))
        r = 2.0 ** (1 / 6) * 1.1
        ev = evaluate(pot, np.array([[0.0, 0, 0], [r, 0, 0]]))
        assert ev.energy == pytest.approx(-0.7, rel=1e-12)
        np.testing.assert_allclose(ev.gradient, 0.0, atol=1e-12)

    def test_coincident_soft_failure(self):
        pot = ToyPotential((), lj=LennardJones(1.0, 1.0, 5.0))
        ev = evaluate(pot, np.array([[0.0, 0, 0], [1e-12, 0, 0]]))
        assert not ev.converged
        np.testing.assert_array_equal(ev.gradient, 0.0)

    def test_index_out_of_range(self):
        with pytest.raises(ValueError):
            evaluate(ToyPotential((Bond(0, 5, 1.0, 1.0),)), np.zeros((2, 3)))

    def test_validation(self):
        with pytest.raises(ValueError):
            ToyPotential((Bond(0, 0, 1.0, 1.0),))
        with pytest.raises(ValueError):
            ToyPotential((Bond(0, 1, -1.0, 1.0),))
        with pytest.raises(ValueError):
            ToyPotential((), lj=LennardJones(-0.1, 1.0, 1.0))

    def test_gradient_matches_finite_differences(self, testbed_potential):
        rng = np.random.default_rng(11)
        pot = harmonic_chain(5, k=2.0, r0=1.0, lj=LennardJones(0.3, 0.8, 3.0))
        for _ in range(10):
            pos = random_state(rng, 5, min_dist=0.4, spread=1.2)
            ev = evaluate(pot, pos)
            ref = fd_gradient(pot, pos)
            np.testing.assert_allclose(ev.gradient, ref, rtol=1e-5, atol=1e-8)

    def test_symmetries(self):
        rng = np.random.default_rng(12)
        pot = harmonic_chain(5, k=1.5, r0=1.1, lj=LennardJones(0.2, 0.9, 4.0))
        pos = random_state(rng, 5, min_dist=0.5)
        ev = evaluate(pot, pos)
        # translation invariance is exact
        shifted = evaluate(pot, pos + np.array([2.0, -1.0, 0.5]))
        assert shifted.energy == ev.energy
        # rotation invariance and force covariance
        r = random_rotation(rng)
        rotated = evaluate(pot, pos @ r.T)
        assert rotated.energy == pytest.approx(ev.energy, abs=1e-10)
        np.testing.assert_allclose(rotated.gradient, ev.gradient @ r.T, atol=1e-10)
        # internal forces sum to zero
        np.testing.assert_allclose(ev.gradient.sum(axis=0), 0.0, atol=1e-10)

    def test_batch_matches_single(self):
        rng = np.random.default_rng(13)
        pot = harmonic_chain(4, lj=LennardJones(0.1, 0.9, 4.0))
        batch = np.stack([random_state(rng, 4) for _ in range(8)])
        e, g, ok = evaluate_batch(pot, batch)
        for i in range(8):
            ev = evaluate(pot, batch[i])
            assert e[i] == ev.energy
            np.testing.assert_array_equal(g[i], ev.gradient)
            assert bool(ok[i]) == ev.converged


class TestObjective:
    def test_zero_forces(self):
        assert objective(PAIR, np.array([[0.0, 0, 0], [1.0, 0, 0]])) == pytest.approx(0.0, abs=1e-15)

    def test_two_atom_example(self):
        # two unit forces along one axis: sqrt(2 / 6)
        val = objective(PAIR, np.array([[0.0, 0, 0], [2.0, 0, 0]]))
        assert val == pytest.approx(0.577350, abs=1e-6)

    def test_invalid_returns_zero(self):
        pot = ToyPotential((), lj=LennardJones(1.0, 1.0, 5.0))
        assert objective(pot, np.array([[0.0, 0, 0], [1e-12, 0, 0]])) == 0.0

    def test_mean_norm_is_zero_for_internal_forces(self):
        rng = np.random.default_rng(14)
        pot = harmonic_chain(4, lj=LennardJones(0.2, 0.9, 4.0))
        pos = random_state(rng, 4)
        assert objective(pot, pos, "mean-norm") == pytest.approx(0.0, abs=1e-12)

    def test_unknown_scalarization(self):
        with pytest.raises(ValueError):
            objective(PAIR, np.zeros((2, 3)), "max")


class TestObjectiveGradient:
    def test_matches_finite_differences(self):
        rng = np.random.default_rng(15)
        pot = harmonic_chain(5, k=3.0, r0=1.0, lj=LennardJones(0.2, 0.8, 3.5))

        def fd(pos, h=1e-6):
            out = np.zeros_like(pos)
            for i in range(pos.shape[0]):
                for c in range(3):
                    p, m = pos.copy(), pos.copy()
                    p[i, c] += h
                    m[i, c] -= h
                    out[i, c] = (objective(pot, p) - objective(pot, m)) / (2 * h)
            return out

        for _ in range(5):
            pos = random_state(rng, 5, min_dist=0.5)
            np.testing.assert_allclose(objective_gradient(pot, pos), fd(pos), rtol=1e-5, atol=1e-8)

    def test_zero_force_point_degenerate(self):
        np.testing.assert_array_equal(
            objective_gradient(PAIR, np.array([[0.0, 0, 0], [1.0, 0, 0]])), 0.0
        )

    def test_hvp_matches_gradient_differences(self):
        rng = np.random.default_rng(16)
        pot = harmonic_chain(4, k=2.0, lj=LennardJones(0.3, 0.8, 3.0))
        pos = random_state(rng, 4, min_dist=0.5)
        v = rng.standard_normal((4, 3))
        h = 1e-6
        ref = (evaluate(pot, pos + h * v).gradient - evaluate(pot, pos - h * v).gradient) / (2 * h)
        np.testing.assert_allclose(hessian_vector_product(pot, pos, v), ref, rtol=1e-5, atol=1e-8)


class TestRelax:
    def test_harmonic_pair_relaxes_to_rest_length(self):
        res = relax(PAIR, np.array([[0.0, 0, 0], [2.0, 0, 0]]), max_iters=500, tol=1e-6)
        assert res.converged
        assert np.linalg.norm(res.positions[0] - res.positions[1]) == pytest.approx(1.0, abs=1e-4)
        assert res.energy < 1e-8

    def test_start_at_minimum_no_movement(self):
        start = project_zero_cog(np.array([[0.0, 0, 0], [1.0, 0, 0]]))
        res = relax(PAIR, start, max_iters=100, tol=1e-6)
        assert res.converged and res.iterations == 0
        np.testing.assert_allclose(res.positions, start, atol=1e-15)

    def test_lj_cluster_descends(self):
        rng = np.random.default_rng(17)
        pot = ToyPotential((), lj=LennardJones(1.0, 1.0, 6.0))
        pos = random_state(rng, 4, min_dist=0.8, spread=1.6)
        e0 = evaluate(pot, pos).energy
        res = relax(pot, pos, max_iters=3000, tol=1e-6)
        assert res.converged
        assert res.energy <= e0
        rms = np.sqrt(np.mean(evaluate(pot, res.positions).gradient ** 2))
        assert rms < 1e-6

    def test_energy_monotone_in_iteration_budget(self):
        rng = np.random.default_rng(18)
        pot = harmonic_chain(4, k=4.0, lj=LennardJones(0.1, 0.9, 4.0))
        pos = random_state(rng, 4, min_dist=0.6)
        energies = [relax(pot, pos, max_iters=k, tol=1e-12).energy for k in range(0, 30, 3)]
        assert all(b <= a + 1e-12 for a, b in zip(energies, energies[1:]))

    def test_invalid_start_returns_unconverged(self):
        pot = ToyPotential((), lj=LennardJones(1.0, 1.0, 5.0))
        res = relax(pot, np.array([[0.0, 0, 0], [1e-12, 0, 0]]))
        assert not res.converged and res.iterations == 0

    def test_result_is_centered(self):
        res = relax(PAIR, np.array([[10.0, 0, 0], [12.0, 0, 0]]), max_iters=500, tol=1e-6)
        np.testing.assert_allclose(res.positions.mean(axis=0), 0.0, atol=1e-12)

    def test_batch_matches_single(self):
        rng = np.random.default_rng(19)
        pot = harmonic_chain(4, k=4.0, lj=LennardJones(0.1, 0.9, 4.0))
        batch = np.stack([random_state(rng, 4, min_dist=0.6) for _ in range(6)])
        out = relax_batch(pot, batch, max_iters=200, tol=1e-5)
        for i in range(6):
            ref = relax(pot, batch[i], max_iters=200, tol=1e-5)
            assert out.converged[i] == ref.converged
            np.testing.assert_allclose(out.positions[i], ref.positions, atol=1e-10)
            assert out.energy[i] == pytest.approx(ref.energy, abs=1e-12)


class TestRadiusOfGyration:
    def test_two_atom_example(self):
        val, grad = radius_of_gyration(np.array([[1.0, 0, 0], [-1.0, 0, 0]]))
        assert val == pytest.approx(1.0)
        np.testing.assert_allclose(grad[0], [0.5, 0, 0], atol=1e-15)

    def test_degenerate_origin(self):
        val, grad = radius_of_gyration(np.zeros((3, 3)))
        assert val == 0.0
        np.testing.assert_array_equal(grad, 0.0)

    def test_homogeneous(self):
        rng = np.random.default_rng(20)
        pos = project_zero_cog(rng.standard_normal((5, 3)))
        v1, _ = radius_of_gyration(pos)
        v2, _ = radius_of_gyration(2.5 * pos)
        assert v2 == pytest.approx(2.5 * v1, rel=1e-12)

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(21)
        pos = project_zero_cog(rng.standard_normal((4, 3)))
        _, grad = radius_of_gyration(pos)
        h = 1e-7
        for i in range(4):
            for c in range(3):
                p, m = pos.copy(), pos.copy()
                p[i, c] += h
                m[i, c] -= h
                fd = (radius_of_gyration(p)[0] - radius_of_gyration(m)[0]) / (2 * h)
                assert grad[i, c] == pytest.approx(fd, abs=1e-8)
