import numpy as np
import pytest

from ogd.geomstate import (
    AtomLabels,
    PointState,
    apply_rotation,
    project_zero_cog,
    random_rotation,
    sample_perturbation,
)


class TestProjectZeroCog:
    def test_example(self):
        out = project_zero_cog([[1.0, 2.0, 3.0], [3.0, 2.0, 1.0]])
        np.testing.assert_allclose(out, [[-1, 0, 1], [1, 0, -1]], atol=1e-15)

    def test_idempotent(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal((7, 3))
        once = project_zero_cog(x)
        np.testing.assert_allclose(project_zero_cog(once), once, atol=1e-15)

    def test_single_atom(self):
        np.testing.assert_allclose(project_zero_cog([[5.0, 5.0, 5.0]]), [[0, 0, 0]], atol=0)

    def test_linear(self):
        rng = np.random.default_rng(1)
        x, y = rng.standard_normal((2, 6, 3))
        lhs = project_zero_cog(2.5 * x - 0.7 * y)
        rhs = 2.5 * project_zero_cog(x) - 0.7 * project_zero_cog(y)
        np.testing.assert_allclose(lhs, rhs, atol=1e-14)

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError):
            project_zero_cog([[np.nan, 0, 0]])


class TestPointState:
    def test_invariants(self):
        with pytest.raises(ValueError):
            PointState(np.ones((3, 3)))  # mean != 0
        with pytest.raises(ValueError):
            PointState(np.zeros((0, 3)))
        with pytest.raises(ValueError):
            PointState(np.full((2, 3), np.inf), cog_constrained=False)
        with pytest.raises(ValueError):
            PointState(np.zeros((2, 3)), features=np.zeros((3, 1)))

    def test_immutable_arrays(self):
        s = PointState(np.zeros((2, 3)))
        with pytest.raises(ValueError):
            s.positions[0, 0] = 1.0

    def test_array_round_trip(self):
        rng = np.random.default_rng(2)
        pos = project_zero_cog(rng.standard_normal((4, 3)))
        feat = rng.standard_normal((4, 2))
        s = PointState(pos, feat)
        back = PointState.from_array(s.as_array(), n_features=2)
        np.testing.assert_array_equal(back.positions, s.positions)
        np.testing.assert_array_equal(back.features, s.features)

    def test_unconstrained_flag(self):
        s = PointState(np.ones((3, 3)), cog_constrained=False)
        assert s.n_atoms == 3 and s.n_features == 0


class TestSamplePerturbation:
    def test_deterministic(self):
        a = sample_perturbation(5, np.random.default_rng(42))
        b = sample_perturbation(5, np.random.default_rng(42))
        np.testing.assert_array_equal(a, b)

    def test_centered_per_sample(self):
        for seed in range(10):
            u = sample_perturbation(2, np.random.default_rng(seed), center=True)
            np.testing.assert_allclose(u.mean(axis=0), 0.0, atol=1e-15)

    def test_law_of_large_numbers(self):
        # aggregated entry mean shrinks like the CLT bound
        rng = np.random.default_rng(9)
        draws, n = 30, 10_000
        total = np.array([sample_perturbation(n, rng, center=False).mean() for _ in range(draws)])
        assert abs(total.mean()) < 4.0 / np.sqrt(draws * 3 * n)

    def test_invalid_count(self):
        with pytest.raises(ValueError):
            sample_perturbation(0, np.random.default_rng(0))


class TestApplyRotation:
    def test_identity(self):
        s = PointState(project_zero_cog(np.random.default_rng(0).standard_normal((4, 3))))
        out = apply_rotation(s, np.eye(3))
        np.testing.assert_array_equal(out.positions, s.positions)

    def test_quarter_turn_about_z(self):
        r = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
        s = PointState(np.array([[1.0, 0.0, 0.0]]), cog_constrained=False)
        out = apply_rotation(s, r)
        np.testing.assert_allclose(out.positions, [[0.0, 1.0, 0.0]], atol=1e-15)

    def test_composition(self):
        rng = np.random.default_rng(5)
        s = PointState(project_zero_cog(rng.standard_normal((6, 3))))
        r1, r2 = random_rotation(rng), random_rotation(rng)
        seq = apply_rotation(apply_rotation(s, r2), r1)
        combo = apply_rotation(s, r1 @ r2)
        np.testing.assert_allclose(seq.positions, combo.positions, atol=1e-12)

    def test_preserves_cog_and_features(self):
        rng = np.random.default_rng(6)
        s = PointState(project_zero_cog(rng.standard_normal((5, 3))), rng.standard_normal((5, 2)))
        out = apply_rotation(s, random_rotation(rng))
        assert np.abs(out.positions.mean(axis=0)).max() < 1e-12
        np.testing.assert_array_equal(out.features, s.features)

    def test_rotation_commutes_with_projection(self):
        rng = np.random.default_rng(7)
        x = rng.standard_normal((6, 3))
        r = random_rotation(rng)
        np.testing.assert_allclose(project_zero_cog(x @ r.T), project_zero_cog(x) @ r.T, atol=1e-12)

    def test_non_orthogonal_rejected(self):
        s = PointState(np.zeros((2, 3)))
        with pytest.raises(ValueError):
            apply_rotation(s, np.eye(3) * 1.1)


def test_atom_labels():
    labels = AtomLabels(("C", "H", "O"))
    assert len(labels) == 3
    with pytest.raises(ValueError):
        AtomLabels(())
