"""Core primitives: finite differences, Ito correction, Ito change of variables."""

import numpy as np
import pytest

from itoinv import (
    DimensionMismatchError,
    EvaluationError,
    KuboParams,
    LLParams,
    ManifoldSpec,
    NoisePath,
    as_state,
    grad_fd,
    hess_fd,
    identity_map,
    ito_correction,
    ito_transform,
    kubo_system,
    ll_deterministic,
    ll_stochastic,
    scalar_map,
    sphere_manifold,
)


def quartic_manifold():
    """F = sum x_i^4, homogeneous of degree 4, positive away from 0."""
    return ManifoldSpec(
        n=3,
        F=lambda x: float(np.sum(np.asarray(x) ** 4)),
        q=4,
        level=1.0,
        gradient=lambda x: 4.0 * np.asarray(x) ** 3,
        hessian=lambda x: np.diag(12.0 * np.asarray(x) ** 2),
        name="quartic",
    )


class TestFiniteDifferences:
    def test_grad_quadratic(self):
        g = grad_fd(lambda x: x[0] ** 2 + x[1] ** 2, [1.0, 0.0], step=1e-5)
        assert np.abs(g - [2.0, 0.0]).max() < 1e-8

    def test_grad_sphere(self):
        g = grad_fd(lambda x: float(np.sum(np.asarray(x) ** 2)), [0.0, 0.0, 1.0])
        assert np.abs(g - [0.0, 0.0, 2.0]).max() < 1e-8

    def test_grad_bilinear(self):
        # analytic partials of x1*x2 at (3, 5) are (5, 3)
        g = grad_fd(lambda x: x[0] * x[1], [3.0, 5.0])
        assert np.abs(g - [5.0, 3.0]).max() < 1e-8

    def test_grad_nonfinite_carries_point(self):
        with pytest.raises(EvaluationError) as err:
            grad_fd(lambda x: float("nan"), [1.0, 2.0])
        assert err.value.point is not None

    def test_hess_sphere(self):
        H = hess_fd(lambda x: float(np.sum(np.asarray(x) ** 2)), [0.3, -1.2, 2.0])
        assert np.abs(H - 2.0 * np.eye(3)).max() < 1e-6

    def test_hess_bilinear(self):
        H = hess_fd(lambda x: x[0] * x[1], [0.7, -0.2])
        assert np.abs(H - [[0.0, 1.0], [1.0, 0.0]]).max() < 1e-6

    def test_hess_quartic(self):
        H = hess_fd(lambda x: x[0] ** 4, [1.0])
        assert abs(H[0, 0] - 12.0) < 1e-4

    def test_hess_symmetric(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=4)
        H = hess_fd(lambda p: float(np.sin(p[0] * p[1]) + p[2] ** 2 * p[3]), x)
        assert np.abs(H - H.T).max() == 0.0

    def test_positive_step_required(self):
        with pytest.raises(ValueError):
            grad_fd(lambda x: x[0], [1.0], step=-1e-5)


class TestManifoldSpec:
    @pytest.mark.parametrize("manifold", [sphere_manifold(3), quartic_manifold()])
    def test_grad_fd_matches_analytic(self, manifold):
        rng = np.random.default_rng(11)
        for _ in range(100):
            x = rng.uniform(-2.0, 2.0, size=manifold.n)
            an = manifold.grad(x)
            fd = grad_fd(manifold.F, x)
            assert np.abs(fd - an).max() <= 1e-6 * (1.0 + np.abs(an).max())

    @pytest.mark.parametrize("manifold", [sphere_manifold(2), sphere_manifold(3), quartic_manifold()])
    def test_euler_homogeneity_identity(self, manifold):
        rng = np.random.default_rng(12)
        for _ in range(50):
            x = rng.uniform(-2.0, 2.0, size=manifold.n)
            lhs = float(x @ manifold.grad(x))
            rhs = manifold.q * manifold.F(x)
            assert abs(lhs - rhs) <= 1e-7 * (1.0 + abs(rhs))

    @pytest.mark.parametrize("manifold", [sphere_manifold(3), quartic_manifold()])
    def test_homogeneity_defect(self, manifold):
        rng = np.random.default_rng(13)
        for _ in range(25):
            x = rng.normal(size=manifold.n)
            lam = float(rng.uniform(0.1, 3.0))
            assert manifold.homogeneity_defect(x, lam) < 1e-8

    def test_hessian_symmetrized_on_return(self):
        skew = ManifoldSpec(
            n=2,
            F=lambda x: x[0] * x[1],
            q=2,
            hessian=lambda x: np.array([[0.0, 1.0 + 3e-11], [1.0 - 3e-11, 0.0]]),
        )
        H = skew.hess([1.0, 1.0])
        assert np.abs(H - H.T).max() == 0.0
        assert abs(H[0, 1] - 1.0) < 1e-10

    def test_values_matches_pointwise(self):
        m = sphere_manifold(3)
        rng = np.random.default_rng(5)
        X = rng.normal(size=(40, 3))
        assert np.abs(m.values(X) - [m.F(r) for r in X]).max() < 1e-15


class TestStateAndNoise:
    def test_as_state_rejects_nonfinite(self):
        with pytest.raises(EvaluationError):
            as_state([1.0, float("inf")])
        with pytest.raises(DimensionMismatchError):
            as_state([[1.0, 2.0]])

    def test_noise_path_reproducible(self):
        a = NoisePath.generate(seed=123, steps=64, k=2, dt=0.01)
        b = NoisePath.generate(seed=123, steps=64, k=2, dt=0.01)
        assert (a.increments == b.increments).all()
        c = NoisePath.generate(seed=124, steps=64, k=2, dt=0.01)
        assert (a.increments != c.increments).any()

    def test_noise_path_requires_positive_dt(self):
        with pytest.raises(ValueError):
            NoisePath.generate(seed=1, steps=4, k=1, dt=0.0)


class TestItoCorrection:
    def test_kubo_correction_is_sigma2_F(self):
        kubo = kubo_system(KuboParams(a=2.0, sigma=0.5))
        circle = sphere_manifold(2)
        rng = np.random.default_rng(7)
        for _ in range(20):
            x = rng.normal(size=2) * 2.0
            F = circle.F(x)
            corr = ito_correction(circle, kubo, 0.0, x)
            assert abs(corr - 0.25 * F) < 1e-12 * max(1.0, F)

    def test_zero_diffusion_zero_correction(self):
        lld = ll_deterministic(LLParams())
        sphere = sphere_manifold(3)
        assert ito_correction(sphere, lld, 0.0, [0.3, -0.5, 1.1]) == 0.0

    def test_ll_correction_constant_on_sphere(self):
        p = LLParams(alpha=0.5, epsilon=0.1)
        lls = ll_stochastic(p)
        sphere = sphere_manifold(3)
        rng = np.random.default_rng(8)
        for _ in range(20):
            x = rng.normal(size=3)
            x /= np.linalg.norm(x)
            corr = ito_correction(sphere, lls, 0.0, x)
            assert abs(corr - 0.025) < 1e-10

    def test_dimension_mismatch(self):
        kubo = kubo_system(KuboParams())
        sphere = sphere_manifold(3)
        with pytest.raises(DimensionMismatchError):
            ito_correction(sphere, kubo, 0.0, [1.0, 0.0, 0.0])


class TestItoTransform:
    def test_identity_map_reproduces_system(self):
        kubo = kubo_system(KuboParams(a=1.3, sigma=0.4))
        ident = ito_transform(kubo, identity_map(2))
        rng = np.random.default_rng(9)
        for _ in range(10):
            x = rng.normal(size=2)
            f0, s0 = kubo.coefficients(0.0, x)
            f1, s1 = ident.coefficients(0.0, x)
            assert np.abs(f0 - f1).max() < 1e-14
            assert np.abs(s0 - s1).max() < 1e-14

    def test_level_function_of_deterministic_ll_is_conserved(self):
        lld = ll_deterministic(LLParams(b=(0.2, -0.4, 0.9), alpha=0.7))
        sphere = sphere_manifold(3)
        z = ito_transform(lld, scalar_map(sphere))
        rng = np.random.default_rng(10)
        for _ in range(20):
            x = rng.normal(size=3)
            x /= np.linalg.norm(x)
            f, sig = z.coefficients(0.0, x)
            assert abs(f[0]) < 1e-10
            assert sig.shape == (1, 0)

    def test_level_function_of_kubo(self):
        kubo = kubo_system(KuboParams(a=2.0, sigma=0.5))
        circle = sphere_manifold(2)
        z = ito_transform(kubo, scalar_map(circle))
        for theta in (0.0, 0.3, 2.0, 4.5):
            x = np.array([np.cos(theta), np.sin(theta)])
            f, sig = z.coefficients(0.0, x)
            assert abs(f[0] - 0.25) < 1e-10
            assert np.abs(sig).max() < 1e-10

    def test_correction_equals_transform_drift_minus_advection(self):
        systems = [
            (kubo_system(KuboParams(a=2.0, sigma=0.5)), sphere_manifold(2)),
            (ll_stochastic(LLParams()), sphere_manifold(3)),
        ]
        rng = np.random.default_rng(21)
        for system, manifold in systems:
            z = ito_transform(system, scalar_map(manifold))
            for _ in range(15):
                x = rng.normal(size=system.n)
                f, _ = system.coefficients(0.0, x)
                advection = float(manifold.grad(x) @ f)
                drift_z = z.coefficients(0.0, x)[0][0]
                corr = ito_correction(manifold, system, 0.0, x)
                assert abs(corr - (drift_z - advection)) < 1e-10

    def test_tangent_diffusion_gives_zero_noise_row(self):
        lls = ll_stochastic(LLParams(alpha=0.8, epsilon=0.3))
        sphere = sphere_manifold(3)
        z = ito_transform(lls, scalar_map(sphere))
        rng = np.random.default_rng(22)
        for _ in range(10):
            x = rng.normal(size=3)
            x /= np.linalg.norm(x)
            _, sig = z.coefficients(0.0, x)
            assert np.linalg.norm(sig) < 1e-10

    def test_fd_fallback_map_matches_analytic(self):
        kubo = kubo_system(KuboParams(a=1.0, sigma=0.3))
        circle = sphere_manifold(2)
        bare = ManifoldSpec(n=2, F=circle.F, q=2)  # finite differences only
        za = ito_transform(kubo, scalar_map(circle))
        zb = ito_transform(kubo, scalar_map(bare))
        x = np.array([0.8, -0.6])
        fa, sa = za.coefficients(0.0, x)
        fb, sb = zb.coefficients(0.0, x)
        assert np.abs(fa - fb).max() < 1e-5
        assert np.abs(sa - sb).max() < 1e-6

    def test_dimension_mismatch(self):
        kubo = kubo_system(KuboParams())
        with pytest.raises(DimensionMismatchError):
            ito_transform(kubo, identity_map(3))

    def test_pullback_marker_set(self):
        kubo = kubo_system(KuboParams())
        z = ito_transform(kubo, scalar_map(sphere_manifold(2)))
        assert z.input_dim == 2
        assert z.n == 1
