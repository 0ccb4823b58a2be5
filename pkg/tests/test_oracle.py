import numpy as np
import pytest

from eignn import linalg, model as model_mod, oracle
from eignn.errors import NonFiniteLossError, SizeGuardError
from eignn.model import EignnModel, contraction_factor, g_of_f, spectral_forward


def scalar_model():
    return EignnModel(F=np.array([[1.0]]), B=np.array([[1.0]]), gamma=0.5, eps_f=0.1)


def test_iterate_zero_f_converges_immediately():
    model = EignnModel(F=np.zeros((2, 2)), B=np.ones((1, 2)))
    X = np.arange(6.0).reshape(2, 3)
    S = np.eye(3)
    Z, report = oracle.iterate_fixed_point(model, X, S)
    assert report.iterations == 1
    assert report.converged
    assert np.array_equal(Z, X)


def test_iterate_scalar_geometric():
    model = scalar_model()
    S = np.array([[1.0]])
    X = np.array([[1.0]])
    Z, report = oracle.iterate_fixed_point(model, X, S, tol=1e-12)
    assert report.converged
    assert Z[0, 0] == pytest.approx(1.0 / (1.0 - 0.5 / 1.1), abs=1e-11)
    # Step sizes shrink by exactly gamma*g per iteration until rounding
    # dominates near the tolerance floor.
    ratio = 0.5 / 1.1
    hist = report.residual_history
    for k in range(len(hist) - 1):
        if hist[k + 1] < 1e-9:
            break
        assert hist[k + 1] / hist[k] == pytest.approx(ratio, rel=1e-6)


def test_iterate_report_invariants():
    rng = np.random.default_rng(0)
    model, X, S, _, _ = oracle.random_instance(rng)
    Z, report = oracle.iterate_fixed_point(model, X, S, tol=1e-12)
    assert len(report.residual_history) == report.iterations
    assert report.converged == (report.final_residual <= 1e-12)


def test_iterate_non_convergence_reported_not_raised():
    model = scalar_model()
    _, report = oracle.iterate_fixed_point(
        model, np.array([[1.0]]), np.array([[1.0]]), tol=1e-12, max_iters=3
    )
    assert not report.converged
    assert report.iterations == 3


def frobenius_step_norms(model, X, S, steps):
    """Frobenius norms of successive iterate differences.

    The contraction factor bounds step shrinkage in the Frobenius norm
    (||g dZ S||_F <= ||g||_F ||dZ||_F ||S||_2); the max-abs residual used for
    stopping can transiently beat that ratio, so the envelope is checked here.
    """
    gF = g_of_f(model.F, model.eps_f)
    Z = X.copy()
    norms = []
    for _ in range(steps):
        Z_next = model.gamma * gF @ Z @ S + X
        norms.append(float(np.linalg.norm(Z_next - Z)))
        Z = Z_next
    return norms


def test_geometric_envelope():
    rng = np.random.default_rng(1)
    for _ in range(20):
        model, X, S, _, _ = oracle.random_instance(rng)
        cache = oracle.cache_from_dense(S)
        factor = contraction_factor(model, cache)
        hist = frobenius_step_norms(model, X, S, 60)
        for k in range(1, len(hist) - 1):
            if hist[k] <= 1e-9:
                break
            assert hist[k + 1] / hist[k] <= factor + 1e-6


def test_finite_depth_forward():
    rng = np.random.default_rng(2)
    model, X, S, _, _ = oracle.random_instance(rng)
    assert np.array_equal(oracle.finite_depth_forward(model, X, S, 0), X)
    one = model.gamma * g_of_f(model.F, model.eps_f) @ X @ S + X
    assert np.max(np.abs(oracle.finite_depth_forward(model, X, S, 1) - one)) <= 1e-14
    with pytest.raises(ValueError):
        oracle.finite_depth_forward(model, X, S, -1)


def test_finite_depth_geometric_bound():
    rng = np.random.default_rng(3)
    for _ in range(10):
        model, X, S, _, _ = oracle.random_instance(rng)
        cache = oracle.cache_from_dense(S)
        Z = spectral_forward(model, X, cache).Z
        factor = contraction_factor(model, cache)
        for H in (10, 50, 200):
            gap = np.max(np.abs(oracle.finite_depth_forward(model, X, S, H) - Z))
            bound = factor**H / (1.0 - factor) * np.linalg.norm(X)
            assert gap <= bound + 1e-12


def test_kron_forward_trivial():
    model = EignnModel(F=np.zeros((2, 2)), B=np.ones((1, 2)))
    X = np.arange(6.0).reshape(2, 3)
    S = np.eye(3)
    assert np.max(np.abs(oracle.kron_forward(model, X, S) - X)) <= 1e-12
    scalar = scalar_model()
    z = oracle.kron_forward(scalar, np.array([[1.0]]), np.array([[1.0]]))
    assert z[0, 0] == pytest.approx(1.0 / (1.0 - 0.5 / 1.1))


def test_kron_forward_size_guard():
    model = EignnModel(F=np.eye(100), B=np.ones((1, 100)))
    with pytest.raises(SizeGuardError):
        oracle.kron_forward(model, np.zeros((100, 100)), np.eye(100))


def test_three_way_forward_agreement():
    rng = np.random.default_rng(4)
    for _ in range(50):
        model, X, S, _, _ = oracle.random_instance(rng)
        cache = oracle.cache_from_dense(S)
        z_spec = spectral_forward(model, X, cache).Z
        z_kron = oracle.kron_forward(model, X, S)
        z_iter, report = oracle.iterate_fixed_point(model, X, S, tol=1e-12, max_iters=100000)
        assert report.converged
        assert np.max(np.abs(z_spec - z_kron)) <= 1e-9
        assert np.max(np.abs(z_spec - z_iter)) <= 1e-9
        assert np.max(np.abs(z_kron - z_iter)) <= 1e-9


def test_g_of_f_jacobian_matches_finite_differences():
    rng = np.random.default_rng(5)
    F = rng.normal(size=(3, 3))
    eps = 0.5
    J = oracle.g_of_f_jacobian(F, eps)
    # Compare column by column via directional finite differences.
    for k in range(9):
        E = linalg.unvectorize(np.eye(9)[k], 3, 3)
        h = 1e-6
        fd = (g_of_f(F + h * E, eps) - g_of_f(F - h * E, eps)) / (2 * h)
        assert np.max(np.abs(linalg.unvectorize(J[:, k], 3, 3) - fd)) <= 1e-6


def test_kron_grad_matches_backward():
    rng = np.random.default_rng(6)
    for _ in range(10):
        model, X, S, labels, mask = oracle.random_instance(rng)
        cache = oracle.cache_from_dense(S)
        trace = spectral_forward(model, X, cache)
        _, D = model_mod.loss_and_output_grad(trace.logits, labels, mask)
        grad_F, _ = model_mod.backward(model, X, cache, trace, D)
        kron_gf = oracle.kron_grad_F(model, X, S, D)
        assert oracle.relative_error(grad_F, kron_gf) <= 1e-8


def test_finite_difference_grad_trivial():
    at = np.array([[1.0, -2.0], [0.5, 3.0]])
    ones = oracle.finite_difference_grad(lambda M: float(np.sum(M)), at)
    assert np.max(np.abs(ones - 1.0)) <= 1e-9
    sq = oracle.finite_difference_grad(lambda M: 0.5 * float(np.sum(M * M)), at)
    assert np.max(np.abs(sq - at)) <= 1e-9


def test_finite_difference_grad_nonfinite():
    with pytest.raises(NonFiniteLossError):
        oracle.finite_difference_grad(lambda M: float("nan"), np.zeros((1, 1)))


def test_relative_error_floor():
    assert oracle.relative_error(np.zeros(3), np.zeros(3)) == 0.0
    assert oracle.relative_error(np.array([1e-9]), np.array([0.0])) <= 0.1
