import numpy as np
import pytest

from adaptdiff.numerics import (
    SeededRng,
    check_same_shape,
    finite_difference_grad,
    gaussian_noise,
    max_relative_error,
)


def test_same_seed_same_noise():
    a = gaussian_noise(SeededRng(7), [2, 2])
    b = gaussian_noise(SeededRng(7), [2, 2])
    assert np.array_equal(a, b)


def test_child_streams_are_independent():
    root = SeededRng(7)
    a = root.child("model-A").normal((16,))
    b = root.child("model-B").normal((16,))
    assert not np.array_equal(a, b)
    # children are reproducible from scratch
    again = SeededRng(7).child("model-A").normal((16,))
    assert np.array_equal(a, again)


def test_noise_moments():
    draws = gaussian_noise(SeededRng(123), [1_000_000])
    assert abs(float(draws.mean())) < 0.01
    assert abs(float(draws.var()) - 1.0) < 0.01


def test_empty_shape_rejected():
    with pytest.raises(ValueError):
        gaussian_noise(SeededRng(0), [])


def test_child_stream_does_not_disturb_parent():
    root = SeededRng(3)
    first = root.normal((4,))
    root.child("x").normal((100,))
    root2 = SeededRng(3)
    assert np.array_equal(first, root2.normal((4,)))
    assert np.array_equal(root.normal((4,)), root2.normal((4,)))


def test_check_same_shape():
    check_same_shape(np.zeros((2, 3)), np.zeros((2, 3)))
    with pytest.raises(ValueError, match="shape mismatch"):
        check_same_shape(np.zeros((2, 3)), np.zeros((3, 2)))


def test_fd_quadratic():
    params = {"theta": np.array([3.0])}
    grad = finite_difference_grad(lambda p: float(p["theta"][0] ** 2), params,
                                  epsilon=1e-5)
    assert abs(grad[("theta", 0)] - 6.0) < 1e-8
    assert params["theta"][0] == 3.0  # restored


def test_fd_sum_of_squares():
    theta = np.linspace(-2.0, 2.0, 10)
    params = {"theta": theta.copy()}
    grad = finite_difference_grad(lambda p: float(np.sum(p["theta"] ** 2)), params)
    for i in range(10):
        assert abs(grad[("theta", i)] - 2.0 * theta[i]) < 1e-6


def test_fd_linear_denoiser_matches_analytic():
    # eps_pred = w * x_t + b; L = mean((eps_pred - eps)^2)
    rng = SeededRng(11)
    x_t = rng.normal((5, 4))
    eps = rng.normal((5, 4))
    params = {"w": np.array([0.7]), "b": np.array([-0.2])}

    def loss(p):
        pred = p["w"][0] * x_t + p["b"][0]
        return float(np.mean((pred - eps) ** 2))

    resid = params["w"][0] * x_t + params["b"][0] - eps
    analytic = {
        "w": np.array([float(np.mean(2.0 * resid * x_t))]),
        "b": np.array([float(np.mean(2.0 * resid))]),
    }
    fd = finite_difference_grad(loss, params, epsilon=1e-5)
    assert max_relative_error(analytic, fd) < 1e-7


def test_fd_nonfinite_loss_names_coordinate():
    params = {"w": np.array([0.5, 1.0])}

    def loss(p):
        if p["w"][1] > 1.0:
            return float("nan")
        return float(p["w"][0])

    with pytest.raises(FloatingPointError, match=r"w\[1\]"):
        finite_difference_grad(loss, params)


def test_fd_subset_is_seeded():
    params = {"w": np.arange(50, dtype=np.float64)}

    def loss(p):
        return float(np.sum(p["w"] ** 2))

    a = finite_difference_grad(loss, params, max_coords=10, rng=SeededRng(4).child("s"))
    b = finite_difference_grad(loss, params, max_coords=10, rng=SeededRng(4).child("s"))
    assert set(a) == set(b) and len(a) == 10
    with pytest.raises(ValueError):
        finite_difference_grad(loss, params, max_coords=10)


def test_fd_epsilon_validation():
    with pytest.raises(ValueError):
        finite_difference_grad(lambda p: 0.0, {"w": np.zeros(1)}, epsilon=0.0)
