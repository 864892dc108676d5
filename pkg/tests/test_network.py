import numpy as np
import pytest

from streamrx import _backend
from streamrx.errors import ConfigurationError
from streamrx.network import (
    MlpSpec,
    bernoulli_moments,
    cross_entropy,
    forward,
    forward_batch,
    jacobian,
    logit_jacobian,
    score,
    score_batch,
    sigmoid,
)

from conftest import fd_jacobian, hidden_preactivations, reference_forward

SPECS = [(4, 6, 2), (10, 24, 2), (3, 5, 4, 1), (2, 3)]


def test_param_count():
    assert MlpSpec((16, 24, 2)).n_params == 458
    assert MlpSpec((2, 10, 2)).n_params == 2 * 10 + 10 + 10 * 2 + 2


@pytest.mark.parametrize("widths", SPECS)
def test_flatten_roundtrip(widths, rng):
    spec = MlpSpec(widths)
    theta = spec.init_params(rng)
    layers = spec.unflatten(theta)
    assert np.array_equal(spec.flatten(layers), theta)
    # unflatten gives views in weights-then-biases order
    W0, b0 = layers[0]
    assert W0.shape == (widths[1], widths[0])
    assert np.shares_memory(W0, theta)
    assert np.array_equal(theta[: W0.size], W0.ravel())
    assert np.array_equal(theta[W0.size:W0.size + b0.size], b0)


def test_zero_params_give_one_half(rng):
    spec = MlpSpec((5, 7, 3))
    assert np.array_equal(forward(spec, np.zeros(spec.n_params), rng.standard_normal(5)),
                          np.full(3, 0.5))


def test_saturation_without_hidden_layer():
    spec = MlpSpec((2, 1))
    theta = np.array([1.0, 0.0, 0.0])    # weight row (1, 0), zero bias
    ell = forward(spec, theta, np.array([20.0, -3.0]))
    assert 1.0 - 1e-8 < ell[0] < 1.0


@pytest.mark.parametrize("widths", SPECS)
def test_forward_matches_reference(widths, rng):
    spec = MlpSpec(widths)
    for _ in range(5):
        theta = spec.init_params(rng) * 3
        x = rng.standard_normal(spec.d_in)
        assert np.allclose(forward(spec, theta, x), reference_forward(widths, theta, x),
                           rtol=0, atol=1e-12)


@pytest.mark.parametrize("widths", SPECS)
def test_forward_batch_matches_rows(widths, rng):
    spec = MlpSpec(widths)
    theta = spec.init_params(rng)
    X = rng.standard_normal((7, spec.d_in))
    assert np.allclose(forward_batch(spec, theta, X),
                       np.array([forward(spec, theta, x) for x in X]), atol=1e-14)


@pytest.mark.parametrize("widths", SPECS)
def test_jacobian_matches_finite_differences(widths, rng):
    spec = MlpSpec(widths)
    checked = 0
    while checked < 5:
        theta = spec.init_params(rng)
        x = rng.standard_normal(spec.d_in)
        if any(np.min(np.abs(z)) < 1e-3 for z in hidden_preactivations(widths, theta, x)):
            continue
        H, fd = jacobian(spec, theta, x), fd_jacobian(spec, theta, x)
        assert np.abs(H - fd).max() / np.abs(fd).max() < 1e-5
        checked += 1


def test_dead_relu_units_have_zero_jacobian(rng):
    spec = MlpSpec((3, 4, 2))
    layers = spec.unflatten(spec.init_params(rng))
    W1, b1 = layers[0]
    W1[:] = 0.0
    b1[:] = -1.0                       # every hidden pre-activation is -1
    theta = spec.flatten(layers)
    H = jacobian(spec, theta, rng.standard_normal(3))
    n_hidden = 3 * 4 + 4
    assert np.all(H[:, :n_hidden] == 0.0)
    # output weights multiply zero activations; each output bias moves its own bit
    assert np.all(H[:, n_hidden:n_hidden + 8] == 0.0)
    assert np.all(np.diag(H[:, -2:]) > 0.0) and H[0, -1] == H[1, -2] == 0.0


def test_logistic_jacobian_closed_form(rng):
    spec = MlpSpec((4, 1))
    theta = rng.standard_normal(5)
    x = rng.standard_normal(4)
    ell = forward(spec, theta, x)[0]
    assert np.allclose(jacobian(spec, theta, x)[0], ell * (1 - ell) * np.append(x, 1.0))


def test_logit_jacobian_and_output_jacobian_agree(rng):
    spec = MlpSpec((6, 8, 3))
    theta, x = spec.init_params(rng), rng.standard_normal(6)
    ell, Jz = logit_jacobian(spec, theta, x)
    assert np.allclose(jacobian(spec, theta, x), Jz * (ell * (1 - ell))[:, None])


def test_score_is_negative_cross_entropy_gradient(rng):
    spec = MlpSpec((5, 6, 2))
    theta, x = spec.init_params(rng), rng.standard_normal(5)
    bits = np.array([1.0, 0.0])
    g = score(spec, theta, x, bits)
    fd = np.empty_like(theta)
    for p in range(theta.size):
        e = np.zeros_like(theta)
        e[p] = 1e-6
        fd[p] = -(cross_entropy(spec, theta + e, x, bits)
                  - cross_entropy(spec, theta - e, x, bits)) / 2e-6
    assert np.allclose(g, fd, atol=1e-7)


def test_score_batch_rows(rng):
    spec = MlpSpec((5, 6, 2))
    thetas = np.array([spec.init_params(rng) for _ in range(4)])
    x, bits = rng.standard_normal(5), np.array([0.0, 1.0])
    G = score_batch(spec, thetas, x, bits)
    for m in range(4):
        ell, Jz = logit_jacobian(spec, thetas[m], x)
        assert np.allclose(G[m], Jz.T @ (bits - ell))


def test_cross_entropy_is_stable_for_large_logits():
    spec = MlpSpec((1, 1))
    theta = np.array([1.0, 0.0])
    assert cross_entropy(spec, theta, np.array([800.0]), [1.0]) == pytest.approx(0.0)
    assert cross_entropy(spec, theta, np.array([800.0]), [0.0]) == pytest.approx(800.0)


def test_sigmoid_is_overflow_free():
    with np.errstate(over="raise"):
        s = sigmoid(np.array([-1000.0, 0.0, 1000.0]))
    assert np.array_equal(s, [0.0, 0.5, 1.0])


class TestBernoulliMoments:
    def test_half(self):
        m, c = bernoulli_moments([0.5, 0.5])
        assert np.array_equal(m, [0.5, 0.5])
        assert np.array_equal(c, np.diag([0.25, 0.25]))

    def test_point_two(self):
        assert bernoulli_moments([0.2])[1] == pytest.approx(np.array([[0.16]]))

    def test_saturation(self):
        c = bernoulli_moments([1.0 - 1e-12])[1]
        assert 0.0 < c[0, 0] < 1e-11


class TestValidation:
    def test_bad_widths(self):
        for w in [(3,), (3, 0, 2), (3, -1)]:
            with pytest.raises(ConfigurationError):
                MlpSpec(w)

    def test_wrong_shapes(self, rng):
        spec = MlpSpec((3, 4, 2))
        theta = spec.init_params(rng)
        with pytest.raises(ConfigurationError):
            forward(spec, theta[:-1], np.zeros(3))
        with pytest.raises(ConfigurationError):
            forward(spec, theta, np.zeros(4))
        with pytest.raises(ConfigurationError):
            forward_batch(spec, theta, np.zeros((2, 4)))
        with pytest.raises(ConfigurationError):
            score_batch(spec, np.zeros((2, 5)), np.zeros(3), [0, 1])
        with pytest.raises(ConfigurationError):
            spec.flatten([(np.zeros((4, 3)), np.zeros(4)), (np.zeros((2, 3)), np.zeros(2))])


@pytest.mark.skipif(_backend.ext is None, reason="compiled kernels not built")
def test_compiled_and_numpy_kernels_agree(rng):
    from streamrx import _pykernels as py

    ext = _backend.ext
    for widths in [(4, 6, 2), (16, 24, 2), (2, 10, 2)]:
        d, h, B = widths
        spec = MlpSpec(widths)
        for _ in range(5):
            theta = spec.init_params(rng) * 2
            x = rng.standard_normal(d)
            bits = rng.integers(0, 2, B).astype(float)
            thetas = theta + 0.3 * rng.standard_normal((6, theta.size))
            assert np.allclose(ext.mlp1_forward(theta, x, d, h, B), py.forward(widths, theta, x),
                               atol=1e-14)
            e1, J1 = ext.mlp1_logit_jacobian(theta, x, d, h, B)
            e2, J2 = py.logit_jacobian(widths, theta, x)
            assert np.allclose(e1, e2, atol=1e-14) and np.allclose(J1, J2, atol=1e-13)
            assert np.allclose(ext.mlp1_score_batch(thetas, x, bits, d, h, B),
                               py.score_batch(widths, thetas, x, bits), atol=1e-13)
