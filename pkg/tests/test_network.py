import math

import numpy as np
import pytest

from lyapnet import network
from lyapnet import scalar_ad as ad


def numpy_forward(net, x):
    """Independent straight-line re-evaluation of the layer formula."""
    h = np.asarray(x, dtype=float)
    for k, (W, b) in enumerate(net.weights):
        z = np.array(W) @ h + np.array(b)
        h = np.tanh(z) if k < len(net.weights) - 1 else z
    return h


def fd_jacobian(net, x, h=1e-5):
    d_out, d_in = net.dim_out, net.dim_in
    J = np.empty((d_out, d_in))
    for j in range(d_in):
        xp, xm = list(x), list(x)
        xp[j] += h
        xm[j] -= h
        J[:, j] = (numpy_forward(net, xp) - numpy_forward(net, xm)) / (2 * h)
    return J


class TestInit:
    def test_deterministic(self):
        a = network.init([3, 10, 3], 0)
        b = network.init([3, 10, 3], 0)
        assert a.weights == b.weights

    def test_different_seeds_differ(self):
        a = network.init([3, 10, 3], 0)
        b = network.init([3, 10, 3], 1)
        assert a.weights != b.weights

    def test_four_layer_shapes(self):
        net = network.init([3, 50, 50, 50, 3], 7)
        shapes = [(len(W), len(W[0])) for W, _ in net.weights]
        assert shapes == [(50, 3), (50, 50), (50, 50), (3, 50)]

    def test_biases_zero(self):
        net = network.init([3, 5, 3], 0)
        assert all(b == 0.0 for _, bias in net.weights for b in bias)

    @pytest.mark.parametrize("sizes", [[3], [], [3, 0, 3], [3, -1]])
    def test_degenerate_sizes(self, sizes):
        with pytest.raises(ValueError):
            network.init(sizes, 0)


class TestForward:
    def test_zero_net_is_zero_map(self):
        net = network.init([3, 4, 3], 0)
        net.weights = [([[0.0] * len(r) for r in W], [0.0] * len(b))
                       for W, b in net.weights]
        assert network.forward(net, [0.3, -1.2, 5.0]) == [0.0, 0.0, 0.0]

    def test_single_linear_layer_identity(self):
        net = network.Network([3, 3], [([[1.0, 0, 0], [0, 1.0, 0], [0, 0, 1.0]],
                                        [0.0, 0.0, 0.0])])
        x = [0.4, -0.7, 2.0]
        assert network.forward(net, x) == pytest.approx(x, abs=0)

    def test_matches_independent_reimplementation(self):
        net = network.init([3, 4, 3], 3)
        x = [0.2, -0.5, 0.9]
        y = network.forward(net, x)
        assert np.max(np.abs(np.array(y) - numpy_forward(net, x))) < 1e-12

    def test_dimension_mismatch(self):
        net = network.init([3, 4, 3], 0)
        with pytest.raises(ValueError):
            network.forward(net, [1.0, 2.0])


class TestInputJacobian:
    def test_linear_layer_is_matrix(self):
        A = [[1.0, 2.0, 0.5], [0.0, -1.0, 3.0], [4.0, 0.0, 1.0]]
        net = network.Network([3, 3], [(A, [0.0] * 3)])
        for x in ([0, 0, 0], [1.5, -2.0, 0.3]):
            J = network.input_jacobian(net, x)
            assert J == A

    def test_zero_hidden_weights_product_of_matrices(self):
        # preactivations 0 so every D is the identity
        net = network.init([2, 3, 2], 0)
        W0 = [[0.0] * 2 for _ in range(3)]
        net.weights[0] = (W0, [0.0] * 3)
        J = network.input_jacobian(net, [0.7, -0.3])
        W1 = np.array(net.weights[1][0])
        expected = W1 @ np.array(W0)
        assert np.max(np.abs(np.array(J) - expected)) < 1e-15

    def test_matches_finite_differences(self):
        net = network.init([3, 10, 3], 5)
        x = [0.1, -0.2, 0.3]
        J = np.array(network.input_jacobian(net, x))
        assert np.max(np.abs(J - fd_jacobian(net, x))) < 1e-6

    def test_agreement_over_random_samples(self):
        rng = np.random.default_rng(11)
        for trial in range(100):
            sizes = [3, int(rng.integers(2, 8)), 3]
            net = network.init(sizes, int(rng.integers(0, 10000)))
            x = rng.uniform(-1, 1, 3)
            J = np.array(network.input_jacobian(net, list(x)))
            fd = fd_jacobian(net, list(x))
            denom = np.maximum(1.0, np.abs(fd))
            assert np.max(np.abs(J - fd) / denom) < 1e-6

    def test_chain_consistency(self):
        net = network.init([3, 6, 3], 9)
        x = [0.2, 0.1, -0.3]
        fx = [float(v) for v in network.forward(net, x)]
        J_chain = (np.array(network.input_jacobian(net, fx)) @
                   np.array(network.input_jacobian(net, x)))

        def composed(v):
            return numpy_forward(net, numpy_forward(net, v))

        h = 1e-5
        J_fd = np.empty((3, 3))
        for j in range(3):
            xp, xm = list(x), list(x)
            xp[j] += h
            xm[j] -= h
            J_fd[:, j] = (composed(xp) - composed(xm)) / (2 * h)
        assert np.max(np.abs(J_chain - J_fd)) < 1e-5

    def test_shape_square(self):
        net = network.init([3, 7, 7, 3], 1)
        J = network.input_jacobian(net, [0.0, 0.1, 0.2])
        assert len(J) == 3 and all(len(r) == 3 for r in J)


class TestWeightGradientPath:
    def test_sum_of_jacobian_entries_grad(self):
        values_net = network.init([3, 5, 3], 13)
        x = [0.3, -0.1, 0.2]

        def f(p):
            tape = ad.Tape()
            net = network.attach(values_net, tape)
            nodes = network.parameter_nodes(net)
            for node, v in zip(nodes, p):
                tape.values[node.idx] = v
            J = network.input_jacobian(net, x)
            g = None
            for row in J:
                for e in row:
                    g = e if g is None else g + e
            tape.backward(g)
            return g.value, [n.grad for n in nodes]

        p0 = [ad._value(n) for n in
              network.parameter_nodes(network.attach(values_net, ad.Tape()))]
        assert ad.finite_diff_check(f, p0, 1e-6) < 1e-5


class TestSerialization:
    def test_round_trip_bit_exact(self, tmp_path):
        net = network.init([3, 10, 5, 3], 17)
        # make values non-trivial
        net.weights[0][1][2] = 1.0 / 3.0
        path = tmp_path / "params.txt"
        network.save_params(net, path)
        loaded = network.load_params(path)
        assert loaded.layer_sizes == net.layer_sizes
        assert loaded.activation == net.activation
        assert loaded.weights == net.weights

    def test_round_trip_after_attach(self, tmp_path):
        net = network.init([2, 3, 2], 0)
        tape = ad.Tape()
        live = network.attach(net, tape)
        path = tmp_path / "params.txt"
        network.save_params(live, path)
        assert network.load_params(path).weights == net.weights
