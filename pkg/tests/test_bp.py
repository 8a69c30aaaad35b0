import numpy as np
import pytest

from predcode.bp import (
    ComparisonRow,
    MLPReference,
    bp_backward,
    bp_forward,
    bp_op_count,
    compare_pc_bp,
    cosine,
    from_pc,
    init_mlp,
    loss,
    relative_magnitude_error,
    to_pc,
    train_bp,
    worst_by_lambda,
    write_rows,
)
from predcode.errors import ShapeError
from predcode.gradcheck import central_difference, relative_error
from predcode.model import init_network

ACTS = ("identity", "tanh", "logistic", "rectifier")


def test_identity_chain_returns_input():
    mlp = MLPReference((np.eye(3), np.eye(3)), "identity")
    x = np.array([0.5, -1.0, 2.0])
    np.testing.assert_array_equal(bp_forward(mlp, x)[1][-1], x)


def test_zero_weights_tanh_gives_zero_activations():
    mlp = MLPReference((np.zeros((4, 3)), np.zeros((2, 4))), "tanh")
    zs, ys = bp_forward(mlp, np.array([1.0, 2.0, 3.0]))
    assert zs[0] is None
    for y in ys[1:]:
        np.testing.assert_array_equal(y, 0.0)


def test_forward_shape_error():
    mlp = init_mlp((3, 4, 2))
    with pytest.raises(ShapeError):
        bp_forward(mlp, np.ones(4))
    with pytest.raises(ShapeError):
        MLPReference((np.ones((4, 3)), np.ones((2, 5))))


@pytest.mark.parametrize("act", ACTS)
def test_forward_equals_pc_generative_pass_bitwise(act):
    rng = np.random.default_rng(ACTS.index(act))
    for _ in range(100):
        dims = tuple(int(d) for d in rng.integers(1, 9, size=int(rng.integers(2, 6))))
        net = init_network(dims, act, "identity", rng=rng)
        x = rng.standard_normal(dims[-1])
        pc = net.generative_pass(x)
        ys = bp_forward(from_pc(net), x)[1]
        for k, y in enumerate(ys):
            np.testing.assert_array_equal(y, pc[net.depth - k])


def test_conversion_is_a_bijection():
    rng = np.random.default_rng(2)
    net = init_network((3, 5, 4, 6), "logistic", "identity", rng=rng)
    back = to_pc(from_pc(net), covs=net.covs, prior_mean=net.prior_mean)
    assert back.dims == net.dims and back.checksum() == net.checksum()
    assert back.activation is net.activation and back.output_activation is net.output_activation
    mlp = init_mlp((6, 4, 5, 3), "tanh", seed=3)
    again = from_pc(to_pc(mlp))
    assert again.sizes == mlp.sizes
    for a, b in zip(mlp.weights, again.weights):
        np.testing.assert_array_equal(a, b)


def test_init_mlp_shares_the_pc_initialiser():
    mlp = init_mlp((6, 4, 3), "tanh", seed=7)
    net = init_network((3, 4, 6), "tanh", rng=7)
    assert to_pc(mlp).checksum() == net.checksum()


def test_gradients_zero_at_target():
    mlp = init_mlp((3, 5, 2), "tanh", seed=1)
    x = np.array([0.1, 0.2, -0.3])
    for g in bp_backward(mlp, x, bp_forward(mlp, x)[1][-1]):
        np.testing.assert_array_equal(g, 0.0)


def test_single_linear_layer_closed_form():
    rng = np.random.default_rng(4)
    w = rng.standard_normal((2, 3))
    x, t = rng.standard_normal(3), rng.standard_normal(2)
    (g,) = bp_backward(MLPReference((w,), "identity"), x, t)
    np.testing.assert_allclose(g, np.outer(w @ x - t, x), atol=1e-15)


@pytest.mark.parametrize("act", ACTS)
def test_gradients_match_finite_differences(act):
    rng = np.random.default_rng(10 + ACTS.index(act))
    for _ in range(10):
        sizes = tuple(int(d) for d in rng.integers(1, 7, size=5))  # four layers
        weights = tuple(rng.standard_normal((sizes[k + 1], sizes[k])) for k in range(4))
        mlp = MLPReference(weights, act)
        x = rng.standard_normal(sizes[0])
        if act == "rectifier":
            zs = bp_forward(mlp, x)[0][1:]
            if min(np.abs(z).min() for z in zs) < 1e-3:
                continue
        t = rng.standard_normal(sizes[-1])
        grads = bp_backward(mlp, x, t)
        for k in range(4):

            def f(w, k=k):
                ws = list(weights)
                ws[k] = w
                return loss(MLPReference(tuple(ws), act), x, t)

            assert relative_error(grads[k], central_difference(f, weights[k])) < 1e-6


def test_batched_gradient_is_mean():
    rng = np.random.default_rng(5)
    mlp = init_mlp((3, 4, 2), "tanh", seed=5)
    x, t = rng.standard_normal((6, 3)), rng.standard_normal((6, 2))
    batch = bp_backward(mlp, x, t)
    singles = [bp_backward(mlp, x[i], t[i]) for i in range(6)]
    for k in range(2):
        np.testing.assert_allclose(batch[k], np.mean([s[k] for s in singles], axis=0), atol=1e-15)
    assert loss(mlp, x, t) == pytest.approx(np.mean([loss(mlp, x[i], t[i]) for i in range(6)]))


def test_train_bp_reduces_loss():
    rng = np.random.default_rng(6)
    mlp = init_mlp((3, 8, 2), "tanh", "identity", seed=6)
    x = rng.uniform(-1, 1, (64, 3))
    t = np.stack([x[:, 0] - x[:, 1], 0.5 * x[:, 2]], axis=1)
    seen = []
    trained = train_bp(mlp, x, t, eta=0.1, batch_size=8, epochs=30, seed=0, on_epoch=lambda e, m, s: seen.append(e))
    assert seen == list(range(1, 31))
    assert loss(trained, x, t) < 0.1 * loss(mlp, x, t)


def test_op_count_hand_count():
    mlp = MLPReference((np.zeros((3, 2)), np.zeros((4, 3))))
    # forward 6 + 12, outer products 6 + 12, error through W[1] only 12
    assert bp_op_count(mlp) == 18 + 18 + 12


# ---------------------------------------------------------------- comparison


def test_cosine_conventions():
    z = np.zeros(3)
    assert cosine(z, z) == 1.0
    assert cosine(z, np.ones(3)) == 0.0
    assert cosine(np.ones(3), -np.ones(3)) == -1.0
    assert relative_magnitude_error(z, z) == 0.0
    assert relative_magnitude_error(2 * np.ones(2), np.ones(2)) == pytest.approx(1.0)


def test_compare_at_equilibrium_reports_exact_agreement():
    net = init_network((3, 4, 4, 2), "tanh", rng=1)
    x = np.array([0.3, -0.2])
    y = net.generative_pass(x)[0]
    rows = compare_pc_bp(net, x, y, (1.0, 10.0))
    assert len(rows) == 6
    for r in rows:
        assert r.cosine == 1.0 and r.rel_mag_err == 0.0 and r.inference_steps == 0 and r.converged


def test_compare_lambda_ladder_on_random_tanh_nets():
    for seed in range(3):
        rng = np.random.default_rng(seed)
        net = init_network((4, 6, 6, 5), "tanh", rng=rng)
        rows = compare_pc_bp(net, rng.uniform(-1, 1, 5), rng.uniform(-1, 1, 4), seed=seed)
        assert all(r.converged for r in rows)
        assert all(-1.0 <= r.cosine <= 1.0 for r in rows)
        worst = worst_by_lambda(rows)
        cos = [worst[lam][0] for lam in (1.0, 10.0, 100.0, 1000.0)]
        assert all(b >= a for a, b in zip(cos, cos[1:]))
        assert cos[-1] >= 0.999
        assert worst[1000.0][1] < 1e-2


def test_write_rows_header(tmp_path):
    rows = [ComparisonRow(0, 1.0, 1, 0.5, 0.1, 7, True)]
    path = tmp_path / "rows.csv"
    write_rows(rows, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "seed,lambda,layer,cosine,rel_mag_err,inference_steps"
    assert lines[1] == "0,1.0,1,0.5,0.1,7"
