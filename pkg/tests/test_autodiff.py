import zlib

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from implicitvol import autodiff as ad


def central_diff(f, x, h=1e-6):
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        g[i] = (f(xp) - f(xm)) / (2 * h)
    return g


def grad_of(f, *args):
    tape = ad.Tape()
    leaves = [tape.leaf(a) for a in args]
    out = f(*leaves)
    gs = ad.backward(tape, out)
    return out.value, [gs[v] for v in leaves]


def test_mul_primal_and_partials():
    val, (gx, gy) = grad_of(lambda x, y: x * y, 3.0, 4.0)
    assert val == 12.0
    assert gx == 4.0 and gy == 3.0


def test_sin_at_zero():
    val, (g,) = grad_of(ad.sin, 0.0)
    assert val == 0.0 and g == 1.0


def test_sum_gradient_is_ones():
    val, (g,) = grad_of(ad.sum, np.array([1.0, 2.0, 3.0]))
    assert val == 6.0
    np.testing.assert_array_equal(g, [1.0, 1.0, 1.0])


def test_xy_plus_sin_x():
    _, (gx, gy) = grad_of(lambda x, y: x * y + ad.sin(x), 0.0, 2.0)
    assert gx == pytest.approx(3.0, abs=1e-15)
    assert gy == 0.0


def test_mean_of_identical_leaves():
    k = 5
    tape = ad.Tape()
    leaves = [tape.leaf(1.5) for _ in range(k)]
    loss = ad.mean(ad.stack(leaves))
    gs = ad.backward(tape, loss)
    for v in leaves:
        assert gs[v] == pytest.approx(1.0 / k, abs=1e-15)


def test_unused_leaf_has_zero_gradient():
    tape = ad.Tape()
    x = tape.leaf(np.ones(3))
    unused = tape.leaf(np.ones((2, 2)))
    loss = ad.sum(x * x)
    gs = ad.backward(tape, loss)
    np.testing.assert_array_equal(gs[unused], np.zeros((2, 2)))


def test_non_scalar_loss_rejected():
    tape = ad.Tape()
    x = tape.leaf(np.ones(3))
    with pytest.raises(ad.AutodiffError, match="scalar"):
        ad.backward(tape, x * 2.0)


def test_shape_mismatch_names_op_and_shapes():
    tape = ad.Tape()
    a = tape.leaf(np.ones(3))
    b = tape.leaf(np.ones(4))
    with pytest.raises(ad.AutodiffError, match=r"add.*\(3,\).*\(4,\)"):
        a + b
    with pytest.raises(ad.AutodiffError, match="matmul"):
        ad.matmul(tape.leaf(np.ones((2, 3))), tape.leaf(np.ones((2, 3))))


def test_record_rejects_unknown_inputs():
    tape = ad.Tape()
    with pytest.raises(ad.AutodiffError):
        tape.record("sin", (0,))


def test_node_ids_are_topological():
    tape = ad.Tape()
    x = tape.leaf(np.arange(4.0))
    y = ad.sum(ad.sin(x) * ad.cos(x) + x / 2.0)
    ad.backward(tape, y)
    for nid, node in enumerate(tape.nodes):
        assert all(i < nid for i in node.inputs)


def test_clamp_passthrough():
    val, (g,) = grad_of(lambda x: ad.sum(ad.clamp_grad_passthrough(x) * 2.0), np.array([-1.0, 0.5, 3.0]))
    assert val == pytest.approx(2 * (0 + 0.5 + 1))
    np.testing.assert_array_equal(g, [2.0, 2.0, 2.0])


PRIMITIVES = {
    "add": lambda a, b: ad.sum(a + b * b),
    "sub": lambda a, b: ad.sum((a - b) * a),
    "mul": lambda a, b: ad.sum(a * b),
    "div": lambda a, b: ad.sum(a / (b * b + 1.0)),
    "sin": lambda a, b: ad.sum(ad.sin(a) * b),
    "cos": lambda a, b: ad.sum(ad.cos(a) * b),
    "matmul": lambda a, b: ad.sum(ad.sin(ad.matmul(ad.reshape(a, (2, 3)), ad.reshape(b, (3, 2))))),
    "sum_axis": lambda a, b: ad.sum(ad.sum(ad.reshape(a * b, (2, 3)), axis=1) * ad.sum(ad.reshape(b, (2, 3)), axis=0)[0:2]),
    "mean": lambda a, b: ad.mean(ad.reshape(a * b, (3, 2)), axis=0)[1] * ad.mean(a),
    "transpose": lambda a, b: ad.sum(ad.transpose(ad.reshape(a, (2, 3))) * ad.reshape(b, (3, 2))),
    "getitem": lambda a, b: ad.sum(a[1:4] * b[0:3]) + a[0] * a[0],
    "stack": lambda a, b: ad.sum(ad.sin(ad.stack([a, b], axis=-1)) * np.arange(12.0).reshape(6, 2)),
    "concat": lambda a, b: ad.sum(ad.concat([a, b * a]) * np.arange(12.0)),
    "broadcast": lambda a, b: ad.sum(ad.sin(ad.reshape(a, (2, 3)) * b[0:3] + ad.reshape(b[3:5], (2, 1)))),
}


@pytest.mark.parametrize("name", sorted(PRIMITIVES))
def test_primitive_matches_finite_differences(name):
    f = PRIMITIVES[name]
    rng = np.random.default_rng(zlib.crc32(name.encode()))
    for _ in range(10):
        a, b = rng.normal(size=6), rng.normal(size=6)
        _, (ga, gb) = grad_of(f, a, b)
        fa = central_diff(lambda x: float(f(x, b)), a)
        fb = central_diff(lambda x: float(f(a, x)), b)
        for g, fd in ((ga, fa), (gb, fb)):
            rel = np.abs(g - fd) / (np.abs(fd) + 1e-12)
            # components whose derivative vanishes are compared absolutely
            assert np.all((rel < 1e-6) | (np.abs(g - fd) < 1e-9)), (name, g, fd)


@settings(max_examples=25, deadline=None)
@given(
    st.floats(-3, 3), st.floats(-3, 3),
    st.lists(st.floats(-2, 2), min_size=4, max_size=4),
)
def test_backward_is_linear(a, b, xs):
    x0 = np.array(xs)

    def f(x):
        return ad.sum(ad.sin(x) * x)

    def g(x):
        return ad.sum(ad.cos(x * 2.0)) + ad.mean(x * x)

    _, (gf,) = grad_of(f, x0)
    _, (gg,) = grad_of(g, x0)
    _, (gc,) = grad_of(lambda x: a * f(x) + b * g(x), x0)
    np.testing.assert_allclose(gc, a * gf + b * gg, rtol=0, atol=1e-12)


def test_rerun_is_bit_identical():
    rng = np.random.default_rng(3)
    w, x = rng.normal(size=(5, 4)), rng.normal(size=(7, 4))

    def run():
        tape = ad.Tape()
        wv = tape.leaf(w)
        loss = ad.mean(ad.sin(ad.matmul(x, ad.transpose(wv))))
        return loss.value, ad.backward(tape, loss)[wv]

    (l1, g1), (l2, g2) = run(), run()
    assert l1.tobytes() == l2.tobytes()
    assert g1.tobytes() == g2.tobytes()


def test_two_layer_siren_gradient_vs_finite_differences():
    # 60 inputs -> 16 sine units -> 1, all parameters in one flat vector
    rng = np.random.default_rng(0)
    x = rng.uniform(-1, 1, size=(5, 60))
    n_w1, n_b1, n_w2 = 16 * 60, 16, 16
    theta0 = np.concatenate([
        rng.uniform(-1 / 60, 1 / 60, n_w1), rng.uniform(-0.1, 0.1, n_b1),
        rng.uniform(-0.6, 0.6, n_w2), [0.1],
    ])

    def f(theta):
        w1 = ad.reshape(theta[0:n_w1], (16, 60))
        b1 = theta[n_w1:n_w1 + n_b1]
        w2 = theta[n_w1 + n_b1:n_w1 + n_b1 + n_w2]
        b2 = theta[n_w1 + n_b1 + n_w2]
        h = ad.sin(30.0 * (ad.matmul(x, ad.transpose(w1)) + b1))
        return ad.mean(ad.matmul(h, w2) + b2)

    err = ad.finite_diff_check(f, theta0, h=1e-5)
    assert err < 1e-4


def test_finite_diff_check_simple_functions():
    assert ad.finite_diff_check(lambda x: ad.sum(x * x), np.array([3.0])) < 1e-8
    assert ad.finite_diff_check(lambda x: ad.sum(ad.sin(x)), np.array([1.0])) < 1e-8


def test_finite_diff_check_rejects_bad_inputs():
    with pytest.raises(ValueError):
        ad.finite_diff_check(lambda x: ad.sum(x), np.array([1.0]), h=0.0)
    with pytest.raises(ad.AutodiffError):
        ad.finite_diff_check(lambda x: ad.sum(x / 0.0), np.array([1.0]))
