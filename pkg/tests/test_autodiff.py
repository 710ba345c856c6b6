import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from twinflow import autodiff as ad
from twinflow import gradcheck
from twinflow.autodiff import ShapeError, Tape, TapeError


def test_affine_identity():
    out = ad.affine(np.eye(2), np.zeros(2), np.array([3.0, -1.0]))
    np.testing.assert_array_equal(out.data, [3.0, -1.0])


def test_tanh_at_origin():
    np.testing.assert_array_equal(ad.tanh(np.zeros(4)).data, np.zeros(4))


def test_matmul_hand_arithmetic():
    out = ad.matmul(np.array([[1.0, 2.0], [3.0, 4.0]]), np.array([[1.0], [1.0]]))
    np.testing.assert_array_equal(out.data, [[3.0], [7.0]])


def test_sum_of_squares_gradient():
    tape = Tape()
    x = tape.leaf(np.array([1.0, 2.0, 3.0]))
    grads = tape.backward(ad.sum_(ad.square(x)))
    np.testing.assert_array_equal(grads[x.node_id], [2.0, 4.0, 6.0])


def test_stop_gradient_blocks_flow():
    tape = Tape()
    w = tape.leaf(np.array([0.5, -2.0]))
    y = ad.stop_gradient(ad.scalar_mul(w, 3.0))
    loss = ad.add(ad.sum_(ad.square(y)), ad.scalar_mul(ad.sum_(w), 0.0))
    grads = tape.backward(loss)
    np.testing.assert_array_equal(grads[w.node_id], [0.0, 0.0])


def test_distance_to_own_stop_gradient_is_zero():
    tape = Tape()
    w = tape.leaf(np.array([[1.0, 2.0], [-3.0, 0.5]]))
    f = ad.tanh(w)
    loss = ad.sum_(ad.square(ad.sub(f, ad.stop_gradient(f))))
    assert loss.item() == 0.0
    grads = tape.backward(loss)
    np.testing.assert_array_equal(grads[w.node_id], np.zeros((2, 2)))


def test_stop_gradient_of_constant():
    c = ad.constant(np.array([1.0, 2.0]))
    out = ad.stop_gradient(c)
    np.testing.assert_array_equal(out.data, c.data)
    assert not out.recorded


def test_unreached_leaf_gets_zero_gradient():
    tape = Tape()
    a = tape.leaf(np.ones(3))
    b = tape.leaf(np.ones((2, 2)))
    grads = tape.backward(ad.sum_(a))
    np.testing.assert_array_equal(grads[b.node_id], np.zeros((2, 2)))


def test_backward_clears_tape():
    tape = Tape()
    a = tape.leaf(np.ones(3))
    tape.backward(ad.sum_(a))
    assert tape.nodes == [] and tape.leaves == []


@pytest.mark.parametrize(
    "op, a, b",
    [
        (ad.add, np.ones((2, 3)), np.ones((3, 2))),
        (ad.mul, np.ones(3), np.ones(4)),
        (ad.matmul, np.ones((2, 3)), np.ones((2, 3))),
        (ad.concat_rows, np.ones((2, 3)), np.ones((2, 4))),
    ],
)
def test_shape_errors_name_primitive_and_shapes(op, a, b):
    with pytest.raises(ShapeError) as err:
        op(a, b)
    assert str(a.shape) in str(err.value) and str(b.shape) in str(err.value)
    assert err.value.primitive in str(err.value)


def test_non_scalar_loss_rejected():
    tape = Tape()
    a = tape.leaf(np.ones(3))
    with pytest.raises(TapeError):
        tape.backward(ad.square(a))


def test_detached_loss_rejected():
    tape = Tape()
    tape.leaf(np.ones(3))
    with pytest.raises(TapeError):
        tape.backward(ad.sum_(np.ones(3)))


def test_scalar_broadcast():
    tape = Tape()
    a = tape.leaf(np.array([1.0, 2.0]))
    s = tape.leaf(np.array([3.0]))
    grads = tape.backward(ad.sum_(ad.mul(a, s)))
    np.testing.assert_array_equal(grads[a.node_id], [3.0, 3.0])
    np.testing.assert_array_equal(grads[s.node_id], [3.0])


def test_result_recorded_iff_operand_recorded():
    tape = Tape()
    a = tape.leaf(np.ones(2))
    assert ad.add(a, np.ones(2)).recorded
    assert not ad.add(np.ones(2), np.ones(2)).recorded


def test_tape_is_topologically_ordered():
    tape = Tape()
    a = tape.leaf(np.ones((2, 2)))
    b = ad.silu(ad.matmul(a, a))
    ad.sum_(ad.concat_rows(b, a))
    for i, node in enumerate(tape.nodes):
        assert all(j is None or j < i for j in node.inputs)


def test_random_mlp_against_finite_differences():
    rng = np.random.default_rng(7)
    res = gradcheck._mlp_case(rng)
    assert res.rel_err < 1e-4


@settings(max_examples=100, deadline=None)
@given(kind=st.sampled_from(gradcheck.PRIMITIVES), seed=st.integers(0, 2**32 - 1))
def test_primitive_gradients_match_finite_differences(kind, seed):
    res = gradcheck._primitive_case(kind, np.random.default_rng(seed))
    assert res.rel_err < 1e-4, res


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), a=st.floats(-3, 3), b=st.floats(-3, 3))
def test_backward_is_linear_in_the_loss(seed, a, b):
    rng = np.random.default_rng(seed)
    w0 = rng.standard_normal((3, 2))
    x = rng.standard_normal((4, 3))

    def grads(build):
        tape = Tape()
        w = tape.leaf(w0)
        return tape.backward(build(w))[w.node_id]

    def l1(w):
        return ad.sum_(ad.square(ad.tanh(ad.matmul(x, w))))

    def l2(w):
        return ad.mean(ad.silu(ad.matmul(x, w)))

    combined = grads(lambda w: ad.add(ad.scalar_mul(l1(w), a), ad.scalar_mul(l2(w), b)))
    separate = a * grads(l1) + b * grads(l2)
    np.testing.assert_allclose(combined, separate, rtol=1e-12, atol=1e-12)


def test_stop_gradient_is_forward_transparent():
    x = np.linspace(-2, 2, 6).reshape(2, 3)
    np.testing.assert_array_equal(ad.silu(ad.stop_gradient(x)).data, ad.silu(x).data)


def test_forward_and_backward_are_deterministic():
    def run():
        rng = np.random.default_rng(3)
        res = gradcheck._mlp_case(rng)
        tape = Tape()
        w = tape.leaf(np.random.default_rng(4).standard_normal((3, 3)))
        out = ad.sum_(ad.square(ad.silu(ad.matmul(w, w))))
        return res.rel_err, out.data.tobytes(), tape.backward(out)[w.node_id].tobytes()

    assert run() == run()


def test_gradcheck_suite():
    results = gradcheck.run(100, seed=0)
    assert len(results) == 100
    assert {r.name for r in results} >= set(gradcheck.PRIMITIVES) | {"mlp3"}
    assert gradcheck.max_relative_error(results) < 1e-4
