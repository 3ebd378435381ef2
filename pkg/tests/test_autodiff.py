import numpy as np
import pytest

from depthmotion import autodiff as ad
from gradutil import check_grads, rel_err


def leaf(data, seed=None):
    return ad.array(data, requires_grad=True)


def rand(shape, seed, lo=-1.0, hi=1.0):
    rng = np.random.default_rng(seed)
    return rng.uniform(lo, hi, size=shape)


class TestForward:
    def test_add(self):
        out = ad.add(ad.array([1.0, 2.0]), ad.array([3.0, 4.0]))
        np.testing.assert_array_equal(out.data, [4.0, 6.0])

    def test_softmax_symmetry(self):
        out = ad.softmax(ad.array([0.0, 0.0]), axis=0)
        np.testing.assert_allclose(out.data, [0.5, 0.5])

    def test_sigmoid_zero(self):
        assert ad.sigmoid(ad.array(0.0)).item() == 0.5

    def test_shape_mismatch_names_op(self):
        with pytest.raises(ad.ShapeError, match="add"):
            ad.add(ad.array([1.0, 2.0]), ad.array([1.0, 2.0, 3.0]))

    def test_scalar_broadcast(self):
        out = ad.mul(ad.array([[1.0, 2.0], [3.0, 4.0]]), 2.0)
        np.testing.assert_array_equal(out.data, [[2.0, 4.0], [6.0, 8.0]])

    def test_nonfinite_is_error(self):
        with pytest.raises(ad.NonFiniteError):
            ad.div(ad.array([1.0]), ad.array([0.0]))
        with pytest.raises(ad.NonFiniteError):
            ad.log(ad.array([-1.0]))

    def test_primitive_forward_dispatch(self):
        out = ad.primitive_forward("mul", ad.array([2.0]), ad.array([3.0]))
        np.testing.assert_array_equal(out.data, [6.0])
        with pytest.raises(KeyError):
            ad.primitive_forward("fused_madd", ad.array([1.0]))

    def test_immutable(self):
        x = ad.array([1.0, 2.0])
        with pytest.raises(ValueError):
            x.data[0] = 5.0

    def test_determinism(self):
        def run():
            x = ad.array(rand((4, 4), 7))
            y = ad.conv2d(ad.array(rand((2, 4, 4), 8)), ad.array(rand((3, 2, 3, 3), 9)))
            return ad.sum(ad.sigmoid(x)).item(), y.data.copy()

        a1, b1 = run()
        a2, b2 = run()
        assert a1 == a2
        np.testing.assert_array_equal(b1, b2)


class TestBackwardBasics:
    def test_sum_gradient_ones(self):
        x = leaf(rand((3, 5), 0))
        with ad.Tape() as tape:
            loss = ad.sum(x)
        grads = ad.backward(tape, loss)
        np.testing.assert_array_equal(grads[x].data, np.ones((3, 5)))

    def test_square_gradient(self):
        x = leaf([3.0])
        with ad.Tape() as tape:
            loss = ad.sum(ad.mul(x, x))
        grads = ad.backward(tape, loss)
        np.testing.assert_allclose(grads[x].data, [6.0])

    def test_nonscalar_loss_rejected(self):
        x = leaf([1.0, 2.0])
        with ad.Tape() as tape:
            y = ad.mul(x, 2.0)
        with pytest.raises(ad.ShapeError):
            ad.backward(tape, y)

    def test_linearity_of_backward(self):
        x = leaf(rand((6,), 3))
        with ad.Tape() as tape:
            la = ad.sum(ad.exp(x))
            lb = ad.sum(ad.mul(x, x))
            lboth = ad.add(la, lb)
        ga = ad.backward(tape, la)[x].data
        gb = ad.backward(tape, lb)[x].data
        gboth = ad.backward(tape, lboth)[x].data
        np.testing.assert_allclose(gboth, ga + gb, rtol=0, atol=1e-15)

    def test_reused_input_accumulates(self):
        x = leaf([2.0])
        with ad.Tape() as tape:
            loss = ad.sum(ad.add(ad.mul(x, x), x))  # x^2 + x -> 2x + 1
        np.testing.assert_allclose(ad.backward(tape, loss)[x].data, [5.0])

    def test_detach_blocks_gradient(self):
        x = leaf([1.0, 2.0])
        with ad.Tape() as tape:
            loss = ad.sum(ad.mul(x.detach(), x))
        np.testing.assert_allclose(ad.backward(tape, loss)[x].data, [1.0, 2.0])

    def test_untracked_outside_tape(self):
        x = leaf([1.0])
        y = ad.mul(x, 3.0)
        assert y.requires_grad
        tape = ad.Tape()
        assert len(tape) == 0

    def test_nested_tape_rejected(self):
        with ad.Tape():
            with pytest.raises(RuntimeError):
                with ad.Tape():
                    pass


class TestFiniteDifferenceOracle:
    def test_sum_all_ones(self):
        x = ad.array(rand((7,), 1))
        g = ad.finite_difference_oracle(lambda a: ad.sum(a), x, step=1e-5)
        np.testing.assert_allclose(g.data, np.ones(7), atol=1e-9)

    def test_sum_exp_analytic(self):
        x = ad.array([0.0, 1.0])
        g = ad.finite_difference_oracle(lambda a: ad.sum(ad.exp(a)), x, step=1e-5)
        np.testing.assert_allclose(g.data, [1.0, np.e], atol=1e-6)

    def test_step_must_be_positive(self):
        with pytest.raises(ValueError):
            ad.finite_difference_oracle(lambda a: ad.sum(a), ad.array([1.0]), step=0.0)


def weighted(out, seed=1234):
    w = ad.constant(rand(out.shape, seed))
    return ad.sum(ad.mul(out, w))


PRIMITIVE_CASES = [
    ("add", lambda v: weighted(ad.add(v["x"], v["y"])),
     {"x": rand((10, 10), 0), "y": rand((10, 10), 1)}),
    ("add_scalar", lambda v: weighted(ad.add(v["x"], 1.75)), {"x": rand((10, 10), 2)}),
    ("sub", lambda v: weighted(ad.sub(v["x"], v["y"])),
     {"x": rand((10, 10), 3), "y": rand((10, 10), 4)}),
    ("mul", lambda v: weighted(ad.mul(v["x"], v["y"])),
     {"x": rand((10, 10), 5), "y": rand((10, 10), 6)}),
    ("div", lambda v: weighted(ad.div(v["x"], v["y"])),
     {"x": rand((10, 10), 7), "y": rand((10, 10), 8, 0.5, 2.0)}),
    ("matmul", lambda v: weighted(ad.matmul(v["a"], v["b"])),
     {"a": rand((9, 12), 9), "b": rand((12, 11), 10)}),
    ("exp", lambda v: weighted(ad.exp(v["x"])), {"x": rand((10, 10), 11)}),
    ("log", lambda v: weighted(ad.log(v["x"])), {"x": rand((10, 10), 12, 0.2, 3.0)}),
    ("sqrt", lambda v: weighted(ad.sqrt(v["x"])), {"x": rand((10, 10), 13, 0.2, 3.0)}),
    ("abs", lambda v: weighted(ad.abs(v["x"])),
     {"x": rand((10, 10), 14, 0.1, 1.0) * np.sign(rand((10, 10), 15))}),
    ("sin", lambda v: weighted(ad.sin(v["x"])), {"x": rand((10, 10), 16, -2.0, 2.0)}),
    ("cos", lambda v: weighted(ad.cos(v["x"])), {"x": rand((10, 10), 17, -2.0, 2.0)}),
    ("sigmoid", lambda v: weighted(ad.sigmoid(v["x"])), {"x": rand((10, 10), 18, -4.0, 4.0)}),
    ("relu", lambda v: weighted(ad.relu(v["x"])),
     {"x": rand((10, 10), 19, 0.1, 1.0) * np.sign(rand((10, 10), 20))}),
    ("softmax", lambda v: weighted(ad.softmax(v["x"], axis=1)), {"x": rand((10, 12), 21)}),
    ("sum_axes", lambda v: weighted(ad.sum(v["x"], axes=(0, 2))), {"x": rand((4, 6, 5), 22)}),
    ("mean_axes", lambda v: weighted(ad.mean(v["x"], axes=(1,))), {"x": rand((8, 6, 3), 23)}),
    ("mean_all", lambda v: ad.mean(v["x"]), {"x": rand((11, 11), 24)}),
    ("min_axis", lambda v: weighted(ad.min(v["x"], axis=0)),
     {"x": rand((5, 40), 25) + np.arange(5)[:, None] * 1e-3}),
    ("clamp", lambda v: weighted(ad.clamp(v["x"], -0.5, 0.5)),
     {"x": rand((12, 12), 26, -1.0, 1.0)}),
    ("reshape", lambda v: weighted(ad.reshape(v["x"], (6, 20))), {"x": rand((4, 5, 6), 27)}),
    ("permute", lambda v: weighted(ad.permute(v["x"], (2, 0, 1))), {"x": rand((4, 5, 6), 28)}),
    ("concat", lambda v: weighted(ad.concat([v["x"], v["y"]], axis=1)),
     {"x": rand((6, 7), 29), "y": rand((6, 9), 30)}),
    ("slice", lambda v: weighted(v["x"][:, 1:5, ::2]), {"x": rand((3, 8, 8), 31)}),
    ("conv2d_s1", lambda v: weighted(ad.conv2d(v["x"], v["w"], v["b"], stride=1, padding=1)),
     {"x": rand((3, 8, 8), 32), "w": rand((4, 3, 3, 3), 33), "b": rand((4,), 34)}),
    ("conv2d_s2", lambda v: weighted(ad.conv2d(v["x"], v["w"], v["b"], stride=2, padding=1)),
     {"x": rand((3, 8, 8), 35), "w": rand((4, 3, 3, 3), 36), "b": rand((4,), 37)}),
    ("conv2d_edge", lambda v: weighted(ad.conv2d(v["x"], v["w"], pad_mode="edge")),
     {"x": rand((2, 8, 8), 38), "w": rand((3, 2, 3, 3), 39)}),
    ("avg_pool2d", lambda v: weighted(ad.avg_pool2d(v["x"])), {"x": rand((3, 8, 8), 40)}),
    ("bilinear_gather",
     lambda v: weighted(ad.bilinear_gather(v["src"], v["coords"])),
     {"src": rand((3, 9, 9), 41),
      # interior, away from integer lattice points
      "coords": rand((2, 6, 6), 42, 0.55, 7.45) + 0.021}),
    ("upsample", lambda v: weighted(ad.upsample_bilinear(v["x"], 2)), {"x": rand((2, 5, 5), 43)}),
]


@pytest.mark.parametrize("name,make_loss,leaf_data", PRIMITIVE_CASES, ids=[c[0] for c in PRIMITIVE_CASES])
def test_primitive_gradients_match_oracle(name, make_loss, leaf_data):
    leaves = {k: ad.array(v, requires_grad=True) for k, v in leaf_data.items()}
    check_grads(make_loss, leaves, n_points=100, rtol=1e-4, step=1e-5)


class TestPrimitiveSpecifics:
    def test_min_tie_goes_to_lowest_index(self):
        x = leaf([[2.0, 1.0], [1.0, 3.0]])
        with ad.Tape() as tape:
            loss = ad.sum(ad.min(x, axis=0))  # column mins: ties -> row 0? col0 tie (2,1)->row1; col1 no tie
        g = ad.backward(tape, loss)[x].data
        np.testing.assert_array_equal(g, [[0.0, 1.0], [1.0, 0.0]])
        y = leaf([[1.0, 5.0], [1.0, 3.0]])  # exact tie in column 0
        with ad.Tape() as tape:
            loss = ad.sum(ad.min(y, axis=0))
        g = ad.backward(tape, loss)[y].data
        np.testing.assert_array_equal(g, [[1.0, 0.0], [0.0, 1.0]])

    def test_bilinear_gather_integer_coords_exact(self):
        src = leaf(rand((2, 4, 4), 50))
        coords = ad.array([[[1.0, 2.0]], [[0.0, 3.0]]])  # (x, y) pairs (1,0) and (2,3)
        out = ad.bilinear_gather(src, coords)
        np.testing.assert_allclose(out.data[:, 0, 0], src.data[:, 0, 1])
        np.testing.assert_allclose(out.data[:, 0, 1], src.data[:, 3, 2])

    def test_bilinear_gather_midpoint(self):
        src = ad.array([[[0.0, 1.0], [2.0, 3.0]]])
        coords = ad.array([[[0.5]], [[0.5]]])
        assert ad.bilinear_gather(src, coords).data[0, 0, 0] == pytest.approx(1.5)

    def test_bilinear_gather_out_of_bounds_zero(self):
        src = ad.array(np.ones((1, 4, 4)))
        coords = ad.array([[[-3.0]], [[1.0]]])
        assert ad.bilinear_gather(src, coords).data[0, 0, 0] == 0.0

    def test_conv2d_matches_direct_stencil(self):
        x = ad.array(rand((1, 5, 5), 60))
        w = ad.array(rand((1, 1, 3, 3), 61))
        out = ad.conv2d(x, w, stride=1, padding=0)
        expect = np.zeros((1, 3, 3))
        for i in range(3):
            for j in range(3):
                expect[0, i, j] = np.sum(x.data[0, i:i + 3, j:j + 3] * w.data[0, 0])
        np.testing.assert_allclose(out.data, expect, atol=1e-12)

    def test_avg_pool_values(self):
        x = ad.array(np.arange(16.0).reshape(1, 4, 4))
        out = ad.avg_pool2d(x)
        np.testing.assert_allclose(out.data[0], [[2.5, 4.5], [10.5, 12.5]])

    def test_tape_op_counts(self):
        x = leaf(rand((3, 3), 70))
        with ad.Tape() as tape:
            _ = ad.sum(ad.exp(ad.mul(x, x)))
        counts = tape.op_counts()
        assert counts == {"mul": 1, "exp": 1, "sum": 1}
