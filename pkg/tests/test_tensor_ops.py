import numpy as np
import pytest

from reprime.autodiff import (
    BNParams,
    ShapeError,
    Tape,
    Tensor,
    add,
    batch_norm,
    concat,
    conv2d,
    cosine_similarity,
    div,
    exp,
    gather_pairs,
    global_avg_pool,
    l2_normalize,
    linear,
    log,
    log_softmax,
    matmul,
    max_pool2,
    mul,
    neg,
    relu,
    reshape,
    slice_rows,
    softmax,
    sqrt,
    sub,
    tmean,
    transpose,
    tsum,
)

from conftest import conv2d_naive, gradcheck


def f32(*shape, rng=None, scale=1.0):
    rng = rng or np.random.default_rng(0)
    return (scale * rng.normal(size=shape)).astype(np.float32)


class TestElementwise:
    def test_relu_values(self):
        out = relu(Tensor([-1.0, 0.0, 2.0]))
        assert np.array_equal(out.data, [0.0, 0.0, 2.0])

    def test_add_broadcast(self):
        out = add(Tensor(np.ones((2, 3))), Tensor(np.arange(3, dtype=np.float32)))
        assert out.shape == (2, 3)
        assert np.array_equal(out.data[0], [1.0, 2.0, 3.0])

    def test_softmax_uniform(self):
        out = softmax(Tensor([0.0, 0.0, 0.0]))
        assert np.allclose(out.data, 1.0 / 3.0)

    def test_l2_normalize_345(self):
        out = l2_normalize(Tensor([3.0, 4.0]))
        assert np.allclose(out.data, [0.6, 0.8])

    def test_l2_normalize_unit_norm(self, rng):
        x = f32(8, 16, rng=rng, scale=3.0)
        out = l2_normalize(Tensor(x), axis=1)
        norms = np.linalg.norm(out.data, axis=1)
        assert np.all(np.abs(norms - 1.0) < 1e-6)

    def test_l2_normalize_zero_vector_errors(self):
        with pytest.raises(ValueError):
            l2_normalize(Tensor(np.zeros(4, dtype=np.float32)))


class TestCosine:
    def test_identical(self):
        assert cosine_similarity(Tensor([1.0, 0.0]), Tensor([1.0, 0.0])) == 1.0

    def test_orthogonal(self):
        assert cosine_similarity(Tensor([1.0, 0.0]), Tensor([0.0, 1.0])) == 0.0

    def test_hand_value(self):
        got = cosine_similarity(Tensor([1.0, 2.0]), Tensor([2.0, 1.0]))
        assert abs(got - 0.8) < 1e-6

    def test_range_and_self(self, rng):
        for _ in range(20):
            u, v = f32(5, rng=rng), f32(5, rng=rng)
            c = cosine_similarity(Tensor(u), Tensor(v))
            assert -1.0 <= c <= 1.0
        u = f32(5, rng=rng)
        assert abs(cosine_similarity(Tensor(u), Tensor(u)) - 1.0) < 1e-6

    def test_zero_vector_errors(self):
        with pytest.raises(ValueError):
            cosine_similarity(Tensor([0.0, 0.0]), Tensor([1.0, 0.0]))


class TestConv:
    def test_identity_kernel(self, rng):
        x = f32(2, 3, 5, 5, rng=rng)
        w = np.zeros((3, 3, 1, 1), dtype=np.float32)
        for i in range(3):
            w[i, i, 0, 0] = 1.0
        out = conv2d(Tensor(x), Tensor(w), stride=1, padding=0)
        assert np.array_equal(out.data, x)

    def test_all_ones_sum(self):
        x = np.ones((1, 1, 3, 3), dtype=np.float32)
        w = np.ones((1, 1, 3, 3), dtype=np.float32)
        out = conv2d(Tensor(x), Tensor(w), stride=1, padding=0)
        assert out.shape == (1, 1, 1, 1)
        assert out.data.reshape(-1)[0] == 9.0

    @pytest.mark.parametrize(
        "xshape,wshape,stride,padding",
        [
            ((2, 3, 8, 8), (4, 3, 3, 3), 1, 0),
            ((2, 3, 8, 8), (4, 3, 3, 3), 1, 1),
            ((1, 2, 7, 9), (3, 2, 3, 3), 2, 1),
            ((2, 4, 8, 8), (5, 4, 5, 5), 1, 2),
            ((1, 1, 4, 4), (1, 1, 1, 1), 1, 0),
        ],
    )
    def test_matches_naive_loops(self, xshape, wshape, stride, padding, rng):
        x, w = f32(*xshape, rng=rng), f32(*wshape, rng=rng)
        got = conv2d(Tensor(x), Tensor(w), stride=stride, padding=padding).data
        want = conv2d_naive(x, w, stride=stride, padding=padding)
        assert got.shape == want.shape
        assert np.max(np.abs(got - want)) < 1e-5

    def test_channel_mismatch(self):
        with pytest.raises(ShapeError):
            conv2d(Tensor(np.zeros((1, 3, 4, 4), np.float32)),
                   Tensor(np.zeros((2, 4, 3, 3), np.float32)))

    def test_kernel_too_large(self):
        with pytest.raises(ShapeError):
            conv2d(Tensor(np.zeros((1, 1, 2, 2), np.float32)),
                   Tensor(np.zeros((1, 1, 5, 5), np.float32)))


class TestBatchNorm:
    def test_eval_identity_params(self, rng):
        x = f32(2, 3, 4, 4, rng=rng)
        bn = BNParams(3, eps=1e-12)
        out = batch_norm(Tensor(x), bn, mode="eval")
        assert np.allclose(out.data, x, atol=1e-5)

    def test_eval_hand_value(self):
        x = np.full((1, 1, 2, 2), 3.0, dtype=np.float32)
        bn = BNParams(1, eps=1e-5)
        bn.running_mean[:] = 1.0
        bn.running_var[:] = 4.0
        bn.gamma.data[:] = 2.0
        bn.beta.data[:] = 0.5
        out = batch_norm(Tensor(x), bn, mode="eval")
        assert np.allclose(out.data, 2.4999975, atol=1e-6)

    def test_train_zero_variance_channel(self):
        x = np.ones((4, 2, 3, 3), dtype=np.float32)
        bn = BNParams(2)
        out = batch_norm(Tensor(x), bn, mode="train")
        assert np.all(np.isfinite(out.data))

    def test_eval_pure_function(self, rng):
        x = f32(2, 3, 4, 4, rng=rng)
        bn = BNParams(3)
        bn.running_mean[:] = rng.normal(size=3)
        bn.running_var[:] = rng.uniform(0.5, 2.0, size=3)
        a = batch_norm(Tensor(x), bn, mode="eval").data
        b = batch_norm(Tensor(x), bn, mode="eval").data
        assert np.array_equal(a, b)

    def test_train_updates_running_stats(self, rng):
        x = f32(8, 2, 4, 4, rng=rng, scale=2.0)
        bn = BNParams(2)
        batch_norm(Tensor(x), bn, mode="train")
        mu = x.mean(axis=(0, 2, 3))
        n = x.shape[0] * x.shape[2] * x.shape[3]
        var = x.var(axis=(0, 2, 3)) * n / (n - 1)
        assert np.allclose(bn.running_mean, 0.1 * mu, atol=1e-5)
        assert np.allclose(bn.running_var, 0.9 + 0.1 * var, atol=1e-4)

    def test_train_no_update_flag(self, rng):
        x = f32(4, 2, 4, 4, rng=rng)
        bn = BNParams(2)
        batch_norm(Tensor(x), bn, mode="train", update_stats=False)
        assert np.array_equal(bn.running_mean, np.zeros(2, np.float32))
        assert np.array_equal(bn.running_var, np.ones(2, np.float32))

    def test_bad_eps(self):
        with pytest.raises(ValueError):
            BNParams(3, eps=0.0)

    def test_channel_mismatch(self):
        with pytest.raises(ShapeError):
            batch_norm(Tensor(np.zeros((1, 3, 2, 2), np.float32)), BNParams(4))


class TestPooling:
    def test_max_pool_values(self):
        x = np.arange(16, dtype=np.float32).reshape(1, 1, 4, 4)
        out = max_pool2(Tensor(x))
        assert np.array_equal(out.data.reshape(2, 2), [[5, 7], [13, 15]])

    def test_max_pool_odd_dims(self):
        with pytest.raises(ShapeError):
            max_pool2(Tensor(np.zeros((1, 1, 3, 4), np.float32)))

    def test_global_avg_pool(self, rng):
        x = f32(2, 3, 4, 4, rng=rng)
        out = global_avg_pool(Tensor(x))
        assert np.allclose(out.data, x.mean(axis=(2, 3)), atol=1e-6)


def sq_mean(t):
    # keeps the probe loss O(1) so FD noise sits at the f32 floor ~1e-4
    return tmean(mul(t, t))


GRAD_CASES = [
    ("add", lambda a, b: sq_mean(add(a, b)), [(3, 4), (3, 4)]),
    ("add_broadcast", lambda a, b: sq_mean(add(a, b)), [(3, 4), (4,)]),
    ("sub", lambda a, b: sq_mean(sub(a, b)), [(3, 4), (3, 4)]),
    ("mul", lambda a, b: tmean(mul(a, b)), [(3, 4), (3, 4)]),
    ("div", lambda a, b: tmean(div(a, b)), [(3, 4), (3, 4)]),
    ("neg", lambda a: sq_mean(neg(a)), [(5,)]),
    ("exp", lambda a: tmean(exp(a)), [(3, 3)]),
    ("log", lambda a: tmean(log(a)), [(3, 3)]),
    ("sqrt", lambda a: tmean(sqrt(a)), [(3, 3)]),
    ("relu", lambda a: sq_mean(relu(a)), [(4, 4)]),
    ("matmul", lambda a, b: sq_mean(matmul(a, b)), [(3, 4), (4, 2)]),
    ("transpose", lambda a: sq_mean(transpose(a)), [(3, 4)]),
    ("reshape", lambda a: sq_mean(reshape(a, (2, 6))), [(3, 4)]),
    ("sum_axis", lambda a: sq_mean(tsum(a, axis=1)), [(3, 4)]),
    ("mean", lambda a: mul(tmean(a), tmean(a)), [(3, 4)]),
    ("mean_axes", lambda a: sq_mean(tmean(a, axis=(0, 2))), [(2, 3, 4)]),
    ("softmax", lambda a: sq_mean(softmax(a, axis=1)), [(3, 5)]),
    ("log_softmax", lambda a: sq_mean(log_softmax(a, axis=1)), [(3, 5)]),
    ("l2_normalize", lambda a: sq_mean(l2_normalize(a, axis=1)), [(3, 5)]),
    ("concat", lambda a, b: sq_mean(concat([a, b])), [(2, 3), (4, 3)]),
    ("slice_rows", lambda a: sq_mean(slice_rows(a, 1, 3)), [(4, 3)]),
    ("maxpool", lambda a: sq_mean(max_pool2(a)), [(2, 2, 4, 4)]),
    ("gap", lambda a: sq_mean(global_avg_pool(a)), [(2, 3, 4, 4)]),
    ("conv", lambda x, w: sq_mean(conv2d(x, w, 1, 1)), [(2, 3, 6, 6), (4, 3, 3, 3)]),
    ("linear", lambda x, w, b: sq_mean(linear(x, w, b)), [(3, 4), (4, 2), (2,)]),
]


class TestGradients:
    def test_sum_grad_is_ones(self, rng):
        x = Tensor(f32(3, 4, rng=rng))
        with Tape() as tape:
            loss = tsum(x)
        assert np.array_equal(tape.backward(loss).of(x), np.ones((3, 4), np.float32))

    def test_square_grad(self):
        x = Tensor(np.array([1.0, 2.0], dtype=np.float32))
        with Tape() as tape:
            loss = tsum(mul(x, x))
        assert np.allclose(tape.backward(loss).of(x), [2.0, 4.0])

    @pytest.mark.parametrize("name,build,shapes", GRAD_CASES, ids=[c[0] for c in GRAD_CASES])
    def test_finite_difference(self, name, build, shapes, rng):
        arrays = [f32(*s, rng=rng, scale=0.8) for s in shapes]
        if name in ("log", "sqrt"):
            arrays = [np.abs(a) + 0.5 for a in arrays]
        if name == "div":
            arrays[1] = np.abs(arrays[1]) + 0.5
        if name == "l2_normalize":
            arrays = [a + np.sign(a) * 0.1 for a in arrays]
        gradcheck(build, arrays)

    def test_gather_pairs_grad(self, rng):
        x = f32(4, 5, rng=rng)
        rows = np.array([0, 1, 2, 3, 0])
        cols = np.array([1, 2, 0, 4, 1])

        def build(a):
            picked = gather_pairs(a, rows, cols)
            return sq_mean(picked)

        gradcheck(build, [x])

    def test_batch_norm_train_grad(self, rng):
        x = f32(4, 2, 3, 3, rng=rng)
        gamma = f32(2, rng=rng) + 1.5
        beta = f32(2, rng=rng)

        def build(xv, g, b):
            bn = BNParams(2)
            bn.gamma = g
            bn.beta = b
            out = batch_norm(xv, bn, mode="train", update_stats=False)
            return sq_mean(out)

        gradcheck(build, [x, gamma, beta], h_scale=3e-3)

    def test_batch_norm_eval_grad(self, rng):
        x = f32(4, 2, 3, 3, rng=rng)

        def build(xv):
            bn = BNParams(2)
            bn.running_mean[:] = [0.3, -0.2]
            bn.running_var[:] = [1.5, 0.7]
            out = batch_norm(xv, bn, mode="eval")
            return sq_mean(out)

        gradcheck(build, [x])
