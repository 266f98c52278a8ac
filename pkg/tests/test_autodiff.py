import math

import numpy as np
import pytest

from ovmask import autodiff as ad
from ovmask.autodiff import (
    Graph,
    Tensor,
    add,
    add_where,
    apply_mask,
    backward,
    broadcast_to,
    clip_min,
    div,
    embedding,
    gather_tokens,
    gelu,
    grad_check,
    l2_normalize,
    layer_norm,
    log_softmax,
    matmul,
    mean,
    mean_pool,
    mul,
    power,
    reshape,
    scatter_tokens,
    softmax,
    stop_gradient,
    sub,
    texp,
    tlog,
    transpose,
    tsum,
    use_graph,
)
from ovmask.errors import ContractError, DegenerateNormError, ShapeError


def t(data, grad=True):
    return Tensor(np.asarray(data, dtype=np.float32), requires_grad=grad)


# ---------------------------------------------------------------------------
# matmul


def test_matmul_identity():
    x = np.random.default_rng(1).normal(size=(3, 3)).astype(np.float32)
    out = matmul(t(np.eye(3)), t(x))
    np.testing.assert_array_equal(out.data, x)


def test_matmul_scalar_product():
    out = matmul(t([[2.0]]), t([[3.0]]))
    assert out.data.shape == (1, 1)
    assert out.item() == 6.0


def test_matmul_triple_loop_oracle(rng):
    a = rng.normal(size=(4, 5)).astype(np.float32)
    b = rng.normal(size=(5, 3)).astype(np.float32)
    expected = np.zeros((4, 3), dtype=np.float64)
    for i in range(4):
        for j in range(3):
            for k in range(5):
                expected[i, j] += float(a[i, k]) * float(b[k, j])
    out = matmul(t(a), t(b))
    np.testing.assert_allclose(out.data, expected, atol=1e-6)


def test_matmul_shape_error():
    with pytest.raises(ShapeError):
        matmul(t(np.ones((2, 3))), t(np.ones((2, 3))))


def test_matmul_batched_and_broadcast_weight(rng):
    a = rng.normal(size=(2, 3, 4)).astype(np.float32)
    w = rng.normal(size=(4, 5)).astype(np.float32)
    out = matmul(t(a), t(w))
    assert out.data.shape == (2, 3, 5)
    np.testing.assert_allclose(out.data, a @ w, atol=1e-6)


# ---------------------------------------------------------------------------
# softmax / l2_normalize


def test_softmax_uniform():
    out = softmax(t([1.7, 1.7, 1.7, 1.7]), axis=-1)
    np.testing.assert_allclose(out.data, [0.25] * 4, atol=1e-6)


def test_softmax_closed_form():
    out = softmax(t([0.0, math.log(3.0)]), axis=-1)
    np.testing.assert_allclose(out.data, [0.25, 0.75], atol=1e-6)


def test_softmax_matches_direct_formula(rng):
    x = rng.normal(size=8).astype(np.float32)
    expected = np.exp(x.astype(np.float64))
    expected /= expected.sum()
    out = softmax(t(x), axis=-1)
    np.testing.assert_allclose(out.data, expected, atol=1e-6)
    assert abs(out.data.sum() - 1.0) < 1e-6


def test_l2_normalize_345():
    out = l2_normalize(t([3.0, 4.0]))
    np.testing.assert_allclose(out.data, [0.6, 0.8], atol=1e-7)


def test_l2_normalize_idempotent_on_unit():
    v = np.array([1.0, 0.0, 0.0], dtype=np.float32)
    out = l2_normalize(t(v))
    np.testing.assert_allclose(out.data, v, atol=1e-7)


def test_l2_normalize_unit_norm(rng):
    x = rng.normal(size=(5, 7)).astype(np.float32)
    out = l2_normalize(t(x))
    np.testing.assert_allclose(np.linalg.norm(out.data, axis=-1), 1.0, atol=1e-6)


def test_l2_normalize_degenerate():
    with pytest.raises(DegenerateNormError):
        l2_normalize(t(np.zeros(4)))


# ---------------------------------------------------------------------------
# stop_gradient


def test_stop_gradient_forward_identity(rng):
    x = t(rng.normal(size=(3, 3)))
    np.testing.assert_array_equal(stop_gradient(x).data, x.data)


def test_stop_gradient_blocks_path(rng):
    x = t(rng.normal(size=5))
    loss = tsum(stop_gradient(x))
    assert not loss.requires_grad
    assert x.grad is None


def test_stop_gradient_one_live_path(rng):
    # d/dx sum(x * sg(x)) = sg(x) by the product rule with one branch blocked
    x = t(rng.normal(size=6))
    loss = tsum(mul(x, stop_gradient(x)))
    loss.backward()
    np.testing.assert_array_equal(x.grad, x.data)


# ---------------------------------------------------------------------------
# grad_check oracle


def test_grad_check_sum_is_exactly_zero(rng):
    x = t(rng.normal(size=8))
    assert grad_check(lambda: tsum(x), x) == 0.0


def test_grad_check_rejects_nonscalar(rng):
    x = t(rng.normal(size=(2, 2)))
    with pytest.raises(ContractError):
        grad_check(lambda: mul(x, x), x)


def test_grad_check_rejects_bad_eps(rng):
    x = t(rng.normal(size=3))
    with pytest.raises(ContractError):
        grad_check(lambda: tsum(x), x, eps=0.5)


OPS = {
    "add": lambda x, y: tsum(add(x, y)),
    "sub": lambda x, y: tsum(sub(x, y)),
    "mul": lambda x, y: tsum(mul(mul(x, y), x)),
    "div": lambda x, y: tsum(div(x, add(mul(y, y), 1.0))),
    "matmul": lambda x, y: tsum(matmul(x, transpose(y))),
    "exp": lambda x, y: tsum(texp(mul(x, 0.3))),
    "log": lambda x, y: tsum(tlog(add(mul(x, x), 1.5))),
    "power": lambda x, y: tsum(power(add(mul(x, x), 1.0), 0.7)),
    "gelu": lambda x, y: tsum(gelu(x)),
    "mean": lambda x, y: mean(mul(x, y)),
    "softmax": lambda x, y: tsum(mul(softmax(x, axis=-1), y)),
    "log_softmax": lambda x, y: tsum(mul(log_softmax(x, axis=-1), y)),
    "l2_normalize": lambda x, y: tsum(mul(l2_normalize(x), y)),
    "reshape": lambda x, y: tsum(mul(reshape(x, (8, 2)), reshape(y, (8, 2)))),
    "transpose": lambda x, y: tsum(mul(transpose(x), transpose(y))),
    "mean_pool": lambda x, y: tsum(mul(mean_pool(reshape(x, (2, 2, 4))), reshape(tsum(y, axis=0), (1, 4)))),
    "broadcast_to": lambda x, y: tsum(mul(broadcast_to(reshape(x, (1, 4, 4)), (3, 4, 4)), 0.5)),
}


@pytest.mark.parametrize("name", sorted(OPS))
def test_grad_check_ops_20_points(name):
    f = OPS[name]
    rng = np.random.default_rng(hash(name) % 2**32)
    for _ in range(20):
        x = t(rng.normal(size=(4, 4)))
        y = t(rng.normal(size=(4, 4)))
        err = grad_check(lambda: f(x, y), [x, y])
        assert err < 1e-3, f"{name}: {err}"


def test_grad_check_clip_min_away_from_boundary():
    # the clamp kink is non-differentiable; keep sample points off it
    rng = np.random.default_rng(3)
    for _ in range(20):
        raw = rng.normal(size=(4, 4))
        raw[np.abs(raw - 0.1) < 0.1] += 0.3
        x = t(raw)
        y = t(rng.normal(size=(4, 4)))
        err = grad_check(lambda: tsum(mul(clip_min(x, 0.1), y)), [x, y])
        assert err < 1e-3


def test_grad_check_layer_norm():
    rng = np.random.default_rng(7)
    for _ in range(20):
        x = t(rng.normal(size=(3, 6)))
        scale = t(1.0 + 0.1 * rng.normal(size=6))
        shift = t(0.1 * rng.normal(size=6))
        err = grad_check(lambda: tsum(mul(layer_norm(x, scale, shift), x)), [x, scale, shift])
        assert err < 1e-3


def test_grad_check_gather_scatter_embedding():
    rng = np.random.default_rng(11)
    for _ in range(20):
        x = t(rng.normal(size=(2, 5, 3)))
        idx = np.stack([rng.permutation(5)[:2] for _ in range(2)])
        w = t(rng.normal(size=(2, 2, 3)))
        table = t(rng.normal(size=(7, 3)))
        ids = rng.integers(0, 7, size=(2, 4))

        err = grad_check(lambda: tsum(mul(gather_tokens(x, idx), w)), [x, w])
        assert err < 1e-3
        err = grad_check(lambda: tsum(mul(scatter_tokens(w, idx, 5), x)), [w, x])
        assert err < 1e-3
        err = grad_check(lambda: tsum(mul(embedding(table, ids), 0.5)), table)
        assert err < 1e-3


def test_grad_check_apply_mask_and_add_where():
    rng = np.random.default_rng(13)
    for _ in range(20):
        x = t(rng.normal(size=(3, 4, 2)))
        mask = (rng.random((3, 4, 2)) > 0.5).astype(np.float32)
        keep = rng.random((3, 1, 1)) > 0.5
        pe = rng.normal(size=(1, 4, 2)).astype(np.float32)
        err = grad_check(lambda: tsum(mul(apply_mask(x, mask), x)), x)
        assert err < 1e-3
        err = grad_check(lambda: tsum(mul(add_where(x, pe, keep), x)), x)
        assert err < 1e-3


# ---------------------------------------------------------------------------
# graph invariants


def test_backward_accumulates_like_sum_of_losses(rng):
    base = rng.normal(size=(3, 3)).astype(np.float32)

    def run_joint():
        x = t(base)
        joint = add(tsum(mul(x, x)), mean(texp(x)))
        joint.backward()
        return x.grad.copy()

    def run_split():
        x = t(base)
        tsum(mul(x, x)).backward()
        mean(texp(x)).backward()
        return x.grad.copy()

    with use_graph(Graph()):
        g_joint = run_joint()
    with use_graph(Graph()):
        g_split = run_split()
    np.testing.assert_allclose(g_joint, g_split, atol=1e-6)


def test_recording_order_is_topological(rng):
    with use_graph(Graph()) as g:
        x = t(rng.normal(size=(3, 3)))
        y = mul(x, x)
        z = tsum(add(y, texp(y)))
        z.backward()
        seen = set()
        for node in g.nodes:
            for parent in node.parents:
                assert parent is x or id(parent) in seen or not parent.requires_grad
            seen.add(id(node.out))


def test_backward_requires_scalar(rng):
    x = t(rng.normal(size=(2, 2)))
    y = mul(x, x)
    with pytest.raises(ContractError):
        backward(y)


def test_no_grad_disables_recording(rng):
    with use_graph(Graph()) as g:
        x = t(rng.normal(size=4))
        with ad.no_grad():
            out = mul(x, x)
        assert not out.requires_grad
        assert len(g) == 0


def test_deterministic_recompute(rng):
    base = rng.normal(size=(4, 4)).astype(np.float32)

    def run():
        with use_graph(Graph()):
            x = t(base)
            loss = mean(gelu(matmul(x, transpose(x))))
            loss.backward()
            return loss.data.tobytes(), x.grad.tobytes()

    assert run() == run()


def test_requires_grad_false_never_accumulates(rng):
    x = t(rng.normal(size=4), grad=False)
    y = t(rng.normal(size=4))
    tsum(mul(x, y)).backward()
    assert x.grad is None
    assert y.grad is not None


def test_grad_shape_matches_data(rng):
    x = t(rng.normal(size=(2, 3, 4)))
    tsum(mul(x, x)).backward()
    assert x.grad.shape == x.data.shape
