import math

import numpy as np
import pytest

from alice.errors import InvalidLabel
from alice.heads import (
    LinearHead,
    LocalHead,
    ModelParams,
    OptimizerState,
    SharedAttention,
    attention_forward,
    global_forward,
    global_loss_and_grads,
    init_model,
    local_forward,
    local_loss_and_grads,
    lr_at_epoch,
    saliency,
    sgd_step,
    softmax,
)
from alice.morph import initial_state, merge_pair


def fd_gradient(fn, arr, h=1e-5):
    """Central finite differences of scalar fn() w.r.t. arr, in place."""
    grad = np.zeros_like(arr)
    it = np.nditer(arr, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        orig = arr[idx]
        arr[idx] = orig + h
        up = fn()
        arr[idx] = orig - h
        down = fn()
        arr[idx] = orig
        grad[idx] = (up - down) / (2 * h)
    return grad


def assert_close_to_fd(analytic, fd, rel=1e-4, floor=1e-7):
    tol = np.maximum(rel * np.abs(fd), floor)
    assert np.all(np.abs(analytic - fd) <= tol), (
        f"max err {np.max(np.abs(analytic - fd))}, max tol {np.max(tol)}")


# -- attention -----------------------------------------------------------------

def test_attention_single_cell():
    amap = np.array([[[1.0, -2.0, 0.5]]])  # H=W=1
    queries = np.random.default_rng(0).normal(size=(4, 3))
    a = attention_forward(queries, amap)
    assert a.shape == (4, 3)
    assert np.allclose(a, amap[0, 0])


def test_attention_identical_keys():
    v = np.array([0.3, -1.2])
    amap = np.tile(v, (2, 3, 1))
    a = attention_forward(np.random.default_rng(1).normal(size=(2, 2)), amap)
    assert np.allclose(a, v)


def test_attention_two_key_closed_form():
    # two cells, orthogonal values; sigma computed independently
    v1, v2 = np.array([1.0, 0.0]), np.array([0.0, 1.0])
    amap = np.stack([v1, v2])[None, :, :]  # H=1, W=2, d=2
    q = np.array([[2.0, 0.5]])
    s1 = (q[0] @ v1) / math.sqrt(2)
    s2 = (q[0] @ v2) / math.sqrt(2)
    sigma = 1.0 / (1.0 + math.exp(-(s1 - s2)))
    a = attention_forward(q, amap)
    assert np.allclose(a[0], sigma * v1 + (1 - sigma) * v2, atol=1e-12)


def test_attention_permutation_equivariant():
    rng = np.random.default_rng(2)
    amap = rng.normal(size=(3, 4, 5))
    q = rng.normal(size=(2, 5))
    cells = amap.reshape(12, 5)
    perm = rng.permutation(12)
    shuffled = cells[perm].reshape(3, 4, 5)
    assert np.allclose(attention_forward(q, amap), attention_forward(q, shuffled))


def test_softmax_rows_sum_to_one_and_survive_huge_logits():
    x = np.array([[1e4, -1e4, 0.0], [3.0, 3.0, 3.0]])
    p = softmax(x)
    assert np.all(np.isfinite(p))
    assert np.allclose(p.sum(axis=1), 1.0, atol=1e-9)


# -- forwards ---------------------------------------------------------------------

def test_global_forward_zero_and_identity():
    head = LinearHead(np.zeros((3, 2)), np.zeros(3))
    assert np.allclose(global_forward(head, np.array([5.0, -1.0])), 0.0)
    head = LinearHead(np.eye(2), np.zeros(2))
    assert np.allclose(global_forward(head, np.array([1.0, 0.0])), [1.0, 0.0])


def test_global_bias_shift_leaves_softmax_unchanged():
    rng = np.random.default_rng(3)
    head = LinearHead(rng.normal(size=(4, 3)), rng.normal(size=4))
    x = rng.normal(size=3)
    z = global_forward(head, x)
    shifted = LinearHead(head.weights, head.biases + 7.5)
    z2 = global_forward(shifted, x)
    assert np.allclose(z2, z + 7.5)
    assert np.allclose(softmax(z2), softmax(z))


def test_local_forward_zero_weights_ignore_everything():
    rng = np.random.default_rng(4)
    shared = SharedAttention(rng.normal(size=(3, 5)))
    head = LocalHead(0, np.zeros((2, 15)), np.zeros(2))
    amap = rng.normal(size=(2, 2, 5))
    assert np.allclose(local_forward(shared, head, amap), 0.0)


def test_local_forward_m1_is_linear_on_descriptor():
    rng = np.random.default_rng(5)
    shared = SharedAttention(rng.normal(size=(1, 4)))
    head = LocalHead(0, rng.normal(size=(3, 4)), rng.normal(size=3))
    amap = rng.normal(size=(2, 3, 4))
    descriptor = attention_forward(shared.queries, amap)[0]
    assert np.allclose(local_forward(shared, head, amap),
                       head.weights @ descriptor + head.biases)


def test_local_forward_composes_with_two_key_fixture():
    v1, v2 = np.array([1.0, 0.0]), np.array([0.0, 1.0])
    amap = np.stack([v1, v2])[None, :, :]
    q = np.array([[2.0, 0.5]])
    shared = SharedAttention(q)
    w = np.array([[1.0, -1.0], [0.5, 2.0]])
    head = LocalHead(0, w, np.array([0.1, -0.2]))
    s1 = (q[0] @ v1) / math.sqrt(2)
    s2 = (q[0] @ v2) / math.sqrt(2)
    sigma = 1.0 / (1.0 + math.exp(-(s1 - s2)))
    descriptor = sigma * v1 + (1 - sigma) * v2
    assert np.allclose(local_forward(shared, head, amap),
                       w @ descriptor + np.array([0.1, -0.2]))


# -- loss and gradients --------------------------------------------------------------

def test_uniform_logits_loss_is_log_arity():
    head = LinearHead(np.zeros((5, 3)), np.zeros(5))
    x = np.random.default_rng(6).normal(size=(7, 3))
    loss, _ = global_loss_and_grads(head, x, [0, 1, 2, 3, 4, 0, 1])
    assert loss == pytest.approx(math.log(5))


def test_duplicated_batch_leaves_loss_and_grads_unchanged():
    rng = np.random.default_rng(7)
    head = LinearHead(rng.normal(size=(3, 4)), rng.normal(size=3))
    x = rng.normal(size=(5, 4))
    y = [0, 2, 1, 0, 2]
    loss1, g1 = global_loss_and_grads(head, x, y)
    loss2, g2 = global_loss_and_grads(head, np.vstack([x, x]), y + y)
    assert loss1 == pytest.approx(loss2)
    for key in g1:
        assert np.allclose(g1[key], g2[key])


def test_invalid_label_rejected():
    head = LinearHead(np.zeros((3, 2)), np.zeros(3))
    with pytest.raises(InvalidLabel):
        global_loss_and_grads(head, np.zeros((1, 2)), [3])


def test_global_gradients_match_finite_differences():
    rng = np.random.default_rng(8)
    head = LinearHead(rng.normal(size=(3, 4)), rng.normal(size=3))
    x = rng.normal(size=(6, 4))
    y = rng.integers(0, 3, size=6)
    _, grads = global_loss_and_grads(head, x, y)
    fd_w = fd_gradient(lambda: global_loss_and_grads(head, x, y)[0], head.weights)
    fd_b = fd_gradient(lambda: global_loss_and_grads(head, x, y)[0], head.biases)
    assert_close_to_fd(grads["weights"], fd_w)
    assert_close_to_fd(grads["biases"], fd_b)


@pytest.mark.parametrize("seed", range(5))
def test_local_gradients_match_finite_differences(seed):
    rng = np.random.default_rng(100 + seed)
    m, d, arity = 2, 3, 3
    shared = SharedAttention(rng.normal(size=(m, d)))
    head = LocalHead(0, rng.normal(size=(arity, m * d)), rng.normal(size=arity))
    maps = rng.normal(size=(4, 2, 2, d))
    labels = rng.integers(0, arity, size=4)

    def loss():
        return local_loss_and_grads(shared, head, maps, labels)[0]

    _, grads = local_loss_and_grads(shared, head, maps, labels)
    assert_close_to_fd(grads["queries"], fd_gradient(loss, shared.queries))
    assert_close_to_fd(grads["weights"], fd_gradient(loss, head.weights))
    assert_close_to_fd(grads["biases"], fd_gradient(loss, head.biases))


def test_shared_queries_receive_gradient_iff_head_nonzero():
    rng = np.random.default_rng(9)
    shared = SharedAttention(rng.normal(size=(2, 3)))
    maps = rng.normal(size=(3, 2, 2, 3))
    labels = [0, 1, 0]
    zero_head = LocalHead(0, np.zeros((2, 6)), np.zeros(2))
    _, g0 = local_loss_and_grads(shared, zero_head, maps, labels)
    assert np.allclose(g0["queries"], 0.0)
    live_head = LocalHead(0, rng.normal(size=(2, 6)), np.zeros(2))
    _, g1 = local_loss_and_grads(shared, live_head, maps, labels)
    assert np.any(np.abs(g1["queries"]) > 1e-8)


# -- optimizer -------------------------------------------------------------------------

def test_sgd_weight_decay_shrinks_weights():
    w = np.full((2, 2), 4.0)
    params = {"weights": w}
    opt = OptimizerState(base_lr=0.1, weight_decay=1e-5)
    sgd_step(params, {"weights": np.zeros((2, 2))}, opt)
    assert np.allclose(params["weights"], 4.0 - 0.1 * 1e-5 * 4.0)


def test_sgd_first_step_is_vanilla():
    w = np.array([1.0, -2.0])
    params = {"weights": w.copy()}
    g = np.array([0.5, 0.25])
    opt = OptimizerState(base_lr=0.2, weight_decay=0.0)
    sgd_step(params, {"weights": g}, opt)
    assert np.allclose(params["weights"], w - 0.2 * g)


def test_sgd_two_steps_momentum_displacement():
    w0 = np.array([3.0])
    params = {"weights": w0.copy()}
    g = np.array([1.0])
    opt = OptimizerState(base_lr=0.1, weight_decay=0.0)
    sgd_step(params, {"weights": g}, opt)
    sgd_step(params, {"weights": g}, opt)
    assert np.allclose(w0 - params["weights"], 0.1 * g * (1.0 + 1.9))


def test_no_decay_set_protects_biases():
    params = {"biases": np.full(3, 2.0)}
    opt = OptimizerState(base_lr=0.1, weight_decay=0.5)
    sgd_step(params, {"biases": np.zeros(3)}, opt, no_decay={"biases"})
    assert np.allclose(params["biases"], 2.0)


def test_lr_schedule():
    assert lr_at_epoch(0.01, 0) == pytest.approx(0.01)
    assert lr_at_epoch(0.01, 1) == pytest.approx(0.01)
    assert lr_at_epoch(0.01, 2) == pytest.approx(0.009)
    assert lr_at_epoch(0.01, 4) == pytest.approx(0.0081)


# -- initialization -----------------------------------------------------------------------

def test_init_deterministic_and_bounded():
    arch = merge_pair(initial_state(6), (0, 1))
    a = init_model(arch, d=8, m=3, seed=42)
    b = init_model(arch, d=8, m=3, seed=42)
    assert np.array_equal(a.global_head.weights, b.global_head.weights)
    assert np.array_equal(a.attention.queries, b.attention.queries)
    assert np.array_equal(a.local_heads[0].weights, b.local_heads[0].weights)
    assert np.all(a.global_head.biases == 0.0)
    assert np.all(a.local_heads[0].biases == 0.0)
    bound = math.sqrt(6.0 / (arch.arity + 8))
    assert np.max(np.abs(a.global_head.weights)) <= bound
    qbound = math.sqrt(6.0 / (3 + 8))
    assert np.max(np.abs(a.attention.queries)) <= qbound


# -- saliency ---------------------------------------------------------------------------------

def test_saliency_zero_model_is_zero():
    arch = initial_state(4)
    model = ModelParams(LinearHead(np.zeros((4, 3)), np.zeros(4)),
                        SharedAttention(np.zeros((2, 3))))
    grid = saliency(model, arch, np.random.default_rng(0).normal(size=(2, 2, 3)), 1)
    assert grid.shape == (2, 2)
    assert np.all(grid == 0.0)


def test_saliency_global_path_uniform():
    rng = np.random.default_rng(10)
    arch = initial_state(4)
    w = rng.normal(size=(4, 5))
    model = ModelParams(LinearHead(w, np.zeros(4)), SharedAttention(rng.normal(size=(2, 5))))
    amap = rng.normal(size=(3, 3, 5))
    grid = saliency(model, arch, amap, 2)
    expected = np.max(np.abs(w[2])) / 9.0
    assert np.allclose(grid, expected)


def test_saliency_local_path_matches_finite_differences():
    rng = np.random.default_rng(11)
    arch = merge_pair(initial_state(3), (1, 2))
    model = init_model(arch, d=3, m=2, seed=5)
    amap = rng.normal(size=(2, 2, 3))
    target = 2
    group = arch.group_by_id(1)
    row = group.members.index(target)

    def score():
        return float(local_forward(model.attention, model.local_heads[1], amap)[row])

    fd = fd_gradient(score, amap)
    expected = np.max(np.abs(fd), axis=2)
    grid = saliency(model, arch, amap, target)
    assert np.allclose(grid, expected, atol=1e-6)
    assert np.all(grid >= 0.0)


def test_saliency_concentrates_on_attended_cell():
    # strong query alignment to cell 0; readout on channel 0
    arch = merge_pair(initial_state(2), (0, 1))
    queries = np.array([[8.0, 0.0]])
    head = LocalHead(0, np.array([[1.0, 0.0], [-1.0, 0.0]]), np.zeros(2))
    model = ModelParams(LinearHead(np.zeros((1, 2)), np.zeros(1)),
                        SharedAttention(queries), {0: head})
    amap = np.array([[[1.0, 0.0], [0.0, 1.0]]])  # H=1, W=2, d=2
    grid = saliency(model, arch, amap, 0)
    assert grid.shape == (1, 2)
    assert grid[0, 0] > grid[0, 1]
