import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rdgcl.graph import build_laplacian, build_normalized_adjacency
from rdgcl.losses import (AdamState, CLConfig, TrainBatch, adam_step, backward, bpr_loss, contrast_nodes,
                          info_nce, infonce_loss, l2_penalty, total_loss)
from rdgcl.model import RDGConfig, euler_integrate
from rdgcl.trainer import VARIANTS, TrainConfig


def numeric_grad(f, x, h=1e-6):
    g = np.zeros_like(x)
    for idx in np.ndindex(*x.shape):
        old = x[idx]
        x[idx] = old + h
        up = f(x)
        x[idx] = old - h
        down = f(x)
        x[idx] = old
        g[idx] = (up - down) / (2 * h)
    return g


def assert_grad_close(analytic, numeric, rel=1e-6):
    scale = max(np.max(np.abs(numeric)), 1e-12)
    assert np.max(np.abs(analytic - numeric)) / scale < rel


# ---- BPR -------------------------------------------------------------------

def test_bpr_equal_scores_is_ln2():
    final = np.array([[1.0, 0.0], [0.5, 0.5], [0.5, 0.5]])
    loss, _ = bpr_loss(final, TrainBatch([0], [0], [1]), num_users=1)
    assert loss == pytest.approx(np.log(2), abs=1e-12)


def test_bpr_saturates_without_overflow():
    final = np.array([[100.0], [100.0], [-100.0]])
    loss, grad = bpr_loss(final, TrainBatch([0], [0], [1]), 1)
    assert loss < 1e-12 and np.all(np.isfinite(grad))
    loss, _ = bpr_loss(final, TrainBatch([0], [1], [0]), 1)
    assert loss == pytest.approx(20000.0, rel=1e-12)


def test_bpr_gradient_matches_finite_differences(rng):
    final = rng.normal(size=(7, 4))
    batch = TrainBatch([0, 1, 2, 0], [1, 0, 3, 1], [2, 3, 0, 0])
    _, g = bpr_loss(final, batch, 3)
    assert_grad_close(g, numeric_grad(lambda x: bpr_loss(x, batch, 3)[0], final.copy()))


def test_bpr_invariant_to_shared_item_shift():
    # shifting every item row by the same vector leaves score differences unchanged;
    # dyadic values keep the arithmetic exact
    final = np.array([[0.5, -0.25], [1.0, 0.75], [-0.5, 0.125], [0.25, 0.25]])
    shifted = final.copy()
    shifted[2:] += np.array([0.375, -1.5])
    batch = TrainBatch([0, 1], [0, 1], [1, 0])
    assert bpr_loss(final, batch, 2)[0] == bpr_loss(shifted, batch, 2)[0]


# ---- InfoNCE ---------------------------------------------------------------

def test_infonce_single_pair_is_zero(rng):
    x = rng.normal(size=(1, 3))
    loss, ga, gb = info_nce(x, rng.normal(size=(1, 3)), 0.2)
    assert loss == pytest.approx(0.0, abs=1e-12)
    np.testing.assert_allclose(ga, 0, atol=1e-12)


def test_infonce_orthogonal_pair():
    eye = np.eye(2)
    loss, _, _ = info_nce(eye, eye, 1.0)
    assert loss == pytest.approx(0.626524, abs=1e-6)
    assert loss == pytest.approx(2 * np.log1p(np.exp(-1.0)), abs=1e-14)


@pytest.mark.parametrize("tau", [0.1, 0.5, 1.0])
def test_infonce_gradients(rng, tau):
    a, b = rng.normal(size=(2, 5, 3))
    _, ga, gb = info_nce(a, b, tau)
    assert_grad_close(ga, numeric_grad(lambda x: info_nce(x, b, tau)[0], a.copy()))
    assert_grad_close(gb, numeric_grad(lambda x: info_nce(a, x, tau)[0], b.copy()))


def test_infonce_scale_invariant(rng):
    a, b = rng.normal(size=(2, 6, 4))
    scales = rng.uniform(0.1, 10, size=(6, 1))
    assert info_nce(a * scales, b, 0.3)[0] == pytest.approx(info_nce(a, b, 0.3)[0], abs=1e-10)


def test_infonce_zero_row_rejected(rng):
    a = rng.normal(size=(3, 2))
    a[1] = 0
    with pytest.raises(ValueError, match="zero-norm"):
        info_nce(a, a + 1, 0.2)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 8), tau=st.floats(0.05, 2.0))
def test_infonce_nonnegative(seed, n, tau):
    a, b = np.random.default_rng(seed).normal(size=(2, n, 3))
    assert info_nce(a, b, tau)[0] >= -1e-12


def test_contrast_nodes_split_by_type():
    batch = TrainBatch([0, 2, 0], [1, 1, 0], [3, 3, 3])
    users, items = contrast_nodes(batch, num_users=4)
    assert users.tolist() == [0, 2]
    assert items.tolist() == [4, 5]


def test_infonce_loss_adds_user_and_item_terms(rng):
    va, vb = rng.normal(size=(2, 9, 3))
    batch = TrainBatch([0, 1, 2], [0, 2, 2], [1, 1, 0])
    loss, ga, gb = infonce_loss(va, vb, batch, 4, 0.2)
    users, items = [0, 1, 2], [4, 6]
    expected = info_nce(va[users], vb[users], 0.2)[0] + info_nce(va[items], vb[items], 0.2)[0]
    assert loss == pytest.approx(expected, abs=1e-12)
    untouched = [3, 5, 7, 8]
    assert not ga[untouched].any() and not gb[untouched].any()


def test_l2_touched_rows_only(rng):
    e0 = rng.normal(size=(6, 2))
    batch = TrainBatch([0], [1], [0])
    reg, grad = l2_penalty(e0, batch, num_users=3)
    rows = [0, 3, 4]
    assert reg == pytest.approx(np.sum(e0[rows] ** 2), abs=1e-14)
    np.testing.assert_array_equal(grad[rows], 2 * e0[rows])
    assert not grad[[1, 2, 5]].any()
    full, _ = l2_penalty(e0, batch, 3, full_matrix=True)
    assert full == pytest.approx(np.sum(e0 ** 2), abs=1e-14)


# ---- combined objective and configuration ----------------------------------

def test_total_loss_weights():
    assert total_loss(0.5, 0.2, 0.0, CLConfig(lambda1=0.3, lambda2=0.0)) == pytest.approx(0.56, abs=1e-15)


def test_yelp_weights_accepted():
    cfg = CLConfig(tau=0.1, lambda1=0.3, lambda2=5e-5)
    assert (cfg.tau, cfg.lambda1, cfg.lambda2) == (0.1, 0.3, 5e-5)


@pytest.mark.parametrize("kw", [dict(tau=0.0), dict(tau=-1.0), dict(lambda1=-0.1), dict(lambda2=np.inf)])
def test_cl_config_validation(kw):
    with pytest.raises(ValueError):
        CLConfig(**kw)


def test_cross_type_negatives_reserved():
    with pytest.raises(NotImplementedError):
        CLConfig(cross_type_negatives=True)


# ---- adjoint pass ----------------------------------------------------------

@pytest.fixture
def small_ops(make_graph):
    adj = build_normalized_adjacency(make_graph(21, n_nodes=14, density=0.35))
    return adj, build_laplacian(adj)


def test_backward_zero_heads(small_ops, rng):
    adj, lap = small_ops
    tr = euler_integrate(RDGConfig(alpha=0.6, terminal_time=2.0, steps=2, dim=3), lap, adj, rng.normal(size=(14, 3)))
    assert not backward(tr).any()


def test_backward_propagation_only(small_ops, rng):
    adj, lap = small_ops
    tr = euler_integrate(RDGConfig(alpha=0.0, terminal_time=1.0, steps=1, dim=3), lap, adj, rng.normal(size=(14, 3)))
    g = rng.normal(size=(14, 3))
    np.testing.assert_allclose(backward(tr, grad_final=g), adj.to_dense() @ g, atol=1e-13)


@pytest.mark.parametrize("variant", VARIANTS)
def test_backward_matches_finite_differences(small_ops, rng, variant):
    adj, lap = small_ops
    rdg, _ = TrainConfig(variant=variant, rdg=RDGConfig(alpha=0.6, terminal_time=2.0, steps=3, dim=3)).effective()
    wf, wb, ws = rng.normal(size=(3, 14, 3))

    def objective(e0):
        tr = euler_integrate(rdg, lap, adj, e0)
        # a nonlinear head so the check is not trivially linear
        return float(np.sum(np.tanh(tr.final) * wf) + np.sum(tr.view_b ** 2 * wb) + np.sum(np.sin(tr.view_s) * ws))

    e0 = rng.normal(size=(14, 3))
    tr = euler_integrate(rdg, lap, adj, e0)
    g = backward(tr, grad_final=wf / np.cosh(tr.final) ** 2, grad_view_b=2 * tr.view_b * wb,
                 grad_view_s=np.cos(tr.view_s) * ws)
    num = numeric_grad(objective, e0.copy())
    floor = 1e-3 * np.max(np.abs(num))
    assert np.max(np.abs(g - num) / np.maximum(np.abs(num), floor)) < 1e-4


# ---- Adam ------------------------------------------------------------------

def test_adam_zero_gradient_is_noop(rng):
    x = rng.normal(size=(3, 2))
    before = x.copy()
    adam_step(x, np.zeros_like(x), AdamState(lr=0.1))
    np.testing.assert_array_equal(x, before)


def test_adam_first_step_is_lr_sized():
    x = np.array([[1.0, -1.0]])
    adam_step(x, np.array([[3.0, -0.2]]), AdamState(lr=0.01))
    np.testing.assert_allclose(x, [[0.99, -0.99]], atol=1e-8)


def test_adam_minimizes_quadratic():
    x = np.array([[5.0, -3.0]])
    state = AdamState(lr=0.05)
    for _ in range(2000):
        adam_step(x, 2 * x, state)
    assert np.max(np.abs(x)) < 0.05
    assert state.step == 2000


def test_adam_shape_mismatch():
    with pytest.raises(ValueError):
        adam_step(np.zeros((2, 2)), np.zeros((2, 3)), AdamState())


def test_adam_nonfinite_update():
    with pytest.raises(FloatingPointError):
        adam_step(np.zeros(2), np.array([np.nan, 0.0]), AdamState())
