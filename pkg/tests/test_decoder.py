import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from itpnet.decoder import (
    LossWeights,
    decode,
    init_decoder,
    loss_cls_ce,
    loss_cls_margin,
    loss_reg_laplace,
    loss_reg_smooth_l1,
    total_loss,
    wta_select,
)
from itpnet.numerics import NumericError, Tensor, grad_check, layers, ops


def val(x):
    return float(np.asarray(x.data).reshape(()))


def laplace_ref(x, mu, b):
    return float(np.sum(np.log(2 * b) + np.abs(x - mu) / b))


def smooth_l1_step_ref(r):
    s = abs(r[0]) + abs(r[1])
    return 0.5 * s * s if s < 1.0 else s - 0.5


def rotation(a):
    return np.array([[math.cos(a), -math.sin(a)], [math.sin(a), math.cos(a)]])


# -- decode --------------------------------------------------------------------------


@pytest.fixture(scope="module")
def omega():
    return init_decoder(np.random.default_rng(2), 4 * 64, 128, 6, 12)


def test_decode_shapes(omega, rng):
    p = decode(Tensor(rng.normal(size=(4, 64))), omega, 6, 12)
    assert p.trajectories.shape == (1, 6, 12, 2)
    assert p.scores.shape == (1, 6)
    assert p.scales.shape == (1, 6, 12, 2)
    assert p.K == 6


def test_zero_weights_identical_modes_uniform_scores(rng):
    omega = init_decoder(rng, 8, 16, 6, 12)
    for p in layers.flatten(omega).values():
        p.data = np.zeros_like(p.data)
    omega["traj"]["b"].data = np.tile(rng.normal(size=24), 6)
    p = decode(Tensor(rng.normal(size=(2, 4))), omega, 6, 12)
    traj = p.trajectories.data[0]
    for k in range(1, 6):
        np.testing.assert_array_equal(traj[k], traj[0])
    np.testing.assert_allclose(traj[0], np.cumsum(omega["traj"]["b"].data[:24].reshape(12, 2), axis=0), atol=1e-14)
    np.testing.assert_allclose(p.scores.data, 1 / 6, atol=1e-15)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10**6))
def test_scores_sum_to_one_and_scales_positive(seed):
    r = np.random.default_rng(seed)
    omega = init_decoder(r, 8, 16, 6, 12)
    for p in layers.flatten(omega).values():
        p.data = 3.0 * r.normal(size=p.shape)
    p = decode(Tensor(r.normal(size=(3, 2, 4))), omega, 6, 12)
    np.testing.assert_allclose(p.scores.data.sum(axis=1), 1.0, atol=1e-9)
    assert np.all(p.scales.data >= 1e-3)


def test_initial_scales_near_one(rng):
    omega = init_decoder(rng, 8, 16, 6, 12)
    omega["scale"]["w"].data[:] = 0.0
    p = decode(Tensor(rng.normal(size=(2, 4))), omega, 6, 12)
    np.testing.assert_allclose(p.scales.data, 1.0 + 1e-3, atol=1e-12)


def test_decode_width_mismatch(omega, rng):
    with pytest.raises(ValueError):
        decode(Tensor(rng.normal(size=(3, 64))), omega, 6, 12)


# -- winner takes all ----------------------------------------------------------------


def test_exact_candidate_selected(rng):
    gt = rng.normal(size=(12, 2))
    traj = rng.normal(size=(6, 12, 2))
    traj[3] = gt
    assert wta_select(traj, gt) == 3


def test_identical_candidates_tie_to_lowest(rng):
    gt = rng.normal(size=(12, 2))
    traj = np.repeat(rng.normal(size=(1, 12, 2)), 4, axis=0)
    assert wta_select(traj, gt) == 0


def test_crafted_ade_ranking():
    gt = np.zeros((5, 2))
    traj = np.zeros((3, 5, 2))
    for k, ade in enumerate([2.0, 0.5, 1.1]):
        traj[k, :, 1] = ade  # constant offset: every point is exactly ade away
    assert wta_select(traj, gt) == 1


def test_endpoint_mode():
    gt = np.zeros((3, 2))
    traj = np.zeros((2, 3, 2))
    traj[0, :2] = 1.0  # far on average, exact at the end
    traj[1] = 0.1
    assert wta_select(traj, gt) == 1
    assert wta_select(traj, gt, mode="endpoint") == 0


def test_wta_horizon_mismatch(rng):
    with pytest.raises(ValueError):
        wta_select(rng.normal(size=(6, 12, 2)), rng.normal(size=(10, 2)))


@settings(max_examples=50)
@given(st.integers(0, 10**6))
def test_wta_rigid_invariance(seed):
    r = np.random.default_rng(seed)
    traj, gt = r.normal(size=(6, 12, 2)), r.normal(size=(12, 2))
    R, shift = rotation(r.uniform(0, 2 * math.pi)), r.normal(scale=50, size=2)
    assert wta_select(traj @ R.T + shift, gt @ R.T + shift) == wta_select(traj, gt)


# -- regression losses ---------------------------------------------------------------


def test_laplace_exact_at_half_scale(rng):
    mu = rng.normal(size=(12, 2))
    assert val(loss_reg_laplace(Tensor(mu), mu, Tensor(np.full((12, 2), 0.5)))) == 0.0


def test_laplace_unit_residual_unit_scale():
    mu = np.zeros((3, 2))
    got = val(loss_reg_laplace(Tensor(np.ones((3, 2))), mu, Tensor(np.ones((3, 2)))))
    assert got == pytest.approx(6 * (math.log(2) + 1), abs=1e-12)


def test_laplace_oracle(rng):
    x, mu, b = rng.normal(size=(4, 2)), rng.normal(size=(4, 2)), rng.uniform(0.1, 2, size=(4, 2))
    assert val(loss_reg_laplace(Tensor(x), mu, Tensor(b))) == pytest.approx(laplace_ref(x, mu, b), abs=1e-12)


@pytest.mark.parametrize("bad", [0.0, -1.0])
def test_laplace_rejects_nonpositive_scale(bad):
    with pytest.raises(ValueError):
        loss_reg_laplace(Tensor(np.zeros((2, 2))), np.zeros((2, 2)), Tensor(np.full((2, 2), bad)))


def test_smooth_l1_examples(rng):
    gt = rng.normal(size=(4, 2))
    assert val(loss_reg_smooth_l1(Tensor(gt), gt)) == 0.0
    assert val(loss_reg_smooth_l1(Tensor(np.array([[2.0, 0.0]])), np.zeros((1, 2)))) == 1.5


def test_smooth_l1_oracle(rng):
    x, gt = rng.normal(scale=0.5, size=(3, 2)), rng.normal(scale=0.5, size=(3, 2))
    ref = sum(smooth_l1_step_ref(x[i] - gt[i]) for i in range(3))
    assert val(loss_reg_smooth_l1(Tensor(x), gt)) == pytest.approx(ref, abs=1e-12)


def test_smooth_l1_shape_mismatch():
    with pytest.raises(ValueError):
        loss_reg_smooth_l1(Tensor(np.zeros((3, 2))), np.zeros((4, 2)))


# -- classification losses -----------------------------------------------------------


def test_ce_examples():
    assert val(loss_cls_ce(Tensor(np.eye(6)[2]), 2)) == 0.0
    assert val(loss_cls_ce(Tensor(np.full(6, 1 / 6)), 4)) == pytest.approx(math.log(6), abs=1e-12)
    assert val(loss_cls_ce(Tensor(np.array([0.7, 0.2, 0.1])), 1)) == pytest.approx(1.609438, abs=1e-6)


def test_ce_zero_probability_is_floored():
    assert val(loss_cls_ce(Tensor(np.array([1.0, 0.0])), 1)) == pytest.approx(-math.log(1e-12))


def test_margin_examples():
    assert val(loss_cls_margin(Tensor(np.array([0.1, 0.8, 0.1])), 1, 0.3)) == 0.0
    assert val(loss_cls_margin(Tensor(np.array([0.4, 0.6])), 1, 0.3)) == pytest.approx(0.1, abs=1e-12)
    assert val(loss_cls_margin(Tensor(np.array([0.5, 0.5])), 0, 0.0)) == 0.0
    assert val(loss_cls_margin(Tensor(np.array([1.0])), 0, 0.3)) == 0.0


@settings(max_examples=50)
@given(st.integers(0, 10**6))
def test_classification_losses_nonnegative(seed):
    r = np.random.default_rng(seed)
    p = r.dirichlet(np.ones(6))
    k = int(r.integers(6))
    assert val(loss_cls_ce(Tensor(p), k)) >= 0.0
    assert val(loss_cls_margin(Tensor(p), k, 0.2)) >= 0.0


@settings(max_examples=50)
@given(st.integers(0, 10**6), st.floats(0.1, 20.0))
def test_logit_scaling_keeps_argmax(seed, c):
    z = np.random.default_rng(seed).normal(size=6)
    p1 = ops.softmax(Tensor(z)).data
    p2 = ops.softmax(Tensor(c * z)).data
    assert np.argmax(p1) == np.argmax(p2)


# -- total ---------------------------------------------------------------------------


def test_total_examples():
    one = Tensor(np.array(1.0))
    assert val(total_loss(one, one, one, one, LossWeights(0.1, 0.1))) == pytest.approx(2.2, abs=1e-12)
    r, c = Tensor(np.array(0.3)), Tensor(np.array(0.4))
    assert val(total_loss(r, c, Tensor(np.array(9.0)), Tensor(np.array(9.0)), LossWeights(0.0, 0.0))) == pytest.approx(0.7)
    z = Tensor(np.array(0.0))
    assert val(total_loss(z, z, z, z, LossWeights())) == 0.0


@pytest.mark.parametrize("i,name", list(enumerate(["l_reg", "l_cls", "l_rec", "l_cts"])))
def test_total_names_non_finite_term(i, name):
    parts = [Tensor(np.array(1.0)) for _ in range(4)]
    parts[i] = Tensor(np.array(np.nan))
    with pytest.raises(NumericError, match=name):
        total_loss(*parts, LossWeights())


def test_weights_validated():
    with pytest.raises(ValueError):
        LossWeights(alpha=-0.1)
    with pytest.raises(ValueError):
        LossWeights(family="mse")


# -- gradients -----------------------------------------------------------------------


def test_loss_gradchecks(rng):
    x = Tensor(rng.normal(size=(4, 2)), requires_grad=True)
    b = Tensor(rng.uniform(0.3, 2.0, size=(4, 2)), requires_grad=True)
    mu = x.data + np.where(rng.random((4, 2)) < 0.5, -1, 1) * rng.uniform(0.05, 1.0, size=(4, 2))
    assert grad_check(lambda: loss_reg_laplace(x, mu, b), [x, b], eps=1e-4, order=4).max_rel_error < 1e-5
    assert grad_check(lambda: loss_reg_smooth_l1(x, mu), [x], eps=1e-4, order=4).max_rel_error < 1e-5
    z = Tensor(rng.normal(size=6), requires_grad=True)
    assert grad_check(lambda: loss_cls_ce(ops.softmax(z), 2), [z], eps=1e-4, order=4).max_rel_error < 1e-5
    assert grad_check(lambda: loss_cls_margin(ops.softmax(z), 2, 0.9), [z], eps=1e-4, order=4).max_rel_error < 1e-5


def test_decoder_gradcheck_through_selection(rng):
    omega = init_decoder(rng, 8, 16, 3, 4)
    feats = Tensor(rng.normal(size=(1, 2, 4)))
    gt = rng.normal(size=(1, 4, 2))
    params = list(layers.flatten(omega).values())
    from itpnet.decoder import head_losses

    def fn():
        p = decode(feats, omega, 3, 4, traj_scale=5.0)
        reg, cls, _ = head_losses(p, gt, LossWeights())
        return ops.sum(ops.add(reg, cls))

    # the selected mode is piecewise constant; the random point sits away from ties
    assert grad_check(fn, params, eps=1e-4, order=4).max_rel_error < 1e-5
