import math

import numpy as np
import pytest

from occmatch.assign import NO_OBJECT, hungarian_solve, match_predictions
from occmatch.geom import DegenerateHeading
from occmatch.loss import (
    PredictionSet,
    class_loss,
    exact_cell_sigma,
    exact_match_weighted_ce,
    loss_case_study,
    loss_and_gradients,
    positional_loss,
    total_loss,
    total_loss_gradients,
    trajectory_loss,
)
from occmatch.scene import AgentClass
from conftest import make_gt, random_gts, random_preds
from oracles import batched_central_difference, central_difference, eq7_total_batched, global_modes

FIELDS = ("class_logits", "delta", "heading_raw", "mode_logits", "modes")


def rel_error(a, n):
    """Entry-wise relative error, floored at 1e-3 in the denominator."""
    return float(np.max(np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-3), initial=0.0))


# --- class term ----------------------------------------------------------


def test_class_loss_examples():
    # log(1 + 3 e^-20): three competing classes each carry e^-20 mass
    assert class_loss([10, -10, -10, -10], AgentClass.CAR) == pytest.approx(math.log1p(3 * math.exp(-20)), rel=1e-6)
    assert class_loss([0, 0, 0, 0], AgentClass.BICYCLE) == pytest.approx(math.log(4))
    assert class_loss([-10, 10, -10, -10], AgentClass.CAR) == pytest.approx(20.0, abs=1e-6)


# --- positional term -----------------------------------------------------


def test_positional_loss_examples():
    assert positional_loss([1, 1], [0, 0], [1, 0], [1, 1], [1, 0]) == pytest.approx(0.0)
    assert positional_loss([0, 0], [1, 0], [1, 0], [0, 0], [1, 0]) == pytest.approx(0.5)
    assert positional_loss([0, 0], [0, 0], [-3, 0], [0, 0], [1, 0]) == pytest.approx(2.0)
    with pytest.raises(DegenerateHeading):
        positional_loss([0, 0], [0, 0], [0, 0], [0, 0], [1, 0])


def test_heading_magnitude_invariance():
    rng = np.random.default_rng(4)
    for _ in range(50):
        raw = rng.normal(size=2)
        gh = rng.normal(size=2)
        gh /= np.linalg.norm(gh)
        k = rng.uniform(0.01, 100)
        a = positional_loss([0, 0], [0.3, 0.1], raw, [1, 1], gh)
        b = positional_loss([0, 0], [0.3, 0.1], k * raw, [1, 1], gh)
        assert a == pytest.approx(b, abs=1e-12)


# --- trajectory term -----------------------------------------------------


def test_trajectory_single_exact_mode():
    T = 5
    modes = np.full((1, T, 2), [0.2, 0.0])
    gt = np.cumsum(modes[0], axis=0)
    loss, m = trajectory_loss(modes, [3.7], [1, 0], [0, 0], gt)
    assert m == 0 and loss == pytest.approx(0.0, abs=1e-12)


def test_trajectory_two_modes_uniform_logits():
    T = 6
    exact = np.full((T, 2), [0.5, 0.1])
    gt = np.cumsum(exact, axis=0) + [2.0, 3.0]
    off = exact.copy()
    off[0] += [0.0, 1.0]  # shifts every later point by 1 m
    loss, m = trajectory_loss(np.stack([exact, off]), [0.0, 0.0], [1, 0], [2.0, 3.0], gt)
    assert m == 0 and loss == pytest.approx(math.log(2))


def test_trajectory_heading_rotation_against_oracle():
    rng = np.random.default_rng(21)
    T = 8
    modes = np.stack([np.full((T, 2), [0.1, 0.0]), rng.normal(scale=0.1, size=(T, 2))])
    start = np.array([1.0, -2.0])
    glob = global_modes(modes, math.pi / 2, start)
    assert np.allclose(glob[0, :, 0], start[0])
    assert np.allclose(np.diff(glob[0, :, 1]), 0.1)
    gt = glob[0] + rng.normal(scale=0.05, size=(T, 2))
    per_mode = [np.mean((glob[m] - gt) ** 2) for m in range(2)]
    logits = np.array([0.3, -0.2])
    ref_m = int(np.argmin(per_mode))
    ref = -(logits[ref_m] - np.log(np.exp(logits).sum())) + per_mode[ref_m]
    loss, m = trajectory_loss(modes, logits, [0.0, 1.0], start, gt)
    assert m == ref_m and loss == pytest.approx(ref, rel=1e-12)


# --- total loss ----------------------------------------------------------


def confident_preds(anchors, cls_index, T=4, M=1):
    K = len(anchors)
    logits = np.full((K, 4), -20.0)
    logits[np.arange(K), cls_index] = 20.0
    return PredictionSet(
        np.asarray(anchors, float), logits, np.zeros((K, 2)), np.tile([1.0, 0.0], (K, 1)),
        np.zeros((K, M)), np.zeros((K, M, T, 2)),
    )


def test_total_loss_no_gts():
    preds = confident_preds([[0, 0], [1, 1], [2, 2]], [3, 3, 3])
    b = total_loss(preds, [], np.full(3, NO_OBJECT))
    assert b.total == pytest.approx(0.0, abs=1e-15)


def test_total_loss_perfect_match():
    preds = confident_preds([[0, 0], [5, 5]], [0, 3])
    gt = make_gt([0, 0], T=4)
    b = total_loss(preds, [gt], np.array([0, NO_OBJECT]))
    assert b.total == pytest.approx(0.0, abs=1e-15)
    assert b.best_mode == {0: 0}
    g = total_loss_gradients(preds, [gt], np.array([0, NO_OBJECT]))
    for f in FIELDS:
        assert np.max(np.abs(getattr(g, f))) < 1e-12


def test_total_loss_decomposition():
    rng = np.random.default_rng(31)
    preds = random_preds(rng)
    gts = random_gts(rng)
    sigma = match_predictions(preds, gts).sigma
    w = (0.7, 1.3, 0.4)
    b = total_loss(preds, gts, sigma, w)
    assert b.total == pytest.approx(w[0] * b.class_loss + w[1] * b.pos_loss + w[2] * b.traj_loss, rel=1e-14)
    assert b.class_loss == pytest.approx(b.per_anchor_class.sum())
    unmatched = sigma == NO_OBJECT
    assert np.all(b.per_anchor_pos[unmatched] == 0) and np.all(b.per_anchor_traj[unmatched] == 0)
    for n in np.nonzero(sigma != NO_OBJECT)[0]:
        g = gts[sigma[n]]
        assert b.per_anchor_class[n] == pytest.approx(class_loss(preds.class_logits[n], g.cls))
        assert b.per_anchor_pos[n] == pytest.approx(
            positional_loss(preds.anchors[n], preds.delta[n], preds.heading_raw[n], g.pos, g.heading))
        t, m = trajectory_loss(preds.modes[n], preds.mode_logits[n], preds.headings()[n], preds.positions()[n], g.future)
        assert b.per_anchor_traj[n] == pytest.approx(t) and b.best_mode[int(n)] == m
    for n in np.nonzero(unmatched)[0]:
        assert b.per_anchor_class[n] == pytest.approx(class_loss(preds.class_logits[n], AgentClass.NO_CLASS))


def test_permutation_invariance():
    rng = np.random.default_rng(32)
    preds = random_preds(rng)
    gts = random_gts(rng)
    sigma = match_predictions(preds, gts).sigma
    perm = rng.permutation(len(preds))
    a = total_loss(preds, gts, sigma).total
    b = total_loss(preds.subset(perm), gts, sigma[perm]).total
    assert a == pytest.approx(b, rel=1e-13)


def test_wta_non_selected_modes_do_not_matter():
    rng = np.random.default_rng(33)
    preds = random_preds(rng)
    gts = random_gts(rng)
    sigma = match_predictions(preds, gts).sigma
    base = total_loss(preds, gts, sigma)
    g = total_loss_gradients(preds, gts, sigma)
    for n, m_star in base.best_mode.items():
        for m in range(preds.modes.shape[1]):
            if m == m_star:
                continue
            assert np.all(g.modes[n, m] == 0.0)
            # a small perturbation that keeps m* selected
            preds.modes[n, m] += 1e-3 * rng.normal(size=preds.modes[n, m].shape)
    after = total_loss(preds, gts, sigma)
    assert after.best_mode == base.best_mode
    assert after.traj_loss == base.traj_loss


def test_zero_traj_weight_ignores_trajectories():
    rng = np.random.default_rng(34)
    preds = random_preds(rng)
    gts = random_gts(rng)
    sigma = match_predictions(preds, gts).sigma
    w = (1.0, 1.0, 0.0)
    a = total_loss(preds, gts, sigma, w).total
    preds.modes += rng.normal(size=preds.modes.shape) * 10
    preds.mode_logits += rng.normal(size=preds.mode_logits.shape) * 10
    assert total_loss(preds, gts, sigma, w).total == a
    g = total_loss_gradients(preds, gts, sigma, w)
    assert np.all(g.modes == 0) and np.all(g.mode_logits == 0)


def test_class_gradient_is_softmax_minus_onehot():
    rng = np.random.default_rng(35)
    preds = random_preds(rng, K=4)
    gts = [make_gt(preds.positions()[2], cls=AgentClass.BICYCLE)]
    sigma = np.array([NO_OBJECT, NO_OBJECT, 0, NO_OBJECT])
    g = total_loss_gradients(preds, gts, sigma)
    p = np.exp(preds.class_logits) / np.exp(preds.class_logits).sum(1, keepdims=True)
    onehot = np.zeros((4, 4))
    onehot[[0, 1, 3], 3] = 1
    onehot[2, AgentClass.BICYCLE] = 1
    assert np.allclose(g.class_logits, p - onehot, atol=1e-14)


def check_gradients(seed, K=12, M=4, T=10, G=3, weights=(1.0, 1.0, 1.0)):
    """Worst entry-wise relative error of the analytic gradients against
    central differences of an independent loss implementation."""
    rng = np.random.default_rng(seed)
    preds = random_preds(rng, K, M, T)
    gts = random_gts(rng, G, T)
    sigma = match_predictions(preds, gts).sigma
    g = total_loss_gradients(preds, gts, sigma, weights)
    gt_arrays = (
        np.array([x.pos for x in gts]), np.array([x.heading for x in gts]),
        np.array([int(x.cls) for x in gts]), np.array([x.future for x in gts]),
    )
    base = {f: getattr(preds, f).copy() for f in FIELDS}
    base["anchors"] = preds.anchors

    def evaluate(batch):
        return eq7_total_batched(batch, *gt_arrays, sigma, weights)

    ref = evaluate({k: (v if k == "anchors" else v[None]) for k, v in base.items()})[0]
    assert total_loss(preds, gts, sigma, weights).total == pytest.approx(ref, rel=1e-12)
    num = batched_central_difference(base, evaluate, FIELDS, 1e-5)
    return max(rel_error(getattr(g, f), num[f]) for f in FIELDS)


@pytest.mark.parametrize("seed", range(10))
def test_gradients_match_finite_differences(seed):
    assert check_gradients(seed) < 1e-5


def test_gradients_with_custom_weights():
    assert check_gradients(99, weights=(0.5, 2.0, 0.25)) < 1e-5


# --- exact-cell baseline -------------------------------------------------


def test_exact_cell_sigma():
    anchors = np.array([[0.0, 0.0], [1.5, 0.0], [3.0, 0.0]])
    s = exact_cell_sigma(anchors, np.array([[0.7, 0.2], [1.6, -0.7], [2.25, 0.0]]))
    # the boundary point 2.25 belongs to the upper cell (half-open)
    assert s.tolist() == [0, 1, 2]
    s = exact_cell_sigma(anchors, np.array([[0.1, 0.0], [0.5, 0.0]]))
    assert s.tolist() == [0, NO_OBJECT, NO_OBJECT]


def test_weighted_ce_examples():
    preds = confident_preds([[0, 0], [1.5, 0], [3, 0]], [3, 3, 3])
    assert exact_match_weighted_ce(preds, []) == pytest.approx(0.0, abs=1e-15)
    logits = np.log([[0.01, 1e-300, 1e-300, 0.99]])
    one = PredictionSet(np.zeros((1, 2)), logits, np.zeros((1, 2)), np.ones((1, 2)), np.zeros((1, 1)), np.zeros((1, 1, 4, 2)))
    assert exact_match_weighted_ce(one, [make_gt([0.1, 0.1])]) == pytest.approx(50 * -math.log(0.01), rel=1e-9)
    assert exact_match_weighted_ce(one, [make_gt([0.1, 0.1])]) == pytest.approx(230.26, abs=0.01)
    with pytest.raises(ValueError):
        exact_match_weighted_ce(one, [], positive_weight=0.0)


def test_exact_ce_regime_gradient():
    rng = np.random.default_rng(41)
    preds = random_preds(rng, K=6, M=2, T=3)
    gts = random_gts(rng, 2, 3)
    sigma = hungarian_solve(np.random.default_rng(0).normal(size=(2, 6))).sigma

    def f():
        return loss_and_gradients(preds, gts, sigma, need_grad=False, regime="exact_ce")[0].total

    _, g = loss_and_gradients(preds, gts, sigma, regime="exact_ce")
    num = central_difference(f, preds.class_logits)
    assert rel_error(g.class_logits, num) < 1e-5


# --- three-scenario case study -------------------------------------------


def hand_weighted_ce(pos_flags, target_flags, w=50.0):
    """Occupied/free CE for the case-study probabilities."""
    total = 0.0
    for pos, tgt in zip(pos_flags, target_flags):
        p_occ = 0.99 if pos else 0.03
        total += -w * math.log(p_occ) if tgt else -math.log(1 - p_occ)
    return total


def test_case_study_values():
    r = loss_case_study()
    by = {c["case"]: c for c in r["cases"]}
    n = 25
    center = [True] + [False] * (n - 1)
    a = hand_weighted_ce(center, center)
    assert by["a_exact"]["without_matching_loss"] == pytest.approx(a, rel=1e-12)
    assert by["a_exact"]["with_matching_loss"] == pytest.approx(a, rel=1e-12)
    neighbor = [False, True] + [False] * (n - 2)
    b_without = hand_weighted_ce(neighbor, center)
    assert by["b_offset"]["without_matching_loss"] == pytest.approx(b_without, rel=1e-12)
    assert by["b_offset"]["with_matching_loss"] == pytest.approx(a + 1.5**2 / 2, rel=1e-12)
    five = [True] * 5 + [False] * (n - 5)
    c = hand_weighted_ce(five, center)
    assert by["c_redundant"]["without_matching_loss"] == pytest.approx(c, rel=1e-12)
    assert by["c_redundant"]["with_matching_loss"] == pytest.approx(c, rel=1e-12)
    assert len(by["c_redundant"]["redundant_anchor_class_loss"]) == 4
    for v in by["c_redundant"]["redundant_anchor_class_loss"].values():
        assert v == pytest.approx(-math.log(0.01), rel=1e-12)
    assert all(r["checks"].values())
