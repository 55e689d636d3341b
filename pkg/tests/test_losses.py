import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pmrecon.losses import (
    EXP_CLAMP,
    EmptyNormalizationError,
    LossConfig,
    confidence_activation,
    confidence_loss,
    norm_factor,
    regression_loss,
)
from pmrecon.pointmap import ConfidenceMap, PairPrediction, Pointmap


def _pm(points, valid=None):
    return Pointmap(np.asarray(points, dtype=np.float64), valid)


def _random_pair(rng, h=8, w=8, drop=0.2):
    def one():
        return _pm(rng.normal(size=(h, w, 3)) + [0, 0, 4], rng.random((h, w)) > drop)

    return one(), one()


def _scaled(pm, c):
    return Pointmap(pm.points * c, pm.valid)


def test_norm_factor_examples():
    assert norm_factor(_pm([[[0.0, 0.0, 2.0]]]), _pm([[[1.0, 1.0, 1.0]]], np.array([[False]]))) == 2.0
    assert norm_factor(_pm([[[1.0, 0.0, 0.0], [0.0, 3.0, 0.0]]])) == 2.0


def test_norm_factor_empty():
    empty = _pm(np.ones((1, 2, 3)), np.zeros((1, 2), bool))
    with pytest.raises(EmptyNormalizationError, match="empty normalization set"):
        norm_factor(empty, empty)


def test_norm_factor_scales_linearly(rng):
    for _ in range(50):
        a, b = _random_pair(rng)
        s = rng.uniform(0.01, 100)
        assert norm_factor(_scaled(a, s), _scaled(b, s)) == pytest.approx(s * norm_factor(a, b), rel=1e-12)


def test_regression_loss_examples(rng):
    a, b = _random_pair(rng)
    rep = regression_loss((a, b), (a, b))
    assert all(np.all(p == 0) for p in rep.per_pixel)
    one = regression_loss((_pm([[[0.0, 0.0, 1.0]]]), _pm([[[0.0, 0.0, 1.0]]])), (_pm([[[0.0, 0.0, 2.0]]]), _pm([[[0.0, 0.0, 2.0]]])))
    assert one.norm_pred == 1.0 and one.norm_gt == 2.0
    assert one.total == 0.0


def test_regression_loss_excludes_invalid_gt(rng):
    a, b = _random_pair(rng, drop=0.0)
    gt_a = Pointmap(a.points, np.zeros((8, 8), bool))
    rep = regression_loss((a, b), (gt_a, b))
    assert np.all(rep.per_pixel[0] == 0)
    assert not rep.masks[0].any()


def test_regression_loss_size_mismatch(rng):
    a, b = _random_pair(rng)
    small = _pm(np.ones((2, 2, 3)))
    with pytest.raises(ValueError):
        regression_loss((a, b), (small, b))


@given(st.floats(0.1, 10.0), st.integers(0, 2**31))
@settings(max_examples=40, deadline=None)
def test_scale_invariance_property(c, seed):
    rng = np.random.default_rng(seed)
    pred, gt = _random_pair(rng), _random_pair(rng)
    base = regression_loss(pred, gt).per_pixel
    for scaled in (
        regression_loss((_scaled(pred[0], c), _scaled(pred[1], c)), gt),
        regression_loss(pred, (_scaled(gt[0], c), _scaled(gt[1], c))),
    ):
        for x, y in zip(base, scaled.per_pixel):
            assert np.allclose(x, y, atol=1e-9, rtol=0)


def _prediction(pts, conf):
    return PairPrediction(pts[0], ConfidenceMap(conf[0]), pts[1], ConfidenceMap(conf[1]))


def test_confidence_loss_examples(rng):
    a, b = _random_pair(rng)
    two = np.full((8, 8), 2.0)
    assert confidence_loss(_prediction((a, b), (two, two)), (a, b), LossConfig(alpha=0.0)).total == 0.0
    pred, gt = _random_pair(rng), _random_pair(rng)
    conf = (rng.uniform(1, 5, (8, 8)), rng.uniform(1, 5, (8, 8)))
    assert confidence_loss(_prediction(pred, conf), gt, LossConfig(alpha=0.0)).total >= 0


def test_confidence_loss_reduces_to_regression(rng):
    pred, gt = _random_pair(rng), _random_pair(rng)
    ones = np.ones((8, 8))
    reg = regression_loss(pred, gt)
    conf = confidence_loss(_prediction(pred, (ones, ones)), gt, LossConfig(alpha=0.0))
    terms = np.concatenate([p[m] for p, m in zip(reg.per_pixel, reg.masks)])
    assert conf.total == float(np.cumsum(terms)[-1])


def test_confidence_loss_decreases_with_alpha(rng):
    pred, gt = _random_pair(rng), _random_pair(rng)
    conf = (rng.uniform(1.1, 5, (8, 8)), rng.uniform(1.1, 5, (8, 8)))
    totals = [confidence_loss(_prediction(pred, conf), gt, LossConfig(alpha=a)).total for a in (0.0, 0.1, 0.2, 1.0)]
    assert all(x > y for x, y in zip(totals, totals[1:]))


def test_loss_config_validation():
    with pytest.raises(ValueError):
        LossConfig(alpha=-0.1)
    with pytest.raises(ValueError):
        LossConfig(alpha=float("inf"))
    assert LossConfig().alpha == 0.2


def _fd_check(pred, conf, gt, cfg, h=1e-6):
    rep = confidence_loss(_prediction(pred, conf), gt, cfg, with_grad=True)
    worst = 0.0
    for v in range(2):
        for idx in np.argwhere(rep.masks[v])[:10]:
            for a in range(3):
                pts = [p.points.copy() for p in pred]
                pts[v][idx[0], idx[1], a] += h
                up = confidence_loss(_prediction([Pointmap(p, q.valid) for p, q in zip(pts, pred)], conf), gt, cfg).total
                pts[v][idx[0], idx[1], a] -= 2 * h
                dn = confidence_loss(_prediction([Pointmap(p, q.valid) for p, q in zip(pts, pred)], conf), gt, cfg).total
                num = (up - dn) / (2 * h)
                ana = rep.grad_points[v][idx[0], idx[1], a]
                worst = max(worst, abs(num - ana) / max(abs(num), abs(ana), 1e-3))
    return worst


def test_confidence_loss_point_gradient(rng):
    pred, gt = _random_pair(rng), _random_pair(rng)
    conf = (rng.uniform(1, 3, (8, 8)), rng.uniform(1, 3, (8, 8)))
    assert _fd_check(pred, conf, gt, LossConfig()) < 1e-5


def test_confidence_loss_confidence_gradient(rng):
    pred, gt = _random_pair(rng), _random_pair(rng)
    conf = [rng.uniform(1, 3, (8, 8)), rng.uniform(1, 3, (8, 8))]
    cfg = LossConfig(alpha=0.3)
    rep = confidence_loss(_prediction(pred, conf), gt, cfg, with_grad=True)
    h = 1e-6
    for v, (j, i) in [(0, (1, 2)), (1, (5, 5))]:
        if not rep.masks[v][j, i]:
            continue
        c = [x.copy() for x in conf]
        c[v][j, i] += h
        up = confidence_loss(_prediction(pred, c), gt, cfg).total
        c[v][j, i] -= 2 * h
        dn = confidence_loss(_prediction(pred, c), gt, cfg).total
        assert (up - dn) / (2 * h) == pytest.approx(rep.grad_conf[v][j, i], rel=1e-5)


def test_confidence_loss_rejects_nonpositive_confidence(rng):
    pred, gt = _random_pair(rng), _random_pair(rng)
    with pytest.raises(ValueError):
        confidence_loss(_prediction(pred, (np.zeros((8, 8)), np.ones((8, 8)))), gt)


def test_confidence_activation():
    assert confidence_activation(np.array([[0.0]])).weight[0, 0] == 2.0
    low = confidence_activation(np.array([[-30.0, -50.0]])).weight[0]
    assert low[0] > 1.0
    # 1 + e^-50 is below half an ulp above 1, so the correctly rounded result is 1.0
    assert low[1] == float(1 + mpmath.exp(-50))
    high = confidence_activation(np.array([[100.0, EXP_CLAMP]])).weight
    assert np.all(np.isfinite(high))
    oracle = float(1 + mpmath.exp(mpmath.mpf(EXP_CLAMP)))
    assert high[0, 0] == high[0, 1]
    assert high[0, 1] == pytest.approx(oracle, rel=1e-14)
    with pytest.raises(ValueError):
        confidence_activation(np.array([[np.nan]]))
