import itertools

import numpy as np
import pytest

from boxdenoise3d.errors import ConfigError, ContractViolation, TooManyGroundTruths
from boxdenoise3d.geom3d import Box3D, CameraModel, project_box2d
from boxdenoise3d.matchcost import (
    MatchConfig,
    Prediction,
    Target,
    assign,
    assign_from_matrix,
    cost_matrix,
    geometric_cost,
    hungarian,
    pair_cost,
)
from boxdenoise3d.sampler import GridSpec, sample_proposals

from .oracles import brute_force_assignment, raster_iou_3d

P2 = np.array([[721.5377, 0.0, 609.5593, 44.85728], [0.0, 721.5377, 172.854, 0.2163791], [0.0, 0.0, 1.0, 0.002745884]])
CAM = CameraModel(P2)


def b2d(box):
    return project_box2d(CAM, box).as_array()


def target(box, label=0):
    return Target(label, tuple(b2d(box)), box)


def pred(box, probs=(0.7, 0.2, 0.1)):
    return Prediction(np.array(probs), tuple(b2d(box)), box)


def tup(b):
    return (*b.center, *b.dims, b.yaw)


def hand_iou2d(a, b):
    ix = max(0.0, min(a[2], b[2]) - max(a[0], b[0]))
    iy = max(0.0, min(a[3], b[3]) - max(a[1], b[1]))
    inter = ix * iy
    return inter / ((a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter)


class TestPairCost:
    def test_dummy_is_zero(self):
        assert pair_cost(None, pred(Box3D((0, 1, 20), (1.5, 1.6, 3.9), 0.1))) == 0.0

    def test_perfect(self):
        box = Box3D((1, 1, 20), (1.5, 1.6, 3.9), 0.4)
        assert pair_cost(target(box), pred(box, (1.0, 0.0, 0.0))) == pytest.approx(-2.0, abs=1e-12)

    def test_generic_term_by_term(self):
        g = Box3D((1, 1, 20), (1.5, 1.6, 3.9), 0.4)
        p = Box3D((1.4, 1.05, 20.6), (1.45, 1.7, 4.1), 0.5)
        tg, pr = target(g, label=1), pred(p, (0.3, 0.6, 0.1))
        a, b = np.array(tg.box2d), np.array(pr.box2d)
        l1 = abs(a[0] - b[0]) / 1242 + abs(a[1] - b[1]) / 375 + abs(a[2] - b[2]) / 1242 + abs(a[3] - b[3]) / 375
        want = -2.0 * 0.6 + 5.0 * l1 + 2.0 * (1 - hand_iou2d(a, b)) + 2.0 * (1 - raster_iou_3d(tup(g), tup(p)))
        assert pair_cost(tg, pr) == pytest.approx(want, abs=2 * 1e-3)

    def test_missing_probs(self):
        box = Box3D((1, 1, 20), (1.5, 1.6, 3.9), 0.4)
        with pytest.raises(ContractViolation):
            pair_cost(target(box), Prediction(None, tuple(b2d(box)), box))

    def test_config_validation(self):
        with pytest.raises(ConfigError):
            MatchConfig(0, 0, 0, 0)
        with pytest.raises(ConfigError):
            MatchConfig(-1, 1, 1, 1)

    def test_matrix_matches_pair_cost(self):
        rng = np.random.default_rng(0)
        gts = [target(Box3D((x, 1, 25), (1.5, 1.6, 3.9), 0.2), label=k % 3) for k, x in enumerate((-5, 0, 5))]
        preds = [pred(Box3D((rng.uniform(-6, 6), 1, rng.uniform(22, 28)), (1.5, 1.6, 3.9), 0.2), rng.dirichlet([1, 1, 1])) for _ in range(5)]
        c = cost_matrix(gts, preds)
        for i in range(5):
            for j in range(5):
                assert c[i, j] == pytest.approx(pair_cost(gts[i] if i < 3 else None, preds[j]), abs=1e-12)


class TestHungarian:
    def test_identity(self):
        a = hungarian(np.ones((4, 4)) - np.eye(4))
        assert list(a.perm) == [0, 1, 2, 3] and a.total == 0

    def test_swap(self):
        a = hungarian([[2, 1], [1, 2]])
        assert list(a.perm) == [1, 0] and a.total == 2

    def test_non_square(self):
        with pytest.raises(ContractViolation):
            hungarian(np.zeros((2, 3)))

    @pytest.mark.parametrize("seed", range(20))
    def test_vs_permutations(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(1, 8))
        c = rng.normal(size=(n, n))
        best, _ = brute_force_assignment(c)
        assert hungarian(c).total == pytest.approx(best, abs=1e-9)

    def test_shift_invariance(self):
        c = np.random.default_rng(3).normal(size=(6, 6))
        assert np.array_equal(hungarian(c).perm, hungarian(c + 7.5).perm)


class TestAssign:
    def test_no_gts(self):
        preds = [pred(Box3D((x, 1, 20), (1.5, 1.6, 3.9), 0)) for x in (0, 3)]
        a = assign([], preds)
        assert a.total == 0 and a.matched() == []

    def test_perfect_per_gt(self):
        boxes = [Box3D((x, 1, 20 + x), (1.5, 1.6, 3.9), 0.1 * x) for x in (-4, 0, 4)]
        gts = [target(b) for b in boxes]
        preds = [pred(b, (1.0, 0.0, 0.0)) for b in reversed(boxes)]
        a = assign(gts, preds)
        assert a.matched() == [(0, 2), (1, 1), (2, 0)]
        assert a.total == pytest.approx(-3 * 2.0, abs=1e-12)

    def test_too_many(self):
        box = Box3D((0, 1, 20), (1.5, 1.6, 3.9), 0)
        with pytest.raises(TooManyGroundTruths):
            assign([target(box)] * 3, [pred(box)] * 2)

    def test_three_gts_25_proposals_vs_enumeration(self):
        rng = np.random.default_rng(5)
        gboxes = [Box3D((x, 1, z), (1.5, 1.6, 3.9), 0.3) for x, z in ((-1.0, 20.0), (0.0, 21.0), (1.0, 20.0))]
        anchor = Box3D((0, 1, 20.5), (1.5, 1.6, 3.9), 0.3)
        props = sample_proposals(anchor, GridSpec(1.0, 0.5))
        preds = [pred(p, rng.dirichlet([2, 1, 1])) for p in props]
        gts = [target(b, label=k) for k, b in enumerate(gboxes)]
        full = np.array([[pair_cost(g, p) for p in preds] for g in gts])
        best = min(
            sum(full[i, trip[i]] for i in range(3)) for trip in itertools.permutations(range(25), 3)
        )
        a = assign(gts, preds)
        assert a.total == pytest.approx(best, abs=1e-9)
        assert len(a.matched()) == 3
        assert all(a.costs[3:] == 0)
        fast = assign_from_matrix(geometric_cost(gts, [p.box2d for p in preds], props), np.array([p.probs for p in preds]), [0, 1, 2], 2.0)
        assert [j for _, j in a.matched()] == list(fast)

    def test_class_only_maximizes_probability(self):
        rng = np.random.default_rng(1)
        probs = rng.dirichlet([1, 1, 1], size=6)
        labels = [0, 2, 1]
        box = Box3D((0, 1, 20), (1.5, 1.6, 3.9), 0)
        gts = [target(box, l) for l in labels]
        preds = [Prediction(p, tuple(b2d(box)), box) for p in probs]
        a1 = assign(gts, preds, MatchConfig(1.0, 0, 0, 0))
        a2 = assign(gts, preds, MatchConfig(7.0, 0, 0, 0))
        assert a1.matched() == a2.matched()
        best = max(sum(probs[t[i], labels[i]] for i in range(3)) for t in itertools.permutations(range(6), 3))
        assert sum(probs[j, labels[i]] for i, j in a1.matched()) == pytest.approx(best)
