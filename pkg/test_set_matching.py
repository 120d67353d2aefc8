#!/usr/bin/env python3
"""Tests for spans, Hungarian matching and the matched supervised losses."""

import itertools

import numpy as np
import numpy.testing as npt
import pytest

from glance_focus import numerics as nx
from glance_focus.errors import ContractError
from glance_focus.glance import MemoryBank
from glance_focus.numerics import Tensor
from glance_focus.set_matching import (
    Assignment,
    GroundTruthEvent,
    Span,
    brute_force_assignment,
    hungarian,
    matching_cost_matrix,
    pad_events,
    supervised_losses,
    temporal_iou,
)

OFF = -1e3


def bank(probs, spans) -> MemoryBank:
    probs = np.asarray(probs, dtype=float)
    logits = np.where(probs > 0, np.log(np.maximum(probs, 1e-300)), OFF)
    return MemoryBank(Tensor(np.zeros(probs.shape[:-1] + (4,))), Tensor(logits), Tensor(np.asarray(spans, dtype=float)))


def event(label, center, width) -> GroundTruthEvent:
    return GroundTruthEvent(label, Span(center, width))


class TestSpan:
    def test_out_of_range(self):
        with pytest.raises(ContractError):
            Span(1.2, 0.1)

    def test_interval_is_clamped(self):
        assert Span(0.05, 0.2).interval() == pytest.approx((0.0, 0.15))

    def test_event_needs_span(self):
        with pytest.raises(ContractError):
            GroundTruthEvent(label=1)


class TestTemporalIoU:
    def test_identical(self):
        assert temporal_iou(Span(0.4, 0.3), Span(0.4, 0.3)) == pytest.approx(1.0, abs=1e-6)

    def test_touching(self):
        assert temporal_iou(Span(0.25, 0.5), Span(0.75, 0.5)) == 0.0

    def test_partial(self):
        assert temporal_iou(Span(0.3, 0.4), Span(0.5, 0.4)) == pytest.approx(1.0 / 3.0, abs=1e-6)

    def test_symmetric_and_bounded(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            a, b = (Span(*rng.uniform(0, 1, 2)) for _ in range(2))
            assert temporal_iou(a, b) == pytest.approx(temporal_iou(b, a))
            assert 0.0 <= temporal_iou(a, b) <= 1.0


class TestCostMatrix:
    def test_empty_row_is_zero(self):
        gt = [GroundTruthEvent.empty(), event(0, 0.5, 0.2)]
        cost = matching_cost_matrix(gt, bank([[0.5, 0.5], [0.9, 0.1]], [[0.5, 0.2], [0.1, 0.1]]))
        npt.assert_array_equal(cost[0], 0.0)

    def test_direct_evaluation(self):
        probs = [[0.1, 0.1, 0.8], [0.3, 0.3, 0.4]]
        cost = matching_cost_matrix([event(2, 0.5, 0.2), GroundTruthEvent.empty()],
                                    bank(probs, [[0.6, 0.2], [0.5, 0.5]]), lambda_cls=1.0, lambda_l1=5.0)
        assert cost[0, 0] == pytest.approx(-0.3)

    def test_perfect_prediction(self):
        cost = matching_cost_matrix([event(1, 0.4, 0.1)], bank([[0.0, 1.0]], [[0.4, 0.1]]), lambda_cls=2.0)
        assert cost[0, 0] == pytest.approx(-2.0, abs=1e-12)

    def test_wrong_length(self):
        with pytest.raises(ContractError):
            matching_cost_matrix([event(0, 0.5, 0.1)], bank([[1.0, 0.0], [0.0, 1.0]], [[0.5, 0.1]] * 2))

    def test_pad_events(self):
        padded = pad_events([event(0, 0.5, 0.1)], 3)
        assert [e.is_empty for e in padded] == [False, True, True]
        with pytest.raises(ContractError):
            pad_events(padded, 2)


class TestHungarian:
    def test_diagonal(self):
        assert hungarian([[0, 1], [1, 0]]) == Assignment((0, 1), 0.0)

    def test_three_by_three(self):
        result = hungarian([[4, 1, 3], [2, 0, 5], [3, 2, 2]])
        assert result.permutation == (1, 0, 2)
        assert result.cost == 5.0

    def test_ties_pick_lexicographically_smallest(self):
        assert hungarian(np.zeros((4, 4))).permutation == (0, 1, 2, 3)
        assert hungarian([[1, 1, 0], [1, 1, 0], [0, 0, 5]]).permutation == (0, 2, 1)

    @pytest.mark.parametrize("bad", [np.zeros((2, 3)), [[0, np.inf], [1, 0]], [[np.nan]]])
    def test_rejects_bad_matrices(self, bad):
        with pytest.raises(ContractError):
            hungarian(bad)

    def test_empty(self):
        assert hungarian(np.zeros((0, 0))).permutation == ()

    @pytest.mark.parametrize("n,trials", [(6, 1000), (8, 100)])
    def test_matches_brute_force(self, n, trials):
        rng = np.random.default_rng(n)
        for _ in range(trials):
            cost = rng.integers(0, 10, size=(n, n)).astype(float)
            fast, slow = hungarian(cost), brute_force_assignment(cost)
            assert fast.permutation == slow.permutation
            assert fast.cost == slow.cost

    def test_random_real_costs_are_optimal(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            cost = rng.normal(size=(5, 5))
            best = min(sum(cost[i, p[i]] for i in range(5)) for p in itertools.permutations(range(5)))
            assert hungarian(cost).cost == pytest.approx(best, abs=1e-12)

    def test_constant_row_or_column_shift(self):
        rng = np.random.default_rng(2)
        for _ in range(200):
            cost = rng.integers(0, 10, size=(5, 5)).astype(float)
            base = hungarian(cost)
            row, col = rng.integers(5, size=2)
            by_row = cost.copy()
            by_row[row] += 3.0
            by_col = cost.copy()
            by_col[:, col] -= 2.5
            assert hungarian(by_row) == Assignment(base.permutation, base.cost + 3.0)
            assert hungarian(by_col) == Assignment(base.permutation, base.cost - 2.5)

    def test_permuting_rows_and_columns_permutes_the_assignment(self):
        rng = np.random.default_rng(3)
        for _ in range(100):
            cost = rng.normal(size=(6, 6))
            rows, cols = rng.permutation(6), rng.permutation(6)
            base = hungarian(cost).permutation
            moved = hungarian(cost[rows][:, cols])
            col_of = np.argsort(cols)
            assert moved.permutation == tuple(int(col_of[base[r]]) for r in rows)
            assert moved.cost == pytest.approx(hungarian(cost).cost, abs=1e-12)


class TestSupervisedLosses:
    def test_perfect_fit(self):
        probs = [[0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]
        spans = [[0.3, 0.2], [0.8, 0.1]]
        gt = [event(1, 0.3, 0.2), GroundTruthEvent.empty()]
        l_cls, l_l1 = supervised_losses(gt, bank(probs, spans), Assignment((0, 1), 0.0))
        assert l_cls.item() < 1e-9
        assert l_l1.item() == 0.0

    def test_all_empty_uniform(self):
        classes = 4
        gt = [GroundTruthEvent.empty()] * 3
        l_cls, l_l1 = supervised_losses(gt, bank(np.full((3, classes + 1), 0.2), [[0.5, 0.1]] * 3),
                                        Assignment((0, 1, 2), 0.0))
        assert l_cls.item() == pytest.approx(np.log(classes + 1))
        assert l_l1.item() == 0.0

    def test_span_offset(self):
        gt = [event(0, 0.5, 0.2), GroundTruthEvent.empty()]
        _, l_l1 = supervised_losses(gt, bank([[1.0, 0.0], [0.0, 1.0]], [[0.4, 0.25], [0.9, 0.1]]),
                                    Assignment((0, 1), 0.0))
        assert l_l1.item() == pytest.approx(0.15)

    def test_follows_the_permutation(self):
        gt = [event(0, 0.5, 0.2), GroundTruthEvent.empty()]
        spans = [[0.9, 0.1], [0.5, 0.2]]
        _, l_l1 = supervised_losses(gt, bank([[0.0, 1.0], [1.0, 0.0]], spans), Assignment((1, 0), 0.0))
        assert l_l1.item() == pytest.approx(0.0)

    def test_no_event_weight_zero_ignores_padding(self):
        gt = [event(0, 0.5, 0.2), GroundTruthEvent.empty()]
        probs = [[1.0, 0.0], [1.0, 0.0]]
        l_cls, _ = supervised_losses(gt, bank(probs, [[0.5, 0.2]] * 2), Assignment((0, 1), 0.0), no_event_weight=0.0)
        assert l_cls.item() < 1e-9

    def test_batched_equals_mean_of_equal_sized_samples(self):
        probs = np.random.default_rng(0).dirichlet(np.ones(3), size=(2, 2))
        spans = np.random.default_rng(1).uniform(0, 1, size=(2, 2, 2))
        gts = [[event(0, 0.5, 0.2), GroundTruthEvent.empty()], [event(1, 0.2, 0.1), GroundTruthEvent.empty()]]
        assignments = [Assignment((0, 1), 0.0), Assignment((1, 0), 0.0)]
        l_cls, l_l1 = supervised_losses(gts, bank(probs, spans), assignments)
        singles = [supervised_losses(gts[b], bank(probs[b], spans[b]), assignments[b]) for b in range(2)]
        assert l_cls.item() == pytest.approx(np.mean([s[0].item() for s in singles]))
        assert l_l1.item() == pytest.approx(np.mean([s[1].item() for s in singles]))

    def test_gradients(self):
        gt = [event(1, 0.4, 0.2), GroundTruthEvent.empty(), event(0, 0.8, 0.1)]
        spans = Tensor(np.array([[0.3, 0.3], [0.6, 0.2], [0.7, 0.15]]))
        assignment = Assignment((2, 0, 1), 0.0)

        def loss(logits):
            l_cls, l_l1 = supervised_losses(gt, MemoryBank(Tensor(np.zeros((3, 4))), logits, spans), assignment)
            return l_cls + l_l1

        logits = Tensor(np.random.default_rng(2).normal(size=(3, 3)))
        assert nx.finite_diff_check(loss, logits) < 1e-4
