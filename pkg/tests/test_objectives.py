import math

import numpy as np
import pytest
import torch

from meshdiff.objectives import (
    LossBreakdown,
    batch_connection_loss,
    ce_clean_loss,
    classifier_loss,
    connection_loss,
    total_loss,
)


def scalar_ce(logits, targets):
    """Independent scalar softmax/cross-entropy oracle."""
    total = 0.0
    for row, t in zip(logits, targets):
        z = [math.exp(x - max(row)) for x in row]
        total += -math.log(z[t] / sum(z))
    return total / len(targets)


def scalar_bce(logits, labels):
    total = 0.0
    for x, y in zip(logits, labels):
        p = 1.0 / (1.0 + math.exp(-x))
        total += -(y * math.log(p) + (1 - y) * math.log(1 - p))
    return total / len(labels)


def brute_force_connection(logits, groups):
    """Three-loop oracle for the consensus loss."""
    per_group = []
    for g in groups:
        dims = []
        for j in range(3):
            members = [logits[s + j] for s in g]
            consensus = [sum(col) / len(members) for col in zip(*members)]
            l1s = [sum(abs(a - b) for a, b in zip(m, consensus)) for m in members]
            dims.append(sum(l1s) / len(l1s))
        per_group.append(sum(dims) / 3.0)
    return sum(per_group) / len(per_group) if per_group else 0.0


class TestCeCleanLoss:
    def test_one_hot(self):
        x1 = torch.tensor([1, 2, 0])
        logits = torch.full((3, 5), -1e6)
        logits[torch.arange(3), x1] = 1e6
        assert ce_clean_loss(logits, x1).item() < 1e-6

    def test_uniform(self):
        logits = torch.zeros(6, 4)
        x1 = torch.tensor([0, 1, 2, 3, 0, 1])
        assert ce_clean_loss(logits, x1).item() == pytest.approx(math.log(4), abs=1e-7)

    def test_matches_scalar_oracle(self):
        rng = np.random.default_rng(0)
        logits = rng.standard_normal((3, 5))
        x1 = np.array([4, 0, 2])
        got = ce_clean_loss(torch.tensor(logits), torch.tensor(x1)).item()
        assert got == pytest.approx(scalar_ce(logits.tolist(), x1.tolist()), abs=1e-9)

    def test_pad_excluded(self):
        logits = torch.randn(6, 4, dtype=torch.float64)
        x1 = torch.tensor([0, 1, 2, 3, 3, 3])
        valid = torch.tensor([True, True, True, True, False, False])
        got = ce_clean_loss(logits, x1, valid).item()
        want = scalar_ce(logits[:4].tolist(), x1[:4].tolist())
        assert got == pytest.approx(want, abs=1e-9)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            ce_clean_loss(torch.zeros(3, 5), torch.zeros(4, dtype=torch.long))


class TestClassifierLoss:
    def test_confident_correct(self):
        x = torch.tensor([1, 2, 3])
        logits = torch.full((3,), 1e6)
        assert classifier_loss(logits, x, x).item() < 1e-6

    def test_zero_logits(self):
        x1 = torch.tensor([1, 2, 3, 4])
        x_pred = torch.tensor([1, 0, 3, 0])
        got = classifier_loss(torch.zeros(4), x_pred, x1).item()
        assert got == pytest.approx(math.log(2), abs=1e-7)

    def test_matches_scalar_oracle(self):
        logits = [0.3, -1.2, 2.0, 0.0]
        x1 = [5, 6, 7, 8]
        x_pred = [5, 0, 7, 8]
        labels = [1, 0, 1, 1]
        got = classifier_loss(
            torch.tensor(logits, dtype=torch.float64),
            torch.tensor(x_pred),
            torch.tensor(x1),
        ).item()
        assert got == pytest.approx(scalar_bce(logits, labels), abs=1e-9)


class TestConnectionLoss:
    def test_identical_logits(self):
        logits = torch.randn(18, 6).repeat_interleave(1, 0)
        logits[9:12] = logits[0:3]
        loss = connection_loss(logits, [np.array([0, 9])])
        assert loss.item() == pytest.approx(0.0, abs=1e-12)

    def test_hand_case(self):
        # one group, two occurrences, rows [1,0,0,0] vs [0,1,0,0] for each j
        logits = torch.zeros(18, 4)
        for j in range(3):
            logits[0 + j, 0] = 1.0
            logits[9 + j, 1] = 1.0
        loss = connection_loss(logits, [np.array([0, 9])])
        assert loss.item() == pytest.approx(1.0, abs=1e-12)

    def test_matches_bruteforce(self):
        rng = np.random.default_rng(1)
        logits = rng.standard_normal((36, 5))
        groups = [np.array([0, 9, 18]), np.array([3, 21, 30, 33])]
        got = connection_loss(torch.tensor(logits), groups).item()
        want = brute_force_connection(logits.tolist(), [g.tolist() for g in groups])
        assert got == pytest.approx(want, abs=1e-9)

    def test_zero_groups(self):
        assert connection_loss(torch.randn(9, 4), []).item() == 0.0

    def test_occurrence_and_group_permutation_invariance(self):
        rng = np.random.default_rng(2)
        logits = torch.tensor(rng.standard_normal((36, 5)))
        groups = [np.array([0, 9, 18]), np.array([3, 30])]
        a = connection_loss(logits, groups).item()
        b = connection_loss(logits, [np.array([18, 0, 9]), np.array([30, 3])][::-1]).item()
        assert a == pytest.approx(b, abs=1e-12)

    def test_constant_shift_invariance(self):
        rng = np.random.default_rng(3)
        logits = torch.tensor(rng.standard_normal((18, 5)))
        groups = [np.array([0, 9])]
        a = connection_loss(logits, groups).item()
        b = connection_loss(logits + 3.7, groups).item()
        assert a == pytest.approx(b, abs=1e-9)

    def test_out_of_range_offset(self):
        with pytest.raises(ValueError):
            connection_loss(torch.randn(9, 4), [np.array([0, 9])])

    def test_batch_average_over_all_groups(self):
        rng = np.random.default_rng(4)
        l0 = torch.tensor(rng.standard_normal((18, 5)))
        l1 = torch.tensor(rng.standard_normal((18, 5)))
        g0 = [np.array([0, 9])]
        g1 = [np.array([3, 12]), np.array([0, 6])]
        got = batch_connection_loss(torch.stack([l0, l1]), [g0, g1]).item()
        parts = [connection_loss(l0, [g0[0]]).item()] + [
            connection_loss(l1, [g]).item() for g in g1
        ]
        assert got == pytest.approx(sum(parts) / 3, abs=1e-9)


class TestTotalLoss:
    def test_zero(self):
        assert total_loss(0, 0, 0, 0).total == 0

    def test_sum(self):
        bd = total_loss(1, 2, 3, 4)
        assert bd.total == 10
        assert (bd.l_mask, bd.l_uniform, bd.l_phi, bd.l_connection) == (1, 2, 3, 4)

    def test_nan_named(self):
        with pytest.raises(ValueError, match="l_phi"):
            total_loss(1.0, 2.0, float("nan"), 4.0)

    def test_matches_parts_recomputation(self):
        rng = np.random.default_rng(5)
        logits = torch.tensor(rng.standard_normal((18, 6)))
        x1 = torch.tensor(rng.integers(0, 6, 18))
        x_pred = x1.clone()
        x_pred[::4] = (x_pred[::4] + 1) % 6
        corr = torch.tensor(rng.standard_normal(18))
        groups = [np.array([0, 9])]
        parts = (
            ce_clean_loss(logits, x1),
            ce_clean_loss(logits, x1),
            classifier_loss(corr, x_pred, x1),
            connection_loss(logits, groups),
        )
        bd = total_loss(*parts)
        assert bd.total == pytest.approx(sum(float(p) for p in parts), abs=1e-12)
