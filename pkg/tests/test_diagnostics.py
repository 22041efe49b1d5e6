import json
import math

import numpy as np
import pytest

from dgcal import diagnostics as diag
from dgcal.dataset import DomainDataset

from conftest import make_dataset


def pair(pt, pc):
    return diag.DiscreteDistributionPair(None, np.asarray(pt, float), np.asarray(pc, float))


def random_pair(rng, size):
    pt = rng.dirichlet(np.ones(size))
    pc = rng.dirichlet(np.ones(size))
    return pair(pt / pt.sum(), pc / pc.sum())


class TestDensityRatio:
    def test_identical(self):
        p = pair([0.2, 0.3, 0.5], [0.2, 0.3, 0.5])
        var_w, d2 = diag.density_ratio_stats(p)
        assert var_w == pytest.approx(0.0, abs=1e-15) and d2 == pytest.approx(1.0, abs=1e-15)

    def test_worked_example(self):
        p = pair([0.8, 0.2], [0.5, 0.5])
        np.testing.assert_allclose(p.density_ratio(), [1.6, 0.4], rtol=1e-15)
        var_w, d2 = diag.density_ratio_stats(p)
        assert var_w == pytest.approx(0.36, abs=1e-15)
        assert d2 == pytest.approx(1.36, abs=1e-15)

    def test_support_violation(self):
        p = pair([0.5, 0.5], [1.0, 0.0])
        with pytest.raises(diag.UnboundedRatioError) as exc:
            diag.density_ratio_stats(p)
        assert exc.value.points == [1]

    def test_cal_mass_outside_target_is_fine(self):
        var_w, d2 = diag.density_ratio_stats(pair([1.0, 0.0], [0.5, 0.5]))
        assert d2 == pytest.approx(2.0) and var_w == pytest.approx(1.0)

    def test_identity_random(self):
        rng = np.random.default_rng(0)
        for _ in range(500):
            var_w, d2 = diag.density_ratio_stats(random_pair(rng, int(rng.integers(1, 51))), check=False)
            assert abs(var_w - (d2 - 1.0)) <= 1e-10 * max(1.0, d2)

    def test_validation(self):
        with pytest.raises(ValueError):
            pair([0.5, 0.6], [0.5, 0.5])
        with pytest.raises(ValueError):
            pair([1.5, -0.5], [0.5, 0.5])
        with pytest.raises(ValueError):
            pair([1.0], [0.5, 0.5])


class TestGapBound:
    def test_identical(self):
        p = pair([0.3, 0.7], [0.3, 0.7])
        gap, cs, _ = diag.calibration_gap_bound(p, [1.0, 5.0])
        assert gap == pytest.approx(0.0, abs=1e-15) and cs == pytest.approx(0.0, abs=1e-15)

    def test_constant_loss_slack(self):
        p = pair([0.8, 0.2], [0.5, 0.5])
        gap, cs, amgm = diag.calibration_gap_bound(p, [2.0, 2.0])
        assert gap == pytest.approx(0.0, abs=1e-15)
        assert cs == pytest.approx(2.0 * math.sqrt(0.36), rel=1e-14)
        assert cs > 0 and amgm == pytest.approx(0.5 * (0.36 + 4.0))

    def test_chain_random(self):
        rng = np.random.default_rng(1)
        for _ in range(2000):
            p = random_pair(rng, int(rng.integers(1, 21)))
            losses = rng.exponential(size=len(p.p_target)) * rng.uniform(0.1, 10)
            gap, cs, amgm = diag.calibration_gap_bound(p, losses, check=False)
            assert gap <= cs + 1e-12 and cs <= amgm + 1e-12

    def test_loss_checks(self):
        p = pair([0.5, 0.5], [0.5, 0.5])
        with pytest.raises(ValueError):
            diag.calibration_gap_bound(p, [1.0])
        with pytest.raises(ValueError):
            diag.calibration_gap_bound(p, [1.0, -1.0])


class TestDiagnosePair:
    def test_reports_unbounded(self):
        out = diag.diagnose_pair(pair([0.5, 0.5, 0.0], [0.0, 0.0, 1.0]), name="x")
        assert out["unbounded_ratio"] is True
        assert out["offending_points"] == ["0", "1"]
        assert out["d2"] is None and diag.d2_for_ordering(out) == math.inf

    def test_bounded(self):
        out = diag.diagnose_pair(pair([0.8, 0.2], [0.5, 0.5]))
        assert out["unbounded_ratio"] is False
        assert out["d2"] == pytest.approx(1.36)

    def test_json(self):
        text = diag.diagnostics_to_json([diag.diagnose_pair(pair([1.0], [1.0]))])
        assert json.loads(text)["schema"] == diag.DIAGNOSTICS_SCHEMA


class TestInducedHistograms:
    def test_shared_binning(self):
        a = make_dataset((200,), d=3, seed=1)
        b = make_dataset((300,), d=3, seed=2)
        pairs, losses, edges, direction = diag.induced_pairs(a, [b], n_bins=8, pseudocount=0.0)
        assert len(edges) == 9 and losses.shape == (8,)
        assert np.linalg.norm(direction) == pytest.approx(1.0)
        counts = np.histogram(a.features @ direction, bins=edges)[0]
        np.testing.assert_allclose(pairs[0].p_target, counts / 200)

    def test_feature_projection(self):
        a = make_dataset((50,), d=3, seed=3)
        _, _, _, direction = diag.induced_pairs(a, [a], projection="feature:2")
        np.testing.assert_array_equal(direction, [0.0, 0.0, 1.0])
        with pytest.raises(ValueError):
            diag.induced_pairs(a, [a], projection="feature:7")
        with pytest.raises(ValueError):
            diag.induced_pairs(a, [a], projection="pca")

    def test_disjoint_without_pseudocount(self):
        far = make_dataset((50,), d=2, seed=4)
        far = DomainDataset(far.features + 100, far.logits, far.labels, far.domain_tags, 3)
        near = make_dataset((50,), d=2, seed=5)
        pairs, losses, _, _ = diag.induced_pairs(far, [near], n_bins=10, pseudocount=0.0)
        assert diag.diagnose_pair(pairs[0], losses)["unbounded_ratio"]

    def test_pseudocount_keeps_ratio_finite(self):
        far = make_dataset((50,), d=2, seed=4)
        far = DomainDataset(far.features + 100, far.logits, far.labels, far.domain_tags, 3)
        near = make_dataset((50,), d=2, seed=5)
        pairs, losses, _, _ = diag.induced_pairs(far, [near], n_bins=10)
        out = diag.diagnose_pair(pairs[0], losses)
        assert not out["unbounded_ratio"] and out["d2"] > 10
