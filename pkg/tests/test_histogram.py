from datetime import date

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from treecast import (
    Axis,
    ConditionalDist,
    HistogramConfig,
    RangePolicy,
    Side,
    conditional_slice,
    confidence_interval,
    effective_estimate,
    estimate_joint,
    mixture,
)
from treecast.attach import AttachmentPath
from treecast.histogram import JointHistogram, conditioning_matrix

from .conftest import make_panel
from .oracles import naive_recount, naive_side_separated


def path_over(nodes, as_of=date(2005, 1, 3)):
    return AttachmentPath(
        as_of=as_of, i_star=nodes[0], nodes=tuple(nodes), levels_used=len(nodes)
    )


def cond_from(support, mass, level=0):
    return ConditionalDist(
        level=level,
        support=np.asarray(support, dtype=float),
        mass=np.asarray(mass, dtype=float),
        conditioning_realization=(0.0,),
        fallback_used=False,
    )


MINMAX = HistogramConfig(bins_per_dim=2, range_policy=RangePolicy.minmax())


class TestEstimateJoint:
    def quadrant_panel(self):
        # pairs (x_next, s): one observation in each of the four quadrants
        s = np.array([0.0, 1.0, 0.0, 1.0, 0.0])
        x = np.array([0.0, 0.0, 0.0, 1.0, 1.0])
        return make_panel({"s": s}, x)

    def test_quadrant_counts(self):
        panel = self.quadrant_panel()
        joint = estimate_joint(
            panel, path_over([0]), 0, MINMAX.with_window(0, 4), Side.UPPER
        )
        assert joint.total == 4
        assert np.array_equal(joint.counts, [[1, 1], [1, 1]])

    def test_identical_observations_single_cell(self):
        panel = make_panel({"s": np.full(6, 2.0)}, np.full(6, 0.015))
        joint = estimate_joint(
            panel, path_over([0]), 0, MINMAX.with_window(0, 5), Side.UPPER
        )
        assert joint.counts.shape == (1, 1)
        assert joint.counts[0, 0] == 5
        assert all(ax.constant for ax in joint.axes)

    def test_duplicate_signal_concentrates_diagonal(self, rng):
        s = rng.standard_normal(60)
        x = rng.standard_normal(60)
        panel = make_panel({"a": s, "b": s.copy()}, x)
        cfg = HistogramConfig(bins_per_dim=4, range_policy=RangePolicy.minmax())
        joint = estimate_joint(
            panel, path_over([0, 1]), 1, cfg.with_window(0, 59), Side.UPPER
        )
        by_signal = joint.counts.sum(axis=0)
        assert by_signal.sum() == joint.total
        assert np.trace(by_signal) == joint.total  # off-diagonal cells all empty

    def test_sparse_window_warns(self, caplog):
        panel = make_panel({"s": np.arange(30.0)}, np.arange(30.0) / 10)
        cfg = HistogramConfig(bins_per_dim=7, range_policy=RangePolicy.minmax())
        with caplog.at_level("WARNING", logger="treecast.histogram"):
            estimate_joint(panel, path_over([0]), 0, cfg.with_window(0, 20), Side.UPPER)
        assert any("sparse joint" in rec.message for rec in caplog.records)

    def test_empty_window_rejected(self):
        panel = make_panel({"s": np.arange(10.0)}, np.arange(10.0))
        with pytest.raises(ValueError):
            estimate_joint(panel, path_over([0]), 0, MINMAX.with_window(3, 3), Side.UPPER)

    def test_matches_naive_recount(self, rng):
        for _ in range(5):
            rows = int(rng.integers(40, 160))
            n = int(rng.integers(2, 4))
            level = int(rng.integers(0, n))
            bins = int(rng.integers(2, 8))
            panel = make_panel(
                rng.standard_normal((rows, n)), rng.standard_normal(rows)
            )
            cfg = HistogramConfig(bins_per_dim=bins).with_window(0, rows - 1)
            nodes = list(range(level + 1))
            joint = estimate_joint(panel, path_over(nodes), level, cfg, Side.UPPER)
            x_vals = panel.target[1:rows]
            sep = np.column_stack(
                [naive_side_separated(panel.signals[: rows - 1, k], True) for k in nodes]
            )
            expected = naive_recount(x_vals, sep, [ax.edges for ax in joint.axes])
            assert np.array_equal(joint.counts, expected)


class TestConditionalSlice:
    def test_uniform_joint_stays_uniform(self):
        axes = (Axis(edges=np.linspace(0, 1, 5)), Axis(edges=np.linspace(0, 1, 3)))
        joint = JointHistogram(
            level=0, axes=axes, counts=np.full((4, 2), 3, dtype=int), total=24
        )
        cond = conditional_slice(joint, [0.2])
        assert np.allclose(cond.mass, 0.25)
        assert not cond.fallback_used

    def test_quadrant_low_s_bin(self):
        panel = TestEstimateJoint().quadrant_panel()
        joint = estimate_joint(
            panel, path_over([0]), 0, MINMAX.with_window(0, 4), Side.UPPER
        )
        cond = conditional_slice(joint, [0.0])
        assert np.allclose(cond.mass, [0.5, 0.5])

    def test_empty_cell_falls_back_to_marginal(self):
        axes = (Axis(edges=np.linspace(0, 1, 4)), Axis(edges=np.linspace(0, 1, 3)))
        counts = np.zeros((3, 2), dtype=int)
        counts[:, 0] = [1, 2, 1]
        joint = JointHistogram(level=0, axes=axes, counts=counts, total=4)
        cond = conditional_slice(joint, [0.9])  # lands in the empty right bin
        assert cond.fallback_used
        assert np.allclose(cond.mass, [0.25, 0.5, 0.25])

    def test_out_of_range_clamps_and_flags(self):
        axes = (Axis(edges=np.linspace(0, 1, 4)), Axis(edges=np.linspace(0, 1, 3)))
        counts = np.ones((3, 2), dtype=int)
        joint = JointHistogram(level=0, axes=axes, counts=counts, total=6)
        cond = conditional_slice(joint, [99.0])
        assert cond.clamped
        assert np.allclose(cond.mass, [1 / 3, 1 / 3, 1 / 3])

    def test_mass_sums_to_one(self, rng):
        axes = (Axis(edges=np.linspace(-1, 1, 8)), Axis(edges=np.linspace(-1, 1, 8)))
        counts = rng.integers(0, 9, size=(7, 7))
        joint = JointHistogram(level=0, axes=axes, counts=counts, total=int(counts.sum()))
        cond = conditional_slice(joint, [0.3])
        assert float(cond.mass.sum()) == pytest.approx(1.0, abs=1e-9)


class TestConfidenceInterval:
    def test_point_mass(self):
        cond = cond_from([0.02], [1.0])
        assert confidence_interval(cond, 0.9) == (0.02, 0.02)

    def test_uniform_ten_bins(self):
        support = np.arange(0.05, 1.0, 0.1)
        cond = cond_from(support, np.full(10, 0.1))
        lo, hi = confidence_interval(cond, 0.9)
        assert lo == pytest.approx(0.05)
        assert hi == pytest.approx(0.95)

    def test_two_point_mass(self):
        cond = cond_from([-1.0, 1.0], [0.5, 0.5])
        assert confidence_interval(cond, 0.9) == (-1.0, 1.0)

    def test_ordering(self, rng):
        for _ in range(20):
            mass = rng.random(9)
            mass /= mass.sum()
            cond = cond_from(np.sort(rng.standard_normal(9)), mass)
            lo, hi = confidence_interval(cond, float(rng.uniform(0.05, 0.95)))
            assert lo <= hi


class TestMixture:
    def test_single_component_passthrough(self):
        support = np.arange(0.05, 1.0, 0.1)
        cond = cond_from(support, np.full(10, 0.1))
        est = mixture([cond], [confidence_interval(cond, 0.9)])
        assert np.array_equal(est.mixture_mass, cond.mass)
        assert est.x_star == pytest.approx(cond.mean())

    def test_identical_components(self):
        support = np.arange(0.05, 1.0, 0.1)
        mass = np.array([0.05, 0.1, 0.2, 0.3, 0.2, 0.05, 0.04, 0.03, 0.02, 0.01])
        a = cond_from(support, mass)
        b = cond_from(support, mass.copy(), level=1)
        interval = confidence_interval(a, 0.9)
        est = mixture([a, b], [interval, interval])
        truncated = est.components[0].mass
        assert np.allclose(est.mixture_mass, truncated)

    def test_disjoint_uniforms_bimodal_mean_half(self):
        support = np.arange(0.05, 1.0, 0.1)
        low = cond_from(support, np.array([0.2] * 5 + [0.0] * 5))
        high = cond_from(support, np.array([0.0] * 5 + [0.2] * 5), level=1)
        est = mixture(
            [low, high],
            [confidence_interval(low, 0.9), confidence_interval(high, 0.9)],
        )
        assert est.x_star == pytest.approx(0.5)
        assert est.union_interval == (pytest.approx(0.05), pytest.approx(0.95))
        assert np.allclose(est.mixture_mass, 0.1)

    def test_intervals_inside_union(self):
        support = np.linspace(-1, 1, 9)
        a = cond_from(support, np.full(9, 1 / 9))
        b = cond_from(support, np.eye(9)[4], level=1)
        ints = [confidence_interval(a, 0.9), confidence_interval(b, 0.9)]
        est = mixture([a, b], ints)
        lo, hi = est.union_interval
        for ilo, ihi in est.intervals:
            assert lo <= ilo <= ihi <= hi
        assert lo <= est.x_star <= hi

    def test_raw_truncated_mode(self):
        # components keep different amounts of mass inside their intervals
        # (0.9 vs 1.0), so the two averaging conventions must disagree
        support = np.arange(0.05, 1.0, 0.1)
        skew = np.array([0.5, 0.3, 0.05, 0.05, 0.04, 0.03, 0.01, 0.01, 0.005, 0.005])
        a = cond_from(support, skew)
        b = cond_from(support, np.eye(10)[4], level=1)
        ints = [confidence_interval(a, 0.8), confidence_interval(b, 0.8)]
        renorm = mixture([a, b], ints, mode="renormalized")
        raw = mixture([a, b], ints, mode="raw_truncated")
        assert float(raw.mixture_mass.sum()) == pytest.approx(1.0, abs=1e-9)
        assert not np.allclose(raw.mixture_mass, renorm.mixture_mass)

    def test_mismatched_support_rejected(self):
        a = cond_from([0.0, 1.0], [0.5, 0.5])
        b = cond_from([0.0, 2.0], [0.5, 0.5])
        with pytest.raises(ValueError, match="share the X axis"):
            mixture([a, b], [(0.0, 1.0), (0.0, 2.0)])


class TestEffectiveEstimate:
    def test_symmetric_mixture_zero(self):
        support = np.linspace(-0.4, 0.4, 9)
        mass = np.array([0.05, 0.1, 0.15, 0.15, 0.1, 0.15, 0.15, 0.1, 0.05])
        cond = cond_from(support, mass)
        est = mixture([cond], [confidence_interval(cond, 0.9)])
        assert abs(effective_estimate(est)) <= 1e-12

    def test_point_mass(self):
        cond = cond_from([0.02], [1.0])
        est = mixture([cond], [(0.02, 0.02)])
        assert effective_estimate(est) == pytest.approx(0.02)


@settings(max_examples=80, deadline=None)
@given(
    st.lists(st.floats(min_value=0.001, max_value=1.0, width=64), min_size=2, max_size=12),
    st.floats(min_value=0.05, max_value=0.95),
)
def test_interval_mass_at_least_coverage(weights, coverage):
    mass = np.array(weights) / np.sum(weights)
    support = np.linspace(-1.0, 1.0, len(mass))
    cond = cond_from(support, mass)
    lo, hi = confidence_interval(cond, coverage)
    inside = float(mass[(support >= lo) & (support <= hi)].sum())
    assert inside >= coverage - 1e-9


def test_marginal_prefix_equals_fresh_estimate(rng):
    from treecast.histogram import marginal_prefix

    panel = make_panel(rng.standard_normal((90, 4)), rng.standard_normal(90))
    cfg = HistogramConfig(bins_per_dim=5).with_window(0, 80)
    path = path_over([2, 0, 3, 1])
    top = estimate_joint(panel, path, 3, cfg, Side.UPPER)
    for level in range(4):
        direct = estimate_joint(panel, path, level, cfg, Side.UPPER)
        derived = marginal_prefix(top, level)
        assert np.array_equal(derived.counts, direct.counts)
        for a, b in zip(derived.axes, direct.axes):
            assert np.array_equal(a.edges, b.edges)


def test_shared_x_axis_across_levels(rng):
    panel = make_panel(rng.standard_normal((80, 3)), rng.standard_normal(80))
    cfg = HistogramConfig(bins_per_dim=5).with_window(0, 70)
    path = path_over([0, 1, 2])
    joints = [estimate_joint(panel, path, lam, cfg, Side.UPPER) for lam in range(3)]
    for other in joints[1:]:
        assert np.array_equal(other.x_axis.edges, joints[0].x_axis.edges)


def test_conditioning_matrix_matches_naive(rng):
    panel = make_panel(rng.standard_normal((50, 2)), rng.standard_normal(50))
    x, sep, means = conditioning_matrix(panel, path_over([1, 0]), 1, (0, 40), Side.UPPER)
    assert np.array_equal(x, panel.target[1:41])
    assert np.array_equal(sep[:, 0], naive_side_separated(panel.signals[:40, 1], True))
    assert means[0] == pytest.approx(float(np.mean(panel.signals[:40, 1])))
