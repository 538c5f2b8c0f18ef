import math

import numpy as np
import pytest

from treecast import (
    RegimeModel,
    Side,
    check_parent_centrality,
    check_parent_estimator,
    one_sided_normalize,
    principal_direction,
    select_widest_tree,
    similarity_matrix,
    simulate_regime_panel,
    uncertainty_error,
    verify_propositions,
)
from treecast.simulate import (
    PowerIterationError,
    exact_child_targets,
    simulate_driver_path,
)
from treecast.tree import RootedTree


class TestRegimeModel:
    def test_build_partitions_and_rows(self):
        model = RegimeModel.build(n_signals=12, n_clusters=3, dominance=0.85)
        assert len(model.clusters) == 3
        assert sorted(i for c in model.clusters for i in c) == list(range(12))
        assert np.allclose(model.transition.sum(axis=1), 1.0, atol=1e-12)
        assert np.all(np.diag(model.transition) >= 0.85)

    def test_within_cluster_share_shapes_off_diagonal(self):
        model = RegimeModel.build(
            n_signals=6, n_clusters=2, dominance=0.9, within_cluster_share=1.0
        )
        # all off-diagonal mass stays inside the driver's cluster
        for i in range(6):
            for j in range(6):
                if i == j:
                    continue
                same = (i < 3) == (j < 3)
                assert (model.transition[i, j] > 0) == same

    def test_diagonal_below_dominance_rejected(self):
        t = np.array([[0.5, 0.5], [0.1, 0.9]])
        with pytest.raises(ValueError, match="dominance"):
            RegimeModel(
                n_signals=2,
                clusters=((0,), (1,)),
                transition=t,
                dominance=0.8,
            )


class TestSimulatePanel:
    def test_identity_transition_freezes_driver(self):
        model = RegimeModel(
            n_signals=3,
            clusters=((0, 1, 2),),
            transition=np.eye(3),
            dominance=0.99,
            horizon=200,
            seed=42,
        )
        _, drivers = simulate_regime_panel(model)
        assert len(set(drivers.tolist())) == 1

    def test_sticky_chain_dwell_time(self):
        transition = np.array([[0.9, 0.1], [0.1, 0.9]])
        rng = np.random.default_rng(5)
        states = simulate_driver_path(transition, 100_000, rng)
        switches = int(np.sum(states[1:] != states[:-1]))
        mean_dwell = len(states) / (switches + 1)
        assert mean_dwell == pytest.approx(10.0, rel=0.1)

    def test_zero_noise_single_cluster_signals_coincide(self):
        model = RegimeModel.build(
            n_signals=4, n_clusters=1, noise_scale=0.0, horizon=50, seed=3
        )
        panel, _ = simulate_regime_panel(model)
        for j in range(1, 4):
            assert np.array_equal(panel.signals[:, j], panel.signals[:, 0])

    def test_seed_reproducibility(self):
        model = RegimeModel.build(n_signals=6, n_clusters=2, horizon=120, seed=11)
        a_panel, a_drivers = simulate_regime_panel(model)
        b_panel, b_drivers = simulate_regime_panel(model)
        assert np.array_equal(a_panel.signals, b_panel.signals)
        assert np.array_equal(a_panel.target, b_panel.target)
        assert np.array_equal(a_drivers, b_drivers)

    def test_target_tracks_driver_upside(self):
        model = RegimeModel.build(
            n_signals=4, n_clusters=2, noise_scale=0.0, target_noise=0.0,
            horizon=80, seed=9,
        )
        panel, drivers = simulate_regime_panel(model)
        t = 30
        assert panel.target[t + 1] == max(panel.signals[t, drivers[t]], 0.0)


class TestPrincipalDirection:
    def test_identical_columns(self):
        c = np.array([0.6, 0.8, 0.0])
        v1, sigma1 = principal_direction(np.column_stack([c, c, c]))
        assert np.allclose(v1, c, atol=1e-9)
        assert sigma1 == pytest.approx(3.0, abs=1e-9)

    def test_analytic_two_column_case(self):
        r = math.sqrt(0.5)
        matrix = np.column_stack([[1.0, 0.0], [r, r]])
        v1, sigma1 = principal_direction(matrix)
        assert sigma1 == pytest.approx(1.0 + r, abs=1e-9)
        expected = np.array([1.0 + r, r])
        expected = expected / np.linalg.norm(expected)
        assert np.allclose(v1, expected, atol=1e-9)

    def test_single_column(self):
        c = np.array([0.0, 1.0])
        v1, sigma1 = principal_direction(c.reshape(-1, 1))
        assert np.allclose(v1, c)
        assert sigma1 == pytest.approx(1.0, abs=1e-12)

    def test_matches_dense_eigensolver(self, rng):
        for _ in range(20):
            cols = np.abs(rng.standard_normal((12, 4)))
            cols /= np.linalg.norm(cols, axis=0)
            v1, sigma1 = principal_direction(cols)
            gram = cols.T @ cols
            eigvals, eigvecs = np.linalg.eigh(gram)
            assert sigma1 == pytest.approx(float(eigvals[-1]), abs=1e-8)
            assert sigma1 >= max(abs(float(v)) for v in eigvals) - 1e-8
            ref = cols @ eigvecs[:, -1]
            ref /= np.linalg.norm(ref)
            assert min(
                np.linalg.norm(v1 - ref), np.linalg.norm(v1 + ref)
            ) == pytest.approx(0.0, abs=1e-6)
            assert np.all(v1 >= -1e-9)


class TestUncertaintyError:
    def test_colinear_target(self):
        s = np.array([0.6, 0.8])
        assert uncertainty_error(s, [2.5 * s]) == pytest.approx(0.0, abs=1e-12)

    def test_orthogonal_targets(self):
        s = np.array([1.0, 0.0, 0.0])
        targets = [np.array([0.0, 2.0, 0.0]), np.array([0.0, 0.0, 3.0])]
        assert uncertainty_error(s, targets) == pytest.approx(13.0)

    def test_hand_projection(self):
        s = np.array([1.0, 0.0])
        targets = [
            np.array([1.0, 1.0]) / math.sqrt(2.0),
            np.array([1.0, -1.0]) / math.sqrt(2.0),
        ]
        assert uncertainty_error(s, targets) == pytest.approx(1.0)

    def test_requires_unit_norm(self):
        with pytest.raises(ValueError, match="unit"):
            uncertainty_error(np.array([2.0, 0.0]), [np.array([1.0, 0.0])])


def hub_and_spokes():
    """Hub e0 with three symmetric spokes; greedy growth stars around the hub."""
    e = np.eye(4)
    hub = e[0]
    spokes = [(e[0] + e[k]) / math.sqrt(2.0) for k in (1, 2, 3)]
    vectors = {0: hub, 1: spokes[0], 2: spokes[1], 3: spokes[2]}
    tree = RootedTree(
        root=0,
        parent={1: 0, 2: 0, 3: 0},
        edge_sim={1: 0.5, 2: 0.5, 3: 0.5},
        birth_order=(0, 1, 2, 3),
    )
    return tree, vectors


class TestParentCentrality:
    def test_symmetric_hub_has_zero_margin(self):
        tree, vectors = hub_and_spokes()
        report = check_parent_centrality(tree, vectors, tolerance=1e-9)
        assert report.instances_checked == 1
        assert report.violations == ()
        assert report.max_margin_violation == pytest.approx(0.0, abs=1e-12)

    def test_chain_is_vacuous(self):
        tree = RootedTree(
            root=0, parent={1: 0, 2: 1}, edge_sim={1: 0.5, 2: 0.5}, birth_order=(0, 1, 2)
        )
        vectors = {k: np.eye(3)[k] for k in range(3)}
        report = check_parent_centrality(tree, vectors)
        assert report.instances_checked == 0
        assert report.violations == ()

    def test_cluster_panels_clean(self):
        for seed in range(5):
            model = RegimeModel.build(
                n_signals=9, n_clusters=3, noise_scale=0.25, horizon=700, seed=seed
            )
            panel, _ = simulate_regime_panel(model)
            result = verify_propositions(panel, tolerance=1e-9)
            assert result["parent_centrality"]["violations"] == []


class TestParentEstimator:
    def test_exact_child_targets_favor_parent(self):
        tree, vectors = hub_and_spokes()
        report = check_parent_estimator(
            tree, vectors, exact_child_targets(vectors), tolerance=1e-9
        )
        assert report.violations == ()
        assert report.instances_checked == 1

    def test_single_child_colinear_target_zero_error(self):
        tree = RootedTree(
            root=0, parent={1: 0}, edge_sim={1: 1.0}, birth_order=(0, 1)
        )
        v = np.array([0.6, 0.8])
        vectors = {0: v, 1: v.copy()}
        report = check_parent_estimator(tree, vectors, exact_child_targets(vectors))
        assert report.violations == ()
        assert uncertainty_error(vectors[0], [vectors[1]]) == pytest.approx(0.0, abs=1e-12)

    def test_cluster_panels_clean(self):
        for seed in range(5):
            model = RegimeModel.build(
                n_signals=9, n_clusters=3, noise_scale=0.25, horizon=700, seed=100 + seed
            )
            panel, _ = simulate_regime_panel(model)
            result = verify_propositions(panel, tolerance=1e-9)
            assert result["parent_estimator"]["violations"] == []


class TestPythagorasOnGeneratedPanels:
    def test_edges_sum_to_one(self):
        model = RegimeModel.build(n_signals=9, n_clusters=3, horizon=500, seed=77)
        panel, _ = simulate_regime_panel(model)
        slices = panel.window_slices(Side.UPPER, 0, panel.n_rows)
        sim = similarity_matrix(slices)
        tree = select_widest_tree(sim)
        for child, parent in tree.parent.items():
            sq = slices[child].values
            sp = slices[parent].values
            eps = sq - sp * float(sp @ sq)
            assert tree.edge_sim[child] + float(eps @ eps) == pytest.approx(1.0, abs=1e-9)
