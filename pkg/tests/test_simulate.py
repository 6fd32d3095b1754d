import numpy as np
import pytest

from arealwomb.boundary import Probe
from arealwomb.graph import grid_graph
from arealwomb.simulate import (
    SimScenario,
    covariate_dissimilarity,
    generate,
    reference_map,
    synthetic_map,
    true_boundaries,
)


def test_reference_map_shape():
    g = reference_map()
    assert (g.n, g.m) == (58, 139)
    assert g.centroids.shape == (58, 2)
    # regions numbered north to south
    assert np.all(np.diff(g.centroids[:, 1]) <= 0)


def test_reference_map_is_reproducible_from_builder():
    g = synthetic_map()
    ref = reference_map()
    assert g.edges == ref.edges
    np.testing.assert_allclose(g.centroids, ref.centroids)


@pytest.mark.parametrize("variant", ["unstructured", "directed", "undirected"])
def test_same_seed_bit_identical(variant):
    g = grid_graph(4, 4)
    a = generate(SimScenario(variant=variant, seed=5, replicates=2), g)
    b = generate(SimScenario(variant=variant, seed=5, replicates=2), g)
    for name in ("x", "gamma", "theta", "V", "labels", "y"):
        np.testing.assert_array_equal(getattr(a, name), getattr(b, name))
    c = generate(SimScenario(variant=variant, seed=6, replicates=2), g)
    assert not np.array_equal(a.gamma, c.gamma)


def test_replicates_share_field_and_differ_in_counts():
    g = grid_graph(4, 4)
    one = generate(SimScenario(seed=1, replicates=1), g)
    many = generate(SimScenario(seed=1, replicates=4), g)
    np.testing.assert_array_equal(one.phi, many.phi)
    assert not np.array_equal(many.y[0], many.y[1])
    assert np.all(many.y >= 0)


def test_dissimilarity_properties(rng):
    g = reference_map()
    x = rng.normal(15, 5, size=g.n)
    z, sigma = covariate_dissimilarity(g, x)
    e = g.edge_array
    diff = np.abs(x[e[:, 0]] - x[e[:, 1]])
    assert sigma == pytest.approx(np.std(diff, ddof=1))
    assert np.all(z.values >= 0)
    # symmetric by construction: swapping endpoints gives the same value
    np.testing.assert_allclose(z.values[:, 0], np.abs(x[e[:, 1]] - x[e[:, 0]]) / sigma)


def test_zero_signal_gives_unit_poisson():
    g = grid_graph(5, 5)
    sc = SimScenario(beta=(0.0,), rho=(0.5,), eta=(0.5,), tau_s=1e12, replicates=40, seed=3)
    out = generate(sc, g)
    assert np.abs(out.phi).max() < 1e-4
    assert out.y.mean() == pytest.approx(1.0, abs=0.1)


def test_truth_flags_follow_labels():
    g = grid_graph(4, 4)
    out = generate(SimScenario(seed=2), g)
    lab = out.labels.reshape(4, g.n)
    e = g.edge_array
    for d in range(4):
        np.testing.assert_array_equal(
            true_boundaries(out, Probe("single", d)), lab[d, e[:, 0]] != lab[d, e[:, 1]]
        )
    phi = out.phi
    np.testing.assert_array_equal(
        true_boundaries(out, Probe("single", 0)), phi[e[:, 0], 0] != phi[e[:, 1], 0]
    )


def test_constant_field_has_no_boundaries():
    g = grid_graph(3, 3)
    out = generate(SimScenario(beta=(0.0,), rho=(0.5,), eta=(0.5,), K=1), g)
    assert not true_boundaries(out, Probe("single", 0)).any()


def test_reference_scenario_constants():
    sc = SimScenario()
    assert (sc.K, sc.alpha, sc.tau_s) == (15, 1.0, 0.25)
    assert sc.rho == (0.2, 0.8, 0.4, 0.6)
    assert sc.eta == (0.5, 0.25, 0.33, 0.6)
    assert sc.beta == (-2.0, 2.0, 1.0, -1.0)


def test_invalid_scenarios():
    with pytest.raises(ValueError):
        SimScenario(rho=(1.2, 0.1, 0.1, 0.1))
    with pytest.raises(ValueError):
        SimScenario(variant="undirected", rho_dis=5.0)
    with pytest.raises(ValueError):
        SimScenario(eta=(0.1,))
