import numpy as np
import pytest

from moclust.io import dataset_records
from moclust.matnorm import normalize_identifiability, sample
from moclust.simgen import SimConfig, gen_tomarchio, gen_viroli, generate, rand_corr, tomarchio_components, viroli_base


def test_rand_corr_dim_one():
    assert rand_corr(1, np.random.default_rng(0)).tolist() == [[1.0]]


@pytest.mark.parametrize("seed", range(5))
def test_rand_corr_is_correlation_matrix(seed):
    S = rand_corr(3, np.random.default_rng(seed))
    np.testing.assert_allclose(np.diag(S), 1.0, atol=1e-12)
    np.testing.assert_array_equal(S, S.T)
    assert np.linalg.eigvalsh(S).min() > 0


def test_rand_corr_centered_off_diagonal():
    rng = np.random.default_rng(1)
    draws = np.stack([rand_corr(3, rng) for _ in range(1000)])
    off = draws[:, np.triu_indices(3, 1)[0], np.triu_indices(3, 1)[1]]
    assert abs(off.mean()) < 0.05


def test_rand_corr_uniform_marginal():
    # under the uniform (LKJ eta=1) law each correlation is Beta(d/2, d/2) on (-1, 1)
    from scipy import stats

    rng = np.random.default_rng(2)
    d = 4
    draws = np.stack([rand_corr(d, rng) for _ in range(3000)])
    x = (draws[:, 0, 3] + 1) / 2
    assert stats.kstest(x, "beta", args=(d / 2, d / 2)).pvalue > 0.01


def test_viroli_outliers_and_sizes():
    sim = gen_viroli(SimConfig("viroli", 3))
    assert sim.data.X.shape == (300, 3, 5)
    assert sim.is_outlier.sum() == 15
    sizes = np.bincount(sim.true_cluster, minlength=4)[1:]
    expected = np.array([90, 120, 90])
    sd = np.sqrt(300 * np.array([0.3, 0.4, 0.3]) * (1 - np.array([0.3, 0.4, 0.3])))
    assert np.all(np.abs(sizes - expected) < 4 * sd)


def test_viroli_permutations_preserve_entries_and_change_matrix():
    cfg = SimConfig("viroli", 4)
    sim = gen_viroli(cfg)
    base, labels, _ = viroli_base(cfg)
    np.testing.assert_array_equal(sim.true_cluster, labels)
    for i in np.flatnonzero(sim.is_outlier):
        np.testing.assert_array_equal(np.sort(sim.data.X[i].ravel()), np.sort(base[i].ravel()))
        assert not np.array_equal(sim.data.X[i], base[i])
    np.testing.assert_array_equal(sim.data.X[~sim.is_outlier], base[~sim.is_outlier])


def test_viroli_means():
    M = [p.M for p in gen_viroli(SimConfig("viroli", 0)).components]
    assert M[0][0, 0] == 0.5 and M[0][1, 0] == 0.5
    assert not M[1].any()
    assert M[2][0, 0] == -0.5 and M[2][1, 0] == 0.5
    assert np.count_nonzero(M[0]) == 2


@pytest.mark.parametrize("family", ["viroli", "tomarchio", "clean"])
def test_generators_deterministic(family):
    a = generate(SimConfig(family, 17))
    b = generate(SimConfig(family, 17))
    assert list(dataset_records(a.data)) == list(dataset_records(b.data))


def test_tomarchio_contamination():
    sim = gen_tomarchio(SimConfig("tomarchio", 5))
    clean = gen_tomarchio(SimConfig("clean", 5))
    assert sim.data.X.shape == (200, 2, 4)
    assert sim.is_outlier.sum() == 10
    assert clean.is_outlier.sum() == 0
    np.testing.assert_array_equal(sim.true_cluster, clean.true_cluster)
    diff = sim.data.X != clean.data.X
    assert not diff[~sim.is_outlier].any()
    for i in np.flatnonzero(sim.is_outlier):
        cols = np.flatnonzero(diff[i].any(axis=0))
        assert len(cols) == 1
        assert np.all(np.abs(sim.data.X[i, :, cols[0]]) <= 15.0)


def test_tomarchio_parameters_as_printed():
    c1, c2 = tomarchio_components()
    assert c1.M[0].tolist() == [-2.60, -1.10, -0.50, -0.20]
    assert c2.M[1].tolist() == [-3.70, -2.70, -2.00, -1.50]
    assert c2.U.tolist() == [[1.70, 0.5], [0.5, 1.30]]
    assert c1.V[0, 3] == 0.13 and c1.pi == c2.pi == 0.5


def test_tomarchio_generator_moments():
    c1 = tomarchio_components()[0]
    X = sample(c1, np.random.default_rng(6), size=10_000)
    assert np.abs(X.mean(axis=0) - c1.M).max() < 0.1
    S = np.cov(X.transpose(0, 2, 1).reshape(10_000, -1), rowvar=False)
    K = np.kron(c1.V, c1.U)
    assert np.linalg.norm(S - K) / np.linalg.norm(K) < 0.10
    # the generator keeps the printed (un-normalized) covariances
    U, _ = normalize_identifiability(c1.U, c1.V)
    assert not np.allclose(U, c1.U)


def test_config_validation():
    with pytest.raises(ValueError):
        SimConfig("other")
    with pytest.raises(ValueError):
        SimConfig("viroli", n_override=0)
    with pytest.raises(ValueError):
        gen_viroli(SimConfig("clean"))
