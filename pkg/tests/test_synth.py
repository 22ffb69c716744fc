import numpy as np
import pytest

from dpmix.errors import ConfigError
from dpmix.synth import SynthConfig, gen_covariance, gen_dataset, sample_student_t


def test_covariance_examples():
    np.testing.assert_array_equal(gen_covariance(4, 0.0), np.eye(4))
    np.testing.assert_array_equal(gen_covariance(2, 0.5), [[1.0, 0.5], [0.5, 1.0]])
    c = gen_covariance(5, 0.3)
    assert np.all(np.diag(c) == 1.0)
    assert c[0, 3] == pytest.approx(0.3**3)


def test_covariance_is_spd():
    rng = np.random.default_rng(0)
    for _ in range(100):
        d, rho = int(rng.integers(1, 51)), float(rng.uniform(0, 0.999))
        c = gen_covariance(d, rho)
        np.testing.assert_array_equal(c, c.T)
        np.linalg.cholesky(c)


@pytest.mark.parametrize("rho", [-0.1, 1.0])
def test_covariance_domain(rho):
    with pytest.raises(ConfigError):
        gen_covariance(3, rho)


def test_no_outliers():
    ds = gen_dataset(SynthConfig(n_samples=100, n_features=3, outlier_fraction=0.0, seed=1))
    assert ds.labels.sum() == 0 and ds.X.shape == (100, 3)


def test_deterministic():
    a = gen_dataset(SynthConfig(seed=5))
    b = gen_dataset(SynthConfig(seed=5))
    assert a.X.tobytes() == b.X.tobytes()
    np.testing.assert_array_equal(a.labels, b.labels)
    c = gen_dataset(SynthConfig(seed=6))
    assert a.X.tobytes() != c.X.tobytes()


@pytest.mark.parametrize("n,f", [(2000, 0.05), (101, 0.1), (77, 0.013), (10, 0.5)])
def test_outlier_count_and_box(n, f):
    cfg = SynthConfig(n_samples=n, n_features=4, outlier_fraction=f, seed=2)
    ds = gen_dataset(cfg)
    assert ds.labels.sum() == int(np.ceil(round(f * n, 9)))
    assert ds.X.shape[0] == n
    lo, hi = ds.box
    out = ds.X[ds.labels == 1]
    assert np.all(out >= lo) and np.all(out <= hi)
    nominal = ds.X[ds.labels == 0]
    np.testing.assert_allclose(lo, nominal.mean(0) - 7 * nominal.std(0), rtol=1e-12)


def test_cluster_means_near_centres():
    rng = np.random.default_rng(0)
    n, d = 20000, 3
    for centre in (0.0, 5.0):
        x = sample_student_t(rng, n, np.full(d, centre), gen_covariance(d, 0.4), 8.0)
        sigma = np.sqrt(8.0 / 6.0)  # Student-t standard deviation at 8 dof
        assert np.all(np.abs(x.mean(axis=0) - centre) < 5 * sigma / np.sqrt(n))


def test_student_t_covariance():
    rng = np.random.default_rng(1)
    scale = gen_covariance(3, 0.6)
    x = sample_student_t(rng, 200000, np.zeros(3), scale, 10.0)
    np.testing.assert_allclose(np.cov(x.T), scale * 10 / 8, atol=0.03)


def test_dof_floor():
    for seed in range(60):
        ds = gen_dataset(SynthConfig(n_samples=200, seed=seed))
        assert min(ds.dof) >= 0.1
        assert np.all(np.isfinite(ds.X))


@pytest.mark.parametrize(
    "kwargs",
    [dict(outlier_fraction=1.0), dict(outlier_fraction=-0.1), dict(n_features=0), dict(n_samples=1), dict(box_scale=0.0)],
)
def test_config_validation(kwargs):
    with pytest.raises(ConfigError):
        SynthConfig(**kwargs)


def test_csv_output(tmp_path):
    ds = gen_dataset(SynthConfig(n_samples=20, n_features=2, seed=0))
    ds.write_csv(tmp_path / "d.csv", with_label=True)
    lines = (tmp_path / "d.csv").read_text().splitlines()
    assert lines[0] == "id,x0,x1,label"
    assert len(lines) == 21
    first = lines[1].split(",")
    assert float(first[1]) == ds.X[0, 0]
    assert ds.schema().to_text() == "x0:real\nx1:real\nlabel:label\nid:id\n"
