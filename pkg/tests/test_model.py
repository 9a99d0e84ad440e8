import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from normgrad.model import (
    EmpiricalDataset, LibsvmFormatError, SpdModel, center_and_fold, compute_stats, load_libsvm,
    sample_gaussian,
)
from normgrad.sgeom import NotPositiveDefiniteError


def test_libsvm_line(tmp_path):
    p = tmp_path / "a.txt"
    p.write_text("+1 3:0.5\n")
    x, y = load_libsvm(p, n_features=4)
    np.testing.assert_array_equal(x, [[0.0, 0.0, 0.5, 0.0]])
    np.testing.assert_array_equal(y, [1.0])


def test_libsvm_mixed_and_zero_label(tmp_path):
    p = tmp_path / "b.txt"
    p.write_text("-1 1:2 4:-1.5\n0 2:1\n\n+1 # comment only\n")
    x, y = load_libsvm(p)
    assert x.shape == (3, 4)
    np.testing.assert_array_equal(y, [-1.0, -1.0, 1.0])
    assert x[0, 3] == -1.5 and x[1, 1] == 1.0 and not x[2].any()


def test_libsvm_empty_file(tmp_path):
    p = tmp_path / "e.txt"
    p.write_text("")
    x, y = load_libsvm(p)
    assert x.shape[0] == 0 and y.shape == (0,)
    with pytest.raises(ValueError):
        compute_stats(center_and_fold(x, y))


@pytest.mark.parametrize("text,lineno", [
    ("+1 1:1\n+2 1:1\n", 2),
    ("+1 1:1\n-1 0:1\n", 2),
    ("+1 a:1\n", 1),
    ("+1 1:1\n+1 1:1\n-1 3\n", 3),
    ("foo 1:1\n", 1),
])
def test_libsvm_errors_report_line(tmp_path, text, lineno):
    p = tmp_path / "bad.txt"
    p.write_text(text)
    with pytest.raises(LibsvmFormatError, match=f"line {lineno}"):
        load_libsvm(p)


def test_libsvm_index_beyond_declared(tmp_path):
    p = tmp_path / "c.txt"
    p.write_text("+1 5:1\n")
    with pytest.raises(LibsvmFormatError):
        load_libsvm(p, n_features=4)


def test_center_and_fold_examples():
    ds = center_and_fold(np.array([[1.0, 0.0], [3.0, 0.0]]), np.array([1.0, -1.0]))
    np.testing.assert_allclose(ds.z_rows, [[1.0, 0.0], [1.0, 0.0]])
    one = center_and_fold(np.array([[2.0, -3.0]]), np.array([1.0]))
    np.testing.assert_array_equal(one.z_rows, [[0.0, 0.0]])
    xc = np.array([[1.0, -2.0], [-1.0, 2.0]])
    ds2 = center_and_fold(xc, np.array([1.0, 1.0]))
    np.testing.assert_array_equal(ds2.z_rows, -xc)
    with pytest.raises(ValueError):
        center_and_fold(xc, np.array([1.0, 2.0]))


@given(arrays(float, (6, 3), elements=st.floats(-100, 100)),
       arrays(float, 6, elements=st.sampled_from([-1.0, 1.0])))
def test_center_and_fold_idempotent(x, y):
    ds = center_and_fold(x, y)
    xc = -ds.z_rows * y[:, None]
    assert np.abs(xc.mean(axis=0)).max() <= 1e-10 * (1 + np.abs(x).max())
    again = center_and_fold(xc, y)
    np.testing.assert_allclose(again.z_rows, ds.z_rows, atol=1e-10 * (1 + np.abs(x).max()))


def test_compute_stats_examples():
    st_ = compute_stats(EmpiricalDataset(np.array([[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]])), ridge=0.1)
    np.testing.assert_array_equal(st_.u_hat, 0.0)
    np.testing.assert_allclose(st_.sigma_hat.entries, np.diag([1.1, 0.1, 0.1]))
    with pytest.raises(NotPositiveDefiniteError):
        compute_stats(EmpiricalDataset(np.array([[1.0, 1.0]])), ridge=0.0)


def test_compute_stats_default_ridge_and_zeta():
    z = np.array([[1.0, 1.0]])
    st_ = compute_stats(EmpiricalDataset(z))
    assert st_.ridge == pytest.approx(1e-8)  # trace 2, d = 2
    # lambda_max(Z^T Z / n) / 10
    assert st_.zeta_sup == pytest.approx(0.2, rel=1e-12)


def test_compute_stats_matches_loops(rng):
    z = rng.standard_normal((100, 5)) + 0.3
    st_ = compute_stats(EmpiricalDataset(z), ridge=0.0)
    u = np.zeros(5)
    s = np.zeros((5, 5))
    for row in z:
        u += row
        for i in range(5):
            for j in range(5):
                s[i, j] += row[i] * row[j]
    np.testing.assert_allclose(st_.u_hat, u / 100, rtol=0, atol=1e-12)
    np.testing.assert_allclose(st_.sigma_hat.entries, s / 100, rtol=0, atol=1e-12)
    assert st_.zeta_sup == pytest.approx(np.linalg.eigvalsh(z.T @ z)[-1] / 100 / 10, rel=1e-12)


def test_model_invariants(model20):
    assert model20.lambda1 >= 0.0
    assert np.linalg.eigvalsh(model20.covariance())[0] > 0.0
    np.testing.assert_allclose(model20.sigma.entries @ model20.sinv_u, model20.u, atol=1e-12)
    with pytest.raises(NotPositiveDefiniteError):
        SpdModel.from_arrays([2.0, 0.0], np.eye(2))


def test_sample_degenerate():
    # d = 1 with S = u^2: the covariance vanishes and every draw is u
    m = SpdModel.from_arrays([1.5], [[2.25]])
    ds = sample_gaussian(m, 50, 0)
    np.testing.assert_array_equal(ds.z_rows, np.full((50, 1), 1.5))


def test_sample_second_moment():
    m = SpdModel.from_arrays(np.zeros(3), np.eye(3))
    n = 100000
    ds = sample_gaussian(m, n, 7)
    s = ds.z_rows.T @ ds.z_rows / n
    assert np.abs(s - np.eye(3)).max() <= 5 / np.sqrt(n)


def test_sample_determinism(model5):
    a = sample_gaussian(model5, 100, 3).z_rows
    b = sample_gaussian(model5, 100, 3).z_rows
    assert np.array_equal(a, b)
    assert not np.array_equal(a, sample_gaussian(model5, 100, 4).z_rows)


def test_stats_converge_at_root_n(model5):
    errs_u, errs_s = [], []
    for n in (1000, 10000, 100000):
        st_ = compute_stats(sample_gaussian(model5, n, 11), ridge=0.0)
        errs_u.append(np.linalg.norm(st_.u_hat - model5.u) * np.sqrt(n))
        errs_s.append(np.linalg.norm(st_.sigma_hat.entries - model5.sigma.entries) * np.sqrt(n))
    # sqrt(n)-scaled errors stay within a factor 3 of each other
    for e in (errs_u, errs_s):
        assert max(e) <= 3.0 * min(e)
