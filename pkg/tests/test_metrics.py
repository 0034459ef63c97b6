import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from kfan.errors import DimensionError, DomainError
from kfan.metrics import (EvalReport, error_rate, mean_psnr, parse_report, per_class_errors, psnr,
                          report)


def test_psnr_examples():
    assert psnr([0, 1, 0, 1], [0, 1, 0, 1]) == float("inf")
    assert mean_psnr([[0, 1, 0, 1]], [[0, 1, 0, 1]]) == 99.0
    assert psnr([0, 1, 0, 1], [0, 1, 1, 1]) == pytest.approx(6.020599913279624, abs=1e-12)
    with pytest.raises(DimensionError):
        psnr([0, 1], [0, 1, 1])
    with pytest.raises(DomainError):
        psnr([0], [1], max_value=0)


def test_mean_psnr_is_per_image_average():
    ref = np.array([[0, 0, 0, 0], [0, 0, 0, 0]], dtype=float)
    test = np.array([[1, 0, 0, 0], [1, 1, 0, 0]], dtype=float)
    expected = (10 * np.log10(4) + 10 * np.log10(2)) / 2
    assert mean_psnr(ref, test) == pytest.approx(expected)


@given(st.lists(st.floats(0, 1), min_size=2, max_size=10), st.floats(0.01, 0.5))
def test_psnr_symmetric_and_decreasing(values, bump):
    a = np.array(values)
    b = np.clip(a + bump, 0, 1)
    if np.array_equal(a, b):
        return
    assert psnr(a, b) == psnr(b, a)
    worse = np.clip(a + 2 * bump, 0, 1)
    if np.mean((a - worse) ** 2) > np.mean((a - b) ** 2):
        assert psnr(a, worse) < psnr(a, b)


def test_error_rate_examples():
    assert error_rate([1, 2, 3], [1, 2, 3]) == 0.0
    assert error_rate([0, 1, 1, 1], [1, 1, 1, 1]) == 0.25
    with pytest.raises(DomainError):
        error_rate([], [])


@given(st.lists(st.integers(0, 4), min_size=1, max_size=20), st.integers(0, 2**32))
def test_error_rate_relabel_invariant(truth, seed):
    rng = np.random.default_rng(seed)
    truth = np.array(truth)
    pred = rng.integers(0, 5, truth.size)
    perm = rng.permutation(5)
    assert error_rate(perm[pred], perm[truth]) == error_rate(pred, truth)


def test_per_class_errors():
    out = per_class_errors([0, 1, 1, 0], [0, 0, 1, 1], 3)
    assert list(out[:2]) == [0.5, 0.5] and np.isnan(out[2])


def test_report_text_format():
    rep = report(10, psnr_db=12.345678, error_rate=0.1, noisy_psnr_db=float("inf"))
    assert rep.to_text() == ("error_rate = 0.100000\nn_examples = 10\n"
                             "noisy_psnr_db = 99.0000\npsnr_db = 12.3457\n")
    only = report(4, error_rate=0.25).to_text()
    assert "psnr_db" not in only and "per_class_errors" not in only
    assert report(4, error_rate=0.25).to_text() == only
    assert parse_report(rep.to_text())["psnr_db"] == "12.3457"


def test_report_needs_a_metric():
    with pytest.raises(DomainError):
        EvalReport(3)
