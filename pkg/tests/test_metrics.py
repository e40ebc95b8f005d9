import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from megacrn.metrics import masked_metrics


def test_perfect_prediction():
    y = np.random.default_rng(0).uniform(10, 70, (4, 3, 5))
    m = masked_metrics(y, y).overall
    assert (m.mae, m.rmse, m.mape) == (0.0, 0.0, 0.0)


def test_zero_truth_is_masked():
    truth = np.array([60.0, 0.0, 30.0]).reshape(1, 1, 3)
    pred = np.array([63.0, 99.0, 33.0]).reshape(1, 1, 3)
    m = masked_metrics(pred, truth).horizons[1]
    assert m.mae == pytest.approx(3.0, abs=1e-12)
    assert m.rmse == pytest.approx(3.0, abs=1e-12)
    assert m.mape == pytest.approx(7.5, abs=1e-12)
    assert m.valid_count == 2


def test_single_entry_mae_equals_rmse():
    m = masked_metrics(np.array([[[13.0]]]), np.array([[[10.0]]])).overall
    assert m.mae == m.rmse == 3.0


def test_unmasked_mode_counts_zeros():
    truth = np.array([60.0, 0.0]).reshape(1, 1, 2)
    pred = np.array([60.0, 2.0]).reshape(1, 1, 2)
    m = masked_metrics(pred, truth, mask_zeros=False).overall
    assert m.mae == 1.0 and m.valid_count == 2


def test_all_zero_horizon_is_undefined():
    truth = np.ones((2, 3, 4))
    truth[:, 1] = 0
    report = masked_metrics(truth + 1, truth, horizons=[1, 2])
    assert report.horizons[2].mae is None and report.horizons[2].valid_count == 0
    assert "horizon2.mae = undefined" in report.to_text()
    assert report.horizons[1].mae == 1.0


def test_horizon_rows_and_aggregate():
    y = np.random.default_rng(1).uniform(10, 70, (2, 12, 3))
    report = masked_metrics(y + 1, y, horizons=[3, 6, 12])
    assert [name for name, _ in report.rows()] == ["horizon3", "horizon6", "horizon12", "all"]
    assert report.to_csv().splitlines()[0] == "horizon,mae,rmse,mape,valid_count"


def test_horizon_out_of_range():
    with pytest.raises(ValueError):
        masked_metrics(np.ones((1, 3, 2)), np.ones((1, 3, 2)), horizons=[4])


def test_shape_mismatch():
    with pytest.raises(ValueError):
        masked_metrics(np.ones((1, 3, 2)), np.ones((1, 3, 3)))


values = arrays(np.float64, (4, 3, 2), elements=st.one_of(st.just(0.0), st.floats(1, 100)))


@settings(max_examples=60, deadline=None)
@given(values, values)
def test_rmse_at_least_mae(pred, truth):
    for _, m in masked_metrics(pred, truth).rows():
        if m.mae is not None:
            assert m.rmse >= m.mae - 1e-12


@settings(max_examples=40, deadline=None)
@given(values, values, st.permutations(range(4)))
def test_batch_order_invariant(pred, truth, perm):
    a = masked_metrics(pred, truth).to_dict()
    b = masked_metrics(pred[list(perm)], truth[list(perm)]).to_dict()
    for key in a:
        for field in ("mae", "rmse", "mape"):
            if a[key][field] is None:
                assert b[key][field] is None
            else:
                assert b[key][field] == pytest.approx(a[key][field], rel=1e-12)


@settings(max_examples=40, deadline=None)
@given(values, values)
def test_zero_truth_rows_change_nothing(pred, truth):
    extra_pred = np.random.default_rng(0).uniform(0, 100, (3, 3, 2))
    a = masked_metrics(pred, truth).to_dict()
    b = masked_metrics(np.concatenate([pred, extra_pred]), np.concatenate([truth, np.zeros((3, 3, 2))])).to_dict()
    assert a == b
