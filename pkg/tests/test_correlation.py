import numpy as np
import pandas as pd
import pytest

from errors import ConstantInput, MalformedTable
from probes.correlation import as_percent, correlate_table, pearson, spearman


def test_perfect_and_inverse_correlation():
    assert pearson([1, 2, 3], [2, 4, 6]) == pytest.approx(1.0)
    assert spearman([1, 2, 3], [2, 4, 6]) == pytest.approx(1.0)
    assert pearson([1, 2, 3], [3, 2, 1]) == pytest.approx(-1.0)
    assert spearman([1, 2, 3], [3, 2, 1]) == pytest.approx(-1.0)


def test_spearman_on_one_swap():
    assert spearman([1, 2, 3, 4], [1, 3, 2, 4]) == pytest.approx(0.8)


def test_constant_vector_is_rejected():
    with pytest.raises(ConstantInput):
        pearson([1, 1, 1], [1, 2, 3])
    with pytest.raises(ConstantInput):
        spearman([1, 2, 3], [4, 4, 4])


def test_too_few_points():
    with pytest.raises(ValueError):
        pearson([1, 2], [1, 2])


def test_correlate_table_percent_format():
    frame = pd.DataFrame({"group": ["toy"] * 3, "q_metric": [1.0, 2.0, 3.0],
                          "test_acc": [0.5, 0.6, 0.7], "gen_gap": [0.3, 0.2, 0.1]})
    row = correlate_table(frame).iloc[0]
    assert row["plcc_test_acc"] == 100.0
    assert row["rocc_test_acc"] == 100.0
    assert row["plcc_gen_gap"] == -100.0
    assert row["rocc_gen_gap"] == -100.0
    assert row["n"] == 3


def test_correlate_table_matches_independent_oracle():
    rng = np.random.default_rng(5)
    q = rng.uniform(0, 3, size=12)
    acc = 0.6 + 0.1 * q + rng.normal(0, 0.05, size=12)
    frame = pd.DataFrame({"group": "desk", "q_metric": q, "test_acc": acc, "gen_gap": 1 - acc})
    row = correlate_table(frame).iloc[0]

    def ranks(v):
        return np.argsort(np.argsort(v)).astype(float)

    assert row["plcc_test_acc"] == round(100 * np.corrcoef(q, acc)[0, 1], 2)
    assert row["rocc_test_acc"] == round(100 * np.corrcoef(ranks(q), ranks(acc))[0, 1], 2)


def test_groups_are_reported_in_order():
    frame = pd.DataFrame({
        "group": ["b", "b", "b", "a", "a", "a"],
        "q_metric": [1, 2, 3, 1, 2, 3],
        "test_acc": [0.1, 0.2, 0.3, 0.3, 0.2, 0.1],
        "gen_gap": [0.3, 0.1, 0.2, 0.1, 0.2, 0.3],
    })
    result = correlate_table(frame)
    assert list(result["group"]) == ["b", "a"]
    assert list(result["rocc_test_acc"]) == [100.0, -100.0]


@pytest.mark.parametrize("frame", [
    pd.DataFrame({"group": ["g"] * 3, "q_metric": [1, 2, 3], "test_acc": [0.1, 0.2, 0.3]}),
    pd.DataFrame({"group": ["g"] * 3, "q_metric": [1, "x", 3], "test_acc": [0.1, 0.2, 0.3],
                  "gen_gap": [0.1, 0.2, 0.3]}),
    pd.DataFrame({"group": ["g"] * 2, "q_metric": [1, 2], "test_acc": [0.1, 0.2], "gen_gap": [0.1, 0.2]}),
    pd.DataFrame({"group": ["g"] * 3, "q_metric": [1, 1, 1], "test_acc": [0.1, 0.2, 0.3],
                  "gen_gap": [0.1, 0.2, 0.3]}),
])
def test_malformed_tables(frame):
    with pytest.raises(MalformedTable):
        correlate_table(frame)


def test_as_percent_rounds_to_two_decimals():
    assert as_percent(0.97901) == 97.9
    assert as_percent(-0.123456) == -12.35
