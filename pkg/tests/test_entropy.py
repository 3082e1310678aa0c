import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from entropy_select.classifier import Network, TrainConfig
from entropy_select.dataset import SyntheticConfig, generate_synthetic
from entropy_select.entropy import (
    INFORMATIVE, REDUNDANT, build_score_table, entropy_gap_test, entropy_histogram, load_score_table,
    prediction_entropy, save_histograms, save_score_table, score_training_set, select_informative,
    selected_count,
)


def test_uniform_binary_is_ln2():
    assert prediction_entropy([0.5, 0.5]) == pytest.approx(0.6931, abs=1e-4)


def test_one_hot_is_zero():
    assert prediction_entropy([1.0, 0.0]) == 0.0
    assert prediction_entropy([0.0, 1.0]) == 0.0


def test_known_value():
    # -0.9 ln 0.9 - 0.1 ln 0.1 evaluated at 40 digits
    assert prediction_entropy([0.9, 0.1]) == pytest.approx(0.32508297339144824, abs=1e-12)


def test_rejects_invalid_vectors():
    for bad in ([0.6, 0.6], [1.2, -0.2], [1.0], [np.nan, 1.0]):
        with pytest.raises(ValueError):
            prediction_entropy(bad)


def test_range_on_binary_grid():
    p = np.linspace(0.0, 1.0, 1001)
    h = prediction_entropy(np.stack([p, 1 - p], axis=1))
    assert np.all(h >= 0) and np.all(h <= math.log(2))
    assert h[0] == 0.0 and h[-1] == 0.0
    assert h[500] == pytest.approx(math.log(2), abs=1e-15)


@given(st.lists(st.floats(0.0, 1.0), min_size=2, max_size=6).filter(lambda v: sum(v) > 0.1),
       st.randoms(use_true_random=False))
def test_permutation_invariance(raw, rnd):
    p = np.array(raw) / sum(raw)
    q = p.copy()
    rnd.shuffle(q)
    assert prediction_entropy(p) == pytest.approx(prediction_entropy(q), abs=1e-12)
    assert 0 <= prediction_entropy(p) <= math.log(len(p)) + 1e-12


def _table(n=30, seed=0, ties=False):
    rng = np.random.default_rng(seed)
    ent = rng.random(n) * math.log(2)
    if ties:
        ent = np.round(ent, 1)
    ids = rng.permutation(1000)[:n]
    return build_score_table(ids, ent), ids, ent


def test_rank_order_matches_full_sort():
    table, ids, ent = _table(50, ties=True)
    expected = [sid for _, sid in sorted(zip(-ent, ids))]
    assert table.sample_id.tolist() == expected
    assert table.rank.tolist() == list(range(1, 51))
    assert np.all(np.diff(table.entropy) <= 0)


def test_zero_head_gives_uniform_scores():
    data = generate_synthetic(SyntheticConfig(n_groups=20, seed=1))
    net = Network.initialize(TrainConfig(head_init="zeros"), data.feature_shape)
    table = score_training_set(net, data, data.sample_id[::-1])
    assert np.allclose(table.entropy, math.log(2), atol=0, rtol=0)
    assert table.sample_id.tolist() == sorted(data.sample_id.tolist())


def test_scoring_is_deterministic():
    data = generate_synthetic(SyntheticConfig(n_groups=20, seed=1))
    net = Network.initialize(TrainConfig(seed=4), data.feature_shape)
    assert score_training_set(net, data, data.sample_id) == score_training_set(net, data, data.sample_id)


def test_scoring_empty_rejected():
    with pytest.raises(ValueError):
        build_score_table([], [])


@pytest.mark.parametrize(
    ("n", "proportion", "m"),
    [(100, 0.55, 55), (7, 0.5, 4), (10, 1.0, 10), (3, 0.5, 2), (78483, 0.5521, 43330)],
)
def test_selected_count(n, proportion, m):
    assert selected_count(proportion, n) == m


def test_select_full_and_partition():
    table, ids, _ = _table(40)
    inf, red, flagged = select_informative(table, 1.0)
    assert len(inf) == 40 and len(red) == 0 and flagged.informative.all()
    inf, red, flagged = select_informative(table, 0.55)
    assert len(inf) == 22
    assert set(inf) | set(red) == set(ids) and not set(inf) & set(red)
    assert np.all(np.diff(inf) > 0) and np.all(np.diff(red) > 0)
    assert set(flagged.sample_id[flagged.informative]) == set(inf)
    assert flagged.informative.tolist() == (flagged.rank <= 22).tolist()


def test_select_rejects_nonpositive():
    table, _, _ = _table(5)
    with pytest.raises(ValueError):
        select_informative(table, 0.0)


@given(st.floats(0.01, 1.0), st.floats(0.01, 1.0))
def test_selection_nesting(a, b):
    table, _, _ = _table(60, ties=True)
    lo, hi = sorted((a, b))
    assert set(select_informative(table, lo)[0]) <= set(select_informative(table, hi)[0])


@given(st.randoms(use_true_random=False), st.floats(0.05, 1.0))
def test_tie_determinism(rnd, proportion):
    _, ids, ent = _table(40, ties=True)
    order = list(range(40))
    rnd.shuffle(order)
    a = select_informative(build_score_table(ids, ent), proportion)[0]
    b = select_informative(build_score_table(ids[order], ent[order]), proportion)[0]
    assert a.tolist() == b.tolist()


def test_histogram_degenerate_and_normalized():
    table = build_score_table(np.arange(10), np.full(10, 0.3))
    edges, norm = entropy_histogram(table, 7)
    assert len(edges) == 8 and edges[-1] == pytest.approx(math.log(2))
    assert norm.max() == 1.0 and norm.sum() == 1.0
    t2, _, _ = _table(200)
    t2 = t2.flagged(80)
    for subset in ("all", INFORMATIVE, REDUNDANT):
        assert entropy_histogram(t2, 13, subset)[1].sum() == pytest.approx(1.0, abs=1e-12)


def test_histogram_errors():
    table, _, _ = _table(10)
    with pytest.raises(ValueError):
        entropy_histogram(table, 0)
    with pytest.raises(ValueError):
        entropy_histogram(table, 5, INFORMATIVE)  # nothing flagged yet


@pytest.mark.parametrize("seed", range(5))
def test_gap_test_positive_z(seed):
    table, _, _ = _table(100, seed=seed)
    flagged = select_informative(table, 0.6)[2]
    res = entropy_gap_test(flagged)
    inf = flagged.entropy[flagged.informative].mean()
    red = flagged.entropy[~flagged.informative].mean()
    assert inf > red  # direct comparison oracle
    assert res.z > 0
    assert res.value2 == pytest.approx(inf) and res.value1 == pytest.approx(red)


def test_gap_test_needs_both_subsets():
    table, _, _ = _table(10)
    with pytest.raises(ValueError):
        entropy_gap_test(table)


def test_score_table_csv_roundtrip(tmp_path):
    table = select_informative(_table(25)[0], 0.5)[2]
    save_score_table(table, tmp_path / "s.csv")
    assert load_score_table(tmp_path / "s.csv") == table
    assert (tmp_path / "s.csv").read_text().splitlines()[0] == "sample_id,entropy,rank,flag"


def test_histogram_csv_subsets(tmp_path):
    table = select_informative(_table(50)[0], 0.6)[2]
    save_histograms(table, 10, tmp_path / "h.csv")
    lines = (tmp_path / "h.csv").read_text().splitlines()
    assert lines[0] == "bin_left,bin_right,normalized_count,subset"
    assert {ln.rsplit(",", 1)[1] for ln in lines[1:]} == {INFORMATIVE, REDUNDANT}
