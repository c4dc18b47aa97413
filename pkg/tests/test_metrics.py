import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from pedkd.metrics import (THRESHOLD_GRID, decode_labels, evaluate, format_kv, harmonic, mean_decoded_length,
                           parse_kv, topk_prf, tune_threshold, unigram_bleu)

probs_st = arrays(np.float64, 6, elements=st.floats(0, 1))


def test_decode_at_default_threshold():
    assert decode_labels([0.9, 0.2, 0.1], 0.15, ["a", "b", "c"]).labels == ("a", "b")


def test_decode_threshold_extremes():
    p = [0.3, 0.8, 0.5]
    assert len(decode_labels(p, 0.0)) == 3
    assert len(decode_labels(p, 0.8 + 1e-9)) == 0


def test_decode_orders_by_probability():
    assert decode_labels([0.2, 0.9, 0.5], 0.1, "xyz").labels == ("y", "z", "x")


@given(probs_st, st.floats(0, 1), st.floats(0, 1))
def test_decode_is_monotone(p, t1, t2):
    lo, hi = min(t1, t2), max(t1, t2)
    assert set(decode_labels(p, hi).labels) <= set(decode_labels(p, lo).labels)
    assert all(p[int(i)] >= hi for i in decode_labels(p, hi).labels)


def test_tune_threshold_constructed_case():
    # three labels clear 0.15 but not 0.16; reference length 3
    probs = np.array([[0.155, 0.155, 0.155, 0.145, 0.9, 0.05]])
    assert mean_decoded_length(probs, 0.15) == 4
    probs = np.array([[0.155, 0.155, 0.155, 0.145, 0.05, 0.05]])
    assert tune_threshold(probs, [[0, 1, 2]]) == 0.15


def test_tune_threshold_empty_references():
    # one probability on every grid point, so the decoded length falls at each step
    probs = np.array([THRESHOLD_GRID, THRESHOLD_GRID[::-1]])
    assert tune_threshold(probs, [[], []]) == 0.99
    # with a flat tail the tie rule picks the smallest threshold on it
    flat = np.array([[0.995, 0.5, 0.2], [0.3, 0.1, 0.999]])
    assert tune_threshold(flat, [[], []]) == 0.51


def test_tune_threshold_rejects_empty():
    with pytest.raises(ValueError):
        tune_threshold(np.zeros((0, 3)), [])


@given(arrays(np.float64, (4, 5), elements=st.floats(0, 1)))
def test_mean_length_non_increasing_over_grid(p):
    lens = [mean_decoded_length(p, t) for t in THRESHOLD_GRID]
    assert all(a >= b for a, b in zip(lens, lens[1:]))


def test_tune_threshold_ties_go_low():
    # lengths 2 for every t up to 0.5, target 2
    probs = np.array([[0.5, 0.5, 0.0]])
    assert tune_threshold(probs, [[0, 1]]) == 0.01


def test_topk_examples():
    p, r, f = topk_prf([0.9, 0.1, 0.5], [1, 0, 1], 1)
    assert (p, r) == (1.0, 0.5) and f == pytest.approx(2 / 3)
    assert topk_prf([0.9, 0.1, 0.5], [1, 0, 1], 2) == (1.0, 1.0, 1.0)
    assert topk_prf([0.9, 0.1, 0.5], [0, 1, 0], 1) == (0.0, 0.0, 0.0)


def test_topk_ties_prefer_lower_index():
    assert topk_prf([0.5, 0.5, 0.5], [1, 0, 0], 1)[0] == 1.0
    assert topk_prf([0.5, 0.5, 0.5], [0, 0, 1], 1)[0] == 0.0


def test_topk_errors():
    with pytest.raises(ValueError):
        topk_prf([0.1, 0.2], [1, 0], 3)
    with pytest.raises(ValueError):
        topk_prf([0.1, 0.2], [0, 0], 1)


@given(probs_st, arrays(np.int8, 6, elements=st.integers(0, 1)).filter(lambda t: t.any()))
def test_recall_non_decreasing_in_k(p, t):
    recalls = [topk_prf(p, t, k)[1] for k in range(1, 7)]
    assert all(a <= b for a, b in zip(recalls, recalls[1:]))
    assert recalls[-1] == 1.0


def test_harmonic_zero_case():
    assert harmonic(0.0, 0.0) == 0.0


def test_bleu_examples():
    assert unigram_bleu([["a", "b"]], [["a", "b"]]) == 1.0
    assert unigram_bleu([["a", "b"]], [["a", "c"]]) == 0.5
    assert unigram_bleu([["a"]], [["a", "b"]]) == pytest.approx(math.exp(-1), abs=1e-6)
    assert unigram_bleu([[]], [["a"]]) == 0.0
    with pytest.raises(ValueError):
        unigram_bleu([["a"]], [])


def test_bleu_phrase_is_one_unit():
    assert unigram_bleu([["using cellphone"]], [["using cellphone"]]) == 1.0
    assert unigram_bleu([["using cellphone"]], [["using"]]) == 0.0


labels_st = st.lists(st.lists(st.sampled_from("abcde"), max_size=4), min_size=1, max_size=4)


@given(labels_st, labels_st, st.randoms())
def test_bleu_bounds_order_and_identity(cands, refs, rnd):
    n = min(len(cands), len(refs))
    cands, refs = cands[:n], refs[:n]
    b = unigram_bleu(cands, refs)
    assert 0.0 <= b <= 1.0
    shuffled = [rnd.sample(c, len(c)) for c in cands]
    assert unigram_bleu(shuffled, refs) == pytest.approx(b)
    same = all(sorted(c) == sorted(r) for c, r in zip(cands, refs)) and any(cands)
    assert (b == pytest.approx(1.0)) == same


def test_evaluate_skips_empty_truth_and_reports():
    probs = np.array([[0.9, 0.1, 0.2], [0.1, 0.8, 0.3], [0.5, 0.5, 0.5]])
    truth = np.array([[1, 0, 0], [0, 1, 1], [0, 0, 0]])
    rep = evaluate(probs, truth, ["a", "b", "c"], 0.15, ks=(1, 3))
    assert rep.n_samples == 2 and rep.n_skipped == 1
    assert rep.prf[1][0] == 1.0 and rep.prf[1][1] == pytest.approx(0.75)
    d = parse_kv(rep.to_kv())
    assert d["n_skipped"] == "1" and d["top3_recall"] == "1"
    assert rep.to_table().splitlines()[0] == "k\tprecision\trecall\tf1"


def test_kv_format_is_stable():
    assert format_kv({"a": 0.1 + 0.2, "b": True, "c": 3}) == "a=0.3\nb=true\nc=3\n"
