import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from crossrec.data import CrossDomainScenario, InteractionSet
from crossrec.errors import ConfigError, MissingTestItem, ScorerFailure
from crossrec.evaluation import (
    EvalConfig,
    evaluate,
    hit_at,
    metrics_from_ranks,
    mrr_at,
    ndcg_at,
    rank_of_test_item,
)

# frozen oracle values (mpmath, 30 digits): log(2)/log(3), log(2)/log(11)
NDCG_RANK_2 = 0.6309297535714574371
NDCG_RANK_10 = 0.28906482631788785927


# -- rank ------------------------------------------------------------------

def test_rank_of_test_item_basic():
    scores = {"a": 0.9, "b": 0.5, "c": 0.1}
    assert rank_of_test_item(scores, "a") == 1
    assert rank_of_test_item(scores, "b") == 2
    assert rank_of_test_item(scores, "c") == 3


def test_rank_of_test_item_lower_is_better():
    scores = {"a": 0.9, "b": 0.5, "c": 0.1}
    assert rank_of_test_item(scores, "c", higher_is_better=False) == 1
    assert rank_of_test_item(scores, "a", higher_is_better=False) == 3


def test_rank_of_test_item_ties_break_toward_smaller_id():
    scores = {"a": 1.0, "b": 1.0, "m": 1.0, "z": 0.0}
    assert rank_of_test_item(scores, "a") == 1
    assert rank_of_test_item(scores, "m") == 3
    assert rank_of_test_item(scores, "z") == 4


def test_rank_of_test_item_missing():
    with pytest.raises(MissingTestItem):
        rank_of_test_item({"a": 1.0}, "zz")


@settings(max_examples=50)
@given(st.dictionaries(st.sampled_from([f"i{k}" for k in range(12)]),
                       st.integers(0, 5), min_size=2))
def test_rank_is_a_permutation_position(scores):
    scores = {k: float(v) for k, v in scores.items()}
    ranks = sorted(rank_of_test_item(scores, item) for item in scores)
    assert ranks == list(range(1, len(scores) + 1))


# -- pointwise metrics -------------------------------------------------------

def test_hit_at_values():
    assert hit_at(1, 10) == 1.0
    assert hit_at(10, 10) == 1.0
    assert hit_at(11, 10) == 0.0


def test_ndcg_at_values():
    assert ndcg_at(1, 10) == pytest.approx(1.0, abs=1e-12)
    assert ndcg_at(2, 10) == pytest.approx(NDCG_RANK_2, abs=1e-12)
    assert ndcg_at(10, 10) == pytest.approx(NDCG_RANK_10, abs=1e-12)
    assert ndcg_at(11, 10) == 0.0
    # without the cutoff the raw value is kept
    assert ndcg_at(15, 10, cutoff=False) == pytest.approx(
        np.log(2) / np.log(16), abs=1e-12)


def test_mrr_at_values():
    assert mrr_at(1, 10) == 1.0
    assert mrr_at(4, 10) == 0.25
    assert mrr_at(11, 10) == 0.0
    assert mrr_at(20, 10, cutoff=False) == 0.05


def test_metrics_from_ranks_two_user_example():
    # ranks 1 and 3: MRR = (1 + 1/3)/2, NDCG = (1 + log2/log4)/2 = 0.75
    out = metrics_from_ranks([1, 3], (10,))
    assert out[("HR", 10)] == 1.0
    assert out[("MRR", 10)] == pytest.approx(2 / 3, abs=1e-12)
    assert out[("NDCG", 10)] == pytest.approx(0.75, abs=1e-12)


# -- evaluate ----------------------------------------------------------------

def _eval_scenario(n_test=8, n_items=60):
    items = [f"i{k:03d}" for k in range(n_items)]
    test_users = tuple(f"tu{k:02d}" for k in range(n_test))
    heldout = {u: (items[2 * k], items[2 * k + 1])
               for k, u in enumerate(test_users)}
    target = InteractionSet([("trainuser", items[-1])], items=items)
    return CrossDomainScenario(
        source=target, target=target, overlap_users=test_users,
        test_users=test_users, train_overlap_users=(), heldout=heldout,
        phi=1.0, seed=0)


def _oracle_scorer(scenario, positive="test"):
    def scorer(user, candidates):
        want = scenario.heldout[user][0 if positive == "test" else 1]
        return np.array([1.0 if c == want else 0.0 for c in candidates])
    return scorer


def test_evaluate_perfect_scorer_hits_everything():
    scen = _eval_scenario()
    cfg = EvalConfig(cutoffs=(5, 10), repeats=3, negatives=20, seed=1)
    report = evaluate(_oracle_scorer(scen), scen, cfg)
    assert report.repeats == 3
    for rep in report.per_repeat:
        for key, value in rep.items():
            assert value == pytest.approx(1.0)
    for ranks in report.ranks:
        assert list(ranks) == [1] * 8
    avg = report.averaged()
    assert avg[("HR", 5)] == 1.0


def test_evaluate_hopeless_scorer_scores_zero():
    scen = _eval_scenario()
    cfg = EvalConfig(cutoffs=(10,), repeats=2, negatives=30, seed=1)

    def scorer(user, candidates):
        want = scen.heldout[user][0]
        return np.array([-1.0 if c == want else 1.0 for c in candidates])

    report = evaluate(scorer, scen, cfg)
    avg = report.averaged()
    assert avg[("HR", 10)] == 0.0
    assert avg[("MRR", 10)] == 0.0
    for ranks in report.ranks:
        assert list(ranks) == [31] * 8


def test_evaluate_validation_mode_targets_the_validation_item():
    scen = _eval_scenario()
    cfg = EvalConfig(cutoffs=(10,), repeats=2, negatives=20, seed=3)
    report = evaluate(_oracle_scorer(scen, "valid"), scen, cfg,
                      positive="valid")
    assert report.averaged()[("HR", 10)] == 1.0

    # the candidate set carries the validation item and never the test item
    def probing(user, candidates):
        t, v = scen.heldout[user]
        assert v in candidates and t not in candidates
        return np.arange(len(candidates), dtype=float)

    evaluate(probing, scen, cfg, positive="valid")

    def probing_test(user, candidates):
        t, v = scen.heldout[user]
        assert t in candidates and v not in candidates
        return np.arange(len(candidates), dtype=float)

    evaluate(probing_test, scen, cfg, positive="test")


def test_evaluate_is_deterministic_and_repeats_differ():
    scen = _eval_scenario()
    cfg = EvalConfig(cutoffs=(10,), repeats=3, negatives=25, seed=9)
    seen = []

    def scorer(user, candidates):
        seen.append(tuple(candidates))
        return np.array([float(int(c[1:])) for c in candidates])

    a = evaluate(scorer, scen, cfg)
    b = evaluate(scorer, scen, cfg)
    for ra, rb in zip(a.ranks, b.ranks):
        np.testing.assert_array_equal(ra, rb)
    assert a.per_repeat == b.per_repeat
    # each repeat draws fresh negatives for the same user
    per_user_first = seen[0]
    per_user_second = seen[8]   # same user, next repeat
    assert per_user_first != per_user_second
    # and a different seed changes the candidate sets
    c = evaluate(scorer, scen, EvalConfig(cutoffs=(10,), repeats=3,
                                          negatives=25, seed=10))
    assert any(not np.array_equal(x, y) for x, y in zip(a.ranks, c.ranks))


def test_evaluate_excludes_both_heldout_items_from_negatives():
    scen = _eval_scenario()
    cfg = EvalConfig(cutoffs=(10,), repeats=2, negatives=50, seed=5)
    problems = []

    def scorer(user, candidates):
        t, v = scen.heldout[user]
        rest = candidates[1:] if candidates[0] in (t, v) else candidates
        if t in rest or v in rest:
            problems.append(user)
        return np.arange(len(candidates), dtype=float)

    evaluate(scorer, scen, cfg)
    assert not problems


def test_evaluate_wraps_scorer_errors():
    scen = _eval_scenario()
    cfg = EvalConfig(cutoffs=(10,), repeats=1, negatives=10, seed=0)
    with pytest.raises(ScorerFailure):
        evaluate(lambda u, c: 1 / 0, scen, cfg)
    with pytest.raises(ScorerFailure):
        evaluate(lambda u, c: np.zeros(3), scen, cfg)
    with pytest.raises(ScorerFailure):
        evaluate(lambda u, c: np.full(len(c), np.nan), scen, cfg)


def test_evaluate_rejects_bad_positive_mode():
    scen = _eval_scenario()
    with pytest.raises(ConfigError):
        evaluate(_oracle_scorer(scen), scen, EvalConfig(), positive="x")


def test_eval_config_validation():
    with pytest.raises(ConfigError):
        EvalConfig(repeats=0)
    with pytest.raises(ConfigError):
        EvalConfig(negatives=0)
    with pytest.raises(ConfigError):
        EvalConfig(cutoffs=())


# -- report formatting --------------------------------------------------------

def test_report_tsv_layout_and_determinism():
    scen = _eval_scenario()
    cfg = EvalConfig(cutoffs=(5, 10), repeats=2, negatives=20, seed=2)
    report = evaluate(_oracle_scorer(scen), scen, cfg)
    tsv = report.to_tsv("METHOD", 0.05)
    lines = tsv.strip().split("\n")
    assert lines[0] == "method\tphi\trepeat\tmetric\tN\tvalue"
    # 2 repeats * 3 metrics * 2 cutoffs + averaged block of 6
    assert len(lines) == 1 + 12 + 6
    assert lines[1].split("\t") == ["METHOD", "0.05", "1", "HR", "5",
                                    "1.000000000"]
    assert lines[-1].startswith("METHOD\t0.05\tavg\tMRR\t10\t")
    assert report.to_tsv("METHOD", 0.05) == tsv

    table = report.format_table(title="demo")
    assert "demo" in table
    assert "@5" in table and "@10" in table and "HR" in table
