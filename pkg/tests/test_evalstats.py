import itertools
import math

import numpy as np
import pytest
from scipy.stats import chi2

from msdscore.evalstats import (
    EvalResult,
    HumanLabel,
    PairwiseInstance,
    PreferenceInstance,
    agreement,
    cluster_bootstrap_ci,
    kendall_tau,
    length_buckets,
    margin_buckets,
    mcnemar_test,
    pairwise_accuracy,
    spearman_rho,
)
from msdscore.exceptions import (
    DegenerateRanksError,
    EmptyEvalError,
    TooFewClustersError,
)
from msdscore.scoring import ScoreRecord


def _rec(cand_id="c", **kw):
    defaults = dict(g=0.5, d=1.0, msd=0.4, soft_msd=0.4, u=1.0, p=1.0)
    defaults.update(kw)
    return ScoreRecord(candidate_id=cand_id, **defaults)


def _inst(image_id, pos_score, neg_score, field="soft_msd", **kw):
    pos = _rec("pos", **{field: pos_score}, **kw)
    neg = _rec("neg", **{field: neg_score}, **kw)
    return PairwiseInstance(image_id=image_id, pos=pos, neg=neg)


def test_pairwise_accuracy_basic():
    insts = [_inst(f"i{k}", 1.0, 0.0) for k in range(4)]
    assert pairwise_accuracy(insts, "soft_msd").point_estimate == 1.0


def test_pairwise_accuracy_ties_fail():
    insts = [_inst(f"i{k}", 0.4, 0.4) for k in range(3)]
    assert pairwise_accuracy(insts, "soft_msd").point_estimate == 0.0


def test_pairwise_accuracy_counting():
    insts = [_inst("a", 1, 0), _inst("b", 1, 0), _inst("c", 1, 0), _inst("d", 0, 1)]
    assert pairwise_accuracy(insts, "soft_msd").point_estimate == 0.75


def test_pairwise_accuracy_divergence_fields_lower_wins():
    pos = _rec("pos", bikl=1.0)
    neg = _rec("neg", bikl=2.0)
    inst = PairwiseInstance(image_id="x", pos=pos, neg=neg)
    assert pairwise_accuracy([inst], "bikl").point_estimate == 1.0


def test_pairwise_empty():
    with pytest.raises(EmptyEvalError):
        pairwise_accuracy([], "g")


def _pref(image_id, s1, s2, label, level=None):
    return PreferenceInstance(image_id, s1, s2, label, level)


def test_agreement_tie_band():
    insts = [
        _pref("a", 0.3, 0.3, HumanLabel.TIE),              # delta 0 -> tie, agree
        _pref("b", 0.30005, 0.3, HumanLabel.FIRST),        # in band -> tie, disagree
        _pref("c", 0.3002, 0.3, HumanLabel.FIRST),         # outside band, agree
    ]
    res = agreement(insts, eps_tie=1e-4)
    assert res.point_estimate == pytest.approx(2 / 3)


def test_agreement_levels():
    insts = [
        _pref("a", 1.0, 0.0, HumanLabel.FIRST, level=1),
        _pref("b", 0.0, 1.0, HumanLabel.FIRST, level=1),
        _pref("c", 0.0, 1.0, HumanLabel.SECOND, level=2),
    ]
    res = agreement(insts, eps_tie=1e-4)
    assert ("level1", 2, 0.5) in res.per_bucket
    assert ("level2", 1, 1.0) in res.per_bucket


def test_agreement_matches_pairwise_when_no_ties():
    # eps_tie = 0 and no human ties reduces to preference accuracy
    rng = np.random.default_rng(0)
    insts = []
    correct = 0
    for k in range(50):
        s1, s2 = rng.standard_normal(2)
        label = HumanLabel.FIRST if rng.random() < 0.5 else HumanLabel.SECOND
        correct += (s1 > s2) == (label is HumanLabel.FIRST)
        insts.append(_pref(f"i{k}", s1, s2, label))
    res = agreement(insts, eps_tie=0.0)
    assert res.point_estimate == pytest.approx(correct / 50)


def test_spearman_examples():
    assert spearman_rho([1, 2, 3], [10, 20, 30]) == pytest.approx(1.0)
    assert spearman_rho([1, 2, 3], [30, 20, 10]) == pytest.approx(-1.0)
    assert spearman_rho([1, 2, 3], [1, 3, 2]) == pytest.approx(0.5)


def test_kendall_examples():
    assert kendall_tau([1, 2, 3], [5, 6, 7]) == pytest.approx(1.0)
    assert kendall_tau([1, 2, 3], [1, 3, 2]) == pytest.approx(1 / 3)
    assert kendall_tau([1, 2, 3], [3, 2, 1]) == pytest.approx(-1.0)


def test_rank_correlations_monotone_invariant():
    rng = np.random.default_rng(1)
    a = rng.standard_normal(10)
    b = rng.standard_normal(10)
    rho = spearman_rho(a, b)
    tau = kendall_tau(a, b)
    for f in (lambda x: 3 * x + 2, np.exp, lambda x: x**3):
        assert spearman_rho(f(a), b) == pytest.approx(rho, abs=1e-12)
        assert kendall_tau(a, f(b)) == pytest.approx(tau, abs=1e-12)


def test_rank_correlations_degenerate():
    with pytest.raises(DegenerateRanksError):
        spearman_rho([1.0, 1.0, 1.0], [1, 2, 3])
    with pytest.raises(DegenerateRanksError):
        kendall_tau([1, 2, 3], [4.0, 4.0, 4.0])


def test_margin_buckets_single_bin_reduces_to_overall():
    rng = np.random.default_rng(2)
    insts = [
        _inst(f"i{k}", rng.standard_normal(), rng.standard_normal())
        for k in range(20)
    ]
    overall = pairwise_accuracy(insts, "soft_msd").point_estimate
    res = margin_buckets(insts, 1, fields=("soft_msd",))["soft_msd"]
    assert res.per_bucket[0][2] == pytest.approx(overall)
    assert res.per_bucket[0][1] == 20


def test_margin_buckets_equal_counts():
    rng = np.random.default_rng(3)
    insts = [
        _inst(f"i{k}", rng.standard_normal(), rng.standard_normal())
        for k in range(10)
    ]
    res = margin_buckets(insts, 5, fields=("soft_msd",))["soft_msd"]
    assert [n for _, n, _ in res.per_bucket] == [2, 2, 2, 2, 2]
    assert sum(n for _, n, _ in res.per_bucket) == 10


def test_margin_buckets_margin_is_sorted():
    rng = np.random.default_rng(4)
    insts = []
    for k in range(30):
        g_pos, g_neg = rng.standard_normal(2)
        insts.append(_inst(f"i{k}", g_pos, g_neg, field="g"))
    res = margin_buckets(insts, 3, fields=("g",))
    means = [v for _, _, v in res["mean_abs_dcos"].per_bucket]
    assert means == sorted(means)


def test_length_buckets_single_bucket():
    insts = [_inst(f"i{k}", 1.0, 0.0, caption_length=k + 1) for k in range(8)]
    res = length_buckets(insts, [0], fields=("soft_msd",))["soft_msd"]
    assert len(res.per_bucket) == 1
    assert res.per_bucket[0][1] == 8
    assert res.per_bucket[0][2] == 1.0


def test_length_buckets_boundaries():
    insts = [_inst(f"i{k}", 1.0, 0.0, caption_length=n) for k, n in
             enumerate([0, 9, 10, 11, 19, 20])]
    res = length_buckets(insts, [0, 10, 20], fields=("soft_msd",))["soft_msd"]
    counts = [n for _, n, _ in res.per_bucket]
    assert counts == [2, 3, 1]  # lo inclusive, hi exclusive
    assert sum(counts) == len(insts)


def test_bootstrap_two_cluster_exhaustive():
    insts = [_inst("a", 1.0, 0.0), _inst("b", 0.0, 1.0)]

    def stat(sub):
        return pairwise_accuracy(sub, "soft_msd").point_estimate

    lo, hi = cluster_bootstrap_ci(insts, stat, b=2000, seed=0)
    # exhaustive enumeration over the 4 equally likely 2-cluster resamples
    values = []
    for draw in itertools.product([0, 1], repeat=2):
        sub = [insts[j] for j in draw]
        values.append(stat(sub))
    assert lo == min(values)
    assert hi == max(values)


def test_bootstrap_constant_statistic():
    insts = [_inst("a", 1.0, 0.0), _inst("b", 1.0, 0.0), _inst("c", 1.0, 0.0)]
    lo, hi = cluster_bootstrap_ci(
        insts, lambda s: pairwise_accuracy(s, "soft_msd").point_estimate,
        b=200, seed=1,
    )
    assert lo == hi == 1.0


def test_bootstrap_deterministic():
    rng = np.random.default_rng(5)
    insts = [
        _inst(f"i{k}", rng.standard_normal(), rng.standard_normal())
        for k in range(12)
    ]
    stat = lambda s: pairwise_accuracy(s, "soft_msd").point_estimate
    assert cluster_bootstrap_ci(insts, stat, b=300, seed=7) == cluster_bootstrap_ci(
        insts, stat, b=300, seed=7
    )


def test_bootstrap_contains_point_estimate():
    rng = np.random.default_rng(6)
    insts = [
        _inst(f"i{k}", rng.standard_normal(), rng.standard_normal())
        for k in range(40)
    ]
    stat = lambda s: pairwise_accuracy(s, "soft_msd").point_estimate
    point = stat(insts)
    misses = 0
    for seed in range(20):
        lo, hi = cluster_bootstrap_ci(insts, stat, b=1000, seed=seed)
        if not lo <= point <= hi:
            misses += 1
    assert misses <= 1


def test_bootstrap_too_few_clusters():
    insts = [_inst("only", 1.0, 0.0)]
    with pytest.raises(TooFewClustersError):
        cluster_bootstrap_ci(
            insts, lambda s: 0.0, b=100, seed=0
        )


def test_mcnemar_no_discordance():
    assert mcnemar_test([(True, True)] * 5 + [(False, False)] * 3) == 1.0


def test_mcnemar_against_chi2_oracle():
    # b=10, c=0
    pairs = [(True, False)] * 10 + [(True, True)] * 5
    p = mcnemar_test(pairs)
    assert p == pytest.approx(float(chi2.sf(8.1, df=1)), abs=1e-4)
    assert p == pytest.approx(0.0044265258579198315, abs=1e-6)
    # b=c=50
    pairs = [(True, False)] * 50 + [(False, True)] * 50
    p = mcnemar_test(pairs)
    assert p == pytest.approx(float(chi2.sf(0.01, df=1)), abs=1e-6)
    assert p == pytest.approx(0.920344325445942, abs=1e-6)


def test_mcnemar_symmetric_and_bounded():
    rng = np.random.default_rng(7)
    for _ in range(20):
        b = int(rng.integers(0, 30))
        c = int(rng.integers(0, 30))
        pairs_bc = [(True, False)] * b + [(False, True)] * c
        pairs_cb = [(True, False)] * c + [(False, True)] * b
        p = mcnemar_test(pairs_bc)
        assert 0.0 <= p <= 1.0
        assert p == mcnemar_test(pairs_cb)
