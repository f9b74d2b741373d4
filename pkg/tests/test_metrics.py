import numpy as np
import pytest
from scipy import stats

from headmotion import DatasetManifest, DomainError, ManifestEntry, Volume
from headmotion.metrics import (
    EvalReport,
    aes,
    correlate_covariate,
    r2,
    spearman,
    threshold_separation,
)


def naive_average_ranks(values):
    ranks = np.empty(len(values))
    for i, v in enumerate(values):
        less = sum(1 for u in values if u < v)
        equal = sum(1 for u in values if u == v)
        ranks[i] = less + (equal + 1) / 2.0
    return ranks


def test_r2_perfect_and_mean_predictor():
    y = np.array([0.3, 0.9, 1.4, 0.2])
    assert r2(y, y) == 1.0
    assert r2(y, np.full(4, y.mean())) == 0.0


def test_r2_hand_case():
    assert r2([0.0, 1.0, 2.0], [0.0, 1.0, 1.0]) == pytest.approx(0.5, abs=1e-15)


def test_r2_constant_target_rejected():
    with pytest.raises(DomainError) as err:
        r2([1.0, 1.0, 1.0], [0.0, 1.0, 2.0])
    assert err.value.reason == "constant_target"


def test_r2_never_exceeds_one():
    rng = np.random.default_rng(0)
    for _ in range(50):
        y = rng.normal(size=20)
        yhat = rng.normal(size=20)
        assert r2(y, yhat) <= 1.0


def test_spearman_monotone_cases():
    y = np.array([1.0, 2.0, 5.0, 9.0, 12.0])
    rho, p = spearman(y, y**3)
    assert rho == 1.0
    assert p == 0.0
    rho, _ = spearman(y, -y)
    assert rho == -1.0


def test_spearman_matches_naive_oracle_with_ties():
    rng = np.random.default_rng(11)
    for _ in range(30):
        y = rng.integers(0, 6, size=25).astype(float)  # heavy ties
        yhat = rng.integers(0, 6, size=25).astype(float)
        if np.all(y == y[0]) or np.all(yhat == yhat[0]):
            continue
        ry = naive_average_ranks(y)
        rh = naive_average_ranks(yhat)
        expect = np.corrcoef(ry, rh)[0, 1]
        rho, _ = spearman(y, yhat)
        assert rho == pytest.approx(expect, abs=1e-12)


def test_spearman_p_matches_scipy_t_approximation():
    rng = np.random.default_rng(3)
    for n in (10, 40, 200):
        y = rng.normal(size=n)
        yhat = y + rng.normal(size=n)
        rho, p = spearman(y, yhat)
        ref = stats.spearmanr(y, yhat)
        assert rho == pytest.approx(ref.statistic, abs=1e-12)
        assert p == pytest.approx(ref.pvalue, rel=1e-9)


def test_spearman_exact_permutation_matches_enumeration():
    from itertools import permutations

    rng = np.random.default_rng(8)
    y = rng.normal(size=6)
    yhat = rng.normal(size=6)
    rho, p = spearman(y, yhat, exact=True)
    ry = naive_average_ranks(y)
    rh = naive_average_ranks(yhat)
    hits = 0
    total = 0
    for perm in permutations(rh):
        total += 1
        if abs(np.corrcoef(ry, perm)[0, 1]) >= abs(rho) - 1e-12:
            hits += 1
    assert p == pytest.approx(hits / total, abs=1e-12)


def test_spearman_exact_limited_to_small_n():
    y = np.arange(11.0)
    with pytest.raises(DomainError) as err:
        spearman(y, y, exact=True)
    assert err.value.reason == "exact_unavailable"


def test_spearman_invariant_under_monotone_transforms():
    rng = np.random.default_rng(5)
    y = rng.normal(size=30)
    yhat = rng.normal(size=30)
    base = spearman(y, yhat)
    assert spearman(np.exp(y), yhat) == base
    assert spearman(y, 3.0 * yhat - 7.0) == base


def test_spearman_constant_input_rejected():
    with pytest.raises(DomainError) as err:
        spearman([1.0, 1.0, 1.0], [0.0, 1.0, 2.0])
    assert err.value.reason == "constant_input"


def test_aes_uniform_volume_has_no_edges():
    vol = Volume(data=np.full((8, 8, 4), 100, dtype=np.uint16))
    with pytest.raises(DomainError) as err:
        aes(vol)
    assert err.value.reason == "no_edges"


def test_aes_step_edge_is_half_step_height():
    data = np.zeros((16, 12, 5), dtype=np.uint16)
    data[8:, :, :] = 100
    vol = Volume(data=data)
    # central differences across a 1-voxel step of height 100 give 50 on
    # the two columns adjacent to the edge and 0 elsewhere
    assert aes(vol) == pytest.approx(50.0, abs=1e-12)


def test_aes_skips_flat_slices():
    data = np.zeros((16, 12, 6), dtype=np.uint16)
    data[8:, :, :3] = 100  # slices 3..5 stay flat
    assert aes(Volume(data=data)) == pytest.approx(50.0, abs=1e-12)


def manifest_with_ages(ages):
    entries = tuple(
        ManifestEntry(
            volume_path=f"vol_{i}.nii",
            motion_score=0.1,
            covariates={"age": float(a)},
            split="test",
        )
        for i, a in enumerate(ages)
    )
    return DatasetManifest(entries)


def test_covariate_identical_scores_give_rho_one():
    ages = np.linspace(20, 80, 15)
    manifest = manifest_with_ages(ages)
    out = correlate_covariate(ages.copy(), "age", manifest)
    assert out.rho == 1.0
    assert out.slope == pytest.approx(1.0, abs=1e-9)
    assert out.intercept == pytest.approx(0.0, abs=1e-6)


def test_covariate_planted_monotone_relation():
    rng = np.random.default_rng(14)
    ages = rng.uniform(20, 80, size=60)
    scores = 0.01 * ages + rng.normal(scale=0.02, size=60)
    out = correlate_covariate(scores, "age", manifest_with_ages(ages))
    assert out.rho > 0.9
    assert out.p < 1e-6


def test_covariate_independent_permutation_is_null():
    rng = np.random.default_rng(15)
    ages = rng.uniform(20, 80, size=40)
    manifest = manifest_with_ages(ages)
    rhos = []
    ps = []
    for _ in range(21):
        scores = rng.permutation(ages)
        out = correlate_covariate(scores, "age", manifest)
        rhos.append(abs(out.rho))
        ps.append(out.p)
    assert np.median(rhos) < 0.3
    assert np.median(ps) > 0.05


def test_covariate_missing_rows_listed():
    entries = (
        ManifestEntry(volume_path="good.nii", covariates={"age": 30.0}, split="test"),
        ManifestEntry(volume_path="nope.nii", split="test"),
    )
    with pytest.raises(DomainError) as err:
        correlate_covariate([0.1, 0.2], "age", DatasetManifest(entries))
    assert err.value.reason == "missing_covariate"
    assert "nope.nii" in str(err.value)


def auc_by_pair_counting(scores, labels):
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    wins = 0.0
    for p in pos:
        for q in neg:
            if p > q:
                wins += 1.0
            elif p == q:
                wins += 0.5
    return wins / (pos.size * neg.size)


def test_threshold_perfect_separation():
    scores = np.array([0.1, 0.2, 0.3, 0.8, 0.9, 1.1])
    labels = np.array([0, 0, 0, 1, 1, 1])
    out = threshold_separation(scores, labels)
    assert out.accuracy == 1.0
    assert out.auc == 1.0
    assert 0.3 < out.threshold < 0.8
    predicted = (scores > out.threshold).astype(int)
    np.testing.assert_array_equal(predicted, labels)


def test_threshold_identical_scores_auc_half():
    scores = np.full(10, 0.4)
    labels = np.array([0, 1] * 5)
    out = threshold_separation(scores, labels)
    assert out.auc == 0.5
    assert out.accuracy == 0.5


def test_threshold_matches_brute_force_sweep():
    rng = np.random.default_rng(23)
    for _ in range(25):
        labels = rng.integers(0, 2, size=30)
        if labels.min() == labels.max():
            continue
        scores = rng.normal(size=30) + 0.8 * labels
        out = threshold_separation(scores, labels)
        assert out.auc == pytest.approx(auc_by_pair_counting(scores, labels), abs=1e-12)
        distinct = np.unique(scores)
        sweep = [distinct[0] - 1.0, distinct[-1] + 1.0]
        sweep.extend(0.5 * (distinct[:-1] + distinct[1:]))
        best = max(np.mean(((scores > t).astype(int)) == labels) for t in sweep)
        assert out.accuracy == pytest.approx(best, abs=1e-12)
        achieved = np.mean(((scores > out.threshold).astype(int)) == labels)
        assert achieved == pytest.approx(out.accuracy, abs=1e-12)


def test_auc_invariant_under_monotone_transform():
    rng = np.random.default_rng(31)
    labels = np.array([0] * 12 + [1] * 12)
    scores = rng.normal(size=24) + labels
    base = threshold_separation(scores, labels).auc
    assert threshold_separation(np.exp(scores), labels).auc == base


def test_threshold_single_class_rejected():
    with pytest.raises(DomainError) as err:
        threshold_separation([0.1, 0.2], [1, 1])
    assert err.value.reason == "single_class"
    with pytest.raises(DomainError):
        threshold_separation([0.1, 0.2], [0, 2])


def test_eval_report_validation():
    EvalReport(r2=0.4, spearman_rho=0.6, spearman_p=0.01, n=75)
    with pytest.raises(DomainError):
        EvalReport(r2=0.4, spearman_rho=0.6, spearman_p=0.01, n=2)
    with pytest.raises(DomainError):
        EvalReport(r2=1.5, spearman_rho=0.6, spearman_p=0.01, n=75)
