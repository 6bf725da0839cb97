import numpy as np
import pytest

from wristhr.nn import HrEstimate
from wristhr.pipeline import (
    MetricsReport,
    PipelineConfig,
    classify_trust,
    evaluate,
    format_report_table,
    loso_folds,
    report_to_rows,
    train_pipeline,
    trust_probability,
    variant_config,
)
from wristhr.mixfilter import AdaptHyperParams
from wristhr.model import HrNetworkConfig, TrainSettings
from wristhr.synth import gen_benchmark_suite


def erf_oracle(thr, sigma):
    """F(mu+thr) - F(mu-thr) for N(mu, sigma^2), via mpmath's erf."""
    import mpmath

    mpmath.mp.dps = 40
    z = mpmath.mpf(thr) / mpmath.mpf(sigma)
    phi = lambda u: mpmath.mpf(1) / 2 * (1 + mpmath.erf(u / mpmath.sqrt(2)))
    return float(phi(z) - phi(-z))


def est(mu=100.0, sigma=5.0, t=0.0):
    return HrEstimate(mu_hr=mu, sigma_hr=sigma, frame_time=t)


class TestTrustProbability:
    def test_tiny_sigma_saturates(self):
        assert trust_probability(est(sigma=1e-3), thr=10.0) >= 1.0 - 1e-12

    def test_sigma_equals_thr(self):
        # 2*Phi(1) - 1 = 0.682689...
        p = trust_probability(est(sigma=10.0), thr=10.0)
        assert abs(p - 0.6826894921370859) < 1e-9

    def test_wide_sigma(self):
        p = trust_probability(est(sigma=1000.0), thr=10.0)
        assert abs(p - erf_oracle(10.0, 1000.0)) < 1e-12
        assert abs(p - 0.00797871) < 1e-5

    @pytest.mark.parametrize("sigma", [1e-3, 0.1, 1.0, 10.0, 100.0, 1e3])
    @pytest.mark.parametrize("thr", [1.0, 10.0, 50.0])
    def test_matches_erf_oracle(self, sigma, thr):
        p = trust_probability(est(sigma=sigma), thr=thr)
        assert abs(p - erf_oracle(thr, sigma)) < 1e-9

    def test_mu_invariance_exact(self):
        for mu in (-50.0, 0.0, 75.0, 500.0):
            assert trust_probability(est(mu=mu, sigma=7.0), 10.0) == trust_probability(
                est(mu=0.0, sigma=7.0), 10.0
            )

    def test_monotone_in_sigma_and_thr(self):
        # strictly monotone wherever float64 has not saturated to 1.0
        sigmas = np.logspace(np.log10(2.0), 3, 25)
        ps = [trust_probability(est(sigma=s), 10.0) for s in sigmas]
        assert all(a > b for a, b in zip(ps, ps[1:]))
        saturated = [trust_probability(est(sigma=s), 10.0) for s in np.logspace(-3, 0, 10)]
        assert all(a >= b for a, b in zip(saturated, saturated[1:]))
        thrs = np.linspace(1.0, 50.0, 25)
        ps = [trust_probability(est(sigma=10.0), t) for t in thrs]
        assert all(a < b for a, b in zip(ps, ps[1:]))

    def test_invalid_thr(self):
        with pytest.raises(ValueError):
            trust_probability(est(), 0.0)


class TestClassifyTrust:
    def test_sigma_10_keeps(self):
        d = classify_trust(est(sigma=10.0), thr=10.0, cl=0.5)
        assert abs(d.trust_prob - 0.6827) < 1e-4
        assert d.keep

    def test_sigma_30_drops(self):
        d = classify_trust(est(sigma=30.0), thr=10.0, cl=0.5)
        assert abs(d.trust_prob - 0.26112) < 1e-4
        assert not d.keep

    def test_boundary_keeps(self):
        # choose sigma so trust is exactly cl within float precision
        d = classify_trust(est(sigma=10.0), thr=10.0, cl=0.6826894921370859)
        assert d.keep


class TestEvaluate:
    def test_hand_enumerated_two_samples(self):
        # errors {0, 20}, sigmas {1, 1000}: second has trust ~0.008 -> dropped
        preds = [(est(mu=100.0, sigma=1.0), 100.0), (est(mu=100.0, sigma=1000.0), 120.0)]
        r = evaluate(preds, thr=10.0, cl=0.5)
        assert r.mae == 0.0
        assert r.retention_pct == 50.0
        assert r.tpr == 1.0
        assert r.f1 == 1.0
        assert r.n_kept == 1

    def test_all_confident_and_correct(self):
        preds = [(est(mu=80.0, sigma=1e-3), 80.0) for _ in range(5)]
        r = evaluate(preds, thr=10.0, cl=0.5)
        assert r.retention_pct == 100.0
        assert r.mae == 0.0
        assert r.no_positives
        assert r.tpr == 1.0

    def test_all_dropped_reports_absent_mae(self):
        preds = [(est(mu=80.0, sigma=500.0), 90.0) for _ in range(4)]
        r = evaluate(preds, thr=10.0, cl=0.5)
        assert r.retention_pct == 0.0
        assert r.mae is None
        assert r.sd_ae is None

    def test_confusion_matrix_mixed(self):
        # kept+wrong (FN), kept+right (TN), dropped+wrong (TP), dropped+right (FP)
        preds = [
            (est(mu=100.0, sigma=1.0), 130.0),   # kept, error 30 -> FN
            (est(mu=100.0, sigma=1.0), 101.0),   # kept, error 1 -> TN
            (est(mu=100.0, sigma=200.0), 150.0), # dropped, error 50 -> TP
            (est(mu=100.0, sigma=200.0), 102.0), # dropped, error 2 -> FP
        ]
        r = evaluate(preds, thr=10.0, cl=0.5)
        assert r.tpr == pytest.approx(0.5)          # TP=1, FN=1
        assert r.f1 == pytest.approx(2 / (2 + 1 + 1))  # 2TP/(2TP+FP+FN)
        assert r.mae == pytest.approx((30.0 + 1.0) / 2)
        assert r.retention_pct == 50.0

    def test_nll_over_all_samples(self):
        from wristhr.nn import gaussian_nll

        preds = [(est(mu=100.0, sigma=1.0), 100.0), (est(mu=100.0, sigma=400.0), 150.0)]
        r = evaluate(preds, thr=10.0, cl=0.5)
        want = np.mean([gaussian_nll(e, y) for e, y in preds])
        assert r.mean_nll == pytest.approx(want, abs=1e-12)

    def test_permutation_invariance(self, rng):
        preds = [
            (est(mu=float(rng.uniform(60, 180)), sigma=float(rng.uniform(0.5, 60.0))),
             float(rng.uniform(60, 180)))
            for _ in range(50)
        ]
        r1 = evaluate(preds, 10.0, 0.5)
        perm = list(np.asarray(preds, dtype=object)[rng.permutation(len(preds))])
        r2 = evaluate([(p, y) for p, y in perm], 10.0, 0.5)
        assert r1.mae == pytest.approx(r2.mae)
        assert r1.mean_nll == pytest.approx(r2.mean_nll)
        assert r1.retention_pct == r2.retention_pct
        assert r1.f1 == r2.f1

    def test_point_mode_no_filtering(self):
        preds = [(est(mu=100.0, sigma=1.0), 105.0)]
        r = evaluate(preds, probabilistic=False)
        assert r.mean_nll is None
        assert r.tpr is None
        assert r.retention_pct == 100.0
        assert r.mae == 5.0

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            evaluate([], 10.0, 0.5)

    def test_retention_extremes_in_cl(self, rng):
        preds = [
            (est(mu=float(rng.uniform(60, 180)), sigma=float(rng.uniform(2.0, 80.0))),
             float(rng.uniform(60, 180)))
            for _ in range(30)
        ]
        assert evaluate(preds, 10.0, cl=0.0).retention_pct == 100.0
        assert evaluate(preds, 10.0, cl=1.0).retention_pct == 0.0

    def test_kept_mae_never_worse_on_calibrated_inputs(self):
        # dropped samples are exactly the above-threshold ones
        preds, errors = [], []
        for err, sigma in ((2.0, 1.0), (4.0, 2.0), (25.0, 100.0), (40.0, 200.0)):
            preds.append((est(mu=100.0, sigma=sigma), 100.0 + err))
            errors.append(err)
        r = evaluate(preds, 10.0, 0.5)
        assert r.mae <= np.mean(errors)

    def test_breakdowns(self):
        preds = [
            (est(mu=100.0, sigma=1.0), 100.0),
            (est(mu=100.0, sigma=1.0), 110.0),
            (est(mu=100.0, sigma=999.0), 100.0),
        ]
        groups = [("s1", "walk"), ("s1", "rest"), ("s2", "walk")]
        r = evaluate(preds, 10.0, 0.5, groups=groups)
        assert set(r.per_subject) == {"s1", "s2"}
        assert r.per_subject["s1"]["n"] == 2
        assert r.per_subject["s2"]["retention_pct"] == 0.0
        assert set(r.per_activity) == {"walk", "rest"}


class TestLosoFolds:
    def _sessions(self, n):
        from tests_util_sessions import quick_session

        return [quick_session(f"s{i:02d}") for i in range(n)]

    def test_fifteen_subjects_fifteen_folds(self):
        sessions = self._sessions(15)
        folds = loso_folds(sessions)
        assert len(folds) == 15
        tests = [t for _, t in folds]
        assert sorted(tests) == sorted(s.subject_id for s in sessions)

    def test_two_subjects(self):
        folds = loso_folds(self._sessions(2))
        assert len(folds) == 2
        for train, test in folds:
            assert len(train) == 1
            assert test not in train

    def test_union_disjoint(self):
        folds = loso_folds(self._sessions(5))
        for train, test in folds:
            assert test not in train
            assert len(set(train)) == 4

    def test_duplicate_ids_rejected(self):
        sessions = self._sessions(3)
        sessions[2].subject_id = sessions[0].subject_id
        with pytest.raises(ValueError):
            loso_folds(sessions)


@pytest.fixture(scope="module")
def small_suite():
    return gen_benchmark_suite(seed=11, segment_s=40.0, gap_s=4.0)


def quick_cfg(**kw):
    base = dict(
        mix_hp=AdaptHyperParams(epochs=60),
        network=HrNetworkConfig(),
        train=TrainSettings(epochs=8, patience=8, batch_size=64),
        seed=1,
    )
    base.update(kw)
    return PipelineConfig(**base)


class TestTrainPipeline:
    def test_smoke_full_variant(self, small_suite):
        sessions = [r.recording for r in small_suite]
        result = train_pipeline((sessions[:3], sessions[3]), quick_cfg())
        r = result.report
        assert r.n_total > 50
        assert r.mean_nll is not None
        assert 0.0 <= r.retention_pct <= 100.0
        assert set(result.prediction_groups)  # breakdowns carried through
        assert result.history["sample_counts"]["adversarial"] > 0
        assert result.history["sample_counts"]["high_hr"] > 0
        # filters exist for every labeled activity of every subject
        acts = {a for _, a in result.mix_filters.keys()}
        assert acts == {"clean", "ma_offband", "ma_overlap", "ma_erasure", "hr_ramp"}

    def test_point_variant_contract(self, small_suite):
        sessions = [r.recording for r in small_suite]
        cfg = quick_cfg(probabilistic=False, guided_adversarial=False, high_hr=False)
        result = train_pipeline((sessions[:3], sessions[3]), cfg)
        r = result.report
        assert r.mean_nll is None
        assert r.tpr is None and r.f1 is None
        assert r.retention_pct == 100.0
        assert result.history["sample_counts"]["adversarial"] == 0

    def test_determinism(self, small_suite):
        sessions = [r.recording for r in small_suite]
        cfg = quick_cfg(train=TrainSettings(epochs=2, patience=2, batch_size=64))
        r1 = train_pipeline((sessions[:3], sessions[3]), cfg)
        r2 = train_pipeline((sessions[:3], sessions[3]), cfg)
        assert r1.report.mean_nll == r2.report.mean_nll
        assert r1.report.retention_pct == r2.report.retention_pct
        mus1 = [e.mu_hr for e, _ in r1.predictions]
        mus2 = [e.mu_hr for e, _ in r2.predictions]
        assert mus1 == mus2


class TestReportRendering:
    def test_rows_and_table(self):
        r = MetricsReport(
            mae=3.2, sd_ae=4.1, mean_nll=2.9, retention_pct=84.0, tpr=0.8, f1=0.7,
            n_total=100, n_kept=84,
            per_subject={"s1": {"mae": 3.2, "sd_ae": 4.1, "retention_pct": 84.0, "n": 100}},
        )
        rows = report_to_rows(r)
        assert ("mae_bpm", "overall", "3.200000") in rows
        assert any(scope == "subject:s1" for _, scope, _ in rows)
        table = format_report_table({"s1": r})
        assert "3.20 (4.10)" in table
        assert "84.00" in table

    def test_absent_mae_rendering(self):
        r = MetricsReport(mae=None, sd_ae=None, mean_nll=5.0, retention_pct=0.0,
                          tpr=1.0, f1=0.0, n_total=10, n_kept=0)
        rows = report_to_rows(r)
        assert ("mae_bpm", "overall", "absent") in rows
