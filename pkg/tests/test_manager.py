import numpy as np
import pytest

from jamloop.detector import DetectorXapp
from jamloop.labeler import LabelerConfig
from jamloop.manager import (ClosedLoop, DriftReport, LoopConfig, ModelRegistry,
                             ManagerError, TRIGGER_LOW_AGREEMENT, TRIGGER_NONE,
                             TRIGGER_NO_MODEL, deploy_if_better, monitor, retrain)
from jamloop.mlp import TrainConfig
from jamloop.scenarios import KpiSample, iter_stream, schedule_from_ids
from jamloop.store import (DetectionRecord, LABEL_CLEAN, LABEL_INTERFERENCE,
                           LabeledSample, TelemetryStore)


def kpi(seq, snr=10.0, truth=False):
    return KpiSample(seq=seq, ts_ms=seq * 100, snr_db=snr, mcs=10, bler=0.1,
                     truth_interference=truth)


def detection(seq, verdict, version=1):
    prob = 0.9 if verdict == LABEL_INTERFERENCE else 0.1
    return DetectionRecord(seq=seq, prob=prob, verdict=verdict,
                           model_version=version, latency_us=5)


def fill(store, n, verdict_of, label_of):
    for i in range(n):
        store.append("detections", detection(i, verdict_of(i)))
        store.append("labels", LabeledSample(i, label_of(i), 0.8))


class TestMonitor:
    def test_perfect_agreement(self):
        store = TelemetryStore()
        fill(store, 100, lambda i: LABEL_CLEAN, lambda i: LABEL_CLEAN)
        report = monitor(store, window_size=100)
        assert report.agreement == 1.0
        assert not report.drifted
        assert report.trigger_reason == TRIGGER_NONE

    def test_boundary_agreement_is_not_drift(self):
        store = TelemetryStore()
        # exactly 85% agreement over a window of 200
        fill(store, 200,
             lambda i: LABEL_CLEAN,
             lambda i: LABEL_CLEAN if i % 200 < 170 else LABEL_INTERFERENCE)
        report = monitor(store, window_size=200, threshold=0.85)
        assert report.agreement == pytest.approx(0.85)
        assert not report.drifted

    def test_half_disagreement_drifts(self):
        store = TelemetryStore()
        fill(store, 200,
             lambda i: LABEL_CLEAN,
             lambda i: LABEL_CLEAN if i % 2 else LABEL_INTERFERENCE)
        report = monitor(store, window_size=200)
        assert report.agreement == pytest.approx(0.5)
        assert report.drifted
        assert report.trigger_reason == TRIGGER_LOW_AGREEMENT

    def test_zero_pairs(self):
        report = monitor(TelemetryStore())
        assert report.sample_count == 0
        assert not report.drifted

    def test_drifted_flag_must_match_reason(self):
        with pytest.raises(ValueError):
            DriftReport(0, 10, 0.5, 10, drifted=True, trigger_reason=TRIGGER_NONE)


def make_labeled_history(store, n=400, seed=0):
    rng = np.random.default_rng(seed)
    for i in range(n):
        jam = i % 2 == 0
        snr = 8.0 + 0.5 * rng.standard_normal() if jam else 25.0 + 0.5 * rng.standard_normal()
        store.append("kpi", kpi(i, snr=float(snr)))
        store.append("labels", LabeledSample(
            i, LABEL_INTERFERENCE if jam else LABEL_CLEAN, 0.9))


class TestRetrain:
    def test_first_retrain_trains_and_registers(self, tmp_path):
        store = TelemetryStore()
        make_labeled_history(store)
        registry = ModelRegistry(tmp_path / "models")
        outcome = retrain(store, TrainConfig(seed=1, epochs=15), registry)
        assert outcome.entry is not None
        assert outcome.entry.version == 1
        assert outcome.entry.val_accuracy >= 0.95
        assert not outcome.entry.deployed

    def test_single_class_history_noop(self, tmp_path):
        store = TelemetryStore()
        for i in range(100):
            store.append("kpi", kpi(i))
            store.append("labels", LabeledSample(i, LABEL_CLEAN, 0.9))
        registry = ModelRegistry(tmp_path / "models")
        outcome = retrain(store, TrainConfig(seed=1), registry)
        assert outcome.entry is None
        assert "single-class" in outcome.skipped_reason
        assert registry.entries == []

    def test_repeat_retrain_same_history_identical_weights_new_version(self, tmp_path):
        from jamloop import mlp
        store = TelemetryStore()
        make_labeled_history(store)
        registry = ModelRegistry(tmp_path / "models")
        cfg = TrainConfig(seed=5, epochs=10)
        e1 = retrain(store, cfg, registry).entry
        e2 = retrain(store, cfg, registry).entry
        assert (e1.version, e2.version) == (1, 2)
        m1, m2 = mlp.load(e1.path), mlp.load(e2.path)
        for w1, w2 in zip(m1.weights, m2.weights):
            assert np.array_equal(w1, w2)


class TestDeployIfBetter:
    def _entry(self, tmp_path, val_accuracy, seed=1):
        store = TelemetryStore()
        make_labeled_history(store, seed=seed)
        registry = ModelRegistry(tmp_path / "models")
        entry = retrain(store, TrainConfig(seed=seed, epochs=15), registry).entry
        entry.val_accuracy = val_accuracy
        return entry, registry

    def test_above_gate_deploys(self, tmp_path):
        entry, registry = self._entry(tmp_path, 0.97)
        det = DetectorXapp()
        decision = deploy_if_better(entry, det, registry)
        assert decision.deployed
        assert decision.receipt is not None
        assert det.deployed_version == entry.version
        assert registry.deployed_entry().version == entry.version

    def test_below_gate_retained_not_deployed(self, tmp_path):
        entry, registry = self._entry(tmp_path, 0.80)
        det = DetectorXapp()
        decision = deploy_if_better(entry, det, registry)
        assert not decision.deployed
        assert det.deployed_version is None
        assert registry.deployed_entry() is None
        assert registry.entries  # model retained

    def test_redeploy_rejected(self, tmp_path):
        entry, registry = self._entry(tmp_path, 0.97)
        det = DetectorXapp()
        assert deploy_if_better(entry, det, registry).deployed
        decision = deploy_if_better(entry, det, registry)
        assert not decision.deployed
        assert "already deployed" in decision.reason

    def test_registry_versions_unique_dense(self, tmp_path):
        registry = ModelRegistry(tmp_path / "models")
        store = TelemetryStore()
        make_labeled_history(store)
        cfg = TrainConfig(seed=2, epochs=5)
        versions = [retrain(store, cfg, registry).entry.version for _ in range(3)]
        assert versions == [1, 2, 3]
        with pytest.raises(ManagerError):
            registry.mark_deployed(99)


def run_loop_over(ids, seed=3, duration=300, labeler_cfg=None, loop_cfg=None,
                  registry_dir=None):
    sched = schedule_from_ids(ids, seed=seed, duration_samples=duration)
    store = TelemetryStore()
    det = DetectorXapp(store)
    registry = ModelRegistry(registry_dir)
    loop = ClosedLoop(store, det, registry,
                      labeler_cfg or LabelerConfig(),
                      loop_cfg or LoopConfig(train=TrainConfig(seed=seed, epochs=15)))
    for s in iter_stream(sched):
        loop.process(s)
    transcript = loop.close()
    return store, det, registry, transcript


class TestClosedLoop:
    def test_cold_start_single_train_and_deploy(self, tmp_path):
        # clean bootstrap then a jammed segment: one NO_MODEL train + deploy
        store, det, registry, transcript = run_loop_over(
            [2, 1, 2, 1], seed=3, registry_dir=tmp_path / "m")
        deploys = [e for e in transcript if e["event"] == "deploy" and e["deployed"]]
        retrains = [e for e in transcript if e["event"] == "retrain"]
        assert len(deploys) == 1
        assert len(retrains) == 1
        no_model = [e for e in transcript if e["event"] == "drift_report"
                    and e["trigger_reason"] == TRIGGER_NO_MODEL]
        assert no_model  # cold start visible in transcript
        assert det.deployed_version == 1
        # exactly-once detection over the whole stream once deployed
        assert store.count("detections") == store.count("kpi")

    def test_converged_stream_no_further_retrains(self, tmp_path):
        store, det, registry, transcript = run_loop_over(
            [2, 1] * 4, seed=6, registry_dir=tmp_path / "m")
        retrains = [e for e in transcript if e["event"] == "retrain"]
        assert len(retrains) == 1  # the cold-start train only

    def test_unseen_regime_triggers_single_retrain_and_deploy(self, tmp_path):
        # deployed model knows scenarios 2/1; scenario 7 (-20 dB, new class)
        # disagrees with the labeler until one retrain fixes it
        store, det, registry, transcript = run_loop_over(
            [2, 1, 2, 7, 8], seed=9, registry_dir=tmp_path / "m")
        drift_events = [e for e in transcript if e["event"] == "drift_report"
                        and e["trigger_reason"] == TRIGGER_LOW_AGREEMENT]
        assert drift_events, "expected a low-agreement drift report"
        transition_seq = 900  # scenario 7 starts here
        first_drift = drift_events[0]
        assert first_drift["window_end_seq"] - transition_seq <= 400
        post_deploys = [e for e in transcript if e["event"] == "deploy"
                        and e["deployed"] and e["kpi_high_seq"] >= transition_seq]
        post_retrains = [e for e in transcript if e["event"] == "retrain"
                         and e.get("history_high_seq", 0) >= transition_seq]
        assert len(post_deploys) == 1
        assert len(post_retrains) == 1
        assert det.deployed_version == 2

    def test_loop_never_reads_truth(self, tmp_path):
        # the loop's label/detect path operates on FeatureSample views only
        import inspect
        from jamloop import manager
        src = inspect.getsource(manager)
        assert "truth_interference" not in src
