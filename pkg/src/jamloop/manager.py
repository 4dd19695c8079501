"""Closed-loop controller: drift monitoring, retraining, gated deployment.

Agreement between deployed-model verdicts and labeler labels is the drift
statistic; a drop below threshold (or a cold start with no model) triggers
a full-history retrain, and the new model is hot-swapped into the detector
only if its holdout accuracy clears the deployment gate. After each
deployment the monitoring window restarts empty so pre-swap disagreement
cannot re-trigger.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

from . import mlp
from .detector import DetectorXapp, StaleVersionError
from .labeler import BaselineState, LabelerConfig, label_window
from .store import LABEL_INTERFERENCE, SOURCE_LABELER, TelemetryStore

TRIGGER_NONE = "NONE"
TRIGGER_LOW_AGREEMENT = "LOW_AGREEMENT"
TRIGGER_NO_MODEL = "NO_MODEL"

DEFAULT_MONITOR_WINDOW = 200
DEFAULT_DRIFT_THRESHOLD = 0.85
DEFAULT_DEPLOY_GATE = 0.90


class ManagerError(Exception):
    pass


@dataclass(frozen=True)
class DriftReport:
    window_start_seq: int
    window_end_seq: int
    agreement: float | None
    sample_count: int
    drifted: bool
    trigger_reason: str

    def __post_init__(self) -> None:
        if self.drifted != (self.trigger_reason != TRIGGER_NONE):
            raise ValueError("drifted flag must match trigger_reason")


@dataclass
class RegistryEntry:
    version: int
    path: str
    val_accuracy: float
    deployed: bool
    created_at: float
    train_report: dict = field(default_factory=dict)


class ModelRegistry:
    """Versioned model artifacts: models/v<NNN>.model + registry.jsonl."""

    def __init__(self, directory: str | Path) -> None:
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self.entries: list[RegistryEntry] = []
        self._journal = self.directory / "registry.jsonl"
        if self._journal.exists():
            for line in self._journal.read_text(encoding="utf-8").splitlines():
                if line.strip():
                    self.entries.append(RegistryEntry(**json.loads(line)))

    def next_version(self) -> int:
        return max((e.version for e in self.entries), default=0) + 1

    def deployed_entry(self) -> RegistryEntry | None:
        for e in self.entries:
            if e.deployed:
                return e
        return None

    def add(self, model: mlp.MlpModel, report: mlp.TrainReport) -> RegistryEntry:
        version = self.next_version()
        if model.version != version:
            raise ManagerError(f"model version {model.version} != next registry version {version}")
        path = self.directory / f"v{version:03d}.model"
        mlp.save(model, path)
        entry = RegistryEntry(version=version, path=str(path),
                              val_accuracy=report.val_accuracy, deployed=False,
                              created_at=time.time(),
                              train_report={"best_epoch": report.best_epoch,
                                            "val_accuracy": report.val_accuracy,
                                            "n_train": report.n_train,
                                            "n_val": report.n_val,
                                            "class_counts": report.class_counts})
        self.entries.append(entry)
        self._rewrite_journal()
        return entry

    def mark_deployed(self, version: int) -> None:
        found = False
        for e in self.entries:
            if e.version == version:
                if e.deployed:
                    raise ManagerError(f"version {version} is already deployed")
                e.deployed = True
                found = True
            else:
                e.deployed = False
        if not found:
            raise ManagerError(f"version {version} not in registry")
        self._rewrite_journal()

    def _rewrite_journal(self) -> None:
        with self._journal.open("w", encoding="utf-8") as f:
            for e in self.entries:
                f.write(json.dumps(e.__dict__) + "\n")


def monitor(store: TelemetryStore, window_size: int = DEFAULT_MONITOR_WINDOW,
            threshold: float = DEFAULT_DRIFT_THRESHOLD,
            from_seq: int = 0) -> DriftReport:
    """Agreement over the most recent joined (detection, label) pairs."""
    pairs = store.join_detections(from_seq=from_seq)
    pairs = pairs[-window_size:]
    if not pairs:
        return DriftReport(window_start_seq=from_seq, window_end_seq=from_seq,
                           agreement=None, sample_count=0, drifted=False,
                           trigger_reason=TRIGGER_NONE)
    agree = sum(1 for det, lab in pairs if det.verdict == lab.label) / len(pairs)
    drifted = agree < threshold  # strict: exactly-at-threshold is not drift
    return DriftReport(window_start_seq=pairs[0][0].seq, window_end_seq=pairs[-1][0].seq,
                       agreement=agree, sample_count=len(pairs), drifted=drifted,
                       trigger_reason=TRIGGER_LOW_AGREEMENT if drifted else TRIGGER_NONE)


@dataclass
class RetrainOutcome:
    entry: RegistryEntry | None
    skipped_reason: str | None = None
    history_high_seq: int | None = None


def retrain(store: TelemetryStore, cfg: mlp.TrainConfig,
            registry: ModelRegistry) -> RetrainOutcome:
    """Train a new version on the full labeler-labeled history (never truth)."""
    pairs = store.join_labels()
    pairs = [(s, lab) for s, lab in pairs if lab.source == SOURCE_LABELER]
    if not pairs:
        return RetrainOutcome(entry=None, skipped_reason="no labeled history")
    dataset = [((s.snr_db, s.bler, float(s.mcs)),
                1 if lab.label == LABEL_INTERFERENCE else 0) for s, lab in pairs]
    classes = {y for _, y in dataset}
    if len(classes) < 2:
        return RetrainOutcome(entry=None,
                              skipped_reason="labeled history is single-class",
                              history_high_seq=pairs[-1][0].seq)
    version = registry.next_version()
    try:
        model, report = mlp.train(dataset, cfg, version=version)
    except mlp.TrainingError as exc:
        return RetrainOutcome(entry=None, skipped_reason=str(exc),
                              history_high_seq=pairs[-1][0].seq)
    entry = registry.add(model, report)
    return RetrainOutcome(entry=entry, history_high_seq=pairs[-1][0].seq)


@dataclass
class DeployDecision:
    deployed: bool
    version: int
    reason: str
    receipt: object | None = None


def deploy_if_better(entry: RegistryEntry, detector: DetectorXapp,
                     registry: ModelRegistry,
                     gate: float = DEFAULT_DEPLOY_GATE) -> DeployDecision:
    """Swap the model in iff its holdout accuracy clears the gate."""
    if entry.deployed:
        return DeployDecision(False, entry.version, "already deployed")
    if entry.val_accuracy < gate:
        return DeployDecision(False, entry.version,
                              f"val accuracy {entry.val_accuracy:.3f} below gate {gate}")
    model = mlp.load(entry.path)
    try:
        receipt = detector.swap_model(model)
    except StaleVersionError as exc:
        return DeployDecision(False, entry.version, f"swap rejected: {exc}")
    registry.mark_deployed(entry.version)
    return DeployDecision(True, entry.version,
                          f"val accuracy {entry.val_accuracy:.3f} >= gate {gate}",
                          receipt=receipt)


@dataclass
class LoopConfig:
    monitor_window: int = DEFAULT_MONITOR_WINDOW
    drift_threshold: float = DEFAULT_DRIFT_THRESHOLD
    deploy_gate: float = DEFAULT_DEPLOY_GATE
    train: mlp.TrainConfig = field(default_factory=mlp.TrainConfig)


class ClosedLoop:
    """Drives labeler, detector, and training manager over a sample feed.

    Feed samples one at a time with process(); the loop labels full windows,
    runs detection once a model is deployed, and monitors/retrains every
    monitor_window newly labeled pairs. All events land in the transcript.
    """

    def __init__(self, store: TelemetryStore, detector: DetectorXapp,
                 registry: ModelRegistry, labeler_cfg: LabelerConfig | None = None,
                 loop_cfg: LoopConfig | None = None) -> None:
        self.store = store
        self.detector = detector
        self.registry = registry
        self.labeler_cfg = labeler_cfg or LabelerConfig()
        self.cfg = loop_cfg or LoopConfig()
        self.baseline = BaselineState()
        self.transcript: list[dict] = []
        self._window_buf: list = []
        self._labeled_since_check = 0
        self._monitor_from_seq = 0
        self._pending: list = []  # samples awaiting a deployed model

    def _log(self, event: str, **fields) -> None:
        self.transcript.append({"event": event, **fields})

    def _detect(self, sample) -> None:
        rec = self.detector.infer(sample)
        self.store.append("detections", rec)

    def _flush_pending_detections(self) -> None:
        if self.detector.deployed_version is None:
            return
        for s in self._pending:
            self._detect(s)
        self._pending.clear()

    def process(self, kpi_sample) -> None:
        """Ingest one KPI sample through the whole loop."""
        self.store.append("kpi", kpi_sample)
        sample = kpi_sample.public()  # ground truth never crosses this line

        if self.detector.deployed_version is None:
            self._pending.append(sample)
        else:
            self._detect(sample)

        self._window_buf.append(sample)
        if len(self._window_buf) >= self.labeler_cfg.window_size:
            self._label_buffer()

    def close(self) -> list[dict]:
        """Flush the partial final window and return the transcript."""
        if self._window_buf:
            self._label_buffer()
        self._log("close", kpi_count=self.store.count("kpi"),
                  label_count=self.store.count("labels"),
                  detection_count=self.store.count("detections"))
        return self.transcript

    def _label_buffer(self) -> None:
        labels, self.baseline = label_window(self._window_buf, self.baseline,
                                             self.labeler_cfg)
        for lab in labels:
            self.store.append("labels", lab)
        self._labeled_since_check += len(labels)
        self._window_buf = []
        if self._labeled_since_check >= self.cfg.monitor_window:
            self._labeled_since_check = 0
            self._check_loop()

    def _check_loop(self) -> None:
        if self.detector.deployed_version is None:
            report = DriftReport(window_start_seq=self._monitor_from_seq,
                                 window_end_seq=self.store.max_seq("labels") or 0,
                                 agreement=None, sample_count=0, drifted=True,
                                 trigger_reason=TRIGGER_NO_MODEL)
        else:
            report = monitor(self.store, self.cfg.monitor_window,
                             self.cfg.drift_threshold, from_seq=self._monitor_from_seq)
        self._log("drift_report", window_start_seq=report.window_start_seq,
                  window_end_seq=report.window_end_seq, agreement=report.agreement,
                  sample_count=report.sample_count, drifted=report.drifted,
                  trigger_reason=report.trigger_reason)
        if not report.drifted:
            return
        outcome = retrain(self.store, self.cfg.train, self.registry)
        if outcome.entry is None:
            self._log("retrain_skipped", reason=outcome.skipped_reason,
                      history_high_seq=outcome.history_high_seq)
            return
        self._log("retrain", version=outcome.entry.version,
                  val_accuracy=outcome.entry.val_accuracy,
                  history_high_seq=outcome.history_high_seq)
        decision = deploy_if_better(outcome.entry, self.detector, self.registry,
                                    self.cfg.deploy_gate)
        self._log("deploy", deployed=decision.deployed, version=decision.version,
                  reason=decision.reason,
                  seq_boundary=(decision.receipt.seq_boundary
                                if decision.receipt else None),
                  kpi_high_seq=self.store.max_seq("kpi"))
        if decision.deployed:
            self._flush_pending_detections()
            # cooldown: restart monitoring after the swap boundary
            self._monitor_from_seq = (self.store.max_seq("detections") or 0) + 1
