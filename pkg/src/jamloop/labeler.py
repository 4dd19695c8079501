"""Unsupervised window labeling of KPI telemetry into clean/interference.

Each non-overlapping window is standardized on (snr_db, bler) and split by
2-means with deterministic init (centroids seeded at the min- and max-SNR
samples; exhaustive optimal partition for tiny windows). Windows whose
centroid SNR separation falls under a configured floor are treated as
homogeneous and classed as a whole against a running clean-SNR baseline.
A short median filter smooths per-sample labels near cluster boundaries.

The labeler consumes FeatureSample views only: ground truth is stripped
at the store boundary and cannot be read here by construction.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace

import numpy as np

from .scenarios import FeatureSample
from .store import (LABEL_CLEAN, LABEL_INTERFERENCE, DuplicateSeqError, LabeledSample,
                    TelemetryStore)

EXHAUSTIVE_KMEANS_MAX = 16  # tiny windows get the provably optimal 2-partition


class LabelerError(Exception):
    pass


@dataclass(frozen=True)
class LabelerConfig:
    window_size: int = 100
    separation_min_db: float = 4.0
    smoothing_halfwidth: int = 2
    baseline_quantile: float = 0.5
    baseline_offset_db: float = 6.0

    def validate(self) -> None:
        if self.window_size < 4:
            raise ValueError("window_size must be >= 4")
        if self.smoothing_halfwidth < 0:
            raise ValueError("smoothing_halfwidth must be >= 0")
        if not 0.0 < self.baseline_quantile < 1.0:
            raise ValueError("baseline_quantile must be in (0,1)")


@dataclass
class BaselineState:
    """Running estimate of clean-condition SNR, fed by CLEAN-labeled samples."""

    clean_snr_median_db: float = 0.0
    sample_count: int = 0
    _recent: list = field(default_factory=list, repr=False)

    MAX_RECENT = 600  # ~ a few windows of clean memory; tracks regime changes

    def update(self, clean_snrs: list[float], quantile: float) -> None:
        if not clean_snrs:
            return
        self._recent.extend(clean_snrs)
        if len(self._recent) > self.MAX_RECENT:
            self._recent = self._recent[-self.MAX_RECENT:]
        self.sample_count += len(clean_snrs)
        self.clean_snr_median_db = float(np.quantile(self._recent, quantile))


def _standardize(values: np.ndarray) -> np.ndarray:
    mean = values.mean(axis=0)
    std = values.std(axis=0)
    std = np.where(std > 0, std, 1.0)  # constant dimension keeps unit scale
    return (values - mean) / std


def _wcss(points: np.ndarray, assign: np.ndarray) -> float:
    total = 0.0
    for c in (0, 1):
        members = points[assign == c]
        if len(members):
            centroid = members.mean(axis=0)
            total += float(((members - centroid) ** 2).sum())
    return total


def _exhaustive_two_means(points: np.ndarray) -> np.ndarray:
    """Optimal 2-partition by enumeration; feasible for tiny windows only."""
    n = len(points)
    best_assign = np.zeros(n, dtype=int)
    best_assign[0] = 0
    best = np.inf
    for bits in itertools.product((0, 1), repeat=n - 1):
        assign = np.array((0,) + bits)
        if assign.max() == 0:  # need both clusters non-empty
            continue
        cost = _wcss(points, assign)
        if cost < best:
            best = cost
            best_assign = assign
    return best_assign


def _lloyd_two_means(points: np.ndarray, snr_col: np.ndarray) -> np.ndarray:
    """Lloyd iterations from deterministic min/max-SNR centroid seeds."""
    c0 = points[int(np.argmin(snr_col))].copy()
    c1 = points[int(np.argmax(snr_col))].copy()
    assign = np.zeros(len(points), dtype=int)
    for it in range(100):
        d0 = ((points - c0) ** 2).sum(axis=1)
        d1 = ((points - c1) ** 2).sum(axis=1)
        new_assign = (d1 < d0).astype(int)
        if it > 0 and np.array_equal(new_assign, assign):
            break
        assign = new_assign
        if assign.min() == assign.max():  # collapsed: keep seeds split
            break
        c0 = points[assign == 0].mean(axis=0)
        c1 = points[assign == 1].mean(axis=0)
    return assign


def two_means(points: np.ndarray, snr_col: np.ndarray) -> np.ndarray:
    """Deterministic 2-means assignment over standardized feature rows."""
    if len(points) <= EXHAUSTIVE_KMEANS_MAX:
        return _exhaustive_two_means(points)
    return _lloyd_two_means(points, snr_col)


def _median_filter_labels(labels: np.ndarray, halfwidth: int) -> np.ndarray:
    if halfwidth == 0 or len(labels) < 2:
        return labels
    out = labels.copy()
    n = len(labels)
    for i in range(n):
        lo = max(0, i - halfwidth)
        hi = min(n, i + halfwidth + 1)
        window = labels[lo:hi]
        out[i] = 1 if window.sum() * 2 > len(window) else 0
    return out


def label_window(samples: list[FeatureSample], baseline: BaselineState,
                 cfg: LabelerConfig) -> tuple[list[LabeledSample], BaselineState]:
    """Label one window; returns per-sample labels and the updated baseline."""
    cfg.validate()
    if not samples:
        raise LabelerError("cannot label an empty window")
    seqs = [s.seq for s in samples]
    if any(b <= a for a, b in zip(seqs, seqs[1:])):
        raise LabelerError("window samples must be strictly ordered by seq")

    snr = np.array([s.snr_db for s in samples])
    raw = np.column_stack([snr, np.array([s.bler for s in samples])])
    std = _standardize(raw)

    single_class = len(samples) < 4
    if not single_class:
        assign = two_means(std, std[:, 0])
        if 0 < assign.sum() < len(assign):
            mean_snr = [snr[assign == c].mean() for c in (0, 1)]
            separation = abs(mean_snr[0] - mean_snr[1])
            single_class = separation < cfg.separation_min_db
        else:  # degenerate window collapsed into one cluster
            single_class = True

    if single_class:
        window_median = float(np.median(snr))
        if baseline.sample_count > 0:
            gap = window_median - (baseline.clean_snr_median_db - cfg.baseline_offset_db)
            is_interference = gap < 0
            conf = min(1.0, abs(gap) / cfg.baseline_offset_db)
        else:
            # cold start: no clean reference yet, bootstrap-trust the window
            is_interference = False
            conf = 1.0
        label = LABEL_INTERFERENCE if is_interference else LABEL_CLEAN
        flags = np.full(len(samples), 1 if is_interference else 0)
        confs = np.full(len(samples), conf)
    else:
        # interference cluster: lower mean SNR; BLER breaks exact SNR ties
        if mean_snr[0] != mean_snr[1]:
            jam_cluster = 0 if mean_snr[0] < mean_snr[1] else 1
        else:
            mean_bler = [raw[assign == c, 1].mean() for c in (0, 1)]
            jam_cluster = 0 if mean_bler[0] > mean_bler[1] else 1
        flags = (assign == jam_cluster).astype(int)
        flags = _median_filter_labels(flags, cfg.smoothing_halfwidth)
        cents = np.array([std[assign == c].mean(axis=0) for c in (0, 1)])
        d0 = np.sqrt(((std - cents[0]) ** 2).sum(axis=1))
        d1 = np.sqrt(((std - cents[1]) ** 2).sum(axis=1))
        denom = d0 + d1
        denom = np.where(denom > 0, denom, 1.0)
        confs = np.abs(d0 - d1) / denom

    out = [LabeledSample(seq=s.seq,
                         label=LABEL_INTERFERENCE if f else LABEL_CLEAN,
                         confidence=float(c))
           for s, f, c in zip(samples, flags, confs)]

    new_baseline = replace(baseline)  # shallow copy of scalars
    new_baseline._recent = list(baseline._recent)
    clean_snrs = [s.snr_db for s, f in zip(samples, flags) if not f]
    new_baseline.update(clean_snrs, cfg.baseline_quantile)
    return out, new_baseline


@dataclass
class LabelerRunSummary:
    samples_seen: int
    labels_appended: int
    duplicates_rejected: int
    windows: int


def run_labeler(store: TelemetryStore, cfg: LabelerConfig | None = None,
                baseline: BaselineState | None = None) -> LabelerRunSummary:
    """Label the whole `kpi` stream in non-overlapping windows.

    The final partial window is labeled too (the stream is treated as
    flushed). Already-labeled seqs are rejected by the store and skipped.
    """
    cfg = cfg or LabelerConfig()
    cfg.validate()
    baseline = baseline or BaselineState()
    hi = store.max_seq("kpi")
    records = store.window("kpi", 0, hi) if hi is not None else []
    samples = [r.public() for r in records]  # truth stripped here

    appended = 0
    dupes = 0
    windows = 0
    for start in range(0, len(samples), cfg.window_size):
        chunk = samples[start:start + cfg.window_size]
        labels, baseline = label_window(chunk, baseline, cfg)
        windows += 1
        for lab in labels:
            try:
                store.append("labels", lab)
                appended += 1
            except DuplicateSeqError:
                dupes += 1
    return LabelerRunSummary(samples_seen=len(samples), labels_appended=appended,
                             duplicates_rejected=dupes, windows=windows)
