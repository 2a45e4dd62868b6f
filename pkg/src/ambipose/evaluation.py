"""Posterior-quality metrics: recall under joint thresholds, medians, coverage.

A query counts as a true positive when at least a fraction gamma of its
posterior samples lie within BOTH the translation threshold (meters,
Euclidean) and the rotation threshold (degrees, geodesic angle) of the
ground truth.  Boundaries are inclusive on both the thresholds and the
gamma fraction.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field

import numpy as np

from .geometry import (
    DegenerateMeanError,
    Pose,
    PoseSampleSet,
    geodesic_angle,
    point_prediction,
)
from .model import PoseRegressor, predict_posterior
from .scenes import DatasetSplit, OracleModeSet, oracle_modes

DEFAULT_THRESHOLDS = ((0.1, 10.0), (0.2, 15.0), (0.3, 20.0))

_QUERY_STREAM = 23


@dataclass(frozen=True)
class RecallThreshold:
    trans_max: float  # meters
    rot_max: float  # degrees
    gamma: float = 0.1

    def __post_init__(self):
        if self.trans_max <= 0 or self.rot_max <= 0 or not 0 < self.gamma <= 1:
            raise ValueError("thresholds must be positive and gamma in (0, 1]")

    def label(self) -> str:
        return f"{self.trans_max:g}m/{self.rot_max:g}deg"


def _within(samples: PoseSampleSet, truth: Pose, th: RecallThreshold):
    terr = np.linalg.norm(samples.translations - truth.t, axis=1)
    rerr = np.degrees(geodesic_angle(samples.rotations, truth.R))
    return (terr <= th.trans_max) & (rerr <= th.rot_max)


def is_true_positive(samples: PoseSampleSet, truth: Pose, th: RecallThreshold) -> bool:
    """True iff the in-threshold sample fraction reaches gamma (inclusive)."""
    frac = np.count_nonzero(_within(samples, truth, th)) / len(samples)
    return bool(frac >= th.gamma)


def query_seed(seed, index):
    """Per-query sampling stream; one base seed covers the whole test set."""
    return [int(seed), _QUERY_STREAM, int(index)]


def _sample_sets(testset: DatasetSplit, model_or_sets, M, seed):
    if isinstance(model_or_sets, PoseRegressor):
        return [
            predict_posterior(model_or_sets, testset.observations[i], M, query_seed(seed, i))
            for i in range(len(testset))
        ]
    sets = list(model_or_sets)
    if len(sets) != len(testset):
        raise ValueError("one sample set per test query required")
    return sets


def recall(testset: DatasetSplit, model_or_sets, th: RecallThreshold, M=1000, seed=0):
    """Fraction of test queries that are true positives at the threshold."""
    if len(testset) == 0:
        raise ValueError("test set is empty")
    sets = _sample_sets(testset, model_or_sets, M, seed)
    hits = sum(is_true_positive(s, testset.pose(i), th) for i, s in enumerate(sets))
    return hits / len(testset)


@dataclass(frozen=True)
class MedianErrors:
    translation_m: float
    rotation_deg: float
    n_skipped: int = 0  # queries with a degenerate rotation mean


def median_errors(testset: DatasetSplit, model_or_sets, M=1000, seed=0) -> MedianErrors:
    """Median point-prediction errors across queries (even count: central mean).

    Queries whose rotation mean is degenerate are skipped and counted.
    """
    if len(testset) == 0:
        raise ValueError("test set is empty")
    sets = _sample_sets(testset, model_or_sets, M, seed)
    terr, rerr, skipped = [], [], 0
    for i, s in enumerate(sets):
        try:
            pred = point_prediction(s)
        except DegenerateMeanError:
            skipped += 1
            continue
        truth = testset.pose(i)
        terr.append(np.linalg.norm(pred.t - truth.t))
        rerr.append(np.degrees(geodesic_angle(pred.R, truth.R)))
    if not terr:
        raise DegenerateMeanError("every query had a degenerate rotation mean")
    return MedianErrors(float(np.median(terr)), float(np.median(rerr)), skipped)


def mode_coverage(samples: PoseSampleSet, modes: OracleModeSet, th: RecallThreshold):
    """Per-mode fraction of samples within the thresholds of each oracle mode.

    A sample counts toward every mode it falls within; for well-separated
    modes the fractions therefore sum to at most 1.
    """
    return np.array(
        [np.count_nonzero(_within(samples, mode, th)) / len(samples) for mode in modes.poses]
    )


def benchmark_inference(m: PoseRegressor, obs, M=1000, repeats=100):
    """Wall-clock of predict_posterior: (mean ms, sample std ms).

    The first three calls warm caches and are discarded.
    """
    if repeats < 2:
        raise ValueError("need at least two timed repeats")
    for _ in range(3):
        predict_posterior(m, obs, M, seed=0)
    times = np.empty(repeats)
    for i in range(repeats):
        t0 = time.perf_counter()
        predict_posterior(m, obs, M, seed=i)
        times[i] = (time.perf_counter() - t0) * 1e3
    return float(np.mean(times)), float(np.std(times, ddof=1))


@dataclass
class EvalReport:
    scene: str
    gamma: float
    M: int
    seed: int
    recalls: dict  # threshold label -> recall
    medians: MedianErrors
    mode_coverage_mean: list = field(default_factory=list)
    timing_ms: tuple | None = None  # (mean, std); omitted unless benchmarked

    def to_json(self) -> str:
        payload = {
            "scene": self.scene,
            "gamma": self.gamma,
            "mc_samples": self.M,
            "seed": self.seed,
            "recalls": self.recalls,
            "median_translation_m": self.medians.translation_m,
            "median_rotation_deg": self.medians.rotation_deg,
            "skipped_queries": self.medians.n_skipped,
            "mode_coverage_mean": self.mode_coverage_mean,
        }
        if self.timing_ms is not None:
            payload["timing_ms"] = {"mean": self.timing_ms[0], "std": self.timing_ms[1]}
        return json.dumps(payload, sort_keys=True, indent=2) + "\n"

    def to_table(self) -> str:
        rows = [("Scene", "Threshold", "Recall")]
        for label, value in self.recalls.items():
            rows.append((self.scene, label, f"{value:.2f}"))
        widths = [max(len(r[i]) for r in rows) for i in range(3)]
        lines = ["  ".join(cell.ljust(w) for cell, w in zip(row, widths)) for row in rows]
        lines.append("")
        lines.append(
            f"median error: {self.medians.translation_m:.3f} m / "
            f"{self.medians.rotation_deg:.2f} deg"
            + (f"  (skipped {self.medians.n_skipped})" if self.medians.n_skipped else "")
        )
        if self.mode_coverage_mean:
            cov = ", ".join(f"{c:.2f}" for c in self.mode_coverage_mean)
            lines.append(f"mean mode coverage: [{cov}]")
        if self.timing_ms is not None:
            lines.append(f"inference: {self.timing_ms[0]:.2f} +- {self.timing_ms[1]:.2f} ms")
        return "\n".join(lines) + "\n"


def evaluate(
    dataset, m: PoseRegressor, thresholds=DEFAULT_THRESHOLDS, gamma=0.1,
    M=1000, seed=0, benchmark=False,
) -> EvalReport:
    """Full metric pass over a dataset's test split.

    Timing is only measured when benchmark=True, keeping the default report
    reproducible byte-for-byte.
    """
    testset = dataset.test
    sets = _sample_sets(testset, m, M, seed)
    recalls = {}
    for trans_max, rot_max in thresholds:
        th = RecallThreshold(trans_max, rot_max, gamma)
        recalls[th.label()] = recall(testset, sets, th)
    medians = median_errors(testset, sets)

    k = dataset.spec.symmetry_order
    cov_th = RecallThreshold(thresholds[0][0], thresholds[0][1], gamma)
    cov = np.zeros(k)
    for i, s in enumerate(sets):
        cov += mode_coverage(s, oracle_modes(dataset.spec, testset.pose(i)), cov_th)
    cov /= len(testset)

    timing = None
    if benchmark:
        timing = benchmark_inference(m, testset.observations[0], M)
    return EvalReport(
        scene=dataset.spec.name,
        gamma=gamma,
        M=M,
        seed=seed,
        recalls=recalls,
        medians=medians,
        mode_coverage_mean=[float(c) for c in cov],
        timing_ms=timing,
    )
