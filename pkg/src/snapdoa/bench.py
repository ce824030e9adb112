"""Monte Carlo benchmarking: permutation-free MSE, SNR sweeps, generalization.

Per-trial seeds derive from (master_seed, snr index, k index, trial), never
from scheduling, so parallel and serial runs emit identical CSV bytes and
every method sees the same trial data.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from . import sigsim, snap_tf
from .covariance import coarray_augment, sample_scm
from .errors import ConfigError
from .geometry import ArrayGeometry
from .sigsim import SnapshotBatch, derive_seed
from .subspace import DoaEstimate, root_music

CSV_HEADER = "method,snr_db,k,t,mse_rad2,trials,ci95"

Estimator = Callable[[SnapshotBatch, int], DoaEstimate]


@dataclass(frozen=True)
class SweepSpec:
    geometry: ArrayGeometry
    snr_grid: tuple[float, ...]
    k_list: tuple[int, ...]
    t: int
    trials: int = 200
    methods: tuple[str, ...] = ("coarray_rootmusic",)
    modulation: str = "gaussian"
    coherence_groups: tuple = ()
    coherence_alphas: tuple = ()
    master_seed: int = 0
    theta_min: float = sigsim.THETA_MIN
    theta_max: float = sigsim.THETA_MAX
    delta_min: float = sigsim.DELTA_MIN

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if not self.snr_grid or not self.k_list:
            raise ValueError("snr_grid and k_list must be nonempty")


@dataclass
class CurvePoint:
    method: str
    snr_db: float
    k: int
    t: int
    mse_rad2: float
    trials: int
    ci95_halfwidth: float


def mse_metric(est, truth) -> float:
    """Permutation-minimized mean squared angle error (rad^2).

    The minimum over pairings is attained by sorting both sets and pairing
    in order, so no factorial search is needed.
    """
    est = np.asarray(getattr(est, "thetas", est), dtype=float)
    truth = np.asarray(truth, dtype=float)
    if est.shape != truth.shape:
        raise ValueError(f"length mismatch: {est.shape} vs {truth.shape}")
    return float(np.mean((np.sort(est) - np.sort(truth)) ** 2))


def coarray_rootmusic_estimator(geom: ArrayGeometry) -> Estimator:
    """Classical baseline: sample SCM -> co-array augmentation -> Root-MUSIC."""
    def estimate(batch: SnapshotBatch, k: int) -> DoaEstimate:
        aug = coarray_augment(sample_scm(batch.y), geom)
        est = root_music(aug, k)
        return DoaEstimate(thetas=est.thetas, method="coarray_rootmusic")
    return estimate


def snap_tf_estimator(model: snap_tf.SnapTfModel) -> Estimator:
    def estimate(batch: SnapshotBatch, k: int) -> DoaEstimate:
        return snap_tf.forward(model, batch.y, k)
    return estimate


def oracle_estimator() -> Estimator:
    """Returns the ground truth; for harness checks only."""
    def estimate(batch: SnapshotBatch, k: int) -> DoaEstimate:
        return DoaEstimate(thetas=np.asarray(batch.truth.thetas), method="oracle")
    return estimate


def make_estimators(methods: Sequence[str], geom: ArrayGeometry,
                    model: snap_tf.SnapTfModel | None = None) -> dict[str, Estimator]:
    out: dict[str, Estimator] = {}
    for tag in methods:
        if tag == "coarray_rootmusic":
            out[tag] = coarray_rootmusic_estimator(geom)
        elif tag == "snap_tf":
            if model is None:
                raise ConfigError("method snap_tf needs a trained checkpoint")
            out[tag] = snap_tf_estimator(model)
        elif tag == "oracle":
            out[tag] = oracle_estimator()
        else:
            raise ConfigError(f"unknown estimator method {tag!r}")
    return out


def _cell_mse(spec: SweepSpec, estimator: Estimator, snr_idx: int, k_idx: int,
              threads: int = 1) -> tuple[float, float]:
    snr = spec.snr_grid[snr_idx]
    k = spec.k_list[k_idx]

    def one_trial(trial: int) -> float:
        seed = derive_seed(spec.master_seed, snr_idx, k_idx, trial)
        batch = sigsim.random_record(
            spec.geometry, k, spec.t, spec.modulation, snr, seed,
            spec.theta_min, spec.theta_max, spec.delta_min,
            spec.coherence_groups if _fits(spec.coherence_groups, k) else (),
            spec.coherence_alphas if _fits(spec.coherence_groups, k) else ())
        est = estimator(batch, k)
        return mse_metric(est.thetas, batch.truth.thetas)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            errs = np.fromiter(pool.map(one_trial, range(spec.trials)), dtype=float,
                               count=spec.trials)
    else:
        errs = np.fromiter((one_trial(i) for i in range(spec.trials)), dtype=float,
                           count=spec.trials)
    mean = float(errs.mean())
    ci = 0.0 if spec.trials < 2 else float(1.96 * errs.std(ddof=1) / np.sqrt(spec.trials))
    return mean, ci


def _fits(groups, k):
    return bool(groups) and all(i <= k for g in groups for i in g)


def run_sweep(spec: SweepSpec, estimators: dict[str, Estimator],
              threads: int = 1) -> list[CurvePoint]:
    """Mean permutation-free MSE per (method, snr, k) cell."""
    points = []
    for method in spec.methods:
        if method not in estimators:
            raise ConfigError(f"no estimator supplied for method {method!r}")
        for snr_idx in range(len(spec.snr_grid)):
            for k_idx in range(len(spec.k_list)):
                mean, ci = _cell_mse(spec, estimators[method], snr_idx, k_idx, threads)
                points.append(CurvePoint(
                    method=method, snr_db=spec.snr_grid[snr_idx],
                    k=spec.k_list[k_idx], t=spec.t, mse_rad2=mean,
                    trials=spec.trials, ci95_halfwidth=ci))
    return points


def run_generalization(model: snap_tf.SnapTfModel, axis: str, spec: SweepSpec,
                       t_grid: Sequence[int] = (10, 20, 30, 40, 50, 60, 70, 80, 90, 100),
                       modulations: Sequence[str] = ("qam16", "qpsk", "mixed"),
                       threads: int = 1) -> list[CurvePoint]:
    """Evaluate a trained model off its training distribution, no retraining.

    axis="snapshots" sweeps the snapshot count; axis="modulation" swaps the
    test-set constellation (tagged ``snap_tf[<modulation>]``).
    """
    estimator = {"snap_tf": snap_tf_estimator(model)}
    points: list[CurvePoint] = []
    if axis == "snapshots":
        for t in t_grid:
            sub = replace(spec, t=int(t), methods=("snap_tf",))
            points.extend(run_sweep(sub, estimator, threads))
    elif axis == "modulation":
        for mod in modulations:
            sub = replace(spec, modulation=mod, methods=("snap_tf",))
            for p in run_sweep(sub, estimator, threads):
                p.method = f"snap_tf[{mod}]"
                points.append(p)
    else:
        raise ConfigError(f"unknown generalization axis {axis!r}")
    return points


def curves_to_csv(points: Sequence[CurvePoint]) -> str:
    lines = [CSV_HEADER]
    for p in points:
        lines.append(f"{p.method},{p.snr_db:.10g},{p.k},{p.t},"
                     f"{p.mse_rad2:.10g},{p.trials},{p.ci95_halfwidth:.10g}")
    return "\n".join(lines) + "\n"
