"""Desk-scale diagnostics: gradient-alignment curves, timestep-draw
statistics, and scorer-noise robustness sweeps.

The gradient probe measures, per timestep, the L2 distance between the
loss gradient computed from an original sample and from a degraded copy
of it, under common random numbers. Motion-destroying degradations
separate at low timesteps, appearance-destroying ones at high timesteps;
that asymmetry is what motivates steering each sample's timestep law by
its relative quality.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import stats
from scipy.special import betainc

from .errors import DataError, NumericError
from .quality import (
    QualityRecord,
    inject_score_noise,
    normalize_scores,
    partition_quadrants,
    pearson_correlation,
)
from .sampler import SamplerConfig, TqdSampler, bin_masses, compute_mu, make_law
from .synth import DegradationSpec, ToyVideo, degrade
from .trainer import TrainerConfig, VelocityModel, final_loss, grad_at_timestep, train


def thread_count() -> int:
    """Worker cap from the TQD_THREADS env var; 0 or unset means auto."""
    raw = os.environ.get("TQD_THREADS", "0")
    try:
        n = int(raw)
    except ValueError:
        raise DataError(f"TQD_THREADS must be an integer, got {raw!r}")
    if n < 0:
        raise DataError(f"TQD_THREADS must be >= 0, got {n}")
    if n == 0:
        return min(8, os.cpu_count() or 1)
    return n


def _derived_seed(*parts: int) -> int:
    """Stable scalar seed from a tuple of indices (for CRN streams)."""
    return int(np.random.SeedSequence(list(parts)).generate_state(1)[0])


@dataclass(frozen=True)
class GradientProbeCurve:
    """Mean gradient distance per timestep for one degradation setting."""

    kind: str
    strength: float
    points: list  # of (t, mean L2 distance)
    n_samples: int

    def __post_init__(self):
        ts = [t for t, _ in self.points]
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise DataError("probe timesteps must be strictly increasing")
        if any(d < 0 for _, d in self.points):
            raise DataError("gradient distances cannot be negative")

    def distance_at(self, t: float) -> float:
        for tt, d in self.points:
            if tt == t:
                return d
        raise DataError(f"no probe point at t={t}")


def gradient_probe(
    model: VelocityModel,
    samples: list[ToyVideo],
    degradations: list[DegradationSpec],
    t_grid=None,
    n_noise: int = 16,
    noise_seed: int = 0,
) -> list[GradientProbeCurve]:
    """Gradient-distance curves, one per degradation.

    For sample i at grid point t_j, the probe computes the full-parameter
    loss gradient for the original video and for each degraded copy, all
    under one noise stream derived from (noise_seed, i, j): common random
    numbers, so the distance reflects the degradation rather than noise
    resampling. Per-sample degradation randomness is derived from the
    spec seed and the sample index, so two samples never share a noise
    field or shuffle order.

    Work is spread over (sample, t) pairs across TQD_THREADS workers;
    results are reduced in fixed order so the output is deterministic.
    """
    if not samples:
        raise DataError("gradient probe needs at least one sample")
    if t_grid is None:
        t_grid = [round(0.1 * k, 1) for k in range(1, 10)]
    t_grid = [float(t) for t in t_grid]
    if any(not 0.0 < t < 1.0 for t in t_grid):
        raise DataError("t_grid values must lie in the open interval (0, 1)")
    if any(b <= a for a, b in zip(t_grid, t_grid[1:])):
        raise DataError("t_grid must be strictly increasing")

    degraded = [
        [degrade(video, DegradationSpec(spec.kind, spec.strength,
                                        seed=_derived_seed(spec.seed, i)))
         for spec in degradations]
        for i, video in enumerate(samples)
    ]

    def distances_for(task):
        i, j = task
        seed_ij = _derived_seed(noise_seed, i, j)
        g_orig = grad_at_timestep(model, samples[i], t_grid[j], seed_ij, n_noise)
        out = np.empty(len(degradations))
        for k in range(len(degradations)):
            g_deg = grad_at_timestep(model, degraded[i][k], t_grid[j], seed_ij, n_noise)
            out[k] = np.linalg.norm(g_orig - g_deg)
        return out

    tasks = [(i, j) for i in range(len(samples)) for j in range(len(t_grid))]
    workers = thread_count()
    if workers > 1 and len(tasks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(distances_for, tasks))
    else:
        results = [distances_for(task) for task in tasks]

    # fixed-order reduction: results arrive indexed by task order
    sums = np.zeros((len(degradations), len(t_grid)))
    for (i, j), dist in zip(tasks, results):
        sums[:, j] += dist
    means = sums / len(samples)
    return [
        GradientProbeCurve(
            kind=spec.kind,
            strength=spec.strength,
            points=[(t_grid[j], float(means[k, j])) for j in range(len(t_grid))],
            n_samples=len(samples),
        )
        for k, spec in enumerate(degradations)
    ]


# --- timestep statistics ------------------------------------------------------

@dataclass(frozen=True)
class HistogramReport:
    """Observed vs expected timestep counts over a fixed partition of (0,1).

    Expected counts come from the retention-weighted mixture of the
    records' timestep laws. The chi-square statistic pools adjacent bins
    until each group's expected count reaches 5 (the usual validity
    floor); dof = pooled groups - 1.
    """

    bins: list  # of (lo, hi, observed, expected)
    chi_square: float
    chi_square_pvalue: float
    dof: int
    ks_stat: float
    n_draws: int

    def __post_init__(self):
        total = sum(obs for _, _, obs, _ in self.bins)
        if total != self.n_draws:
            raise DataError(f"histogram counts sum to {total}, expected {self.n_draws}")


def timestep_histogram(
    dataset: list[QualityRecord],
    sampler_config: SamplerConfig,
    n_draws: int,
    n_bins: int = 50,
) -> HistogramReport:
    """Draw timesteps through the full batch-preparation path and compare
    against the analytic mixture law.

    The mixture weights each record's timestep law by its retention
    probability (renormalized over the dataset), which is exactly the
    long-run record frequency the rejection loop produces.
    """
    if n_draws < 1000:
        raise DataError(f"need at least 1000 draws for stable statistics, got {n_draws}")
    if n_bins < 2:
        raise DataError(f"need at least 2 bins, got {n_bins}")
    sampler = TqdSampler(dataset, sampler_config)
    rng = np.random.default_rng(sampler_config.seed)
    draws = []
    batch_size = sampler_config.batch_size
    while len(draws) < n_draws:
        batch = sampler.prepare_batch(batch_size, rng)
        draws.extend(batch.timesteps.tolist())
    t = np.array(draws[:n_draws])

    edges = np.linspace(0.0, 1.0, n_bins + 1)
    observed = np.histogram(t, bins=edges)[0]

    weights = sampler.retention / sampler.retention.sum()
    masses = np.zeros(n_bins)
    cdf_parts = []
    for rec, w in zip(dataset, weights):
        law = make_law(rec, sampler_config)
        masses += w * bin_masses(law, edges)
        cdf_parts.append((w, law))
    # per-record Beta mass over (0,1) integrates to 1, so no renormalization
    expected = n_draws * masses
    return _finish_histogram(t, edges, observed, expected, cdf_parts, n_draws)


def _finish_histogram(t, edges, observed, expected, cdf_parts, n_draws) -> HistogramReport:
    # pooled chi-square: group adjacent bins until expected >= 5
    groups = []
    acc_o, acc_e = 0.0, 0.0
    for o, e in zip(observed, expected):
        acc_o += o
        acc_e += e
        if acc_e >= 5.0:
            groups.append((acc_o, acc_e))
            acc_o, acc_e = 0.0, 0.0
    if acc_e > 0 and groups:
        last_o, last_e = groups[-1]
        groups[-1] = (last_o + acc_o, last_e + acc_e)
    elif acc_e > 0:
        groups.append((acc_o, acc_e))
    chi_square = float(sum((o - e) ** 2 / e for o, e in groups))
    dof = max(1, len(groups) - 1)
    pvalue = float(stats.chi2.sf(chi_square, dof))

    # One-sample KS statistic against the mixture law. Draws are clipped
    # into the open unit interval at float eps, and strongly one-sided
    # laws (min_shape-clamped Beta) carry real mass beyond that
    # resolution, so the reference must be the censored law with atoms at
    # the clip boundaries; comparing against the raw continuous CDF would
    # report a spurious gap of up to eps^min_shape per component.
    eps = float(np.finfo(np.float64).eps)
    vals, counts = np.unique(np.sort(t), return_counts=True)
    cum = np.cumsum(counts)
    n = len(t)
    cdf = np.zeros_like(vals)
    for w, law in cdf_parts:
        cdf += w * betainc(law.alpha, law.beta, np.clip(vals, 0.0, 1.0))
    post_jump = cdf.copy()
    post_jump[vals >= 1.0 - eps] = 1.0  # top atom absorbs the censored tail
    left_limit = cdf.copy()
    left_limit[vals <= eps] = 0.0  # no censored mass below the bottom atom
    d_post = np.abs(cum / n - post_jump)
    d_pre = np.abs((cum - counts) / n - left_limit)
    ks_stat = float(max(d_post.max(), d_pre.max()))

    bins = [
        (float(edges[i]), float(edges[i + 1]), int(observed[i]), float(expected[i]))
        for i in range(len(observed))
    ]
    return HistogramReport(bins=bins, chi_square=chi_square, chi_square_pvalue=pvalue,
                           dof=dof, ks_stat=ks_stat, n_draws=n_draws)


# --- robustness ---------------------------------------------------------------

@dataclass(frozen=True)
class SweepRow:
    noise_level: float
    final_loss: float
    mean_mu_shift: float


def robustness_sweep(
    dataset,
    noise_levels: list[float],
    sampler_config: SamplerConfig,
    trainer_config: TrainerConfig,
    noise_seed: int = 0,
) -> list[SweepRow]:
    """Score-noise robustness: retrain at each noise level, same seeds.

    dataset pairs QualityRecords (raw scores; normalization is redone
    here) with their videos. Every level perturbs the same underlying
    noise draw scaled up (common random numbers), so the mean |delta mu|
    must be non-decreasing in the level; a violation raises NumericError
    rather than returning a silently inconsistent table. Level 0 is the
    clean run itself, bit-identical to training on the input records.
    """
    if any(lv < 0 for lv in noise_levels):
        raise DataError("noise levels must be >= 0")
    records = [rec for rec, _ in dataset]
    videos = [vid for _, vid in dataset]
    clean_records, _ = normalize_scores(records)
    clean_mu = np.array([compute_mu(r.mq_norm, r.vq_norm) for r in clean_records])

    rows = []
    for level in noise_levels:
        noisy = inject_score_noise(records, level, noise_seed)
        noisy_records, _ = normalize_scores(noisy)
        mu = np.array([compute_mu(r.mq_norm, r.vq_norm) for r in noisy_records])
        shift = float(np.mean(np.abs(mu - clean_mu)))
        state = train(list(zip(noisy_records, videos)), sampler_config, trainer_config)
        rows.append(SweepRow(noise_level=float(level), final_loss=final_loss(state),
                             mean_mu_shift=shift))

    by_level = sorted(rows, key=lambda r: r.noise_level)
    for a, b in zip(by_level, by_level[1:]):
        if b.mean_mu_shift < a.mean_mu_shift - 1e-12:
            raise NumericError(
                f"mu shift decreased between noise levels {a.noise_level} and "
                f"{b.noise_level} ({a.mean_mu_shift} -> {b.mean_mu_shift})")
    return rows


# --- quadrant reporting -------------------------------------------------------

@dataclass(frozen=True)
class QuadrantReport:
    """Machine- and human-readable summary of the quality landscape."""

    data: dict
    text: str


def quadrant_report(
    records: list[QualityRecord],
    mq_threshold: float | None = None,
    vq_threshold: float | None = None,
) -> QuadrantReport:
    """Quadrant fractions plus score correlation, as JSON dict and table.

    Thresholds default to the per-metric medians of the raw scores.
    """
    if not records:
        raise DataError("no records to report on (empty after filtering?)")
    mq = np.array([r.mq_raw for r in records])
    vq = np.array([r.vq_raw for r in records])
    if mq_threshold is None:
        mq_threshold = float(np.median(mq))
    if vq_threshold is None:
        vq_threshold = float(np.median(vq))
    part = partition_quadrants(records, mq_threshold, vq_threshold)
    corr = pearson_correlation(records)
    data = {
        "n": len(records),
        "mq_threshold": mq_threshold,
        "vq_threshold": vq_threshold,
        "counts": dict(part.counts),
        "fractions": dict(part.fractions),
        "pearson_r": corr.pearson_r,
        "p_value": corr.p_value,
    }
    lines = [
        f"records: {len(records)}",
        f"pearson r(mq, vq): {corr.pearson_r:+.4f}  (p = {corr.p_value:.3g})",
        f"thresholds: mq > {mq_threshold:.4g}, vq > {vq_threshold:.4g}",
        "quadrant   count  fraction",
    ]
    for key in ("HMHV", "HMLV", "LMHV", "LMLV"):
        lines.append(f"{key:<9} {part.counts[key]:>6}  {part.fractions[key]:.4f}")
    return QuadrantReport(data=data, text="\n".join(lines) + "\n")


# --- report serialization -----------------------------------------------------

def probe_curves_csv(curves: list[GradientProbeCurve]) -> str:
    lines = ["degradation,strength,t,mean_distance,n_samples"]
    for curve in curves:
        for t, d in curve.points:
            lines.append(f"{curve.kind},{float(curve.strength)!r},{float(t)!r},"
                         f"{float(d)!r},{curve.n_samples}")
    return "\n".join(lines) + "\n"


def histogram_csv(report: HistogramReport) -> str:
    lines = ["lo,hi,observed,expected"]
    for lo, hi, obs, exp in report.bins:
        lines.append(f"{float(lo)!r},{float(hi)!r},{obs},{float(exp)!r}")
    return "\n".join(lines) + "\n"


def histogram_stats_json(report: HistogramReport) -> str:
    payload = {
        "n_draws": report.n_draws,
        "chi_square": report.chi_square,
        "dof": report.dof,
        "chi_square_pvalue": report.chi_square_pvalue,
        "ks_stat": report.ks_stat,
    }
    return json.dumps(payload, sort_keys=True) + "\n"


def sweep_csv(rows: list[SweepRow]) -> str:
    lines = ["noise_level,final_loss,mean_mu_shift"]
    for row in rows:
        lines.append(f"{row.noise_level!r},{row.final_loss!r},{row.mean_mu_shift!r}")
    return "\n".join(lines) + "\n"
