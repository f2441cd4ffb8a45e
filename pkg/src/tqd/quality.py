"""Quality scores: normalization, population statistics, and scorer-noise injection.

Every training sample carries two raw scorer outputs, a motion-quality (MQ)
and a visual-quality (VQ) score. This module turns raw score populations
into the normalized [0, 1] values the sampler consumes, partitions
populations into the four high/low quadrants, measures the MQ/VQ
correlation, and synthesizes score populations with a prescribed
correlation so the whole pipeline runs without any external scorer.

All functions are pure: records are frozen dataclasses and every operation
returns new ones.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy import stats

from .errors import DataError

QUADRANTS = ("HMHV", "HMLV", "LMHV", "LMLV")


@dataclass(frozen=True)
class QualityRecord:
    """One sample's scores plus an opaque reference to its payload.

    mq_norm/vq_norm stay None until `normalize_scores` (or
    `NormalizationConstants.apply`) has run.
    """

    id: str
    mq_raw: float
    vq_raw: float
    mq_norm: float | None = None
    vq_norm: float | None = None
    payload_ref: str | None = None

    @property
    def is_normalized(self) -> bool:
        return self.mq_norm is not None and self.vq_norm is not None


@dataclass(frozen=True)
class NormalizationConstants:
    """Min/max constants frozen at normalization time.

    Persisting these next to the manifest lets held-out or streaming
    records be normalized identically to the training population.
    """

    mq_min: float
    mq_max: float
    vq_min: float
    vq_max: float

    def apply(self, records: list[QualityRecord]) -> list[QualityRecord]:
        """Normalize records with these stored constants.

        Held-out scores outside the stored range are clipped to [0, 1] so
        downstream mu/kappa formulas stay in-domain. A degenerate range
        (min == max) maps every score to 0.5.
        """
        out = []
        for rec in records:
            out.append(replace(
                rec,
                mq_norm=_minmax(rec.mq_raw, self.mq_min, self.mq_max),
                vq_norm=_minmax(rec.vq_raw, self.vq_min, self.vq_max),
            ))
        return out

    def to_json(self) -> str:
        return json.dumps({
            "mq_min": self.mq_min, "mq_max": self.mq_max,
            "vq_min": self.vq_min, "vq_max": self.vq_max,
        }, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "NormalizationConstants":
        d = json.loads(text)
        return cls(d["mq_min"], d["mq_max"], d["vq_min"], d["vq_max"])


@dataclass(frozen=True)
class QuadrantPartition:
    """Counts and fractions of records per quality quadrant."""

    mq_threshold: float
    vq_threshold: float
    counts: dict[str, int]
    fractions: dict[str, float]

    @property
    def total(self) -> int:
        return sum(self.counts.values())


@dataclass(frozen=True)
class PopulationStats:
    """Sample Pearson correlation between MQ and VQ with its p-value."""

    pearson_r: float
    p_value: float
    n: int


def _minmax(x: float, lo: float, hi: float) -> float:
    # Degenerate range: keep the neutral midpoint so mu stays at 0.5.
    if hi == lo:
        return 0.5
    return min(1.0, max(0.0, (x - lo) / (hi - lo)))


def normalize_scores(
    records: list[QualityRecord],
) -> tuple[list[QualityRecord], NormalizationConstants]:
    """Min-max normalize raw MQ/VQ over the whole input population.

    Returns the normalized records together with the constants used, so
    the same normalization can be applied to held-out data later. When
    all raw values of a metric are equal, every normalized value is 0.5.

    Raises DataError on empty input or any non-finite raw score.
    """
    if not records:
        raise DataError("empty dataset")
    for rec in records:
        if not (math.isfinite(rec.mq_raw) and math.isfinite(rec.vq_raw)):
            raise DataError(f"non-finite score on record {rec.id!r}")
    mq = [r.mq_raw for r in records]
    vq = [r.vq_raw for r in records]
    consts = NormalizationConstants(min(mq), max(mq), min(vq), max(vq))
    return consts.apply(records), consts


def partition_quadrants(
    records: list[QualityRecord],
    mq_threshold: float,
    vq_threshold: float,
) -> QuadrantPartition:
    """Assign every record to exactly one of the four quality quadrants.

    Thresholds are in raw-score units. A score strictly greater than its
    threshold counts as "high"; an exact tie goes to "low".
    """
    if not records:
        raise DataError("empty dataset")
    counts = dict.fromkeys(QUADRANTS, 0)
    for rec in records:
        hm = rec.mq_raw > mq_threshold
        hv = rec.vq_raw > vq_threshold
        key = ("H" if hm else "L") + "M" + ("H" if hv else "L") + "V"
        counts[key] += 1
    n = len(records)
    fractions = {k: counts[k] / n for k in QUADRANTS}
    return QuadrantPartition(mq_threshold, vq_threshold, counts, fractions)


def pearson_correlation(records: list[QualityRecord]) -> PopulationStats:
    """Sample Pearson r between raw MQ and VQ, with a two-sided p-value.

    The p-value is the standard two-sided test from the t distribution
    with n-2 degrees of freedom. Requires n >= 3 and nonzero variance in
    both score sequences.
    """
    n = len(records)
    if n < 3:
        raise DataError(f"need at least 3 records to correlate, got {n}")
    mq = np.array([r.mq_raw for r in records])
    vq = np.array([r.vq_raw for r in records])
    if np.ptp(mq) == 0.0 or np.ptp(vq) == 0.0:
        raise DataError("constant score sequence")
    r, p = stats.pearsonr(mq, vq)
    return PopulationStats(float(r), float(p), n)


def synth_population(
    n: int,
    target_r: float,
    seed: int,
    mq_range: tuple[float, float] = (1.0, 4.0),
    vq_range: tuple[float, float] = (1.4, 4.0),
) -> list[QualityRecord]:
    """Draw n (mq, vq) raw-score pairs with a prescribed correlation.

    Pairs come from a bivariate standard normal with correlation
    `target_r`, then each coordinate is affinely mapped into its raw
    range (center at the midpoint, scale = range/6, so the range spans
    about +-3 sigma). Affine maps leave the correlation untouched, so the
    sample correlation converges to target_r as n grows.
    """
    if not abs(target_r) < 1.0:
        raise DataError(f"target correlation must satisfy |r| < 1, got {target_r}")
    if n < 1:
        raise DataError(f"population size must be positive, got {n}")
    rng = np.random.default_rng(seed)
    z1 = rng.standard_normal(n)
    z2 = target_r * z1 + math.sqrt(1.0 - target_r**2) * rng.standard_normal(n)
    mq = 0.5 * (mq_range[0] + mq_range[1]) + z1 * (mq_range[1] - mq_range[0]) / 6.0
    vq = 0.5 * (vq_range[0] + vq_range[1]) + z2 * (vq_range[1] - vq_range[0]) / 6.0
    return [
        QualityRecord(id=f"synth-{i:06d}", mq_raw=float(mq[i]), vq_raw=float(vq[i]))
        for i in range(n)
    ]


def inject_score_noise(
    records: list[QualityRecord],
    noise_level: float,
    seed: int,
) -> list[QualityRecord]:
    """Perturb raw scores with zero-mean Gaussian noise.

    The per-metric noise std is `noise_level` times that metric's raw
    range over the input records ("10% noise" = std of 0.1 x range).
    noise_level 0 returns the records unchanged, all fields identical.
    Positive levels clear mq_norm/vq_norm: re-normalization over the
    noisy population is the caller's responsibility.
    """
    if noise_level < 0:
        raise DataError(f"noise level must be >= 0, got {noise_level}")
    if noise_level == 0:
        return list(records)
    if not records:
        raise DataError("empty dataset")
    mq = np.array([r.mq_raw for r in records])
    vq = np.array([r.vq_raw for r in records])
    rng = np.random.default_rng(seed)
    mq_noisy = mq + rng.standard_normal(len(records)) * noise_level * np.ptp(mq)
    vq_noisy = vq + rng.standard_normal(len(records)) * noise_level * np.ptp(vq)
    return [
        replace(rec, mq_raw=float(mq_noisy[i]), vq_raw=float(vq_noisy[i]),
                mq_norm=None, vq_norm=None)
        for i, rec in enumerate(records)
    ]


# --- manifest I/O -----------------------------------------------------------

def read_manifest(path: str | Path) -> list[QualityRecord]:
    """Read a JSON-lines score manifest.

    One object per line with keys `id` (string), `mq` (number), `vq`
    (number) and optional `payload` (string).

    Raises DataError naming the line number on malformed lines and the
    record id on non-finite scores.
    """
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                rec = QualityRecord(
                    id=str(obj["id"]),
                    mq_raw=float(obj["mq"]),
                    vq_raw=float(obj["vq"]),
                    payload_ref=obj.get("payload"),
                )
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise DataError(f"malformed manifest line {lineno}: {exc}") from exc
            if not (math.isfinite(rec.mq_raw) and math.isfinite(rec.vq_raw)):
                raise DataError(f"non-finite score on record {rec.id!r} (line {lineno})")
            records.append(rec)
    if not records:
        raise DataError(f"empty manifest: {path}")
    return records


def write_manifest(records: list[QualityRecord], path: str | Path) -> None:
    """Write records as JSON lines. Floats round-trip bit-exactly."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            obj: dict = {"id": rec.id, "mq": rec.mq_raw, "vq": rec.vq_raw}
            if rec.payload_ref is not None:
                obj["payload"] = rec.payload_ref
            fh.write(json.dumps(obj) + "\n")


def sidecar_path(manifest_path: str | Path) -> Path:
    """Conventional location of the normalization sidecar: next to the manifest."""
    p = Path(manifest_path)
    return p.with_name(p.name + ".norm.json")


def write_sidecar(consts: NormalizationConstants, manifest_path: str | Path) -> Path:
    out = sidecar_path(manifest_path)
    out.write_text(consts.to_json() + "\n", encoding="utf-8")
    return out


def read_sidecar(manifest_path: str | Path) -> NormalizationConstants:
    return NormalizationConstants.from_json(
        sidecar_path(manifest_path).read_text(encoding="utf-8"))
