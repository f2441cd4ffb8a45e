"""Synthetic toy videos and quality degradations.

A ToyVideo is a small F x H x W grid sequence in [0, 1]: a bright square
translating over a dark background, with optional additive texture noise.
Motion speed stands in for motion quality, texture cleanliness for visual
quality, so the full training pipeline runs without any real video data.

Four degradation operators mirror the probe's quality axes: blur,
quantization ("compression"), and additive noise corrupt per-frame visual
detail without touching motion; frame shuffling destroys motion while
leaving every frame's pixels intact.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import DataError

VIDEO_MAGIC = b"TVID"
DEGRADATION_KINDS = ("blur", "compression", "noise", "shuffle")


@dataclass
class ToyVideo:
    """F x H x W float array in [0, 1] plus generator metadata."""

    frames: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.frames.shape

    def flat(self) -> np.ndarray:
        return self.frames.reshape(-1)


@dataclass(frozen=True)
class DegradationSpec:
    """One degradation: kind, strength, and the seed for its randomness.

    strength means: blur -> box kernel radius; compression -> number of
    quantization levels (>= 2); noise -> Gaussian std; shuffle -> fraction
    of frames permuted (in [0, 1]). Zero strength (or zero fraction) is
    the identity for every kind.
    """

    kind: str
    strength: float
    seed: int = 0

    def __post_init__(self):
        if self.kind not in DEGRADATION_KINDS:
            raise DataError(f"unknown degradation kind {self.kind!r}")


def generate_moving_shape(
    motion_speed: float,
    texture_noise: float,
    seed: int,
    frames: int = 8,
    height: int = 16,
    width: int = 16,
    shape_size: int = 3,
    start_x: float = 0.0,
    fg: float = 0.9,
    bg: float = 0.1,
) -> ToyVideo:
    """Render a bright square moving horizontally at motion_speed px/frame.

    The square wraps around the right edge when its trajectory leaves the
    frame (negative speeds move left and wrap the other way). Texture
    noise is additive Gaussian of the given std, clamped to [0, 1]. meta
    records the generator parameters plus quality analogs: mq_analog
    grows with |motion_speed|, vq_analog shrinks as texture_noise grows.
    """
    if not np.isfinite(motion_speed):
        raise DataError(f"motion_speed must be finite, got {motion_speed}")
    if not (np.isfinite(texture_noise) and texture_noise >= 0):
        raise DataError(f"texture_noise must be finite and >= 0, got {texture_noise}")
    rng = np.random.default_rng(seed)
    # integer row placement: noise-free videos take only the two nominal
    # levels when start_x and motion_speed are integral
    y0 = float((height - shape_size) // 2)
    cov_y = _interval_coverage(y0, shape_size, height, wrap=False)
    video = np.empty((frames, height, width), dtype=np.float64)
    for f in range(frames):
        x = start_x + f * motion_speed
        cov_x = _interval_coverage(x, shape_size, width, wrap=True)
        video[f] = bg + (fg - bg) * np.outer(cov_y, cov_x)
    if texture_noise > 0:
        video += rng.normal(0.0, texture_noise, size=video.shape)
    np.clip(video, 0.0, 1.0, out=video)
    meta = {
        "motion_speed": motion_speed,
        "texture_noise": texture_noise,
        "seed": seed,
        "shape_size": shape_size,
        "start_x": start_x,
        "mq_analog": abs(motion_speed),
        "vq_analog": 1.0 / (1.0 + texture_noise),
    }
    return ToyVideo(frames=video, meta=meta)


def _interval_coverage(start: float, length: float, n: int, wrap: bool) -> np.ndarray:
    """Fraction of each unit cell [j, j+1) covered by [start, start+length).

    With wrap=True the interval lives on a circle of circumference n
    (coverage of the wrapped-around tail is added back at the left edge).
    """
    if wrap:
        start = start % n
    cells = np.arange(n, dtype=np.float64)
    cov = np.clip(np.minimum(cells + 1.0, start + length) - np.maximum(cells, start), 0.0, 1.0)
    if wrap and start + length > n:
        over = start + length - n
        cov += np.clip(np.minimum(cells + 1.0, over) - cells, 0.0, 1.0)
    return cov


def degrade(video: ToyVideo, spec: DegradationSpec) -> ToyVideo:
    """Apply one degradation, returning a new video (input untouched).

    Zero strength is a bit-exact identity for every kind; shuffling a
    single-frame video is likewise the identity.
    """
    frames = video.frames
    if spec.kind == "blur":
        radius = int(round(spec.strength))
        if radius < 0:
            raise DataError(f"blur radius must be >= 0, got {spec.strength}")
        if radius == 0:
            out = frames.copy()
        else:
            size = 2 * radius + 1
            # reflect padding keeps each frame's mean exactly
            out = ndimage.uniform_filter(frames, size=(1, size, size), mode="reflect")
            np.clip(out, 0.0, 1.0, out=out)
    elif spec.kind == "compression":
        if spec.strength == 0:
            out = frames.copy()
        else:
            levels = int(spec.strength)
            if levels < 2:
                raise DataError(f"compression needs >= 2 levels, got {spec.strength}")
            # mid-rise quantizer over [0, 1]
            out = (np.clip(np.floor(frames * levels), 0, levels - 1) + 0.5) / levels
    elif spec.kind == "noise":
        if spec.strength < 0:
            raise DataError(f"noise std must be >= 0, got {spec.strength}")
        if spec.strength == 0:
            out = frames.copy()
        else:
            rng = np.random.default_rng(spec.seed)
            out = frames + rng.normal(0.0, spec.strength, size=frames.shape)
            np.clip(out, 0.0, 1.0, out=out)
    elif spec.kind == "shuffle":
        if not 0.0 <= spec.strength <= 1.0:
            raise DataError(f"shuffle fraction must be in [0, 1], got {spec.strength}")
        n_frames = frames.shape[0]
        k = int(round(spec.strength * n_frames))
        if n_frames < 2 or k < 2:
            out = frames.copy()
        else:
            rng = np.random.default_rng(spec.seed)
            picked = rng.choice(n_frames, size=k, replace=False)
            # a shuffle must actually reorder; resample the rare identity
            perm = rng.permutation(k)
            while (perm == np.arange(k)).all():
                perm = rng.permutation(k)
            out = frames.copy()
            out[picked] = frames[picked[perm]]
    else:  # pragma: no cover - DegradationSpec already validates
        raise DataError(f"unknown degradation kind {spec.kind!r}")
    meta = dict(video.meta)
    meta.setdefault("degradations", [])
    meta["degradations"] = meta["degradations"] + [
        {"kind": spec.kind, "strength": spec.strength, "seed": spec.seed}]
    return ToyVideo(frames=out, meta=meta)


def flow_interpolate(x0, x1, t: float) -> np.ndarray:
    """Linear noise-data interpolation t*x1 + (1-t)*x0, elementwise.

    t=1 is pure noise, t=0 pure data. No clamping: this is the latent
    interpolation the velocity target (x1 - x0) lives on. x0 may be a
    ToyVideo or an array; shapes must match exactly.
    """
    a0 = x0.frames if isinstance(x0, ToyVideo) else np.asarray(x0, dtype=np.float64)
    a1 = x1.frames if isinstance(x1, ToyVideo) else np.asarray(x1, dtype=np.float64)
    if a0.shape != a1.shape:
        raise DataError(f"shape mismatch: x0 {a0.shape} vs x1 {a1.shape}")
    if not 0.0 <= t <= 1.0:
        raise DataError(f"t must be in [0, 1], got {t}")
    return t * a1 + (1.0 - t) * a0


# --- serialization -----------------------------------------------------------

def write_video(video: ToyVideo, path: str | Path, with_meta: bool = True) -> None:
    """Write the flat binary format: TVID magic, F/H/W as u32-LE, then
    float32-LE pixels in (frame, row, column) order. Meta goes to a JSON
    sidecar at <path>.json when requested."""
    f, h, w = video.frames.shape
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(VIDEO_MAGIC)
        fh.write(struct.pack("<III", f, h, w))
        fh.write(video.frames.astype("<f4").tobytes(order="C"))
    if with_meta and video.meta:
        Path(str(path) + ".json").write_text(
            json.dumps(video.meta, sort_keys=True) + "\n", encoding="utf-8")


def read_video(path: str | Path) -> ToyVideo:
    """Read the flat binary format back (pixels land as float64)."""
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < 16 or raw[:4] != VIDEO_MAGIC:
        raise DataError(f"not a toy-video file: {path}")
    f, h, w = struct.unpack("<III", raw[4:16])
    expected = 16 + 4 * f * h * w
    if len(raw) != expected:
        raise DataError(f"truncated toy-video file {path}: {len(raw)} bytes, expected {expected}")
    frames = np.frombuffer(raw[16:], dtype="<f4").reshape(f, h, w).astype(np.float64)
    meta_path = Path(str(path) + ".json")
    meta = json.loads(meta_path.read_text(encoding="utf-8")) if meta_path.exists() else {}
    return ToyVideo(frames=frames, meta=meta)


# --- payload resolution -------------------------------------------------------

def resolve_payload(payload_ref: str, base_dir: str | Path | None = None) -> ToyVideo:
    """Materialize a manifest payload reference.

    Two forms are understood:
    - "synth:speed=2.0,noise=0.05,seed=7[,frames=8,height=16,width=16,start=0]"
      renders a moving-shape video from those parameters;
    - any other string is a path to a serialized toy video, resolved
      against base_dir when relative.
    """
    if payload_ref.startswith("synth:"):
        params: dict[str, float] = {}
        body = payload_ref[len("synth:"):]
        try:
            for part in body.split(","):
                key, val = part.split("=", 1)
                params[key.strip()] = float(val)
        except ValueError as exc:
            raise DataError(f"malformed synth payload {payload_ref!r}") from exc
        return generate_moving_shape(
            motion_speed=params.get("speed", 0.0),
            texture_noise=params.get("noise", 0.0),
            seed=int(params.get("seed", 0)),
            frames=int(params.get("frames", 8)),
            height=int(params.get("height", 16)),
            width=int(params.get("width", 16)),
            start_x=params.get("start", 0.0),
        )
    path = Path(payload_ref)
    if base_dir is not None and not path.is_absolute():
        path = Path(base_dir) / path
    if not path.exists():
        raise DataError(f"payload file not found: {path}")
    return read_video(path)
