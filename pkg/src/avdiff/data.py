"""
Procedural audible-video corpus: a coloured shape moves on a dark background
while a sine tone follows the shape's height through a monotone pitch law.

Coordinates are normalized to [0, 1] with y pointing down; the shape centre
stays inside [R, 1 - R] so the shape never leaves the frame.  Height is
h = (1 - R - y) / (1 - 2R), i.e. 0 at the bottom wall and 1 at the top wall.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import audio as A
from .media import VideoTensor, read_tensor, write_tensor

SHAPES = ("circle", "square", "triangle")
MOTIONS = ("bounce", "slide", "orbit")
COLOURS = {
    "red": (0.9, -0.6, -0.6),
    "green": (-0.5, 0.85, -0.5),
    "blue": (-0.5, -0.3, 0.95),
    "yellow": (0.95, 0.9, -0.6),
    "cyan": (-0.6, 0.9, 0.9),
    "magenta": (0.9, -0.5, 0.9),
    "orange": (0.95, 0.3, -0.7),
    "white": (0.95, 0.95, 0.95),
}
FRAME_SIZE = 64
FPS = 10.0
RADIUS = 0.12
TONE_AMPLITUDE = 0.5


@dataclass(frozen=True)
class PitchLaw:
    """Log-linear map from normalized height in [0, 1] to tone frequency (Hz)."""

    f_low: float = 220.0
    f_high: float = 1760.0

    def __post_init__(self):
        if not 0 < self.f_low < self.f_high:
            raise ValueError(f"pitch law must be increasing: f_low={self.f_low}, f_high={self.f_high}")

    def __call__(self, height):
        h = np.clip(np.asarray(height, dtype=np.float64), 0.0, 1.0)
        return self.f_low * (self.f_high / self.f_low) ** h

    def inverse(self, f_hz):
        f = np.asarray(f_hz, dtype=np.float64)
        return np.log(f / self.f_low) / np.log(self.f_high / self.f_low)


@dataclass(frozen=True)
class SceneSpec:
    shape: str = "circle"
    motion: str = "bounce"
    pitch_law: PitchLaw = field(default_factory=PitchLaw)
    duration: float = 2.0
    seed: int = 0

    def validate(self) -> None:
        if self.shape not in SHAPES:
            raise ValueError(f"unsupported shape {self.shape!r}; expected one of {SHAPES}")
        if self.motion not in MOTIONS:
            raise ValueError(f"unsupported motion {self.motion!r}; expected one of {MOTIONS}")
        if not self.duration > 0:
            raise ValueError(f"duration must be positive, got {self.duration}")


@dataclass
class AudibleVideoSample:
    video: VideoTensor
    audio: A.AudioSpectrogram
    caption: str
    aligned: bool
    seed: int

    @property
    def audio_seed(self) -> int | None:
        return self.audio.source_seed

    def __eq__(self, other):
        if not isinstance(other, AudibleVideoSample):
            return NotImplemented
        return (
            self.video == other.video
            and self.audio == other.audio
            and self.caption == other.caption
            and self.aligned == other.aligned
            and self.seed == other.seed
        )


def reflect(p, lo: float, hi: float):
    """Fold an unbounded linear coordinate into [lo, hi] with mirror reflections."""
    span = hi - lo
    u = np.mod(np.asarray(p, dtype=np.float64) - lo, 2 * span)
    return lo + np.where(u <= span, u, 2 * span - u)


@dataclass(frozen=True)
class Motion:
    """Sampled motion parameters; `position(t)` gives the centre (x, y)."""

    kind: str
    x0: float
    y0: float
    vx: float
    vy: float
    cx: float = 0.5
    cy: float = 0.5
    rho: float = 0.0
    omega: float = 0.0
    phase: float = 0.0

    def position(self, t):
        t = np.asarray(t, dtype=np.float64)
        lo, hi = RADIUS, 1.0 - RADIUS
        if self.kind == "bounce":
            return reflect(self.x0 + self.vx * t, lo, hi), reflect(self.y0 + self.vy * t, lo, hi)
        if self.kind == "slide":
            return reflect(self.x0 + self.vx * t, lo, hi), np.full_like(t, self.y0)
        ang = self.omega * t + self.phase
        return self.cx + self.rho * np.cos(ang), self.cy + self.rho * np.sin(ang)


def height_of(y):
    return (1.0 - RADIUS - np.asarray(y, dtype=np.float64)) / (1.0 - 2 * RADIUS)


def sample_motion(kind: str, rng: np.random.Generator) -> Motion:
    lo, hi = RADIUS, 1.0 - RADIUS
    x0, y0 = rng.uniform(lo, hi, size=2)
    speed = lambda a, b: rng.uniform(a, b) * rng.choice([-1.0, 1.0])
    if kind == "bounce":
        return Motion(kind, x0, y0, speed(0.05, 0.3), speed(0.2, 0.7))
    if kind == "slide":
        return Motion(kind, x0, y0, speed(0.2, 0.6), 0.0)
    rho = rng.uniform(0.06, 0.2)
    cx, cy = rng.uniform(lo + rho, hi - rho, size=2)
    return Motion(kind, cx, cy, 0.0, 0.0, cx=cx, cy=cy, rho=rho,
                  omega=speed(1.5, 4.0), phase=rng.uniform(0, 2 * np.pi))


def _shape_coverage(shape: str, cx: float, cy: float, size: int) -> np.ndarray:
    """Anti-aliased (1 px ramp) coverage mask of the shape centred at (cx, cy)."""
    coords = (np.arange(size) + 0.5) / size
    px, py = np.meshgrid(coords, coords)
    dx, dy = (px - cx) * size, (py - cy) * size
    r = RADIUS * size
    if shape == "circle":
        sd = np.hypot(dx, dy) - r
    elif shape == "square":
        sd = np.maximum(np.abs(dx), np.abs(dy)) - 0.75 * r
    else:
        # equilateral triangle, apex up, centroid at the origin, circumradius r
        inr = r / 2.0
        normals = [(0.0, 1.0), (math.sqrt(3) / 2, -0.5), (-math.sqrt(3) / 2, -0.5)]
        sd = np.max([nx * dx + ny * dy - inr for nx, ny in normals], axis=0)
    return np.clip(0.5 - sd, 0.0, 1.0)


def render_video(shape: str, motion: Motion, colour, background, n_frames: int, fps: float = FPS) -> VideoTensor:
    fg = np.asarray(colour, dtype=np.float64)[:, None, None]
    bg = np.asarray(background, dtype=np.float64)[:, None, None]
    xs, ys = motion.position(np.arange(n_frames) / fps)
    frames = np.empty((n_frames, 3, FRAME_SIZE, FRAME_SIZE), dtype=np.float32)
    for i, (x, y) in enumerate(zip(np.atleast_1d(xs), np.atleast_1d(ys))):
        a = _shape_coverage(shape, x, y, FRAME_SIZE)[None]
        frames[i] = bg * (1 - a) + fg * a
    return VideoTensor(frames, frame_rate=fps)


def render_tone(motion: Motion, pitch_law: PitchLaw, n_samples: int, sample_rate: int) -> np.ndarray:
    """Phase-continuous sine whose instantaneous frequency tracks the shape height."""
    t = np.arange(n_samples) / sample_rate
    _, y = motion.position(t)
    freq = pitch_law(height_of(y))
    phase = 2 * np.pi * np.cumsum(freq) / sample_rate
    return TONE_AMPLITUDE * np.sin(phase)


_PLACE = ((1 / 3, "near the bottom", "low"), (2 / 3, "in the middle", "mid-range"), (1.01, "near the top", "high"))
_MOTION_PHRASE = {"bounce": "bounces off the edges", "slide": "slides sideways", "orbit": "circles in a small loop"}
_PITCH_MOTION = {"bounce": "rises and falls with it", "slide": "holds a steady note", "orbit": "wavers up and down"}


def describe(shape: str, motion: str, colour: str, mean_height: float) -> str:
    """Template caption naming the shape, its motion, and the sound."""
    place, pitch = next((p, w) for lim, p, w in _PLACE if mean_height < lim)
    article = "An" if colour[0] in "aeiou" else "A"
    first = f"{article} {colour} {shape} {_MOTION_PHRASE[motion]} {place} of the frame while a {pitch} tone {_PITCH_MOTION[motion]}."
    if motion == "slide":
        return first
    return first + " The sound climbs as the shape goes up."


def _scene_draws(spec: SceneSpec):
    rng = np.random.default_rng(spec.seed)
    colour_name = list(COLOURS)[rng.integers(len(COLOURS))]
    background = rng.uniform(-1.0, -0.7, size=3)
    motion = sample_motion(spec.motion, rng)
    return colour_name, background, motion


def scene_motion(spec: SceneSpec) -> Motion:
    spec.validate()
    return _scene_draws(spec)[2]


def generate_sample(spec: SceneSpec, mel: A.MelConfig = A.DEFAULT_MEL) -> AudibleVideoSample:
    """Render the aligned (video, spectrogram, caption) triple for `spec`."""
    spec.validate()
    colour_name, background, motion = _scene_draws(spec)
    n_frames = max(1, int(round(spec.duration * FPS)))
    video = render_video(spec.shape, motion, COLOURS[colour_name], background, n_frames)
    n_cols = mel.n_frames_for(spec.duration)
    wav = render_tone(motion, spec.pitch_law, mel.n_samples(n_cols), mel.sample_rate)
    spec_audio = A.analyze(wav, mel, source_seed=spec.seed)
    _, ys = motion.position(np.arange(n_frames) / FPS)
    caption = describe(spec.shape, spec.motion, colour_name, float(np.mean(height_of(ys))))
    return AudibleVideoSample(video, spec_audio, caption, True, spec.seed)


def make_misaligned(s: AudibleVideoSample, other_audio: A.AudioSpectrogram) -> AudibleVideoSample:
    """
    Swap in another clip's audio.  Swapping a sample's own audio back restores
    the aligned original.
    """
    if other_audio.source_seed is None or s.audio.source_seed is None:
        raise ValueError("both audio tracks need a source seed to be swapped")
    if other_audio.source_seed == s.audio.source_seed:
        raise ValueError(f"audio source seeds are identical ({other_audio.source_seed}); nothing to swap")
    return replace(s, audio=other_audio, aligned=other_audio.source_seed == s.seed)


def make_specs(n: int, seed_start: int = 0, duration: float = 2.0) -> list[SceneSpec]:
    """Balanced shape x motion grid over consecutive seeds."""
    specs = []
    for i in range(n):
        seed = seed_start + i
        specs.append(SceneSpec(SHAPES[i % 3], MOTIONS[(i // 3) % 3], duration=duration, seed=seed))
    return specs


TRAIN_SEED_START = 0
EVAL_SEED_START = 100_000


def make_corpus(n: int, split: str = "train", duration: float = 2.0) -> list[AudibleVideoSample]:
    """Train and eval splits draw from disjoint seed ranges."""
    start = {"train": TRAIN_SEED_START, "eval": EVAL_SEED_START}[split]
    if split == "train" and n > EVAL_SEED_START:
        raise ValueError("train split would overlap the eval seed range")
    return [generate_sample(s) for s in make_specs(n, start, duration)]


# ---------------------------------------------------------------- manifests


class ManifestError(ValueError):
    pass


@dataclass(frozen=True)
class ManifestRecord:
    path_video: str
    path_audio: str
    caption: str
    aligned: bool
    seed: int
    audio_seed: int | None = None

    REQUIRED = ("path_video", "path_audio", "caption", "aligned", "seed")


def write_manifest(samples, path: str | Path, media_dir: str = "media") -> list[ManifestRecord]:
    """Write media as raw tensor files beside the manifest plus one JSON record per line."""
    path = Path(path)
    root = path.parent
    (root / media_dir).mkdir(parents=True, exist_ok=True)
    records = []
    for i, s in enumerate(samples):
        stem = f"{media_dir}/{i:05d}_{s.seed}"
        rec = ManifestRecord(
            f"{stem}.video.avt", f"{stem}.audio.avt", s.caption, bool(s.aligned), int(s.seed), s.audio_seed
        )
        write_tensor(root / rec.path_video, s.video.data)
        write_tensor(root / rec.path_audio, s.audio.data)
        records.append(rec)
    with open(path, "w", encoding="utf-8") as f:
        for rec in records:
            f.write(json.dumps(rec.__dict__, sort_keys=True) + "\n")
    return records


def read_manifest(path: str | Path, check_files: bool = True) -> list[ManifestRecord]:
    path = Path(path)
    records = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                raw = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ManifestError(f"{path}:{lineno}: malformed record ({exc.msg})") from None
            if not isinstance(raw, dict):
                raise ManifestError(f"{path}:{lineno}: record is not an object")
            missing = [k for k in ManifestRecord.REQUIRED if k not in raw]
            if missing:
                raise ManifestError(f"{path}:{lineno}: missing fields {missing}")
            try:
                rec = ManifestRecord(
                    str(raw["path_video"]), str(raw["path_audio"]), str(raw["caption"]),
                    bool(raw["aligned"]), int(raw["seed"]),
                    None if raw.get("audio_seed") is None else int(raw["audio_seed"]),
                )
            except (TypeError, ValueError) as exc:
                raise ManifestError(f"{path}:{lineno}: bad field value ({exc})") from None
            if check_files:
                for p in (rec.path_video, rec.path_audio):
                    if not (path.parent / p).is_file():
                        raise ManifestError(f"{path}:{lineno}: media file not found: {p}")
            records.append(rec)
    return records


def load_samples(path: str | Path) -> list[AudibleVideoSample]:
    path = Path(path)
    samples = []
    for rec in read_manifest(path):
        video = VideoTensor(read_tensor(path.parent / rec.path_video), frame_rate=FPS)
        spec_audio = A.AudioSpectrogram(read_tensor(path.parent / rec.path_audio), source_seed=rec.audio_seed)
        samples.append(AudibleVideoSample(video, spec_audio, rec.caption, rec.aligned, rec.seed))
    return samples
