"""Synthetic dual-modality gesture data.

Each sample renders a latent luminance video of a Gaussian blob travelling
along a class-specific trajectory and derives both modalities from it:

* events fire whenever a pixel's log-luminance crosses a contrast level
  between consecutive micro-steps (one event per level crossed, sign of the
  change as polarity);
* RGB frames add a blob-attached colour tint whose chroma has zero
  luminance, so the texture never reaches the event stream.

Motion is therefore resolvable from events only and texture from frames only.

Trajectories are indexed by integer micro-step phase, so a counter-rotating
sample is the exact time reversal of its co-rotating twin; over whole cycles
both accumulate to identical per-pixel, per-polarity counts.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .stream import DualSample, EventStream, FrameImage, Scenario

MOTIONS = ("cw", "ccw", "lr", "rl")
LIGHTS = ("dim", "bright", "natural")
POSITIONS = ("front", "back")
_LUMA = np.array([0.299, 0.587, 0.114])
_LIGHT_AMP = {"bright": 0.6, "dim": 0.5, "natural": 0.4}
_POSITION_SIGMA = {"front": 2.2, "back": 1.7}


def _zero_luma(rgb):
    rgb = np.asarray(rgb, dtype=np.float64)
    return rgb - (_LUMA @ rgb)


# chroma directions with zero luminance: red/cyan, blue/yellow, green/magenta
_CHROMA = [_zero_luma([1, 0, 0]), _zero_luma([0, 0, 1]), _zero_luma([0, 1, 0])]


@dataclass
class SynthConfig:
    width: int = 32
    height: int = 32
    motions: tuple[str, ...] = MOTIONS
    textures: int = 2
    samples_per_class: int = 10
    duration_us: int = 1_000_000
    step_us: int = 1000
    frame_interval_us: int = 50_000
    threshold: float = 0.2
    speeds: tuple[float, ...] = (2.0, 4.0)  # cycles per second
    label_mode: str = "joint"  # joint | motion | texture
    n_subjects: int = 4
    first_subject: int = 0
    radius: tuple[float, float] = (7.0, 10.0)
    background: float = 0.25

    def validate(self) -> None:
        problems = []
        if not self.motions or self.textures < 1:
            problems.append("at least one motion and one texture are required")
        bad = [m for m in self.motions if m not in MOTIONS and m != "static"]
        if bad:
            problems.append(f"unknown motions {bad} (valid: {', '.join(MOTIONS + ('static',))})")
        if self.textures > len(_CHROMA):
            problems.append(f"at most {len(_CHROMA)} textures supported")
        if self.duration_us <= 0:
            problems.append("duration_us must be positive")
        if self.step_us <= 0 or self.duration_us % max(self.step_us, 1):
            problems.append("step_us must be positive and divide duration_us")
        if self.samples_per_class < 1:
            problems.append("samples_per_class must be >= 1")
        if self.frame_interval_us <= 0:
            problems.append("frame_interval_us must be positive")
        if self.threshold <= 0:
            problems.append("threshold must be positive")
        if self.label_mode not in ("joint", "motion", "texture"):
            problems.append(f"label_mode must be joint, motion or texture, got {self.label_mode!r}")
        if self.width < 8 or self.height < 8:
            problems.append("resolution must be at least 8x8")
        if self.n_subjects < 1:
            problems.append("n_subjects must be >= 1")
        if problems:
            raise ValueError("; ".join(problems))

    @property
    def num_classes(self) -> int:
        if self.label_mode == "motion":
            return len(self.motions)
        if self.label_mode == "texture":
            return self.textures
        return len(self.motions) * self.textures

    def class_names(self) -> list[str]:
        if self.label_mode == "motion":
            return list(self.motions)
        if self.label_mode == "texture":
            return [f"tex{k}" for k in range(self.textures)]
        return [f"{m}/tex{k}" for m in self.motions for k in range(self.textures)]

    def label_of(self, motion_idx: int, texture_idx: int) -> int:
        if self.label_mode == "motion":
            return motion_idx
        if self.label_mode == "texture":
            return texture_idx
        return motion_idx * self.textures + texture_idx


@dataclass
class BlobStyle:
    motion: str
    texture: int
    speed: float
    center: tuple[float, float]
    radius: float
    phase: float
    sigma: float
    amplitude: float
    background: float
    sweep_row: float
    scenario: Scenario = field(default_factory=Scenario)


def _cycle_steps(speed: float, step_us: int) -> int:
    if speed <= 0:
        return 0
    return max(1, int(round(1e6 / (speed * step_us))))


def _trajectory(style: BlobStyle, n_steps: int, cfg: SynthConfig, first: int = 0) -> tuple[np.ndarray, np.ndarray]:
    k = np.arange(first, first + n_steps)
    M = _cycle_steps(style.speed, cfg.step_us)
    if style.motion == "static" or M == 0:
        idx = np.zeros(n_steps, dtype=np.int64)
        M = 1
    elif style.motion in ("cw", "lr"):
        idx = k % M
    else:
        idx = (-k) % M
    frac = idx / M
    if style.motion in ("cw", "ccw", "static"):
        a = style.phase + 2.0 * np.pi * frac
        cx = style.center[0] + style.radius * np.cos(a)
        cy = style.center[1] + style.radius * np.sin(a)
    else:
        margin = 3.0 * style.sigma
        span = cfg.width + 2.0 * margin
        cx = -margin + span * ((frac + style.phase / (2.0 * np.pi)) % 1.0)
        cy = np.full(n_steps, style.sweep_row)
    return cx, cy


def _gaussian(cx, cy, sigma, cfg: SynthConfig) -> np.ndarray:
    ys = np.arange(cfg.height, dtype=np.float64)[None, :, None]
    xs = np.arange(cfg.width, dtype=np.float64)[None, None, :]
    d2 = (xs - np.asarray(cx)[:, None, None]) ** 2 + (ys - np.asarray(cy)[:, None, None]) ** 2
    return np.exp(-d2 / (2.0 * sigma * sigma))


def render_events(style: BlobStyle, cfg: SynthConfig) -> EventStream:
    n_steps = cfg.duration_us // cfg.step_us
    # one pre-roll step: the change from step k-1 to k is stamped at k
    cx, cy = _trajectory(style, n_steps + 1, cfg, first=-1)
    lum = style.background + style.amplitude * _gaussian(cx, cy, style.sigma, cfg)
    level = np.floor(np.log(lum) / cfg.threshold).astype(np.int64)
    dn = np.diff(level, axis=0)
    k, y, x = np.nonzero(dn)
    change = dn[k, y, x]
    reps = np.abs(change)
    t = k * cfg.step_us
    return EventStream(
        np.repeat(x, reps), np.repeat(y, reps), np.repeat(t, reps),
        np.repeat(np.sign(change), reps),
        cfg.width, cfg.height, cfg.duration_us, validate=False,
    )


def render_frames(style: BlobStyle, cfg: SynthConfig) -> list[FrameImage]:
    n_steps = cfg.duration_us // cfg.step_us
    cx, cy = _trajectory(style, n_steps, cfg)
    frames = []
    chroma = _CHROMA[style.texture % len(_CHROMA)]
    for t_us in range(0, cfg.duration_us, cfg.frame_interval_us):
        k = t_us // cfg.step_us
        g = _gaussian(cx[k:k + 1], cy[k:k + 1], style.sigma, cfg)[0]
        lum = style.background + style.amplitude * g
        rgb = lum[None] + (0.35 * g)[None] * chroma[:, None, None]
        frames.append(FrameImage(rgb, t_us))
    return frames


def sample_style(cfg: SynthConfig, motion: str, texture: int, rng: np.random.Generator) -> BlobStyle:
    subject = cfg.first_subject + int(rng.integers(cfg.n_subjects))
    scenario = Scenario(LIGHTS[int(rng.integers(3))], POSITIONS[int(rng.integers(2))], subject)
    # stable per-subject appearance (clothing contrast, build)
    srng = np.random.default_rng([7919, subject])
    s_amp, s_sigma, s_bg = srng.uniform(0.85, 1.15), srng.uniform(0.9, 1.1), srng.uniform(-0.05, 0.05)
    w, h = cfg.width, cfg.height
    return BlobStyle(
        motion=motion,
        texture=texture,
        speed=float(cfg.speeds[int(rng.integers(len(cfg.speeds)))]) if motion != "static" else 0.0,
        center=(w / 2 - 0.5 + rng.uniform(-1.5, 1.5), h / 2 - 0.5 + rng.uniform(-1.5, 1.5)),
        radius=float(rng.uniform(*cfg.radius)) * min(w, h) / 32.0,
        phase=float(rng.uniform(0, 2 * np.pi)),
        sigma=_POSITION_SIGMA[scenario.position] * s_sigma * min(w, h) / 32.0,
        amplitude=_LIGHT_AMP[scenario.light] * s_amp,
        background=cfg.background + s_bg,
        sweep_row=h / 2 - 0.5 + float(rng.uniform(-3.0, 3.0)) * h / 32.0,
        scenario=scenario,
    )


def synth_one(cfg: SynthConfig, motion_idx: int, texture_idx: int, rng: np.random.Generator) -> DualSample:
    style = sample_style(cfg, cfg.motions[motion_idx], texture_idx, rng)
    return DualSample(
        render_events(style, cfg), render_frames(style, cfg),
        cfg.label_of(motion_idx, texture_idx), style.scenario,
    )


def synth_dual(cfg: SynthConfig, rng: np.random.Generator | int) -> list[DualSample]:
    """Generate ``samples_per_class`` samples for every (motion, texture) pair.

    Sample ``i`` is a pure function of ``(cfg, base seed, i)``, so generation
    order or parallel mapping does not change the output.
    """
    cfg.validate()
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    base = int(rng.integers(2**62))
    pairs = [(m, k) for m in range(len(cfg.motions)) for k in range(cfg.textures)]
    per_pair = cfg.samples_per_class
    if cfg.label_mode != "joint":
        # keep classes balanced when several pairs share a label
        n_pairs_per_label = len(pairs) // cfg.num_classes
        per_pair = max(1, -(-cfg.samples_per_class // n_pairs_per_label))
    samples = []
    i = 0
    for _ in range(per_pair):
        for m, k in pairs:
            samples.append(synth_one(cfg, m, k, np.random.default_rng([base, i])))
            i += 1
    return samples


def synth_splits(cfg: SynthConfig, seed: int, train_per_class: int, test_per_class: int) -> tuple[list[DualSample], list[DualSample]]:
    """Train/test sets drawn with disjoint seeds and disjoint subject ids."""
    from dataclasses import replace

    train_cfg = replace(cfg, samples_per_class=train_per_class, first_subject=0)
    test_cfg = replace(cfg, samples_per_class=test_per_class, first_subject=cfg.n_subjects)
    train = synth_dual(train_cfg, np.random.default_rng([seed, 0]))
    test = synth_dual(test_cfg, np.random.default_rng([seed, 1]))
    return train, test
