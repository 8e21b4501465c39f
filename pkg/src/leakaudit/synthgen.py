"""Synthetic cohorts built as disease + subject + other components.

Every window is the sum of three parts:

* disease: ``amp_disease * sin(2*pi*(k+1)*t/T + phase)`` on all channels,
  where ``k`` is the class;
* subject: ``amp_subject * P_z``, a fixed per-subject standard-normal
  template smoothed along time by a moving average;
* other: ``amp_noise * eps`` with i.i.d. standard-normal ``eps``.

Type-II recordings optionally smooth ``eps`` along time (rescaled to unit
variance) into a slow drift. Overlapping windows then share nearly the same
drift, which is what lets a mixed split leak.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np
from scipy.ndimage import uniform_filter1d

from ._rng import make_rng
from .datamodel import Dataset, DatasetKind, DatasetMeta, Sample, classify_dataset_kind, segment_recording
from .exceptions import ConfigError, DatasetError


class _ConfigMixin:
    @classmethod
    def from_dict(cls, d: dict):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class SynthType3Config(_ConfigMixin):
    n_subjects: int = 20
    n_classes: int = 3
    samples_per_subject: int = 200
    n_timestamps: int = 64
    n_channels: int = 4
    amp_disease: float = 0.5
    amp_subject: float = 2.0
    amp_noise: float = 1.0
    phase_jitter: bool = True
    smooth_width: int = 5
    seed: int = 0

    def __post_init__(self):
        for name in ("n_subjects", "n_classes", "samples_per_subject",
                     "n_timestamps", "n_channels"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        for name in ("amp_disease", "amp_subject", "amp_noise"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be nonnegative")
        if self.smooth_width < 1 or self.smooth_width % 2 == 0:
            raise ConfigError("smooth_width must be an odd integer >= 1")


@dataclass(frozen=True)
class SynthType2Config(_ConfigMixin):
    n_subjects: int = 10
    n_classes: int = 2
    segments_per_subject: int = 10
    segment_len: int = 100
    window_len: int = 20
    n_channels: int = 4
    overlap: float = 0.8
    amp_disease: float = 0.5
    amp_subject: float = 1.0
    amp_noise: float = 2.0
    smooth_width: int = 5
    noise_smooth_width: int = 31
    seed: int = 0

    def __post_init__(self):
        for name in ("n_subjects", "n_classes", "segments_per_subject", "segment_len",
                     "window_len", "n_channels"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.window_len > self.segment_len:
            raise ConfigError("window_len must not exceed segment_len")
        if not 0 <= self.overlap < 1:
            raise ConfigError("overlap must lie in [0, 1)")
        for name in ("amp_disease", "amp_subject", "amp_noise"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be nonnegative")
        for name in ("smooth_width", "noise_smooth_width"):
            w = getattr(self, name)
            if w < 1 or w % 2 == 0:
                raise ConfigError(f"{name} must be an odd integer >= 1")


@dataclass(frozen=True)
class ComponentBreakdown:
    """Per-sample (n, T, C) arrays whose sum reproduces the sample values."""

    disease: np.ndarray
    subject: np.ndarray
    noise: np.ndarray


def _subject_template(seed: int, z: int, length: int, C: int, width: int) -> np.ndarray:
    raw = make_rng(seed, "subject-template", z).standard_normal((length, C))
    if width == 1:
        return raw
    return uniform_filter1d(raw, size=width, axis=0, mode="wrap")


def generate_type3(config: SynthType3Config, return_components: bool = False):
    """Multi-subject single-class cohort; subject ``i`` gets class ``i mod K``.

    Returns ``(dataset, breakdown)``; ``breakdown`` is None unless
    ``return_components`` is set.
    """
    cfg = config
    S, K, m, T, C = (cfg.n_subjects, cfg.n_classes, cfg.samples_per_subject,
                     cfg.n_timestamps, cfg.n_channels)
    t = np.arange(T)
    samples = []
    parts = {"disease": [], "subject": [], "noise": []}
    for z in range(S):
        k = z % K
        template = _subject_template(cfg.seed, z, T, C, cfg.smooth_width)
        rng = make_rng(cfg.seed, "sample-draws", z)
        phases = (rng.uniform(0, 2 * np.pi, size=m) if cfg.phase_jitter else np.zeros(m))
        noise = rng.standard_normal((m, T, C))
        wave = np.sin(2 * np.pi * (k + 1) * t[None, :] / T + phases[:, None])
        disease = cfg.amp_disease * np.repeat(wave[:, :, None], C, axis=2)
        subject = np.broadcast_to(cfg.amp_subject * template, (m, T, C))
        other = cfg.amp_noise * noise
        values = disease + subject + other
        for j in range(m):
            samples.append(Sample(subject=z, label=k, t_index=j, values=values[j]))
        if return_components:
            parts["disease"].append(disease)
            parts["subject"].append(np.array(subject))
            parts["noise"].append(other)

    meta = DatasetMeta(
        name=f"synth-type3-seed{cfg.seed}", n_timestamps=T, n_channels=C,
        class_names=tuple(f"class{k}" for k in range(K)),
        subject_ids=tuple(f"S{z:03d}" for z in range(S)), time_unit="samples",
    )
    dataset = Dataset(meta, samples)
    breakdown = None
    if return_components:
        breakdown = ComponentBreakdown(*(np.concatenate(parts[p]) for p in
                                         ("disease", "subject", "noise")))
    return dataset, breakdown


def generate_type2(config: SynthType2Config) -> Dataset:
    """Multi-subject cohort whose class changes between contiguous segments.

    Each subject has one continuous recording of ``segments_per_subject``
    segments with seeded-uniform classes. The class sinusoid completes
    ``k+1`` cycles per ``window_len`` steps and has a random phase per
    segment; the subject template (one segment long) repeats across the
    whole recording. The other component is unit-variance noise smoothed
    over ``noise_smooth_width`` steps. Each segment is windowed on its own, so windows never
    straddle a class change; ``t_index`` and spans run along the recording.
    """
    cfg = config
    S, K, C = cfg.n_subjects, cfg.n_classes, cfg.n_channels
    L = cfg.segment_len
    t = np.arange(L)
    for attempt in range(100):
        samples = []
        for z in range(S):
            rng = make_rng(cfg.seed + attempt, "type2-subject", z)
            classes = rng.integers(0, K, size=cfg.segments_per_subject)
            template = _subject_template(cfg.seed + attempt, z, L, C, cfg.smooth_width)
            ordinal = 0
            for g, k in enumerate(classes):
                phase = rng.uniform(0, 2 * np.pi)
                wave = np.sin(2 * np.pi * (k + 1) * t / cfg.window_len + phase)
                noise = rng.standard_normal((L, C))
                if cfg.noise_smooth_width > 1:
                    # unit-variance after smoothing
                    noise = uniform_filter1d(noise, size=cfg.noise_smooth_width, axis=0,
                                             mode="wrap") * np.sqrt(cfg.noise_smooth_width)
                seg = (cfg.amp_disease * wave[:, None] + cfg.amp_subject * template
                       + cfg.amp_noise * noise)
                windows = segment_recording(seg, z, np.full(L, k), cfg.window_len, cfg.overlap,
                                            recording_id=f"S{z:03d}-rec", t_offset=ordinal,
                                            span_offset=g * L)
                ordinal += len(windows)
                samples.extend(windows)
        meta = DatasetMeta(
            name=f"synth-type2-seed{cfg.seed}", n_timestamps=cfg.window_len, n_channels=C,
            class_names=tuple(f"class{k}" for k in range(K)),
            subject_ids=tuple(f"S{z:03d}" for z in range(S)), time_unit="samples",
        )
        dataset = Dataset(meta, samples)
        if S < 2 or K < 2 or classify_dataset_kind(dataset) is DatasetKind.TypeII:
            return dataset
    raise DatasetError("could not draw a Type-II cohort; increase segments_per_subject")


def reconstruct_check(dataset: Dataset, breakdown: ComponentBreakdown | None,
                      atol: float = 1e-9) -> bool:
    """True iff the component sum matches every sample value within ``atol``."""
    if breakdown is None:
        raise DatasetError("no component breakdown to check")
    total = breakdown.disease + breakdown.subject + breakdown.noise
    if total.shape != dataset.X.shape:
        return False
    return bool(np.all(np.abs(total - dataset.X) <= atol))


def parse_synth_spec(text: str, kind: str = "type3") -> dict:
    """Parse ``"S=20,K=3,m=200,T=64,C=4"``-style shorthand into config keys."""
    aliases = {
        "S": "n_subjects", "K": "n_classes", "m": "samples_per_subject",
        "T": "n_timestamps", "C": "n_channels", "ad": "amp_disease",
        "as": "amp_subject", "ao": "amp_noise", "w": "smooth_width",
    }
    if kind == "type2":
        aliases.update({"T": "window_len", "segments": "segments_per_subject",
                        "L": "segment_len"})
    cls = SynthType3Config if kind == "type3" else SynthType2Config
    types = {f.name: f.type for f in fields(cls)}
    out = {}
    for item in filter(None, (p.strip() for p in text.split(","))):
        if "=" not in item:
            raise ConfigError(f"bad synth item {item!r}; expected key=value")
        key, value = (x.strip() for x in item.split("=", 1))
        key = aliases.get(key, key)
        if key not in types:
            raise ConfigError(f"unknown synth key {key!r}")
        typ = types[key]
        if typ in ("bool", bool):
            out[key] = value.lower() in ("1", "true", "yes", "on")
        elif typ in ("int", int):
            out[key] = int(value)
        else:
            out[key] = float(value)
    return out
