"""Perceptual summary features of audio clips.

Four frame tracks are computed from a Hann-windowed STFT (spectral flatness,
spectral centroid, spectral peak and RMS loudness). A :class:`FeatureRegistry`
decides which statistics of those tracks, of their frame-to-frame
differences, and of the whole signal end up in the feature vector.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.fft import rfft
from scipy.ndimage import uniform_filter1d

from .vocal_tract import SAMPLE_RATE, AudioBuffer

TRACKS = ("flatness", "centroid", "peak", "rms")
TRANSFORMS = ("value", "derivative", "global")
STATISTICS = ("mean", "std", "value")

# Perceptual grouping used when lesioning features.
TRACK_GROUPS = {"rms": "loudness", "peak": "pitch", "centroid": "timbre", "flatness": "timbre"}

_POWER_FLOOR = 1e-10


class FeatureError(ValueError):
    pass


class FeatureEntry(NamedTuple):
    track: str
    transform: str
    statistic: str

    @property
    def name(self):
        return f"{self.track}.{self.transform}.{self.statistic}"

    @property
    def group(self):
        return TRACK_GROUPS[self.track]


@dataclass(frozen=True)
class FeatureRegistry:
    entries: tuple[FeatureEntry, ...]
    n_fft: int = 2048
    hop: int = 512
    flatness_smoothing: int = 16

    def __post_init__(self):
        entries = tuple(FeatureEntry(*e) for e in self.entries)
        object.__setattr__(self, "entries", entries)
        if len(set(entries)) != len(entries):
            raise FeatureError("registry entries must be unique")
        for e in entries:
            if e.track not in TRACKS or e.transform not in TRANSFORMS or e.statistic not in STATISTICS:
                raise FeatureError(f"invalid registry entry {e}")
            if (e.transform == "global") != (e.statistic == "value"):
                raise FeatureError(f"global entries take statistic 'value', others mean/std: {e}")
            if e.transform == "global" and e.track == "peak":
                raise FeatureError("no whole-signal peak feature")
        if self.n_fft < 2 or self.hop < 1 or self.flatness_smoothing < 1:
            raise FeatureError("invalid STFT parameters")

    def __len__(self):
        return len(self.entries)

    @property
    def names(self):
        return [e.name for e in self.entries]

    def to_dict(self):
        return {
            "entries": [list(e) for e in self.entries],
            "n_fft": self.n_fft,
            "hop": self.hop,
            "flatness_smoothing": self.flatness_smoothing,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(FeatureEntry(*e) for e in d["entries"]), d["n_fft"], d["hop"],
                   d["flatness_smoothing"])

    @property
    def registry_id(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:32]

    def groups(self) -> dict[str, list[int]]:
        out: dict[str, list[int]] = {}
        for i, e in enumerate(self.entries):
            out.setdefault(e.group, []).append(i)
        return out


def default_registry() -> FeatureRegistry:
    """The 19-entry registry: 16 track statistics plus 3 whole-signal values."""
    entries = [FeatureEntry(t, tr, s)
               for tr in ("value", "derivative")
               for t in TRACKS
               for s in ("mean", "std")]
    entries += [FeatureEntry("rms", "global", "value"),
                FeatureEntry("centroid", "global", "value"),
                FeatureEntry("flatness", "global", "value")]
    return FeatureRegistry(tuple(entries))


def lesion(registry: FeatureRegistry, indices) -> FeatureRegistry:
    """Registry with the entries at ``indices`` removed."""
    indices = [int(i) for i in indices]
    if len(set(indices)) != len(indices):
        raise FeatureError("lesion indices must be distinct")
    for i in indices:
        if not 0 <= i < len(registry):
            raise FeatureError(f"lesion index {i} out of range for {len(registry)} entries")
    drop = set(indices)
    kept = tuple(e for i, e in enumerate(registry.entries) if i not in drop)
    return FeatureRegistry(kept, registry.n_fft, registry.hop, registry.flatness_smoothing)


def random_lesion_indices(registry: FeatureRegistry, per_group=2, seed=0) -> list[int]:
    """Pick ``per_group`` entries at random from each perceptual group."""
    rng = np.random.default_rng(seed)
    picked = []
    for group in sorted(registry.groups()):
        members = registry.groups()[group]
        if len(members) < per_group:
            raise FeatureError(f"group {group!r} has only {len(members)} entries")
        picked.extend(int(i) for i in rng.choice(members, per_group, replace=False))
    return sorted(picked)


@dataclass(frozen=True, eq=False)
class SpectralTracks:
    flatness: np.ndarray
    centroid: np.ndarray
    peak: np.ndarray
    rms: np.ndarray
    signal_rms: float
    signal_centroid: float
    signal_flatness: float

    def __len__(self):
        return len(self.rms)

    def track(self, name):
        return getattr(self, name)


def _flatness(power, smoothing):
    if smoothing > 1:
        power = uniform_filter1d(power, smoothing, axis=-1, mode="nearest")
    total = power.mean(axis=-1, dtype=np.float64)
    peak = np.maximum(power.max(axis=-1, keepdims=True), np.finfo(power.dtype).tiny)
    # log is taken relative to the frame peak to keep float32 well-scaled
    rel = np.maximum(power / peak, _POWER_FLOOR)
    log_geo = np.log(rel).mean(axis=-1, dtype=np.float64) + np.log(peak[..., 0].astype(np.float64))
    with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
        flat = np.where(total > 0, np.exp(log_geo) / total, 0.0)
    return np.clip(flat, 0.0, 1.0)


def _centroid(power, freqs):
    total = power.sum(axis=-1, dtype=np.float64)
    weighted = (power @ freqs).astype(np.float64)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(total > 0, weighted / total, 0.0)


_windows: dict[int, np.ndarray] = {}


def _hann(n):
    w = _windows.get(n)
    if w is None:
        w = np.hanning(n + 1)[:-1].astype(np.float32)
        _windows[n] = w
    return w


def stft_tracks(buf: AudioBuffer, registry: FeatureRegistry | None = None) -> SpectralTracks:
    """Per-frame flatness, centroid (Hz), peak (Hz) and RMS of a clip.

    Flatness is the geometric/arithmetic mean ratio of the power spectrum
    after a moving average over ``registry.flatness_smoothing`` bins.
    Silent frames get centroid, peak and flatness 0.
    """
    registry = registry or default_registry()
    x = np.asarray(buf.samples, dtype=np.float32)
    n_fft, hop = registry.n_fft, registry.hop
    if len(x) < n_fft:
        raise FeatureError(f"clip of {len(x)} samples is shorter than one {n_fft}-sample window")
    frames = np.lib.stride_tricks.sliding_window_view(x, n_fft)[::hop]
    spec = rfft(frames * _hann(n_fft), axis=1)
    power = spec.real ** 2 + spec.imag ** 2
    freqs = (np.arange(power.shape[1]) * (buf.sample_rate / n_fft)).astype(np.float32)

    peak = freqs[power.argmax(axis=1)].astype(np.float64)
    peak[power.max(axis=1) <= 0] = 0.0
    energy = np.concatenate([[0.0], np.cumsum(np.square(x, dtype=np.float64))])
    starts = np.arange(len(frames)) * hop
    rms = np.sqrt(np.maximum(energy[starts + n_fft] - energy[starts], 0.0) / n_fft)

    mean_power = power.mean(axis=0, dtype=np.float64)
    return SpectralTracks(
        flatness=_flatness(power, registry.flatness_smoothing),
        centroid=_centroid(power, freqs),
        peak=peak,
        rms=rms,
        signal_rms=float(np.sqrt(energy[-1] / len(x))),
        signal_centroid=float(_centroid(mean_power, freqs.astype(np.float64))),
        signal_flatness=float(_flatness(mean_power, registry.flatness_smoothing)),
    )


@dataclass(frozen=True, eq=False)
class FeatureVector:
    values: np.ndarray
    registry_id: str

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 1 or not np.all(np.isfinite(v)):
            raise FeatureError("feature values must be a finite 1-D vector")
        object.__setattr__(self, "values", v)

    def __len__(self):
        return len(self.values)

    def __neg__(self):
        return FeatureVector(-self.values, self.registry_id)


def summarize(tracks: SpectralTracks, registry: FeatureRegistry | None = None) -> FeatureVector:
    """Collapse frame tracks into the registry's fixed-order vector.

    Standard deviations use the population convention (ddof=0). The
    derivative of a track is its first difference per frame; a single-frame
    track has derivative statistics 0.
    """
    registry = registry or default_registry()
    if len(tracks) == 0:
        raise FeatureError("tracks are empty")
    values = np.stack([tracks.track(t) for t in TRACKS])
    diffs = np.diff(values, axis=1) if values.shape[1] > 1 else np.zeros((len(TRACKS), 1))
    stats = {
        ("value", "mean"): values.mean(axis=1),
        ("value", "std"): values.std(axis=1),
        ("derivative", "mean"): diffs.mean(axis=1),
        ("derivative", "std"): diffs.std(axis=1),
    }
    out = np.empty(len(registry))
    for i, e in enumerate(registry.entries):
        if e.transform == "global":
            out[i] = getattr(tracks, f"signal_{e.track}")
        else:
            out[i] = stats[e.transform, e.statistic][TRACKS.index(e.track)]
    return FeatureVector(out, registry.registry_id)


def extract(buf: AudioBuffer, registry: FeatureRegistry | None = None) -> FeatureVector:
    registry = registry or default_registry()
    return summarize(stft_tracks(buf, registry), registry)


def cosine_similarity(a: FeatureVector, b: FeatureVector) -> float:
    if a.registry_id != b.registry_id:
        raise FeatureError("feature vectors come from different registries")
    na = np.linalg.norm(a.values)
    nb = np.linalg.norm(b.values)
    if na == 0 or nb == 0:
        raise FeatureError("cosine similarity of a zero-norm vector is undefined")
    return float(np.clip(a.values @ b.values / (na * nb), -1.0, 1.0))


@dataclass(frozen=True, eq=False)
class Standardizer:
    """Per-feature z-scoring fitted on a referent corpus."""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, matrix):
        matrix = np.asarray(matrix, dtype=np.float64)
        std = matrix.std(axis=0)
        # constant columns carry no information; leave their scale alone
        std = np.where(std > 0, std, 1.0)
        return cls(matrix.mean(axis=0), std)

    def __call__(self, matrix):
        return (np.asarray(matrix, dtype=np.float64) - self.mean) / self.std
