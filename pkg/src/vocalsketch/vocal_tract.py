"""Source-filter vocal tract synthesizer.

A voiced impulse train and a broadband noise source are shaped by a cascade
of three time-varying formant resonators. Plosives are rendered as short
decaying noise bursts triggered by rising edges of the plosive gate.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import NamedTuple, Sequence

import numpy as np
from numba import njit

SAMPLE_RATE = 16000
CONTROL_RATE = 100.0
DEFAULT_DURATION = 2.0

PARAMS = ("f0", "loudness", "vowel", "plosive_gate", "voicedness")
# Anchor order along the vowel axis: front-close, front-mid, open, back-mid, back-close.
VOWELS = ("i", "e", "a", "o", "u")

PLOSIVE_THRESHOLD = 0.5
BURST_SECONDS = 0.030
BURST_DECAY = 0.006
CLOSURE_SECONDS = 0.020
OUTPUT_GAIN = 0.25
CLIP_KNEE = 0.5


class TrajectoryError(ValueError):
    """A control trajectory violates its invariants."""

    def __init__(self, message, frame=None, param=None):
        super().__init__(message)
        self.frame = frame
        self.param = param


class ControlFrame(NamedTuple):
    f0: float
    loudness: float
    vowel: float
    plosive_gate: float
    voicedness: float


@dataclass(frozen=True, eq=False)
class ControlTrajectory:
    """Frame-rate control tracks, one column per entry of ``PARAMS``.

    ``f0`` is in Hz; the other four columns are normalized to [0, 1].
    """

    frames: np.ndarray
    frame_rate: float = CONTROL_RATE

    def __post_init__(self):
        arr = np.array(self.frames, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[1] != len(PARAMS):
            raise TrajectoryError(f"frames must have shape (n, {len(PARAMS)}), got {arr.shape}")
        if arr.shape[0] == 0:
            raise TrajectoryError("trajectory has no frames")
        if not self.frame_rate > 0:
            raise TrajectoryError("frame_rate must be positive")
        arr.setflags(write=False)
        object.__setattr__(self, "frames", arr)

    @classmethod
    def from_frames(cls, frames: Sequence[ControlFrame], frame_rate=CONTROL_RATE):
        return cls(np.array([tuple(f) for f in frames], dtype=np.float64), frame_rate)

    @classmethod
    def constant(cls, duration=DEFAULT_DURATION, frame_rate=CONTROL_RATE, **values):
        defaults = dict(f0=120.0, loudness=0.5, vowel=0.0, plosive_gate=0.0, voicedness=1.0)
        unknown = set(values) - set(defaults)
        if unknown:
            raise TypeError(f"unknown control parameters: {sorted(unknown)}")
        defaults.update(values)
        n = int(round(duration * frame_rate))
        row = [defaults[p] for p in PARAMS]
        return cls(np.tile(row, (n, 1)), frame_rate)

    def __len__(self):
        return self.frames.shape[0]

    def __getitem__(self, i):
        return ControlFrame(*self.frames[i])

    def track(self, name):
        return self.frames[:, PARAMS.index(name)]

    @property
    def duration(self):
        return len(self) / self.frame_rate

    def normalized(self, voice: "VoiceProfile") -> np.ndarray:
        """All five tracks in [0, 1]; f0 is mapped linearly through the voice range."""
        out = self.frames.copy()
        lo, hi = voice.f0_range
        out[:, 0] = (out[:, 0] - lo) / (hi - lo)
        return out

    def validate(self, voice: "VoiceProfile | None" = None):
        arr = self.frames
        bad = ~np.isfinite(arr)
        if bad.any():
            i, j = np.argwhere(bad)[0]
            raise TrajectoryError(f"frame {i}: {PARAMS[j]} is not finite", int(i), PARAMS[j])
        norm = arr[:, 1:]
        bad = (norm < 0.0) | (norm > 1.0)
        if bad.any():
            i, j = np.argwhere(bad)[0]
            name = PARAMS[j + 1]
            raise TrajectoryError(
                f"frame {i}: {name}={norm[i, j]!r} outside [0, 1]", int(i), name)
        f0 = arr[:, 0]
        if voice is not None:
            lo, hi = voice.f0_range
            bad = (f0 < lo - 1e-9) | (f0 > hi + 1e-9)
        else:
            bad = f0 <= 0.0
        if bad.any():
            i = int(np.argmax(bad))
            raise TrajectoryError(f"frame {i}: f0={f0[i]!r} Hz outside the voice range", i, "f0")
        return self


class VowelFormants(NamedTuple):
    f1: float
    f2: float
    f3: float
    open: bool
    front: bool


@dataclass(frozen=True)
class VoiceProfile:
    """Voice-specific constants: f0 range, vowel formant anchors and filter Q."""

    name: str
    f0_range: tuple[float, float]
    formant_table: dict[str, VowelFormants]
    filter_q: tuple[float, float, float] = (8.0, 12.0, 16.0)
    noise_seed: int = 0
    vowel_order: tuple[str, ...] = VOWELS

    def __post_init__(self):
        lo, hi = self.f0_range
        if not 0 < lo < hi:
            raise ValueError(f"invalid f0_range {self.f0_range}")
        for v in self.vowel_order:
            f = self.formant_table[v]
            if not 0 < f.f1 < f.f2 < f.f3:
                raise ValueError(f"formants of [{v}] must be strictly increasing")
        if len(self.filter_q) != 3 or min(self.filter_q) <= 0:
            raise ValueError("filter_q needs three positive entries")

    @property
    def anchors(self) -> np.ndarray:
        """Positions of the anchor vowels on the normalized vowel axis."""
        return np.linspace(0.0, 1.0, len(self.vowel_order))

    def formants(self, vowel) -> np.ndarray:
        """Piecewise-linear F1/F2/F3 for each vowel position; shape (n, 3)."""
        vowel = np.atleast_1d(np.asarray(vowel, dtype=np.float64))
        table = np.array([self.formant_table[v][:3] for v in self.vowel_order])
        return np.stack([np.interp(vowel, self.anchors, table[:, k]) for k in range(3)], axis=1)

    def nearest_vowel(self, vowel) -> np.ndarray:
        """Index of the closest anchor vowel for each position."""
        vowel = np.atleast_1d(np.asarray(vowel, dtype=np.float64))
        return np.abs(vowel[:, None] - self.anchors[None, :]).argmin(axis=1)


# Average adult formant values (Hz), Peterson & Barney style tables.
MASCULINE = VoiceProfile(
    name="stereotypically-masculine",
    f0_range=(80.0, 200.0),
    formant_table={
        "a": VowelFormants(730.0, 1090.0, 2440.0, open=True, front=False),
        "e": VowelFormants(530.0, 1840.0, 2480.0, open=False, front=True),
        "i": VowelFormants(270.0, 2290.0, 3010.0, open=False, front=True),
        "o": VowelFormants(570.0, 840.0, 2410.0, open=False, front=False),
        "u": VowelFormants(300.0, 870.0, 2240.0, open=False, front=False),
    },
)

FEMININE = VoiceProfile(
    name="stereotypically-feminine",
    f0_range=(160.0, 350.0),
    formant_table={
        "a": VowelFormants(850.0, 1220.0, 2810.0, open=True, front=False),
        "e": VowelFormants(610.0, 2330.0, 2990.0, open=False, front=True),
        "i": VowelFormants(310.0, 2790.0, 3310.0, open=False, front=True),
        "o": VowelFormants(590.0, 920.0, 2710.0, open=False, front=False),
        "u": VowelFormants(370.0, 950.0, 2670.0, open=False, front=False),
    },
)

VOICES = {"masculine": MASCULINE, "feminine": FEMININE}


def get_voice(name) -> VoiceProfile:
    if isinstance(name, VoiceProfile):
        return name
    for key, voice in VOICES.items():
        if name in (key, voice.name):
            return voice
    raise KeyError(f"unknown voice {name!r}; choose from {sorted(VOICES)}")


@dataclass(frozen=True, eq=False)
class AudioBuffer:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        if not self.sample_rate > 0:
            raise ValueError("sample_rate must be positive")
        arr = np.asarray(self.samples)
        if arr.ndim != 1:
            raise ValueError("AudioBuffer is mono; samples must be 1-D")
        if not np.all(np.isfinite(arr)):
            raise ValueError("AudioBuffer samples must be finite")
        object.__setattr__(self, "samples", arr)

    def __len__(self):
        return self.samples.shape[0]

    @property
    def duration(self):
        return len(self) / self.sample_rate

    def rms(self):
        return float(np.sqrt(np.mean(np.square(self.samples, dtype=np.float64))))


def impulse_train_source(f0_track, sample_rate=SAMPLE_RATE) -> np.ndarray:
    """Unit impulses, one per period of the per-sample ``f0_track``.

    The first impulse sits at sample 0; the next one fires whenever the
    accumulated phase crosses an integer.
    """
    f0 = np.asarray(f0_track, dtype=np.float64)
    if not np.all(np.isfinite(f0)) or np.any(f0 <= 0):
        raise ValueError("f0 must be positive and finite")
    if np.any(f0 > sample_rate / 4):
        raise ValueError(f"f0 above {sample_rate / 4} Hz (Nyquist/2) is not supported")
    return _impulses(f0, float(sample_rate))


@njit(cache=True)
def _impulses(f0, sample_rate):
    out = np.zeros_like(f0)
    out[0] = 1.0
    acc = 0.0
    cycle = 0.0
    for i in range(1, f0.shape[0]):
        acc += f0[i - 1]
        c = np.floor(acc / sample_rate)
        if c > cycle:
            out[i] = 1.0
            cycle = c
    return out


@lru_cache(maxsize=8)
def _noise(seed, length):
    arr = np.random.default_rng(seed).standard_normal(length)
    arr.setflags(write=False)
    return arr


def noise_source(seed, length) -> np.ndarray:
    """Seeded standard-normal white noise."""
    return _noise(int(seed), int(length)).copy()


def resonator_coefficients(freq, bandwidth, sample_rate=SAMPLE_RATE):
    """(a, b, c) of y[n] = a x[n] + b y[n-1] + c y[n-2], unity gain at DC."""
    freq = np.asarray(freq, dtype=np.float64)
    bandwidth = np.asarray(bandwidth, dtype=np.float64)
    c = -np.exp(-2.0 * np.pi * bandwidth / sample_rate)
    b = 2.0 * np.exp(-np.pi * bandwidth / sample_rate) * np.cos(2.0 * np.pi * freq / sample_rate)
    a = 1.0 - b - c
    return a, b, c


@njit(cache=True)
def _cascade3(x, a, b, c, hop):
    # Three second-order sections in series on two interleaved channels.
    # a, b, c: (n_frames, 3) with one row every `hop` samples; coefficients
    # are linearly interpolated between rows.
    n = x.shape[1]
    nf = a.shape[0]
    y = np.empty_like(x)
    inv_hop = 1.0 / hop
    p11 = p12 = p21 = p22 = p31 = p32 = 0.0
    q11 = q12 = q21 = q22 = q31 = q32 = 0.0
    for i in range(n):
        pos = i * inv_hop
        f = int(pos)
        if f >= nf - 1:
            f = nf - 1
            g = f
            t = 0.0
        else:
            g = f + 1
            t = pos - f
        a0 = a[f, 0] + t * (a[g, 0] - a[f, 0])
        b0 = b[f, 0] + t * (b[g, 0] - b[f, 0])
        c0 = c[f, 0] + t * (c[g, 0] - c[f, 0])
        a1 = a[f, 1] + t * (a[g, 1] - a[f, 1])
        b1 = b[f, 1] + t * (b[g, 1] - b[f, 1])
        c1 = c[f, 1] + t * (c[g, 1] - c[f, 1])
        a2 = a[f, 2] + t * (a[g, 2] - a[f, 2])
        b2 = b[f, 2] + t * (b[g, 2] - b[f, 2])
        c2 = c[f, 2] + t * (c[g, 2] - c[f, 2])
        v = a0 * x[0, i] + b0 * p11 + c0 * p12
        w = a0 * x[1, i] + b0 * q11 + c0 * q12
        p12 = p11
        p11 = v
        q12 = q11
        q11 = w
        v = a1 * v + b1 * p21 + c1 * p22
        w = a1 * w + b1 * q21 + c1 * q22
        p22 = p21
        p21 = v
        q22 = q21
        q21 = w
        v = a2 * v + b2 * p31 + c2 * p32
        w = a2 * w + b2 * q31 + c2 * q32
        p32 = p31
        p31 = v
        q32 = q31
        q31 = w
        y[0, i] = v
        y[1, i] = w
    return y


def apply_formant_filter(src, freqs, q, sample_rate=SAMPLE_RATE, hop=None) -> np.ndarray:
    """Run ``src`` through a cascade of second-order resonators.

    ``src`` may be 1-D or ``(n_channels, n)``; channels share the filter.
    ``freqs`` is either one row of center frequencies (time-invariant filter)
    or an ``(n_frames, n_formants)`` array with one row every ``hop``
    samples. ``q`` gives one quality factor per formant; bandwidth = f / q.
    """
    src = np.asarray(src, dtype=np.float64)
    freqs = np.atleast_2d(np.asarray(freqs, dtype=np.float64))
    q = np.broadcast_to(np.asarray(q, dtype=np.float64), freqs.shape[1:])
    if np.any(freqs <= 0) or np.any(freqs >= sample_rate / 2):
        raise ValueError("resonance frequencies must lie in (0, Nyquist)")
    a, b, c = resonator_coefficients(freqs, freqs / q, sample_rate)
    if hop is None:
        hop = max(src.shape[-1], 1)
    # identity sections pad the bank to a multiple of three
    pad = (-a.shape[1]) % 3
    if pad:
        a = np.hstack([a, np.ones((a.shape[0], pad))])
        b = np.hstack([b, np.zeros((b.shape[0], pad))])
        c = np.hstack([c, np.zeros((c.shape[0], pad))])
    x = np.atleast_2d(src)
    if x.shape[0] == 2 and a.shape[1] == 3:
        return _cascade3(np.ascontiguousarray(x), np.ascontiguousarray(a), np.ascontiguousarray(b),
                         np.ascontiguousarray(c), float(hop))
    odd = x.shape[0] % 2
    if odd:
        x = np.vstack([x, np.zeros((1, x.shape[1]))])
    out = np.empty_like(x)
    for ch in range(0, x.shape[0], 2):
        y = np.ascontiguousarray(x[ch:ch + 2])
        for k in range(0, a.shape[1], 3):
            y = _cascade3(y, np.ascontiguousarray(a[:, k:k + 3]), np.ascontiguousarray(b[:, k:k + 3]),
                          np.ascontiguousarray(c[:, k:k + 3]), float(hop))
        out[ch:ch + 2] = y
    if odd:
        out = out[:-1]
    return out if src.ndim == 2 else out[0]


@njit(cache=True)
def _upsample(tracks, hop, n):
    # Linear interpolation between frames, holding the last frame.
    nf, nk = tracks.shape
    out = np.empty((nk, n))
    inv_hop = 1.0 / hop
    for k in range(nk):
        for i in range(n):
            pos = i * inv_hop
            f = int(pos)
            if f >= nf - 1:
                out[k, i] = tracks[nf - 1, k]
            else:
                t = pos - f
                out[k, i] = tracks[f, k] + t * (tracks[f + 1, k] - tracks[f, k])
    return out


@njit(cache=True)
def _mix(filtered, noise, voiced_mix):
    # Each filtered path is scaled to unit RMS over the whole buffer, then
    # crossfaded at equal power. Unvoiced frication is mostly broadband noise
    # with a little vowel coloring.
    n = noise.shape[0]
    ss_v = 0.0
    ss_c = 0.0
    for i in range(n):
        ss_v += filtered[0, i] * filtered[0, i]
        ss_c += filtered[1, i] * filtered[1, i]
    gv = 1.0 / np.sqrt(ss_v / n) if ss_v > 0 else 0.0
    gc = np.sqrt(0.2) / np.sqrt(ss_c / n) if ss_c > 0 else 0.0
    gn = np.sqrt(0.8)
    out = np.empty(n)
    for i in range(n):
        m = voiced_mix[i]
        unvoiced = gn * noise[i] + gc * filtered[1, i]
        out[i] = np.sqrt(m) * gv * filtered[0, i] + np.sqrt(1.0 - m) * unvoiced
    return out


def plosive_onsets(gate, threshold=PLOSIVE_THRESHOLD) -> np.ndarray:
    """Frame indices where the gate rises above ``threshold``.

    The gate is taken as closed before the first frame, so a gate that
    starts open yields an onset at frame 0.
    """
    above = np.asarray(gate) > threshold
    prev = np.concatenate([[False], above[:-1]])
    return np.flatnonzero(above & ~prev)


@njit(cache=True)
def _glottal_tilt(x):
    # Two one-pole lowpasses: roughly -12 dB/octave above a few hundred Hz.
    y = np.empty_like(x)
    s1 = 0.0
    s2 = 0.0
    for i in range(x.shape[0]):
        s1 = 0.1 * x[i] + 0.9 * s1
        s2 = 0.1 * s1 + 0.9 * s2
        y[i] = s2
    return y


def render(traj: ControlTrajectory, voice: VoiceProfile, sample_rate=SAMPLE_RATE) -> np.ndarray:
    """Pre-clipping output samples; linear in the loudness track."""
    hop = sample_rate / traj.frame_rate
    n = int(round(traj.duration * sample_rate))
    frames = traj.frames
    if not np.any(frames[:, 1] > 0):
        return np.zeros(n)
    f0, loud, voiced_mix = _upsample(np.ascontiguousarray(frames[:, [0, 1, 4]]), float(hop), n)
    formants = voice.formants(frames[:, 2])

    has_voice = bool(np.any(voiced_mix > 0))
    has_noise = bool(np.any(voiced_mix < 1))
    noise = _noise(voice.noise_seed, n)
    sources = np.zeros((2, n))
    if has_voice:
        sources[0] = _glottal_tilt(impulse_train_source(f0, sample_rate))
    if has_noise:
        sources[1] = noise
    filtered = apply_formant_filter(sources, formants, voice.filter_q, sample_rate, hop)
    out = _mix(filtered, noise, voiced_mix)

    onsets = plosive_onsets(frames[:, 3])
    if onsets.size:
        burst_len = int(round(BURST_SECONDS * sample_rate))
        close_len = int(round(CLOSURE_SECONDS * sample_rate))
        env = np.exp(-np.arange(burst_len) / (BURST_DECAY * sample_rate))
        burst_noise = _noise(voice.noise_seed + 1, n)
        duck = np.ones(n)
        bursts = np.zeros(n)
        for k in onsets:
            start = int(round(k * hop))
            stop = min(start + burst_len, n)
            bursts[start:stop] += 3.0 * env[:stop - start] * burst_noise[start:stop]
            duck[max(start - close_len, 0):start] = 0.0
            duck[start:stop] = np.minimum(duck[start:stop], np.linspace(0.0, 1.0, burst_len)[:stop - start])
        out = out * duck + bursts

    return OUTPUT_GAIN * loud * out


def soft_clip(x, knee=CLIP_KNEE):
    """Identity below ``knee``; tanh compression of the excess, bounded by 1."""
    x = np.asarray(x, dtype=np.float64)
    mag = np.abs(x)
    over = mag > knee
    if not over.any():
        return x
    out = x.copy()
    head = 1.0 - knee
    out[over] = np.sign(x[over]) * (knee + head * np.tanh((mag[over] - knee) / head))
    return out


def synthesize(traj: ControlTrajectory, voice: VoiceProfile, sample_rate=SAMPLE_RATE) -> AudioBuffer:
    """Render a control trajectory to audio with the given voice."""
    if sample_rate < 8000:
        raise ValueError("sample_rate must be at least 8000 Hz")
    traj.validate(voice)
    return AudioBuffer(soft_clip(render(traj, voice, sample_rate)), sample_rate)
