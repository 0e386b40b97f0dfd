"""The discretized utterance space.

Every control parameter of the vocal tract is driven by one of ``P``
modulation patterns, so a space over 5 parameters holds ``P**5`` utterances.
Utterances are addressed by a flat index in mixed-radix order (first
parameter most significant).
"""

from __future__ import annotations

import hashlib
import itertools
from dataclasses import dataclass
from typing import Iterator, NamedTuple, Sequence

import numpy as np

from .vocal_tract import (CONTROL_RATE, DEFAULT_DURATION, PARAMS, ControlTrajectory,
                          VoiceProfile, get_voice)

MANIFEST_MAGIC = "VOCALSKETCH-SPACE"
MANIFEST_VERSION = 1
KINDS = ("constant", "sine", "sawtooth", "random_walk")

_INDEX_LIMIT = 2 ** 63


class SpaceError(ValueError):
    pass


@dataclass(frozen=True)
class ModulationPattern:
    """A normalized control track shape.

    ``level`` is the center, ``amplitude`` the excursion on either side.
    Sines start at their crest; sawtooths ramp upward from the trough.
    Random walks start at ``level`` and take Gaussian steps of size ``step``
    per frame, reflecting at 0 and 1.
    """

    kind: str
    rate: float = 0.0
    level: float = 0.5
    amplitude: float = 0.0
    step: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise SpaceError(f"unknown pattern kind {self.kind!r}")
        if self.kind in ("sine", "sawtooth") and not self.rate > 0:
            raise SpaceError(f"{self.kind} pattern needs a positive rate")
        if self.kind == "random_walk" and not self.step > 0:
            raise SpaceError("random walk needs a positive step")
        if not 0.0 <= self.level <= 1.0:
            raise SpaceError("level must lie in [0, 1]")

    def evaluate(self, n_frames, frame_rate=CONTROL_RATE, param_index=0) -> np.ndarray:
        t = np.arange(n_frames) / frame_rate
        if self.kind == "constant":
            x = np.full(n_frames, self.level)
        elif self.kind == "sine":
            x = self.level + self.amplitude * np.cos(2 * np.pi * self.rate * t)
        elif self.kind == "sawtooth":
            phase = np.mod(self.rate * t, 1.0)
            x = self.level + self.amplitude * (2.0 * phase - 1.0)
        else:
            rng = np.random.default_rng([self.seed, param_index])
            steps = rng.normal(0.0, self.step, n_frames - 1)
            x = np.empty(n_frames)
            x[0] = self.level
            for i, s in enumerate(steps, start=1):
                v = x[i - 1] + s
                # reflect, repeatedly if a step overshoots by more than the range
                while v < 0.0 or v > 1.0:
                    v = -v if v < 0.0 else 2.0 - v
                x[i] = v
        return np.clip(x, 0.0, 1.0)

    def describe(self) -> str:
        return (f"kind={self.kind} rate={self.rate!r} level={self.level!r} "
                f"amplitude={self.amplitude!r} step={self.step!r} seed={self.seed}")


def standard_patterns(count=11, seed=0) -> list[ModulationPattern]:
    """The pattern bank.

    The first three (a low and a high slow sine, and a wide 2 Hz sine) form
    the reduced test-mode bank. They leave out the constant 0.5, which on
    the voicedness axis is a half-voiced mix that is neither clearly voiced
    nor clearly unvoiced.
    """
    bank = [
        ModulationPattern("sine", rate=0.5, level=0.25, amplitude=0.15),
        ModulationPattern("sine", rate=1.0, level=0.75, amplitude=0.15),
        ModulationPattern("sine", rate=2.0, level=0.5, amplitude=0.4),
        ModulationPattern("constant", level=0.5),
        ModulationPattern("sawtooth", rate=4.0, level=0.5, amplitude=0.4),
        ModulationPattern("sawtooth", rate=1.0, level=0.25, amplitude=0.15),
        ModulationPattern("sawtooth", rate=2.0, level=0.75, amplitude=0.15),
        ModulationPattern("sine", rate=4.0, level=0.5, amplitude=0.4),
        ModulationPattern("sine", rate=8.0, level=0.5, amplitude=0.2),
        ModulationPattern("sawtooth", rate=8.0, level=0.5, amplitude=0.4),
        ModulationPattern("random_walk", level=0.5, step=0.05, seed=seed),
    ]
    if not 1 <= count <= len(bank):
        raise SpaceError(f"pattern count must be in [1, {len(bank)}]")
    return bank[:count]


class UtteranceSpec(NamedTuple):
    pattern_ids: tuple[int, ...]
    space_id: str


class UtteranceSpace:
    """Lazy enumeration of ``len(patterns) ** n_params`` utterances."""

    def __init__(self, patterns: Sequence[ModulationPattern], n_params=len(PARAMS),
                 duration=DEFAULT_DURATION, frame_rate=CONTROL_RATE, seed=0,
                 voice: VoiceProfile | str = "masculine"):
        if not patterns:
            raise SpaceError("a space needs at least one pattern")
        if len(patterns) ** n_params >= _INDEX_LIMIT:
            raise OverflowError(f"{len(patterns)}**{n_params} utterances overflow a 64-bit index")
        self.patterns = tuple(patterns)
        self.n_params = int(n_params)
        self.duration = float(duration)
        self.frame_rate = float(frame_rate)
        self.seed = int(seed)
        self.voice = get_voice(voice)
        self._tracks = None

    @property
    def n_patterns(self):
        return len(self.patterns)

    @property
    def n_frames(self):
        return int(round(self.duration * self.frame_rate))

    def __len__(self):
        return self.n_patterns ** self.n_params

    def encode(self, pattern_ids) -> int:
        ids = tuple(int(p) for p in pattern_ids)
        if len(ids) != self.n_params or not all(0 <= p < self.n_patterns for p in ids):
            raise SpaceError(f"invalid pattern ids {ids} for a {self.n_patterns}-pattern space")
        index = 0
        for p in ids:
            index = index * self.n_patterns + p
        return index

    def decode(self, index) -> tuple[int, ...]:
        index = int(index)
        if not 0 <= index < len(self):
            raise SpaceError(f"utterance index {index} out of range")
        ids = []
        for _ in range(self.n_params):
            index, p = divmod(index, self.n_patterns)
            ids.append(p)
        return tuple(reversed(ids))

    def decode_all(self) -> np.ndarray:
        """Pattern ids of every utterance in index order; shape (len, n_params)."""
        idx = np.arange(len(self), dtype=np.int64)
        out = np.empty((len(self), self.n_params), dtype=np.int64)
        for j in range(self.n_params - 1, -1, -1):
            idx, out[:, j] = np.divmod(idx, self.n_patterns)
        return out

    def spec(self, index) -> UtteranceSpec:
        return UtteranceSpec(self.decode(index), self.space_id)

    def __iter__(self) -> Iterator[UtteranceSpec]:
        sid = self.space_id
        for ids in itertools.product(range(self.n_patterns), repeat=self.n_params):
            yield UtteranceSpec(ids, sid)

    def track_table(self) -> np.ndarray:
        """Normalized tracks of every (parameter, pattern); shape (n_params, P, n_frames)."""
        if self._tracks is None:
            table = np.array([[p.evaluate(self.n_frames, self.frame_rate, j) for p in self.patterns]
                              for j in range(self.n_params)])
            table.setflags(write=False)
            self._tracks = table
        return self._tracks

    def realize(self, spec) -> ControlTrajectory:
        """Control trajectory of an utterance (spec, pattern-id tuple or flat index)."""
        if isinstance(spec, UtteranceSpec):
            if spec.space_id != self.space_id:
                raise SpaceError("utterance spec belongs to a different space")
            ids = spec.pattern_ids
        elif np.ndim(spec) == 0:
            ids = self.decode(spec)
        else:
            ids = tuple(spec)
            self.encode(ids)
        table = self.track_table()
        norm = np.stack([table[j, p] for j, p in enumerate(ids)], axis=1)
        lo, hi = self.voice.f0_range
        frames = norm.copy()
        frames[:, 0] = lo + norm[:, 0] * (hi - lo)
        return ControlTrajectory(frames, self.frame_rate)

    # -- manifest -------------------------------------------------------

    def _body(self) -> list[str]:
        lines = [
            f"patterns {self.n_patterns}",
            f"params {self.n_params}",
            f"duration {self.duration!r}",
            f"frame_rate {self.frame_rate!r}",
            f"seed {self.seed}",
            f"voice {self.voice.name}",
        ]
        lines += [f"pattern {i} {p.describe()}" for i, p in enumerate(self.patterns)]
        return lines

    @property
    def space_id(self) -> str:
        blob = "\n".join(self._body()).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def manifest(self) -> str:
        lines = [f"{MANIFEST_MAGIC} {MANIFEST_VERSION}", f"space_id {self.space_id}"]
        return "\n".join(lines + self._body()) + "\n"

    def write_manifest(self, path):
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(self.manifest())

    @classmethod
    def from_manifest(cls, text: str) -> "UtteranceSpace":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if not lines or lines[0].split()[0] != MANIFEST_MAGIC:
            raise SpaceError("not a space manifest")
        version = int(lines[0].split()[1])
        if version != MANIFEST_VERSION:
            raise SpaceError(f"unsupported manifest version {version}")
        fields = {}
        patterns = []
        for ln in lines[1:]:
            key, _, rest = ln.partition(" ")
            if key == "pattern":
                _, _, kv = rest.partition(" ")
                d = dict(item.split("=", 1) for item in kv.split())
                patterns.append(ModulationPattern(
                    d["kind"], float(d["rate"]), float(d["level"]), float(d["amplitude"]),
                    float(d["step"]), int(d["seed"])))
            else:
                fields[key] = rest
        if len(patterns) != int(fields["patterns"]):
            raise SpaceError("manifest pattern count does not match its pattern lines")
        space = cls(patterns, int(fields["params"]), float(fields["duration"]),
                    float(fields["frame_rate"]), int(fields["seed"]), fields["voice"])
        if "space_id" in fields and fields["space_id"] != space.space_id:
            raise SpaceError("manifest space_id does not match its contents")
        return space

    @classmethod
    def read_manifest(cls, path) -> "UtteranceSpace":
        with open(path, encoding="utf-8") as fh:
            return cls.from_manifest(fh.read())


def build_space(patterns=None, params=len(PARAMS), **kwargs) -> UtteranceSpace:
    if patterns is None:
        patterns = standard_patterns(seed=kwargs.get("seed", 0))
    elif isinstance(patterns, int):
        patterns = standard_patterns(patterns, seed=kwargs.get("seed", 0))
    return UtteranceSpace(patterns, params, **kwargs)


def realize(spec, patterns, voice, duration=DEFAULT_DURATION, frame_rate=CONTROL_RATE,
            seed=0) -> ControlTrajectory:
    """Standalone form of :meth:`UtteranceSpace.realize` for a pattern-id tuple."""
    ids = spec.pattern_ids if isinstance(spec, UtteranceSpec) else tuple(spec)
    space = UtteranceSpace(patterns, len(ids), duration, frame_rate, seed, voice)
    return space.realize(ids)
