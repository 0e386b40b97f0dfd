"""Referent corpus: manifest loading, audio preprocessing and the feature matrix."""

from __future__ import annotations

import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from math import gcd

import numpy as np
import soundfile
from scipy.signal import resample_poly

from . import cachefile
from .features import FeatureError, FeatureRegistry, Standardizer, default_registry, extract
from .ontology import Ontology
from .vocal_tract import SAMPLE_RATE, AudioBuffer

PEAK_DBFS = -1.0


class CorpusError(ValueError):
    pass


class EmptyCorpusError(CorpusError):
    pass


class MissingAudioError(CorpusError):
    pass


class UnknownOntologyIdError(CorpusError):
    pass


class DuplicateReferentError(CorpusError):
    pass


class AudioReadError(CorpusError):
    """Audio for one referent could not be decoded or featurized."""

    def __init__(self, record_id, reason):
        super().__init__(f"referent {record_id!r}: {reason}")
        self.record_id = record_id


@dataclass(frozen=True)
class ReferentRecord:
    id: str
    audio_path: str
    ontology_leaf: str
    display_name: str


@dataclass(frozen=True, eq=False)
class Prior:
    ids: tuple[str, ...]
    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=np.float64)
        if p.shape != (len(self.ids),) or np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
            raise CorpusError("prior must be non-negative, one entry per referent, summing to 1")
        object.__setattr__(self, "probs", p)

    def __getitem__(self, referent_id):
        return float(self.probs[self.ids.index(referent_id)])


def uniform_prior(records) -> Prior:
    if not records:
        raise EmptyCorpusError("a prior needs at least one referent")
    n = len(records)
    return Prior(tuple(r.id for r in records), np.full(n, 1.0 / n))


def load_manifest(path, ontology: Ontology | None = None) -> list[ReferentRecord]:
    """Read a JSON-lines manifest; relative audio paths resolve against its directory."""
    base = os.path.dirname(os.path.abspath(path))
    records = []
    seen = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                d = json.loads(line)
                rec = ReferentRecord(str(d["id"]), str(d["audio_path"]), str(d["ontology_leaf"]),
                                     str(d.get("display_name", d["id"])))
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise CorpusError(f"{path}:{lineno}: malformed record ({exc})") from None
            if rec.id in seen:
                raise DuplicateReferentError(f"duplicate referent id {rec.id!r} at line {lineno}")
            seen.add(rec.id)
            audio = rec.audio_path if os.path.isabs(rec.audio_path) else os.path.join(base, rec.audio_path)
            if not os.path.isfile(audio):
                raise MissingAudioError(f"referent {rec.id!r}: audio file {audio} not found")
            if ontology is not None and rec.ontology_leaf not in ontology:
                raise UnknownOntologyIdError(
                    f"referent {rec.id!r} names unknown ontology id {rec.ontology_leaf!r}")
            records.append(ReferentRecord(rec.id, audio, rec.ontology_leaf, rec.display_name))
    if not records:
        raise EmptyCorpusError(f"{path}: manifest has no records")
    return records


def write_manifest(path, records):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for r in records:
            fh.write(json.dumps({"id": r.id, "audio_path": r.audio_path,
                                 "ontology_leaf": r.ontology_leaf,
                                 "display_name": r.display_name}) + "\n")


def preprocess(samples, sample_rate, target_rate=SAMPLE_RATE) -> AudioBuffer:
    """Mono mixdown, polyphase resampling and peak normalization to -1 dBFS."""
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim == 2:
        x = x.mean(axis=1)
    if sample_rate != target_rate:
        g = gcd(int(sample_rate), int(target_rate))
        x = resample_poly(x, target_rate // g, int(sample_rate) // g)
    peak = np.max(np.abs(x)) if x.size else 0.0
    if peak > 0:
        x = x * (10 ** (PEAK_DBFS / 20) / peak)
    return AudioBuffer(x, target_rate)


def load_audio(path, target_rate=SAMPLE_RATE) -> AudioBuffer:
    samples, sr = soundfile.read(path, dtype="float64", always_2d=True)
    return preprocess(samples, sr, target_rate)


def write_wav(path, buf: AudioBuffer):
    soundfile.write(path, np.asarray(buf.samples), buf.sample_rate, subtype="PCM_16")


def _record_features(args):
    rec, registry = args
    try:
        return extract(load_audio(rec.audio_path), registry).values
    except (RuntimeError, soundfile.LibsndfileError, FeatureError, ValueError) as exc:
        raise AudioReadError(rec.id, exc) from None


def raw_features(records, registry: FeatureRegistry | None = None, workers=1) -> np.ndarray:
    """Unstandardized feature rows in record order."""
    registry = registry or default_registry()
    jobs = [(r, registry) for r in records]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(workers) as pool:
            rows = list(pool.map(_record_features, jobs))
    else:
        rows = [_record_features(j) for j in jobs]
    return np.array(rows).reshape(len(records), len(registry))


@dataclass(frozen=True, eq=False)
class CorpusFeatures:
    """Standardized referent features and the statistics used to standardize."""

    matrix: np.ndarray
    standardizer: Standardizer
    registry_id: str

    def standardize(self, raw):
        return self.standardizer(raw)


def _round32(x):
    # cached values are float32, so in-memory results are rounded the same way
    return np.asarray(x, dtype=np.float32).astype(np.float64)


def build_feature_matrix(records, registry: FeatureRegistry | None = None, cache_path=None,
                         workers=1, force=False) -> CorpusFeatures:
    """Standardized feature matrix, one row per record.

    With ``cache_path`` the matrix is stored in the binary cache format and
    the per-feature mean/std in ``<cache_path>.stats``. An existing cache is
    reused when its registry hash matches; otherwise
    :class:`cachefile.StaleCacheError` is raised unless ``force`` is set.
    """
    registry = registry or default_registry()
    if not records:
        raise EmptyCorpusError("cannot build features for an empty corpus")
    if cache_path is not None and os.path.exists(cache_path) and not force:
        cached = load_feature_cache(cache_path, registry)
        if cached.matrix.shape[0] != len(records):
            raise cachefile.StaleCacheError(
                f"{cache_path}: {cached.matrix.shape[0]} rows cached for {len(records)} records")
        return cached
    raw = raw_features(records, registry, workers)
    fitted = Standardizer.fit(raw)
    std = Standardizer(_round32(fitted.mean), _round32(fitted.std))
    result = CorpusFeatures(_round32(std(raw)), std, registry.registry_id)
    if cache_path is not None:
        cachefile.write_matrix(cache_path, result.matrix, registry.registry_id)
        cachefile.write_matrix(stats_path(cache_path), np.stack([std.mean, std.std]),
                               registry.registry_id)
    return result


def stats_path(cache_path):
    return f"{cache_path}.stats"


def load_feature_cache(cache_path, registry: FeatureRegistry) -> CorpusFeatures:
    matrix = cachefile.read_matrix(cache_path, registry.registry_id).astype(np.float64)
    stats = cachefile.read_matrix(stats_path(cache_path), registry.registry_id).astype(np.float64)
    if matrix.shape[1] != len(registry) or stats.shape != (2, len(registry)):
        raise cachefile.StaleCacheError(f"{cache_path}: column count does not match the registry")
    return CorpusFeatures(matrix, Standardizer(stats[0], stats[1]), registry.registry_id)
