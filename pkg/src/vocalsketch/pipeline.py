"""Rendering and featurizing the utterance space, and the on-disk caches."""

from __future__ import annotations

import hashlib
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import cachefile
from .corpus import CorpusFeatures, build_feature_matrix, load_manifest, preprocess
from .features import FeatureRegistry, default_registry, extract, lesion
from .inference import RSA, InferenceConfig, SimilarityMatrix, space_costs, voiced_frames_exceed
from .ontology import Ontology
from .phonetics import space_codes
from .utterance_space import UtteranceSpace
from .vocal_tract import SAMPLE_RATE, AudioBuffer, synthesize

CHUNK = 512


def utterance_audio(space: UtteranceSpace, index, sample_rate=SAMPLE_RATE) -> AudioBuffer:
    """Rendered utterance, peak-normalized exactly like referent audio."""
    buf = synthesize(space.realize(index), space.voice, sample_rate)
    return preprocess(buf.samples, sample_rate, sample_rate)


def _chunk_features(args):
    space, registry, lo, hi = args
    out = np.empty((hi - lo, len(registry)))
    for k, i in enumerate(range(lo, hi)):
        out[k] = extract(utterance_audio(space, i), registry).values
    return out


def utterance_features(space: UtteranceSpace, registry: FeatureRegistry | None = None,
                       workers=1, progress=None, stop=None) -> np.ndarray:
    """Raw feature matrix of every utterance (or the first ``stop``), rows in index order.

    Work is split into fixed chunks, so the result does not depend on
    ``workers``. ``progress`` is called with the number of rows done.
    """
    registry = registry or default_registry()
    n = len(space) if stop is None else min(int(stop), len(space))
    jobs = [(space, registry, lo, min(lo + CHUNK, n)) for lo in range(0, n, CHUNK)]
    if workers is None:
        workers = os.cpu_count() or 1
    out = np.empty((n, len(registry)))
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(workers) as pool:
            parts = pool.map(_chunk_features, jobs)
            for (_, _, lo, hi), part in zip(jobs, parts):
                out[lo:hi] = part
                if progress:
                    progress(hi)
    else:
        for job in jobs:
            out[job[2]:job[3]] = _chunk_features(job)
            if progress:
                progress(job[3])
    return out


# -- on-disk workspace ---------------------------------------------------------

def default_cache_root():
    return os.environ.get("VOCALSKETCH_CACHE") or os.path.join(
        os.path.expanduser("~"), ".cache", "vocalsketch")


def space_dir(root, space: UtteranceSpace):
    return os.path.join(root, "spaces", space.space_id)


def feature_file(directory, registry: FeatureRegistry):
    return os.path.join(directory, f"features-{registry.registry_id[:12]}.vskm")


def corpus_key(manifest_path, ontology_id):
    h = hashlib.sha256()
    with open(manifest_path, "rb") as fh:
        h.update(fh.read())
    h.update(ontology_id.encode())
    return h.hexdigest()[:16]


def corpus_dir(root, manifest_path, ontology_id):
    return os.path.join(root, "corpora", corpus_key(manifest_path, ontology_id))


def load_space_features(space: UtteranceSpace, registry: FeatureRegistry, root) -> np.ndarray:
    """Cached raw utterance features; raises CacheError if absent or stale."""
    path = feature_file(space_dir(root, space), registry)
    if not os.path.exists(path):
        raise cachefile.CacheError(f"no utterance feature cache at {path}")
    matrix = cachefile.read_matrix(path, registry.registry_id)
    if matrix.shape != (len(space), len(registry)):
        raise cachefile.StaleCacheError(f"{path}: shape {matrix.shape} does not match the space")
    return matrix.astype(np.float64)


def build_space_features(space: UtteranceSpace, registry: FeatureRegistry, root, force=False,
                         workers=1, progress=None) -> tuple[np.ndarray, bool]:
    """Load or compute the utterance feature cache; returns (features, cache_hit)."""
    directory = space_dir(root, space)
    path = feature_file(directory, registry)
    if os.path.exists(path) and not force:
        return load_space_features(space, registry, root), True
    os.makedirs(directory, exist_ok=True)
    space.write_manifest(os.path.join(directory, "manifest.txt"))
    raw = utterance_features(space, registry, workers, progress)
    cachefile.write_matrix(path, raw, registry.registry_id)
    # cached values are float32; hand back exactly what a later load returns
    return raw.astype(np.float32).astype(np.float64), False


def cost_tag(cfg: InferenceConfig) -> str:
    blob = json.dumps([cfg.w_rate, cfg.w_extreme, cfg.extreme_low, cfg.extreme_high,
                       cfg.whisper, cfg.voiced_threshold])
    return hashlib.sha256(blob.encode()).hexdigest()[:32]


def cost_table(space: UtteranceSpace, cfg: InferenceConfig, root=None) -> np.ndarray:
    """Per-utterance costs, stored as float32 (cached under ``root`` when given)."""
    tag = cost_tag(cfg)
    path = os.path.join(space_dir(root, space), f"costs-{tag[:12]}.vskm") if root else None
    if path and os.path.exists(path):
        return cachefile.read_matrix(path, tag)[:, 0].astype(np.float64)
    costs = space_costs(space, cfg).astype(np.float32)
    if path:
        os.makedirs(os.path.dirname(path), exist_ok=True)
        cachefile.write_matrix(path, costs[:, None], tag)
    return costs.astype(np.float64)


@dataclass(eq=False)
class Workspace:
    """Everything the speaker and listener models need, loaded once."""

    space: UtteranceSpace
    registry: FeatureRegistry
    utterance_raw: np.ndarray
    corpus: CorpusFeatures
    records: list
    ontology: Ontology
    root: str | None = None

    def __post_init__(self):
        self.paths = [self.ontology.path(r.ontology_leaf) for r in self.records]
        self.utterance_features = self.corpus.standardize(self.utterance_raw)
        self._codes = None

    @property
    def ids(self):
        return [r.id for r in self.records]

    def codes(self) -> np.ndarray:
        if self._codes is None:
            self._codes = space_codes(self.space)
        return self._codes

    def index_of(self, referent_id):
        try:
            return self.ids.index(referent_id)
        except ValueError:
            raise KeyError(f"unknown referent {referent_id!r}") from None

    def standardize(self, raw):
        return self.corpus.standardize(raw)

    def rsa(self, cfg: InferenceConfig, extra=None, extra_path=None) -> RSA:
        """Models over the corpus, optionally with one outside referent appended."""
        referents = self.corpus.matrix
        paths = self.paths
        if extra is not None:
            referents = np.vstack([referents, self.standardize(extra)])
            paths = paths + [extra_path] if extra_path is not None else None
        sim = SimilarityMatrix(self.utterance_features, referents, cfg.block_size, cfg.memory_budget)
        voiced = voiced_frames_exceed(self.space, cfg) if cfg.whisper else None
        return RSA(sim, cfg, paths=paths, costs=cost_table(self.space, cfg, self.root), voiced=voiced)

    def lesioned(self, indices) -> "Workspace":
        """Same workspace with registry entries removed.

        Each feature is extracted independently, so utterance columns are
        selected from the full cache; the corpus is re-extracted and
        re-standardized with the smaller registry.
        """
        small = lesion(self.registry, indices)
        keep = [i for i in range(len(self.registry)) if i not in set(indices)]
        corpus = build_feature_matrix(self.records, small)
        return Workspace(self.space, small, self.utterance_raw[:, keep], corpus,
                         self.records, self.ontology, self.root)


def open_workspace(space: UtteranceSpace, manifest_path, ontology: Ontology, root,
                   registry: FeatureRegistry | None = None, build=False, force=False,
                   workers=1, log=None) -> Workspace:
    """Load (or with ``build`` create) the space and corpus caches under ``root``."""
    registry = registry or default_registry()
    say = log or (lambda msg: None)
    if build:
        raw, hit = build_space_features(space, registry, root, force, workers)
        say(f"utterance features: {'cache hit' if hit else 'built'} ({len(space)} rows)")
    else:
        raw = load_space_features(space, registry, root)
    records = load_manifest(manifest_path, ontology)
    cpath = feature_file(corpus_dir(root, manifest_path, ontology.ontology_id), registry)
    if not build and not os.path.exists(cpath):
        raise cachefile.CacheError(f"no corpus feature cache at {cpath}")
    hit = os.path.exists(cpath) and not force
    corpus = build_feature_matrix(records, registry, cpath, workers, force)
    if build:
        say(f"corpus features: {'cache hit' if hit else 'built'} ({len(records)} rows)")
    return Workspace(space, registry, raw, corpus, records, ontology, root)
