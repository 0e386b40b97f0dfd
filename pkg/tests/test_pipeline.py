import numpy as np
import pytest

from vocalsketch import cachefile, pipeline
from vocalsketch.demo import demo_ontology
from vocalsketch.features import default_registry, random_lesion_indices
from vocalsketch.inference import InferenceConfig
from vocalsketch.pipeline import (build_space_features, cost_table, load_space_features,
                                  open_workspace, utterance_audio, utterance_features)
from vocalsketch.utterance_space import build_space


def test_utterance_audio_is_peak_normalized():
    buf = utterance_audio(build_space(3), 100)
    assert np.max(np.abs(buf.samples)) == pytest.approx(10 ** (-1 / 20))


def test_features_independent_of_workers(monkeypatch):
    monkeypatch.setattr(pipeline, "CHUNK", 8)
    space = build_space(2)
    seen = []
    serial = utterance_features(space, workers=1, progress=seen.append)
    assert seen[-1] == 32
    assert np.array_equal(serial, utterance_features(space, workers=2))


def test_space_cache(tmp_path):
    space = build_space(2)
    reg = default_registry()
    with pytest.raises(cachefile.CacheError):
        load_space_features(space, reg, tmp_path)
    built, hit = build_space_features(space, reg, tmp_path)
    assert not hit and built.shape == (32, 19)
    again, hit = build_space_features(space, reg, tmp_path)
    assert hit and np.array_equal(built, again)
    assert (tmp_path / "spaces" / space.space_id / "manifest.txt").exists()


def test_cost_table_cache(tmp_path):
    space = build_space(3)
    cfg = InferenceConfig(whisper=True)
    first = cost_table(space, cfg, tmp_path)
    second = cost_table(space, cfg, tmp_path)
    assert np.array_equal(first, second)
    assert np.isinf(first).any()
    assert np.array_equal(first, cost_table(space, cfg))


def test_workspace_requires_caches(demo_files, tmp_path):
    _, manifest, _ = demo_files
    with pytest.raises(cachefile.CacheError):
        open_workspace(build_space(3), manifest, demo_ontology(), str(tmp_path))


def test_lesioned_workspace(demo_ws):
    idx = random_lesion_indices(demo_ws.registry)
    small = demo_ws.lesioned(idx)
    assert len(small.registry) == 13
    assert small.utterance_raw.shape == (243, 13)
    assert small.corpus.matrix.shape == (12, 13)
    top = small.rsa(InferenceConfig()).speaker(0, "full")
    assert abs(top.probs.sum() - 1) <= 1e-9
