import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vocalsketch.utterance_space import (ModulationPattern, SpaceError, UtteranceSpace, UtteranceSpec,
                                         build_space, realize, standard_patterns)
from vocalsketch.vocal_tract import PARAMS, get_voice

FULL = build_space(11)
SMALL = build_space(3)


def test_standard_bank():
    bank = standard_patterns()
    assert len(bank) == 11
    kinds = [p.kind for p in bank]
    assert kinds.count("constant") == 1
    assert kinds.count("random_walk") == 1
    assert bank == standard_patterns()


def test_cardinality():
    t0 = time.perf_counter()
    assert len(FULL) == 161_051
    assert FULL.decode_all().shape == (161_051, 5)
    assert time.perf_counter() - t0 < 1.0
    assert len(SMALL) == 243


def test_encode_decode_example():
    assert FULL.decode(FULL.encode((4, 1, 0, 9, 10))) == (4, 1, 0, 9, 10)


def test_mixed_radix_order():
    assert SMALL.decode(0) == (0, 0, 0, 0, 0)
    assert SMALL.decode(1) == (0, 0, 0, 0, 1)
    assert SMALL.decode(3) == (0, 0, 0, 1, 0)
    assert SMALL.decode(242) == (2, 2, 2, 2, 2)


def test_bijection_exhaustive_small():
    ids = SMALL.decode_all()
    assert len({tuple(r) for r in ids}) == 243
    assert [SMALL.encode(tuple(r)) for r in ids] == list(range(243))


@settings(max_examples=300)
@given(st.integers(0, 161_050))
def test_bijection_sampled_full(i):
    assert FULL.encode(FULL.decode(i)) == i


def test_bad_indices():
    with pytest.raises((SpaceError, IndexError, ValueError)):
        SMALL.decode(243)
    with pytest.raises((SpaceError, IndexError, ValueError)):
        SMALL.encode((0, 0, 0, 0, 3))


def test_overflow_detected():
    with pytest.raises(OverflowError):
        UtteranceSpace(standard_patterns(11), n_params=40)


def test_empty_patterns_rejected():
    with pytest.raises(SpaceError):
        build_space([])


def test_all_constant_gives_constant_tracks():
    space = build_space([ModulationPattern("constant", level=0.3)])
    traj = space.realize(0)
    assert np.all(np.ptp(traj.frames, axis=0) == 0)


def test_sine_on_f0_crosses_center_eight_times():
    sine = ModulationPattern("sine", rate=2.0, level=0.5, amplitude=0.4)
    const = ModulationPattern("constant", level=0.5)
    space = build_space([const, sine])
    traj = space.realize(space.encode((1, 0, 0, 0, 0)))
    lo, hi = space.voice.f0_range
    centered = traj.track("f0") - (lo + 0.5 * (hi - lo))
    sign = np.sign(centered)
    assert np.count_nonzero(sign[1:] != sign[:-1]) == 8


def test_f0_mapped_into_voice_range():
    for voice in ("masculine", "feminine"):
        space = build_space(11, voice=voice)
        lo, hi = get_voice(voice).f0_range
        for i in (0, 12345, 161_050):
            f0 = space.realize(i).track("f0")
            assert np.all((f0 >= lo) & (f0 <= hi))


def test_random_walk_deterministic():
    walk = ModulationPattern("random_walk", level=0.5, step=0.05, seed=9)
    assert np.array_equal(walk.evaluate(200, param_index=2), walk.evaluate(200, param_index=2))
    assert not np.array_equal(walk.evaluate(200, param_index=2), walk.evaluate(200, param_index=3))


def test_pattern_validation():
    with pytest.raises(SpaceError):
        ModulationPattern("sine", rate=0.0)
    with pytest.raises(SpaceError):
        ModulationPattern("random_walk", step=0.0)
    with pytest.raises(SpaceError):
        ModulationPattern("square", rate=1.0)


def test_standalone_realize_matches_method():
    spec = UtteranceSpec((1, 2, 0, 2, 1), SMALL.space_id)
    a = realize(spec, SMALL.patterns, SMALL.voice, seed=SMALL.seed)
    assert np.array_equal(a.frames, SMALL.realize(SMALL.encode(spec.pattern_ids)).frames)


def test_manifest_round_trip(tmp_path):
    path = tmp_path / "space.txt"
    FULL.write_manifest(path)
    again = UtteranceSpace.read_manifest(path)
    assert again.space_id == FULL.space_id
    assert np.array_equal(again.track_table(), FULL.track_table())
    assert again.manifest() == FULL.manifest()


def test_manifest_rejects_tampering():
    text = SMALL.manifest().replace("rate=0.5", "rate=0.75")
    with pytest.raises(SpaceError):
        UtteranceSpace.from_manifest(text)


def test_space_id_depends_on_configuration():
    assert build_space(3).space_id != build_space(3, voice="feminine").space_id
    assert build_space(3).space_id != build_space(4).space_id


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 161_050))
def test_realized_tracks_in_range(i):
    norm = FULL.realize(i).normalized(FULL.voice)
    assert norm.shape[1] == len(PARAMS)
    assert np.all((norm >= 0) & (norm <= 1))
