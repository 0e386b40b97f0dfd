import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from vocalsketch.inference import Distribution
from vocalsketch.phonetics import (CODE_FIELDS, PhoneticError, code_utterance, correlate,
                                   feature_frequencies, read_human_csv, space_codes,
                                   write_human_csv)
from vocalsketch.utterance_space import build_space
from vocalsketch.vocal_tract import ControlTrajectory, get_voice

MASC = get_voice("masculine")
VOWEL_A = 0.5   # [a] is the middle anchor of the vowel axis


def traj(**values):
    return ControlTrajectory.constant(1.0, **values)


def test_code_examples():
    assert code_utterance(traj(voicedness=1.0), MASC).voiced
    assert not code_utterance(traj(plosive_gate=0.0), MASC).has_stops
    code = code_utterance(traj(vowel=VOWEL_A), MASC)
    assert code.open_vowel and not code.fronted_vowel
    code = code_utterance(traj(vowel=0.0), MASC)
    assert code.fronted_vowel and not code.open_vowel


def test_voiced_fraction_threshold():
    frames = traj(voicedness=0.0).frames.copy()
    frames[:20, 4] = 1.0            # exactly 20% of 100 frames
    assert code_utterance(ControlTrajectory(frames), MASC).voiced
    frames[19, 4] = 0.0
    assert not code_utterance(ControlTrajectory(frames), MASC).voiced


def test_stops_need_a_rising_edge():
    frames = traj(plosive_gate=0.0).frames.copy()
    frames[40:45, 3] = 0.9
    assert code_utterance(ControlTrajectory(frames), MASC).has_stops
    assert code_utterance(traj(plosive_gate=0.5), MASC).has_stops is False


def test_space_codes_match_per_utterance_coding():
    space = build_space(4)
    table = space_codes(space)
    for u in range(len(space)):
        assert tuple(table[u]) == tuple(code_utterance(space.realize(u), space.voice))


def test_feature_frequency_examples():
    codes = np.array([[1, 0, 0, 1], [0, 1, 0, 0]], dtype=bool)
    point = Distribution(np.array([1.0, 0.0]), "utterance")
    assert feature_frequencies(point, codes)[0] == 1.0
    half = Distribution(np.array([0.5, 0.5]), "utterance")
    assert feature_frequencies(half, codes).tolist() == [0.5, 0.5, 0.0, 0.5]
    skew = Distribution(np.array([0.3, 0.7]), "utterance")
    assert feature_frequencies(skew, codes, top_k=1).tolist() == [0.0, 1.0, 0.0, 0.0]
    with pytest.raises(PhoneticError):
        feature_frequencies(point, codes[:1])


probs = st.lists(st.floats(0.001, 1.0), min_size=6, max_size=6).map(lambda x: np.array(x) / sum(x))


@given(probs, probs, st.floats(0, 1))
def test_frequencies_linear_and_bounded(p, q, w):
    codes = np.random.default_rng(0).random((6, 4)) > 0.5
    fp, fq = feature_frequencies(p, codes), feature_frequencies(q, codes)
    mix = feature_frequencies(w * p + (1 - w) * q, codes)
    assert np.allclose(mix, w * fp + (1 - w) * fq, atol=1e-12)
    assert np.all((mix >= 0) & (mix <= 1))


def test_correlate_examples():
    x = np.random.default_rng(1).random((5, 4))
    assert correlate(x, x).r2 == pytest.approx(1.0)
    assert correlate(x, 3 * x + 1).r2 == pytest.approx(1.0)
    neg = correlate(x, -x)
    assert neg.r2 == pytest.approx(1.0) and neg.slope < 0 and neg.r < 0
    with pytest.raises(PhoneticError):
        correlate(np.ones((2, 2)), x[:2, :2])
    with pytest.raises(PhoneticError):
        correlate(x, x[:2])


def test_human_csv(tmp_path):
    table = {"a": np.array([0.1, 0.2, 0.3, 0.4]), "b": np.array([1.0, 0.0, 0.5, 0.25])}
    path = tmp_path / "h.csv"
    write_human_csv(path, table)
    assert path.read_text().splitlines()[0] == "referent_id," + ",".join(CODE_FIELDS)
    back = read_human_csv(path)
    assert list(back) == ["a", "b"]
    assert all(np.array_equal(back[k], table[k]) for k in table)
    path.write_text("referent_id,voiced,stops,open,fronted\na,1.5,0,0,0\n")
    with pytest.raises(PhoneticError):
        read_human_csv(path)
    path.write_text("referent_id,voiced\na,1\n")
    with pytest.raises(PhoneticError):
        read_human_csv(path)
    path.write_text("referent_id,voiced,stops,open,fronted\na,1,0,0,0\na,1,0,0,0\n")
    with pytest.raises(PhoneticError):
        read_human_csv(path)
