"""Phonetic coding of utterances from their control tracks, and comparison with human codes."""

from __future__ import annotations

import csv
from typing import NamedTuple

import numpy as np

from .vocal_tract import PARAMS, ControlTrajectory, VoiceProfile, plosive_onsets

CODE_FIELDS = ("voiced", "stops", "open", "fronted")
VOICED_LEVEL = 0.5
VOICED_FRACTION = 0.2


class PhoneticError(ValueError):
    pass


class PhoneticCode(NamedTuple):
    voiced: bool
    has_stops: bool
    open_vowel: bool
    fronted_vowel: bool

    def as_dict(self):
        return dict(zip(CODE_FIELDS, (bool(v) for v in self)))


def _voiced(voicedness):
    return bool(np.mean(np.asarray(voicedness) > VOICED_LEVEL) >= VOICED_FRACTION)


def _modal_vowel(vowel, voice: VoiceProfile):
    counts = np.bincount(voice.nearest_vowel(vowel), minlength=len(voice.vowel_order))
    return voice.formant_table[voice.vowel_order[int(np.argmax(counts))]]


def code_utterance(traj: ControlTrajectory, voice: VoiceProfile) -> PhoneticCode:
    """Code an utterance from its control tracks alone.

    Voiced means voicedness above 0.5 in at least 20% of frames. A stop is
    any rising edge of the plosive gate through 0.5. Openness and frontness
    come from the anchor vowel nearest to the vowel track in most frames
    (ties go to the earlier vowel in the continuum).
    """
    v = _modal_vowel(traj.track("vowel"), voice)
    return PhoneticCode(_voiced(traj.track("voicedness")),
                        bool(plosive_onsets(traj.track("plosive_gate")).size),
                        bool(v.open), bool(v.front))


def space_codes(space) -> np.ndarray:
    """Codes for every utterance of a space as a (len, 4) boolean array.

    Each code field depends on one parameter only, so it is looked up per
    pattern rather than recomputed per utterance.
    """
    table = space.track_table()
    ids = space.decode_all()
    j_voice = PARAMS.index("voicedness")
    j_gate = PARAMS.index("plosive_gate")
    j_vowel = PARAMS.index("vowel")
    out = np.zeros((len(space), 4), dtype=bool)
    if space.n_params > j_voice:
        per = np.array([_voiced(t) for t in table[j_voice]])
        out[:, 0] = per[ids[:, j_voice]]
    if space.n_params > j_gate:
        per = np.array([plosive_onsets(t).size > 0 for t in table[j_gate]])
        out[:, 1] = per[ids[:, j_gate]]
    if space.n_params > j_vowel:
        vowels = [_modal_vowel(t, space.voice) for t in table[j_vowel]]
        out[:, 2] = np.array([v.open for v in vowels])[ids[:, j_vowel]]
        out[:, 3] = np.array([v.front for v in vowels])[ids[:, j_vowel]]
    return out


def feature_frequencies(dist, codes, top_k=None) -> np.ndarray:
    """Probability-weighted frequency of each code field under ``dist``.

    With ``top_k`` only the k most probable utterances count, renormalized.
    """
    p = np.asarray(getattr(dist, "probs", dist), dtype=np.float64)
    codes = np.asarray(codes, dtype=np.float64)
    if codes.shape[0] != p.shape[0]:
        raise PhoneticError("need one code per utterance of the distribution")
    if top_k is not None:
        keep = np.lexsort((np.arange(p.size), -p))[:top_k]
        q = np.zeros_like(p)
        q[keep] = p[keep]
        p = q / q.sum()
    return np.clip(p @ codes, 0.0, 1.0)


class Correlation(NamedTuple):
    r2: float
    r: float
    slope: float


def correlate(pred, human) -> Correlation:
    """Squared Pearson correlation over all cells of two aligned tables."""
    x = np.asarray(pred, dtype=np.float64).ravel()
    y = np.asarray(human, dtype=np.float64).ravel()
    if x.shape != y.shape or x.size < 2:
        raise PhoneticError("tables must be aligned and hold at least two cells")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx, syy = dx @ dx, dy @ dy
    if sxx == 0 or syy == 0:
        raise PhoneticError("correlation undefined for a zero-variance table")
    r = float(np.clip(dx @ dy / np.sqrt(sxx * syy), -1.0, 1.0))
    return Correlation(r * r, r, float(dx @ dy / sxx))


def read_human_csv(path) -> dict[str, np.ndarray]:
    """Referent id -> frequencies in ``CODE_FIELDS`` order."""
    out = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = set(("referent_id",) + CODE_FIELDS) - set(reader.fieldnames or ())
        if missing:
            raise PhoneticError(f"{path}: missing columns {sorted(missing)}")
        for row in reader:
            vals = np.array([float(row[f]) for f in CODE_FIELDS])
            if np.any((vals < 0) | (vals > 1)) or not np.all(np.isfinite(vals)):
                raise PhoneticError(f"{path}: frequencies for {row['referent_id']!r} outside [0, 1]")
            if row["referent_id"] in out:
                raise PhoneticError(f"{path}: duplicate referent {row['referent_id']!r}")
            out[row["referent_id"]] = vals
    return out


def write_human_csv(path, table: dict):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("referent_id",) + CODE_FIELDS)
        for rid, vals in table.items():
            w.writerow([rid] + [repr(float(v)) for v in vals])
