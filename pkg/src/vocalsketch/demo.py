"""A 12-referent synthetic corpus with a 3-level ontology.

Every referent is generated from a fixed seed, so the corpus is identical
across runs. Five of the natural sounds are broadband noise; the motorboat
is broadband noise over a low pulsing rumble, which is what makes it a good
probe for the difference between the baseline and full speakers.
"""

from __future__ import annotations

import json
import os

import numpy as np
from scipy.signal import butter, sosfilt

from .corpus import ReferentRecord, write_manifest, write_wav
from .ontology import load_ontology
from .vocal_tract import SAMPLE_RATE, AudioBuffer

DURATION = 2.0
# The rumble sits in the lower third of the masculine voice range and is
# slightly louder than the hiss: loud enough to be the informative cue, quiet
# enough that plain feature matching still prefers the hiss.
MOTOR_HZ = 90.0
ENGINE_HZ = 90.0
RUMBLE_GAIN = 1.12
CRACKLE = 1.0

ONTOLOGY = [
    ("natural", "Natural sounds", ["wind", "water"]),
    ("wind", "Wind", ["wind_gust", "leaves"]),
    ("water", "Water", ["rain", "stream", "surf"]),
    ("vehicle", "Vehicle", ["boat", "engine", "horn"]),
    ("boat", "Boat", ["motorboat"]),
    ("engine", "Engine", ["engine_idle"]),
    ("horn", "Horn", ["car_horn"]),
    ("animal", "Animal", ["bird", "insect"]),
    ("bird", "Bird", ["chirp"]),
    ("insect", "Insect", ["bee"]),
    ("alarm", "Alarm", ["siren", "beeper"]),
    ("siren", "Siren", ["siren_wail"]),
    ("beeper", "Beep", ["beep"]),
]

# referent id -> (display name, ontology leaf)
REFERENTS = {
    "wind_gust": "Wind gusts",
    "leaves": "Rustling leaves",
    "rain": "Rain",
    "stream": "Stream",
    "surf": "Ocean surf",
    "motorboat": "Motorboat",
    "engine_idle": "Idling engine",
    "car_horn": "Car horn",
    "chirp": "Bird chirp",
    "bee": "Bee buzz",
    "siren_wail": "Siren",
    "beep": "Beep",
}


def ontology_document() -> list[dict]:
    doc = [{"id": nid, "name": name, "child_ids": kids} for nid, name, kids in ONTOLOGY]
    doc += [{"id": rid, "name": name, "child_ids": []} for rid, name in REFERENTS.items()]
    return doc


def demo_ontology():
    return load_ontology(ontology_document())


def _t(n):
    return np.arange(n) / SAMPLE_RATE


def _filtered(x, kind, freq, order=2):
    sos = butter(order, freq, btype=kind, fs=SAMPLE_RATE, output="sos")
    return sosfilt(sos, x)


def _pulses(freq, n, width=0.002):
    phase = np.mod(freq * _t(n), 1.0)
    return np.exp(-phase / (width * freq))


def _buzz(freq, n, t):
    # lowpassed sawtooth: a harmonic rumble with a falling spectrum
    return _filtered(2 * np.mod(freq * t, 1.0) - 1, "lowpass", 700)


def _render(rid, rng, n):
    t = _t(n)
    noise = rng.standard_normal(n)
    if rid == "wind_gust":
        swell = 0.6 - 0.4 * np.cos(2 * np.pi * 0.25 * t)
        return (0.6 * noise + _filtered(noise, "lowpass", 800, order=1)) * swell
    if rid == "leaves":
        crackle = (rng.random(n) < 0.004) * rng.standard_normal(n) * CRACKLE
        return _filtered(noise + crackle, "highpass", 500, order=1)
    if rid == "rain":
        drops = (rng.random(n) < 0.01) * rng.standard_normal(n) * CRACKLE
        return noise + drops
    if rid == "stream":
        return _filtered(noise, "lowpass", 3000, order=1) * (0.8 + 0.2 * np.sin(2 * np.pi * 3 * t))
    if rid == "surf":
        return _filtered(noise, "lowpass", 1500, order=1) * (0.5 - 0.4 * np.cos(2 * np.pi * 0.3 * t))
    if rid == "motorboat":
        rumble = _buzz(MOTOR_HZ, n, t)
        return noise + RUMBLE_GAIN * rumble / np.std(rumble)
    if rid == "engine_idle":
        # starter hiss dying away into the idle
        buzz = _buzz(ENGINE_HZ, n, t)
        return buzz / np.std(buzz) + noise * np.exp(-t / 0.5)
    if rid == "car_horn":
        return np.sign(np.sin(2 * np.pi * 420 * t)) + np.sign(np.sin(2 * np.pi * 530 * t))
    if rid == "chirp":
        phase = np.mod(6.0 * t, 1.0)
        freq = 3000 + 2500 * phase
        env = np.where(phase < 0.35, np.sin(np.pi * phase / 0.35), 0.0)
        return env * np.sin(2 * np.pi * np.cumsum(freq) / SAMPLE_RATE)
    if rid == "bee":
        freq = 220 + 8 * np.sin(2 * np.pi * 5 * t)
        phase = np.mod(np.cumsum(freq) / SAMPLE_RATE, 1.0)
        return 2 * phase - 1
    if rid == "siren_wail":
        freq = 1000 + 400 * np.sin(2 * np.pi * 0.5 * t)
        return np.sin(2 * np.pi * np.cumsum(freq) / SAMPLE_RATE)
    if rid == "beep":
        return np.sin(2 * np.pi * 1000 * t) * ((t % 0.5) < 0.25)
    raise KeyError(rid)


def referent_audio(rid, duration=DURATION) -> AudioBuffer:
    """Synthetic audio for one demo referent, peak-normalized to 0.9."""
    seed = list(REFERENTS).index(rid)
    x = _render(rid, np.random.default_rng(seed), int(round(duration * SAMPLE_RATE)))
    return AudioBuffer(0.9 * x / np.max(np.abs(x)), SAMPLE_RATE)


def write_demo(directory) -> tuple[str, str]:
    """Write audio, ontology and manifest; return (manifest path, ontology path)."""
    os.makedirs(os.path.join(directory, "audio"), exist_ok=True)
    records = []
    for rid, name in REFERENTS.items():
        rel = os.path.join("audio", f"{rid}.wav")
        write_wav(os.path.join(directory, rel), referent_audio(rid))
        records.append(ReferentRecord(rid, rel, rid, name))
    manifest = os.path.join(directory, "manifest.jsonl")
    write_manifest(manifest, records)
    onto = os.path.join(directory, "ontology.json")
    with open(onto, "w", encoding="utf-8") as fh:
        json.dump(ontology_document(), fh, indent=1)
        fh.write("\n")
    return manifest, onto
