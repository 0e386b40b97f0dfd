"""The thirteen acceptance criteria, each at its stated tolerance.

Every test records a one-line verdict; the lines are collected in the
"acceptance criteria" section at the end of the pytest run.
"""

import filecmp
import itertools
import os
import time

import numpy as np
import pytest

from vocalsketch.cli import main
from vocalsketch.demo import demo_ontology
from vocalsketch.features import default_registry, extract, random_lesion_indices, stft_tracks
from vocalsketch.inference import (RSA, InferenceConfig, SimilarityMatrix, expected_utility,
                                   utterance_cost)
from vocalsketch.ontology import delta, load_ontology
from vocalsketch.pipeline import utterance_audio, utterance_features
from vocalsketch.utterance_space import build_space
from vocalsketch.vocal_tract import SAMPLE_RATE, AudioBuffer, ControlTrajectory, get_voice

from test_inference import TOY_BETA, TOY_R, TOY_U, random_ontology, toy_hand
from test_ontology import PETS

MODELS = ("baseline", "communicative", "full")


def test_c01_space_cardinality(criterion):
    t0 = time.perf_counter()
    full = build_space(11)
    n_full = len(full)
    specs = full.decode_all()
    elapsed = time.perf_counter() - t0
    n_small = len(build_space(3))
    ok = n_full == 161_051 and specs.shape[0] == 161_051 and n_small == 243 and elapsed < 1.0
    assert criterion(1, ok, f"|U| = {n_full} (11 patterns), {n_small} (3 patterns); "
                            f"enumerated in {elapsed:.3f} s")


def test_c02_ontology_delta(criterion):
    pets = load_ontology(PETS)
    bark_meow = delta(pets.path("bark7"), pets.path("meow4"))
    onto = demo_ontology()
    paths = [onto.path(n) for n in onto.nodes]
    self_ok = all(delta(p, p) == len(p) for p in paths)
    sym_ok = all(delta(a, b) == delta(b, a) for a, b in itertools.product(paths, repeat=2))
    ok = bark_meow == 2 and self_ok and sym_ok
    assert criterion(2, ok, f"Bark#7 vs Meow#4 = {bark_meow}; self-delta = length: {self_ok}; "
                            f"symmetric over {len(paths) ** 2} demo pairs: {sym_ok}")


def _hygienic(d):
    p = d.probs
    return abs(p.sum() - 1.0) <= 1e-9 and np.all(p >= 0) and np.all(np.isfinite(p))


def test_c03_distribution_hygiene(criterion, demo_ws):
    checked = bad = 0
    for whisper in (False, True):
        rsa = demo_ws.rsa(InferenceConfig(whisper=whisper))
        for model in MODELS:
            # a level-2 listener hearing an utterance no speaker may produce
            # has no posterior at all (EmptySupportError), so those are skipped
            heard = range(len(demo_ws.space)) if model == "baseline" else np.flatnonzero(~rsa.excluded)
            dists = [rsa.speaker(r, model) for r in range(len(demo_ws.records))]
            dists += [rsa.listener(u, model) for u in heard]
            dists.append(rsa.query_listener(demo_ws.utterance_features[5], model))
            checked += len(dists)
            bad += sum(not _hygienic(d) for d in dists)
    assert criterion(3, bad == 0, f"{checked} distributions (3 models x whisper on/off), {bad} violations")


def test_c04_rsa_disambiguation(criterion):
    t0 = time.perf_counter()
    sim = SimilarityMatrix(TOY_U, TOY_R)
    rsa = RSA(sim, InferenceConfig(beta=TOY_BETA))
    s1, s2, l2 = toy_hand()
    got_s1 = rsa.speaker(1, "baseline").probs
    got_s2 = rsa.speaker(1, "communicative").probs
    got_l2 = rsa.listener(1, "communicative").probs
    err = max(np.abs(got_s1 - s1[1]).max(), np.abs(got_s2 - s2[1]).max(), np.abs(got_l2 - l2[1]).max())
    elapsed = time.perf_counter() - t0
    ok = got_s2[1] > got_s1[1] and got_l2[1] > 0.5 and err <= 1e-9 and elapsed < 1.0
    assert criterion(4, ok, f"p_S2(u2|r2) = {got_s2[1]:.4f} > p_S(u2|r2) = {got_s1[1]:.4f}; "
                            f"p_L2(r2|u2) = {got_l2[1]:.4f}; max error {err:.1e}; {elapsed:.3f} s")


def test_c05_utility_oracle(criterion):
    t0 = time.perf_counter()
    rng = np.random.default_rng(55)
    worst = 0.0
    for _ in range(100):
        n_r, n_u = int(rng.integers(1, 51)), int(rng.integers(1, 21))
        _, paths = random_ontology(rng, n_r)
        sim = SimilarityMatrix(rng.normal(size=(n_u, 8)), rng.normal(size=(n_r, 8)))
        rsa = RSA(sim, InferenceConfig(beta=float(rng.uniform(0.5, 10))), paths=paths)
        dmat = np.array([[delta(a, b) for b in paths] for a in paths], dtype=np.float64)
        for u in range(n_u):
            listener = rsa.baseline_listener(u)
            brute = dmat @ listener.probs
            agg = rsa.utility_tile(slice(u, u + 1), slice(0, n_r))[0]
            single = [expected_utility(r, listener, paths) for r in range(n_r)]
            worst = max(worst, np.abs(agg - brute).max(), np.abs(np.array(single) - brute).max())
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-9 and elapsed < 10.0
    assert criterion(5, ok, f"100 fixtures, max |aggregated - brute force| = {worst:.1e}; {elapsed:.2f} s")


def test_c06_cost_model(criterion, demo_ws):
    voice = get_voice("masculine")
    cfg = InferenceConfig()
    base = dict(f0=140.0, loudness=0.5, vowel=0.5, plosive_gate=0.5, voicedness=0.5)
    c_mid = utterance_cost(ControlTrajectory.constant(2.0, **base), cfg, voice)
    c_loud = utterance_cost(ControlTrajectory.constant(2.0, **{**base, "loudness": 1.0}), cfg, voice)
    rsa = demo_ws.rsa(InferenceConfig(whisper=True))
    voiced = demo_ws.codes()[:, 0]
    mass = max(rsa.speaker(r, m).probs[voiced].sum() for r in range(12) for m in MODELS)
    ok = c_mid == 0.0 and c_loud == cfg.w_extreme / 5 and mass == 0.0
    assert criterion(6, ok, f"mid-range cost {c_mid}; max-loudness cost {c_loud} "
                            f"(w_extreme/5 = {cfg.w_extreme / 5}); whisper mass on voiced = {mass}")


def motorboat_check(ws, beta):
    reg = ws.registry
    flat = ws.utterance_raw[:, reg.names.index("flatness.global.value")]
    median = np.median(flat)
    rsa = ws.rsa(InferenceConfig(beta=beta))
    boat = ws.index_of("motorboat")
    b = rsa.speaker(boat, "baseline").argmax()
    f = rsa.speaker(boat, "full").argmax()
    codes = ws.codes()
    f0_norm = ws.space.realize(f).normalized(ws.space.voice)[:, 0].mean()
    ok = (not codes[b, 0]) and flat[b] > median and codes[f, 0] and f0_norm < 1 / 3
    detail = (f"beta={beta:g}: baseline u{b} voiced={bool(codes[b, 0])} flatness {flat[b]:.2f} "
              f"(median {median:.2f}); full u{f} voiced={bool(codes[f, 0])} f0 at {f0_norm:.2f} of range")
    return ok, detail


def test_c07_motorboat(criterion, demo_ws):
    t0 = time.perf_counter()
    results = [motorboat_check(demo_ws, beta) for beta in (1.0, 5.0, 10.0)]
    elapsed = time.perf_counter() - t0
    ok = all(r[0] for r in results) and elapsed < 30.0
    assert criterion(7, ok, "; ".join(r[1] for r in results) + f"; {elapsed:.2f} s")


def test_c08_feature_sanity(criterion):
    t = np.arange(SAMPLE_RATE) / SAMPLE_RATE
    noise = np.random.default_rng(0).standard_normal(SAMPLE_RATE)
    flat_noise = stft_tracks(AudioBuffer(0.3 * noise / np.abs(noise).max(), SAMPLE_RATE)).flatness.mean()
    flat_sine = stft_tracks(AudioBuffer(0.5 * np.sin(2 * np.pi * 440 * t), SAMPLE_RATE)).flatness.mean()
    centroid = stft_tracks(AudioBuffer(0.5 * np.sin(2 * np.pi * 1000 * t), SAMPLE_RATE)).centroid.mean()
    ok = flat_noise > 0.9 and flat_sine < 0.05 and abs(centroid - 1000) <= 7.8125
    assert criterion(8, ok, f"flatness(noise) {flat_noise:.3f}, flatness(440 Hz) {flat_sine:.4f}, "
                            f"centroid(1 kHz) {centroid:.2f} Hz")


def test_c09_blocked_equivalence(criterion, demo_ws):
    n_r = len(demo_ws.records)
    dists = {}
    for block in (1, 7, 64, n_r):
        rsa = demo_ws.rsa(InferenceConfig(block_size=block))
        dists[block] = np.array([rsa.speaker(r, "full").probs for r in range(n_r)])
    worst = max(np.abs(d - dists[n_r]).max() for d in dists.values())
    assert criterion(9, worst <= 1e-9, f"block sizes 1, 7, 64, {n_r}: max difference {worst:.1e}")


def round_trip_hits(ws):
    rsa = ws.rsa(InferenceConfig())
    hits = []
    for r in range(len(ws.records)):
        u = rsa.speaker(r, "full").argmax()
        query = ws.standardize(extract(utterance_audio(ws.space, u), ws.registry).values)
        listener = rsa.query_listener(query, "full")
        pooled = {}
        for p, path in zip(listener.probs, ws.paths):
            pooled[path.nodes[-2]] = pooled.get(path.nodes[-2], 0.0) + p
        top3 = sorted(pooled, key=lambda c: (-pooled[c], c))[:3]
        hits.append(ws.paths[r].nodes[-2] in top3)
    return hits


def test_c10_round_trip(criterion, demo_ws):
    t0 = time.perf_counter()
    hits = round_trip_hits(demo_ws)
    elapsed = time.perf_counter() - t0
    missed = [rid for rid, h in zip(demo_ws.ids, hits) if not h]
    ok = sum(hits) >= 9 and elapsed < 120
    assert criterion(10, ok, f"true parent in top-3 categories for {sum(hits)}/12 "
                             f"(missed: {', '.join(missed) or 'none'}); {elapsed:.2f} s")


def test_c11_lesion(criterion, demo_ws):
    removed = random_lesion_indices(demo_ws.registry, 2, 0)
    full = demo_ws.rsa(InferenceConfig())
    small_ws = demo_ws.lesioned(removed)
    small = small_ws.rsa(InferenceConfig())
    codes = demo_ws.codes()
    same = sum(np.array_equal(codes[full.speaker(r, "full").argmax()], codes[small.speaker(r, "full").argmax()])
               for r in range(12))
    names = ", ".join(default_registry().names[i] for i in removed)
    assert criterion(11, same >= 8, f"top-1 code unchanged for {same}/12 with "
                                    f"{len(small_ws.registry)} features (removed {names})")


def _demo_run(root, out):
    args = ["--demo", "--patterns", "3", "--cache-dir", str(root)]
    assert main(["build-space", *args]) == 0
    assert main(["imitate", "motorboat", *args, "--out", str(out / "imitate")]) == 0
    wav = out / "imitate" / sorted(f for f in os.listdir(out / "imitate") if f.endswith(".wav"))[0]
    assert main(["retrieve", str(wav), *args, "--out", str(out / "retrieve")]) == 0
    assert main(["eval", *args, "--out", str(out / "eval")]) == 0


def test_c12_performance(criterion, tmp_path, capsys):
    t0 = time.perf_counter()
    _demo_run(tmp_path / "cache", tmp_path / "out")
    demo_seconds = time.perf_counter() - t0
    capsys.readouterr()

    space = build_space(11)
    workers = os.cpu_count() or 1
    n = 1024 * workers

    utterance_features(build_space(3), workers=1)     # compile and warm caches outside the timing
    t0 = time.perf_counter()
    utterance_features(space, workers=workers, stop=n)
    rate = n / (time.perf_counter() - t0)
    full_minutes = len(space) / rate / 60
    ok = demo_seconds < 10 and rate >= 500
    assert criterion(12, ok, f"demo pipeline {demo_seconds:.2f} s; feature extraction {rate:.0f} "
                             f"utterances/s on {workers} core(s), about {full_minutes:.1f} min for the "
                             f"full space (reference point: 14 min)")


def _files(root):
    out = []
    for d, _, names in os.walk(root):
        out += [os.path.relpath(os.path.join(d, f), root) for f in names]
    return sorted(out)


def test_c13_determinism(criterion, tmp_path, capsys):
    for run in ("a", "b"):
        _demo_run(tmp_path / run / "cache", tmp_path / run / "out")
    capsys.readouterr()
    mismatched = []
    compared = 0
    for part in ("cache", "out"):
        left, right = tmp_path / "a" / part, tmp_path / "b" / part
        names = _files(left)
        if names != _files(right):
            mismatched.append(f"{part}: file lists differ")
            continue
        for name in names:
            compared += 1
            if not filecmp.cmp(left / name, right / name, shallow=False):
                mismatched.append(name)
    ok = not mismatched and compared > 0
    assert criterion(13, ok, f"{compared} cache and report files compared byte for byte; "
                             f"mismatches: {', '.join(mismatched) or 'none'}")


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q"]))
