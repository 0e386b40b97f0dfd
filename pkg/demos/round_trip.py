"""Retrieval from an imitation.

Each referent is imitated by the full speaker, the winning utterance is
rendered to audio, and the listener is asked what sound it was. Listener
mass is pooled per category (the leaf's parent), since a synthesized voice
rarely pins down the exact sound but often lands in the right family.
"""

import os
import tempfile

from vocalsketch.demo import demo_ontology, write_demo
from vocalsketch.features import extract
from vocalsketch.inference import InferenceConfig
from vocalsketch.pipeline import open_workspace, utterance_audio
from vocalsketch.utterance_space import build_space

root = tempfile.mkdtemp(prefix="vocalsketch-demo-")
manifest, _ = write_demo(os.path.join(root, "demo"))
ws = open_workspace(build_space(3), manifest, demo_ontology(), root, build=True)
rsa = ws.rsa(InferenceConfig(beta=5.0))

top1 = top3 = 0
for r, rid in enumerate(ws.ids):
    best = int(rsa.speaker(r).probs.argmax())
    raw = extract(utterance_audio(ws.space, best), ws.registry).values
    post = rsa.query_listener(ws.standardize(raw)).probs
    pooled = {}
    for p, path in zip(post, ws.paths):
        pooled[path.nodes[-2]] = pooled.get(path.nodes[-2], 0.0) + p
    ranked = sorted(pooled, key=lambda c: (-pooled[c], c))
    truth = ws.paths[r].nodes[-2]
    top1 += ranked[0] == truth
    top3 += truth in ranked[:3]
    print(f"{rid:12s} true {truth:8s} guesses {', '.join(ranked[:3])}")
print(f"\nright category first: {top1}/12, within top 3: {top3}/12")
