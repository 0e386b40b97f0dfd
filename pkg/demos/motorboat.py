"""Why does a person imitating a motorboat hum instead of hiss?

The motorboat in the demo corpus is mostly broadband noise with a low
engine rumble underneath. Plain feature matching (the baseline speaker)
picks the utterance closest to the whole sound, which is a hiss. The full
speaker also asks whether a listener would tell the motorboat apart from
rain, surf and wind, and the rumble is the only thing that does that.

Run from the repository root:

    python3 demos/motorboat.py
"""

import os
import tempfile

from vocalsketch.demo import demo_ontology, write_demo
from vocalsketch.inference import InferenceConfig
from vocalsketch.pipeline import open_workspace
from vocalsketch.utterance_space import build_space

root = tempfile.mkdtemp(prefix="vocalsketch-demo-")
manifest, _ = write_demo(os.path.join(root, "demo"))
# 3 patterns per parameter keeps the space at 243 utterances
ws = open_workspace(build_space(3), manifest, demo_ontology(), root, build=True, log=print)

boat = ws.index_of("motorboat")
codes = ws.codes()
rsa = ws.rsa(InferenceConfig(beta=5.0))
for model in ("baseline", "full"):
    dist = rsa.speaker(boat, model)
    best = int(dist.probs.argmax())
    print(f"\n{model} speaker, top utterance {best} "
          f"(patterns {ws.space.decode(best)}), p = {dist.probs[best]:.3f}")
    print(f"  voiced: {bool(codes[best, 0])}")
