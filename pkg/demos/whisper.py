"""Imitating with a whisper.

With the whisper constraint every utterance that is voiced for more than
a short stretch is dropped from the speaker's support. The speaker then
has to carry the same distinctions with timbre and loudness alone.
"""

import os
import tempfile

from vocalsketch.demo import demo_ontology, write_demo
from vocalsketch.inference import InferenceConfig
from vocalsketch.pipeline import open_workspace
from vocalsketch.utterance_space import build_space

root = tempfile.mkdtemp(prefix="vocalsketch-demo-")
manifest, _ = write_demo(os.path.join(root, "demo"))
ws = open_workspace(build_space(3), manifest, demo_ontology(), root, build=True)

for whisper in (False, True):
    rsa = ws.rsa(InferenceConfig(beta=5.0, whisper=whisper))
    print(f"\nwhisper={whisper}")
    for rid in ("motorboat", "bee", "rain"):
        dist = rsa.speaker(ws.index_of(rid))
        support = int((dist.probs > 0).sum())
        best = int(dist.probs.argmax())
        print(f"  {rid:10s} top {best:4d}  p={dist.probs[best]:.3f}  support {support}")
