"""``vocalsketch`` command line: build the space, extract features, imitate, retrieve, evaluate."""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import dataclass

import numpy as np

from . import cachefile
from .corpus import CorpusError, build_feature_matrix, load_audio, load_manifest, write_wav
from .demo import write_demo
from .features import FeatureError, default_registry, extract, random_lesion_indices
from .inference import MODELS, InferenceConfig, InferenceError
from .ontology import OntologyError, load_ontology
from .phonetics import CODE_FIELDS, PhoneticError, correlate, feature_frequencies, read_human_csv
from .pipeline import (Workspace, build_space_features, corpus_dir, default_cache_root,
                       feature_file, open_workspace, utterance_audio)
from .utterance_space import SpaceError, build_space
from .vocal_tract import PARAMS, TrajectoryError, get_voice

SCHEMA_VERSION = 1
DEMO_DIR = "demo"


class CLIError(Exception):
    """A user-facing failure; the message is printed and the exit code is 2."""


@dataclass(frozen=True)
class RunConfig:
    cache_root: str
    out_dir: str
    manifest: str | None
    ontology: str | None
    model: str = "full"
    voice: str = "masculine"
    beta: float = 5.0
    top_k: int = 5
    whisper: bool = False
    seed: int = 0
    patterns: int = 11
    memory_budget: int = 2 << 30
    force: bool = False
    workers: int = 1

    def __post_init__(self):
        if self.model not in MODELS:
            raise CLIError(f"--model must be one of {', '.join(MODELS)}")
        if self.top_k < 1:
            raise CLIError("--top-k must be at least 1")

    def inference(self) -> InferenceConfig:
        return InferenceConfig(beta=self.beta, whisper=self.whisper,
                               memory_budget=self.memory_budget)

    def space(self):
        return build_space(self.patterns, seed=self.seed, voice=self.voice)

    def build_command(self):
        cmd = f"vocalsketch build-space --patterns {self.patterns} --voice {self.voice} --seed {self.seed}"
        if self.manifest is None:
            return cmd + " --demo"
        return cmd + f" --manifest {self.manifest} --ontology {self.ontology}"


def parse_bytes(text):
    units = {"K": 1 << 10, "M": 1 << 20, "G": 1 << 30}
    text = text.strip().upper().removesuffix("B")
    try:
        if text and text[-1] in units:
            return int(float(text[:-1]) * units[text[-1]])
        return int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a byte count: {text!r}") from None


def _log(msg):
    print(msg, file=sys.stderr)


def _write_json(path, doc):
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def _header(kind, cfg: RunConfig, ws: Workspace):
    return {
        "schema": f"vocalsketch.{kind}",
        "schema_version": SCHEMA_VERSION,
        "model": cfg.model,
        "beta": cfg.beta,
        "whisper": cfg.whisper,
        "voice": cfg.voice,
        "seed": cfg.seed,
        "space_id": ws.space.space_id,
        "utterances": len(ws.space),
        "registry_id": ws.registry.registry_id,
        "features": len(ws.registry),
        "referents": len(ws.records),
    }


# -- corpus and caches -------------------------------------------------------

def _corpus_paths(cfg: RunConfig, create=False):
    if cfg.manifest is not None:
        if cfg.ontology is None:
            raise CLIError("--manifest needs --ontology")
        return cfg.manifest, cfg.ontology
    directory = os.path.join(cfg.cache_root, DEMO_DIR)
    if create:
        return write_demo(directory)
    manifest = os.path.join(directory, "manifest.jsonl")
    if not os.path.exists(manifest):
        raise CLIError(f"demo corpus not found under {directory}; run `{cfg.build_command()}` first")
    return manifest, os.path.join(directory, "ontology.json")


def _load_ontology(path):
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    return load_ontology(doc["nodes"] if isinstance(doc, dict) else doc)


def _workspace(cfg: RunConfig, build=False) -> Workspace:
    manifest, onto_path = _corpus_paths(cfg, create=build)
    ontology = _load_ontology(onto_path)
    try:
        return open_workspace(cfg.space(), manifest, ontology, cfg.cache_root, build=build,
                              force=cfg.force, workers=cfg.workers, log=_log)
    except cachefile.StaleCacheError as exc:
        raise CLIError(f"{exc}; rerun `{cfg.build_command()} --force`") from None
    except cachefile.CacheError as exc:
        raise CLIError(f"{exc}; run `{cfg.build_command()}` first") from None


# -- commands ----------------------------------------------------------------

def cmd_build_space(cfg: RunConfig, render_audio=False, corpus=True):
    space = cfg.space()
    if corpus:
        ws = _workspace(cfg, build=True)
        n_rows = ws.utterance_raw.shape[0]
    else:
        raw, hit = build_space_features(space, default_registry(), cfg.cache_root, cfg.force, cfg.workers)
        _log(f"utterance features: {'cache hit' if hit else 'built'} ({len(space)} rows)")
        n_rows = raw.shape[0]
    if render_audio:
        audio_dir = os.path.join(cfg.cache_root, "spaces", space.space_id, "audio")
        os.makedirs(audio_dir, exist_ok=True)
        width = len(str(len(space) - 1))
        for i in range(len(space)):
            write_wav(os.path.join(audio_dir, f"u{i:0{width}d}.wav"), utterance_audio(space, i))
    print(f"space {space.space_id}: {n_rows} utterances")
    return 0


def cmd_extract(cfg: RunConfig):
    manifest, onto_path = _corpus_paths(cfg, create=cfg.manifest is None)
    ontology = _load_ontology(onto_path)
    records = load_manifest(manifest, ontology)
    registry = default_registry()
    path = feature_file(corpus_dir(cfg.cache_root, manifest, ontology.ontology_id), registry)
    hit = os.path.exists(path) and not cfg.force
    os.makedirs(os.path.dirname(path), exist_ok=True)
    feats = build_feature_matrix(records, registry, path, cfg.workers, cfg.force)
    _log(f"corpus features: {'cache hit' if hit else 'built'} ({len(records)} rows)")
    print(f"{path}: {feats.matrix.shape[0]} referents x {feats.matrix.shape[1]} features")
    return 0


def _resolve_referent(ws: Workspace, ref, leaf):
    """Corpus index, or (None, raw features, path) for an outside recording."""
    if ref in ws.ids:
        return ws.index_of(ref), None, None
    target = os.path.abspath(ref)
    for i, rec in enumerate(ws.records):
        if os.path.abspath(rec.audio_path) == target:
            return i, None, None
    if not os.path.isfile(ref):
        raise CLIError(f"{ref!r} is neither a referent id nor an audio file")
    raw = extract(load_audio(ref), ws.registry).values
    path = ws.ontology.path(leaf) if leaf else None
    return None, raw, path


def _trace_rows(traj):
    for k, frame in enumerate(traj.frames):
        yield [k, repr(k / traj.frame_rate)] + [repr(float(v)) for v in frame]


def cmd_imitate(cfg: RunConfig, referent, leaf=None):
    ws = _workspace(cfg)
    index, raw, path = _resolve_referent(ws, referent, leaf)
    if index is None and cfg.model == "full" and path is None:
        raise CLIError("an outside recording needs --leaf (its ontology id) for --model full")
    icfg = cfg.inference()
    rsa = ws.rsa(icfg, extra=raw, extra_path=path)
    r = index if index is not None else len(ws.records)
    dist = rsa.speaker(r, cfg.model)
    codes = ws.codes()
    costs = rsa.costs
    os.makedirs(cfg.out_dir, exist_ok=True)
    ranked = []
    for rank, (u, p) in enumerate(dist.top_k(cfg.top_k), 1):
        stem = f"rank{rank:02d}-u{u}"
        traj = ws.space.realize(u)
        write_wav(os.path.join(cfg.out_dir, stem + ".wav"), utterance_audio(ws.space, u))
        with open(os.path.join(cfg.out_dir, stem + ".csv"), "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["frame", "time"] + list(PARAMS))
            w.writerows(_trace_rows(traj))
        ranked.append({
            "rank": rank,
            "utterance": int(u),
            "patterns": list(ws.space.decode(u)),
            "probability": p,
            "cost": float(costs[u]),
            "code": dict(zip(CODE_FIELDS, (bool(c) for c in codes[u]))),
            "audio": stem + ".wav",
            "trace": stem + ".csv",
        })
    doc = _header("imitate", cfg, ws)
    doc["referent"] = ws.ids[index] if index is not None else os.path.basename(referent)
    doc["top_k"] = ranked
    _write_json(os.path.join(cfg.out_dir, "report.json"), doc)
    print(f"{'rank':>4} {'utterance':>9} {'prob':>8} {'cost':>7}  code")
    for row in ranked:
        flags = " ".join(k for k, v in row["code"].items() if v) or "-"
        print(f"{row['rank']:>4} {row['utterance']:>9} {row['probability']:8.4f} {row['cost']:7.4f}  {flags}")
    return 0


def node_probabilities(ws: Workspace, probs) -> list[dict]:
    """Listener mass pooled at every ontology node above a referent."""
    mass: dict[str, float] = {}
    for p, path in zip(probs, ws.paths):
        for node in path:
            mass[node] = mass.get(node, 0.0) + float(p)
    rows = [{"id": n, "name": ws.ontology.name(n), "depth": len(ws.ontology.path(n)),
             "probability": m} for n, m in mass.items()]
    rows.sort(key=lambda d: (d["depth"], -d["probability"], d["id"]))
    return rows


def category_of(ws: Workspace, i):
    """Parent category of referent ``i`` (the leaf itself at depth 1)."""
    path = ws.paths[i]
    return path.nodes[-2] if len(path) > 1 else path.nodes[-1]


def retrieve(ws: Workspace, cfg: RunConfig, raw_features):
    rsa = ws.rsa(cfg.inference())
    return rsa.query_listener(ws.standardize(raw_features), cfg.model)


def cmd_retrieve(cfg: RunConfig, recording):
    ws = _workspace(cfg)
    if not os.path.isfile(recording):
        raise CLIError(f"recording {recording!r} not found")
    dist = retrieve(ws, cfg, extract(load_audio(recording), ws.registry).values)
    ranked = []
    for rank, (i, p) in enumerate(dist.top_k(min(cfg.top_k, len(ws.records))), 1):
        rec = ws.records[i]
        ranked.append({"rank": rank, "id": rec.id, "name": rec.display_name,
                       "path": ws.ontology.path_names(rec.ontology_leaf), "probability": p})
    doc = _header("retrieve", cfg, ws)
    doc["query"] = os.path.basename(recording)
    doc["ranked"] = ranked
    doc["nodes"] = node_probabilities(ws, dist.probs)
    _write_json(os.path.join(cfg.out_dir, "retrieve.json"), doc)
    for row in ranked:
        print(f"{row['rank']:>4} {row['probability']:8.4f}  {row['id']}  ({' > '.join(row['path'])})")
    return 0


def _labeled_set(ws: Workspace, cfg: RunConfig, labels):
    """(true referent index, raw query features) pairs."""
    if labels is not None:
        pairs = []
        base = os.path.dirname(os.path.abspath(labels))
        with open(labels, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                d = json.loads(line)
                if d.get("referent_id") not in ws.ids:
                    raise CLIError(f"{labels}:{lineno}: unknown referent {d.get('referent_id')!r}")
                audio = d["audio_path"]
                audio = audio if os.path.isabs(audio) else os.path.join(base, audio)
                pairs.append((ws.index_of(d["referent_id"]),
                              extract(load_audio(audio), ws.registry).values))
        return pairs, "labels"
    # round trip: each referent's top-1 full-model imitation is the query
    rsa = ws.rsa(cfg.inference())
    pairs = []
    for r in range(len(ws.records)):
        u = rsa.speaker(r, "full").argmax()
        pairs.append((r, extract(utterance_audio(ws.space, u), ws.registry).values))
    return pairs, "round_trip"


def confusion(true, pred, n):
    m = np.zeros((n, n), dtype=np.int64)
    np.add.at(m, (np.asarray(true), np.asarray(pred)), 1)
    return m


def evaluate(ws: Workspace, cfg: RunConfig, human=None, labels=None):
    rsa = ws.rsa(cfg.inference())
    codes = ws.codes()
    dists = [rsa.speaker(r, cfg.model) for r in range(len(ws.records))]
    pred = np.array([feature_frequencies(d, codes) for d in dists])
    out = {"feature_frequencies": {rid: dict(zip(CODE_FIELDS, map(float, row)))
                                   for rid, row in zip(ws.ids, pred)},
           "top1_codes": {rid: dict(zip(CODE_FIELDS, map(bool, codes[d.argmax()])))
                          for rid, d in zip(ws.ids, dists)}}
    if human is not None:
        table = read_human_csv(human)
        missing = [rid for rid in ws.ids if rid not in table]
        unknown = [rid for rid in table if rid not in ws.ids]
        if missing or unknown:
            raise CLIError("human table does not align with the corpus: "
                           f"missing {missing or 'none'}, unknown {unknown or 'none'}")
        corr = correlate(pred, np.array([table[rid] for rid in ws.ids]))
        out["correlation"] = {"r2": corr.r2, "r": corr.r, "slope": corr.slope}
    pairs, source = _labeled_set(ws, cfg, labels)
    true = [t for t, _ in pairs]
    top1 = [retrieve(ws, cfg, q).argmax() for _, q in pairs]
    cats = list(dict.fromkeys(category_of(ws, i) for i in range(len(ws.records))))
    cat_index = {c: k for k, c in enumerate(cats)}
    n = len(ws.records)
    out["retrieval"] = {
        "source": source,
        "trials": len(pairs),
        "referents": ws.ids,
        "confusion": confusion(true, top1, n).tolist(),
        "accuracy": float(np.mean(np.asarray(true) == np.asarray(top1))) if pairs else None,
        "categories": cats,
        "category_confusion": confusion([cat_index[category_of(ws, t)] for t in true],
                                        [cat_index[category_of(ws, p)] for p in top1],
                                        len(cats)).tolist(),
    }
    return out


def cmd_eval(cfg: RunConfig, human=None, labels=None, lesion=False):
    ws = _workspace(cfg)
    doc = _header("eval", cfg, ws)
    if lesion:
        full = evaluate(ws, cfg)["top1_codes"]
        removed = random_lesion_indices(ws.registry, 2, cfg.seed)
        ws = ws.lesioned(removed)
        doc.update(registry_id=ws.registry.registry_id, features=len(ws.registry),
                   lesioned=[default_registry().names[i] for i in removed])
    doc.update(evaluate(ws, cfg, human, labels))
    if lesion:
        same = [rid for rid in ws.ids if doc["top1_codes"][rid] == full[rid]]
        doc["unchanged_top1_codes"] = len(same)
    _write_json(os.path.join(cfg.out_dir, "eval.json"), doc)
    print(f"registry {doc['registry_id']} ({doc['features']} features)")
    print(f"{'referent':<16}" + "".join(f"{f:>9}" for f in CODE_FIELDS))
    for rid, row in doc["feature_frequencies"].items():
        print(f"{rid:<16}" + "".join(f"{row[f]:9.3f}" for f in CODE_FIELDS))
    if "correlation" in doc:
        print(f"r2 vs human: {doc['correlation']['r2']:.4f}")
    ret = doc["retrieval"]
    print(f"retrieval ({ret['source']}, {ret['trials']} trials): top-1 accuracy {ret['accuracy']:.3f}")
    if lesion:
        print(f"top-1 codes unchanged after lesion: {doc['unchanged_top1_codes']}/{len(ws.ids)}")
    return 0


# -- argument parsing --------------------------------------------------------

def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--cache-dir", default=None,
                        help="cache root (default: $VOCALSKETCH_CACHE or ~/.cache/vocalsketch)")
    common.add_argument("--out", default="vocalsketch-out", help="output directory")
    common.add_argument("--manifest", help="referent manifest (JSON lines)")
    common.add_argument("--ontology", help="ontology JSON")
    common.add_argument("--demo", action="store_true", help="use the bundled 12-referent corpus")
    common.add_argument("--model", default="full", choices=MODELS)
    common.add_argument("--beta", type=float, default=5.0)
    common.add_argument("--voice", default="masculine")
    common.add_argument("--top-k", type=int, default=5)
    common.add_argument("--whisper", action="store_true", help="only unvoiced utterances")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--patterns", type=int, default=11, help="modulation patterns per parameter")
    common.add_argument("--memory-budget", type=parse_bytes, default=2 << 30,
                        help="bytes per similarity block, e.g. 512M")
    common.add_argument("--force", action="store_true", help="rebuild caches")
    common.add_argument("--workers", type=int, default=1)

    parser = argparse.ArgumentParser(prog="vocalsketch", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("build-space", parents=[common], help="enumerate and featurize the utterance space")
    p.add_argument("--render-audio", action="store_true", help="also write every utterance as WAV")
    sub.add_parser("extract", parents=[common], help="featurize the referent corpus")
    p = sub.add_parser("imitate", parents=[common], help="rank utterances imitating a referent")
    p.add_argument("referent", help="referent id from the manifest, or a WAV file")
    p.add_argument("--leaf", help="ontology id for a WAV outside the corpus")
    p = sub.add_parser("retrieve", parents=[common], help="rank referents for a recorded imitation")
    p.add_argument("recording")
    p = sub.add_parser("eval", parents=[common], help="feature frequencies, r2 and confusion matrices")
    p.add_argument("--human", help="CSV of human phonetic feature frequencies")
    p.add_argument("--labels", help="JSON lines of {audio_path, referent_id} retrieval trials")
    p.add_argument("--lesion", action="store_true", help="remove 2 features per group")
    return parser


def _config(args) -> RunConfig:
    if args.demo and args.manifest:
        raise CLIError("--demo and --manifest are mutually exclusive")
    if not args.demo and args.manifest is None and args.command != "build-space":
        raise CLIError("give --manifest and --ontology, or --demo")
    get_voice(args.voice)
    return RunConfig(
        cache_root=args.cache_dir or default_cache_root(), out_dir=args.out,
        manifest=args.manifest, ontology=args.ontology, model=args.model, voice=args.voice,
        beta=args.beta, top_k=args.top_k, whisper=args.whisper, seed=args.seed,
        patterns=args.patterns, memory_budget=args.memory_budget, force=args.force,
        workers=args.workers)


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = _config(args)
        if args.command == "build-space":
            return cmd_build_space(cfg, args.render_audio, corpus=args.demo or args.manifest is not None)
        if args.command == "extract":
            return cmd_extract(cfg)
        if args.command == "imitate":
            return cmd_imitate(cfg, args.referent, args.leaf)
        if args.command == "retrieve":
            return cmd_retrieve(cfg, args.recording)
        return cmd_eval(cfg, args.human, args.labels, args.lesion)
    except (CLIError, CorpusError, OntologyError, SpaceError, FeatureError, InferenceError,
            PhoneticError, TrajectoryError, cachefile.CacheError, KeyError, OSError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"vocalsketch: error: {msg}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
