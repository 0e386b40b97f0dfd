"""Hierarchical sound ontology and the matching-prefix count between paths."""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass
from typing import Iterable, Mapping

log = logging.getLogger(__name__)


class OntologyError(ValueError):
    pass


class DuplicateIdError(OntologyError):
    pass


class CycleError(OntologyError):
    pass


class MultiParentError(OntologyError):
    pass


class DanglingChildError(OntologyError):
    pass


@dataclass(frozen=True)
class OntologyNode:
    id: str
    name: str
    child_ids: tuple[str, ...] = ()


@dataclass(frozen=True)
class OntologyPath:
    """Root-to-node ids; ``ontology_id`` ties the path to the ontology it came from."""

    nodes: tuple[str, ...]
    ontology_id: str

    def __post_init__(self):
        if not self.nodes:
            raise OntologyError("an ontology path cannot be empty")

    def __len__(self):
        return len(self.nodes)

    def __iter__(self):
        return iter(self.nodes)

    @property
    def leaf(self):
        return self.nodes[-1]


class Ontology:
    """An immutable forest of sound categories."""

    def __init__(self, nodes: Iterable[OntologyNode], on_multi_parent="error"):
        if on_multi_parent not in ("error", "first"):
            raise ValueError("on_multi_parent must be 'error' or 'first'")
        self.nodes: dict[str, OntologyNode] = {}
        for node in nodes:
            if node.id in self.nodes:
                raise DuplicateIdError(f"duplicate ontology id {node.id!r}")
            self.nodes[node.id] = node

        parent: dict[str, str] = {}
        children: dict[str, list[str]] = {nid: [] for nid in self.nodes}
        for node in self.nodes.values():
            for cid in node.child_ids:
                if cid not in self.nodes:
                    raise DanglingChildError(f"{node.id!r} lists unknown child {cid!r}")
                if cid == node.id:
                    raise CycleError(f"node {cid!r} is its own child")
                if cid in parent:
                    if on_multi_parent == "error":
                        raise MultiParentError(
                            f"node {cid!r} has parents {parent[cid]!r} and {node.id!r}")
                    log.info("dropping edge %s -> %s; %s already has parent %s",
                             node.id, cid, cid, parent[cid])
                    continue
                parent[cid] = node.id
                children[node.id].append(cid)
        self.parent = parent
        self.children = {k: tuple(v) for k, v in children.items()}
        self.roots = tuple(nid for nid in self.nodes if nid not in parent)

        # every node must be reachable from a root, otherwise it sits on a cycle
        seen = set()
        stack = list(self.roots)
        while stack:
            nid = stack.pop()
            seen.add(nid)
            stack.extend(self.children[nid])
        if len(seen) != len(self.nodes):
            stuck = sorted(set(self.nodes) - seen)
            raise CycleError(f"cycle through ontology nodes {stuck[:5]}")

        blob = json.dumps(sorted((n.id, n.name, self.children[n.id]) for n in self.nodes.values()))
        self.ontology_id = hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]
        self._paths: dict[str, OntologyPath] = {}

    def __len__(self):
        return len(self.nodes)

    def __contains__(self, node_id):
        return node_id in self.nodes

    @property
    def leaves(self) -> list[str]:
        return [nid for nid in self.nodes if not self.children[nid]]

    @property
    def intermediates(self) -> list[str]:
        return [nid for nid in self.nodes if self.children[nid]]

    def name(self, node_id):
        return self.nodes[node_id].name

    def path(self, node_id) -> OntologyPath:
        if node_id not in self.nodes:
            raise OntologyError(f"unknown ontology id {node_id!r}")
        cached = self._paths.get(node_id)
        if cached is None:
            chain = [node_id]
            while chain[-1] in self.parent:
                chain.append(self.parent[chain[-1]])
            cached = OntologyPath(tuple(reversed(chain)), self.ontology_id)
            self._paths[node_id] = cached
        return cached

    def path_names(self, node_id) -> list[str]:
        return [self.name(n) for n in self.path(node_id)]

    def depth_nodes(self, depth) -> list[str]:
        """Node ids at a given depth (1 = roots)."""
        return [nid for nid in self.nodes if len(self.path(nid)) == depth]


def load_ontology(document, on_multi_parent="error") -> Ontology:
    """Build an ontology from AudioSet-style records.

    ``document`` is a JSON string, a path to a JSON file, or an already
    parsed list of ``{"id", "name", "child_ids"}`` mappings. Extra keys are
    ignored.
    """
    if isinstance(document, (str, bytes)) and not str(document).lstrip().startswith("["):
        with open(document, "rb") as fh:
            document = fh.read()
    if isinstance(document, bytes):
        try:
            document = document.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise OntologyError(f"ontology is not valid UTF-8: {exc}") from None
    if isinstance(document, str):
        document = json.loads(document)
    if not isinstance(document, list):
        raise OntologyError("ontology document must be a list of node records")
    nodes = []
    for rec in document:
        if not isinstance(rec, Mapping) or "id" not in rec:
            raise OntologyError(f"malformed ontology record: {rec!r}")
        nodes.append(OntologyNode(str(rec["id"]), str(rec.get("name", rec["id"])),
                                  tuple(str(c) for c in rec.get("child_ids", ()))))
    return Ontology(nodes, on_multi_parent=on_multi_parent)


def dump_ontology(ontology: Ontology) -> list[dict]:
    return [{"id": n.id, "name": n.name, "child_ids": list(ontology.children[n.id])}
            for n in ontology.nodes.values()]


def delta(p1: OntologyPath, p2: OntologyPath) -> int:
    """Number of leading levels shared by two paths."""
    if p1.ontology_id != p2.ontology_id:
        raise OntologyError("paths come from different ontologies")
    n = 0
    for a, b in zip(p1.nodes, p2.nodes):
        if a != b:
            break
        n += 1
    return n


def ancestors(p: OntologyPath) -> list[str]:
    """Node ids of every prefix of the path, shallowest first (the path itself)."""
    return list(p.nodes)
