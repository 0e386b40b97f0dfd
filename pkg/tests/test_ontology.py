import itertools
import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from vocalsketch.demo import demo_ontology
from vocalsketch.ontology import (CycleError, DanglingChildError, DuplicateIdError, MultiParentError,
                                  OntologyError, ancestors, delta, dump_ontology, load_ontology)


def node(nid, *kids):
    return {"id": nid, "name": nid.title(), "child_ids": list(kids)}


PETS = [
    node("animal", "pets", "wild"),
    node("pets", "dog", "cat"),
    node("dog", "bark"),
    node("bark", "bark7"),
    node("bark7"),
    node("cat", "meow"),
    node("meow", "meow4"),
    node("meow4"),
    node("wild", "roar"),
    node("roar"),
    node("music", "drum"),
    node("drum"),
]


def full_scale_document():
    # 8 roots with 6 children each (56 intermediates), 3 leaves under each child
    doc = []
    for r in range(8):
        mids = [f"r{r}m{m}" for m in range(6)]
        doc.append(node(f"r{r}", *mids))
        for mid in mids:
            leaves = [f"{mid}l{k}" for k in range(3)]
            doc.append(node(mid, *leaves))
            doc += [node(leaf) for leaf in leaves]
    return doc


def test_bark_vs_meow():
    onto = load_ontology(PETS)
    assert delta(onto.path("bark7"), onto.path("meow4")) == 2


def test_self_delta_and_different_roots():
    onto = load_ontology(PETS)
    p = onto.path("meow4")
    assert delta(p, p) == len(p) == 5
    assert delta(p, onto.path("drum")) == 0


def test_counts():
    onto = load_ontology(full_scale_document())
    assert len(onto.leaves) == 144
    assert len(onto.intermediates) == 56
    single = load_ontology([node("only")])
    assert len(single.leaves) == 1 and len(single.intermediates) == 0


def test_validation_errors():
    with pytest.raises(CycleError):
        load_ontology([node("a", "b"), node("b", "a")])
    with pytest.raises(CycleError):
        load_ontology([node("a", "a")])
    with pytest.raises(DuplicateIdError):
        load_ontology([node("a"), node("a")])
    with pytest.raises(DanglingChildError):
        load_ontology([node("a", "ghost")])
    with pytest.raises(MultiParentError):
        load_ontology([node("a", "c"), node("b", "c"), node("c")])
    for err in (CycleError, DuplicateIdError, DanglingChildError, MultiParentError):
        assert issubclass(err, OntologyError)


def test_multi_parent_keep_first():
    onto = load_ontology([node("a", "c"), node("b", "c"), node("c")], on_multi_parent="first")
    assert onto.path("c").nodes == ("a", "c")
    assert onto.children["b"] == ()


def test_load_from_text_and_file(tmp_path):
    text = json.dumps(PETS)
    assert load_ontology(text).ontology_id == load_ontology(PETS).ontology_id
    path = tmp_path / "onto.json"
    path.write_text(text, encoding="utf-8")
    assert load_ontology(str(path)).ontology_id == load_ontology(PETS).ontology_id
    path.write_bytes(b"[\xff]")
    with pytest.raises(OntologyError):
        load_ontology(str(path))


def test_dump_round_trip():
    onto = load_ontology(PETS)
    assert load_ontology(dump_ontology(onto)).ontology_id == onto.ontology_id


def test_cross_ontology_delta_rejected():
    a = load_ontology(PETS)
    b = load_ontology(full_scale_document())
    with pytest.raises(OntologyError):
        delta(a.path("bark7"), b.path("r0m0l0"))


def test_ancestors():
    onto = load_ontology(PETS)
    p = onto.path("bark7")
    assert ancestors(p) == ["animal", "pets", "dog", "bark", "bark7"]
    assert ancestors(onto.path("drum")) == ["music", "drum"]
    assert ancestors(onto.path("music")) == ["music"]
    q = onto.path("meow4")
    assert delta(p, q) == len(set(ancestors(p)) & set(ancestors(q)))


def all_paths(onto):
    return [onto.path(n) for n in onto.nodes]


@pytest.mark.parametrize("onto", [demo_ontology(), load_ontology(PETS)], ids=["demo", "pets"])
def test_delta_properties_exhaustive(onto):
    paths = all_paths(onto)
    for a, b in itertools.product(paths, repeat=2):
        d = delta(a, b)
        assert d == delta(b, a)
        assert 0 <= d <= min(len(a), len(b))
    for a, b, c in itertools.product(paths, repeat=3):
        assert delta(a, c) >= min(delta(a, b), delta(b, c))


BIG = load_ontology(full_scale_document())
BIG_IDS = sorted(BIG.nodes)


@given(st.sampled_from(BIG_IDS), st.sampled_from(BIG_IDS), st.sampled_from(BIG_IDS))
def test_ultrametric_sampled(a, b, c):
    pa, pb, pc = BIG.path(a), BIG.path(b), BIG.path(c)
    assert delta(pa, pc) >= min(delta(pa, pb), delta(pb, pc))
