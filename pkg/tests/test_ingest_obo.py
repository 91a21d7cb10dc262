import numpy as np
import pytest

from dogma.errors import DogmaError, ParseError
from dogma.ingest import parse_obo, write_obo
from dogma.ingest.types import OntologyDag

BASIC = """\
format-version: 1.2

[Term]
id: CT:0000000
name: cell

[Term]
id: CT:0000001
name: neuron
is_a: CT:0000000 ! cell

[Term]
id: CT:0000002
name: glia
is_a: CT:0000000
"""


def test_three_stanzas_two_edges(tmp_path):
    p = tmp_path / "a.obo"
    p.write_text(BASIC)
    dag = parse_obo(p)
    assert len(dag) == 3
    assert dag.n_edges == 2
    assert dag.parents["CT:0000001"] == ("CT:0000000",)
    assert dag.terms["CT:0000001"] == "neuron"


def test_obsolete_term_excluded(tmp_path):
    p = tmp_path / "a.obo"
    p.write_text(BASIC + "\n[Term]\nid: CT:9\nname: gone\nis_obsolete: true\n")
    dag = parse_obo(p)
    assert "CT:9" not in dag
    assert len(dag) == 3


def test_reference_to_obsolete_rejected(tmp_path):
    p = tmp_path / "a.obo"
    p.write_text(BASIC +
                 "\n[Term]\nid: CT:9\nname: gone\nis_obsolete: true\n"
                 "\n[Term]\nid: CT:10\nis_a: CT:9\n")
    with pytest.raises(ParseError) as err:
        parse_obo(p)
    assert "obsolete" in str(err.value)


def test_self_loop_is_cycle_error(tmp_path):
    p = tmp_path / "a.obo"
    p.write_text("[Term]\nid: A\nis_a: A\n")
    with pytest.raises(ParseError) as err:
        parse_obo(p)
    assert "cycle" in str(err.value)
    assert "A" in str(err.value)


def test_longer_cycle_named(tmp_path):
    p = tmp_path / "a.obo"
    p.write_text("[Term]\nid: A\nis_a: B\n\n[Term]\nid: B\nis_a: A\n")
    with pytest.raises(ParseError) as err:
        parse_obo(p)
    msg = str(err.value)
    assert "A" in msg and "B" in msg


def test_undeclared_target_names_line(tmp_path):
    p = tmp_path / "a.obo"
    p.write_text("[Term]\nid: A\nis_a: MISSING\n")
    with pytest.raises(ParseError) as err:
        parse_obo(p)
    assert "MISSING" in str(err.value)
    assert err.value.line == 3


def test_typedef_and_unknown_tags_ignored(tmp_path):
    p = tmp_path / "a.obo"
    p.write_text("[Typedef]\nid: part_of\n\n" + BASIC +
                 "relationship: part_of CT:0000001\nxref: X:1\n")
    dag = parse_obo(p)
    assert len(dag) == 3
    assert dag.n_edges == 2        # relationship: lines contribute nothing


def test_duplicate_id_rejected(tmp_path):
    p = tmp_path / "a.obo"
    p.write_text("[Term]\nid: A\n\n[Term]\nid: A\n")
    with pytest.raises(ParseError):
        parse_obo(p)


def _random_dag(rng, n_terms=12, p_edge=0.35) -> OntologyDag:
    ids = [f"T:{i:03d}" for i in range(n_terms)]
    terms = {t: f"term {i}" for i, t in enumerate(ids)}
    parents = {}
    for i, t in enumerate(ids):
        # edges only toward earlier ids: acyclic by construction
        choices = [ids[j] for j in range(i) if rng.random() < p_edge]
        parents[t] = tuple(choices)
    return OntologyDag(terms, parents)


def test_round_trip_many_seeds(tmp_path):
    for trial in range(100):
        rng = np.random.default_rng(2000 + trial)
        dag = _random_dag(rng)
        p = tmp_path / f"t{trial}.obo"
        write_obo(dag, p)
        assert parse_obo(p) == dag


def test_topological_order_deterministic(tmp_path):
    rng = np.random.default_rng(11)
    dag = _random_dag(rng, n_terms=30)
    order1 = dag.topological_order()
    dag2 = OntologyDag(dag.terms, dag.parents)
    assert order1 == dag2.topological_order()
    pos = {t: i for i, t in enumerate(order1)}
    for child, ps in dag.parents.items():
        for parent in ps:
            assert pos[parent] < pos[child]


def test_fuzz_never_panics(tmp_path):
    rng = np.random.default_rng(88)
    for i in range(100):
        blob = bytes(rng.integers(0, 256, size=rng.integers(0, 300)))
        p = tmp_path / "fuzz.obo"
        p.write_bytes(blob)
        try:
            parse_obo(p)
        except DogmaError:
            pass
