import string

import networkx as nx
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from drpred.chem import parse_smiles, serialize
from drpred.chem.graph import ATOM_FEATURE_WIDTH, BOND_FEATURE_WIDTH
from drpred.errors import ParseError

from corpus_util import corpus_molecules


def to_networkx(graph):
    g = nx.Graph()
    for i, a in enumerate(graph.atoms):
        g.add_node(i, element=a.element, charge=a.charge, aromatic=a.aromatic, hcount=a.hcount)
    for b in graph.bonds:
        g.add_edge(b.u, b.v, order=b.order)
    return g


def isomorphic(g1, g2):
    return nx.is_isomorphic(
        to_networkx(g1),
        to_networkx(g2),
        node_match=lambda a, b: all(a[k] == b[k] for k in ("element", "charge", "aromatic", "hcount")),
        edge_match=lambda a, b: a["order"] == b["order"],
    )


class TestParse:
    def test_ethane(self):
        g = parse_smiles("CC")
        assert g.n_atoms == 2
        assert g.n_bonds == 1
        assert g.bonds[0].order == "single"
        assert [a.hcount for a in g.atoms] == [3, 3]

    def test_acetic_acid(self):
        g = parse_smiles("CC(=O)O")
        assert g.n_atoms == 4
        orders = sorted(b.order for b in g.bonds)
        assert orders == ["double", "single", "single"]
        double = [b for b in g.bonds if b.order == "double"][0]
        elems = {g.atoms[double.u].element, g.atoms[double.v].element}
        assert elems == {"C", "O"}

    def test_benzene(self):
        g = parse_smiles("c1ccccc1")
        assert g.n_atoms == 6
        assert g.n_bonds == 6
        assert all(a.aromatic for a in g.atoms)
        assert all(b.order == "aromatic" for b in g.bonds)
        assert all(a.hcount == 1 for a in g.atoms)

    def test_bracket_atoms(self):
        g = parse_smiles("[NH3+]CC(=O)[O-]")
        n = g.atoms[0]
        assert (n.element, n.charge, n.hcount) == ("N", 1, 3)
        o = g.atoms[-1]
        assert (o.element, o.charge, o.hcount) == ("O", -1, 0)

    def test_double_minus_charge(self):
        g = parse_smiles("[S--]")
        assert g.atoms[0].charge == -2
        g = parse_smiles("[S-2]")
        assert g.atoms[0].charge == -2

    def test_percent_ring_closure(self):
        g = parse_smiles("C%12CCCC%12")
        assert g.n_bonds == 5

    def test_stereo_marks_ignored(self):
        g = parse_smiles("C/C=C\\C")
        assert g.n_atoms == 4
        assert sorted(b.order for b in g.bonds) == ["double", "single", "single"]
        g = parse_smiles("[C@H](C)(N)O")
        assert g.n_atoms == 4

    @pytest.mark.parametrize(
        "bad, offset",
        [
            ("CC(C", 2),       # unbalanced '('
            ("CC)C", 2),       # unbalanced ')'
            ("C1CC", 1),       # unmatched ring closure
            ("CXC", 1),        # unknown element
            ("CC.CC", 2),      # multi-fragment dot
            ("", 0),           # empty input
            ("C=", 1),         # dangling bond
            ("C==C", 2),       # double bond symbol
            ("[13C]", 1),      # isotopes unsupported
            ("C1C1", 3),       # self-bond via adjacent closure digits? pair dup
            ("C:C", 1),        # aromatic bond between aliphatic atoms
            ("[Zz]", 1),       # unknown bracket element
            ("C%1C", 1),       # short percent closure
        ],
    )
    def test_parse_errors_carry_offset(self, bad, offset):
        with pytest.raises(ParseError) as exc:
            parse_smiles(bad)
        assert exc.value.offset == offset

    def test_conflicting_ring_bond_orders(self):
        with pytest.raises(ParseError):
            parse_smiles("C=1CCCC-1")

    def test_duplicate_bond(self):
        with pytest.raises(ParseError):
            parse_smiles("C12CC12")


class TestFeatures:
    def test_feature_widths(self):
        g = parse_smiles("Cc1ccccc1")
        assert g.atom_features().shape == (7, ATOM_FEATURE_WIDTH)
        assert g.bond_features().shape == (7, BOND_FEATURE_WIDTH)

    def test_bond_one_hot(self):
        g = parse_smiles("C=C")
        feats = g.bond_features()
        assert feats.sum() == 1.0
        assert feats[0, 1] == 1.0  # double is index 1


class TestSerialize:
    def test_ethane_round_trip(self):
        g = parse_smiles(serialize(parse_smiles("CC")))
        assert g.n_atoms == 2
        assert g.n_bonds == 1

    def test_benzene_round_trip(self):
        g = parse_smiles(serialize(parse_smiles("c1ccccc1")))
        assert g.n_atoms == 6
        assert all(a.aromatic for a in g.atoms)
        assert all(b.order == "aromatic" for b in g.bonds)

    def test_single_bond_between_aromatics_kept_single(self):
        g = parse_smiles(serialize(parse_smiles("c1ccccc1-c1ccccc1")))
        singles = [b for b in g.bonds if b.order == "single"]
        assert len(singles) == 1

    @pytest.mark.parametrize("smiles", corpus_molecules())
    def test_corpus_round_trip_isomorphic(self, smiles):
        g = parse_smiles(smiles)
        again = parse_smiles(serialize(g))
        assert again.n_atoms == g.n_atoms
        assert sorted(b.order for b in again.bonds) == sorted(b.order for b in g.bonds)
        assert isomorphic(g, again)

    def test_serialization_canonical_under_relabeling(self):
        # The same molecule entered through different atom orders.
        variants = ["OC(=O)c1ccccc1", "c1ccccc1C(O)=O", "c1ccc(cc1)C(=O)O"]
        outputs = {serialize(parse_smiles(s)) for s in variants}
        assert len(outputs) == 1


@settings(max_examples=300, deadline=None)
@given(st.text(alphabet=string.printable, max_size=40))
def test_parser_never_crashes(text):
    try:
        parse_smiles(text)
    except ParseError:
        pass
