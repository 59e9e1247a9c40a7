"""SMILES parsing, molecular graphs, and junction-tree decomposition."""

from drpred.chem.graph import Atom, Bond, MolecularGraph
from drpred.chem.smiles import parse_smiles, serialize
from drpred.chem.junction import JunctionTree, Cluster, decompose
from drpred.chem.vocab import ClusterVocabulary, build_vocabulary, EMBED_WIDTH

__all__ = [
    "Atom",
    "Bond",
    "MolecularGraph",
    "parse_smiles",
    "serialize",
    "JunctionTree",
    "Cluster",
    "decompose",
    "ClusterVocabulary",
    "build_vocabulary",
    "EMBED_WIDTH",
]
