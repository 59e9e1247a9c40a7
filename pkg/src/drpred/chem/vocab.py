"""Cluster vocabulary: canonical labels plus their embedding table."""

from __future__ import annotations

import hashlib

import numpy as np

from drpred.errors import DataError, ParseError, VocabularyError
from drpred.rng import SplitRng
from drpred.chem.smiles import parse_smiles
from drpred.chem.junction import JunctionTree, decompose

EMBED_WIDTH = 64


class ClusterVocabulary:
    """Ordered unique cluster labels with an index map and embeddings."""

    def __init__(self, labels, embedding: np.ndarray | None = None, seed: int = 0):
        self.labels = list(labels)
        if len(set(self.labels)) != len(self.labels):
            raise DataError("vocabulary labels must be unique")
        self.index = {label: i for i, label in enumerate(self.labels)}
        if embedding is None:
            rng = SplitRng(seed)
            embedding = rng.uniform(-0.1, 0.1, (len(self.labels), EMBED_WIDTH))
        if embedding.shape != (len(self.labels), EMBED_WIDTH):
            raise DataError(
                f"embedding shape {embedding.shape} does not match "
                f"({len(self.labels)}, {EMBED_WIDTH})"
            )
        self.embedding = embedding

    def __len__(self):
        return len(self.labels)

    def __contains__(self, label):
        return label in self.index

    def id_of(self, label: str) -> int:
        try:
            return self.index[label]
        except KeyError:
            raise VocabularyError(label) from None

    def assign_ids(self, tree: JunctionTree) -> list[int]:
        """Resolve every cluster label to its vocabulary id, in place."""
        tree.vocab_ids = [self.id_of(c.label) for c in tree.clusters]
        return tree.vocab_ids

    def content_hash(self) -> bytes:
        return hashlib.sha256("\n".join(self.labels).encode("utf-8")).digest()

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            for label in self.labels:
                fh.write(label + "\n")

    @classmethod
    def load(cls, path, embedding=None, seed: int = 0):
        with open(path, encoding="utf-8") as fh:
            labels = [line.rstrip("\n") for line in fh if line.strip()]
        return cls(labels, embedding=embedding, seed=seed)


def build_vocabulary(corpus, seed: int = 0) -> ClusterVocabulary:
    """Collect sorted unique cluster labels over a SMILES corpus.

    Any parse failure aborts with the 1-based offending line number.
    """
    labels = set()
    for lineno, smiles in enumerate(corpus, start=1):
        try:
            tree = decompose(parse_smiles(smiles))
        except ParseError as exc:
            raise DataError(f"line {lineno}: cannot parse {smiles!r}: {exc}") from exc
        labels.update(c.label for c in tree.clusters)
    return ClusterVocabulary(sorted(labels), seed=seed)


def read_smiles_corpus(path) -> list[str]:
    """One SMILES per line; blank lines and '#' comments are skipped."""
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            out.append(stripped)
    return out
