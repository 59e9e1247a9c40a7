"""Shared access to the bundled SMILES corpus for tests."""

from importlib import resources


def corpus_molecules():
    text = resources.files("drpred").joinpath("assets/corpus.smi").read_text("utf-8")
    return [
        line.strip()
        for line in text.splitlines()
        if line.strip() and not line.startswith("#")
    ]
