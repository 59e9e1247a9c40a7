"""Drug response prediction toolkit.

Predicts ln(IC50) of anti-cancer drugs against cancer cell lines from
gene-expression profiles and drug SMILES strings. Everything numeric is
built on a small reverse-mode autodiff engine; molecules are parsed and
decomposed into junction trees by the bundled chem subpackage.
"""

__version__ = "0.1.0"
