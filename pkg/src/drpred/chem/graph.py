"""Molecular graph: atoms, bonds, feature vectors, canonical ranks."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from drpred.errors import DimensionError

ELEMENTS = ("B", "C", "N", "O", "P", "S", "F", "Cl", "Br", "I")
ELEMENT_INDEX = {e: i for i, e in enumerate(ELEMENTS)}
AROMATIC_ELEMENTS = frozenset({"B", "C", "N", "O", "P", "S"})

DEFAULT_VALENCE = {"B": 3, "C": 4, "N": 3, "O": 2, "P": 3, "S": 2,
                   "F": 1, "Cl": 1, "Br": 1, "I": 1}

BOND_ORDERS = ("single", "double", "triple", "aromatic")
BOND_INDEX = {o: i for i, o in enumerate(BOND_ORDERS)}
BOND_VALENCE = {"single": 1.0, "double": 2.0, "triple": 3.0, "aromatic": 1.5}

# Documented feature widths: one-hot element (10) + charge + aromatic + degree.
ATOM_FEATURE_WIDTH = len(ELEMENTS) + 3
BOND_FEATURE_WIDTH = len(BOND_ORDERS)


@dataclass
class Atom:
    element: str
    charge: int = 0
    aromatic: bool = False
    hcount: int = 0


@dataclass
class Bond:
    u: int
    v: int
    order: str

    def other(self, i: int) -> int:
        return self.v if i == self.u else self.u


@dataclass
class MolecularGraph:
    """Connected atom-bond graph with u < v on every bond."""

    atoms: list[Atom] = field(default_factory=list)
    bonds: list[Bond] = field(default_factory=list)

    def __post_init__(self):
        self._adjacency = None

    @property
    def n_atoms(self) -> int:
        return len(self.atoms)

    @property
    def n_bonds(self) -> int:
        return len(self.bonds)

    def adjacency(self) -> list[list[tuple[int, int]]]:
        """Per-atom sorted list of (neighbor index, bond index)."""
        if self._adjacency is None:
            adj = [[] for _ in self.atoms]
            for bi, b in enumerate(self.bonds):
                adj[b.u].append((b.v, bi))
                adj[b.v].append((b.u, bi))
            for lst in adj:
                lst.sort()
            self._adjacency = adj
        return self._adjacency

    def degree(self, i: int) -> int:
        return len(self.adjacency()[i])

    def bond_between(self, u: int, v: int) -> Bond | None:
        for nbr, bi in self.adjacency()[u]:
            if nbr == v:
                return self.bonds[bi]
        return None

    def is_connected(self) -> bool:
        if not self.atoms:
            return False
        seen = {0}
        stack = [0]
        while stack:
            for nbr, _ in self.adjacency()[stack.pop()]:
                if nbr not in seen:
                    seen.add(nbr)
                    stack.append(nbr)
        return len(seen) == self.n_atoms

    def atom_features(self, dtype=np.float32) -> np.ndarray:
        """[n_atoms x 13] one-hot element | charge | aromatic flag | degree."""
        out = np.zeros((self.n_atoms, ATOM_FEATURE_WIDTH), dtype=dtype)
        for i, a in enumerate(self.atoms):
            out[i, ELEMENT_INDEX[a.element]] = 1.0
            out[i, len(ELEMENTS)] = a.charge
            out[i, len(ELEMENTS) + 1] = 1.0 if a.aromatic else 0.0
            out[i, len(ELEMENTS) + 2] = self.degree(i)
        return out

    def bond_features(self, dtype=np.float32) -> np.ndarray:
        """[n_bonds x 4] one-hot bond order."""
        out = np.zeros((self.n_bonds, BOND_FEATURE_WIDTH), dtype=dtype)
        for i, b in enumerate(self.bonds):
            out[i, BOND_INDEX[b.order]] = 1.0
        return out

    def implied_hcount(self, i: int) -> int:
        """Hydrogens a bare organic-subset symbol would imply at atom i."""
        a = self.atoms[i]
        if a.element not in DEFAULT_VALENCE:
            raise DimensionError(f"no default valence for element {a.element}")
        used = sum(BOND_VALENCE[self.bonds[bi].order] for _, bi in self.adjacency()[i])
        return max(0, DEFAULT_VALENCE[a.element] - int(np.ceil(used)) - abs(a.charge))

    def canonical_ranks(self) -> list[int]:
        """Relabeling-invariant atom ranks by iterative neighborhood refinement.

        Initial invariant is (element, degree, charge, aromatic, hcount);
        each round extends an atom's key with the sorted multiset of
        (neighbor rank, bond order) pairs until the partition stabilizes.
        Atoms left tied after refinement are interchangeable for every use
        in this package (automorphic in all practical molecules).
        """
        n = self.n_atoms
        keys = [
            (a.element, self.degree(i), a.charge, a.aromatic, a.hcount)
            for i, a in enumerate(self.atoms)
        ]
        ranks = _dense_ranks(keys)
        for _ in range(n):
            keys = [
                (
                    ranks[i],
                    tuple(sorted((ranks[nbr], self.bonds[bi].order) for nbr, bi in self.adjacency()[i])),
                )
                for i in range(n)
            ]
            new_ranks = _dense_ranks(keys)
            if new_ranks == ranks:
                break
            ranks = new_ranks
        return ranks

    def induced_subgraph(self, atom_indices) -> tuple["MolecularGraph", list[int]]:
        """Subgraph on the given atoms; returns (graph, original indices)."""
        originals = sorted(atom_indices)
        remap = {orig: i for i, orig in enumerate(originals)}
        atoms = [Atom(self.atoms[o].element, self.atoms[o].charge,
                      self.atoms[o].aromatic, self.atoms[o].hcount) for o in originals]
        bonds = [
            Bond(remap[b.u], remap[b.v], b.order)
            for b in self.bonds
            if b.u in remap and b.v in remap
        ]
        return MolecularGraph(atoms, bonds), originals


def _dense_ranks(keys) -> list[int]:
    order = {k: r for r, k in enumerate(sorted(set(keys)))}
    return [order[k] for k in keys]
