"""Junction-tree decomposition of molecular graphs.

Clusters are the simple rings of a minimum cycle basis plus every bond
that lies in no ring; rings sharing three or more atoms merge (bridged
systems) and atoms belonging to three or more clusters get a singleton
cluster. Tree edges come from a maximum spanning tree over the
cluster-intersection graph (weight = shared atoms, ties by index pair),
with clusters pre-sorted by a relabeling-invariant canonical key so that
isomorphic molecules decompose to isomorphic trees.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

from drpred.errors import DrpredError
from drpred.chem.graph import MolecularGraph
from drpred.chem.smiles import serialize


@dataclass
class Cluster:
    atoms: tuple[int, ...]
    label: str
    kind: str  # "ring", "bond", or "singleton"


@dataclass
class JunctionTree:
    clusters: list[Cluster]
    edges: list[tuple[int, int]]
    root: int
    vocab_ids: list[int] | None = field(default=None)

    @property
    def n_clusters(self) -> int:
        return len(self.clusters)

    def neighbors(self) -> list[list[int]]:
        adj = [[] for _ in self.clusters]
        for i, j in self.edges:
            adj[i].append(j)
            adj[j].append(i)
        for lst in adj:
            lst.sort()
        return adj

    def parents_and_depths(self) -> tuple[list[int], list[int]]:
        """BFS from the root; parent of the root is -1."""
        parent = [-2] * self.n_clusters
        depth = [0] * self.n_clusters
        parent[self.root] = -1
        queue = deque([self.root])
        adj = self.neighbors()
        while queue:
            node = queue.popleft()
            for nbr in adj[node]:
                if parent[nbr] == -2:
                    parent[nbr] = node
                    depth[nbr] = depth[node] + 1
                    queue.append(nbr)
        if any(p == -2 for p in parent):
            raise DrpredError("junction tree is not connected")
        return parent, depth


def minimum_cycle_basis(graph: MolecularGraph) -> list[frozenset[int]]:
    """Cycle basis as bond-index sets, shortest cycles first (Horton).

    Candidate cycles are built from shortest paths out of every vertex,
    then a GF(2) elimination over bond-incidence bitmasks keeps only
    independent ones until the cycle space (|E| - |V| + 1) is spanned.
    """
    dim = graph.n_bonds - graph.n_atoms + 1
    if dim <= 0:
        return []

    candidates: dict[int, int] = {}  # bitmask -> cycle length
    for v in range(graph.n_atoms):
        dist, parent_edge = _bfs_tree(graph, v)
        for bi, bond in enumerate(graph.bonds):
            x, y = bond.u, bond.v
            if dist[x] < 0 or dist[y] < 0 or parent_edge[x] == bi or parent_edge[y] == bi:
                continue
            path_x = _edge_path(x, parent_edge, graph)
            path_y = _edge_path(y, parent_edge, graph)
            if path_x & path_y:
                continue  # paths overlap, not a simple cycle through v
            atoms_x = _path_atoms(x, parent_edge, graph)
            atoms_y = _path_atoms(y, parent_edge, graph)
            if atoms_x & atoms_y != {v}:
                continue
            mask = _to_mask(path_x | path_y | {bi})
            candidates.setdefault(mask, dist[x] + dist[y] + 1)

    basis: list[int] = []
    by_high_bit: dict[int, int] = {}
    for mask, _ in sorted(candidates.items(), key=lambda kv: (kv[1], kv[0])):
        if _gf2_insert(mask, by_high_bit):
            basis.append(mask)
            if len(basis) == dim:
                break
    if len(basis) != dim:
        raise DrpredError("cycle basis construction failed")
    return [frozenset(_from_mask(m)) for m in basis]


def _gf2_insert(mask: int, by_high_bit: dict[int, int]) -> bool:
    x = mask
    while x:
        hb = x.bit_length() - 1
        if hb in by_high_bit:
            x ^= by_high_bit[hb]
        else:
            by_high_bit[hb] = x
            return True
    return False


def _bfs_tree(graph, start):
    dist = [-1] * graph.n_atoms
    parent_edge = [-1] * graph.n_atoms
    dist[start] = 0
    queue = deque([start])
    while queue:
        node = queue.popleft()
        for nbr, bi in graph.adjacency()[node]:
            if dist[nbr] < 0:
                dist[nbr] = dist[node] + 1
                parent_edge[nbr] = bi
                queue.append(nbr)
    return dist, parent_edge


def _edge_path(node, parent_edge, graph):
    path = set()
    while parent_edge[node] >= 0:
        bi = parent_edge[node]
        path.add(bi)
        node = graph.bonds[bi].other(node)
    return path


def _path_atoms(node, parent_edge, graph):
    atoms = {node}
    while parent_edge[node] >= 0:
        node = graph.bonds[parent_edge[node]].other(node)
        atoms.add(node)
    return atoms


def _to_mask(bond_indices) -> int:
    mask = 0
    for bi in bond_indices:
        mask |= 1 << bi
    return mask


def _from_mask(mask: int):
    out = []
    bi = 0
    while mask:
        if mask & 1:
            out.append(bi)
        mask >>= 1
        bi += 1
    return out


def decompose(graph: MolecularGraph) -> JunctionTree:
    """Decompose a connected molecular graph into its junction tree."""
    if graph.n_atoms == 0:
        raise DrpredError("cannot decompose an empty graph")
    if graph.n_atoms == 1:
        label = _cluster_label(graph, (0,))
        return JunctionTree([Cluster((0,), label, "singleton")], [], 0)

    rings = minimum_cycle_basis(graph)
    ring_atom_sets = []
    ring_bond_union: set[int] = set()
    for bond_set in rings:
        atoms = set()
        for bi in bond_set:
            atoms.add(graph.bonds[bi].u)
            atoms.add(graph.bonds[bi].v)
        ring_atom_sets.append(atoms)
        ring_bond_union |= bond_set

    merged = _merge_bridged(ring_atom_sets)

    clusters: list[tuple[frozenset[int], str]] = [(frozenset(a), "ring") for a in merged]
    for bi, bond in enumerate(graph.bonds):
        if bi not in ring_bond_union:
            clusters.append((frozenset((bond.u, bond.v)), "bond"))

    membership: dict[int, int] = {}
    for atom_set, _ in clusters:
        for a in atom_set:
            membership[a] = membership.get(a, 0) + 1
    for atom, count in sorted(membership.items()):
        if count >= 3:
            clusters.append((frozenset((atom,)), "singleton"))

    # Canonical ordering: relabeling two molecules identically must yield
    # the same cluster indices, so MST tie-breaks stay isomorphism-safe.
    ranks = graph.canonical_ranks()
    keyed = []
    for atom_set, kind in clusters:
        label = _cluster_label(graph, tuple(atom_set))
        key = (tuple(sorted(ranks[a] for a in atom_set)), label, kind, tuple(sorted(atom_set)))
        keyed.append((key, atom_set, label, kind))
    keyed.sort(key=lambda item: item[0])
    cluster_objs = [Cluster(tuple(sorted(a)), label, kind) for _, a, label, kind in keyed]

    edges = _maximum_spanning_tree(cluster_objs)

    root = min(
        (i for i, c in enumerate(cluster_objs) if 0 in c.atoms),
        default=0,
    )
    tree = JunctionTree(cluster_objs, edges, root)
    tree.parents_and_depths()  # raises if not connected
    return tree


def _merge_bridged(ring_atom_sets):
    sets = [set(s) for s in ring_atom_sets]
    changed = True
    while changed:
        changed = False
        for i in range(len(sets)):
            for j in range(i + 1, len(sets)):
                if len(sets[i] & sets[j]) >= 3:
                    sets[i] |= sets[j]
                    del sets[j]
                    changed = True
                    break
            if changed:
                break
    return sets


def _maximum_spanning_tree(clusters: list[Cluster]) -> list[tuple[int, int]]:
    candidates = []
    atom_sets = [set(c.atoms) for c in clusters]
    for i in range(len(clusters)):
        for j in range(i + 1, len(clusters)):
            shared = len(atom_sets[i] & atom_sets[j])
            if shared:
                candidates.append((-shared, i, j))
    candidates.sort()

    parent = list(range(len(clusters)))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    edges = []
    for _, i, j in candidates:
        ri, rj = find(i), find(j)
        if ri != rj:
            parent[ri] = rj
            edges.append((i, j))
            if len(edges) == len(clusters) - 1:
                break
    return edges


def _cluster_label(graph: MolecularGraph, atom_indices) -> str:
    sub, _ = graph.induced_subgraph(atom_indices)
    return serialize(sub, include_h=False)
