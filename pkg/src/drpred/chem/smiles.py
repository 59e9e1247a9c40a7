"""SMILES subset parser and deterministic serializer.

Supported: organic-subset atoms (B, C, N, O, P, S, F, Cl, Br, I),
lowercase aromatic forms, bracket atoms with charge and explicit H,
bonds - = # :, branches, ring closures (digits and %nn). Stereo marks
(/ \\ @ @@) are accepted and discarded. Dots, isotopes, wildcards and
anything else raise ParseError with the byte offset.
"""

from __future__ import annotations

from drpred.errors import ParseError
from drpred.chem.graph import (
    AROMATIC_ELEMENTS,
    DEFAULT_VALENCE,
    ELEMENTS,
    Atom,
    Bond,
    MolecularGraph,
)

_BOND_SYMBOLS = {"-": "single", "=": "double", "#": "triple", ":": "aromatic"}
_SYMBOL_FOR = {"single": "-", "double": "=", "triple": "#", "aromatic": ":"}
_TWO_LETTER = ("Cl", "Br")
_AROMATIC_TOKENS = {e.lower(): e for e in ELEMENTS if e in AROMATIC_ELEMENTS}


def parse_smiles(text: str) -> MolecularGraph:
    """Parse a SMILES string into a connected MolecularGraph."""
    if not text:
        raise ParseError("empty SMILES", 0)
    atoms: list[Atom] = []
    explicit_h: list[int | None] = []  # None = derive from valence
    bond_specs: list[tuple[int, int, str | None, int]] = []  # u, v, symbol, offset
    branch_stack: list[tuple[int, int]] = []  # (anchor atom, '(' offset)
    open_rings: dict[int, tuple[int, str | None, int]] = {}
    prev_atom: int | None = None
    pending_bond: str | None = None
    pending_offset = 0

    def add_atom(atom: Atom, hcount: int | None, offset: int):
        nonlocal prev_atom, pending_bond
        atoms.append(atom)
        explicit_h.append(hcount)
        idx = len(atoms) - 1
        if prev_atom is not None:
            bond_specs.append((prev_atom, idx, pending_bond, pending_offset if pending_bond else offset))
        elif pending_bond is not None:
            raise ParseError("bond symbol before any atom", pending_offset)
        pending_bond = None
        prev_atom = idx

    i = 0
    n = len(text)
    while i < n:
        ch = text[i]
        if ch == "[":
            atom, hcount, consumed = _parse_bracket(text, i)
            add_atom(atom, hcount, i)
            i += consumed
            continue
        if text[i : i + 2] in _TWO_LETTER:
            add_atom(Atom(text[i : i + 2]), None, i)
            i += 2
            continue
        if ch in ELEMENTS and len(ch) == 1:
            add_atom(Atom(ch), None, i)
            i += 1
            continue
        if ch in _AROMATIC_TOKENS:
            add_atom(Atom(_AROMATIC_TOKENS[ch], aromatic=True), None, i)
            i += 1
            continue
        if ch in _BOND_SYMBOLS:
            if pending_bond is not None:
                raise ParseError("two bond symbols in a row", i)
            pending_bond = _BOND_SYMBOLS[ch]
            pending_offset = i
            i += 1
            continue
        if ch == "(":
            if prev_atom is None:
                raise ParseError("branch before any atom", i)
            branch_stack.append((prev_atom, i))
            i += 1
            continue
        if ch == ")":
            if not branch_stack:
                raise ParseError("unbalanced ')'", i)
            if pending_bond is not None:
                raise ParseError("dangling bond before ')'", i)
            prev_atom = branch_stack.pop()[0]
            i += 1
            continue
        if ch.isdigit() or ch == "%":
            if ch == "%":
                if i + 2 >= n or not (text[i + 1].isdigit() and text[i + 2].isdigit()):
                    raise ParseError("'%' needs two digits", i)
                num = int(text[i + 1 : i + 3])
                width = 3
            else:
                num = int(ch)
                width = 1
            _handle_ring(num, i, prev_atom, pending_bond, pending_offset, open_rings, bond_specs)
            pending_bond = None
            i += width
            continue
        if ch in "/\\":
            i += 1  # stereo bond marks carry no graph information here
            continue
        if ch == ".":
            raise ParseError("multi-fragment SMILES not supported", i)
        raise ParseError(f"unexpected character {ch!r}", i)

    if branch_stack:
        raise ParseError("unbalanced '('", branch_stack[-1][1])
    if pending_bond is not None:
        raise ParseError("dangling bond at end of input", pending_offset)
    if open_rings:
        num, (_, _, off) = sorted(open_rings.items())[0]
        raise ParseError(f"unmatched ring closure {num}", off)
    if not atoms:
        raise ParseError("no atoms in SMILES", 0)

    return _assemble(atoms, explicit_h, bond_specs)


def _handle_ring(num, offset, prev_atom, pending_bond, pending_offset, open_rings, bond_specs):
    if prev_atom is None:
        raise ParseError("ring closure before any atom", offset)
    if num in open_rings:
        other, symbol, _ = open_rings.pop(num)
        if other == prev_atom:
            raise ParseError(f"ring closure {num} bonds an atom to itself", offset)
        if symbol is not None and pending_bond is not None and symbol != pending_bond:
            raise ParseError(f"conflicting bond orders on ring closure {num}", offset)
        bond = pending_bond if pending_bond is not None else symbol
        bond_specs.append((other, prev_atom, bond, offset))
    else:
        open_rings[num] = (prev_atom, pending_bond, offset)


def _parse_bracket(text: str, start: int) -> tuple[Atom, int, int]:
    """Parse '[...]' starting at `start`; returns (atom, hcount, consumed)."""
    end = text.find("]", start)
    if end == -1:
        raise ParseError("unterminated bracket atom", start)
    body = text[start + 1 : end]
    i = 0
    if not body:
        raise ParseError("empty bracket atom", start)
    if body[0].isdigit():
        raise ParseError("isotopes not supported", start + 1)

    element = None
    aromatic = False
    if body[i : i + 2] in _TWO_LETTER:
        element = body[i : i + 2]
        i += 2
    elif body[i].isupper():
        element = body[i]
        i += 1
    elif body[i] in _AROMATIC_TOKENS:
        element = _AROMATIC_TOKENS[body[i]]
        aromatic = True
        i += 1
    if element not in DEFAULT_VALENCE:
        raise ParseError(f"unknown element in bracket: {body!r}", start + 1)

    while i < len(body) and body[i] == "@":
        i += 1  # chirality marks discarded

    hcount = 0
    if i < len(body) and body[i] == "H":
        i += 1
        digits = ""
        while i < len(body) and body[i].isdigit():
            digits += body[i]
            i += 1
        hcount = int(digits) if digits else 1

    charge = 0
    if i < len(body) and body[i] in "+-":
        sign = 1 if body[i] == "+" else -1
        symbol = body[i]
        i += 1
        digits = ""
        while i < len(body) and body[i].isdigit():
            digits += body[i]
            i += 1
        if digits:
            charge = sign * int(digits)
        else:
            charge = sign
            while i < len(body) and body[i] == symbol:
                charge += sign
                i += 1

    if i != len(body):
        raise ParseError(f"trailing characters in bracket atom: {body[i:]!r}", start + 1 + i)
    return Atom(element, charge=charge, aromatic=aromatic, hcount=hcount), hcount, end - start + 1


def _assemble(atoms, explicit_h, bond_specs) -> MolecularGraph:
    seen_pairs = set()
    bonds = []
    for u, v, symbol, offset in bond_specs:
        lo, hi = (u, v) if u < v else (v, u)
        if (lo, hi) in seen_pairs:
            raise ParseError("duplicate bond between one atom pair", offset)
        seen_pairs.add((lo, hi))
        if symbol is None:
            order = "aromatic" if atoms[u].aromatic and atoms[v].aromatic else "single"
        else:
            order = symbol
        if order == "aromatic" and not (atoms[u].aromatic and atoms[v].aromatic):
            raise ParseError("aromatic bond between non-aromatic atoms", offset)
        bonds.append(Bond(lo, hi, order))

    graph = MolecularGraph(atoms, bonds)
    if not graph.is_connected():
        raise ParseError("disconnected molecular graph", 0)
    for i, h in enumerate(explicit_h):
        if h is None:
            atoms[i].hcount = graph.implied_hcount(i)
    return graph


def serialize(graph: MolecularGraph, include_h: bool = True) -> str:
    """Deterministic SMILES string; parse(serialize(g)) is isomorphic to g.

    With include_h=False hydrogen counts are dropped from bracket atoms
    (used for cluster labels, where parent-derived hydrogens must not
    distinguish otherwise identical fragments).
    """
    if graph.n_atoms == 0:
        raise ParseError("cannot serialize an empty graph", 0)
    ranks = graph.canonical_ranks()
    start = min(range(graph.n_atoms), key=lambda i: (ranks[i], i))

    # DFS in rank order: tree edges become the emitted spine, the rest
    # become ring closures. Edges must be classified at visit time, so a
    # bond to an already-visited atom always turns into a closure.
    visited = [False] * graph.n_atoms
    emit_order: list[int] = []
    tree_children: dict[int, list[int]] = {i: [] for i in range(graph.n_atoms)}
    ring_bonds: list[tuple[int, int]] = []
    seen_bonds = set()

    def explore(node: int):
        visited[node] = True
        emit_order.append(node)
        nbrs = sorted(
            (nbr for nbr, _ in graph.adjacency()[node]),
            key=lambda j: (ranks[j], j),
        )
        for nbr in nbrs:
            key = (min(node, nbr), max(node, nbr))
            if key in seen_bonds:
                continue
            seen_bonds.add(key)
            if visited[nbr]:
                ring_bonds.append((nbr, node))  # earlier atom first
            else:
                tree_children[node].append(nbr)
                explore(nbr)

    explore(start)

    position = {a: k for k, a in enumerate(emit_order)}
    # Ring digits: open at the earlier-emitted endpoint, close at the later.
    opens: dict[int, list[tuple[int, int]]] = {}
    closes: dict[int, list[tuple[int, int]]] = {}
    spans = sorted(
        ring_bonds,
        key=lambda uv: (position[uv[0]] if position[uv[0]] < position[uv[1]] else position[uv[1]],
                        position[uv[1]] if position[uv[0]] < position[uv[1]] else position[uv[0]]),
    )
    in_use: dict[int, int] = {}  # digit -> position where it frees
    digit_of: dict[tuple[int, int], int] = {}
    for u, v in spans:
        p_open, p_close = sorted((position[u], position[v]))
        digit = 1
        while digit in in_use and in_use[digit] > p_open:
            digit += 1
        if digit > 99:
            raise ParseError("ring closure digits exhausted", 0)
        in_use[digit] = p_close
        digit_of[(u, v)] = digit
        opens.setdefault(emit_order[p_open], []).append((digit, emit_order[p_close]))
        closes.setdefault(emit_order[p_close], []).append((digit, emit_order[p_open]))

    out: list[str] = []

    def bond_token(u: int, v: int) -> str:
        bond = graph.bond_between(u, v)
        if bond.order == "aromatic":
            return ""  # only legal between aromatic atoms, where it is the default
        if bond.order == "single":
            both_aromatic = graph.atoms[u].aromatic and graph.atoms[v].aromatic
            return "-" if both_aromatic else ""
        return _SYMBOL_FOR[bond.order]

    def emit(node: int, parent: int):
        if parent >= 0:
            out.append(bond_token(parent, node))
        out.append(_atom_token(graph, node, include_h))
        for digit, other in sorted(closes.get(node, [])):
            out.append(bond_token(other, node))
            out.append(str(digit) if digit < 10 else f"%{digit:02d}")
        for digit, other in sorted(opens.get(node, [])):
            out.append(bond_token(node, other))
            out.append(str(digit) if digit < 10 else f"%{digit:02d}")
        children = tree_children[node]
        for k, child in enumerate(children):
            last = k == len(children) - 1
            if not last:
                out.append("(")
            emit(child, node)
            if not last:
                out.append(")")

    emit(start, -1)
    return "".join(out)


def _atom_token(graph: MolecularGraph, i: int, include_h: bool) -> str:
    atom = graph.atoms[i]
    symbol = atom.element.lower() if atom.aromatic else atom.element
    needs_bracket = atom.charge != 0
    if include_h and atom.hcount != graph.implied_hcount(i):
        needs_bracket = True
    if not needs_bracket:
        return symbol
    h = ""
    if include_h and atom.hcount:
        h = "H" if atom.hcount == 1 else f"H{atom.hcount}"
    charge = ""
    if atom.charge:
        sign = "+" if atom.charge > 0 else "-"
        mag = abs(atom.charge)
        charge = sign if mag == 1 else f"{sign}{mag}"
    return f"[{symbol}{h}{charge}]"
