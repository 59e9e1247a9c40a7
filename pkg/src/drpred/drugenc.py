"""Drug encoders: loopy message passing over the molecular graph and a
GRU sweep over the junction tree, each ending in Gaussian heads whose
28-wide outputs concatenate into the 56-wide drug latent.

Both encoders run batched over a disjoint union of molecules: atom,
bond, and cluster rows are stacked with offset indices and gathered or
segment-pooled per molecule, so one tape handles any number of drugs.
The tree sweep is scheduled in waves (leaves-to-root, then
root-to-leaves); every directed tree edge is computed exactly once, and
the schedule can be returned for instrumentation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from drpred import nn
from drpred.autodiff import Tensor, load_arrays, ops, save_arrays
from drpred.chem import ClusterVocabulary, decompose, parse_smiles
from drpred.chem.graph import ATOM_FEATURE_WIDTH, BOND_FEATURE_WIDTH, MolecularGraph
from drpred.chem.junction import JunctionTree
from drpred.errors import CheckpointError, DimensionError, DrpredError
from drpred.rng import SplitRng

MESSAGE_WIDTH = 128
TREE_HIDDEN_WIDTH = 128
LATENT_HALF_WIDTH = 28
DRUG_LATENT_WIDTH = 2 * LATENT_HALF_WIDTH
MESSAGE_ITERATIONS = 6


@dataclass
class DrugLatent:
    z_graph: np.ndarray
    z_tree: np.ndarray

    @property
    def z_drug(self) -> np.ndarray:
        return np.concatenate([self.z_graph, self.z_tree])


class GraphEncoderParams:
    """Weights for the message-passing graph encoder."""

    def __init__(self, message_width=MESSAGE_WIDTH, out_width=LATENT_HALF_WIDTH,
                 iterations=MESSAGE_ITERATIONS, seed=0, dtype=np.float32):
        if iterations < 1:
            raise DimensionError("graph encoder needs at least one iteration")
        rng = SplitRng(seed)
        self.message_width = message_width
        self.out_width = out_width
        self.iterations = iterations
        self.dtype = dtype
        self.w_msg = nn.glorot_uniform(rng, message_width, message_width, dtype)
        self.w_atom = nn.glorot_uniform(rng, ATOM_FEATURE_WIDTH, message_width, dtype)
        self.w_bond = nn.glorot_uniform(rng, BOND_FEATURE_WIDTH, message_width, dtype)
        self.u_msg = nn.glorot_uniform(rng, message_width, message_width, dtype)
        self.u_atom = nn.glorot_uniform(rng, ATOM_FEATURE_WIDTH, message_width, dtype)
        self.head_mu_w = nn.glorot_uniform(rng, message_width, out_width, dtype)
        self.head_mu_b = nn.zeros(out_width, dtype)
        self.head_lv_w = nn.glorot_uniform(rng, message_width, out_width, dtype)
        self.head_lv_b = nn.zeros(out_width, dtype)

    def parameters(self) -> list[Tensor]:
        return [self.w_msg, self.w_atom, self.w_bond, self.u_msg, self.u_atom,
                self.head_mu_w, self.head_mu_b, self.head_lv_w, self.head_lv_b]

    def named_parameters(self) -> dict:
        return {
            "graph.w_msg": self.w_msg, "graph.w_atom": self.w_atom,
            "graph.w_bond": self.w_bond, "graph.u_msg": self.u_msg,
            "graph.u_atom": self.u_atom,
            "graph.head_mu_w": self.head_mu_w, "graph.head_mu_b": self.head_mu_b,
            "graph.head_lv_w": self.head_lv_w, "graph.head_lv_b": self.head_lv_b,
        }


class TreeEncoderParams:
    """GRU weights for the junction-tree encoder plus the cluster
    embedding table taken from the vocabulary."""

    def __init__(self, vocab: ClusterVocabulary, hidden=TREE_HIDDEN_WIDTH,
                 out_width=LATENT_HALF_WIDTH, seed=0, dtype=np.float32):
        from drpred.chem.vocab import EMBED_WIDTH

        rng = SplitRng(seed)
        self.vocab = vocab
        self.hidden = hidden
        self.out_width = out_width
        self.dtype = dtype
        self.embedding = Tensor(vocab.embedding, requires_grad=True, dtype=dtype)
        embed = EMBED_WIDTH
        self.w_cand = nn.glorot_uniform(rng, embed, hidden, dtype)
        self.w_reset = nn.glorot_uniform(rng, embed, hidden, dtype)
        self.u_reset = nn.glorot_uniform(rng, hidden, hidden, dtype)
        self.w_update = nn.glorot_uniform(rng, embed, hidden, dtype)
        self.u_update = nn.glorot_uniform(rng, hidden, hidden, dtype)
        self.w_out = nn.glorot_uniform(rng, embed, hidden, dtype)
        self.u_out = nn.glorot_uniform(rng, hidden, hidden, dtype)
        self.head_mu_w = nn.glorot_uniform(rng, hidden, out_width, dtype)
        self.head_mu_b = nn.zeros(out_width, dtype)
        self.head_lv_w = nn.glorot_uniform(rng, hidden, out_width, dtype)
        self.head_lv_b = nn.zeros(out_width, dtype)

    def parameters(self) -> list[Tensor]:
        return [self.embedding, self.w_cand, self.w_reset, self.u_reset,
                self.w_update, self.u_update, self.w_out, self.u_out,
                self.head_mu_w, self.head_mu_b, self.head_lv_w, self.head_lv_b]

    def named_parameters(self) -> dict:
        return {
            "tree.embedding": self.embedding, "tree.w_cand": self.w_cand,
            "tree.w_reset": self.w_reset, "tree.u_reset": self.u_reset,
            "tree.w_update": self.w_update, "tree.u_update": self.u_update,
            "tree.w_out": self.w_out, "tree.u_out": self.u_out,
            "tree.head_mu_w": self.head_mu_w, "tree.head_mu_b": self.head_mu_b,
            "tree.head_lv_w": self.head_lv_w, "tree.head_lv_b": self.head_lv_b,
        }


def _heads(pooled, w_mu, b_mu, w_lv, b_lv, eps, dtype):
    mu = ops.add_bias(ops.matmul(pooled, w_mu), b_mu)
    logvar = ops.add_bias(ops.matmul(pooled, w_lv), b_lv)
    if eps is None:
        sample = mu
    else:
        std = ops.exp(ops.mul(logvar, 0.5))
        sample = ops.add(mu, ops.mul(std, ops.constant(eps, dtype=dtype)))
    return mu, logvar, sample


@dataclass
class GraphSpec:
    """Precomputed featurization of one molecule for the graph encoder.

    Atom rows are in canonical order, which fixes the accumulation order
    under any relabeling of the input.
    """

    atom_feats: np.ndarray   # [n_atoms x 13]
    bond_feats: np.ndarray   # [n_directed_edges x 4]
    src: np.ndarray
    dst: np.ndarray
    rev: np.ndarray
    n_atoms: int


def graph_spec(g: MolecularGraph, dtype=np.float32) -> GraphSpec:
    if g.n_atoms == 0:
        raise DrpredError("cannot encode a molecule with zero atoms")
    ranks = g.canonical_ranks()
    order = sorted(range(g.n_atoms), key=lambda i: (ranks[i], i))
    pos = {a: k for k, a in enumerate(order)}
    feats = g.atom_features(dtype)[order]
    bond_feats = g.bond_features(dtype)
    directed = []
    for bi, b in enumerate(g.bonds):
        directed.append((pos[b.u], pos[b.v], bi))
        directed.append((pos[b.v], pos[b.u], bi))
    directed.sort(key=lambda t: (t[0], t[1]))
    index_of = {(s, d): k for k, (s, d, _) in enumerate(directed)}
    src = np.array([s for s, _, _ in directed], dtype=np.intp)
    dst = np.array([d for _, d, _ in directed], dtype=np.intp)
    rev = np.array([index_of[(d, s)] for s, d, _ in directed], dtype=np.intp)
    rows = (
        bond_feats[[bi for _, _, bi in directed]]
        if directed
        else np.zeros((0, BOND_FEATURE_WIDTH), dtype=dtype)
    )
    return GraphSpec(feats, rows, src, dst, rev, g.n_atoms)


def encode_graph_specs(specs: list[GraphSpec], params: GraphEncoderParams,
                       eps: np.ndarray | None = None):
    """Encode precomputed molecule specs in one taped pass.

    Returns (mu, logvar, sample) Tensors of shape [n_graphs x out_width].
    With eps=None the sample is the mean (deterministic mode).
    """
    if not specs:
        raise DimensionError("encode_graph_specs needs at least one molecule")
    dtype = params.dtype

    atom_offsets = np.cumsum([0] + [s.n_atoms for s in specs])
    edge_offsets = np.cumsum([0] + [len(s.src) for s in specs])
    n_atoms = int(atom_offsets[-1])
    n_edges = int(edge_offsets[-1])
    atom_feats = ops.constant(np.concatenate([s.atom_feats for s in specs]), dtype=dtype)
    bond_feats = ops.constant(
        np.concatenate([s.bond_feats for s in specs]) if n_edges
        else np.zeros((0, BOND_FEATURE_WIDTH), dtype=dtype),
        dtype=dtype,
    )
    src = np.concatenate([s.src + ao for s, ao in zip(specs, atom_offsets)]).astype(np.intp)
    dst = np.concatenate([s.dst + ao for s, ao in zip(specs, atom_offsets)]).astype(np.intp)
    rev = np.concatenate([s.rev + eo for s, eo in zip(specs, edge_offsets)]).astype(np.intp)
    atom_mol = np.repeat(np.arange(len(specs), dtype=np.intp),
                         [s.n_atoms for s in specs])

    atom_term_edges = ops.matmul(ops.gather_rows(atom_feats, src), params.w_atom)
    bond_term = ops.matmul(bond_feats, params.w_bond)
    static_term = ops.add(atom_term_edges, bond_term)

    messages = ops.constant(np.zeros((n_edges, params.message_width), dtype=dtype), dtype=dtype)
    for _ in range(params.iterations):
        inbox = ops.segment_sum(messages, dst, n_atoms)
        context = ops.sub(ops.gather_rows(inbox, src), ops.gather_rows(messages, rev))
        messages = ops.relu(ops.add(ops.matmul(context, params.w_msg), static_term))

    inbox = ops.segment_sum(messages, dst, n_atoms)
    node_read = ops.relu(ops.add(
        ops.matmul(inbox, params.u_msg),
        ops.matmul(atom_feats, params.u_atom),
    ))
    pooled = ops.segment_mean(node_read, atom_mol, len(specs))
    return _heads(pooled, params.head_mu_w, params.head_mu_b,
                  params.head_lv_w, params.head_lv_b, eps, dtype)


def encode_graph_batch(graphs: list[MolecularGraph], params: GraphEncoderParams,
                       eps: np.ndarray | None = None):
    return encode_graph_specs([graph_spec(g, params.dtype) for g in graphs], params, eps=eps)


def encode_graph(graph: MolecularGraph, params: GraphEncoderParams,
                 eps: np.ndarray | None = None):
    return encode_graph_batch([graph], params, eps=eps)


@dataclass
class TreeSpec:
    """Vocabulary ids plus the static two-phase edge schedule of a tree."""

    ids: np.ndarray                       # vocab id per cluster
    n_clusters: int
    edges: list[tuple[int, int, str, int]]  # (src_local, dst_local, phase, wave)


def tree_spec(tree: JunctionTree, vocab: ClusterVocabulary) -> TreeSpec:
    ids = np.array(vocab.assign_ids(tree), dtype=np.intp)
    parent, depth = tree.parents_and_depths()
    children = [[] for _ in range(tree.n_clusters)]
    for c, p in enumerate(parent):
        if p >= 0:
            children[p].append(c)
    height = [0] * tree.n_clusters
    for c in sorted(range(tree.n_clusters), key=lambda i: -depth[i]):
        if children[c]:
            height[c] = 1 + max(height[k] for k in children[c])
    edges = []
    for c, p in enumerate(parent):
        if p < 0:
            continue
        edges.append((c, p, "up", height[c]))
        edges.append((p, c, "down", depth[p]))
    return TreeSpec(ids, tree.n_clusters, edges)


def encode_tree_specs(specs: list[TreeSpec], params: TreeEncoderParams,
                      eps: np.ndarray | None = None, instrument: bool = False):
    """Encode junction trees with the two-phase GRU sweep.

    Returns (mu, logvar, sample) or, with instrument=True, an extra
    schedule list of (phase, molecule, source cluster, target cluster)
    in computation order.
    """
    if not specs:
        raise DimensionError("encode_tree_specs needs at least one tree")
    dtype = params.dtype

    node_offset = np.cumsum([0] + [s.n_clusters for s in specs])
    n_nodes = int(node_offset[-1])
    node_ids = np.concatenate([s.ids for s in specs]).astype(np.intp)
    node_mol = np.repeat(np.arange(len(specs), dtype=np.intp),
                         [s.n_clusters for s in specs])

    x = ops.gather_rows(params.embedding, node_ids)

    edges = []
    for mi, spec in enumerate(specs):
        off = int(node_offset[mi])
        for c, p, phase, wave in spec.edges:
            edges.append({
                "mol": mi, "src_local": c, "dst_local": p,
                "src": off + c, "dst": off + p,
                "phase": phase, "wave": wave,
            })

    phase_rank = {"up": 0, "down": 1}
    edges.sort(key=lambda e: (phase_rank[e["phase"]], e["wave"], e["mol"],
                              e["src_local"], e["dst_local"]))
    row_of = {}
    for row, e in enumerate(edges):
        row_of[(e["mol"], e["src_local"], e["dst_local"])] = row
    # Incoming messages for edge (i -> j) are the (k -> i), k != j; the
    # phase/wave ordering guarantees they occupy earlier rows.
    into_node: dict[tuple[int, int], list[dict]] = {}
    for e in edges:
        into_node.setdefault((e["mol"], e["dst_local"]), []).append(e)
    for e in edges:
        i, j, mi = e["src_local"], e["dst_local"], e["mol"]
        my_row = row_of[(mi, i, j)]
        inc = []
        for other in into_node.get((mi, i), []):
            if other["src_local"] == j:
                continue
            other_row = row_of[(mi, other["src_local"], i)]
            assert other_row < my_row, "tree schedule out of order"
            inc.append(other_row)
        e["inc"] = sorted(inc)

    schedule = []
    message_parts: list[Tensor] = []
    groups: list[list[dict]] = []
    last_key = None
    for e in edges:
        key = (phase_rank[e["phase"]], e["wave"])
        if key == last_key:
            groups[-1].append(e)
        else:
            groups.append([e])
            last_key = key

    for group in groups:
        n_e = len(group)
        x_src = ops.gather_rows(x, np.array([e["src"] for e in group], dtype=np.intp))
        flat_rows, seg, recv_nodes = [], [], []
        for pos, e in enumerate(group):
            for row in e["inc"]:
                flat_rows.append(row)
                seg.append(pos)
                recv_nodes.append(e["src"])
        if flat_rows:
            m_all = message_parts[0] if len(message_parts) == 1 else ops.concat_rows(message_parts)
            incoming = ops.gather_rows(m_all, np.array(flat_rows, dtype=np.intp))
            x_recv = ops.gather_rows(x, np.array(recv_nodes, dtype=np.intp))
            reset = ops.sigmoid(ops.add(
                ops.matmul(x_recv, params.w_reset),
                ops.matmul(incoming, params.u_reset),
            ))
            gated_sum = ops.segment_sum(ops.mul(reset, incoming), np.array(seg, dtype=np.intp), n_e)
        else:
            gated_sum = ops.constant(np.zeros((n_e, params.hidden), dtype=dtype), dtype=dtype)
        candidate = ops.tanh(ops.add(ops.matmul(x_src, params.w_cand), gated_sum))
        previous = ops.constant(np.zeros((n_e, params.hidden), dtype=dtype), dtype=dtype)
        update = ops.sigmoid(ops.add(
            ops.matmul(x_src, params.w_update),
            ops.matmul(previous, params.u_update),
        ))
        message = ops.add(
            ops.mul(ops.sub(1.0, update), previous),
            ops.mul(update, candidate),
        )
        message_parts.append(message)
        if instrument:
            schedule.extend(
                (e["phase"], e["mol"], e["src_local"], e["dst_local"]) for e in group
            )

    if message_parts:
        m_final = message_parts[0] if len(message_parts) == 1 else ops.concat_rows(message_parts)
        dst_nodes = np.array([e["dst"] for e in edges], dtype=np.intp)
        inbox = ops.segment_sum(m_final, dst_nodes, n_nodes)
    else:
        inbox = ops.constant(np.zeros((n_nodes, params.hidden), dtype=dtype), dtype=dtype)
    node_read = ops.sigmoid(ops.add(
        ops.matmul(x, params.w_out),
        ops.matmul(inbox, params.u_out),
    ))
    pooled = ops.segment_mean(node_read, node_mol, len(specs))
    result = _heads(pooled, params.head_mu_w, params.head_mu_b,
                    params.head_lv_w, params.head_lv_b, eps, dtype)
    if instrument:
        return result, schedule
    return result


def encode_tree_batch(trees: list[JunctionTree], params: TreeEncoderParams,
                      eps: np.ndarray | None = None, instrument: bool = False):
    specs = [tree_spec(t, params.vocab) for t in trees]
    return encode_tree_specs(specs, params, eps=eps, instrument=instrument)


def encode_tree(tree: JunctionTree, params: TreeEncoderParams,
                eps: np.ndarray | None = None, instrument: bool = False):
    return encode_tree_batch([tree], params, eps=eps, instrument=instrument)


def gaussian_kl(mu: Tensor, logvar: Tensor) -> Tensor:
    """Mean-over-rows KL(N(mu, sigma^2) || N(0, I)); always >= 0."""
    n = mu.values.shape[0]
    inner = ops.sub(ops.add(1.0, logvar), ops.add(ops.square(mu), ops.exp(logvar)))
    return ops.mul(ops.sum_all(inner), -0.5 / n)


class DrugEncoder:
    """Bundled graph and tree encoders over one cluster vocabulary."""

    def __init__(self, vocab: ClusterVocabulary, seed=0, dtype=np.float32,
                 message_width=MESSAGE_WIDTH, tree_hidden=TREE_HIDDEN_WIDTH,
                 out_width=LATENT_HALF_WIDTH, iterations=MESSAGE_ITERATIONS):
        rng = SplitRng(seed)
        self.vocab = vocab
        self.dtype = dtype
        self.graph = GraphEncoderParams(
            message_width=message_width, out_width=out_width,
            iterations=iterations, seed=int(rng.integers(0, 2**31 - 1)), dtype=dtype,
        )
        self.tree = TreeEncoderParams(
            vocab, hidden=tree_hidden, out_width=out_width,
            seed=int(rng.integers(0, 2**31 - 1)), dtype=dtype,
        )
        self._spec_cache: dict[str, tuple[GraphSpec, TreeSpec]] = {}

    @property
    def latent_width(self) -> int:
        return self.graph.out_width + self.tree.out_width

    def parameters(self) -> list[Tensor]:
        return self.graph.parameters() + self.tree.parameters()

    def named_parameters(self) -> dict:
        named = dict(self.graph.named_parameters())
        named.update(self.tree.named_parameters())
        return named

    def prepare(self, smiles: str):
        graph = parse_smiles(smiles)
        tree = decompose(graph)
        self.vocab.assign_ids(tree)
        return graph, tree

    def specs(self, smiles: str) -> tuple[GraphSpec, TreeSpec]:
        """Memoized featurization; parsing and decomposition run once
        per distinct SMILES string."""
        cached = self._spec_cache.get(smiles)
        if cached is None:
            graph, tree = self.prepare(smiles)
            cached = (graph_spec(graph, self.dtype), tree_spec(tree, self.vocab))
            self._spec_cache[smiles] = cached
        return cached

    def encode_smiles_batch(self, smiles_list, rng: SplitRng | None = None):
        """(graph_out, tree_out) for a batch; each is (mu, logvar, z).

        Sampling happens when an rng is given (training mode); otherwise
        the z outputs are the means.
        """
        pairs = [self.specs(s) for s in smiles_list]
        n = len(pairs)
        eps_g = eps_t = None
        if rng is not None:
            eps_g = rng.normal((n, self.graph.out_width), dtype=self.dtype)
            eps_t = rng.normal((n, self.tree.out_width), dtype=self.dtype)
        graph_out = encode_graph_specs([p[0] for p in pairs], self.graph, eps=eps_g)
        tree_out = encode_tree_specs([p[1] for p in pairs], self.tree, eps=eps_t)
        return graph_out, tree_out

    def encode_drug(self, smiles: str, rng: SplitRng | None = None) -> DrugLatent:
        """Single-molecule latent; deterministic (means) unless an rng is
        passed for sampling mode."""
        (g_mu, _, g_z), (t_mu, _, t_z) = self.encode_smiles_batch([smiles], rng=rng)
        del g_mu, t_mu
        return DrugLatent(g_z.values[0].copy(), t_z.values[0].copy())

    # -- persistence -------------------------------------------------

    def to_arrays(self) -> dict:
        arrays = {name: t.values for name, t in self.named_parameters().items()}
        arrays["meta.vocab_hash"] = np.frombuffer(self.vocab.content_hash(), dtype=np.uint8)
        arrays["meta.widths"] = np.array(
            [self.graph.message_width, self.tree.hidden, self.graph.out_width,
             self.graph.iterations],
            dtype=np.int64,
        )
        return arrays

    def save(self, path):
        save_arrays(path, self.to_arrays())

    @classmethod
    def load(cls, path, vocab: ClusterVocabulary) -> "DrugEncoder":
        arrays = load_arrays(path)
        if "meta.vocab_hash" not in arrays:
            raise CheckpointError(f"{path}: not a drug-encoder checkpoint")
        stored = arrays["meta.vocab_hash"].tobytes()
        if stored != vocab.content_hash():
            raise CheckpointError(
                f"{path}: checkpoint was trained against a different cluster vocabulary"
            )
        mw, th, ow, iters = (int(v) for v in arrays["meta.widths"])
        enc = cls(vocab, message_width=mw, tree_hidden=th, out_width=ow, iterations=iters)
        for name, tensor in enc.named_parameters().items():
            tensor.values = arrays[name].astype(enc.dtype)
        return enc

    def snapshot(self) -> dict:
        return {name: t.values.copy() for name, t in self.named_parameters().items()}

    def restore(self, snap: dict):
        for name, tensor in self.named_parameters().items():
            tensor.values = snap[name].copy()
