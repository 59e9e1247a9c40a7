import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from drpred.autodiff import Tape, Tensor, gradcheck, ops
from drpred.chem import build_vocabulary, decompose, parse_smiles
from drpred.chem.graph import Atom, Bond, MolecularGraph
from drpred.drugenc import (
    DrugEncoder,
    GraphEncoderParams,
    TreeEncoderParams,
    encode_graph,
    encode_graph_batch,
    encode_tree,
    gaussian_kl,
)
from drpred.errors import CheckpointError, VocabularyError
from drpred.rng import SplitRng

SMILES_POOL = [
    "CC", "CCO", "Cc1ccccc1", "c1ccccc1-c1ccccc1", "CC(C)(C)CC",
    "N#Cc1ccc(Cl)cc1", "OC(=O)c1ccc2ccccc2c1", "C1CCNCC1", "CC(=O)Oc1ccccc1",
]


def make_vocab():
    return build_vocabulary(SMILES_POOL)


def condition_params(params, seed, scale=0.4):
    """Unit-scale random weights for finite-difference comparisons.

    Default tiny-uniform inits leave some true gradients within a decade
    of the 1e-8 denominator floor, where float64 evaluation noise alone
    exceeds the 1e-4 relative band; drawing weights at a healthy scale
    keeps the check meaningful."""
    rng = np.random.default_rng(seed)
    for p in params:
        p.values = rng.normal(0, scale, p.values.shape)


def naive_graph_encode(graph, params):
    """Per-edge loop reference for the message-passing encoder."""
    w_msg = params.w_msg.values
    w_atom = params.w_atom.values
    w_bond = params.w_bond.values
    a = graph.atom_features(params.dtype)
    b = graph.bond_features(params.dtype)
    edges = []
    for bi, bond in enumerate(graph.bonds):
        edges.append((bond.u, bond.v, bi))
        edges.append((bond.v, bond.u, bi))
    msg = {(u, v): np.zeros(params.message_width) for u, v, _ in edges}
    for _ in range(params.iterations):
        new = {}
        for u, v, bi in edges:
            inc = sum(
                (msg[(j, u)] for j, _ in graph.adjacency()[u] if j != v),
                np.zeros(params.message_width),
            )
            new[(u, v)] = np.maximum(0, inc @ w_msg + a[u] @ w_atom + b[bi] @ w_bond)
        msg = new
    reads = []
    for u in range(graph.n_atoms):
        inc = sum(
            (msg[(j, u)] for j, _ in graph.adjacency()[u]),
            np.zeros(params.message_width),
        )
        reads.append(np.maximum(0, inc @ params.u_msg.values + a[u] @ params.u_atom.values))
    pooled = np.mean(reads, axis=0)
    return pooled @ params.head_mu_w.values + params.head_mu_b.values


def naive_tree_encode(tree, params):
    """Sequential reference for the two-phase GRU tree sweep."""
    x = params.embedding.values[tree.vocab_ids]
    parent, depth = tree.parents_and_depths()
    adj = tree.neighbors()
    order = []
    nodes_by_depth = sorted(range(tree.n_clusters), key=lambda c: -depth[c])
    height = {}
    for c in nodes_by_depth:
        kids = [k for k in adj[c] if parent[k] == c]
        height[c] = 1 + max((height[k] for k in kids), default=-1)
    ups = sorted(
        ((c, parent[c]) for c in range(tree.n_clusters) if parent[c] >= 0),
        key=lambda e: (height[e[0]], e[0]),
    )
    downs = sorted(
        ((parent[c], c) for c in range(tree.n_clusters) if parent[c] >= 0),
        key=lambda e: (depth[e[0]], e[0]),
    )
    order = ups + downs

    def sigmoid(v):
        return 1.0 / (1.0 + np.exp(-v))

    msg = {}
    gates = []
    for i, j in order:
        inc = [msg[(k, i)] for k in adj[i] if k != j and (k, i) in msg]
        gated = np.zeros(params.hidden)
        for m in inc:
            r = sigmoid(x[i] @ params.w_reset.values + m @ params.u_reset.values)
            gates.append(r)
            gated = gated + r * m
        cand = np.tanh(x[i] @ params.w_cand.values + gated)
        z = sigmoid(x[i] @ params.w_update.values)  # prior message is zero
        gates.append(z)
        msg[(i, j)] = (1 - z) * 0.0 + z * cand
    reads = []
    for u in range(tree.n_clusters):
        inc = sum((msg[(k, u)] for k in adj[u]), np.zeros(params.hidden))
        reads.append(sigmoid(x[u] @ params.w_out.values + inc @ params.u_out.values))
    pooled = np.mean(reads, axis=0)
    mu = pooled @ params.head_mu_w.values + params.head_mu_b.values
    return mu, gates


def permute_graph(graph, perm):
    inverse = {old: new for new, old in enumerate(perm)}
    atoms = [graph.atoms[old] for old in perm]
    bonds = []
    for b in graph.bonds:
        u, v = inverse[b.u], inverse[b.v]
        bonds.append(Bond(min(u, v), max(u, v), b.order))
    return MolecularGraph([Atom(a.element, a.charge, a.aromatic, a.hcount) for a in atoms], bonds)


class TestGraphEncoder:
    def test_single_atom_formula(self):
        # No bonds: readout reduces to relu(U_u a_u), pooled over one atom.
        params = GraphEncoderParams(message_width=16, out_width=4, seed=1)
        graph = MolecularGraph([Atom("C", hcount=4)], [])
        mu, logvar, z = encode_graph(graph, params)
        read = np.maximum(0, graph.atom_features() @ params.u_atom.values)
        expected = read.mean(axis=0) @ params.head_mu_w.values + params.head_mu_b.values
        np.testing.assert_allclose(mu.values[0], expected, rtol=1e-5)

    @pytest.mark.parametrize("smiles", ["Cc1ccccc1", "CC(C)(C)CC", "c1ccccc1-c1ccccc1"])
    def test_matches_naive_reference(self, smiles):
        params = GraphEncoderParams(message_width=16, out_width=4, iterations=3,
                                    seed=5, dtype=np.float64)
        graph = parse_smiles(smiles)
        mu, _, _ = encode_graph(graph, params)
        np.testing.assert_allclose(mu.values[0], naive_graph_encode(graph, params), rtol=1e-9)

    def test_benzene_permutation_invariance(self):
        params = GraphEncoderParams(message_width=16, out_width=4, seed=2)
        graph = parse_smiles("c1ccccc1")
        base, _, _ = encode_graph(graph, params)
        rng = np.random.default_rng(0)
        for _ in range(10):
            perm = rng.permutation(graph.n_atoms)
            mu, _, _ = encode_graph(permute_graph(graph, perm), params)
            assert np.abs(mu.values - base.values).max() <= 1e-6

    def test_batch_matches_single(self):
        params = GraphEncoderParams(message_width=16, out_width=4, seed=3)
        graphs = [parse_smiles(s) for s in ("CC", "Cc1ccccc1", "C")]
        batch_mu, _, _ = encode_graph_batch(graphs, params)
        for i, g in enumerate(graphs):
            single_mu, _, _ = encode_graph(g, params)
            np.testing.assert_allclose(batch_mu.values[i], single_mu.values[0], rtol=1e-5)

    def test_gradcheck(self):
        params = GraphEncoderParams(message_width=8, out_width=3, iterations=3,
                                    seed=7, dtype=np.float64)
        condition_params(params.parameters(), seed=0)
        graph = parse_smiles("Cc1ccccc1")

        def loss():
            mu, logvar, _ = encode_graph(graph, params)
            return ops.add(ops.sum_all(ops.square(mu)), ops.sum_all(ops.square(logvar)))

        assert gradcheck(loss, params.parameters(), max_coords=24) <= 1e-4


class TestTreeEncoder:
    def test_single_cluster_formula(self):
        vocab = make_vocab()
        params = TreeEncoderParams(vocab, hidden=16, out_width=4, seed=1)
        tree = decompose(parse_smiles("CC"))
        mu, _, _ = encode_tree(tree, params)
        x = params.embedding.values[vocab.id_of(tree.clusters[0].label)]
        read = 1.0 / (1.0 + np.exp(-(x @ params.w_out.values)))
        expected = read @ params.head_mu_w.values + params.head_mu_b.values
        np.testing.assert_allclose(mu.values[0], expected, rtol=1e-5)

    @pytest.mark.parametrize("smiles", ["Cc1ccccc1", "CC(C)(C)CC", "OC(=O)c1ccc2ccccc2c1"])
    def test_matches_naive_reference(self, smiles):
        vocab = make_vocab()
        params = TreeEncoderParams(vocab, hidden=16, out_width=4, seed=5, dtype=np.float64)
        tree = decompose(parse_smiles(smiles))
        vocab.assign_ids(tree)
        mu, _, _ = encode_tree(tree, params)
        expected, gates = naive_tree_encode(tree, params)
        np.testing.assert_allclose(mu.values[0], expected, rtol=1e-9)
        for g in gates:
            assert np.all(g > 0) and np.all(g < 1)

    def test_schedule_touches_each_directed_edge_once(self):
        vocab = make_vocab()
        params = TreeEncoderParams(vocab, hidden=8, out_width=4, seed=2)
        for smiles in SMILES_POOL:
            tree = decompose(parse_smiles(smiles))
            _, schedule = encode_tree(tree, params, instrument=True)
            assert len(schedule) == 2 * (tree.n_clusters - 1)
            directed = {(src, dst) for _, _, src, dst in schedule}
            assert len(directed) == len(schedule)  # no edge repeated
            expected = set()
            for i, j in tree.edges:
                expected.add((i, j))
                expected.add((j, i))
            assert directed == expected
            up = [e for e in schedule if e[0] == "up"]
            down = [e for e in schedule if e[0] == "down"]
            assert len(up) == len(down) == tree.n_clusters - 1

    def test_reset_gate_forced_to_zero(self):
        # Huge negative reset weights drive r ~ 0, so the candidate
        # collapses to tanh(W x) and the message to z * tanh(W x).
        vocab = make_vocab()
        params = TreeEncoderParams(vocab, hidden=8, out_width=4, seed=3, dtype=np.float64)
        params.w_reset.values = np.full_like(params.w_reset.values, -1e4)
        params.u_reset.values = np.zeros_like(params.u_reset.values)
        tree = decompose(parse_smiles("Cc1ccccc1"))
        vocab.assign_ids(tree)
        mu, _, _ = encode_tree(tree, params)
        expected, _ = naive_tree_encode(tree, params)
        np.testing.assert_allclose(mu.values[0], expected, rtol=1e-9)

    def test_unseen_cluster_label_raises(self):
        vocab = build_vocabulary(["CC"])
        params = TreeEncoderParams(vocab, hidden=8, out_width=4)
        tree = decompose(parse_smiles("c1ccccc1"))
        with pytest.raises(VocabularyError, match="c1ccccc1"):
            encode_tree(tree, params)

    def test_gradcheck(self):
        vocab = make_vocab()
        params = TreeEncoderParams(vocab, hidden=8, out_width=3, seed=9, dtype=np.float64)
        condition_params(params.parameters(), seed=1)
        tree = decompose(parse_smiles("CC(C)(C)CC"))
        vocab.assign_ids(tree)

        def loss():
            mu, logvar, _ = encode_tree(tree, params)
            objective = ops.add(ops.sum_all(ops.square(mu)), gaussian_kl(mu, logvar))
            return ops.mul(objective, 0.01)

        assert gradcheck(loss, params.parameters(), max_coords=16) <= 1e-4


class TestDrugEncoder:
    def test_latent_width_fixed(self):
        enc = DrugEncoder(make_vocab(), seed=1)
        for smiles in ("CC", "OC(=O)c1ccc2ccccc2c1"):
            assert enc.encode_drug(smiles).z_drug.shape == (56,)

    def test_deterministic_mode(self):
        enc = DrugEncoder(make_vocab(), seed=1)
        a = enc.encode_drug("Cc1ccccc1").z_drug
        b = enc.encode_drug("Cc1ccccc1").z_drug
        np.testing.assert_array_equal(a, b)

    def test_distinct_molecules_distinct_latents(self):
        enc = DrugEncoder(make_vocab(), seed=1)
        a = enc.encode_drug("CC").z_drug
        b = enc.encode_drug("CCO").z_drug
        assert np.linalg.norm(a - b) > 0

    def test_sampling_mode_varies(self):
        enc = DrugEncoder(make_vocab(), seed=1)
        rng = SplitRng(0)
        a = enc.encode_drug("CC", rng=rng).z_drug
        b = enc.encode_drug("CC", rng=rng).z_drug
        assert not np.array_equal(a, b)

    def test_checkpoint_round_trip(self, tmp_path):
        vocab = make_vocab()
        enc = DrugEncoder(vocab, seed=4, message_width=16, tree_hidden=16, out_width=4)
        path = tmp_path / "drugenc.dpck"
        enc.save(path)
        again = DrugEncoder.load(path, vocab)
        np.testing.assert_array_equal(
            enc.encode_drug("Cc1ccccc1").z_drug, again.encode_drug("Cc1ccccc1").z_drug
        )

    def test_checkpoint_refuses_other_vocabulary(self, tmp_path):
        enc = DrugEncoder(make_vocab(), seed=4)
        path = tmp_path / "drugenc.dpck"
        enc.save(path)
        other = build_vocabulary(["CC", "CCO"])
        with pytest.raises(CheckpointError, match="vocabulary"):
            DrugEncoder.load(path, other)


@settings(max_examples=25, deadline=None)
@given(
    mu_scale=st.floats(0.0, 3.0),
    lv=st.floats(-3.0, 3.0),
    seed=st.integers(0, 10_000),
)
def test_gaussian_kl_nonnegative(mu_scale, lv, seed):
    rng = np.random.default_rng(seed)
    mu = Tensor(rng.normal(0, mu_scale or 1e-9, (3, 5)), dtype=np.float64)
    logvar = Tensor(np.full((3, 5), lv), dtype=np.float64)
    kl = gaussian_kl(mu, logvar)
    assert kl.values >= -1e-12


def test_gaussian_kl_zero_iff_standard_normal():
    mu = Tensor(np.zeros((2, 4)), dtype=np.float64)
    logvar = Tensor(np.zeros((2, 4)), dtype=np.float64)
    assert gaussian_kl(mu, logvar).values == 0.0
    mu2 = Tensor(np.full((1, 1), 1.0), dtype=np.float64)
    lv2 = Tensor(np.zeros((1, 1)), dtype=np.float64)
    np.testing.assert_allclose(gaussian_kl(mu2, lv2).values, 0.5, rtol=1e-12)
