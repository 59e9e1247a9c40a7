"""Response predictor: post-processing MLPs for the gene and drug
latents, then a combiner MLP emitting the predicted ln(IC50).

All layers use PReLU with one learnable slope per layer; the output
layer is linear since ln(IC50) is unbounded. Batch normalization is
deliberately absent here (it hurt accuracy in shallow PReLU stacks);
the geneVAE keeps its own.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from drpred import nn
from drpred.autodiff import AdamState, Tape, Tensor, adam_step, load_arrays, ops, save_arrays
from drpred.drugenc import DRUG_LATENT_WIDTH, DrugEncoder, gaussian_kl
from drpred.errors import (
    CheckpointError,
    DataError,
    DimensionError,
    TrainingDivergedError,
)
from drpred.rng import SplitRng

GENE_POST_WIDTHS = (256, 256, 64)
DRUG_POST_WIDTHS = (128, 128, 64)
COMBINER_HIDDEN = (128, 128, 64)


@dataclass
class TrainingConfig:
    batch_size: int = 8
    learning_rate: float = 0.001
    max_epochs: int = 200
    patience: int = 20
    kl_weight: float = 1e-3
    seed: int = 0
    split_ratios: tuple = (18, 1, 1)
    sample_latents: bool = True

    def __post_init__(self):
        if self.batch_size < 2:
            raise DataError("batch size must be at least 2")
        if len(self.split_ratios) != 3 or min(self.split_ratios) <= 0:
            raise DataError("split ratios must be three positive numbers")


class _Mlp:
    """Dense stack with per-layer PReLU; optionally linear last layer."""

    def __init__(self, rng, widths, prefix, dtype, linear_output=False):
        self.prefix = prefix
        self.linear_output = linear_output
        self.layers = []
        for k, (n_in, n_out) in enumerate(zip(widths[:-1], widths[1:])):
            w = nn.glorot_uniform(rng, n_in, n_out, dtype)
            b = nn.zeros(n_out, dtype)
            alpha = nn.scalar(0.25, dtype)
            self.layers.append((w, b, alpha))
            del k

    def __call__(self, x: Tensor) -> Tensor:
        out = x
        for k, (w, b, alpha) in enumerate(self.layers):
            out = ops.add_bias(ops.matmul(out, w), b)
            is_last = k == len(self.layers) - 1
            if not (is_last and self.linear_output):
                out = ops.prelu(out, alpha)
        return out

    def parameters(self):
        params = []
        for w, b, alpha in self.layers:
            params.extend([w, b, alpha])
        return params

    def named_parameters(self):
        named = {}
        for k, (w, b, alpha) in enumerate(self.layers):
            named[f"{self.prefix}.{k}.w"] = w
            named[f"{self.prefix}.{k}.b"] = b
            named[f"{self.prefix}.{k}.alpha"] = alpha
        return named


class PredictorModel:
    def __init__(self, gene_dim: int, drug_dim: int = DRUG_LATENT_WIDTH,
                 seed: int = 0, dtype=np.float32):
        rng = SplitRng(seed)
        self.gene_dim = gene_dim
        self.drug_dim = drug_dim
        self.dtype = dtype
        self.gene_mlp = _Mlp(rng.split(), (gene_dim,) + GENE_POST_WIDTHS, "gene", dtype)
        self.drug_mlp = _Mlp(rng.split(), (drug_dim,) + DRUG_POST_WIDTHS, "drug", dtype)
        combiner_widths = (GENE_POST_WIDTHS[-1] + DRUG_POST_WIDTHS[-1],) + COMBINER_HIDDEN + (1,)
        self.combiner = _Mlp(rng.split(), combiner_widths, "combiner", dtype, linear_output=True)

    def forward(self, z_gene, z_drug) -> Tensor:
        z_gene = z_gene if isinstance(z_gene, Tensor) else Tensor(z_gene, dtype=self.dtype)
        z_drug = z_drug if isinstance(z_drug, Tensor) else Tensor(z_drug, dtype=self.dtype)
        if z_gene.values.ndim != 2 or z_gene.values.shape[1] != self.gene_dim:
            raise DimensionError(
                f"gene input must be [n x {self.gene_dim}], got {z_gene.values.shape}"
            )
        if z_drug.values.ndim != 2 or z_drug.values.shape[1] != self.drug_dim:
            raise DimensionError(
                f"drug input must be [n x {self.drug_dim}], got {z_drug.values.shape}"
            )
        if z_gene.values.shape[0] != z_drug.values.shape[0]:
            raise DimensionError("gene and drug batches differ in length")
        a_gene = self.gene_mlp(z_gene)
        a_drug = self.drug_mlp(z_drug)
        a_all = ops.concat_cols([a_gene, a_drug])
        return self.combiner(a_all)

    def parameters(self):
        return self.gene_mlp.parameters() + self.drug_mlp.parameters() + self.combiner.parameters()

    def named_parameters(self):
        named = {}
        for mlp in (self.gene_mlp, self.drug_mlp, self.combiner):
            named.update(mlp.named_parameters())
        return named

    def to_arrays(self):
        arrays = {name: t.values for name, t in self.named_parameters().items()}
        arrays["meta.dims"] = np.array([self.gene_dim, self.drug_dim], dtype=np.int64)
        return arrays

    def save(self, path):
        save_arrays(path, self.to_arrays())

    @classmethod
    def load(cls, path):
        arrays = load_arrays(path)
        if "meta.dims" not in arrays:
            raise CheckpointError(f"{path}: not a predictor checkpoint")
        gene_dim, drug_dim = (int(v) for v in arrays["meta.dims"])
        model = cls(gene_dim, drug_dim)
        for name, tensor in model.named_parameters().items():
            tensor.values = arrays[name].astype(model.dtype)
        return model

    def snapshot(self):
        return {name: t.values.copy() for name, t in self.named_parameters().items()}

    def restore(self, snap):
        for name, tensor in self.named_parameters().items():
            tensor.values = snap[name].copy()


@dataclass
class GeneFeatureTable:
    """Frozen per-cell-line gene feature rows (VAE means or raw features)."""

    cell_ids: list[str]
    rows: np.ndarray  # [n_cells x width]
    index: dict = field(init=False)

    def __post_init__(self):
        self.index = {cid: i for i, cid in enumerate(self.cell_ids)}

    @property
    def width(self):
        return self.rows.shape[1]

    def row_indices(self, cell_ids):
        try:
            return np.array([self.index[c] for c in cell_ids], dtype=np.intp)
        except KeyError as exc:
            raise DataError(f"cell line {exc.args[0]!r} has no gene features") from None


def vae_feature_table(genevae_model, expression) -> GeneFeatureTable:
    """Deterministic eval-mode latent means for every cell line."""
    means = genevae_model.encode_means(expression.values.T)
    return GeneFeatureTable(list(expression.cell_ids), means)


def expression_feature_table(expression) -> GeneFeatureTable:
    """Min-max scaled expression rows fed directly to the predictor."""
    rows = expression.values.T
    lo, hi = rows.min(axis=0), rows.max(axis=0)
    span = np.where(hi > lo, hi - lo, 1.0)
    return GeneFeatureTable(list(expression.cell_ids), ((rows - lo) / span).astype(np.float32))


def _encode_drugs(encoder: DrugEncoder, smiles_list, rng=None):
    (g_mu, g_lv, g_z), (t_mu, t_lv, t_z) = encoder.encode_smiles_batch(smiles_list, rng=rng)
    latents = ops.concat_cols([g_z, t_z])
    kl = ops.add(gaussian_kl(g_mu, g_lv), gaussian_kl(t_mu, t_lv))
    return latents, kl


def _evaluate_mse(model, encoder, table, records, indices, drug_latents, drug_pos):
    if not indices:
        raise DataError("empty evaluation split")
    cells = [records[i].cell_id for i in indices]
    gene_rows = table.rows[table.row_indices(cells)].astype(np.float32)
    drug_rows = drug_latents[[drug_pos[records[i].drug_id] for i in indices]]
    preds = model.forward(Tensor(gene_rows, dtype=model.dtype),
                          Tensor(drug_rows, dtype=model.dtype)).values[:, 0]
    targets = np.array([records[i].ln_ic50 for i in indices])
    return float(np.mean((preds - targets) ** 2))


def _deterministic_drug_latents(encoder, drug_ids, drug_smiles):
    (g_mu, _, _), (t_mu, _, _) = encoder.encode_smiles_batch(
        [drug_smiles[d] for d in drug_ids]
    )
    return np.concatenate([g_mu.values, t_mu.values], axis=1)


def train_e2e(dataset, gene_features: GeneFeatureTable, drug_encoder: DrugEncoder,
              cfg: TrainingConfig):
    """Joint training: MSE on ln(IC50) plus KL regularizers on the drug
    latent heads. Gene features are frozen inputs; the drug encoder and
    predictor train together. Early stopping keeps the checkpoint with
    the best validation RMSE (re-verified on restore).

    Returns (model, history); history has one record per epoch with the
    epoch's train MSE and validation RMSE, both in deterministic mode.
    """
    records = dataset.records
    train_idx = dataset.indices("train")
    valid_idx = dataset.indices("valid")
    if not train_idx or not valid_idx:
        raise DataError("dataset needs non-empty train and valid splits")

    drug_ids = sorted({r.drug_id for r in records})
    drug_smiles = {r.drug_id: r.smiles for r in records}
    drug_pos = {d: k for k, d in enumerate(drug_ids)}

    rng = SplitRng(cfg.seed)
    model_rng, batch_rng, eps_rng = rng.split(), rng.split(), rng.split()
    model = PredictorModel(gene_features.width, drug_encoder.latent_width,
                           seed=int(model_rng.integers(0, 2**31 - 1)))
    params = model.parameters() + drug_encoder.parameters()
    adam = AdamState(learning_rate=cfg.learning_rate)

    history = []
    best = {"rmse": np.inf, "model": model.snapshot(), "encoder": drug_encoder.snapshot(),
            "epoch": 0}
    stale = 0

    for epoch in range(1, cfg.max_epochs + 1):
        order = batch_rng.permutation(len(train_idx))
        for lo in range(0, len(order), cfg.batch_size):
            batch = [records[train_idx[k]] for k in order[lo : lo + cfg.batch_size]]
            batch_drugs = sorted({r.drug_id for r in batch})
            local_pos = {d: k for k, d in enumerate(batch_drugs)}
            gene_rows = gene_features.rows[
                gene_features.row_indices([r.cell_id for r in batch])
            ].astype(np.float32)
            targets = np.array([[r.ln_ic50] for r in batch], dtype=np.float32)

            for p in params:
                p.zero_grad()
            with Tape() as tape:
                latents, kl = _encode_drugs(
                    drug_encoder, [drug_smiles[d] for d in batch_drugs],
                    rng=eps_rng if cfg.sample_latents else None,
                )
                drug_rows = ops.gather_rows(latents, [local_pos[r.drug_id] for r in batch])
                preds = model.forward(Tensor(gene_rows, dtype=model.dtype), drug_rows)
                err = ops.sub(preds, ops.constant(targets, dtype=model.dtype))
                mse = ops.mean_all(ops.square(err))
                loss = ops.add(mse, ops.mul(kl, cfg.kl_weight))
            if not np.isfinite(loss.values):
                raise TrainingDivergedError(f"non-finite loss at epoch {epoch}", epoch=epoch)
            tape.backward(loss)
            adam_step(params, [p.grad if p.grad is not None else np.zeros_like(p.values)
                               for p in params], adam)

        drug_latents = _deterministic_drug_latents(drug_encoder, drug_ids, drug_smiles)
        train_mse = _evaluate_mse(model, drug_encoder, gene_features, records,
                                  train_idx, drug_latents, drug_pos)
        valid_rmse = float(np.sqrt(_evaluate_mse(model, drug_encoder, gene_features, records,
                                                 valid_idx, drug_latents, drug_pos)))
        if not (np.isfinite(train_mse) and np.isfinite(valid_rmse)):
            raise TrainingDivergedError(f"non-finite evaluation at epoch {epoch}", epoch=epoch)
        history.append({"epoch": epoch, "train_mse": train_mse, "valid_rmse": valid_rmse})

        if valid_rmse < best["rmse"]:
            best = {"rmse": valid_rmse, "model": model.snapshot(),
                    "encoder": drug_encoder.snapshot(), "epoch": epoch}
            stale = 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break

    if history:
        model.restore(best["model"])
        drug_encoder.restore(best["encoder"])
    return model, history


def predict_pairs(pairs, gene_features: GeneFeatureTable, drug_encoder: DrugEncoder,
                  model: PredictorModel):
    """Deterministic predictions for (cell_id, drug_id, smiles) triples.

    Never aborts on a bad row: each output row carries a status of "ok"
    or an error description, in input order.
    """
    rows = []
    encodable = {}
    for cell_id, drug_id, smiles in pairs:
        status = "ok"
        if cell_id not in gene_features.index:
            status = "error: unknown cell line"
        elif smiles not in encodable:
            try:
                latent = drug_encoder.encode_drug(smiles)
                encodable[smiles] = latent.z_drug
            except Exception as exc:  # parse or vocabulary failure
                encodable[smiles] = None
                status = f"error: {exc}"
        if status == "ok" and encodable.get(smiles) is None:
            status = "error: drug not encodable"
        rows.append({"cell_line": cell_id, "drug_id": drug_id, "smiles": smiles,
                     "status": status})

    good = [i for i, r in enumerate(rows) if r["status"] == "ok"]
    if good:
        gene_rows = gene_features.rows[
            gene_features.row_indices([rows[i]["cell_line"] for i in good])
        ].astype(np.float32)
        drug_rows = np.stack([encodable[rows[i]["smiles"]] for i in good])
        preds = model.forward(Tensor(gene_rows, dtype=model.dtype),
                              Tensor(drug_rows, dtype=model.dtype)).values[:, 0]
        for i, p in zip(good, preds):
            rows[i]["predicted_ln_ic50"] = float(p)
    for r in rows:
        r.setdefault("predicted_ln_ic50", None)
    return rows
