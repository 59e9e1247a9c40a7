"""Variational autoencoder over gene-expression vectors.

Encoder: one shared 256-wide dense layer (batch-norm, ReLU), then two
parallel batch-normalized dense layers producing the posterior mean and
log-variance. Decoder: two dense layers at input width, ReLU between,
sigmoid output. Trained on binary cross-entropy plus KL with a linear
KL warm-up.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from drpred import nn
from drpred.autodiff import AdamState, Tape, Tensor, adam_step, load_arrays, ops, save_arrays
from drpred.autodiff.ops import BatchNormState
from drpred.errors import CheckpointError, DataError, DimensionError, DomainError, TrainingDivergedError
from drpred.rng import SplitRng

LATENT_WIDTH = 256
HIDDEN_WIDTH = 256
KL_WARMUP_EPOCHS = 30


@dataclass
class LatentDistribution:
    """Diagonal Gaussian posterior with one reparameterized sample."""

    mean: Tensor
    logvar: Tensor
    sample: Tensor


@dataclass
class NormalizationStats:
    """Per-gene min/max from the training split, applied at inference."""

    lo: np.ndarray
    hi: np.ndarray

    @classmethod
    def fit(cls, rows: np.ndarray) -> "NormalizationStats":
        return cls(rows.min(axis=0), rows.max(axis=0))

    def apply(self, rows: np.ndarray) -> np.ndarray:
        span = self.hi - self.lo
        scaled = np.where(span > 0, (rows - self.lo) / np.where(span > 0, span, 1.0), 0.5)
        return np.clip(scaled, 0.0, 1.0)


class GeneVaeModel:
    def __init__(self, n_genes: int, seed: int = 0, dtype=np.float32):
        if n_genes < 1:
            raise DimensionError("n_genes must be positive")
        self.n_genes = n_genes
        self.dtype = dtype
        rng = SplitRng(seed)
        d = dtype
        self.w1 = nn.glorot_uniform(rng, n_genes, HIDDEN_WIDTH, d)
        self.b1 = nn.zeros(HIDDEN_WIDTH, d)
        self.bn1_gamma = nn.ones(HIDDEN_WIDTH, d)
        self.bn1_beta = nn.zeros(HIDDEN_WIDTH, d)
        self.bn1 = BatchNormState(HIDDEN_WIDTH, dtype=d)

        self.w_mu = nn.glorot_uniform(rng, HIDDEN_WIDTH, LATENT_WIDTH, d)
        self.b_mu = nn.zeros(LATENT_WIDTH, d)
        self.bn_mu_gamma = nn.ones(LATENT_WIDTH, d)
        self.bn_mu_beta = nn.zeros(LATENT_WIDTH, d)
        self.bn_mu = BatchNormState(LATENT_WIDTH, dtype=d)

        self.w_lv = nn.glorot_uniform(rng, HIDDEN_WIDTH, LATENT_WIDTH, d)
        self.b_lv = nn.zeros(LATENT_WIDTH, d)
        self.bn_lv_gamma = nn.ones(LATENT_WIDTH, d)
        self.bn_lv_beta = nn.zeros(LATENT_WIDTH, d)
        self.bn_lv = BatchNormState(LATENT_WIDTH, dtype=d)

        self.w3 = nn.glorot_uniform(rng, LATENT_WIDTH, n_genes, d)
        self.b3 = nn.zeros(n_genes, d)
        self.w4 = nn.glorot_uniform(rng, n_genes, n_genes, d)
        self.b4 = nn.zeros(n_genes, d)

        self.norm: NormalizationStats | None = None

    def parameters(self) -> list[Tensor]:
        return [
            self.w1, self.b1, self.bn1_gamma, self.bn1_beta,
            self.w_mu, self.b_mu, self.bn_mu_gamma, self.bn_mu_beta,
            self.w_lv, self.b_lv, self.bn_lv_gamma, self.bn_lv_beta,
            self.w3, self.b3, self.w4, self.b4,
        ]

    def encode(self, x, training=False, eps: np.ndarray | None = None,
               rng: SplitRng | None = None) -> LatentDistribution:
        """Posterior for a [batch x n_genes] matrix of values in [0, 1]."""
        x = x if isinstance(x, Tensor) else Tensor(x, dtype=self.dtype)
        if x.values.ndim != 2 or x.values.shape[1] != self.n_genes:
            raise DimensionError(
                f"encode expects [batch x {self.n_genes}], got {x.values.shape}"
            )
        if x.values.min() < 0.0 or x.values.max() > 1.0:
            raise DomainError("encode expects values normalized to [0, 1]")
        h1 = ops.relu(ops.batchnorm(
            ops.add_bias(ops.matmul(x, self.w1), self.b1),
            self.bn1_gamma, self.bn1_beta, self.bn1, training,
        ))
        mu = ops.batchnorm(
            ops.add_bias(ops.matmul(h1, self.w_mu), self.b_mu),
            self.bn_mu_gamma, self.bn_mu_beta, self.bn_mu, training,
        )
        logvar = ops.batchnorm(
            ops.add_bias(ops.matmul(h1, self.w_lv), self.b_lv),
            self.bn_lv_gamma, self.bn_lv_beta, self.bn_lv, training,
        )
        if eps is None:
            if rng is None:
                eps = np.zeros(mu.values.shape, dtype=self.dtype)
            else:
                eps = rng.normal(mu.values.shape, dtype=self.dtype)
        std = ops.exp(ops.mul(logvar, 0.5))
        sample = ops.add(mu, ops.mul(std, ops.constant(eps, dtype=self.dtype)))
        return LatentDistribution(mu, logvar, sample)

    def decode(self, z) -> Tensor:
        z = z if isinstance(z, Tensor) else Tensor(z, dtype=self.dtype)
        if z.values.ndim != 2 or z.values.shape[1] != LATENT_WIDTH:
            raise DimensionError(f"decode expects [batch x {LATENT_WIDTH}], got {z.values.shape}")
        hidden = ops.relu(ops.add_bias(ops.matmul(z, self.w3), self.b3))
        return ops.sigmoid(ops.add_bias(ops.matmul(hidden, self.w4), self.b4))

    def loss(self, batch, recon, dist: LatentDistribution, beta: float):
        """(total, reconstruction, kl); recon summed over genes, KL closed
        form, both averaged over the batch."""
        target = batch.values if isinstance(batch, Tensor) else np.asarray(batch, dtype=self.dtype)
        if target.min() < 0.0 or target.max() > 1.0:
            raise DomainError("loss expects targets normalized to [0, 1]")
        if target.shape != recon.values.shape:
            raise DimensionError("loss: target and reconstruction shapes differ")
        n = target.shape[0]
        recon_loss = ops.mul(ops.sum_all(ops.bce_elem(recon, target)), 1.0 / n)
        kl_inner = ops.sub(
            ops.add(1.0, dist.logvar),
            ops.add(ops.square(dist.mean), ops.exp(dist.logvar)),
        )
        kl = ops.mul(ops.sum_all(kl_inner), -0.5 / n)
        total = ops.add(recon_loss, ops.mul(kl, float(beta)))
        return total, recon_loss, kl

    # -- persistence -------------------------------------------------

    def to_arrays(self) -> dict:
        named = self._named_parameters()
        arrays = {name: t.values for name, t in named.items()}
        for prefix, state in (("bn1.", self.bn1), ("bn_mu.", self.bn_mu), ("bn_lv.", self.bn_lv)):
            for key, arr in state.to_arrays().items():
                arrays[prefix + key] = arr
        if self.norm is not None:
            arrays["norm.lo"] = self.norm.lo
            arrays["norm.hi"] = self.norm.hi
        arrays["meta.n_genes"] = np.array([self.n_genes], dtype=np.int64)
        return arrays

    def _named_parameters(self) -> dict:
        return {
            "w1": self.w1, "b1": self.b1, "bn1.gamma": self.bn1_gamma, "bn1.beta": self.bn1_beta,
            "w_mu": self.w_mu, "b_mu": self.b_mu,
            "bn_mu.gamma": self.bn_mu_gamma, "bn_mu.beta": self.bn_mu_beta,
            "w_lv": self.w_lv, "b_lv": self.b_lv,
            "bn_lv.gamma": self.bn_lv_gamma, "bn_lv.beta": self.bn_lv_beta,
            "w3": self.w3, "b3": self.b3, "w4": self.w4, "b4": self.b4,
        }

    def save(self, path):
        save_arrays(path, self.to_arrays())

    @classmethod
    def load(cls, path) -> "GeneVaeModel":
        arrays = load_arrays(path)
        if "meta.n_genes" not in arrays:
            raise CheckpointError(f"{path}: not a geneVAE checkpoint")
        model = cls(int(arrays["meta.n_genes"][0]))
        for name, tensor in model._named_parameters().items():
            tensor.values = arrays[name].astype(model.dtype)
        model.bn1.load_arrays(arrays, "bn1.")
        model.bn_mu.load_arrays(arrays, "bn_mu.")
        model.bn_lv.load_arrays(arrays, "bn_lv.")
        if "norm.lo" in arrays:
            model.norm = NormalizationStats(arrays["norm.lo"], arrays["norm.hi"])
        return model

    def snapshot(self) -> dict:
        return {k: v.copy() for k, v in self.to_arrays().items()}

    def restore(self, snap: dict):
        for name, tensor in self._named_parameters().items():
            tensor.values = snap[name].copy()
        self.bn1.load_arrays(snap, "bn1.")
        self.bn_mu.load_arrays(snap, "bn_mu.")
        self.bn_lv.load_arrays(snap, "bn_lv.")

    def encode_means(self, raw_rows: np.ndarray) -> np.ndarray:
        """Deterministic eval-mode latent means for raw (unscaled) rows."""
        if self.norm is None:
            raise DataError("model has no normalization stats; train or load first")
        return self.encode(self.norm.apply(raw_rows).astype(self.dtype)).mean.values


def train(matrix, epochs: int, seed: int, batch_size: int = 8,
          learning_rate: float = 0.001, valid_fraction: float = 0.1):
    """Train a geneVAE on an expression matrix (genes x cell lines).

    Cell lines are the samples; a seeded 90/10 split fixes the
    normalization stats and validation set. Batches with fewer than two
    rows are dropped (batch-norm needs real statistics). Returns
    (model, history): one record per epoch with train/valid total,
    reconstruction, KL, and the KL weight in effect.
    """
    rows = np.asarray(matrix.values, dtype=np.float64).T  # cells x genes
    n_cells, n_genes = rows.shape
    if n_cells < 2:
        raise DataError("training needs at least two cell lines")

    rng = SplitRng(seed)
    split_rng, init_rng, batch_rng, eps_rng = (rng.split() for _ in range(4))

    perm = split_rng.permutation(n_cells)
    n_valid = max(1, int(round(valid_fraction * n_cells)))
    valid_idx, train_idx = perm[:n_valid], perm[n_valid:]
    if len(train_idx) < 2:
        raise DataError("training split has fewer than two cell lines")

    model = GeneVaeModel(n_genes, seed=int(init_rng.integers(0, 2**31 - 1)))
    model.norm = NormalizationStats.fit(rows[train_idx])
    scaled = model.norm.apply(rows).astype(model.dtype)
    train_rows, valid_rows = scaled[train_idx], scaled[valid_idx]

    params = model.parameters()
    adam = AdamState(learning_rate=learning_rate)
    history: list[dict] = []
    best = {"loss": np.inf, "snapshot": model.snapshot(), "epoch": 0}

    for epoch in range(1, epochs + 1):
        beta = min(1.0, epoch / KL_WARMUP_EPOCHS)
        order = batch_rng.permutation(len(train_rows))
        for lo in range(0, len(order), batch_size):
            batch = train_rows[order[lo : lo + batch_size]]
            if len(batch) < 2:
                continue
            eps = eps_rng.normal((len(batch), LATENT_WIDTH), dtype=model.dtype)
            for p in params:
                p.zero_grad()
            with Tape() as tape:
                dist = model.encode(batch, training=True, eps=eps)
                recon = model.decode(dist.sample)
                total, _, _ = model.loss(batch, recon, dist, beta)
            if not np.isfinite(total.values):
                raise TrainingDivergedError(f"non-finite loss at epoch {epoch}", epoch=epoch)
            tape.backward(total)
            adam_step(params, [p.grad if p.grad is not None else np.zeros_like(p.values) for p in params], adam)

        record = {"epoch": epoch, "beta": beta}
        for split_name, data in (("train", train_rows), ("valid", valid_rows)):
            total, recon_v, kl_v = _evaluate(model, data, beta)
            record[f"{split_name}_total"] = total
            record[f"{split_name}_recon"] = recon_v
            record[f"{split_name}_kl"] = kl_v
        if not np.isfinite(record["valid_total"]):
            raise TrainingDivergedError(f"non-finite validation loss at epoch {epoch}", epoch=epoch)
        history.append(record)
        if record["valid_total"] < best["loss"]:
            best = {"loss": record["valid_total"], "snapshot": model.snapshot(), "epoch": epoch}

    if history:
        model.restore(best["snapshot"])
    return model, history


def _evaluate(model: GeneVaeModel, rows: np.ndarray, beta: float):
    """Eval-mode loss with z = mu (no sampling noise)."""
    dist = model.encode(rows, training=False)
    recon = model.decode(dist.mean)
    total, recon_loss, kl = model.loss(rows, recon, dist, beta)
    return float(total.values), float(recon_loss.values), float(kl.values)
