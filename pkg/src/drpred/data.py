"""Data ingestion, gene filtering, response joining, and the synthetic
desk-scale benchmark generator.

File formats:
  expression CSV : first column gene id, header row of cell-line ids,
                   numeric body of log2(tpm+1) values
  CGC file       : one gene symbol per line ('#' comments allowed)
  GDSC CSV       : header drug_id,cell_line,ln_ic50
  drug table CSV : header drug_id,smiles
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from drpred.errors import DataError, ParseError
from drpred.rng import SplitRng
from drpred.chem import parse_smiles

HAEMATOPOIETIC = "HAEMATOPOIETIC_AND_LYMPHOID_TISSUE"
SPLIT_RATIOS = (18, 1, 1)


def tissue_of(cell_id: str) -> str:
    """Token after the first underscore; the long haematopoietic label
    is renamed HALT."""
    if "_" not in cell_id:
        raise DataError(f"cell id {cell_id!r} has no tissue suffix")
    token = cell_id.split("_", 1)[1]
    if not token:
        raise DataError(f"cell id {cell_id!r} has an empty tissue suffix")
    return "HALT" if token == HAEMATOPOIETIC else token


@dataclass
class GeneExpressionMatrix:
    gene_ids: list[str]
    cell_ids: list[str]
    values: np.ndarray  # genes x cell lines, float64
    tissues: list[str] = field(default_factory=list)

    def __post_init__(self):
        if not self.tissues:
            self.tissues = [tissue_of(c) for c in self.cell_ids]

    @property
    def n_genes(self):
        return len(self.gene_ids)

    @property
    def n_cells(self):
        return len(self.cell_ids)

    def select_genes(self, keep_indices) -> "GeneExpressionMatrix":
        keep = list(keep_indices)
        return GeneExpressionMatrix(
            [self.gene_ids[i] for i in keep],
            list(self.cell_ids),
            self.values[keep, :].copy(),
            list(self.tissues),
        )

    def select_cells(self, keep_indices) -> "GeneExpressionMatrix":
        keep = list(keep_indices)
        return GeneExpressionMatrix(
            list(self.gene_ids),
            [self.cell_ids[i] for i in keep],
            self.values[:, keep].copy(),
            [self.tissues[i] for i in keep],
        )

    def column_of(self, cell_id: str) -> np.ndarray:
        try:
            return self.values[:, self.cell_ids.index(cell_id)]
        except ValueError:
            raise DataError(f"cell line {cell_id!r} not in expression matrix") from None


@dataclass
class GeneFilterReport:
    kept: list[str]
    dropped_cgc: list[str]
    dropped_mean: list[str]
    dropped_std: list[str]

    def summary(self) -> str:
        return (
            f"kept {len(self.kept)} genes; dropped {len(self.dropped_cgc)} absent from CGC, "
            f"{len(self.dropped_mean)} with mean < 1, {len(self.dropped_std)} with std < 0.5"
        )


@dataclass
class ResponseRecord:
    cell_id: str
    drug_id: str
    smiles: str
    ln_ic50: float


@dataclass
class ResponseDataset:
    records: list[ResponseRecord]
    splits: list[str]  # "train" | "valid" | "test", parallel to records
    provenance: str = ""

    def indices(self, split: str) -> list[int]:
        return [i for i, s in enumerate(self.splits) if s == split]


def load_expression(path) -> GeneExpressionMatrix:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty expression file") from None
        cell_ids = header[1:]
        if not cell_ids:
            raise DataError(f"{path}: header has no cell-line columns")
        if len(set(cell_ids)) != len(cell_ids):
            raise DataError(f"{path}: duplicate cell-line ids in header")
        gene_ids: list[str] = []
        rows: list[list[float]] = []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(cell_ids) + 1:
                raise DataError(f"{path}: row {lineno} has {len(row)} fields, expected {len(cell_ids) + 1}")
            gene_ids.append(row[0])
            parsed = []
            for col, cell in enumerate(row[1:], start=2):
                try:
                    value = float(cell)
                except ValueError:
                    raise DataError(f"{path}: non-numeric value at row {lineno}, column {col}") from None
                if not np.isfinite(value) or value < 0:
                    raise DataError(f"{path}: invalid expression value at row {lineno}, column {col}")
                parsed.append(value)
            rows.append(parsed)
    if not gene_ids:
        raise DataError(f"{path}: no gene rows")
    if len(set(gene_ids)) != len(gene_ids):
        raise DataError(f"{path}: duplicate gene ids")
    return GeneExpressionMatrix(gene_ids, cell_ids, np.array(rows, dtype=np.float64))


def save_expression(matrix: GeneExpressionMatrix, path) -> None:
    """Lossless writer: floats via repr round-trip exactly."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["gene_id"] + list(matrix.cell_ids))
        for gid, row in zip(matrix.gene_ids, matrix.values):
            writer.writerow([gid] + [repr(float(v)) for v in row])


def load_gene_list(path) -> set[str]:
    out = set()
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            stripped = line.strip()
            if stripped and not stripped.startswith("#"):
                out.add(stripped)
    return out


def filter_genes(matrix: GeneExpressionMatrix, cgc: set[str]):
    """CGC membership first, then mean >= 1, then population std >= 0.5."""
    if matrix.n_genes == 0:
        raise DataError("cannot filter an empty matrix")
    kept, dropped_cgc, dropped_mean, dropped_std = [], [], [], []
    keep_idx = []
    for i, gid in enumerate(matrix.gene_ids):
        if gid not in cgc:
            dropped_cgc.append(gid)
            continue
        row = matrix.values[i]
        if row.mean() < 1.0:
            dropped_mean.append(gid)
            continue
        if row.std() < 0.5:  # population std
            dropped_std.append(gid)
            continue
        kept.append(gid)
        keep_idx.append(i)
    if not kept:
        raise DataError(
            "gene filtering removed every gene; review the CGC list and the mean/std thresholds"
        )
    report = GeneFilterReport(kept, dropped_cgc, dropped_mean, dropped_std)
    return matrix.select_genes(keep_idx), report


def select_tissue(matrix: GeneExpressionMatrix, token: str) -> GeneExpressionMatrix:
    if not token:
        raise DataError("tissue token must be non-empty")
    keep = [i for i, t in enumerate(matrix.tissues) if t == token]
    if not keep:
        raise DataError(f"no cell lines with tissue {token!r}")
    return matrix.select_cells(keep)


def load_gdsc(path) -> list[tuple[str, str, float]]:
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:3]] != ["drug_id", "cell_line", "ln_ic50"]:
            raise DataError(f"{path}: expected header drug_id,cell_line,ln_ic50")
        for lineno, row in enumerate(reader, start=2):
            if len(row) < 3:
                raise DataError(f"{path}: row {lineno} is short")
            try:
                out.append((row[0], row[1], float(row[2])))
            except ValueError:
                raise DataError(f"{path}: non-numeric ln_ic50 at row {lineno}") from None
    return out


def load_drug_table(path) -> dict[str, str]:
    out: dict[str, str] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:2]] != ["drug_id", "smiles"]:
            raise DataError(f"{path}: expected header drug_id,smiles")
        for lineno, row in enumerate(reader, start=2):
            if len(row) < 2:
                raise DataError(f"{path}: row {lineno} is short")
            if row[0] in out:
                raise DataError(f"{path}: duplicate drug id {row[0]!r} at row {lineno}")
            out[row[0]] = row[1]
    return out


def join_response(expr: GeneExpressionMatrix, gdsc_rows, drug_table, seed: int = 0,
                  pinned_test=()):
    """Inner join of response rows against expression and drug tables.

    Returns (ResponseDataset, dropped) where dropped is a list of
    (row_index, reason) for every discarded input row.
    """
    cells = set(expr.cell_ids)
    records = []
    dropped = []
    for i, (drug_id, cell_id, value) in enumerate(gdsc_rows):
        if cell_id not in cells:
            dropped.append((i, "cell line missing"))
            continue
        smiles = drug_table.get(drug_id)
        if smiles is None:
            dropped.append((i, "drug missing"))
            continue
        try:
            parse_smiles(smiles)
        except ParseError:
            dropped.append((i, "smiles unparseable"))
            continue
        records.append(ResponseRecord(cell_id, drug_id, smiles, float(value)))
    if not records:
        raise DataError("response join produced no records")
    splits = assign_splits(len(records), seed, pinned_test=pinned_test)
    return ResponseDataset(records, splits, provenance="joined"), dropped


def assign_splits(n: int, seed: int, ratios=SPLIT_RATIOS, pinned_test=()) -> list[str]:
    """Seeded per-record partition at the given ratios (18:1:1 default).

    `pinned_test` record indices are forced into the test split before
    the remaining records are shuffled and dealt out.
    """
    total = sum(ratios)
    n_test = max(1, int(round(n * ratios[2] / total))) if n >= 3 else 0
    n_valid = max(1, int(round(n * ratios[1] / total))) if n >= 3 else 0
    pinned = [i for i in pinned_test if 0 <= i < n]
    rng = SplitRng(seed)
    rest = [i for i in rng.permutation(n) if i not in set(pinned)]
    splits = ["train"] * n
    test = pinned + rest[: max(0, n_test - len(pinned))]
    rest = rest[max(0, n_test - len(pinned)):]
    for i in test:
        splits[i] = "test"
    for i in rest[:n_valid]:
        splits[i] = "valid"
    return splits


# ---------------------------------------------------------------------------
# Synthetic benchmark
# ---------------------------------------------------------------------------

SYNTH_TISSUES = (
    "BREAST", "LUNG", "SKIN", "OVARY", "KIDNEY", "STOMACH", "PANCREAS",
    "CENTRAL_NERVOUS_SYSTEM",
)

# Family scaffolds; substituents are prepended so their last-written atom
# bonds to the scaffold.
_FAMILY_SCAFFOLDS = (
    "c1ccccc1",
    "c1ccncc1",
    "c1ccsc1",
    "c1ccoc1",
    "C1CCCCC1",
    "N1CCCCC1",
    "c1ccc2ccccc2c1",
    "c1cncn1C",
)
_SUBSTITUENTS = (
    "C", "CC", "CCC", "O", "OC", "N", "NC", "F", "Cl", "Br",
    "N#C", "OC(=O)C", "NC(=O)C", "OCC", "C(C)C", "CCO", "C=C", "COC", "I", "CCN",
)
NOISE_SIGMA = 0.3
TWIN_DRUG_IDS = ("DRUG000", "DRUG001")
TWIN_OFFSETS = (0.9, -0.9)


@dataclass
class SyntheticBenchmark:
    expression: GeneExpressionMatrix
    cgc_genes: list[str]
    smiles_corpus: list[str]
    drug_table: dict[str, str]
    response: ResponseDataset
    truth: np.ndarray             # noise-free planted value per record
    drug_family: dict[str, int]


def synthesize(seed: int, n_lines: int = 51, n_genes: int = 597, n_drugs: int = 40) -> SyntheticBenchmark:
    """Generate a format-identical synthetic dataset with a planted
    response function.

    Expression rows come from per-tissue bimodal archetypes (8 tissue
    clusters); drugs come from scaffold families with substituent edits;
    the planted ln(IC50) is bilinear in (tissue archetype, drug family)
    plus a smooth cell x drug perturbation, a per-drug offset, and
    Gaussian noise (sigma 0.3). Two twin drugs share a scaffold but get
    opposite offsets for the held-out similar-drug experiment.
    """
    if min(n_lines, n_genes, n_drugs) < 2:
        raise DataError("synthesize needs sizes of at least 2")
    rng = SplitRng(seed)
    gene_rng, expr_rng, drug_rng, resp_rng, split_rng = (rng.split() for _ in range(5))

    tissues = [SYNTH_TISSUES[i % len(SYNTH_TISSUES)] for i in range(n_lines)]
    cell_ids = [f"SYN{i:03d}_{tissues[i]}" for i in range(n_lines)]
    n_tissue = len(SYNTH_TISSUES)

    # Gene categories (counts scale with n_genes).
    n_info_cgc = max(1, int(0.35 * n_genes))
    n_low_cgc = int(0.03 * n_genes)
    n_flat_cgc = int(0.03 * n_genes)
    n_info_raw = int(0.12 * n_genes)
    gene_ids = [f"G{i:04d}" for i in range(n_genes)]
    order = gene_rng.permutation(n_genes)
    info_cgc = order[:n_info_cgc]
    low_cgc = order[n_info_cgc : n_info_cgc + n_low_cgc]
    flat_cgc = order[n_info_cgc + n_low_cgc : n_info_cgc + n_low_cgc + n_flat_cgc]
    info_raw = order[n_info_cgc + n_low_cgc + n_flat_cgc :
                     n_info_cgc + n_low_cgc + n_flat_cgc + n_info_raw]
    cgc_genes = sorted(gene_ids[i] for i in np.concatenate([info_cgc, low_cgc, flat_cgc]))

    values = np.zeros((n_genes, n_lines))
    noise_mask = np.ones(n_genes, dtype=bool)
    tissue_idx = np.array([SYNTH_TISSUES.index(t) for t in tissues])
    for idx_set, within_noise in ((info_cgc, 0.10), (info_raw, 1.0)):
        for g in idx_set:
            noise_mask[g] = False
            lo = expr_rng.gen.uniform(0.2, 1.0)
            hi = expr_rng.gen.uniform(8.0, 11.0)
            high_tissues = expr_rng.gen.random(n_tissue) < 0.5
            level = np.where(high_tissues[tissue_idx], hi, lo)
            values[g] = np.maximum(0.0, level + expr_rng.gen.normal(0, within_noise, n_lines))
    for g in low_cgc:
        noise_mask[g] = False
        values[g] = expr_rng.gen.uniform(0.0, 0.5, n_lines)
    for g in flat_cgc:
        noise_mask[g] = False
        values[g] = 2.0 + expr_rng.gen.normal(0, 0.05, n_lines)
    noise_rows = np.where(noise_mask)[0]
    for g in noise_rows:
        center = expr_rng.gen.uniform(3.0, 7.0)
        values[g] = np.maximum(0.0, center + expr_rng.gen.normal(0, 1.2, n_lines))
    expression = GeneExpressionMatrix(gene_ids, cell_ids, values)

    # Drugs: scaffold families with substituent edits. The first two are
    # twins on family 0 differing by one substituent.
    n_family = len(_FAMILY_SCAFFOLDS)
    drug_ids = [f"DRUG{i:03d}" for i in range(n_drugs)]
    drug_table: dict[str, str] = {}
    drug_family: dict[str, int] = {}
    used = set()
    for i, did in enumerate(drug_ids):
        if i == 0:
            fam, sub = 0, "C"
        elif i == 1:
            fam, sub = 0, "CC"
        else:
            fam = i % n_family
            sub = _SUBSTITUENTS[int(drug_rng.integers(0, len(_SUBSTITUENTS)))]
        smiles = sub + _FAMILY_SCAFFOLDS[fam]
        while smiles in used:
            sub = _SUBSTITUENTS[int(drug_rng.integers(0, len(_SUBSTITUENTS)))]
            smiles = sub + _FAMILY_SCAFFOLDS[fam]
        used.add(smiles)
        parse_smiles(smiles)  # generator must only emit valid molecules
        drug_table[did] = smiles
        drug_family[did] = fam

    # Planted response.
    effect = resp_rng.gen.uniform(-2.5, 2.5, (n_tissue, n_family))
    u_cell = resp_rng.gen.uniform(-0.5, 0.5, n_lines)
    v_drug = resp_rng.gen.uniform(-0.5, 0.5, n_drugs)
    delta_drug = resp_rng.gen.uniform(-0.75, 0.75, n_drugs)
    for twin_pos, offset in zip((0, 1), TWIN_OFFSETS):
        if twin_pos < n_drugs:
            delta_drug[twin_pos] = offset

    records, truth = [], []
    for ci, cid in enumerate(cell_ids):
        for di, did in enumerate(drug_ids):
            clean = (
                effect[tissue_idx[ci], drug_family[did]]
                + u_cell[ci] * v_drug[di]
                + delta_drug[di]
            )
            noisy = clean + resp_rng.gen.normal(0, NOISE_SIGMA)
            records.append(ResponseRecord(cid, did, drug_table[did], float(noisy)))
            truth.append(clean)
    splits = assign_splits(len(records), int(split_rng.integers(0, 2**31 - 1)))
    response = ResponseDataset(records, splits, provenance=f"synthetic(seed={seed})")
    return SyntheticBenchmark(
        expression, cgc_genes, sorted(drug_table.values()), drug_table,
        response, np.array(truth), drug_family,
    )
