"""Principal components of frozen graph embeddings and their correlation with graph metrics."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .checkpoint import Checkpoint, model_from_checkpoint
from .encoder import Model, swap_output_head
from .graphs import METRIC_NAMES, Graph, MetricRecord, batch_graphs, graph_metrics

UNDEFINED = "undefined"
CSV_COLUMNS = ["component", "variance_ratio", "metric", "signed_r2", "rank"]


class AnalysisError(ValueError):
    """Inputs unsuitable for PCA or correlation."""


@dataclass
class PcaResult:
    components: np.ndarray              # k x h, orthonormal rows
    explained_variance_ratio: np.ndarray
    mean: np.ndarray

    def project(self, X) -> np.ndarray:
        return (np.asarray(X, dtype=np.float64) - self.mean) @ self.components.T


def _centered(X: np.ndarray) -> np.ndarray:
    """Rescaled to unit max magnitude and centered; exactly constant columns become exact zeros."""
    top = np.abs(X).max(initial=0.0)
    Z = X / top if top > 0 else X.copy()
    Z = Z - Z.mean(axis=0)
    Z[..., np.ptp(X, axis=0) == 0] = 0.0
    return Z


def pca(embeddings, k: int) -> PcaResult:
    """Top-``k`` eigenvectors of the sample covariance.

    Each component is flipped so its largest-magnitude coordinate is positive.
    """
    X = np.asarray(getattr(embeddings, "data", embeddings), dtype=np.float64)
    if X.ndim != 2:
        raise AnalysisError(f"embeddings must be 2-D, got shape {X.shape}")
    n, h = X.shape
    if not 1 <= k < n:
        raise AnalysisError(f"need 1 <= k < n, got k={k}, n={n}")
    if k > h:
        raise AnalysisError(f"k={k} exceeds embedding width {h}")
    mean = X.mean(axis=0)
    Xc = _centered(X)
    cov = Xc.T @ Xc / (n - 1)
    vals, vecs = np.linalg.eigh(cov)
    order = np.argsort(vals)[::-1][:k]
    vals = np.clip(vals[order], 0, None)
    comps = vecs[:, order].T
    total = np.trace(cov)
    if total <= 0:
        raise AnalysisError("embeddings have zero variance")
    pivot = np.abs(comps).argmax(axis=1)
    comps *= np.sign(comps[np.arange(k), pivot])[:, None]
    return PcaResult(comps, vals / total, mean)


@dataclass
class CorrelationTable:
    variance_ratio: list[float]
    metrics: list[str]
    # signed_r2[c][m] is None where the correlation is undefined
    signed_r2: list[list[float | None]] = field(default_factory=list)

    @property
    def num_components(self) -> int:
        return len(self.signed_r2)

    def ranking(self, component: int) -> list[str]:
        """Metrics ordered by |R^2|, undefined last."""
        row = self.signed_r2[component]
        defined = sorted((m for m, v in zip(self.metrics, row) if v is not None),
                         key=lambda m: -abs(row[self.metrics.index(m)]))
        return defined + [m for m, v in zip(self.metrics, row) if v is None]

    def most_correlated(self, component: int) -> str | None:
        row = self.signed_r2[component]
        if all(v is None for v in row):
            return None
        return self.ranking(component)[0]

    def rows(self) -> list[dict]:
        out = []
        for c in range(self.num_components):
            rank = {m: i + 1 for i, m in enumerate(self.ranking(c))}
            for m, v in zip(self.metrics, self.signed_r2[c]):
                out.append({"component": c + 1, "variance_ratio": self.variance_ratio[c],
                            "metric": m, "signed_r2": v, "rank": rank[m]})
        return out


def signed_r2(x, y) -> float | None:
    """sign(r) * r^2 for Pearson r; None when either side is constant."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    xc, yc = _centered(x), _centered(y)
    sx, sy = np.sqrt(xc @ xc), np.sqrt(yc @ yc)
    if sx == 0 or sy == 0:
        return None
    r = float(np.clip(xc @ yc / (sx * sy), -1.0, 1.0))
    return float(np.sign(r) * r * r)


def metric_columns(metrics: Sequence[MetricRecord] | Mapping[str, Sequence[float]]) -> dict[str, np.ndarray]:
    if isinstance(metrics, Mapping):
        return {name: np.asarray(v, dtype=np.float64) for name, v in metrics.items()}
    return {name: np.array([getattr(r, name) for r in metrics], dtype=np.float64)
            for name in METRIC_NAMES}


def r2_correlations(projections, metrics, variance_ratio: Sequence[float] | None = None
                    ) -> CorrelationTable:
    P = np.asarray(getattr(projections, "data", projections), dtype=np.float64)
    if P.ndim == 1:
        P = P[:, None]
    cols = metric_columns(metrics)
    n = P.shape[0]
    if n < 3:
        raise AnalysisError(f"correlation needs at least 3 graphs, got {n}")
    for name, v in cols.items():
        if len(v) != n:
            raise AnalysisError(f"metric {name} has {len(v)} values for {n} projections")
    ratios = list(variance_ratio) if variance_ratio is not None else [float("nan")] * P.shape[1]
    table = [[signed_r2(P[:, c], v) for v in cols.values()] for c in range(P.shape[1])]
    return CorrelationTable([float(r) for r in ratios], list(cols), table)


def write_correlations(table: CorrelationTable, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
        w.writeheader()
        for row in table.rows():
            row = dict(row)
            row["variance_ratio"] = repr(row["variance_ratio"])
            row["signed_r2"] = UNDEFINED if row["signed_r2"] is None else repr(row["signed_r2"])
            w.writerow(row)


def read_correlations(path: str | Path) -> CorrelationTable:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    comps = sorted({int(r["component"]) for r in rows})
    metrics = list(dict.fromkeys(r["metric"] for r in rows))
    ratios, values = [], []
    for c in comps:
        mine = {r["metric"]: r for r in rows if int(r["component"]) == c}
        ratios.append(float(next(iter(mine.values()))["variance_ratio"]))
        values.append([None if mine[m]["signed_r2"] == UNDEFINED else float(mine[m]["signed_r2"])
                       for m in metrics])
    return CorrelationTable(ratios, metrics, values)


def emit_report(pca_result: PcaResult, table: CorrelationTable, out_dir: str | Path,
                projections=None, metrics=None, svg: bool = False) -> list[Path]:
    """correlations.csv plus, given the raw points, one scatter CSV per (component, metric)."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as err:
        raise AnalysisError(f"cannot create {out}: {err.strerror}") from None
    written = [out / "correlations.csv"]
    write_correlations(table, written[0])
    if projections is None or metrics is None:
        return written
    P = np.asarray(projections, dtype=np.float64)
    cols = metric_columns(metrics)
    for c in range(table.num_components):
        for name in table.metrics:
            path = out / f"scatter_{c + 1}_{name}.csv"
            with open(path, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow([f"pc{c + 1}", name])
                w.writerows(zip(map(repr, P[:, c].tolist()), map(repr, cols[name].tolist())))
            written.append(path)
    if svg:
        written += _scatter_svgs(P, cols, table, out)
    return written


def _scatter_svgs(P, cols, table, out: Path) -> list[Path]:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    paths = []
    for c in range(table.num_components):
        fig, axes = plt.subplots(1, len(table.metrics), figsize=(3 * len(table.metrics), 3))
        for ax, name, r2 in zip(np.atleast_1d(axes), table.metrics, table.signed_r2[c]):
            ax.scatter(P[:, c], cols[name], s=4)
            ax.set_xlabel(f"PC{c + 1}")
            ax.set_title(f"{name} ({UNDEFINED if r2 is None else f'{r2:+.3f}'})", fontsize=8)
        fig.tight_layout()
        path = out / f"scatter_{c + 1}.svg"
        fig.savefig(path, metadata={"Date": None})
        plt.close(fig)
        paths.append(path)
    return paths


def embed_graphs(model: Model, graphs: Sequence[Graph], batch_size: int = 256) -> np.ndarray:
    """Frozen readout embeddings (no output head), inference mode, features ignored."""
    bare = swap_output_head(model, None).eval()
    chunks = []
    for i in range(0, len(graphs), batch_size):
        b = batch_graphs([g.without_features() for g in graphs[i:i + batch_size]])
        chunks.append(bare.embed_graphs(b).data)
    return np.concatenate(chunks).astype(np.float64)


def analyze_checkpoint(ckpt: Checkpoint | Model, graphs: Sequence[Graph], out_dir: str | Path,
                       k: int = 5, svg: bool = False) -> tuple[PcaResult, CorrelationTable]:
    model = ckpt if isinstance(ckpt, Model) else model_from_checkpoint(ckpt)
    emb = embed_graphs(model, graphs)
    result = pca(emb, k)
    proj = result.project(emb)
    records = [graph_metrics(g) for g in graphs]
    table = r2_correlations(proj, records, result.explained_variance_ratio)
    emit_report(result, table, out_dir, proj, records, svg=svg)
    return result, table
