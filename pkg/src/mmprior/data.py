"""Synthetic Gaussian-mixture data, k-means++ component assignment, CSV I/O."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class CsvFormatError(ValueError):
    def __init__(self, path, line: int, reason: str):
        self.line = line
        super().__init__(f"{path}:{line}: {reason}")


@dataclass
class Dataset:
    rows: np.ndarray
    labels: np.ndarray | None = None
    source: str = ""

    def __post_init__(self):
        self.rows = np.atleast_2d(np.asarray(self.rows, dtype=np.float64))
        if not np.all(np.isfinite(self.rows)):
            raise ValueError("dataset rows must be finite")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != (self.rows.shape[0],):
                raise ValueError("labels must have one entry per row")
            if self.labels.size and self.labels.min() < 0:
                raise ValueError("labels must be non-negative")

    def __len__(self):
        return self.rows.shape[0]

    @property
    def dim(self) -> int:
        return self.rows.shape[1]


@dataclass
class SyntheticSpec:
    means: list
    variances: list
    n_per_component: int = 10_000
    seed: int = 0

    def __post_init__(self):
        self.means = [np.asarray(m, dtype=np.float64) for m in self.means]
        self.variances = [np.asarray(v, dtype=np.float64) for v in self.variances]
        if len(self.means) != len(self.variances) or not self.means:
            raise ValueError("need one variance vector per mean")
        dims = {m.size for m in self.means} | {v.size for v in self.variances}
        if len(dims) != 1:
            raise ValueError("inconsistent component dimensions")
        if any(np.any(v <= 0) for v in self.variances):
            raise ValueError("variances must be positive")


def two_mode_spec(dim: int = 2, n_per_component: int = 10_000, seed: int = 0,
                       separation: float = 3.5) -> SyntheticSpec:
    """Two modes at [+-3.5, 0, ...] with variance diag[0.5, 1, ..., 1]."""
    var = np.ones(dim)
    var[0] = 0.5
    means = []
    for sign in (-1.0, 1.0):
        m = np.zeros(dim)
        m[0] = sign * separation
        means.append(m)
    return SyntheticSpec(means, [var, var.copy()], n_per_component, seed)


def gen_mixture(spec: SyntheticSpec) -> Dataset:
    rng = np.random.default_rng(spec.seed)
    parts, labels = [], []
    for i, (m, v) in enumerate(zip(spec.means, spec.variances)):
        parts.append(m + np.sqrt(v) * rng.standard_normal((spec.n_per_component, m.size)))
        labels.append(np.full(spec.n_per_component, i))
    return Dataset(np.concatenate(parts), np.concatenate(labels), "mixture")


def gen_ood(dim: int, seed: int, n: int = 5_000, variance: float = 0.01) -> Dataset:
    """Draws from N(0, variance * I)."""
    if dim < 1:
        raise ValueError("dim must be >= 1")
    rng = np.random.default_rng(seed)
    return Dataset(np.sqrt(variance) * rng.standard_normal((n, dim)), None, "ood")


# ---------------------------------------------------------------- k-means

@dataclass
class KMeansResult:
    centroids: np.ndarray
    assignment: np.ndarray
    inertia: float
    iterations: int
    inertia_trace: list = field(default_factory=list)


def _sq_dists(x, c):
    return ((x[:, None, :] - c[None, :, :]) ** 2).sum(axis=-1)


def kmeans_pp_init(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """D^2 seeding: each new centre is drawn with probability proportional to
    the squared distance to the nearest centre chosen so far."""
    n = x.shape[0]
    centers = [x[rng.integers(n)]]
    d2 = ((x - centers[0]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0:
            idx = rng.integers(n)
        else:
            idx = rng.choice(n, p=d2 / total)
        centers.append(x[idx])
        d2 = np.minimum(d2, ((x - x[idx]) ** 2).sum(axis=1))
    return np.array(centers)


def kmeans(data, k: int, seed=0, max_iter: int = 100) -> KMeansResult:
    """Lloyd iterations from k-means++ seeding until the assignment stops changing.

    An emptied cluster is re-seeded at the point farthest from its current
    centroid (lowest index on ties).
    """
    x = np.asarray(data.rows if isinstance(data, Dataset) else data, dtype=np.float64)
    n = x.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"k must lie in [1, {n}]")
    if max_iter < 1:
        raise ValueError("max_iter must be >= 1")
    rng = np.random.default_rng(seed)
    c = kmeans_pp_init(x, k, rng)
    assign = None
    trace = []
    it = 0
    for it in range(1, max_iter + 1):
        d2 = _sq_dists(x, c)
        new = d2.argmin(axis=1)
        trace.append(float(d2[np.arange(n), new].sum()))
        if assign is not None and np.array_equal(new, assign):
            break
        assign = new
        for j in range(k):
            members = assign == j
            if members.any():
                c[j] = x[members].mean(axis=0)
            else:
                far = int(np.argmax(d2[np.arange(n), assign]))
                c[j] = x[far]
                assign[far] = j
    d2 = _sq_dists(x, c)
    assign = d2.argmin(axis=1)
    inertia = float(d2[np.arange(n), assign].sum())
    return KMeansResult(c, assign, inertia, it, trace)


def assign_components(dataset: Dataset, mode: str = "labels", k: int = 2, seed=0) -> np.ndarray:
    """Per-row component index.

    ``labels`` returns the stored labels. ``kmeans`` clusters the rows and
    numbers clusters by ascending centroid first coordinate, so component 0
    is the cluster furthest toward negative x0.
    """
    if mode == "labels":
        if dataset.labels is None:
            raise ValueError("labels mode requires a labelled dataset")
        return dataset.labels.copy()
    if mode == "kmeans":
        res = kmeans(dataset, k, seed)
        order = np.argsort(res.centroids[:, 0], kind="stable")
        rank = np.empty(k, dtype=np.int64)
        rank[order] = np.arange(k)
        return rank[res.assignment]
    raise ValueError(f"unknown assignment mode {mode!r}")


# ---------------------------------------------------------------- CSV

def csv_write(path, dataset: Dataset, comment: str | None = None) -> None:
    """Header ``x0,...,x{d-1}[,label]``; values use 17 significant digits.

    ``comment`` becomes a leading ``# ...`` line, which :func:`csv_read` skips.
    """
    path = Path(path)
    header = [f"x{j}" for j in range(dataset.dim)]
    if dataset.labels is not None:
        header.append("label")
    with path.open("w", newline="") as f:
        if comment is not None:
            f.write(f"# {comment}\n")
        w = csv.writer(f)
        w.writerow(header)
        for i, row in enumerate(dataset.rows):
            rec = [format(float(v), ".17g") for v in row]
            if dataset.labels is not None:
                rec.append(str(int(dataset.labels[i])))
            w.writerow(rec)


def csv_read(path) -> Dataset:
    """Stream a CSV written by :func:`csv_write`; bad rows report their line number."""
    path = Path(path)
    with path.open(newline="") as f:
        skipped = 0
        while True:
            pos = f.tell()
            line = f.readline()
            if not line.startswith("#"):
                f.seek(pos)
                break
            skipped += 1
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise CsvFormatError(path, skipped + 1, "empty file") from None
        has_label = bool(header) and header[-1] == "label"
        dim = len(header) - has_label
        expected = [f"x{j}" for j in range(dim)]
        if header[:dim] != expected or dim < 1:
            raise CsvFormatError(path, skipped + 1, f"bad header {header}")
        rows = _GrowBuffer(dim)
        labels = _GrowBuffer(1) if has_label else None
        for line_no, rec in enumerate(reader, start=skipped + 2):
            if not rec:
                continue
            if len(rec) != len(header):
                raise CsvFormatError(path, line_no, f"expected {len(header)} fields, got {len(rec)}")
            try:
                vals = [float(v) for v in rec[:dim]]
                lab = int(rec[dim]) if has_label else None
            except ValueError as e:
                raise CsvFormatError(path, line_no, str(e)) from None
            rows.append(vals)
            if has_label:
                labels.append([lab])
    return Dataset(rows.array(), None if labels is None else labels.array()[:, 0].astype(np.int64),
                   str(path))


class _GrowBuffer:
    """Amortized-doubling row store; avoids holding a list of Python floats."""

    def __init__(self, width: int):
        self.buf = np.empty((1024, width))
        self.n = 0

    def append(self, row):
        if self.n == self.buf.shape[0]:
            self.buf = np.concatenate([self.buf, np.empty_like(self.buf)])
        self.buf[self.n] = row
        self.n += 1

    def array(self) -> np.ndarray:
        return self.buf[:self.n].copy()
