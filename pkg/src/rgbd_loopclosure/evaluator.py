"""Similarity matrices and precision-recall sweeps against a ground-truth matrix."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .labeler import GroundTruthMatrix

log = logging.getLogger(__name__)

DEFAULT_STEPS = 1001
PR_HEADER = ("threshold", "precision", "recall", "tp", "fp", "tn", "fn")


@dataclass
class SimilarityMatrix:
    ids: list[str]
    entries: np.ndarray

    def __post_init__(self):
        self.entries = np.asarray(self.entries, dtype=np.float64)
        n = len(self.ids)
        if self.entries.shape != (n, n):
            raise ValueError(f"similarity shape {self.entries.shape} does not match {n} ids")


@dataclass(frozen=True)
class PRPoint:
    threshold: float
    precision: float
    recall: float
    tp: int
    fp: int
    tn: int
    fn: int


@dataclass
class PRCurve:
    points: list[PRPoint]

    def __len__(self):
        return len(self.points)

    def max_recall_at_precision(self, precision: float = 1.0) -> float:
        return max((p.recall for p in self.points if p.precision >= precision), default=0.0)


def similarity_matrix(embeddings, ids: list[str] | None = None) -> SimilarityMatrix:
    """Pairwise cosine similarities; a zero-norm embedding gets -1 against everything."""
    z = np.asarray(embeddings, dtype=np.float64)
    n = len(z)
    ids = [str(i) for i in range(n)] if ids is None else list(ids)
    norms = np.linalg.norm(z, axis=1)
    dead = norms == 0
    for k in np.flatnonzero(dead):
        log.warning("embedding %s has zero norm; its similarities are set to -1", ids[k])
    unit = z / np.where(dead, 1.0, norms)[:, None]
    s = np.eye(n)
    iu, ju = np.triu_indices(n, k=1)
    s[iu, ju] = np.clip(np.einsum("ij,ij->i", unit[iu], unit[ju]), -1.0, 1.0)
    s[ju, iu] = s[iu, ju]
    s[dead, :] = -1.0
    s[:, dead] = -1.0
    return SimilarityMatrix(ids, s)


def pr_sweep(s: SimilarityMatrix, g: GroundTruthMatrix, steps: int = DEFAULT_STEPS) -> PRCurve:
    """Confusion counts over usable upper-triangle pairs at ``steps`` uniform thresholds in [0, 1].

    A pair is predicted positive iff its similarity is strictly above the
    threshold. Precision with no predicted positives is 1.
    """
    if steps < 2:
        raise ValueError("steps must be >= 2")
    if list(s.ids) != list(g.ids):
        raise ValueError("similarity and ground-truth matrices have different frame ids")
    iu, ju = np.triu_indices(len(g), k=1)
    labels = g.entries[iu, ju]
    keep = labels != 2
    sims = s.entries[iu, ju][keep]
    truth = labels[keep] == 1
    n_pos = int(truth.sum())
    if n_pos == 0:
        raise ValueError("ground truth has no positive pairs; recall is undefined")
    n_neg = int(truth.size - n_pos)
    pts = []
    for t in np.linspace(0.0, 1.0, steps):
        pred = sims > t
        tp = int(np.count_nonzero(pred & truth))
        fp = int(np.count_nonzero(pred & ~truth))
        fn, tn = n_pos - tp, n_neg - fp
        precision = tp / (tp + fp) if tp + fp else 1.0
        pts.append(PRPoint(float(t), precision, tp / n_pos, tp, fp, tn, fn))
    return PRCurve(pts)


def export_pr(curve: PRCurve, path) -> None:
    if not curve.points:
        raise ValueError("cannot export an empty PR curve")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PR_HEADER)
        for p in curve.points:
            w.writerow([repr(p.threshold), repr(p.precision), repr(p.recall), p.tp, p.fp, p.tn, p.fn])


def read_pr(path) -> PRCurve:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    return PRCurve(
        [
            PRPoint(float(r["threshold"]), float(r["precision"]), float(r["recall"]),
                    int(r["tp"]), int(r["fp"]), int(r["tn"]), int(r["fn"]))
            for r in rows
        ]
    )


def write_similarity(path, s: SimilarityMatrix) -> None:
    """Same layout as the ground-truth file, with real entries."""
    rows = [str(len(s.ids))] + [" ".join(f"{x:.17g}" for x in row) for row in s.entries]
    path = Path(path)
    path.write_text("\n".join(rows) + "\n", encoding="utf-8")
    path.with_name(path.name + ".ids").write_text("".join(f"{i}\n" for i in s.ids), encoding="utf-8")


def read_embeddings(path) -> tuple[list[str], np.ndarray]:
    """Text embeddings: one ``<id> <float> <float> ...`` line per frame."""
    ids, rows = [], []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        tok = line.split()
        ids.append(tok[0])
        rows.append([float(x) for x in tok[1:]])
    return ids, np.array(rows, dtype=np.float64)


def write_embeddings(path, ids, z) -> None:
    lines = [f"{i} " + " ".join(f"{x:.17g}" for x in row) for i, row in zip(ids, np.asarray(z))]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
