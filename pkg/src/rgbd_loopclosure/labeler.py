"""Automatic loop-closure ground truth from posed RGB-D frames.

Pairs go through two stages: a convex-hull volume prefilter, then the
projected-coverage test. Codes: 1 loop closure, 0 negative, 2 unusable.
"""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np
from scipy import ndimage

from . import geometry as geo
from .rgbd_io import DatasetManifest, DepthFrame, ManifestError, load_frame

log = logging.getLogger(__name__)

NEGATIVE, POSITIVE, UNUSABLE = 0, 1, 2


@dataclass
class LabelConfig:
    subsample_ratio: int = 1
    texture_threshold: float = 4.0 / 255.0
    min_valid_depth_fraction: float = 0.5
    hull_prefilter_cutoff: float = 0.1
    positive_coverage_threshold: float = 0.5
    stride: int = 2
    cell_size_px: int = 8
    symmetric_coverage: bool = True

    def __post_init__(self):
        for name in ("texture_threshold",):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        for name in ("min_valid_depth_fraction", "hull_prefilter_cutoff", "positive_coverage_threshold"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.subsample_ratio < 1 or self.stride < 1 or self.cell_size_px < 1:
            raise ValueError("subsample_ratio, stride and cell_size_px must be >= 1")

    @classmethod
    def from_mapping(cls, values: dict) -> "LabelConfig":
        """Build from string or typed values, ignoring unknown keys."""
        kw = {}
        for f in fields(cls):
            if f.name not in values:
                continue
            v = values[f.name]
            if f.type in ("bool", bool) and isinstance(v, str):
                v = v.strip().lower() in ("1", "true", "yes", "on")
            elif f.type in ("int", int):
                v = int(v)
            elif f.type in ("float", float):
                v = float(v)
            kw[f.name] = v
        return cls(**kw)

    def to_text(self) -> str:
        return "".join(f"{k} = {v!r}\n" for k, v in asdict(self).items())


@dataclass
class PairLabel:
    i: str
    j: str
    hull_overlap: float | None
    coverage: float | None
    label: int
    reason: str = ""


@dataclass
class GroundTruthMatrix:
    ids: list[str]
    entries: np.ndarray  # N x N int8

    def __post_init__(self):
        self.entries = np.asarray(self.entries, dtype=np.int8)
        n = len(self.ids)
        if self.entries.shape != (n, n):
            raise ValueError(f"matrix shape {self.entries.shape} does not match {n} ids")
        if not np.array_equal(self.entries, self.entries.T):
            raise ValueError("ground-truth matrix must be symmetric")
        if not np.all(np.isin(self.entries, (0, 1, 2))):
            raise ValueError("ground-truth entries must be 0, 1 or 2")

    def __len__(self):
        return len(self.ids)


@dataclass
class PairStats:
    positives: int
    negatives: int
    unusable: int

    @property
    def ratio(self) -> float:
        """Negatives per positive (inf when there are no positives)."""
        return self.negatives / self.positives if self.positives else float("inf")


def texture_score(color: np.ndarray) -> float:
    """Standard deviation of the Sobel gradient magnitude of the grayscale image in [0, 1]."""
    gray = np.asarray(color, dtype=np.float64) @ np.array([0.299, 0.587, 0.114]) / 255.0
    gx = ndimage.sobel(gray, axis=1, mode="nearest")
    gy = ndimage.sobel(gray, axis=0, mode="nearest")
    return float(np.hypot(gx, gy).std())


def frame_passes(frame: DepthFrame, cfg: LabelConfig) -> tuple[bool, str]:
    tex = texture_score(frame.color)
    if tex < cfg.texture_threshold:
        return False, f"texture {tex:.4g} < {cfg.texture_threshold:.4g}"
    valid = float(frame.valid_mask.mean())
    if valid < cfg.min_valid_depth_fraction:
        return False, f"valid depth fraction {valid:.3f} < {cfg.min_valid_depth_fraction:.3f}"
    return True, ""


def filter_frames(manifest: DatasetManifest, cfg: LabelConfig, loader=load_frame) -> list[str]:
    kept = []
    for rec in manifest.frames[:: cfg.subsample_ratio]:
        try:
            frame = loader(manifest, rec.id)
        except (ManifestError, OSError) as exc:
            log.warning("excluding frame %s: %s", rec.id, exc)
            continue
        ok, reason = frame_passes(frame, cfg)
        if ok:
            kept.append(rec.id)
        else:
            log.info("excluding frame %s: %s", rec.id, reason)
    return kept


@dataclass
class _Prepared:
    frame: DepthFrame
    cloud: geo.PointCloud
    hull: geo.ConvexHull3 | None
    hull_error: str


def _prepare(frame: DepthFrame, cfg: LabelConfig) -> _Prepared:
    cloud = geo.transform_cloud(geo.backproject(frame, cfg.stride), frame.pose)
    try:
        return _Prepared(frame, cloud, geo.convex_hull(cloud), "")
    except geo.DegenerateHullError as exc:
        return _Prepared(frame, cloud, None, f"degenerate hull: {exc}")


def _score_prepared(a: _Prepared, b: _Prepared, cfg: LabelConfig) -> PairLabel:
    ia, ib = a.frame.id, b.frame.id
    if a.hull is None or b.hull is None:
        return PairLabel(ia, ib, None, None, UNUSABLE, a.hull_error or b.hull_error)
    overlap = geo.hull_overlap_ratio(a.hull, b.hull)
    if overlap < cfg.hull_prefilter_cutoff:
        return PairLabel(ia, ib, overlap, None, UNUSABLE, "hull prefilter")
    cov = geo.project_coverage(a.cloud, b.frame, cfg.cell_size_px).coverage
    if cfg.symmetric_coverage:
        cov = min(cov, geo.project_coverage(b.cloud, a.frame, cfg.cell_size_px).coverage)
    label = POSITIVE if cov > cfg.positive_coverage_threshold else NEGATIVE
    return PairLabel(ia, ib, overlap, cov, label)


def score_pair(a: DepthFrame, b: DepthFrame, cfg: LabelConfig) -> PairLabel:
    return _score_prepared(_prepare(a, cfg), _prepare(b, cfg), cfg)


def label_frames(frames: list[DepthFrame], cfg: LabelConfig, workers: int = 1) -> tuple[GroundTruthMatrix, list[PairLabel]]:
    """Score every unordered pair of already-filtered frames."""
    prepared = [_prepare(f, cfg) for f in frames]
    pairs = [(i, j) for i in range(len(frames)) for j in range(i + 1, len(frames))]
    n = len(frames)
    entries = np.eye(n, dtype=np.int8)

    def work(ij):
        try:
            return _score_prepared(prepared[ij[0]], prepared[ij[1]], cfg)
        except Exception as exc:  # per-pair failures degrade to unusable
            return PairLabel(frames[ij[0]].id, frames[ij[1]].id, None, None, UNUSABLE, f"error: {exc}")

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(work, pairs))
    else:
        results = [work(p) for p in pairs]
    for (i, j), r in zip(pairs, results):
        entries[i, j] = entries[j, i] = r.label
    return GroundTruthMatrix([f.id for f in frames], entries), results


def label_dataset(
    manifest: DatasetManifest, cfg: LabelConfig, workers: int = 1
) -> tuple[GroundTruthMatrix, list[PairLabel]]:
    """Label every manifest frame; frames removed by filtering get rows of 2."""
    kept = set(filter_frames(manifest, cfg))
    ids = manifest.ids
    kept_ids = [i for i in ids if i in kept]
    frames = [load_frame(manifest, i) for i in kept_ids]
    sub, report = label_frames(frames, cfg, workers)
    n = len(ids)
    entries = np.full((n, n), UNUSABLE, dtype=np.int8)
    np.fill_diagonal(entries, POSITIVE)
    pos = np.array([ids.index(i) for i in kept_ids], dtype=np.int64)
    if len(pos):
        entries[np.ix_(pos, pos)] = sub.entries
    return GroundTruthMatrix(ids, entries), report


def pair_stats(matrix: GroundTruthMatrix) -> PairStats:
    upper = matrix.entries[np.triu_indices(len(matrix), k=1)]
    return PairStats(int((upper == 1).sum()), int((upper == 0).sum()), int((upper == 2).sum()))


# -- file formats -----------------------------------------------------------------------


def write_ground_truth(path, matrix: GroundTruthMatrix) -> None:
    """Matrix file plus an ``.ids`` sidecar with one frame id per line."""
    path = Path(path)
    rows = [str(len(matrix))] + [" ".join(str(int(x)) for x in row) for row in matrix.entries]
    path.write_text("\n".join(rows) + "\n", encoding="utf-8")
    path.with_name(path.name + ".ids").write_text("".join(f"{i}\n" for i in matrix.ids), encoding="utf-8")


def read_ground_truth(path) -> GroundTruthMatrix:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"ground-truth file not found: {path}")
    lines = path.read_text(encoding="utf-8").split("\n")
    n = int(lines[0])
    entries = np.array([[int(x) for x in lines[k + 1].split()] for k in range(n)], dtype=np.int8).reshape(n, n)
    sidecar = path.with_name(path.name + ".ids")
    ids = sidecar.read_text(encoding="utf-8").split() if sidecar.is_file() else [str(k) for k in range(n)]
    return GroundTruthMatrix(ids, entries)


def _fmt(x: float | None) -> str:
    return "nan" if x is None else f"{x:.9f}"


def write_report(path, report: list[PairLabel]) -> None:
    lines = ["# i j hull_overlap coverage label"]
    lines += [f"{r.i} {r.j} {_fmt(r.hull_overlap)} {_fmt(r.coverage)} {r.label}" for r in report]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_config_file(path) -> dict[str, str]:
    """Flat ``key = value`` file; ``#`` starts a comment."""
    out = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ValueError(f"{path}: expected key = value, got {line!r}")
        out[key.strip()] = value.strip()
    return out
