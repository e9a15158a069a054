"""RGB-D dataset ingestion: camera models, poses, frames and the manifest format.

Manifest file (UTF-8, one frame per line, whitespace separated)::

    # meters_per_depth_unit: 0.001
    # intrinsics: intrinsics.txt
    <id> <color_path> <depth_path> <16 floats, row-major camera-to-world> <intrinsics_id>

Lines starting with ``#`` are comments; the two ``# key: value`` directives above
are optional and default to 0.001 m/unit and ``intrinsics.txt`` next to the
manifest. Relative paths resolve against the manifest directory.

Intrinsics file: one camera per line, ``id=cam0 fx=.. fy=.. cx=.. cy=.. width=.. height=..``.
"""
from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

log = logging.getLogger(__name__)

DEFAULT_MAX_RANGE_M = 6.0
DEFAULT_METERS_PER_UNIT = 0.001
DEFAULT_INTRINSICS_NAME = "intrinsics.txt"


class ManifestError(ValueError):
    """Raised for unreadable or inconsistent manifests and frames."""


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError(
                f"principal point ({self.cx}, {self.cy}) outside {self.width}x{self.height} raster"
            )

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])


@dataclass(frozen=True, eq=False)
class Pose:
    """Rigid camera-to-world transform."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if not np.allclose(r.T @ r, np.eye(3), atol=1e-9, rtol=0.0):
            raise ValueError("rotation is not orthonormal")
        if abs(np.linalg.det(r) - 1.0) > 1e-9:
            raise ValueError("rotation has determinant != +1")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, m) -> "Pose":
        m = np.asarray(m, dtype=np.float64).reshape(4, 4)
        return cls(m[:3, :3], m[:3, 3])

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def inverse(self) -> "Pose":
        rt = self.rotation.T
        return Pose(rt, -rt @ self.translation)

    def compose(self, other: "Pose") -> "Pose":
        """``self * other``: apply ``other`` first."""
        return Pose(self.rotation @ other.rotation, self.rotation @ other.translation + self.translation)


@dataclass(eq=False)
class DepthFrame:
    id: str
    color: np.ndarray  # H x W x 3 uint8
    depth: np.ndarray  # H x W float64 meters, 0 = invalid
    intrinsics: CameraIntrinsics
    pose: Pose

    def __post_init__(self):
        self.depth = np.asarray(self.depth, dtype=np.float64)
        self.color = np.asarray(self.color)
        h, w = self.intrinsics.height, self.intrinsics.width
        if self.depth.shape != (h, w):
            raise ManifestError(
                f"frame {self.id}: depth shape {self.depth.shape} does not match intrinsics {(h, w)}"
            )
        if self.color.shape != (h, w, 3):
            raise ManifestError(
                f"frame {self.id}: color shape {self.color.shape} does not match intrinsics {(h, w, 3)}"
            )
        if not np.all(np.isfinite(self.depth)) or np.any(self.depth < 0):
            raise ManifestError(f"frame {self.id}: depth must be finite and non-negative")

    @property
    def valid_mask(self) -> np.ndarray:
        return self.depth > 0


@dataclass
class NormalizedDepth:
    values: np.ndarray
    max_range_m: float = DEFAULT_MAX_RANGE_M


@dataclass(frozen=True)
class FrameRecord:
    id: str
    color_path: Path
    depth_path: Path
    pose: Pose
    intrinsics_id: str


@dataclass
class DatasetManifest:
    frames: list[FrameRecord]
    intrinsics: dict[str, CameraIntrinsics]
    meters_per_depth_unit: float = DEFAULT_METERS_PER_UNIT
    path: Path | None = None
    _index: dict[str, int] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self._index = {r.id: i for i, r in enumerate(self.frames)}

    @property
    def ids(self) -> list[str]:
        return [r.id for r in self.frames]

    def record(self, frame_id: str) -> FrameRecord:
        try:
            return self.frames[self._index[frame_id]]
        except KeyError:
            raise KeyError(f"frame id {frame_id!r} not in manifest") from None

    def __len__(self):
        return len(self.frames)


def load_intrinsics(path) -> dict[str, CameraIntrinsics]:
    path = Path(path)
    if not path.is_file():
        raise ManifestError(f"intrinsics file not found: {path}")
    cams = {}
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        try:
            kv = dict(tok.split("=", 1) for tok in line.split())
            cams[kv["id"]] = CameraIntrinsics(
                fx=float(kv["fx"]),
                fy=float(kv["fy"]),
                cx=float(kv["cx"]),
                cy=float(kv["cy"]),
                width=int(kv["width"]),
                height=int(kv["height"]),
            )
        except (KeyError, ValueError) as exc:
            raise ManifestError(f"{path}:{lineno}: malformed intrinsics line ({exc})") from exc
    return cams


def load_manifest(path) -> DatasetManifest:
    """Parse a manifest and check every referenced file; rasters are not read."""
    path = Path(path)
    if not path.is_file():
        raise ManifestError(f"manifest not found: {path}")
    root = path.parent
    directives = {}
    rows = []
    for line in path.read_text(encoding="utf-8").splitlines():
        s = line.strip()
        if not s:
            continue
        if s.startswith("#"):
            body = s[1:].strip()
            if ":" in body:
                key, value = body.split(":", 1)
                directives[key.strip()] = value.strip()
            continue
        rows.append(s)

    scale = float(directives.get("meters_per_depth_unit", DEFAULT_METERS_PER_UNIT))
    if not scale > 0:
        raise ManifestError(f"{path}: meters_per_depth_unit must be positive")
    intr_path = root / directives.get("intrinsics", DEFAULT_INTRINSICS_NAME)

    frames: list[FrameRecord] = []
    seen: set[str] = set()
    intrinsics = load_intrinsics(intr_path) if rows else {}
    for idx, row in enumerate(rows):
        tok = row.split()
        if len(tok) != 20:
            raise ManifestError(f"record {idx}: expected 20 fields, got {len(tok)}")
        fid, cpath, dpath, iid = tok[0], root / tok[1], root / tok[2], tok[19]
        if fid in seen:
            raise ManifestError(f"record {idx}: duplicate frame id {fid!r}")
        seen.add(fid)
        try:
            pose = Pose.from_matrix([float(x) for x in tok[3:19]])
        except ValueError as exc:
            raise ManifestError(f"record {idx}: bad pose ({exc})") from exc
        if iid not in intrinsics:
            raise ManifestError(f"record {idx}: unknown intrinsics id {iid!r}")
        for p in (cpath, dpath):
            if not p.is_file():
                raise ManifestError(f"record {idx}: referenced file does not exist: {p}")
        frames.append(FrameRecord(fid, cpath, dpath, pose, iid))
    return DatasetManifest(frames, intrinsics, scale, path)


def load_frame(manifest: DatasetManifest, frame_id: str) -> DepthFrame:
    rec = manifest.record(frame_id)
    intr = manifest.intrinsics[rec.intrinsics_id]
    try:
        with Image.open(rec.color_path) as im:
            color = np.asarray(im.convert("RGB"), dtype=np.uint8)
        with Image.open(rec.depth_path) as im:
            raw = np.asarray(im)
    except OSError as exc:
        raise ManifestError(f"frame {frame_id}: cannot decode raster ({exc})") from exc
    if raw.ndim != 2:
        raise ManifestError(f"frame {frame_id}: depth raster must be single-channel")
    if color.shape[:2] != raw.shape:
        raise ManifestError(
            f"frame {frame_id}: color {color.shape[1]}x{color.shape[0]} vs depth "
            f"{raw.shape[1]}x{raw.shape[0]} dimension mismatch"
        )
    depth = raw.astype(np.float64) * manifest.meters_per_depth_unit
    depth[raw == 0] = 0.0
    return DepthFrame(frame_id, color, depth, intr, rec.pose)


def normalize_depth(frame: DepthFrame | np.ndarray, max_range_m: float = DEFAULT_MAX_RANGE_M) -> NormalizedDepth:
    """Per-frame min-max normalization over valid pixels after the range cutoff.

    Pixels that are 0 or beyond ``max_range_m`` map to 0. A frame with no valid
    pixels, or a constant valid depth, maps to all zeros.
    """
    if not max_range_m > 0:
        raise ValueError("max_range_m must be positive")
    d = np.asarray(frame.depth if isinstance(frame, DepthFrame) else frame, dtype=np.float64)
    valid = (d > 0) & (d <= max_range_m)
    out = np.zeros_like(d)
    if valid.any():
        lo, hi = d[valid].min(), d[valid].max()
        if hi > lo:
            out[valid] = (d[valid] - lo) / (hi - lo)
    return NormalizedDepth(out, max_range_m)


def write_depth_png(path, depth_m: np.ndarray, meters_per_unit: float = DEFAULT_METERS_PER_UNIT) -> None:
    raw = np.rint(np.asarray(depth_m) / meters_per_unit)
    if raw.max(initial=0) > np.iinfo(np.uint16).max:
        raise ValueError("depth exceeds 16-bit range at this scale")
    Image.fromarray(raw.astype(np.uint16)).save(path)


def write_color_png(path, color: np.ndarray) -> None:
    Image.fromarray(np.asarray(color, dtype=np.uint8), mode="RGB").save(path)


def write_intrinsics(path, cams: dict[str, CameraIntrinsics]) -> None:
    lines = [
        f"id={k} fx={c.fx!r} fy={c.fy!r} cx={c.cx!r} cy={c.cy!r} width={c.width} height={c.height}"
        for k, c in cams.items()
    ]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_manifest(
    path,
    records: list[tuple[str, str, str, Pose, str]],
    meters_per_unit: float = DEFAULT_METERS_PER_UNIT,
    intrinsics_name: str = DEFAULT_INTRINSICS_NAME,
) -> None:
    """Write ``(id, color_rel, depth_rel, pose, intrinsics_id)`` records."""
    out = [f"# meters_per_depth_unit: {meters_per_unit!r}", f"# intrinsics: {intrinsics_name}"]
    for fid, cpath, dpath, pose, iid in records:
        m = " ".join(repr(float(x)) for x in pose.matrix().ravel())
        out.append(f"{fid} {os.fspath(cpath)} {os.fspath(dpath)} {m} {iid}")
    Path(path).write_text("\n".join(out) + "\n", encoding="utf-8")
