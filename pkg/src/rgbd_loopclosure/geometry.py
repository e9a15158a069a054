"""Point clouds, rigid transforms, convex hulls and coverage projection."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog
from scipy.spatial import ConvexHull, HalfspaceIntersection, QhullError

from .rgbd_io import CameraIntrinsics, DepthFrame, Pose

CAMERA = "camera"
WORLD = "world"

# Ratio of the smallest to largest principal spread below which a cloud is
# treated as flat. Depth quantization leaves ~1 mm of noise on planar views.
FLATNESS_TOL = 1e-3


class DegenerateHullError(ValueError):
    """Too few, collinear or coplanar points to span a volume."""


@dataclass
class PointCloud:
    points: np.ndarray  # N x 3
    frame_tag: str = CAMERA

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)

    def __len__(self):
        return len(self.points)


@dataclass
class ConvexHull3:
    vertices: np.ndarray  # V x 3
    faces: np.ndarray  # F x 3 indices into vertices, counter-clockwise seen from outside
    volume_m3: float

    @property
    def centroid(self) -> np.ndarray:
        return self.vertices.mean(axis=0)

    def halfspaces(self) -> np.ndarray:
        """Rows ``[n, c]`` with ``n . x + c <= 0`` inside, ``n`` unit length."""
        a, b, c = (self.vertices[self.faces[:, k]] for k in range(3))
        n = np.cross(b - a, c - a)
        n /= np.linalg.norm(n, axis=1, keepdims=True)
        return np.hstack([n, -np.einsum("ij,ij->i", n, a)[:, None]])


@dataclass
class CoverageMask:
    grid: np.ndarray  # bool, ceil(H / cell) x ceil(W / cell)
    cell_size_px: int
    coverage: float


def backproject(frame: DepthFrame, stride: int = 1) -> PointCloud:
    if stride < 1:
        raise ValueError("stride must be >= 1")
    k = frame.intrinsics
    d = frame.depth[::stride, ::stride]
    v, u = np.mgrid[0 : frame.depth.shape[0] : stride, 0 : frame.depth.shape[1] : stride]
    ok = d > 0
    z = d[ok]
    pts = np.column_stack([(u[ok] - k.cx) * z / k.fx, (v[ok] - k.cy) * z / k.fy, z])
    return PointCloud(pts, CAMERA)


def transform_cloud(cloud: PointCloud, pose: Pose, frame_tag: str = WORLD) -> PointCloud:
    return PointCloud(cloud.points @ pose.rotation.T + pose.translation, frame_tag)


def project_points(points_cam: np.ndarray, intr: CameraIntrinsics) -> tuple[np.ndarray, np.ndarray]:
    """Pinhole projection of camera-frame points. Returns ``(uv, in_front)``."""
    z = points_cam[:, 2]
    front = z > 0
    uv = np.full((len(points_cam), 2), np.nan)
    zf = z[front]
    uv[front, 0] = intr.fx * points_cam[front, 0] / zf + intr.cx
    uv[front, 1] = intr.fy * points_cam[front, 1] / zf + intr.cy
    return uv, front


def _orient_faces(points: np.ndarray, simplices: np.ndarray) -> np.ndarray:
    inner = points[np.unique(simplices)].mean(axis=0)
    a, b, c = (points[simplices[:, k]] for k in range(3))
    outward = np.einsum("ij,ij->i", np.cross(b - a, c - a), a - inner) > 0
    faces = simplices.copy()
    faces[~outward] = faces[~outward][:, [0, 2, 1]]
    return faces


def fan_volume(vertices: np.ndarray, faces: np.ndarray) -> float:
    """Volume of a closed triangulated convex surface by tetrahedra from the centroid."""
    o = vertices.mean(axis=0)
    a, b, c = (vertices[faces[:, k]] - o for k in range(3))
    return float(np.abs(np.einsum("ij,ij->i", a, np.cross(b, c))).sum() / 6.0)


def _hull_from_points(points: np.ndarray) -> ConvexHull3:
    hull = ConvexHull(points)
    used = np.unique(hull.simplices)
    remap = np.full(len(points), -1)
    remap[used] = np.arange(len(used))
    verts = points[used]
    faces = _orient_faces(verts, remap[hull.simplices])
    return ConvexHull3(verts, faces, fan_volume(verts, faces))


def convex_hull(cloud: PointCloud | np.ndarray, flatness_tol: float = FLATNESS_TOL) -> ConvexHull3:
    pts = np.asarray(cloud.points if isinstance(cloud, PointCloud) else cloud, dtype=np.float64)
    if len(pts) < 4:
        raise DegenerateHullError(f"need at least 4 points, got {len(pts)}")
    sv = np.linalg.svd(pts - pts.mean(axis=0), compute_uv=False)
    if sv[0] == 0 or sv[2] / sv[0] < flatness_tol:
        raise DegenerateHullError("points are collinear or coplanar")
    try:
        hull = _hull_from_points(pts)
    except QhullError as exc:
        raise DegenerateHullError(str(exc).splitlines()[0]) from exc
    if hull.volume_m3 <= 0:
        raise DegenerateHullError("hull has zero volume")
    return hull


def _interior_point(halfspaces: np.ndarray) -> tuple[np.ndarray, float]:
    """Chebyshev centre of ``{x : A x + b <= 0}`` and its inscribed radius."""
    a, b = halfspaces[:, :3], halfspaces[:, 3]
    norms = np.linalg.norm(a, axis=1)
    res = linprog(
        c=[0, 0, 0, -1],
        A_ub=np.hstack([a, norms[:, None]]),
        b_ub=-b,
        bounds=[(None, None)] * 3 + [(0, None)],
        method="highs",
    )
    if not res.success:
        return np.zeros(3), 0.0
    return res.x[:3], float(res.x[3])


def intersection_volume(a: ConvexHull3, b: ConvexHull3) -> float:
    hs = np.vstack([a.halfspaces(), b.halfspaces()])
    x0, r = _interior_point(hs)
    scale = max(np.ptp(a.vertices, axis=0).max(), np.ptp(b.vertices, axis=0).max())
    if r <= 1e-9 * scale:
        return 0.0
    try:
        verts = HalfspaceIntersection(hs, x0).intersections
        verts = verts[np.all(np.isfinite(verts), axis=1)]
        return _hull_from_points(verts).volume_m3
    except QhullError:
        return 0.0


def hull_overlap_ratio(a: ConvexHull3, b: ConvexHull3) -> float:
    """Intersection volume over the larger hull volume."""
    if not (a.volume_m3 > 0 and b.volume_m3 > 0):
        raise DegenerateHullError("overlap ratio needs two hulls with positive volume")
    # canonical argument order keeps the result bit-symmetric
    if (a.volume_m3, a.vertices.tobytes()) > (b.volume_m3, b.vertices.tobytes()):
        a, b = b, a
    ratio = intersection_volume(a, b) / max(a.volume_m3, b.volume_m3)
    return float(min(max(ratio, 0.0), 1.0))


def monte_carlo_overlap_ratio(a: ConvexHull3, b: ConvexHull3, n: int = 100_000, rng=None) -> tuple[float, float]:
    """Sampling estimate of :func:`hull_overlap_ratio` and its standard error.

    Samples the bounding box of the smaller hull; an independent check on the
    half-space construction.
    """
    rng = np.random.default_rng(rng)
    small, large = (a, b) if a.volume_m3 <= b.volume_m3 else (b, a)
    lo, hi = small.vertices.min(axis=0), small.vertices.max(axis=0)
    x = rng.uniform(lo, hi, size=(n, 3))

    def inside(h, pts):
        hs = h.halfspaces()
        return np.all(pts @ hs[:, :3].T + hs[:, 3] <= 1e-12, axis=1)

    hit = inside(small, x) & inside(large, x)
    box = float(np.prod(hi - lo))
    p = hit.mean()
    denom = max(a.volume_m3, b.volume_m3)
    return p * box / denom, np.sqrt(p * (1 - p) / n) * box / denom


def project_coverage(source: PointCloud, target: DepthFrame, cell_size_px: int = 8) -> CoverageMask:
    """Fraction of ``target``'s downsampled grid hit by the world-frame ``source`` cloud."""
    if cell_size_px < 1:
        raise ValueError("cell_size_px must be >= 1")
    if source.frame_tag != WORLD:
        raise ValueError("source cloud must be in the world frame")
    intr = target.intrinsics
    rows = -(-intr.height // cell_size_px)
    cols = -(-intr.width // cell_size_px)
    grid = np.zeros((rows, cols), dtype=bool)
    if len(source):
        cam = transform_cloud(source, target.pose.inverse(), CAMERA).points
        uv, front = project_points(cam, intr)
        px = np.floor(uv[front] + 0.5)
        ok = (px[:, 0] >= 0) & (px[:, 0] < intr.width) & (px[:, 1] >= 0) & (px[:, 1] < intr.height)
        px = px[ok].astype(np.int64)
        grid[px[:, 1] // cell_size_px, px[:, 0] // cell_size_px] = True
    return CoverageMask(grid, cell_size_px, float(grid.mean()))
