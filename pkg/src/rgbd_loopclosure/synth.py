"""Deterministic synthetic RGB-D scenes with exactly computable overlap.

Geometry is a set of axis-aligned boxes. A box that contains the camera is seen
from inside (a room); any other box is seen from outside. The stock scenes keep
every camera inside exactly one room, so each ray hits a single surface and the
occlusion-free coverage test is exact on them.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .rgbd_io import (
    CameraIntrinsics,
    DepthFrame,
    Pose,
    write_color_png,
    write_depth_png,
    write_intrinsics,
    write_manifest,
)

DEFAULT_INTRINSICS = CameraIntrinsics(fx=40.0, fy=40.0, cx=32.0, cy=24.0, width=64, height=48)


@dataclass(frozen=True)
class Box:
    lo: tuple[float, float, float]
    hi: tuple[float, float, float]

    def contains(self, p) -> bool:
        return bool(np.all(np.asarray(p) > self.lo) and np.all(np.asarray(p) < self.hi))


@dataclass
class SyntheticScene:
    boxes: list[Box]
    poses: list[Pose]
    intrinsics: CameraIntrinsics = DEFAULT_INTRINSICS
    seed: int = 0
    name: str = "scene"
    room_of_pose: list[int] = field(default_factory=list)

    def __len__(self):
        return len(self.poses)

    def frame_id(self, i: int) -> str:
        return f"{self.name}_{i:04d}"


def look_pose(position, yaw: float, pitch: float = 0.0) -> Pose:
    """Camera at ``position`` looking along ``yaw`` (about world +z), tilted down by ``pitch``."""
    fwd = np.array([np.cos(pitch) * np.cos(yaw), np.cos(pitch) * np.sin(yaw), -np.sin(pitch)])
    right = np.cross(fwd, [0.0, 0.0, 1.0])
    right /= np.linalg.norm(right)
    down = np.cross(fwd, right)
    rot = np.column_stack([right, down, fwd])
    # re-orthonormalize so the Pose invariant holds to machine precision
    u, _, vt = np.linalg.svd(rot)
    return Pose(u @ vt, np.asarray(position, dtype=np.float64))


def pixel_rays(intr: CameraIntrinsics, stride: int = 1) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Camera-frame ray directions with unit z for pixel grid ``(v, u)`` at ``stride``."""
    v, u = np.mgrid[0 : intr.height : stride, 0 : intr.width : stride]
    d = np.stack([(u - intr.cx) / intr.fx, (v - intr.cy) / intr.fy, np.ones(u.shape)], axis=-1)
    return d, u, v


def ray_hits(scene: SyntheticScene, origin: np.ndarray, dirs: np.ndarray) -> np.ndarray:
    """Ray parameter of the nearest surface hit per ray (``inf`` when none).

    With camera-frame directions of unit z, the parameter equals z-depth.
    """
    best = np.full(dirs.shape[0], np.inf)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / dirs
        for box in scene.boxes:
            t1 = (np.asarray(box.lo) - origin) * inv
            t2 = (np.asarray(box.hi) - origin) * inv
            t1 = np.where(np.isnan(t1), -np.inf, t1)
            t2 = np.where(np.isnan(t2), np.inf, t2)
            near = np.minimum(t1, t2).max(axis=1)
            far = np.maximum(t1, t2).min(axis=1)
            if box.contains(origin):
                t = far
            else:
                t = np.where((near <= far) & (near > 0), near, np.inf)
            best = np.minimum(best, np.where(t > 0, t, np.inf))
    return best


def _texture(scene: SyntheticScene, pts: np.ndarray) -> np.ndarray:
    rng = np.random.default_rng(scene.seed)
    table = rng.integers(40, 216, size=(16, 16, 16, 3))
    cell = np.floor(pts / 0.25).astype(np.int64)
    checker = (cell.sum(axis=1) % 2)[:, None] * 40
    return np.clip(table[cell[:, 0] % 16, cell[:, 1] % 16, cell[:, 2] % 16] + checker - 20, 0, 255)


def render_frame(scene: SyntheticScene, pose_index: int) -> DepthFrame:
    if not 0 <= pose_index < len(scene.poses):
        raise IndexError(f"pose index {pose_index} out of range")
    pose = scene.poses[pose_index]
    intr = scene.intrinsics
    d_cam, _, _ = pixel_rays(intr)
    dirs = d_cam.reshape(-1, 3) @ pose.rotation.T
    t = ray_hits(scene, pose.translation, dirs)
    hit = np.isfinite(t)
    depth = np.where(hit, t, 0.0).reshape(intr.height, intr.width)
    color = np.zeros((hit.size, 3), dtype=np.uint8)
    pts = pose.translation + dirs[hit] * t[hit, None]
    color[hit] = _texture(scene, pts)
    return DepthFrame(scene.frame_id(pose_index), color.reshape(intr.height, intr.width, 3), depth, intr, pose)


def _marked_cells(scene: SyntheticScene, src: int, dst: int, stride: int, cell_size_px: int) -> np.ndarray:
    intr = scene.intrinsics
    ps, pd = scene.poses[src], scene.poses[dst]
    d_cam, _, _ = pixel_rays(intr, stride)
    dirs = d_cam.reshape(-1, 3) @ ps.rotation.T
    t = ray_hits(scene, ps.translation, dirs)
    ok = np.isfinite(t)
    world = ps.translation + dirs[ok] * t[ok, None]
    # 3x4 projection matrix of the destination camera
    extr = np.hstack([pd.rotation.T, (-pd.rotation.T @ pd.translation)[:, None]])
    proj = intr.matrix @ extr
    h = np.hstack([world, np.ones((len(world), 1))]) @ proj.T
    rows = -(-intr.height // cell_size_px)
    cols = -(-intr.width // cell_size_px)
    grid = np.zeros((rows, cols), dtype=bool)
    for x, y, w in h:
        if w <= 0:
            continue
        col, row = int(np.floor(x / w + 0.5)), int(np.floor(y / w + 0.5))
        if 0 <= col < intr.width and 0 <= row < intr.height:
            grid[row // cell_size_px, col // cell_size_px] = True
    return grid


def analytic_overlap(
    scene: SyntheticScene,
    i: int,
    j: int,
    stride: int = 1,
    cell_size_px: int = 8,
    symmetric: bool = True,
) -> float:
    """Brute-force coverage oracle from exact ray hits, independent of rendered rasters.

    One-way value is the fraction of frame ``j``'s grid cells hit by frame ``i``'s
    surface points; ``symmetric`` takes the minimum of both directions.
    """
    fwd = _marked_cells(scene, i, j, stride, cell_size_px).mean()
    if not symmetric:
        return float(fwd)
    return float(min(fwd, _marked_cells(scene, j, i, stride, cell_size_px).mean()))


# -- stock scenes ------------------------------------------------------------------------


def _circle_poses(center, radius, height, n, pitch, close_loop):
    span = 2 * np.pi
    angles = np.arange(n) * span / (n - 1 if close_loop else n)
    poses = []
    for a in angles:
        pos = (center[0] + radius * np.cos(a), center[1] + radius * np.sin(a), height)
        poses.append(look_pose(pos, a, pitch))
    return poses


def two_rooms(seed: int = 0, frames_a: int = 18, frames_b: int = 14, intrinsics=DEFAULT_INTRINSICS) -> SyntheticScene:
    """Two disjoint rooms; the trajectory circles room A, returning to its start, then room B."""
    room_a = Box((0.0, 0.0, 0.0), (8.0, 6.0, 3.0))
    room_b = Box((20.0, 0.0, 0.0), (26.0, 5.0, 3.0))
    pitch = np.deg2rad(15.0)
    pa = _circle_poses((4.0, 3.0), 1.2, 1.4, frames_a, pitch, close_loop=True)
    pb = _circle_poses((23.0, 2.5), 1.0, 1.4, frames_b, pitch, close_loop=False)
    return SyntheticScene(
        [room_a, room_b], pa + pb, intrinsics, seed, "tworooms", [0] * frames_a + [1] * frames_b
    )


def loop_room(seed: int = 0, n: int = 10, intrinsics=DEFAULT_INTRINSICS) -> SyntheticScene:
    """One room, ``n`` frames on a closed circular path; first and last poses coincide."""
    room = Box((0.0, 0.0, 0.0), (8.0, 6.0, 3.0))
    poses = _circle_poses((4.0, 3.0), 1.2, 1.4, n, np.deg2rad(15.0), close_loop=True)
    return SyntheticScene([room], poses, intrinsics, seed, "loop", [0] * n)


def wall_pair(shift_m: float, seed: int = 0, intrinsics=DEFAULT_INTRINSICS) -> SyntheticScene:
    """Two cameras 2 m from the same wall, pitched to see the floor, offset sideways by ``shift_m``."""
    room = Box((0.0, -10.0, 0.0), (6.0, 10.0, 3.0))
    pitch = np.deg2rad(20.0)
    a = look_pose((4.0, 0.0, 1.5), 0.0, pitch)
    b = look_pose((4.0, -shift_m, 1.5), 0.0, pitch)
    return SyntheticScene([room], [a, b], intrinsics, seed, "wall", [0, 0])


PRESETS = {"two_rooms": two_rooms, "loop_room": loop_room}


def scene_from_spec(spec: str | dict, seed: int) -> SyntheticScene:
    """Build a scene from a preset name or a JSON spec (file path or dict).

    JSON form: ``{"boxes": [[lo, hi], ...], "poses": [[x, y, z, yaw_deg, pitch_deg], ...],
    "intrinsics": {...}, "name": "..."}``.
    """
    if isinstance(spec, str) and spec in PRESETS:
        return PRESETS[spec](seed=seed)
    if isinstance(spec, str):
        spec = json.loads(Path(spec).read_text(encoding="utf-8"))
    intr = CameraIntrinsics(**spec["intrinsics"]) if "intrinsics" in spec else DEFAULT_INTRINSICS
    boxes = [Box(tuple(lo), tuple(hi)) for lo, hi in spec["boxes"]]
    poses = [look_pose(p[:3], np.deg2rad(p[3]), np.deg2rad(p[4])) for p in spec["poses"]]
    rooms = [next((k for k, b in enumerate(boxes) if b.contains(p.translation)), -1) for p in poses]
    return SyntheticScene(boxes, poses, intr, seed, spec.get("name", "scene"), rooms)


def write_dataset(scene: SyntheticScene, out_dir, meters_per_unit: float = 0.001, oracle: bool = True) -> Path:
    """Render every frame to PNGs plus a manifest; optionally the pairwise overlap oracle report."""
    out = Path(out_dir)
    (out / "color").mkdir(parents=True, exist_ok=True)
    (out / "depth").mkdir(parents=True, exist_ok=True)
    records = []
    for i in range(len(scene)):
        f = render_frame(scene, i)
        cpath, dpath = f"color/{f.id}.png", f"depth/{f.id}.png"
        write_color_png(out / cpath, f.color)
        write_depth_png(out / dpath, f.depth, meters_per_unit)
        records.append((f.id, cpath, dpath, f.pose, "cam0"))
    write_intrinsics(out / "intrinsics.txt", {"cam0": scene.intrinsics})
    manifest = out / "manifest.txt"
    write_manifest(manifest, records, meters_per_unit)
    if oracle:
        lines = []
        for i in range(len(scene)):
            for j in range(i + 1, len(scene)):
                lines.append(f"{scene.frame_id(i)} {scene.frame_id(j)} {analytic_overlap(scene, i, j):.9f}")
        (out / "oracle_overlap.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return manifest
