import numpy as np
import pytest

from rgbd_loopclosure import synth
from rgbd_loopclosure.rgbd_io import CameraIntrinsics, DepthFrame, Pose


@pytest.fixture
def intr():
    return CameraIntrinsics(fx=100.0, fy=100.0, cx=50.0, cy=50.0, width=100, height=100)


def make_frame(depth, intr, pose=None, fid="f", color=None, seed=0):
    if color is None:
        rng = np.random.default_rng(seed)
        color = rng.integers(0, 256, size=(intr.height, intr.width, 3), dtype=np.uint8)
    return DepthFrame(fid, color, depth, intr, pose or Pose.identity())


@pytest.fixture(scope="session")
def two_rooms_scene():
    return synth.two_rooms(seed=7)


@pytest.fixture(scope="session")
def two_rooms_dataset(tmp_path_factory, two_rooms_scene):
    out = tmp_path_factory.mktemp("tworooms")
    return synth.write_dataset(two_rooms_scene, out, oracle=False)
