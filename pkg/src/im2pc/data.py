"""Synthetic pinhole-scene generation, perturbation sampling, and file IO.

Direction convention, fixed here and asserted by tests: Scene.gt_pose maps
CAMERA-frame coordinates to the MAP frame. The network's prediction target
is the map->camera transform, i.e. gt_pose.inverse().
"""

from __future__ import annotations

import hashlib
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import MalformedFile
from .geometry import CameraIntrinsics, PoseQT, pose_apply, pose_compose
from .sampling import PointCloud


@dataclass
class SceneConfig:
    n_points: int = 512
    height: int = 32
    width: int = 64
    focal: float = 40.0
    depth_range: tuple = (2.0, 8.0)
    rot_range: tuple = (30.0, 30.0, 30.0)     # degrees per axis
    transl_range: tuple = (1.0, 1.0, 1.0)     # length units per axis
    mode: str = "coarse"                      # large | coarse | decalib

    def intrinsics(self) -> CameraIntrinsics:
        return CameraIntrinsics(self.focal, self.focal,
                                self.width / 2.0, self.height / 2.0)


@dataclass
class PerturbSpec:
    rot_range: tuple
    transl_range: tuple
    mode: str

    def __post_init__(self):
        if any(r < 0 for r in self.rot_range) or any(t < 0 for t in self.transl_range):
            raise ValueError("perturbation ranges must be non-negative")


@dataclass
class Scene:
    cloud: PointCloud            # map frame
    image: np.ndarray            # (H, W, 3) in [0, 1]
    K: CameraIntrinsics
    gt_pose: PoseQT              # camera pose in the map frame
    meta: dict = field(default_factory=dict)


def sample_perturbation(spec: PerturbSpec, rng) -> PoseQT:
    """The pose the network must predict (for decalib: phi_gt = phi^-1)."""
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(rng)
    rx, ry, rz = (math.radians(r) for r in spec.rot_range)
    tx, ty, tz = spec.transl_range
    if spec.mode == "large":
        # up-axis (z) rotation and ground-plane (x, y) translation only
        yaw = rng.uniform(-rz, rz)
        t = np.array([rng.uniform(-tx, tx), rng.uniform(-ty, ty), 0.0])
        return PoseQT.from_axis_angle([0, 0, 1], yaw, t)
    angles = [rng.uniform(-r, r) for r in (rx, ry, rz)]
    t = np.array([rng.uniform(-v, v) for v in (tx, ty, tz)])
    pose = PoseQT.from_axis_angle([1, 0, 0], angles[0])
    pose = pose_compose(PoseQT.from_axis_angle([0, 1, 0], angles[1]), pose)
    pose = pose_compose(PoseQT.from_axis_angle([0, 0, 1], angles[2]), pose)
    pose = PoseQT(pose.q, t)
    if spec.mode == "decalib":
        return pose.inverse()
    return pose


def _point_colors(points: np.ndarray) -> np.ndarray:
    """Smooth procedural coloring so the image carries geometry-linked texture."""
    x, y, z = points[:, 0], points[:, 1], points[:, 2]
    r = 0.5 + 0.5 * np.sin(1.7 * x + 0.9 * y)
    g = 0.5 + 0.5 * np.sin(1.3 * y + 0.7 * z)
    b = 0.5 + 0.5 * np.sin(1.1 * z + 0.5 * x)
    return np.stack([r, g, b], axis=1)


def synth_scene(seed: int, cfg: SceneConfig) -> Scene:
    rng = np.random.default_rng(seed)
    K = cfg.intrinsics()
    H, W = cfg.height, cfg.width
    # sample camera-frame points pixel-uniformly inside the frustum
    u = rng.uniform(0, W, cfg.n_points)
    v = rng.uniform(0, H, cfg.n_points)
    z = rng.uniform(*cfg.depth_range, cfg.n_points)
    x = (u - K.cx) / K.fx * z
    y = (v - K.cy) / K.fy * z
    cam_points = np.stack([x, y, z], axis=1)
    colors = _point_colors(cam_points)
    # render with a 1-pixel splat and a nearest-wins z-buffer
    image = rng.random((H, W, 3))           # unsplatted pixels get seeded noise
    zbuf = np.full((H, W), np.inf)
    ui = np.clip(u.astype(int), 0, W - 1)
    vi = np.clip(v.astype(int), 0, H - 1)
    for i in range(cfg.n_points):
        if z[i] < zbuf[vi[i], ui[i]]:
            zbuf[vi[i], ui[i]] = z[i]
            image[vi[i], ui[i]] = colors[i]
    spec = PerturbSpec(cfg.rot_range, cfg.transl_range, cfg.mode)
    target = sample_perturbation(spec, rng)   # map -> camera, the net's target
    gt_pose = target.inverse()                # camera pose in the map frame
    map_points = pose_apply(gt_pose, cam_points)
    intensity = colors.mean(axis=1)
    feats = np.zeros((cfg.n_points, 4))
    feats[:, 3] = intensity
    cloud = PointCloud(map_points, feats)
    noise = None
    if cfg.mode == "decalib":
        from .geometry import RigidTransform, pose_to_matrix, se3_distance
        noise = se3_distance(pose_to_matrix(target), RigidTransform.identity())
    meta = {"seed": seed, "mode": cfg.mode}
    if noise is not None:
        meta["noise"] = noise
    return Scene(cloud, image, K, gt_pose, meta)


# -- file formats ------------------------------------------------------------

def load_kitti_bin(path) -> PointCloud:
    size = os.path.getsize(path)
    if size % 16 != 0:
        raise MalformedFile(f"{path}: size {size} not divisible by 16")
    raw = np.fromfile(path, dtype="<f4").reshape(-1, 4)
    feats = np.zeros((raw.shape[0], 4))
    feats[:, 3] = raw[:, 3].astype(np.float64)
    return PointCloud(raw[:, :3].astype(np.float64), feats)


def save_kitti_bin(path, positions: np.ndarray, intensity: np.ndarray):
    rec = np.empty((positions.shape[0], 4), dtype="<f4")
    rec[:, :3] = positions
    rec[:, 3] = intensity
    rec.tofile(path)


def write_ppm(path, image: np.ndarray):
    H, W, _ = image.shape
    data = np.clip(np.round(image * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P6\n{W} {H}\n255\n".encode())
        f.write(data.tobytes())


def read_ppm(path) -> np.ndarray:
    with open(path, "rb") as f:
        raw = f.read()
    parts = raw.split(b"\n", 3)
    if parts[0] != b"P6" or len(parts) < 4:
        raise MalformedFile(f"{path}: not a binary P6 ppm")
    W, H = (int(t) for t in parts[1].split())
    data = np.frombuffer(parts[3], dtype=np.uint8, count=H * W * 3)
    return data.reshape(H, W, 3).astype(np.float64) / 255.0


def write_scene(dirname, scene: Scene):
    os.makedirs(dirname, exist_ok=True)
    save_kitti_bin(os.path.join(dirname, "cloud.bin"),
                   scene.cloud.positions, scene.cloud.features.data[:, 3])
    write_ppm(os.path.join(dirname, "image.ppm"), scene.image)
    with open(os.path.join(dirname, "meta.txt"), "w") as f:
        q, t = scene.gt_pose.q, scene.gt_pose.t
        f.write("q=" + ",".join(repr(float(c)) for c in q) + "\n")
        f.write("t=" + ",".join(repr(float(c)) for c in t) + "\n")
        K = scene.K
        f.write(f"intrinsics={K.fx!r},{K.fy!r},{K.cx!r},{K.cy!r}\n")
        for key, val in scene.meta.items():
            f.write(f"{key}={val!r}\n" if isinstance(val, float) else f"{key}={val}\n")


def read_scene(dirname) -> Scene:
    cloud = load_kitti_bin(os.path.join(dirname, "cloud.bin"))
    image = read_ppm(os.path.join(dirname, "image.ppm"))
    meta = {}
    with open(os.path.join(dirname, "meta.txt")) as f:
        for line in f:
            key, _, val = line.strip().partition("=")
            meta[key] = val
    q = np.array([float(c) for c in meta.pop("q").split(",")])
    t = np.array([float(c) for c in meta.pop("t").split(",")])
    fx, fy, cx, cy = (float(c) for c in meta.pop("intrinsics").split(","))
    if "noise" in meta:
        meta["noise"] = float(meta["noise"])
    if "seed" in meta:
        meta["seed"] = int(meta["seed"])
    return Scene(cloud, image, CameraIntrinsics(fx, fy, cx, cy), PoseQT(q, t), meta)


def dataset_checksum(root) -> str:
    h = hashlib.sha256()
    for dirpath, dirnames, filenames in sorted(os.walk(root)):
        dirnames.sort()
        for name in sorted(filenames):
            path = os.path.join(dirpath, name)
            h.update(os.path.relpath(path, root).encode())
            with open(path, "rb") as f:
                h.update(f.read())
    return h.hexdigest()
