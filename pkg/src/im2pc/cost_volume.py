"""2D-3D cost volume: implicit-correspondence generation on the normalized
camera plane (all-to-all or KNN point-pixel mixtures) followed by local
spatial transformation embedding over point neighborhoods."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ModeMismatch, NoCandidates
from .geometry import DEFAULT_Z_MIN, SphericalConfig
from .nn_blocks import Linear, SharedMlp
from .params import Module
from .pyramids import FeatureImage
from .sampling import GroupingSpec, PointCloud, brute_force_knn, projection_aware_knn

SIGMA_FLOOR = 1e-8
MASK_NEG = -1e30


@dataclass
class MixtureSpec:
    mode: str                 # "all" or "knn"
    k: int = 32               # pixel candidates per point (knn mode)
    k2: int = 4               # LST point neighbors
    lst_kernel: tuple = (3, 5)
    lst_dist: float = 4.5

    def __post_init__(self):
        if self.mode not in ("all", "knn"):
            raise ValueError(f"unknown mixture mode {self.mode!r}")
        if self.k < 1 or self.k2 < 1:
            raise ValueError("neighbor counts must be >= 1")


@dataclass
class CostVolume:
    entries: Tensor           # (N, C)
    level: int
    point_ref: PointCloud


def standardize(x: Tensor) -> Tensor:
    """Per-vector standardization over the channel (last) axis.

    Population sigma, floored at SIGMA_FLOOR; a constant vector maps to 0.
    """
    mu = x.mean(axis=-1, keepdims=True)
    centered = x - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    sigma = var.sqrt().clip_min(SIGMA_FLOOR)
    return centered / sigma


def point_pixel_similarity(f: Tensor, g: Tensor) -> Tensor:
    """Channel-wise product of the standardized feature vectors."""
    return standardize(f) * standardize(g)


def inverse_similarity(point_feats: Tensor, pixel_feats: Tensor) -> Tensor:
    """Per-pixel channel-wise max over all points of f (*) g (raw features)."""
    prod = point_feats.reshape(point_feats.shape[0], 1, -1) * \
        pixel_feats.reshape(1, pixel_feats.shape[0], -1)
    return prod.max(axis=0)           # (M, C)


def normalized_pixel_grid(img: FeatureImage) -> np.ndarray:
    """(M, 2) pixel coordinates inverse-projected onto the normalized plane."""
    K = img.intrinsics
    coords = img.pixel_coords.reshape(-1, 2)
    return np.stack([(coords[:, 0] - K.cx) / K.fx, (coords[:, 1] - K.cy) / K.fy], axis=1)


def normalized_points(positions: np.ndarray, z_min: float = DEFAULT_Z_MIN) -> np.ndarray:
    """Project points to the normalized plane, clamping z at z_min.

    The clamp keeps behind-camera points queryable for candidate search;
    the outlier mask is expected to down-weight them.
    """
    z = np.maximum(positions[:, 2], z_min)
    return positions[:, :2] / z[:, None]


def knn_pixel_candidates(pbar: np.ndarray, pixel_plane: np.ndarray, k: int) -> np.ndarray:
    """k nearest pixels per point on the normalized plane, ties to lower index."""
    if k > pixel_plane.shape[0]:
        raise NoCandidates(f"k={k} exceeds pixel count {pixel_plane.shape[0]}")
    d = ((pbar[:, None, :] - pixel_plane[None, :, :]) ** 2).sum(axis=2)
    return np.argsort(d, axis=1, kind="stable")[:, :k].astype(np.int64)


class CostVolumeModule(Module):
    """IC generation + LST embedding for one registration stage."""

    def __init__(self, name, point_dim, image_dim, spec: MixtureSpec,
                 ic_dims, sal_dims, pos_dim, lst_dims, rng):
        self.spec = spec
        self.image_dim = image_dim
        self.align = None
        if point_dim != image_dim:
            # similarity needs equal channel widths; project point features
            self.align = Linear(f"{name}.align", point_dim, image_dim, rng)
        sim_dim = image_dim
        extra = image_dim if spec.mode == "all" else 0
        self.ic_mlp = SharedMlp(f"{name}.ic", sim_dim + extra + 2 + 3, ic_dims, rng)
        self.pos_fc = Linear(f"{name}.pos", 5, pos_dim, rng)
        self.sal_mlp = SharedMlp(f"{name}.sal", ic_dims[-1] + pos_dim, sal_dims, rng,
                                 final_linear=True)
        self.b_fc = Linear(f"{name}.lst_pos", 10, pos_dim, rng)
        self.lst_mlp = SharedMlp(f"{name}.lst", point_dim + pos_dim + ic_dims[-1],
                                 lst_dims, rng, final_linear=True)
        if sal_dims[-1] != ic_dims[-1] or lst_dims[-1] != ic_dims[-1]:
            raise ValueError("salience/LST weight widths must match the IC width")
        self.out_dim = ic_dims[-1]

    # -- IC generation ------------------------------------------------------

    def ic_generate(self, pos_t: Tensor, f: Tensor, img: FeatureImage,
                    train: bool, z_min: float = DEFAULT_Z_MIN) -> Tensor:
        M = img.pixel_count
        if M == 0:
            raise NoCandidates("image level has no pixels")
        N = pos_t.shape[0]
        g = img.features.reshape(M, self.image_dim)
        obar = Tensor(normalized_pixel_grid(img))            # (M, 2) constant
        fa = self.align(f) if self.align is not None else f
        zf = standardize(fa)
        zg = standardize(g)

        if self.spec.mode == "all":
            k1 = M
            s = zf.reshape(N, 1, -1).broadcast_to((N, M, self.image_dim)) * \
                zg.reshape(1, M, -1).broadcast_to((N, M, self.image_dim))
            hhat = inverse_similarity(fa, g)                 # (M, C)
            parts = [s, hhat.reshape(1, M, -1).broadcast_to((N, M, self.image_dim))]
            o_cand = obar.reshape(1, M, 2).broadcast_to((N, M, 2))
        else:
            k1 = self.spec.k
            pbar = normalized_points(pos_t.data, z_min)
            cand = knn_pixel_candidates(pbar, obar.data, k1)  # (N, k1)
            s = zf.reshape(N, 1, -1).broadcast_to((N, k1, self.image_dim)) * zg.gather(cand)
            parts = [s]
            o_cand = obar.gather(cand)
        p_cand = pos_t.reshape(N, 1, 3).broadcast_to((N, k1, 3))
        h = self.ic_mlp(ad.concat(parts + [o_cand, p_cand], axis=2), train)
        r = self.pos_fc(ad.concat([p_cand, o_cand], axis=2))
        logits = self.sal_mlp(ad.concat([h, r], axis=2), train)
        w = logits.softmax(axis=1)
        return (h * w).sum(axis=1)                           # (N, ic_dim)

    def query_inverse_similarity(self, f: Tensor, g: Tensor) -> Tensor:
        if self.spec.mode != "all":
            raise ModeMismatch("inverse similarity is an all-to-all construct")
        fa = self.align(f) if self.align is not None else f
        return inverse_similarity(fa, g)

    # -- LST embedding ------------------------------------------------------

    def lst_embed(self, pos_t: Tensor, spherical: np.ndarray, f: Tensor,
                  ic: Tensor, cfg: SphericalConfig, train: bool,
                  use_fps: bool = False) -> Tensor:
        N = pos_t.shape[0]
        k2 = min(self.spec.k2, N)
        if use_fps or spherical is None:
            idx, mask = brute_force_knn(pos_t.data, pos_t.data, k2, self.spec.lst_dist)
        else:
            cloud = PointCloud(pos_t.data, np.zeros((N, 1)), spherical=spherical)
            gspec = GroupingSpec(k2, self.spec.lst_kernel, self.spec.lst_dist)
            idx, mask = projection_aware_knn(cloud, cloud, gspec, cfg)
        p_m = pos_t.gather(idx)                              # (N, k2, 3)
        p_i = pos_t.reshape(N, 1, 3).broadcast_to((N, k2, 3))
        rel = p_m - p_i
        dist = ((rel * rel).sum(axis=2, keepdims=True) + 1e-24).sqrt()
        u = ad.concat([p_i, p_m, rel, dist], axis=2)
        b = self.b_fc(u)
        ic_m = ic.gather(idx)
        f_i = f.reshape(N, 1, -1).broadcast_to((N, k2, f.shape[-1]))
        logits = self.lst_mlp(ad.concat([f_i, b, ic_m], axis=2), train)
        # padded slots must not contribute to the weighted sum
        logits = logits + Tensor(np.where(mask, 0.0, MASK_NEG)[:, :, None])
        w = logits.softmax(axis=1)
        return (ic_m * w).sum(axis=1)

    def __call__(self, pos_t: Tensor, spherical: Optional[np.ndarray], f: Tensor,
                 img: FeatureImage, cfg: SphericalConfig, train: bool,
                 level: int, point_ref: PointCloud, use_fps: bool = False,
                 z_min: float = DEFAULT_Z_MIN) -> CostVolume:
        ic = self.ic_generate(pos_t, f, img, train, z_min=z_min)
        e = self.lst_embed(pos_t, spherical, f, ic, cfg, train, use_fps=use_fps)
        return CostVolume(e, level, point_ref)
