"""Training-data augmentation: rotation, scaled/translated crops,
horizontal flip, and compression degradation, with landmark coordinates
remapped consistently at every step. Also the gray-fill occlusion
utility used by the robustness study.

Geometry conventions: pixel (r, c) covers the patch square
[c/50, (c+1)/50] x [r/50, (r+1)/50] with center ((c+0.5)/50, (r+0.5)/50),
so mirroring is exactly x -> 1 - x and the identity crop resamples every
pixel at its own center.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass

import numpy as np

from .data import PATCH, Sample
from .errors import ContractViolation
from .geometry import Shape, clusters_for_pattern, flip_index_map

log = logging.getLogger(__name__)

COORD_MARGIN = 0.2  # matches the Sample landmark band [-0.2, 1.2]


@dataclass(frozen=True)
class AugmentParams:
    """Augmentation grid. Every combination of rotation x scale x
    (tx, ty) is emitted, then doubled by flipping when `do_flip`, then
    multiplied by the compression qualities (empty list = no
    compression pass)."""

    rotation_degrees: tuple = (-15.0, 0.0, 15.0)
    scale_factors: tuple = (0.9, 1.0, 1.1)
    translation_offsets: tuple = (-0.05, 0.0, 0.05)
    do_flip: bool = True
    compression_qualities: tuple = (90, 30)

    def __post_init__(self):
        for f in ("rotation_degrees", "scale_factors",
                  "translation_offsets", "compression_qualities"):
            object.__setattr__(self, f, tuple(getattr(self, f)))
        if any(s <= 0 for s in self.scale_factors):
            raise ContractViolation("scale factors must be positive")
        if any(not 1 <= q <= 100 for q in self.compression_qualities):
            raise ContractViolation("qualities must lie in 1..100")

    @classmethod
    def identity(cls) -> "AugmentParams":
        return cls((0.0,), (1.0,), (0.0,), False, ())


# ----------------------------------------------------------- resampling

def _bilinear(img: np.ndarray, px: np.ndarray, py: np.ndarray) -> np.ndarray:
    """Sample img (H, W) at fractional pixel coords, replicating borders."""
    h, w = img.shape
    px = np.clip(px, 0.0, w - 1.0)
    py = np.clip(py, 0.0, h - 1.0)
    x0 = np.floor(px).astype(np.intp)
    y0 = np.floor(py).astype(np.intp)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = px - x0
    fy = py - y0
    top = img[y0, x0] * (1 - fx) + img[y0, x1] * fx
    bot = img[y1, x0] * (1 - fx) + img[y1, x1] * fx
    return top * (1 - fy) + bot * fy


def rotate_patch(image: np.ndarray, theta: float):
    """Rotate about the patch center; returns the warped image and a
    function mapping patch coordinates through the same rotation."""
    img = np.asarray(image, dtype=np.float64)[:, :, 0]
    centers = (np.arange(PATCH) + 0.5) / PATCH
    xs, ys = np.meshgrid(centers, centers)
    c, s = np.cos(theta), np.sin(theta)
    # inverse map: rotate output pixel centers by -theta
    dx = xs - 0.5
    dy = ys - 0.5
    sx = 0.5 + c * dx + s * dy
    sy = 0.5 - s * dx + c * dy
    out = _bilinear(img, sx * PATCH - 0.5, sy * PATCH - 0.5)

    def map_points(pts):
        d = pts - 0.5
        return np.stack([0.5 + c * d[:, 0] - s * d[:, 1],
                         0.5 + s * d[:, 0] + c * d[:, 1]], axis=1)

    return out[:, :, None], map_points


def crop_resize(image: np.ndarray, box):
    """Crop `box` = (x0, y0, side) in patch coords and resample to 50x50;
    out-of-image regions replicate the border."""
    x0, y0, side = box
    img = np.asarray(image, dtype=np.float64)[:, :, 0]
    centers = (np.arange(PATCH) + 0.5) / PATCH
    sx = (x0 + side * centers) * PATCH - 0.5
    sy = (y0 + side * centers) * PATCH - 0.5
    out = _bilinear(img, sx[None, :].repeat(PATCH, 0),
                    sy[:, None].repeat(PATCH, 1))
    return out[:, :, None]


def flip_sample_arrays(image: np.ndarray, pts: np.ndarray, pattern: int):
    flipped = np.ascontiguousarray(image[:, ::-1, :])
    out = pts[flip_index_map(pattern)].copy()
    out[:, 0] = 1.0 - out[:, 0]
    return flipped, out


# -------------------------------------------- compression degradation

_BASE_QUANT = np.array([
    [16, 11, 10, 16, 24, 40, 51, 61],
    [12, 12, 14, 19, 26, 58, 60, 55],
    [14, 13, 16, 24, 40, 57, 69, 56],
    [14, 17, 22, 29, 51, 87, 80, 62],
    [18, 22, 37, 56, 68, 109, 103, 77],
    [24, 35, 55, 64, 81, 104, 113, 92],
    [49, 64, 78, 87, 103, 121, 120, 101],
    [72, 92, 95, 98, 112, 100, 103, 99],
], dtype=np.float64)


def _dct_matrix():
    k = np.arange(8)[:, None]
    j = np.arange(8)[None, :]
    mat = np.cos(np.pi * (2 * j + 1) * k / 16.0) * np.sqrt(2.0 / 8.0)
    mat[0] /= np.sqrt(2.0)
    return mat


_DCT = _dct_matrix()


def quant_table(quality: int) -> np.ndarray:
    if not 1 <= quality <= 100:
        raise ContractViolation("quality must lie in 1..100")
    scale = 5000.0 / quality if quality < 50 else 200.0 - 2.0 * quality
    return np.clip(np.floor((_BASE_QUANT * scale + 50.0) / 100.0), 1, 255)


def compress_image(image: np.ndarray, quality: int) -> np.ndarray:
    """8x8 block-DCT quantization: the compression-artifact degradation
    (no external codec; deterministic)."""
    img = np.asarray(image, dtype=np.float64)[:, :, 0]
    h, w = img.shape
    ph, pw = -h % 8, -w % 8
    padded = np.pad(img, ((0, ph), (0, pw)), mode="edge") - 128.0
    tbl = quant_table(quality)
    bh, bw = padded.shape[0] // 8, padded.shape[1] // 8
    blocks = padded.reshape(bh, 8, bw, 8).transpose(0, 2, 1, 3)
    coefs = _DCT @ blocks @ _DCT.T
    coefs = np.round(coefs / tbl) * tbl
    recon = _DCT.T @ coefs @ _DCT
    out = recon.transpose(0, 2, 1, 3).reshape(bh * 8, bw * 8)[:h, :w] + 128.0
    return np.clip(out, 0.0, 255.0)[:, :, None]


# ------------------------------------------------------------- pipeline

def _finalize(image: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(image), 0.0, 255.0).astype(np.float32)


def augment(sample: Sample, params: AugmentParams,
            seed: int = 0) -> list:
    """Expand one sample through the augmentation grid.

    Per rotation, the image and landmarks rotate about the patch center
    and the tight landmark bounding box is re-derived; each (scale,
    translation) then crops a scaled/offset window of the patch (scale 1
    with zero offset is the full patch, so identity parameters are a
    geometric no-op) and resamples to 50x50. Flip and compression
    variants multiply the outputs. Crops that land fully outside the
    image or push landmarks beyond the allowed margin are skipped and
    counted in a warning.

    The grid is exhaustive and deterministic; `seed` is accepted for
    interface uniformity and does not influence the outputs.
    """
    del seed
    outputs = []
    skipped = 0
    pattern = sample.shape.pattern
    for ri, deg in enumerate(params.rotation_degrees):
        theta = np.deg2rad(deg)
        if deg == 0.0:
            rot_img = np.asarray(sample.image, dtype=np.float64)
            rot_pts = sample.shape.points().copy()
        else:
            rot_img, map_points = rotate_patch(sample.image, theta)
            rot_pts = map_points(sample.shape.points())
        # tight box over the rotated landmarks: the face region of record
        lo = rot_pts.min(axis=0)
        hi = rot_pts.max(axis=0)
        for si, ti in itertools.product(
                range(len(params.scale_factors)),
                range(len(params.translation_offsets) ** 2)):
            s = params.scale_factors[si]
            tx = params.translation_offsets[ti // len(params.translation_offsets)]
            ty = params.translation_offsets[ti % len(params.translation_offsets)]
            x0 = 0.5 - s / 2.0 + tx * s
            y0 = 0.5 - s / 2.0 + ty * s
            if x0 > 1.0 or y0 > 1.0 or x0 + s < 0.0 or y0 + s < 0.0:
                skipped += 1
                continue
            new_pts = (rot_pts - (x0, y0)) / s
            box_lo = (lo - (x0, y0)) / s
            box_hi = (hi - (x0, y0)) / s
            if box_lo.min() < -COORD_MARGIN or box_hi.max() > 1.0 + COORD_MARGIN:
                skipped += 1
                continue
            cropped = crop_resize(rot_img, (x0, y0, s))
            tag = f"{sample.id}_r{ri}s{si}t{ti}"
            variants = [(cropped, new_pts, tag)]
            if params.do_flip:
                fimg, fpts = flip_sample_arrays(cropped, new_pts, pattern)
                variants.append((fimg, fpts, tag + "f"))
            for img, pts, name in variants:
                if not params.compression_qualities:
                    outputs.append(Sample(_finalize(img),
                                          Shape.from_points(pts, pattern),
                                          name))
                    continue
                for q in params.compression_qualities:
                    outputs.append(Sample(
                        _finalize(compress_image(img, q)),
                        Shape.from_points(pts, pattern), f"{name}q{q}"))
    if skipped:
        log.warning("augment(%s): skipped %d crop(s) that lost landmarks "
                    "or left the image", sample.id, skipped)
    return outputs


def augment_dataset(dataset, params: AugmentParams, seed: int = 0):
    """Augment every sample; returns a new list of samples (originals
    are not included)."""
    out = []
    for s in dataset.samples:
        out.extend(augment(s, params, seed))
    return out


# -------------------------------------------------------------- occlusion

def occlude_cluster(sample: Sample, cluster_index: int,
                    gray_value: int = 128) -> Sample:
    """Fill the tight axis-aligned box around a cluster's ground-truth
    landmarks with a constant gray; landmarks are untouched."""
    part = clusters_for_pattern(sample.shape.pattern)
    idx = part.clusters[cluster_index]
    pts = sample.shape.points()[idx]
    x0 = int(np.clip(np.floor(pts[:, 0].min() * PATCH), 0, PATCH - 1))
    y0 = int(np.clip(np.floor(pts[:, 1].min() * PATCH), 0, PATCH - 1))
    x1 = int(np.clip(np.ceil(pts[:, 0].max() * PATCH), x0 + 1, PATCH))
    y1 = int(np.clip(np.ceil(pts[:, 1].max() * PATCH), y0 + 1, PATCH))
    img = sample.image.copy()
    img[y0:y1, x0:x1, :] = float(gray_value)
    return Sample(img, sample.shape, sample.id)
