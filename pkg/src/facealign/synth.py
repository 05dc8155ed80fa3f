"""Procedural schematic faces with analytically known landmarks.

A canonical face (ellipse eyes, arc brows, triangle nose, lip ellipses,
jaw polyline) is defined in patch coordinates; each sample applies a
seeded similarity transform (in-plane rotation up to +/-30 degrees,
scale, translation) to the landmarks and to the drawing primitives
alike, then renders at 50x50 with randomized contrast and additive
noise. Landmarks therefore sit exactly on the drawn features: eye-center
landmarks coincide with the drawn eye ellipse centers by construction.
"""

from __future__ import annotations

import numpy as np

from .data import PATCH, Dataset, Sample
from .errors import ContractViolation
from .geometry import Shape, n_landmarks

# canonical feature geometry (patch units, y down)
EYE_L = np.array([0.345, 0.41])
EYE_RX, EYE_RY = 0.062, 0.042
BROW_Y, BROW_ARCH, BROW_HALFSPAN = 0.295, 0.022, 0.085
NOSE_TOP = np.array([0.5, 0.44])
NOSE_TIP = np.array([0.5, 0.585])
NOSTRIL_L = np.array([0.448, 0.622])
MOUTH_C = np.array([0.5, 0.76])
MOUTH_RX, MOUTH_RY = 0.145, 0.048
MOUTH_IN_RX, MOUTH_IN_RY = 0.10, 0.022
JAW_C = np.array([0.5, 0.42])
JAW_RX, JAW_RY = 0.335, 0.50
FACE_C = np.array([0.5, 0.52])
FACE_RX, FACE_RY = 0.36, 0.44

# pose ranges keeping every landmark inside the patch
ROT_RANGE = np.deg2rad(30.0)
SCALE_RANGE = (0.62, 0.80)
SHIFT_RANGE = 0.03


def _mirror(p):
    return np.array([1.0 - p[0], p[1]])


def _on_ellipse(center, rx, ry, t):
    return np.array([center[0] + rx * np.cos(t), center[1] - ry * np.sin(t)])


def _jaw_point(u):
    return np.array([JAW_C[0] - JAW_RX * np.cos(u),
                     JAW_C[1] + JAW_RY * np.sin(u)])


def _brow_point(eye_center, t):
    """Left-brow arc, t in [0, 1] from outer to inner end."""
    x = eye_center[0] - BROW_HALFSPAN + 2.0 * BROW_HALFSPAN * t
    y = BROW_Y - BROW_ARCH * np.sin(np.pi * t)
    return np.array([x, y])


def _canonical_5():
    return np.stack([
        EYE_L, _mirror(EYE_L), NOSE_TIP,
        _on_ellipse(MOUTH_C, MOUTH_RX, MOUTH_RY, np.pi),
        _on_ellipse(MOUTH_C, MOUTH_RX, MOUTH_RY, 0.0),
    ])


def _canonical_29():
    pts = []
    left_brow = [_brow_point(EYE_L, t) for t in (0.0, 0.5, 1.0)]
    pts += left_brow                                   # 1-3
    pts += [_mirror(left_brow[i]) for i in (2, 1, 0)]  # 4-6
    left_eye = [_on_ellipse(EYE_L, EYE_RX, EYE_RY, t)
                for t in (np.pi, np.pi / 2, 0.0, -np.pi / 2)]
    pts += left_eye + [EYE_L]                          # 7-11
    pts += [_mirror(left_eye[i]) for i in (2, 1, 0, 3)]  # 12-15
    pts += [_mirror(EYE_L)]                            # 16
    pts += [NOSE_TOP, NOSTRIL_L, _mirror(NOSTRIL_L), NOSE_TIP]  # 17-20
    mouth_t = (np.pi, 2 * np.pi / 3, np.pi / 3, 0.0,
               -np.pi / 3, -2 * np.pi / 3)
    pts += [_on_ellipse(MOUTH_C, MOUTH_RX, MOUTH_RY, t) for t in mouth_t]
    pts += [_jaw_point(np.pi / 4), _jaw_point(np.pi / 2),
            _jaw_point(3 * np.pi / 4)]                 # 27-29
    return np.stack(pts)


def _canonical_68():
    pts = [_jaw_point(j * np.pi / 16) for j in range(17)]       # 1-17
    left_brow = [_brow_point(EYE_L, t) for t in np.linspace(0, 1, 5)]
    pts += left_brow                                            # 18-22
    pts += [_mirror(left_brow[i]) for i in (4, 3, 2, 1, 0)]     # 23-27
    for y in (0.44, 0.49, 0.54, 0.585):                         # 28-31
        pts.append(np.array([0.5, y]))
    base_mid = np.array([0.5, 0.636])
    base_l2 = np.array([0.474, 0.632])
    pts += [NOSTRIL_L, base_l2, base_mid,
            _mirror(base_l2), _mirror(NOSTRIL_L)]               # 32-36
    eye_t = (np.pi, 2 * np.pi / 3, np.pi / 3, 0.0,
             -np.pi / 3, -2 * np.pi / 3)
    left_eye = [_on_ellipse(EYE_L, EYE_RX, EYE_RY, t) for t in eye_t]
    pts += left_eye                                             # 37-42
    pts += [_mirror(left_eye[i]) for i in (3, 2, 1, 0, 5, 4)]   # 43-48
    outer_t = [np.pi, 5 * np.pi / 6, 2 * np.pi / 3, np.pi / 2,
               np.pi / 3, np.pi / 6, 0.0,
               -np.pi / 6, -np.pi / 3, -np.pi / 2,
               -2 * np.pi / 3, -5 * np.pi / 6]
    pts += [_on_ellipse(MOUTH_C, MOUTH_RX, MOUTH_RY, t) for t in outer_t]
    inner_t = [np.pi, 3 * np.pi / 4, np.pi / 2, np.pi / 4, 0.0,
               -np.pi / 4, -np.pi / 2, -3 * np.pi / 4]
    pts += [_on_ellipse(MOUTH_C, MOUTH_IN_RX, MOUTH_IN_RY, t)
            for t in inner_t]                                   # 61-68
    return np.stack(pts)


_CANONICAL = {5: _canonical_5, 29: _canonical_29, 68: _canonical_68}


def canonical_landmarks(pattern: int) -> np.ndarray:
    """(n, 2) canonical landmark positions in patch coordinates."""
    return _CANONICAL[n_landmarks(pattern)]()


# ------------------------------------------------------------- rasterizer

def _pixel_grid():
    centers = (np.arange(PATCH) + 0.5) / PATCH
    xs, ys = np.meshgrid(centers, centers)  # ys varies along rows
    return xs, ys


def _paint_ellipse(img, xs, ys, center, rx, ry, angle, value):
    dx = xs - center[0]
    dy = ys - center[1]
    c, s = np.cos(angle), np.sin(angle)
    u = (dx * c + dy * s) / rx
    v = (-dx * s + dy * c) / ry
    img[u * u + v * v <= 1.0] = value


def _paint_polyline(img, xs, ys, points, halfwidth, value):
    mask = np.zeros(img.shape, dtype=bool)
    for a, b in zip(points[:-1], points[1:]):
        ab = b - a
        denom = float(ab @ ab)
        px = xs - a[0]
        py = ys - a[1]
        if denom == 0.0:
            d2 = px * px + py * py
        else:
            t = np.clip((px * ab[0] + py * ab[1]) / denom, 0.0, 1.0)
            d2 = (px - t * ab[0]) ** 2 + (py - t * ab[1]) ** 2
        mask |= d2 <= halfwidth * halfwidth
    img[mask] = value


def _similarity(points, center, scale, theta, shift):
    c, s = np.cos(theta), np.sin(theta)
    rot = np.array([[c, -s], [s, c]])
    return (points - center) @ (scale * rot.T) + center + shift


def render_face(pattern: int, scale: float, theta: float, shift,
                bg_value: float, face_value: float, eye_value: float,
                line_value: float, noise: np.ndarray | None = None):
    """Render one schematic face; returns (image, landmarks).

    All primitives and landmarks share the same similarity transform, so
    the returned landmarks sit exactly on the drawn features.
    """
    center = np.array([0.5, 0.5])
    shift = np.asarray(shift, dtype=np.float64)
    xs, ys = _pixel_grid()
    img = np.full((PATCH, PATCH), bg_value, dtype=np.float64)

    def tf(pts):
        return _similarity(np.atleast_2d(pts), center, scale, theta, shift)

    _paint_ellipse(img, xs, ys, tf(FACE_C)[0], FACE_RX * scale,
                   FACE_RY * scale, theta, face_value)
    jaw = tf(np.stack([_jaw_point(u) for u in np.linspace(0, np.pi, 33)]))
    _paint_polyline(img, xs, ys, jaw, 0.012 * scale, line_value)
    for eye_c in (EYE_L, _mirror(EYE_L)):
        brow = tf(np.stack([_brow_point(eye_c, t)
                            for t in np.linspace(0, 1, 9)]))
        _paint_polyline(img, xs, ys, brow, 0.016 * scale, line_value)
    nose = tf(np.stack([NOSE_TOP, NOSTRIL_L, _mirror(NOSTRIL_L), NOSE_TOP]))
    _paint_polyline(img, xs, ys, nose, 0.012 * scale, line_value)
    _paint_ellipse(img, xs, ys, tf(MOUTH_C)[0], MOUTH_RX * scale,
                   MOUTH_RY * scale, theta, line_value)
    _paint_ellipse(img, xs, ys, tf(MOUTH_C)[0], MOUTH_IN_RX * scale,
                   MOUTH_IN_RY * scale, theta,
                   max(line_value - 28.0, 0.0))
    for eye_c in (EYE_L, _mirror(EYE_L)):
        _paint_ellipse(img, xs, ys, tf(eye_c)[0], EYE_RX * scale,
                       EYE_RY * scale, theta, eye_value)

    if noise is not None:
        img = img + noise
    img = np.clip(np.rint(img), 0.0, 255.0).astype(np.float32)
    landmarks = tf(canonical_landmarks(pattern))
    return img[:, :, None], landmarks


def synth_generate(pattern: int, count: int, seed: int,
                   split: str = "train") -> Dataset:
    """Deterministic dataset of schematic faces (`count` samples)."""
    if count < 1:
        raise ContractViolation("count must be >= 1")
    n_landmarks(pattern)
    rng = np.random.default_rng(seed)
    samples = []
    for i in range(count):
        theta = rng.uniform(-ROT_RANGE, ROT_RANGE)
        scale = rng.uniform(*SCALE_RANGE)
        shift = rng.uniform(-SHIFT_RANGE, SHIFT_RANGE, size=2)
        bg = rng.uniform(165.0, 205.0)
        face = bg - rng.uniform(12.0, 32.0)
        eye = rng.uniform(25.0, 50.0)
        line = rng.uniform(70.0, 105.0)
        sigma = rng.uniform(0.5, 3.5)
        noise = rng.normal(0.0, sigma, size=(PATCH, PATCH))
        img, pts = render_face(pattern, scale, theta, shift,
                               bg, face, eye, line, noise)
        samples.append(Sample(img, Shape.from_points(pts, pattern),
                              f"synth_{i:06d}"))
    return Dataset(pattern, split, samples)
