"""Samples, datasets, and the on-disk layout.

A dataset directory holds:

    meta.txt            line 1: "pattern <n>", line 2: "split <name>"
    images/<id>.pgm     binary PGM (P5), 8-bit grayscale, 50x50
    landmarks/<id>.txt  n lines "x y", decimal floats in normalized patch
                        coordinates, '.' separator, LF endings

Images are carried in memory as float32 (50, 50, 1) arrays holding
integral values in [0, 255]; landmark coordinates are float64 in patch
units ([0, 1] spans the patch, slight overshoot up to [-0.2, 1.2] is
allowed because crops may cut off a landmark).
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractViolation, DatasetError
from .geometry import Shape, n_landmarks

PATCH = 50
COORD_LO, COORD_HI = -0.2, 1.2
PIXEL_SCALE = 0.0078125  # 1/128
SPLITS = ("train", "val", "test")


@dataclass(frozen=True)
class Sample:
    """One face patch with its ground-truth landmarks."""

    image: np.ndarray  # (50, 50, 1) float32, integral values 0..255
    shape: Shape
    id: str

    def __post_init__(self):
        img = np.asarray(self.image, dtype=np.float32)
        if img.shape != (PATCH, PATCH, 1):
            raise ContractViolation(
                f"sample image must be ({PATCH}, {PATCH}, 1), got {img.shape}")
        if img.min() < 0 or img.max() > 255:
            raise ContractViolation("pixel values must lie in [0, 255]")
        object.__setattr__(self, "image", img)
        c = self.shape.coords
        if c.min() < COORD_LO or c.max() > COORD_HI:
            raise ContractViolation(
                f"landmarks of {self.id!r} outside [{COORD_LO}, {COORD_HI}]")


@dataclass
class Dataset:
    pattern: int
    split: str
    samples: list = field(default_factory=list)

    def __post_init__(self):
        n_landmarks(self.pattern)
        if self.split not in SPLITS:
            raise ContractViolation(f"split must be one of {SPLITS}")
        ids = [s.id for s in self.samples]
        if len(set(ids)) != len(ids):
            raise ContractViolation("sample ids must be unique")
        for s in self.samples:
            if s.shape.pattern != self.pattern:
                raise ContractViolation(
                    f"sample {s.id!r} has pattern {s.shape.pattern}, "
                    f"dataset declares {self.pattern}")

    def __len__(self):
        return len(self.samples)

    def images(self) -> np.ndarray:
        """(N, 50, 50, 1) stack of raw images."""
        return np.stack([s.image for s in self.samples])

    def gt_coords(self) -> np.ndarray:
        """(N, 2n) stack of ground-truth coordinates."""
        return np.stack([s.shape.coords for s in self.samples])


def normalize_pixels(image: np.ndarray) -> np.ndarray:
    """Map 8-bit values to [-1, 1): v -> (v - 128) * 0.0078125.

    Exact in float32 (the scale is 2^-7 and v - 128 is integral), so
    128 -> 0.0, 0 -> -1.0, 255 -> 0.9921875.
    """
    image = np.asarray(image)
    return (image - 128.0) * np.asarray(PIXEL_SCALE, dtype=image.dtype)


# ----------------------------------------------------------------- PGM I/O

def write_pgm(path, image: np.ndarray) -> None:
    img = np.asarray(image)
    if img.ndim == 3:
        img = img[:, :, 0]
    h, w = img.shape
    data = np.rint(img).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def read_pgm(path) -> np.ndarray:
    """Binary PGM reader (maxval <= 255, comments allowed)."""
    with open(path, "rb") as fh:
        data = fh.read()

    tokens = []
    pos = 0
    while len(tokens) < 4 and pos < len(data):
        ch = data[pos:pos + 1]
        if ch == b"#":
            pos = data.find(b"\n", pos)
            if pos < 0:
                break
            pos += 1
        elif ch.isspace():
            pos += 1
        else:
            end = pos
            while end < len(data) and not data[end:end + 1].isspace():
                end += 1
            tokens.append(data[pos:end])
            pos = end
    if len(tokens) < 4 or tokens[0] != b"P5":
        raise DatasetError(f"{path}: not a binary PGM (P5) file")
    try:
        w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    except ValueError as exc:
        raise DatasetError(f"{path}: malformed PGM header") from exc
    if maxval != 255:
        raise DatasetError(f"{path}: unsupported maxval {maxval}")
    pos += 1  # single whitespace byte after maxval
    if len(data) - pos < w * h:
        raise DatasetError(f"{path}: truncated pixel data")
    img = np.frombuffer(data, dtype=np.uint8, count=w * h, offset=pos)
    return img.reshape(h, w, 1).astype(np.float32)


# ------------------------------------------------------------- dataset I/O

def save_dataset(ds: Dataset, directory) -> None:
    os.makedirs(os.path.join(directory, "images"), exist_ok=True)
    os.makedirs(os.path.join(directory, "landmarks"), exist_ok=True)
    with open(os.path.join(directory, "meta.txt"), "w", newline="\n") as fh:
        fh.write(f"pattern {ds.pattern}\nsplit {ds.split}\n")
    for s in ds.samples:
        write_pgm(os.path.join(directory, "images", f"{s.id}.pgm"), s.image)
        lines = "".join(f"{x:.17g} {y:.17g}\n" for x, y in s.shape.points())
        with open(os.path.join(directory, "landmarks", f"{s.id}.txt"),
                  "w", newline="\n") as fh:
            fh.write(lines)


def load_dataset(directory) -> Dataset:
    """Load a dataset directory; sample order is sorted by id."""
    meta_path = os.path.join(directory, "meta.txt")
    try:
        with open(meta_path, encoding="ascii") as fh:
            lines = [ln.strip() for ln in fh.read().splitlines() if ln.strip()]
    except OSError as exc:
        raise DatasetError(f"cannot read {meta_path}: {exc}") from exc
    try:
        meta = dict(ln.split(None, 1) for ln in lines)
        pattern = int(meta["pattern"])
        split = meta["split"]
    except (KeyError, ValueError) as exc:
        raise DatasetError(f"{meta_path}: need 'pattern <n>' and "
                           f"'split <name>' lines") from exc
    if split not in SPLITS:
        raise DatasetError(f"{meta_path}: unknown split {split!r}")
    n = n_landmarks(pattern)
    img_dir = os.path.join(directory, "images")
    ids = []
    if os.path.isdir(img_dir):
        ids = sorted(f[:-4] for f in os.listdir(img_dir) if f.endswith(".pgm"))
    samples = []
    for sample_id in ids:
        img = read_pgm(os.path.join(img_dir, f"{sample_id}.pgm"))
        if img.shape != (PATCH, PATCH, 1):
            raise DatasetError(
                f"{sample_id}.pgm: expected {PATCH}x{PATCH}, "
                f"got {img.shape[1]}x{img.shape[0]}")
        lm_path = os.path.join(directory, "landmarks", f"{sample_id}.txt")
        if not os.path.exists(lm_path):
            raise DatasetError(f"missing landmark file {lm_path}")
        rows = []
        with open(lm_path, encoding="ascii") as fh:
            for line in fh.read().splitlines():
                if line.strip():
                    parts = line.split()
                    if len(parts) != 2:
                        raise DatasetError(f"{lm_path}: malformed line "
                                           f"{line!r}")
                    rows.append((float(parts[0]), float(parts[1])))
        if len(rows) != n:
            raise DatasetError(
                f"{lm_path}: has {len(rows)} landmarks, pattern {pattern} "
                f"needs {n}")
        samples.append(Sample(img, Shape.from_points(np.array(rows), pattern),
                              sample_id))
    return Dataset(pattern, split, samples)
