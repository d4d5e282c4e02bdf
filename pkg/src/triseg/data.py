"""Dataset I/O, synthetic cardiac-like sample generation, and scribble
synthesis from dense masks.

On-disk layout (all 8-bit binary PGM, maxval 255):

    root/images/<id>.pgm     grayscale image
    root/labels/<id>.pgm     dense class map {0..K-1}
    root/scribbles/<id>.pgm  sparse class map, 255 = unlabeled
    root/splits/{train,val,test}.txt   one id per line, LF-terminated
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

UNLABELED = 255
NUM_CLASSES = 4  # background, RVC, MYO, LVC

__all__ = [
    "UNLABELED", "NUM_CLASSES", "DatasetIndex", "read_pgm", "write_pgm",
    "load_index", "load_sample", "gen_synthetic", "scribblify",
    "zhang_suen_thin", "resize_image", "resize_label",
]


# ---------------------------------------------------------------------------
# PGM I/O

def write_pgm(path, arr: np.ndarray):
    arr = np.asarray(arr)
    if arr.dtype != np.uint8 or arr.ndim != 2:
        raise ValueError(f"PGM writer needs a 2D uint8 array, got "
                         f"{arr.dtype}/{arr.shape}")
    h, w = arr.shape
    with open(path, "wb") as f:
        f.write(b"P5\n%d %d\n255\n" % (w, h))
        f.write(arr.tobytes())


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    try:
        if data[:2] != b"P5":
            raise ValueError("missing P5 magic")
        # header: magic, width, height, maxval; '#' comments allowed
        fields = []
        pos = 2
        while len(fields) < 3:
            while pos < len(data) and data[pos:pos + 1].isspace():
                pos += 1
            if data[pos:pos + 1] == b"#":
                pos = data.index(b"\n", pos) + 1
                continue
            start = pos
            while pos < len(data) and not data[pos:pos + 1].isspace():
                pos += 1
            fields.append(int(data[start:pos]))
        pos += 1  # single whitespace after maxval
        w, h, maxval = fields
        if maxval != 255:
            raise ValueError(f"unsupported maxval {maxval}")
        img = np.frombuffer(data, dtype=np.uint8, count=w * h, offset=pos)
        return img.reshape(h, w).copy()
    except (ValueError, IndexError) as e:
        raise ValueError(f"{path}: malformed PGM file ({e})") from e


# ---------------------------------------------------------------------------
# dataset index

@dataclass
class DatasetIndex:
    root: Path
    splits: dict = field(default_factory=dict)  # split -> list of ids

    def ids(self, split: str) -> list:
        if split not in self.splits:
            raise KeyError(f"unknown split {split!r}")
        return self.splits[split]

    def save_splits(self):
        d = self.root / "splits"
        d.mkdir(parents=True, exist_ok=True)
        for split, ids in self.splits.items():
            (d / f"{split}.txt").write_text("".join(f"{i}\n" for i in ids))


def load_index(root) -> DatasetIndex:
    root = Path(root)
    idx = DatasetIndex(root)
    for split in ("train", "val", "test"):
        p = root / "splits" / f"{split}.txt"
        if p.exists():
            idx.splits[split] = [ln for ln in p.read_text().splitlines() if ln]
    if not idx.splits:
        raise FileNotFoundError(f"{root}: no split files under splits/")
    return idx


# ---------------------------------------------------------------------------
# resizing (bilinear for images, nearest for labels)

def _lin_coords(n_out: int, n_in: int):
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    j0 = np.floor(src).astype(np.int64)
    w = src - j0
    return np.clip(j0, 0, n_in - 1), np.clip(j0 + 1, 0, n_in - 1), w


def resize_image(img: np.ndarray, size: int) -> np.ndarray:
    """Bilinear resize of a 2D float image to size x size."""
    h, w = img.shape
    if (h, w) == (size, size):
        return img
    i0, i1, wy = _lin_coords(size, h)
    j0, j1, wx = _lin_coords(size, w)
    top = img[i0][:, j0] * (1 - wx) + img[i0][:, j1] * wx
    bot = img[i1][:, j0] * (1 - wx) + img[i1][:, j1] * wx
    return (top * (1 - wy[:, None]) + bot * wy[:, None]).astype(img.dtype)


def resize_label(lab: np.ndarray, size: int) -> np.ndarray:
    """Nearest-neighbor resize; never introduces new values."""
    h, w = lab.shape
    if (h, w) == (size, size):
        return lab
    ii = np.minimum(((np.arange(size) + 0.5) * (h / size)).astype(np.int64), h - 1)
    jj = np.minimum(((np.arange(size) + 0.5) * (w / size)).astype(np.int64), w - 1)
    return lab[ii][:, jj]


def load_sample(index: DatasetIndex, sample_id: str, split: str,
                image_size: int | None = None,
                num_classes: int = NUM_CLASSES):
    """Load (image (1,H,W) float32 in [0,1], label (H,W) uint8).

    Train samples pair with scribbles, val/test with dense labels.  Sources
    at a different size are resized (bilinear image, nearest label).
    """
    img = read_pgm(index.root / "images" / f"{sample_id}.pgm")
    lab_dir = "scribbles" if split == "train" else "labels"
    lab = read_pgm(index.root / lab_dir / f"{sample_id}.pgm")
    image = img.astype(np.float32) / 255.0
    if image_size is not None:
        image = resize_image(image, image_size)
        lab = resize_label(lab, image_size)
    bad = lab[(lab >= num_classes) & (lab != UNLABELED)]
    if bad.size:
        raise ValueError(f"{sample_id}: label value {int(bad[0])} out of range "
                         f"for K={num_classes}")
    if split != "train" and np.any(lab == UNLABELED):
        raise ValueError(f"{sample_id}: dense label contains UNLABELED pixels")
    return image[None], lab


# ---------------------------------------------------------------------------
# synthetic corpus

def _ellipse_mask(size, cy, cx, ry, rx, angle):
    yy, xx = np.mgrid[:size, :size].astype(np.float64)
    y, x = yy - cy, xx - cx
    ca, sa = np.cos(angle), np.sin(angle)
    u = ca * x + sa * y
    v = -sa * x + ca * y
    return (u / rx) ** 2 + (v / ry) ** 2 <= 1.0


def _make_sample(rng: np.random.Generator, size: int):
    """One cardiac-like sample: ring (MYO=2) around a cavity (LVC=3) with a
    neighboring blob (RVC=1) on background 0."""
    s = size / 64.0
    label = np.zeros((size, size), np.uint8)
    cy = rng.uniform(0.42, 0.58) * size
    cx = rng.uniform(0.48, 0.64) * size
    r_out = rng.uniform(10, 15) * s
    thick = rng.uniform(3.0, 5.0) * s
    aspect = rng.uniform(0.85, 1.18)
    ang = rng.uniform(0, np.pi)
    outer = _ellipse_mask(size, cy, cx, r_out * aspect, r_out, ang)
    inner = _ellipse_mask(size, cy, cx, (r_out - thick) * aspect,
                          r_out - thick, ang)
    # RVC blob to the left of the ring
    r_rvc = rng.uniform(4.5, 7.0) * s
    gap = rng.uniform(1.0, 3.0) * s
    rcy = cy + rng.uniform(-3, 3) * s
    rcx = cx - (r_out + gap + r_rvc)
    rvc = _ellipse_mask(size, rcy, rcx, r_rvc * rng.uniform(0.8, 1.2), r_rvc,
                        rng.uniform(0, np.pi))
    label[rvc] = 1
    label[outer] = 2
    label[inner] = 3

    base = np.array([0.15, 0.55, 0.35, 0.75], np.float64)[label]
    gy, gx = rng.uniform(-0.1, 0.1, 2)
    yy, xx = np.mgrid[:size, :size]
    illum = gy * (yy / size - 0.5) + gx * (xx / size - 0.5)
    img = base + illum + rng.normal(0, 0.05, (size, size))
    img8 = np.clip(np.rint(img * 255), 0, 255).astype(np.uint8)
    return img8, label


def gen_synthetic(n: int, size: int, seed: int, out,
                  n_val: int | None = None, n_test: int | None = None,
                  coverage: float = 0.5) -> DatasetIndex:
    """Generate n samples, split into train/val/test, and write the layout.

    Dense labels are written for every id; train ids additionally get
    scribbles synthesized at ``coverage``.  Per-sample randomness derives
    from (seed, index) so generation is reproducible and order-independent.
    """
    root = Path(out)
    for d in ("images", "labels", "scribbles"):
        (root / d).mkdir(parents=True, exist_ok=True)
    if n_val is None:
        n_val = max(1, n // 10)
    if n_test is None:
        n_test = max(1, n // 5)
    n_train = n - n_val - n_test
    if n_train < 1:
        raise ValueError(f"n={n} too small for n_val={n_val}, n_test={n_test}")
    ids = [f"sample_{i:04d}" for i in range(n)]
    index = DatasetIndex(root, {
        "train": ids[:n_train],
        "val": ids[n_train:n_train + n_val],
        "test": ids[n_train + n_val:],
    })
    for i, sid in enumerate(ids):
        rng = np.random.default_rng(np.random.SeedSequence([seed, i]))
        img, lab = _make_sample(rng, size)
        write_pgm(root / "images" / f"{sid}.pgm", img)
        write_pgm(root / "labels" / f"{sid}.pgm", lab)
        if sid in index.splits["train"]:
            scrib = scribblify(lab, coverage, seed=int(rng.integers(2 ** 31)))
            write_pgm(root / "scribbles" / f"{sid}.pgm", scrib)
    index.save_splits()
    return index


# ---------------------------------------------------------------------------
# skeletonization and scribbles

def _neighbors(p: np.ndarray):
    """8-neighborhood planes P2..P9 (clockwise from north) of a padded mask."""
    return (p[:-2, 1:-1], p[:-2, 2:], p[1:-1, 2:], p[2:, 2:],
            p[2:, 1:-1], p[2:, :-2], p[1:-1, :-2], p[:-2, :-2])


def zhang_suen_thin(mask: np.ndarray) -> np.ndarray:
    """Iterative thinning of a boolean mask down to its skeleton."""
    img = mask.astype(np.uint8)
    changed = True
    while changed:
        changed = False
        for phase in (0, 1):
            p = np.pad(img, 1)
            n = _neighbors(p)
            B = sum(x.astype(np.int32) for x in n)
            seq = list(n) + [n[0]]
            A = sum(((seq[i] == 0) & (seq[i + 1] == 1)).astype(np.int32)
                    for i in range(8))
            P2, P4, P6, P8 = n[0], n[2], n[4], n[6]
            if phase == 0:
                c1 = (P2 * P4 * P6 == 0) & (P4 * P6 * P8 == 0)
            else:
                c1 = (P2 * P4 * P8 == 0) & (P2 * P6 * P8 == 0)
            kill = (img == 1) & (B >= 2) & (B <= 6) & (A == 1) & c1
            if kill.any():
                img[kill] = 0
                changed = True
    return img.astype(bool)


def scribblify(dense: np.ndarray, coverage: float, seed: int,
               num_classes: int = NUM_CLASSES) -> np.ndarray:
    """Synthesize a scribble map from a dense label.

    For every class present, thin the class mask to a skeleton and keep one
    random connected run covering about ``coverage`` of the skeleton length
    (at least one pixel).  Everything else becomes UNLABELED.
    """
    if not 0 < coverage <= 1:
        raise ValueError(f"coverage must be in (0, 1], got {coverage}")
    rng = np.random.default_rng(seed)
    scrib = np.full(dense.shape, UNLABELED, np.uint8)
    for cls in np.unique(dense):
        skel = zhang_suen_thin(dense == cls)
        pts = np.argwhere(skel)
        if len(pts) == 0:  # degenerate mask; keep one pixel of the class
            pts = np.argwhere(dense == cls)[:1]
        keep = max(1, int(round(coverage * len(pts))))
        run = _connected_run(pts, keep, rng)
        scrib[run[:, 0], run[:, 1]] = cls
    return scrib


def _connected_run(pts: np.ndarray, keep: int, rng: np.random.Generator):
    """BFS over 8-adjacency from a random skeleton pixel, first `keep` visits."""
    coords = {tuple(p): i for i, p in enumerate(map(tuple, pts))}
    start = tuple(pts[rng.integers(len(pts))])
    seen = {start}
    queue = [start]
    out = []
    while queue and len(out) < keep:
        y, x = queue.pop(0)
        out.append((y, x))
        for dy in (-1, 0, 1):
            for dx in (-1, 0, 1):
                nb = (y + dy, x + dx)
                if nb in coords and nb not in seen:
                    seen.add(nb)
                    queue.append(nb)
    return np.array(out)
