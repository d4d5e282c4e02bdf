"""Synthetic data and scribble supervision.

The built-in generator produces cardiac-like grayscale images with dense
4-class labels (background, and three anatomical structures).  Scribbles
are derived from dense labels by skeletonizing each class mask and keeping
a random connected run — a few percent of the pixels carry labels, the
rest are marked 255 (unlabeled).
"""
import tempfile
from pathlib import Path

import numpy as np

from triseg import data
from triseg.losses import UNLABELED

with tempfile.TemporaryDirectory() as d:
    root = Path(d) / "demo_data"
    index = data.gen_synthetic(n=10, size=64, seed=0, out=root)
    print("splits:", {k: len(v) for k, v in index.splits.items()})

    sid = index.splits["train"][0]
    label = data.read_pgm(root / "labels" / f"{sid}.pgm")
    scrib = data.read_pgm(root / "scribbles" / f"{sid}.pgm")

    print("classes present:", sorted(np.unique(label)))
    labeled = scrib != UNLABELED
    print(f"scribble coverage: {labeled.mean():.1%} of pixels")
    print("scribbles agree with dense labels:",
          bool((scrib[labeled] == label[labeled]).all()))

    # skeletonization in isolation: a filled rectangle thins to a line
    mask = np.zeros((20, 20), dtype=bool)
    mask[5:15, 4:16] = True
    skel = data.zhang_suen_thin(mask)
    print(f"thinning: {int(mask.sum())} pixels -> {int(skel.sum())} skeleton "
          f"pixels, all inside the mask: {not (skel & ~mask).any()}")

    # ASCII rendering of label vs scribble for one sample
    chars = {0: ".", 1: "1", 2: "2", 3: "3", UNLABELED: " "}
    small_lab = data.resize_label(label, 32)
    small_scr = data.resize_label(scrib, 32)
    print("\ndense label (left) vs scribbles (right):")
    for row_l, row_s in zip(small_lab, small_scr):
        left = "".join(chars[v] for v in row_l)
        right = "".join(chars[v] for v in row_s)
        print(left + "   " + right)
