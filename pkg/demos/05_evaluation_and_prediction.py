"""Evaluation metrics and single-image prediction.

Reloads a trained checkpoint, evaluates the ensemble on the test split
(dice, accuracy, precision, sensitivity, specificity, 95th-percentile
Hausdorff distance, average surface distance), and segments one image via
the CLI entry point, writing a class map and a color overlay.
"""
import subprocess
import sys
import tempfile
from pathlib import Path

import numpy as np

from triseg import data, metrics, trainer
from triseg.trainer import TrainConfig

with tempfile.TemporaryDirectory() as d:
    root = Path(d) / "data"
    index = data.gen_synthetic(n=20, size=32, seed=1, out=root)
    cfg = TrainConfig(iterations=80, batch_size=4, val_every=20,
                      image_size=32, width=8, seed=0)
    run = trainer.fit(cfg, root, Path(d) / "run")

    nets = trainer.load_networks(run / "best.ckpt")
    report = metrics.evaluate(
        lambda img: trainer.ensemble_predict(nets, img),
        index, "test", 32, 4)
    print("test-split means over foreground classes:")
    for name, value in report.mean.items():
        print(f"  {name:>5}: {value:.4f}")

    # the same thing through the CLI
    sid = index.ids("test")[0]
    pred_path = Path(d) / "pred.pgm"
    cmd = [sys.executable, "-m", "triseg.cli", "predict",
           "--ckpt", str(run / "best.ckpt"),
           "--image", str(root / "images" / f"{sid}.pgm"),
           "--out", str(pred_path),
           "--overlay", str(Path(d) / "overlay.ppm")]
    subprocess.run(cmd, check=True)
    pred = data.read_pgm(pred_path)
    print(f"\nCLI prediction for {sid}: classes {sorted(np.unique(pred))}, "
          f"foreground pixels {(pred > 0).sum()}")
    print("overlay written:", (Path(d) / "overlay.ppm").exists())
