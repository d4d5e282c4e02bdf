"""Acceptance criteria, one test per criterion, each printing PASS/FAIL.

Run with ``pytest tests/test_acceptance.py -v -s``.  The directional
experiment trains three seeds of both methods and dominates the runtime;
everything else finishes in minutes on one CPU core.
"""
import time
from pathlib import Path

import numpy as np
import pytest

from triseg import backbones, data, metrics, ops, trainer
from triseg.gradcheck import grad_check
from triseg.losses import UNLABELED, dice_loss, pce_loss
from triseg.mixer import MixWeights, mix_pseudo, sample_mix_weights
from triseg.tensor import Tensor, softmax_channels
from triseg.trainer import TrainConfig

from oracles import (attention_ref, confusion_ref, conv2d_ref, dice_ref,
                     hd95_asd_ref, pce_ref, selective_scan_ref)


def _report(name: str, ok: bool, detail: str = ""):
    line = f"{'PASS' if ok else 'FAIL'}: {name}"
    if detail:
        line += f" ({detail})"
    print("\n" + line)
    assert ok, line


def _rand(shape, seed, scale=1.0):
    return (np.random.default_rng(seed).standard_normal(shape)
            .astype(np.float32) * scale)


# ---------------------------------------------------------------------------
# criterion 1: gradient suite

def test_acceptance_gradient_suite():
    t0 = time.time()
    rng = np.random.default_rng(0)
    worst = 0.0

    checks = [
        ("conv2d", lambda a, b: ops.conv2d(a, b, padding=1),
         [(1, 3, 6, 6), (4, 3, 3, 3)]),
        ("depthwise_conv2d", lambda a, b: ops.depthwise_conv2d(a, b, padding=1),
         [(1, 3, 5, 5), (3, 3, 3)]),
        ("maxpool2x", lambda a: ops.maxpool2x(a), [(1, 2, 6, 6)]),
        ("bilinear_upsample2x", lambda a: ops.bilinear_upsample2x(a),
         [(1, 2, 4, 4)]),
        ("layer_norm", lambda a, g, b: ops.layer_norm(a, g, b),
         [(3, 7), (7,), (7,)]),
        ("group_norm", lambda a, g, b: ops.group_norm(a, g, b, 2),
         [(2, 4, 5, 5), (4,), (4,)]),
        ("window_attention",
         lambda t, wq, bq, wk, bk, wv, bv, wo, bo: ops.window_attention(
             t, wq, bq, wk, bk, wv, bv, wo, bo, num_heads=2),
         [(3, 4, 8)] + [(8, 8), (8,)] * 4),
        ("selective_scan",
         lambda x, dl, A, B, C, D: ops.selective_scan(
             x, dl.sigmoid() + Tensor(np.full(dl.shape, 0.01)), A, B, C, D),
         [(6, 3), (6, 3), (3, 2), (6, 2), (6, 2), (3,)]),
        ("softmax", lambda a: a.softmax(axis=-1), [(4, 6)]),
    ]
    for name, fn, shapes in checks:
        rep = grad_check(fn, [Tensor(_rand(s, i + 10), name=f"{name}_{i}")
                              for i, s in enumerate(shapes)], rng=rng)
        rep.assert_below(1e-4)
        worst = max(worst, rep.max_rel_error)

    # end-to-end backbones at 2e-3 on a reduced instance
    for kind in ("cnn", "attn", "ssm"):
        net = backbones.build(kind, 16, 4, 4, seed=3)
        for p in net.params.values():
            p.data = p.data.astype(np.float64)
        x = _rand((1, 1, 16, 16), 4, scale=0.5)
        proj = np.random.default_rng(5).standard_normal((1, 4, 16, 16))
        net.zero_grad()
        (net.forward(x) * Tensor(proj)).sum().backward()
        names = sorted(net.params)
        for idx in rng.choice(len(names), size=8, replace=False):
            p = net.params[names[idx]]
            flat = p.data.reshape(-1)
            c = int(rng.integers(flat.size))
            a = p.grad.reshape(-1)[c]
            for eps in (1e-4, 1e-5):
                orig = flat[c]
                flat[c] = orig + eps
                fp = float((net.forward(x).data * proj).sum())
                flat[c] = orig - eps
                fm = float((net.forward(x).data * proj).sum())
                flat[c] = orig
                num = (fp - fm) / (2 * eps)
                err = abs(a - num) / max(1e-3, abs(a) + abs(num))
                if err < 2e-3:
                    break
            assert err < 2e-3, f"{kind} {names[idx]}[{c}]: {a} vs {num}"

    dt = time.time() - t0
    _report("gradient suite (ops at 1e-4, backbones at 2e-3)",
            dt < 300, f"worst op rel err {worst:.2e}, {dt:.0f}s")


# ---------------------------------------------------------------------------
# criterion 2: oracle suite

def test_acceptance_oracle_suite():
    failures = []
    for seed in range(20):
        rng = np.random.default_rng(seed)

        x = _rand((1, 2, 6, 5), seed)
        k = _rand((3, 2, 3, 3), seed + 1)
        kb = _rand((3,), seed + 50)
        got = ops.conv2d(Tensor(x), Tensor(k), Tensor(kb), padding=1).data
        if not np.allclose(got, conv2d_ref(x, k, kb, padding=1), atol=1e-5):
            failures.append(f"conv2d seed {seed}")

        tok = _rand((2, 4, 8), seed + 2)
        ws = [_rand((8, 8), seed + 3 + i) for i in range(4)]
        bs = [_rand((8,), seed + 7 + i) for i in range(4)]
        wb = [t for pair in zip(ws, bs) for t in pair]
        got = ops.window_attention(Tensor(tok), *map(Tensor, wb),
                                   num_heads=2).data
        want = attention_ref(tok, *wb, 2)
        if not np.allclose(got, want, atol=1e-5):
            failures.append(f"window_attention seed {seed}")

        L, dn, ds = 7, 3, 2
        xs = _rand((L, dn), seed + 11)
        dl = np.abs(_rand((L, dn), seed + 12)) * 0.3 + 0.01
        A = -np.abs(_rand((dn, ds), seed + 13)) - 0.1
        B = _rand((L, ds), seed + 14)
        C = _rand((L, ds), seed + 15)
        D = _rand((dn,), seed + 16)
        got = ops.selective_scan(Tensor(xs), Tensor(dl), Tensor(A),
                                 Tensor(B), Tensor(C), Tensor(D)).data
        want = selective_scan_ref(xs, dl, A, B, C, D)
        if not np.allclose(got, want, atol=1e-5):
            failures.append(f"selective_scan seed {seed}")

        probs = rng.dirichlet(np.ones(4), size=(2, 6, 5)) \
            .transpose(0, 3, 1, 2).astype(np.float32)
        scrib = rng.integers(0, 4, (2, 6, 5)).astype(np.int64)
        scrib[rng.random((2, 6, 5)) > 0.4] = UNLABELED
        got = pce_loss(Tensor(probs), scrib).item()
        if abs(got - pce_ref(probs.astype(np.float64), scrib)) > 1e-5:
            failures.append(f"pce_loss seed {seed}")

        labels = rng.integers(0, 4, (2, 6, 5))
        pseudo = np.eye(4, dtype=np.float32)[labels].transpose(0, 3, 1, 2)
        got = dice_loss(Tensor(probs), pseudo).item()
        if abs(got - dice_ref(probs.astype(np.float64),
                              pseudo.astype(np.float64))) > 1e-5:
            failures.append(f"dice_loss seed {seed}")

        pred = rng.integers(0, 4, (10, 9))
        gt = rng.integers(0, 4, (10, 9))
        for kk in range(4):
            if not np.allclose(metrics.confusion_metrics(pred, gt, kk),
                               confusion_ref(pred, gt, kk), atol=1e-12):
                failures.append(f"confusion seed {seed} class {kk}")
            got = metrics.hd95_asd(pred, gt, kk)
            want = hd95_asd_ref(pred, gt, kk)
            if not np.allclose(got, want, atol=1e-9):
                failures.append(f"hd95_asd seed {seed} class {kk}")

    _report("oracle suite (7 ops x 20 seeded cases)", not failures,
            "; ".join(failures[:5]) if failures else "all matched")


# ---------------------------------------------------------------------------
# criterion 3: mixer suite

def test_acceptance_mixer_suite():
    rng = np.random.default_rng(0)
    ok = True
    detail = "all exact"
    try:
        for _ in range(100):
            w = sample_mix_weights(rng)
            a, b, g = w.as_tuple()
            assert min(a, b, g) >= 0 and a + b + g == pytest.approx(1.0,
                                                                    abs=1e-12)
        maps = [rng.dirichlet(np.ones(4), size=(6, 6)).transpose(2, 0, 1)
                .astype(np.float32) for _ in range(3)]
        # permutation symmetry
        np.testing.assert_array_equal(
            mix_pseudo(maps[0], maps[1], maps[2], MixWeights(0.5, 0.3, 0.2)),
            mix_pseudo(maps[2], maps[0], maps[1], MixWeights(0.2, 0.5, 0.3)))
        # degenerate-weight reduction
        np.testing.assert_array_equal(
            mix_pseudo(maps[0], maps[1], maps[2], MixWeights(0.0, 1.0, 0.0)),
            np.eye(4, dtype=np.float32)[maps[1].argmax(0)]
            .transpose(2, 0, 1))
        # agreement idempotence
        hard = np.eye(4, dtype=np.float32)[rng.integers(0, 4, (6, 6))] \
            .transpose(2, 0, 1)
        np.testing.assert_array_equal(
            mix_pseudo(hard, hard, hard, sample_mix_weights(rng)), hard)
        # deterministic lowest-index tie-break
        u = np.full((4, 3, 3), 0.25, dtype=np.float32)
        out = mix_pseudo(u, u, u, MixWeights(0.3, 0.3, 0.4))
        np.testing.assert_array_equal(out[0], np.ones((3, 3),
                                                      dtype=np.float32))
    except AssertionError as e:
        ok, detail = False, str(e).splitlines()[0]
    _report("mixer suite (simplex/symmetry/degenerate/idempotent/tie-break)",
            ok, detail)


# ---------------------------------------------------------------------------
# criterion 4: overfit smoke

def test_acceptance_overfit_smoke(tmp_path):
    t0 = time.time()
    root = tmp_path / "data"
    # 6 samples -> exactly 4 train images; batch 4 = the whole train set
    index = data.gen_synthetic(6, 64, 0, root, n_val=1, n_test=1)
    for sid in index.splits["train"]:
        lab = data.read_pgm(root / "labels" / f"{sid}.pgm")
        data.write_pgm(root / "scribbles" / f"{sid}.pgm", lab)  # dense

    cfg = TrainConfig(iterations=500, batch_size=4, val_every=100,
                      image_size=64, width=16, seed=0)
    out = trainer.fit(cfg, root, tmp_path / "run")
    nets = trainer.load_networks(out / "best.ckpt")

    dices = []
    for net in nets:
        per_sample = []
        for sid in index.splits["train"]:
            img, gt = data.load_sample(index, sid, "val", 64)
            pred = net.forward(img[None]).data.argmax(1)[0]
            per_sample.append(np.mean(
                [metrics.confusion_metrics(pred, gt, k)[0]
                 for k in (1, 2, 3) if (gt == k).any() or (pred == k).any()]))
        dices.append(float(np.mean(per_sample)))

    dt = time.time() - t0
    ok = all(d > 0.95 for d in dices) and dt < 600
    _report("overfit smoke (500 iters, dense labels, per-net dice > 0.95)",
            ok, "per-net dice " + ", ".join(f"{d:.4f}" for d in dices) +
            f", {dt:.0f}s")


# ---------------------------------------------------------------------------
# criterion 5: directional reproduction

@pytest.fixture(scope="module")
def directional_corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("directional") / "data"
    data.gen_synthetic(260, 64, 0, root, n_val=10, n_test=50, coverage=0.5)
    return root


def _mean_test_dice(run_dir: Path) -> float:
    rows = (run_dir / "report.csv").read_text().splitlines()
    last = rows[-1].split(",")
    assert last[0] == "mean" and last[1] == "mean"
    return float(last[2])


def test_acceptance_directional(directional_corpus, tmp_path):
    t0 = time.time()
    cross, base = [], []
    for seed in range(3):
        cfg = TrainConfig(iterations=2000, batch_size=4, val_every=200,
                          image_size=64, width=16, seed=seed)
        out = trainer.fit(cfg, directional_corpus,
                          tmp_path / f"cross_s{seed}")
        cross.append(_mean_test_dice(out))
        out = trainer.fit_baseline_pce(cfg, directional_corpus,
                                       tmp_path / f"base_s{seed}")
        base.append(_mean_test_dice(out))

    margin = float(np.median(cross) - np.median(base))
    dt = time.time() - t0
    ok = margin >= 0.02 and dt < 7200
    _report("directional (triple ensemble beats pCE baseline by >= 0.02)",
            ok, f"cross median {np.median(cross):.4f} "
            f"(runs {[f'{d:.4f}' for d in cross]}), "
            f"baseline median {np.median(base):.4f} "
            f"(runs {[f'{d:.4f}' for d in base]}), "
            f"margin {margin:.4f}, {dt / 60:.0f} min")


# ---------------------------------------------------------------------------
# criterion 6: ablation expressibility

def test_acceptance_ablation(tmp_path):
    root = tmp_path / "data"
    data.gen_synthetic(30, 64, 1, root, n_val=2, n_test=6)
    triples = [("cnn", "cnn", "cnn"), ("attn", "attn", "attn"),
               ("ssm", "ssm", "ssm"), ("cnn", "attn", "ssm")]
    headers = set()
    results = {}
    for triple in triples:
        cfg = TrainConfig(iterations=200, batch_size=4, val_every=100,
                          image_size=64, width=16, seed=0, backbones=triple)
        out = trainer.fit(cfg, root, tmp_path / "_".join(triple))
        rows = (out / "report.csv").read_text().splitlines()
        headers.add(rows[0])
        results["+".join(triple)] = _mean_test_dice(out)
    ok = len(headers) == 1 and len(results) == 4
    _report("ablation expressibility (4 backbone triples, 200 iters)",
            ok, ", ".join(f"{k}={v:.4f}" for k, v in results.items()))


# ---------------------------------------------------------------------------
# criterion 7: determinism

def test_acceptance_determinism(tmp_path):
    root = tmp_path / "data"
    data.gen_synthetic(12, 32, 2, root)
    cfg = TrainConfig(iterations=30, batch_size=4, val_every=10,
                      image_size=32, width=8, seed=0)
    a = trainer.fit(cfg, root, tmp_path / "a")
    b = trainer.fit(cfg, root, tmp_path / "b")
    same_loss = (a / "loss.csv").read_bytes() == (b / "loss.csv").read_bytes()
    same_ckpt = (a / "best.ckpt").read_bytes() == (b / "best.ckpt").read_bytes()
    _report("determinism (byte-identical loss.csv and best.ckpt)",
            same_loss and same_ckpt,
            f"loss.csv identical={same_loss}, best.ckpt identical={same_ckpt}")


# ---------------------------------------------------------------------------
# criterion 8: scribble subset property

def test_acceptance_scribble_subset():
    rng = np.random.default_rng(0)
    bad = 0
    for trial in range(1000):
        size = int(rng.integers(16, 48))
        lab = np.zeros((size, size), dtype=np.uint8)
        n_blobs = int(rng.integers(1, 4))
        for cls in rng.choice([1, 2, 3], size=n_blobs, replace=False):
            cy, cx = rng.integers(4, size - 4, 2)
            r = int(rng.integers(2, max(3, size // 5)))
            yy, xx = np.ogrid[:size, :size]
            lab[(yy - cy) ** 2 + (xx - cx) ** 2 <= r * r] = cls
        coverage = float(rng.uniform(0.05, 1.0))
        scrib = data.scribblify(lab, coverage, seed=int(rng.integers(2**31)))
        labeled = scrib != UNLABELED
        if not (scrib[labeled] == lab[labeled]).all():
            bad += 1
            continue
        present = set(np.unique(lab))
        if not all((scrib == c).sum() >= 1 for c in present):
            bad += 1
    _report("scribble subset (1000 random mask/seed/coverage triples)",
            bad == 0, f"{bad} violations")
