"""Tour of the tensor library: reverse-mode autodiff and the core ops.

Everything in triseg runs on a small tape-based autodiff engine over
float32 numpy arrays.  This script builds a tiny computation, inspects
gradients, and cross-checks one of them with finite differences.
"""
import numpy as np

from triseg import ops
from triseg.gradcheck import grad_check
from triseg.tensor import Tensor, softmax_channels

rng = np.random.default_rng(0)

# --- a tiny expression graph ------------------------------------------------
x = Tensor(rng.standard_normal((2, 3)).astype(np.float32),
           requires_grad=True, name="x")
w = Tensor(rng.standard_normal((3, 4)).astype(np.float32),
           requires_grad=True, name="w")
y = (x @ w).relu().sum()
y.backward()
print("scalar output:", y.item())
print("dL/dx:\n", x.grad)

# --- the segmentation-relevant ops ------------------------------------------
img = Tensor(rng.standard_normal((1, 3, 16, 16)).astype(np.float32),
             requires_grad=True)
k = Tensor(rng.standard_normal((8, 3, 3, 3)).astype(np.float32) * 0.2,
           requires_grad=True)
feat = ops.conv2d(img, k, padding=1)
pooled = ops.maxpool2x(feat.relu())
up = ops.bilinear_upsample2x(pooled)
print("conv->pool->upsample shapes:",
      feat.data.shape, pooled.data.shape, up.data.shape)

probs = softmax_channels(feat)
print("softmax over channels sums to one:",
      np.allclose(probs.data.sum(axis=1), 1.0, atol=1e-6))

# --- independent gradient verification --------------------------------------
report = grad_check(
    lambda a, b: ops.conv2d(a, b, padding=1),
    [Tensor(rng.standard_normal((1, 2, 6, 6)).astype(np.float32), name="img"),
     Tensor(rng.standard_normal((3, 2, 3, 3)).astype(np.float32), name="k")],
    rng=rng)
print(f"conv2d finite-difference check: worst relative error "
      f"{report.max_rel_error:.2e} ({report.worst_input})")
report.assert_below(1e-4)
print("gradient check passed at 1e-4")
