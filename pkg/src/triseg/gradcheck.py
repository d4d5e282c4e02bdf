"""Finite-difference verification of analytic gradients.

Checks run in float64 with central differences (step 1e-4).  The scalar under
test is a fixed random projection of the op output, so every output element
influences the check.
"""

from __future__ import annotations

import numpy as np

from .tensor import Tensor

__all__ = ["grad_check", "GradReport"]


class GradReport:
    """Per-input maximum relative errors of analytic vs numeric gradients."""

    def __init__(self):
        self.max_rel_error = 0.0
        self.per_input: dict[str, float] = {}
        self.worst_input: str | None = None

    def record(self, name: str, err: float):
        self.per_input[name] = err
        if err >= self.max_rel_error:
            self.max_rel_error = err
            self.worst_input = name

    def assert_below(self, tol: float):
        if self.max_rel_error > tol:
            raise AssertionError(
                f"gradient check failed: max rel error {self.max_rel_error:.3e} "
                f"> {tol:.1e} on input {self.worst_input!r} "
                f"(all: {self.per_input})")

    def __repr__(self):
        return f"GradReport(max_rel_error={self.max_rel_error:.3e}, worst={self.worst_input!r})"


def grad_check(fn, inputs: list[Tensor], eps: float = 1e-4,
               rng: np.random.Generator | None = None,
               max_coords_per_input: int | None = None) -> GradReport:
    """Compare analytic gradients of ``fn(*inputs)`` against central
    finite differences.

    ``fn`` maps Tensors to one output Tensor; inputs are promoted to float64
    and marked differentiable.  ``max_coords_per_input`` caps the number of
    randomly chosen coordinates probed per input (None = all), which keeps
    whole-network checks fast.
    """
    rng = rng or np.random.default_rng(0)
    inputs64 = [Tensor(t.data.astype(np.float64), requires_grad=True,
                       name=t.name or f"input{i}")
                for i, t in enumerate(inputs)]

    out0 = fn(*inputs64)
    proj = rng.standard_normal(out0.shape)

    def scalar():
        return float((fn(*inputs64).data * proj).sum())

    (fn(*inputs64) * Tensor(proj)).sum().backward()

    report = GradReport()
    for t in inputs64:
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        n = flat.size
        coords = np.arange(n)
        if max_coords_per_input is not None and n > max_coords_per_input:
            coords = rng.choice(n, size=max_coords_per_input, replace=False)
        worst = 0.0
        for c in coords:
            orig = flat[c]
            flat[c] = orig + eps
            fp = scalar()
            flat[c] = orig - eps
            fm = scalar()
            flat[c] = orig
            numeric = (fp - fm) / (2 * eps)
            a = analytic.reshape(-1)[c]
            err = abs(a - numeric) / max(1e-3, abs(a) + abs(numeric))
            worst = max(worst, err)
        report.record(t.name, worst)
    return report
