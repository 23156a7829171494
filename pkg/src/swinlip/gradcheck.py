"""Central finite-difference gradient checking."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tape, Tensor, branch_log
from .errors import NondeterminismError, TapeError

# denominators below this are clamped, so near-zero gradients are judged
# on absolute error at this scale
REL_FLOOR = 1e-6


@dataclass
class GradCheckReport:
    max_error: float
    mean_error: float
    tolerance: float
    checked: int
    worst: str = ""
    skipped: int = 0

    @property
    def passed(self):
        return self.checked > 0 and self.max_error < self.tolerance

    def __str__(self):
        verdict = "PASS" if self.passed else "FAIL"
        skipped = f" skipped_at_kinks={self.skipped}" if self.skipped else ""
        return (f"{verdict} max_rel={self.max_error:.3e} mean_rel={self.mean_error:.3e} "
                f"n={self.checked}{skipped} tol={self.tolerance:g} {self.worst}").rstrip()


def relative_error(a, n, floor=REL_FLOOR):
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


def finite_diff_check(f, inputs, step=1e-4, tolerance=1e-4, max_entries=None,
                      rng=None, floor=REL_FLOOR):
    """Compare tape gradients of scalar ``f(*inputs)`` with central differences.

    ``inputs`` is a tensor or a list of tensors; each is marked trainable for
    the duration of the check.  ``max_entries`` limits how many coordinates per
    tensor are perturbed (chosen with ``rng``); None checks all of them.

    A coordinate whose ``+step`` or ``-step`` evaluation flips a branch of a
    piecewise op (ReLU sign, pooling argmax) straddles a kink, where central
    differences say nothing about the derivative; it is skipped and counted.
    """
    if isinstance(inputs, Tensor):
        inputs = [inputs]
    inputs = list(inputs)
    saved = [t.requires_grad for t in inputs]
    for t in inputs:
        t.requires_grad = True
    try:
        with Tape() as tape:
            loss = f(*inputs)
        if loss.size != 1:
            raise TapeError(f"finite_diff_check needs a scalar function, got {loss.shape}")
        tape.backward(loss)
        analytic = [tape.grad(t).copy() for t in inputs]
        base = float(loss.data)
        again, branches = _evaluate(f, inputs)
        if base != again:
            raise NondeterminismError(
                f"two forward passes disagree ({base!r} vs {again!r}); "
                "disable dropout and put norms in eval mode")

        errors = []
        skipped = 0
        worst, worst_where = -1.0, ""
        for ti, t in enumerate(inputs):
            flat = t.data.reshape(-1)
            idx = np.arange(flat.size)
            if max_entries is not None and flat.size > max_entries:
                idx = np.sort((rng.permutation(flat.size) if rng is not None
                               else np.arange(flat.size))[:max_entries])
            ga = analytic[ti].reshape(-1)
            for i in idx:
                orig = flat[i]
                flat[i] = orig + step
                fp, bp = _evaluate(f, inputs)
                flat[i] = orig - step
                fm, bm = _evaluate(f, inputs)
                flat[i] = orig
                if bp != branches or bm != branches:
                    skipped += 1
                    continue
                num = (fp - fm) / (2.0 * step)
                err = float(relative_error(ga[i], num, floor))
                errors.append(err)
                if err > worst:
                    label = t.name or f"input{ti}"
                    worst, worst_where = err, f"worst={label}[{int(i)}] analytic={ga[i]:.6e} numeric={num:.6e}"
    finally:
        for t, s in zip(inputs, saved):
            t.requires_grad = s
    if not errors:
        return GradCheckReport(np.inf, np.inf, tolerance, 0, "no coordinate could be checked", skipped)
    errors = np.asarray(errors)
    return GradCheckReport(float(errors.max()), float(errors.mean()), tolerance, errors.size,
                           worst_where, skipped)


def _evaluate(f, inputs):
    with branch_log() as branches:
        value = float(f(*inputs).data)
    return value, branches
