"""Central finite-difference gradient checking."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor
from .errors import GradCheckError, NumericalError, ParameterError


@dataclass
class GradCheckReport:
    max_rel_error: float
    tol: float
    per_param: dict = field(default_factory=dict)
    worst: tuple | None = None
    analytic: dict = field(default_factory=dict)
    numeric: dict = field(default_factory=dict)

    @property
    def passed(self):
        return self.max_rel_error <= self.tol

    def __str__(self):
        status = "pass" if self.passed else "FAIL"
        return f"grad_check {status}: max rel error {self.max_rel_error:.3e} (tol {self.tol:.1e}), worst at {self.worst}"


def _named(params):
    if isinstance(params, Tensor):
        return {"param": params}
    if isinstance(params, dict):
        return dict(params)
    return {f"param{i}": p for i, p in enumerate(params)}


def _evaluate(f, where):
    try:
        value = f()
    except NumericalError as exc:
        raise GradCheckError(f"objective is not finite at {where}: {exc}") from exc
    v = float(value.data if isinstance(value, Tensor) else value)
    if not np.isfinite(v):
        raise GradCheckError(f"objective is not finite at {where}")
    return v


def grad_check(f, params, eps=1e-5, tol=1e-6):
    """Compare backprop gradients of ``f()`` with central differences.

    ``f`` takes no arguments and rebuilds its output from ``params`` on every
    call. ``params`` is a Tensor, a sequence of Tensors or a name -> Tensor
    mapping; each is perturbed in place one coordinate at a time and restored.

    The error is ``max|g_a - g_n| / max(1e-8, max|g_a| + max|g_n|)`` with the
    maxima taken over every checked coordinate, so a tensor whose gradient is
    identically zero (a key bias under softmax) is judged against the scale of
    the whole objective instead of its own rounding noise.
    """
    if eps <= 0:
        raise ParameterError(f"eps must be positive, got {eps}")
    named = _named(params)
    for p in named.values():
        p.grad = None

    out = f()
    if not isinstance(out, Tensor) or out.data.size != 1:
        raise GradCheckError("objective must return a scalar Tensor")
    _evaluate(lambda: out, "the unperturbed point")
    if out.requires_grad:
        out.backward()

    analytic, numeric = {}, {}
    for name, p in named.items():
        analytic[name] = np.zeros_like(p.data) if p.grad is None else p.grad.copy()
        gn = np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        for k in range(flat.size):
            coord = [int(i) for i in np.unravel_index(k, p.shape)]
            orig = flat[k]
            flat[k] = orig + eps
            try:
                fp = _evaluate(f, f"{name}{coord} + eps")
                flat[k] = orig - eps
                fm = _evaluate(f, f"{name}{coord} - eps")
            finally:
                flat[k] = orig
            gn.reshape(-1)[k] = (fp - fm) / (2.0 * eps)
        numeric[name] = gn

    def peak(grads):
        return max((float(np.max(np.abs(g), initial=0.0)) for g in grads.values()), default=0.0)

    scale = max(1e-8, peak(analytic) + peak(numeric))
    report = GradCheckReport(max_rel_error=0.0, tol=tol, analytic=analytic, numeric=numeric)
    for name in named:
        diff = np.abs(analytic[name] - numeric[name])
        rel = float(diff.max(initial=0.0)) / scale
        report.per_param[name] = rel
        if rel >= report.max_rel_error:
            report.max_rel_error = rel
            worst = np.unravel_index(int(diff.argmax()), diff.shape) if diff.size else ()
            report.worst = (name, tuple(int(i) for i in worst))
    for p in named.values():
        p.grad = None
    return report
