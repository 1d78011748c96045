"""Central finite-difference gradient checking.

The analytic reverse-mode gradients are compared against
(f(x+h) - f(x-h)) / 2h computed in float64. The loss closure must be
deterministic; this is verified by evaluating it twice.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor


@dataclass
class ParamCheck:
    name: str
    max_rel_err: float
    passed: bool


@dataclass
class GradCheckReport:
    rows: list[ParamCheck] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.rows)

    @property
    def worst(self) -> float:
        return max((r.max_rel_err for r in self.rows), default=0.0)

    def failures(self) -> list[ParamCheck]:
        return [r for r in self.rows if not r.passed]

    def summary(self) -> str:
        lines = [f"{'OK ' if r.passed else 'FAIL'} {r.name}: max rel err {r.max_rel_err:.3e}"
                 for r in self.rows]
        return "\n".join(lines)


def _rel_err(a: np.ndarray, n: np.ndarray) -> float:
    """Per-parameter relative error: worst deviation over the gradient scale.

    The scale floor keeps finite-difference noise on (near-)zero gradients
    from registering as disagreement; gradients below the floor are checked
    on that absolute scale instead.
    """
    scale = max(np.abs(a).max(initial=0.0), np.abs(n).max(initial=0.0), 1e-4)
    return float(np.abs(a - n).max(initial=0.0) / scale)


def finite_diff_check(f, params: dict[str, Tensor], h: float = 1e-6,
                      tol: float = 1e-6) -> GradCheckReport:
    """Check analytic gradients of scalar ``f()`` w.r.t. every param.

    ``f`` takes no arguments and closes over ``params``; it must rebuild
    the graph on each call. Parameter data is perturbed in place and
    restored. Raises if ``f`` is detected to be non-deterministic.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    base = f()
    again = f()
    if not np.array_equal(base.data, again.data):
        raise RuntimeError("finite_diff_check: f is not deterministic "
                           "(repeated evaluation mismatch)")
    for p in params.values():
        p.zero_grad()
    loss = f()
    loss.backward()
    analytic = {name: (np.zeros_like(p.data) if p.grad is None else p.grad.copy())
                for name, p in params.items()}

    report = GradCheckReport()
    for name, p in params.items():
        flat = p.data.reshape(-1)
        numeric = np.zeros_like(flat)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            f_plus = float(f().data)
            flat[i] = orig - h
            f_minus = float(f().data)
            flat[i] = orig
            numeric[i] = (f_plus - f_minus) / (2.0 * h)
        err = _rel_err(analytic[name].reshape(-1), numeric)
        report.rows.append(ParamCheck(name, err, err < tol))
    return report
