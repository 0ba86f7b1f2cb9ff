"""Central finite-difference checking of tape gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from .errors import OracleError
from .tensor import Tensor


@dataclass
class GradcheckReport:
    max_rel_errors: List[float]
    tolerance: float
    names: List[str] = field(default_factory=list)

    @property
    def max_rel_error(self) -> float:
        return max(self.max_rel_errors, default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tolerance


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> np.ndarray:
    """Elementwise ``|a - n| / max(|a|, |n|, floor)``.

    The floor keeps entries whose true gradient is ~0 from turning
    finite-difference rounding noise into a huge ratio.
    """
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom


def numeric_grad(loss_fn: Callable[[], Tensor], param: Tensor, step: float) -> np.ndarray:
    if not param.data.flags.c_contiguous:
        param.data = np.ascontiguousarray(param.data)
    grad = np.zeros_like(param.data, dtype=np.float64)
    flat = param.data.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        up = float(loss_fn().data)
        flat[i] = orig - step
        down = float(loss_fn().data)
        flat[i] = orig
        grad.reshape(-1)[i] = (up - down) / (2.0 * step)
    return grad


def finite_diff_check(
    loss_fn: Callable[[], Tensor],
    params: Sequence[Tensor],
    step: float = 1e-5,
    tolerance: float = 1e-4,
    names: Sequence[str] = (),
    reference: Optional[Sequence[Tuple[Callable[[], Tensor], Sequence[float]]]] = None,
) -> GradcheckReport:
    """Compare tape gradients of ``loss_fn()`` against central differences.

    ``loss_fn`` is called with no arguments and must rebuild the graph from
    the current parameter values each time.

    By default the reference gradient is the finite-difference derivative
    of ``loss_fn`` itself. Losses routed through gradient reversal have a
    tape gradient that is deliberately not the derivative of the forward
    value; for those pass ``reference`` as ``[(term_fn, scales), ...]`` and
    the reference for parameter ``i`` becomes
    ``sum(scales[i] * numeric_grad(term_fn, params[i]))``.
    """
    first, second = loss_fn(), loss_fn()
    if float(first.data) != float(second.data):
        raise OracleError(f"loss_fn is not deterministic ({float(first.data)!r} vs {float(second.data)!r})")
    if reference is None:
        reference = [(loss_fn, [1.0] * len(params))]

    for p in params:
        p.grad = None
    second.backward()
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]

    errors = []
    for i, (p, a) in enumerate(zip(params, analytic)):
        n = sum(scales[i] * numeric_grad(term, p, step) for term, scales in reference if scales[i] != 0)
        n = np.zeros_like(a) if isinstance(n, int) else n
        errors.append(float(relative_error(a, n).max()) if a.size else 0.0)
    for p in params:
        p.grad = None
    return GradcheckReport(errors, tolerance, list(names))
