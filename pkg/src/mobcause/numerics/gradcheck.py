from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .params import ParamStore, backward
from .tensor import Tensor


@dataclass
class GradCheckReport:
    errors: dict[str, float] = field(default_factory=dict)
    checked: dict[str, int] = field(default_factory=dict)

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    def passed(self, tol: float) -> bool:
        return self.max_error < tol


def gradient_check(forward: Callable[[], Tensor], params: ParamStore, eps: float = 1e-4,
                   max_entries: int | None = 40, seed: int = 0,
                   names: list[str] | None = None) -> GradCheckReport:
    """Compare analytic gradients against central differences.

    The error for a parameter is the largest per-entry discrepancy divided by
    the largest gradient magnitude seen for that parameter (both routes), so
    entries whose true gradient is ~0 do not blow the ratio up.  At most
    ``max_entries`` randomly chosen entries are probed per parameter.
    """
    analytic = {k: v.copy() for k, v in backward(forward(), params).items()}
    rng = np.random.default_rng(seed)
    report = GradCheckReport()
    for name in names or params.names():
        p = params[name]
        flat = p.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = rng.choice(flat.size, size=max_entries, replace=False)
        num = np.empty(idx.size)
        for k, j in enumerate(idx):
            orig = flat[j]
            flat[j] = orig + eps
            up = forward().item()
            flat[j] = orig - eps
            down = forward().item()
            flat[j] = orig
            num[k] = (up - down) / (2.0 * eps)
        ana = analytic[name].reshape(-1)[idx]
        scale = max(np.abs(ana).max(initial=0.0), np.abs(num).max(initial=0.0), 1e-8)
        report.errors[name] = float(np.abs(ana - num).max(initial=0.0) / scale)
        report.checked[name] = int(idx.size)
    return report
