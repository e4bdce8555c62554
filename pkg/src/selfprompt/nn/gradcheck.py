"""Central finite-difference check of the depth-fused adapter gradients."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from selfprompt.nn.adapters import PARAM_NAMES, AdapterParams, dfused_backward, dfused_forward

# below this magnitude an entry is compared absolutely; central differences at
# h=1e-5 carry ~1e-10 of rounding noise, which swamps tiny entries
REL_FLOOR = 1e-3


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = REL_FLOOR) -> float:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom))


def numeric_grad(f, arr: np.ndarray, h: float) -> np.ndarray:
    """Central differences of scalar ``f()`` w.r.t. every entry of ``arr`` (mutated in place)."""
    grad = np.empty_like(arr)
    it = np.nditer(arr, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        orig = arr[idx]
        arr[idx] = orig + h
        plus = f()
        arr[idx] = orig - h
        minus = f()
        arr[idx] = orig
        grad[idx] = (plus - minus) / (2.0 * h)
    return grad


@dataclass
class GradcheckReport:
    seed: int
    shape: tuple[int, int, int]
    errors: dict[str, float] = field(default_factory=dict)
    tolerance: float = 1e-6

    @property
    def max_error(self) -> float:
        return max(self.errors.values())

    @property
    def passed(self) -> bool:
        return self.max_error < self.tolerance

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "shape": list(self.shape),
            "tolerance": self.tolerance,
            "max_rel_error": self.max_error,
            "errors": dict(self.errors),
            "passed": self.passed,
        }


def gradcheck_dfused(seed: int = 0, shape: tuple[int, int, int] = (3, 5, 8), h: float = 1e-5,
                     perturb: bool = False) -> GradcheckReport:
    """Compare analytic and numeric gradients on a seeded random instance.

    ``perturb`` skews the weights used by the analytic pass only; it exists so
    the failure path can be exercised.
    """
    rng = np.random.default_rng(seed)
    d, n, c = shape
    x = rng.uniform(-1.0, 1.0, shape)
    params = AdapterParams.init(c, d, rng, zero_up=False, scale=0.5)
    upstream = rng.uniform(-1.0, 1.0, shape)

    analytic_params = params
    if perturb:
        analytic_params = AdapterParams(**{k: v * 1.01 for k, v in params.as_dict().items()})
    grad_x, grads = dfused_backward(x, analytic_params, upstream)

    def loss() -> float:
        return float(np.sum(upstream * dfused_forward(x, params)))

    report = GradcheckReport(seed, shape)
    report.errors["x"] = relative_error(grad_x, numeric_grad(loss, x, h))
    for name in PARAM_NAMES:
        report.errors[name] = relative_error(grads[name], numeric_grad(loss, getattr(params, name), h))
    return report
