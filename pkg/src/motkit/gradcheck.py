"""Central finite-difference verification of analytic gradients.

``check_gradient`` is the generic checker; ``run_all_checks`` drives the
named kernel registry used by the ``gradcheck`` CLI command and the
acceptance suite.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

DEFAULT_STEP = 1e-5
DEFAULT_TOL = 1e-5
# Relative error denominator floor; below this magnitude the comparison is
# effectively absolute (central differences bottom out near 1e-10).
REL_FLOOR = 1e-3


def central_difference(f: Callable[[np.ndarray], float], x: np.ndarray, step: float = DEFAULT_STEP) -> np.ndarray:
    """Numeric gradient of scalar-valued ``f`` at ``x``, one coordinate at a time."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = grad.ravel()
    xf = x.ravel()
    for i in range(xf.size):
        orig = xf[i]
        xf[i] = orig + step
        hi = f(x)
        xf[i] = orig - step
        lo = f(x)
        xf[i] = orig
        flat[i] = (hi - lo) / (2.0 * step)
    return grad


def max_relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = REL_FLOOR) -> float:
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0


def check_gradient(
    fn: Callable[[np.ndarray], tuple[float, np.ndarray]],
    x0: np.ndarray,
    step: float = DEFAULT_STEP,
) -> float:
    """Max relative error between ``fn``'s analytic gradient and finite differences.

    ``fn`` maps a parameter array to ``(loss, grad)``.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    _, analytic = fn(x0.copy())
    numeric = central_difference(lambda x: fn(x)[0], x0.copy(), step=step)
    return max_relative_error(analytic, numeric)


@dataclass
class CheckResult:
    name: str
    trials: int
    max_rel_err: float
    tol: float

    @property
    def passed(self) -> bool:
        return self.max_rel_err <= self.tol


def _check_focal(rng: np.random.Generator) -> float:
    from .losses import focal_loss

    p = rng.uniform(0.02, 0.98)
    y = float(rng.integers(0, 2))

    def fn(x):
        loss, grad = focal_loss(float(x[0]), y)
        return loss, np.array([grad])

    return check_gradient(fn, np.array([p]))


def _check_smooth_l1(rng: np.random.Generator) -> float:
    from .losses import smooth_l1

    pred = rng.normal(0.0, 2.0, size=4)
    target = rng.normal(0.0, 2.0, size=4)

    def fn(x):
        return smooth_l1(x, target)

    return check_gradient(fn, pred)


def _check_iou_loss(rng: np.random.Generator) -> float:
    from .losses import iou_loss

    pred = rng.uniform(2.0, 20.0, size=4)
    target = rng.uniform(2.0, 20.0, size=4)

    def fn(x):
        return iou_loss(x, target)

    return check_gradient(fn, pred)


def _check_motion_loss(rng: np.random.Generator) -> float:
    """Composite visibility + gated regression loss through the MLP head."""
    from .mlp import MlpHead, flatten_params, motion_loss_on_params, unflatten_like

    head = MlpHead.initialize(input_dim=6, hidden_dim=4, rng=rng)
    feats = rng.normal(0.0, 1.0, size=6)
    v_star = float(rng.integers(0, 2))
    m_star = rng.normal(0.0, 0.5, size=4)
    theta0 = flatten_params(head)

    def fn(theta):
        return motion_loss_on_params(head, unflatten_like(head, theta), feats, v_star, m_star)

    return check_gradient(fn, theta0)


def _check_dense_loss(rng: np.random.Generator) -> float:
    """Dense map loss: focal over the visibility map + centerness-weighted IOU."""
    from .geometry import BBox
    from .response import GridGeometry, ResponseMaps, dense_match_loss

    geom = GridGeometry(origin_x=2.0, origin_y=2.0, cell_w=4.0, cell_h=4.0, width=4, height=4)
    v = rng.uniform(0.05, 0.95, size=(4, 4))
    p = rng.uniform(2.0, 12.0, size=(4, 4, 4))
    gt = BBox(3.0, 3.0, 8.0, 8.0)
    n_v = v.size

    def fn(x):
        maps = ResponseMaps(geom, x[:n_v].reshape(4, 4), x[n_v:].reshape(4, 4, 4))
        loss, dv, dp = dense_match_loss(maps, gt)
        return loss, np.concatenate([dv.ravel(), dp.ravel()])

    return check_gradient(fn, np.concatenate([v.ravel(), p.ravel()]))


def _check_mlp_backprop(rng: np.random.Generator) -> float:
    """Full backprop through a toy head against per-weight finite differences."""
    from .mlp import MlpHead, flatten_params, motion_loss_on_params, unflatten_like

    head = MlpHead.initialize(input_dim=2, hidden_dim=3, rng=rng)
    feats = rng.normal(0.0, 1.0, size=2)
    m_star = rng.normal(0.0, 0.5, size=4)
    theta0 = flatten_params(head)

    def fn(theta):
        return motion_loss_on_params(head, unflatten_like(head, theta), feats, 1.0, m_star)

    return check_gradient(fn, theta0)


KERNEL_CHECKS: dict[str, Callable[[np.random.Generator], float]] = {
    "focal": _check_focal,
    "smooth_l1": _check_smooth_l1,
    "iou_loss": _check_iou_loss,
    "motion_loss_composite": _check_motion_loss,
    "dense_loss_composite": _check_dense_loss,
    "mlp_backprop": _check_mlp_backprop,
}


def run_all_checks(trials: int = 100, seed: int = 0, tol: float = DEFAULT_TOL) -> list[CheckResult]:
    """Run every registered kernel check ``trials`` times with seeded inputs."""
    results = []
    for name, check in KERNEL_CHECKS.items():
        rng = np.random.default_rng(seed)
        worst = 0.0
        for _ in range(trials):
            worst = max(worst, check(rng))
        results.append(CheckResult(name=name, trials=trials, max_rel_err=worst, tol=tol))
    return results
