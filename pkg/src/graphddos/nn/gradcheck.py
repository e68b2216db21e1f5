"""Finite-difference verification of analytic gradients.

Central differences with step h around the current parameter values. The
loss callable must be deterministic: it is run twice up front and any
bitwise difference in loss or gradients aborts the check, because a noisy
loss would make the comparison meaningless rather than merely loose.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, Optional, Tuple

import numpy as np

from ..errors import CheckInvalidError
from .params import ParameterBag
from .rng import RngStream

DEFAULT_H = 1e-4
DEFAULT_ABS_FLOOR = 1e-6


def max_rel_err(approx: np.ndarray, exact: np.ndarray,
                abs_floor: float = DEFAULT_ABS_FLOOR) -> float:
    """Largest elementwise relative error, floored so near-zero pairs compare absolutely."""
    approx = np.asarray(approx, dtype=np.float64)
    exact = np.asarray(exact, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(approx), np.abs(exact)), abs_floor)
    if approx.size == 0:
        return 0.0
    return float(np.max(np.abs(approx - exact) / denom))


def fd_gradient(f: Callable[[np.ndarray], float], x: np.ndarray,
                h: float = DEFAULT_H) -> np.ndarray:
    """Numeric gradient of scalar f at x by central differences."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.ravel()
    gflat = grad.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = float(f(x))
        flat[i] = orig - h
        fm = float(f(x))
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad


@dataclass
class GradCheckReport:
    max_rel_err: float
    worst_param: str
    worst_index: Tuple[int, ...]
    entries_checked: int
    per_param: Dict[str, float] = field(default_factory=dict)

    def __str__(self) -> str:
        return (f"grad check: max rel err {self.max_rel_err:.3e} at "
                f"{self.worst_param}{list(self.worst_index)} "
                f"({self.entries_checked} entries)")


def check_gradients(
    loss_and_grad: Callable[[], float],
    bag: ParameterBag,
    h: float = DEFAULT_H,
    abs_floor: float = DEFAULT_ABS_FLOOR,
    max_entries_per_param: Optional[int] = None,
    rng: Optional[RngStream] = None,
) -> GradCheckReport:
    """Compare analytic parameter gradients against central differences.

    loss_and_grad must zero the bag's grads, run forward and backward from
    the current parameter values, and return the scalar loss. When
    max_entries_per_param is set, that many entries of each parameter are
    sampled (rng required); otherwise every entry is checked.
    """
    loss_a = loss_and_grad()
    analytic = {name: p.grad.copy() for name, p in bag.items()}
    loss_b = loss_and_grad()
    if loss_a != loss_b:
        raise CheckInvalidError(
            f"loss not deterministic: {loss_a!r} vs {loss_b!r}; "
            "fix the model's noise sources before checking gradients"
        )
    for name, p in bag.items():
        if not np.array_equal(analytic[name], p.grad):
            raise CheckInvalidError(f"gradient of {name!r} not deterministic")
    if max_entries_per_param is not None and rng is None:
        raise CheckInvalidError("sampled checking requires an rng")

    worst = 0.0
    worst_param = ""
    worst_index: Tuple[int, ...] = ()
    per_param: Dict[str, float] = {}
    checked = 0
    for name, p in bag.items():
        flat = p.value.ravel()
        n = flat.size
        if max_entries_per_param is None or n <= max_entries_per_param:
            picks = np.arange(n)
        else:
            picks = rng.choice(n, size=max_entries_per_param, replace=False)
        an_flat = analytic[name].ravel()
        local_worst = 0.0
        for i in picks:
            i = int(i)
            orig = flat[i]
            flat[i] = orig + h
            fp = loss_and_grad()
            flat[i] = orig - h
            fm = loss_and_grad()
            flat[i] = orig
            fd = (fp - fm) / (2.0 * h)
            an = an_flat[i]
            rel = abs(fd - an) / max(abs(fd), abs(an), abs_floor)
            checked += 1
            if rel > local_worst:
                local_worst = rel
            if rel > worst:
                worst = rel
                worst_param = name
                worst_index = np.unravel_index(i, p.value.shape)
        per_param[name] = local_worst
    # Leave the bag holding the unperturbed analytic gradients.
    loss_and_grad()
    return GradCheckReport(
        max_rel_err=worst,
        worst_param=worst_param,
        worst_index=tuple(int(v) for v in worst_index),
        entries_checked=checked,
        per_param=per_param,
    )
