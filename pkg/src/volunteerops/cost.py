"""Piecewise-linear control cost, its convex conjugate, and the minimal selector.

All three functions are evaluated directly from a :class:`~volunteerops.params.DriftLadder`:

* ``cost_c``        c(x) on the drift domain [theta_0, theta_L]
* ``conjugate_phi`` phi(y) = sup_x {y x - c(x)}
* ``psi_min_argmax`` the smallest maximizer, a left-continuous step function

Branch boundaries are compared with exact ``<=`` on the stored marginal costs:
the ladder is derived once and reused, so determinism beats epsilon fuzz.
"""
from __future__ import annotations

import bisect

from .params import DriftLadder


class CostDomainError(ValueError):
    pass


def cost_c(ladder: DriftLadder, x: float) -> float:
    """c(x): zero at theta_0, slope c_hat_l on the l-th segment."""
    theta = ladder.theta
    if x < theta[0] or x > theta[-1]:
        raise CostDomainError(
            f"x={x:.6g} outside control domain [{theta[0]:.6g}, {theta[-1]:.6g}]"
        )
    # segment l covers (theta_{l-1}, theta_l]; x == theta_0 is the base point
    if x == theta[0]:
        return 0.0
    l = bisect.bisect_left(theta, x, lo=1) if x > theta[0] else 1
    l = min(l, len(theta) - 1)
    return ladder.c_of_theta[l - 1] + ladder.c_hat[l - 1] * (x - theta[l - 1])


def _branch(ladder: DriftLadder, y: float) -> int:
    """Index m such that psi(y) = theta_m: 0 for y <= c_hat_1, L for y > c_hat_L."""
    c_hat = ladder.c_hat
    if y <= c_hat[0]:
        return 0
    if y > c_hat[-1]:
        return len(c_hat)
    # smallest m with y <= c_hat_m gives theta_{m-1}; intervals are (c_hat_{m-1}, c_hat_m]
    return bisect.bisect_left(c_hat, y)


def psi_min_argmax(ladder: DriftLadder, y: float) -> float:
    """Smallest maximizer of y x - c(x); left-continuous, nondecreasing in y."""
    return ladder.theta[_branch(ladder, y)]


def conjugate_phi(ladder: DriftLadder, y: float) -> float:
    """phi(y) = y psi(y) - c(psi(y)), piecewise linear and convex."""
    m = _branch(ladder, y)
    return ladder.theta[m] * y - ladder.c_of_theta[m]


def beta_lower_bound(ladder: DriftLadder) -> float:
    """-inf phi.  The minimum of a convex piecewise-linear function sits at a kink.

    Requires theta_0 < 0 < theta_L so phi is bounded below (coercive in both
    directions); otherwise the average-cost family is degenerate.
    """
    if ladder.theta[0] >= 0 or ladder.theta[-1] <= 0:
        raise ValueError(
            "phi unbounded below: need theta_0 < 0 < theta_L, got "
            f"[{ladder.theta[0]:.6g}, {ladder.theta[-1]:.6g}]"
        )
    lo = min(conjugate_phi(ladder, y) for y in ladder.c_hat)
    return -lo
