"""Worst-case reweighting of per-example losses inside a chi-square ball.

The adversary solves::

    max_w  sum_i w_i l_i
    s.t.   w on the probability simplex,  0.5 * ||w - 1/N||^2 <= rho / N

Stationarity gives ``w = proj_simplex(t * l)`` for a scalar ``t >= 0`` (the
inverse of the ball constraint's multiplier). The ball distance of that point
is nondecreasing in ``t``, so ``t`` is bracketed and bisected with a sort-based
water-filling projection inside. Once the support is known, the distance is
``0.5 * (t^2 * sum_S c_i^2 + 1/|S| - 1/N)`` with ``c`` the losses centred on the
support, which pins ``t`` down in closed form.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import List, Sequence

import numpy as np

from .exceptions import DomainError

DEFAULT_RHOS = (0.01, 0.02, 0.04, 0.08, 0.16, 0.32, 0.64, 1.0)


@dataclass(frozen=True, eq=False)
class DroSolution:
    weights: np.ndarray
    objective: float
    rho: float
    active_budget: bool


def project_simplex(v: np.ndarray) -> np.ndarray:
    """Euclidean projection onto the probability simplex (water-filling)."""
    v = np.asarray(v, dtype=np.float64)
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    k = np.arange(1, len(v) + 1)
    r = np.count_nonzero(u - css / k > 0)
    theta = css[r - 1] / r
    return np.maximum(v - theta, 0.0)


def chi2_distance(w, n: int) -> float:
    """``0.5 * ||w - 1/n||^2``."""
    d = np.asarray(w, dtype=np.float64) - 1.0 / n
    return 0.5 * math.fsum(d * d)


def _face_solution(losses: np.ndarray, support: np.ndarray, target: float):
    """Weights on a fixed support hitting the ball boundary exactly, or None."""
    n = len(losses)
    k = int(support.sum())
    c = losses[support] - math.fsum(losses[support]) / k
    a = math.fsum(c * c)
    slack = 2.0 * target - (1.0 / k - 1.0 / n)
    if a <= 0 or slack < 0:
        return None
    t = math.sqrt(slack / a)
    w = np.zeros(n)
    w[support] = t * c + 1.0 / k
    if np.any(w[support] < -1e-12):
        return None
    return np.maximum(w, 0.0)


def solve_dro_weights(losses: Sequence[float], rho: float, tol: float = 1e-10) -> DroSolution:
    l = np.asarray(losses, dtype=np.float64).ravel()
    n = len(l)
    if n < 1:
        raise DomainError("need at least one loss")
    if not np.all(np.isfinite(l)):
        raise DomainError("losses must be finite")
    if not (rho >= 0 and math.isfinite(rho)):
        raise DomainError(f"rho must be finite and >= 0, got {rho}")
    if n == 1:
        return DroSolution(np.ones(1), float(l[0]), float(rho), False)
    if rho == 0:
        return DroSolution(np.full(n, 1.0 / n), math.fsum(l) / n, 0.0, False)

    target = rho / n
    top = l == l.max()
    k = int(top.sum())
    vertex = top / k
    # n * dist(vertex) = 0.5 * (n / k - 1) in closed form; exact when k = 1
    if rho >= 0.5 * (n / k - 1.0):
        # all mass on the maximal losses
        return DroSolution(vertex, float(l.max()), float(rho), False)

    # the maximizer is invariant under positive affine maps of the losses,
    # so solve on losses rescaled to [0, 1] (keeps t finite for tiny spreads)
    u = (l - l.min()) / (l.max() - l.min())
    lo, hi = 0.0, 1.0
    while chi2_distance(project_simplex(hi * u), n) < target:
        lo, hi = hi, 2.0 * hi
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if chi2_distance(project_simplex(mid * u), n) < target:
            lo = mid
        else:
            hi = mid
        if hi - lo <= tol * hi:
            break

    best = None
    for t in (hi, lo):
        w = _face_solution(u, project_simplex(t * u) > 0, target)
        if w is not None and abs(chi2_distance(w, n) - target) <= tol:
            best = w
            break
    if best is None:
        best = project_simplex(lo * u)
    return DroSolution(best, math.fsum(best * l), float(rho), True)


def dro_curve(losses, indicators, rhos: Sequence[float] = DEFAULT_RHOS) -> List[dict]:
    """Worst-case weighted loss and the accuracy under those same weights, per rho."""
    rhos = [float(r) for r in rhos]
    if any(b < a for a, b in zip(rhos, rhos[1:])):
        raise DomainError("rhos must be sorted ascending")
    ind = np.asarray(indicators, dtype=np.float64)
    rows = []
    for rho in rhos:
        sol = solve_dro_weights(losses, rho)
        if rho == 0:
            acc = math.fsum(ind) / len(ind)
        else:
            acc = math.fsum(sol.weights * ind) / math.fsum(sol.weights)
        rows.append({"rho": rho, "weighted_loss": sol.objective, "weighted_accuracy": acc})
    return rows


def write_curve_csv(rows: List[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("rho", "weighted_loss", "weighted_accuracy"))
        for r in rows:
            w.writerow([repr(r["rho"]), repr(float(r["weighted_loss"])), repr(float(r["weighted_accuracy"]))])
