"""Reference computations that share no code with the library paths they check.

The forward pass here is a separate straight-line implementation evaluated in
extended precision (``np.longdouble``), so central differences with a 1e-5
step are not swamped by float64 roundoff.
"""

from __future__ import annotations

import itertools
import math

import numpy as np

LD = np.longdouble


def dense_forward(weights, biases, x):
    """Loop-based MLP forward pass (ReLU hidden layers, linear output)."""
    h = [LD(v) for v in np.asarray(x).ravel()]
    last = len(weights) - 1
    for li, (w, b) in enumerate(zip(weights, biases)):
        w = np.asarray(w, dtype=LD)
        b = np.asarray(b, dtype=LD)
        out = []
        for r in range(w.shape[0]):
            acc = b[r]
            for c in range(w.shape[1]):
                acc = acc + w[r, c] * h[c]
            out.append(acc if li == last or acc > 0 else LD(0))
        h = out
    return np.array(h, dtype=LD)


def _forward_ld(weights, biases, X):
    h = np.asarray(X, dtype=LD)
    last = len(weights) - 1
    for i, (w, b) in enumerate(zip(weights, biases)):
        h = h @ np.asarray(w, dtype=LD).T + np.asarray(b, dtype=LD)
        if i != last:
            h = np.where(h > 0, h, LD(0))
    return h


def _logsumexp(z):
    m = z.max(axis=1, keepdims=True)
    return (m + np.log(np.exp(z - m).sum(axis=1, keepdims=True)))[:, 0]


def _losses_ld(z, y, flavor, reference=None):
    rows = np.arange(len(y))
    if flavor == "cross-entropy":
        return _logsumexp(z) - z[rows, y]
    if flavor == "kl-to-reference":
        r = np.asarray(reference, dtype=LD)
        log_p = r - _logsumexp(r)[:, None]
        log_q = z - _logsumexp(z)[:, None]
        return (np.exp(log_p) * (log_p - log_q)).sum(axis=1)
    if flavor == "logit-margin":
        out = []
        for i, yi in enumerate(y):
            others = [z[i, t] for t in range(z.shape[1]) if t != yi]
            out.append(max(others) - z[i, yi])
        return np.array(out, dtype=LD)
    raise ValueError(flavor)


def weighted_objective(weights, biases, X, y, flavor="cross-entropy", reference=None, example_weights=None):
    z = _forward_ld(weights, biases, X)
    losses = _losses_ld(z, np.asarray(y), flavor, reference)
    w = np.ones(len(y), dtype=LD) if example_weights is None else np.asarray(example_weights, dtype=LD)
    return (w * losses).sum() / LD(len(y))


def fd_grad_params(weights, biases, X, y, flavor="cross-entropy", reference=None, example_weights=None, h=1e-5):
    """Central differences of the mean weighted loss for every parameter.

    Returns a list of arrays in (W0, b0, W1, b1, ...) order.
    """
    params = []
    for w, b in zip(weights, biases):
        params.append(np.array(w, dtype=LD))
        params.append(np.array(b, dtype=LD))

    def f():
        return weighted_objective(params[0::2], params[1::2], X, y, flavor, reference, example_weights)

    grads = []
    for p in params:
        g = np.zeros(p.shape, dtype=np.float64)
        for idx in np.ndindex(p.shape):
            old = p[idx]
            p[idx] = old + LD(h)
            up = f()
            p[idx] = old - LD(h)
            down = f()
            p[idx] = old
            g[idx] = float((up - down) / (2 * LD(h)))
        grads.append(g)
    return grads


def fd_grad_input(weights, biases, x, label, flavor="cross-entropy", reference=None, h=1e-5):
    x = np.array(x, dtype=LD)
    g = np.zeros(x.shape, dtype=np.float64)
    ref = None if reference is None else np.atleast_2d(reference)
    for j in range(len(x)):
        old = x[j]
        x[j] = old + LD(h)
        up = weighted_objective(weights, biases, x[None, :], [label], flavor, ref)
        x[j] = old - LD(h)
        down = weighted_objective(weights, biases, x[None, :], [label], flavor, ref)
        x[j] = old
        g[j] = float((up - down) / (2 * LD(h)))
    return g


def fd_trades(weights, biases, X, X_adv, y, lambda_inv, example_weights, h=1e-5):
    """Central differences of the mean weighted TRADES loss (both logit sets depend on the parameters)."""
    params = []
    for w, b in zip(weights, biases):
        params.append(np.array(w, dtype=LD))
        params.append(np.array(b, dtype=LD))
    yv = np.asarray(y)
    ew = np.asarray(example_weights, dtype=LD)

    def f():
        zc = _forward_ld(params[0::2], params[1::2], X)
        za = _forward_ld(params[0::2], params[1::2], X_adv)
        ce = _losses_ld(zc, yv, "cross-entropy")
        kl = _losses_ld(za, yv, "kl-to-reference", zc)
        return (ew * (ce + LD(lambda_inv) * kl)).sum() / LD(len(yv))

    grads = []
    for p in params:
        g = np.zeros(p.shape, dtype=np.float64)
        for idx in np.ndindex(p.shape):
            old = p[idx]
            p[idx] = old + LD(h)
            up = f()
            p[idx] = old - LD(h)
            down = f()
            p[idx] = old
            g[idx] = float((up - down) / (2 * LD(h)))
        grads.append(g)
    return grads


def max_relative_error(analytic, numeric, floor=1e-8) -> float:
    """Largest ``|a - n| / max(|a|, |n|)`` over components with magnitude above ``floor``."""
    a = np.concatenate([np.ravel(v) for v in analytic])
    n = np.concatenate([np.ravel(v) for v in numeric])
    mag = np.maximum(np.abs(a), np.abs(n))
    keep = mag > floor
    if not np.any(keep):
        return 0.0
    return float(np.max(np.abs(a - n)[keep] / mag[keep]))


# -- DRO ------------------------------------------------------------------------

def dro_qp(losses, rho):
    """Maximize ``sum w l`` over the simplex within the chi-square ball using a conic solver."""
    import warnings

    import cvxpy as cp

    l = np.asarray(losses, dtype=np.float64)
    n = len(l)
    w = cp.Variable(n)
    prob = cp.Problem(cp.Maximize(l @ w),
                      [cp.sum(w) == 1, w >= 0, 0.5 * cp.sum_squares(w - 1.0 / n) <= rho / n])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)  # "may be inaccurate" at these tolerances
        prob.solve(solver=cp.CLARABEL, tol_gap_abs=1e-12, tol_gap_rel=1e-12, tol_feas=1e-12)
    return float(prob.value), np.asarray(w.value)


def dro_grid_3(losses, rho, steps=1000, zoom_levels=3):
    """Brute-force maximum over grids of the 2-simplex for three losses.

    A coarse grid over the whole simplex is followed by ``zoom_levels`` grids
    centred on the incumbent, each covering a tenth of the previous span.
    """
    l = np.asarray(losses, dtype=np.float64)
    lo0, lo1, span = 0.0, 0.0, 1.0
    best = -np.inf
    for _ in range(zoom_levels + 1):
        a0 = np.linspace(lo0, lo0 + span, steps + 1)
        a1 = np.linspace(lo1, lo1 + span, steps + 1)
        w0, w1 = np.meshgrid(a0, a1, indexing="ij")
        w2 = 1.0 - w0 - w1
        ok = (w0 >= 0) & (w1 >= 0) & (w2 >= 0)
        ok &= 0.5 * ((w0 - 1 / 3) ** 2 + (w1 - 1 / 3) ** 2 + (w2 - 1 / 3) ** 2) <= rho / 3
        obj = np.where(ok, w0 * l[0] + w1 * l[1] + w2 * l[2], -np.inf)
        i, j = np.unravel_index(np.argmax(obj), obj.shape)
        best = max(best, float(obj[i, j]))
        span /= 10
        lo0, lo1 = a0[i] - span / 2, a1[j] - span / 2
    return best


# -- weighted accuracy ------------------------------------------------------------

def pairwise_covariance(weights, indicators) -> float:
    """``sum_{i<j} (w_i - w_j)(1_i - 1_j)``; its sign is that of cov(w, 1)."""
    w = [float(v) for v in weights]
    ind = [float(v) for v in indicators]
    return math.fsum((w[i] - w[j]) * (ind[i] - ind[j]) for i, j in itertools.combinations(range(len(w)), 2))
