"""Box-constrained convex quadratic programming.

Solves ``min 0.5 x'Qx + q'x  s.t.  lo <= x <= hi`` for symmetric positive
semi-definite ``Q`` by projected Newton (Bertsekas, 1982): variables within a
small tolerance of a bound, with the gradient pushing outward, are frozen, a
Newton step is taken on the rest and projected back onto the box with an Armijo
search along the projection arc. A tiny ridge on the free block keeps the step
defined when ``Q`` is singular; along flat directions it simply runs to the
bounds. Once the active set is identified the Newton step lands on the
minimizer of that face, so only a handful of iterations are needed for the
small dense problems used here.
"""

from __future__ import annotations

import numpy as np

from .errors import NonConvergence


def _objective(Q, q, x):
    return 0.5 * x @ Q @ x + q @ x


def _arc_search(Q, q, lo, hi, x, g, d, f0):
    """Armijo backtracking along the projection arc ``P(x + t d)``."""
    step = 1.0
    if not np.any(d):
        return None
    for _ in range(120):
        xn = np.clip(x + step * d, lo, hi)
        if _objective(Q, q, xn) <= f0 + 1e-4 * (g @ (xn - x)) and g @ (xn - x) < 0:
            return xn
        step *= 0.5
    return None


def _projected_gradient(g, x, lo, hi):
    """Gradient with components pushing out of the box at an active bound zeroed."""
    pg = g.copy()
    pg[(x <= lo) & (g > 0)] = 0.0
    pg[(x >= hi) & (g < 0)] = 0.0
    return pg


def kkt_residual(Q, q, lo, hi, x) -> float:
    """Infinity norm of the projected gradient at ``x`` (in gradient units)."""
    if not x.size:
        return 0.0
    return float(np.max(np.abs(_projected_gradient(Q @ x + q, x, lo, hi))))


def solve_box_qp(Q, q, lo, hi, x0=None, tol=1e-12, max_iter=200):
    """Minimize a convex quadratic over a box.

    Parameters
    ----------
    Q : ndarray (m, m)
        Symmetric positive semi-definite Hessian.
    q : ndarray (m,)
        Linear term.
    lo, hi : ndarray (m,)
        Finite bounds with ``lo <= hi``.
    x0 : ndarray (m,), optional
        Warm start; projected onto the box.
    tol : float
        Stationarity tolerance on the projected gradient, relative to the
        problem scale ``max(|Q|, |q|, 1e-300)`` times the box width.

    Returns
    -------
    x : ndarray (m,)
    """
    Q = np.asarray(Q, dtype=float)
    q = np.asarray(q, dtype=float)
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    m = q.size
    if m == 0:
        return np.zeros(0)
    x = (lo + hi) / 2 if x0 is None else np.clip(np.asarray(x0, dtype=float), lo, hi)
    width = np.max(hi - lo) if m else 1.0
    scale = max(np.max(np.abs(Q)) * max(width, 1.0), np.max(np.abs(q)), 1e-300)
    gtol = tol * scale
    edge = 1e-14 * max(width, 1.0)
    ridge = 1e-13 * scale

    for _ in range(max_iter):
        g = Q @ x + q
        if np.max(np.abs(_projected_gradient(g, x, lo, hi))) <= gtol:
            return x
        # Bertsekas' epsilon-active set: near-bound variables pushed outward,
        # with the radius tied to the length of the projected unit step
        step_len = float(np.max(np.abs(np.clip(x - g, lo, hi) - x)))
        eps = min(1e-3 * max(width, 1.0), step_len) + edge
        at_lo = (x <= lo + eps) & (g > 0)
        at_hi = (x >= hi - eps) & (g < 0)
        free = ~(at_lo | at_hi)

        f0 = _objective(Q, q, x)
        xn = None
        if free.any():
            d = np.zeros(m)
            idx = np.flatnonzero(free)
            Qff = Q[np.ix_(idx, idx)]
            # tiny ridge keeps the step defined on flat directions, where it
            # then runs to the bounds through the projection
            d[idx] = np.linalg.solve(Qff + ridge * np.eye(idx.size), -g[idx])
            # frozen variables follow the gradient onto their bound
            d[~free] = -g[~free]
            xn = _arc_search(Q, q, lo, hi, x, g, d, f0)
        if xn is None:
            xn = _arc_search(Q, q, lo, hi, x, g, -g, f0)
        if xn is None or np.array_equal(xn, x):
            # no representable progress: already at the minimizer within rounding
            return x
        x = xn

    if kkt_residual(Q, q, lo, hi, x) > 1e-6 * scale:
        raise NonConvergence(f"box QP did not converge in {max_iter} iterations")
    return x
