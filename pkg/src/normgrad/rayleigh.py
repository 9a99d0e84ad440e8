"""Least squares in decoupled form: gradient descent on a Rayleigh quotient.

Writing w_tilde = g w/|w|_S turns 2u^T w_tilde + w_tilde^T S w_tilde into
a problem whose optimal scale is closed form, leaving the direction
objective rho(w) = -(u^T w)^2 / (w^T S w).  Its minimum -lambda1 is
attained on the line through S^{-1}u, and gradient descent with stepsize

    eta = w^T S w / (2 L |rho(w)|)

contracts the S-angle to that line by 1 - mu/L per step.
"""
from dataclasses import dataclass

import numpy as np

from .sgeom import sin2_s_angle


class DegenerateStartError(ValueError):
    pass


@dataclass(frozen=True)
class RayleighTraceRecord:
    t: int
    rho: float
    sin2: float
    grad_norm_sinv: float
    eta: float


def _quad_parts(w, m):
    w = np.asarray(w, dtype=float)
    if w.shape != (m.dim,):
        raise ValueError(f"w has shape {w.shape}, model dim is {m.dim}")
    sw = m.sigma.entries @ w
    nw2 = float(w @ sw)
    if nw2 <= 0.0:
        raise ValueError("rho undefined for w = 0")
    return w, sw, nw2, float(m.u @ w)


def rho(w, m):
    _, _, nw2, uw = _quad_parts(w, m)
    return -uw * uw / nw2


def optimal_scale(w, m):
    _, _, nw2, uw = _quad_parts(w, m)
    return -uw / np.sqrt(nw2)


def grad_rho(w, m):
    # -2 (u^T w)/|w|_S^2 * S (S^{-1}u - (u^T w/|w|_S^2) w); the residual form keeps
    # relative accuracy near the solution where u and S w nearly cancel
    w, _, nw2, uw = _quad_parts(w, m)
    e = m.sinv_u - (uw / nw2) * w
    return (-2.0 * uw / nw2) * (m.sigma.entries @ e)


def v1(m):
    """Unit S-norm minimizer direction of rho (the oracle; solvers never call it)."""
    x = m.sinv_u
    return -x / np.sqrt(m.lambda1)


def sin2_to_solution(w, m):
    return sin2_s_angle(w, m.sinv_u, m.sigma)


def rayleigh_step(w, m):
    w, _, nw2, uw = _quad_parts(w, m)
    r = -uw * uw / nw2
    if r == 0.0:
        raise DegenerateStartError("rho(w) = 0: u^T w vanishes, no descent direction")
    grad = grad_rho(w, m)
    eta = nw2 / (2.0 * m.big_l * abs(r))
    return w - eta * grad, _record(-1, w, m)


def solve_ols_gdnp(m, w0, T, renorm_every=100):
    """T adaptive Rayleigh steps, then the closed-form scale.

    Returns (w_T, g_T, trace) with trace[t] describing iterate t for
    t = 0..T; the reconstruction g_T w_T/|w_T|_S approximates -S^{-1}u.
    """
    w = np.asarray(w0, dtype=float).copy()
    if rho(w, m) == 0.0:
        raise DegenerateStartError("rho(w0) = 0")
    trace = []
    for t in range(T):
        w_next, rec = rayleigh_step(w, m)
        trace.append(RayleighTraceRecord(t, rec.rho, rec.sin2, rec.grad_norm_sinv, rec.eta))
        w = w_next
        if renorm_every and (t + 1) % renorm_every == 0:
            w = w / np.linalg.norm(w)
    trace.append(_record(T, w, m))
    return w, optimal_scale(w, m), trace


def rayleigh_iterates(m, w0, T):
    """Array of w_0..w_T without renormalization."""
    out = [np.asarray(w0, dtype=float).copy()]
    for _ in range(T):
        out.append(rayleigh_step(out[-1], m)[0])
    return np.array(out)


def _record(t, w, m):
    w, _, nw2, uw = _quad_parts(w, m)
    r = -uw * uw / nw2
    grad = grad_rho(w, m)
    eta = nw2 / (2.0 * m.big_l * abs(r)) if r != 0.0 else np.inf
    gn = float(np.sqrt(max(grad @ m.sigma.solve(grad), 0.0)))
    return RayleighTraceRecord(t, r, sin2_to_solution(w, m), gn, eta)
