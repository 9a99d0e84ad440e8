"""Normalized gradient descent for learning halfspaces, and baselines.

The objective is f(w_tilde) = E[phi(z^T w_tilde)] written in the decoupled
coordinates w_tilde = g w/|w|_S.  ``gdnp_run`` alternates an adaptive
gradient step on the direction w with a bisection search on the scale g.
The directional stepsize

    s = -|w|_S^3 / (L g h),   h = c1(w_tilde) u^T w

makes each direction update coincide with one adaptive step on the
Rayleigh quotient, so the direction converges at the least squares rate
regardless of the loss.

Baselines: plain GD and Nesterov AGD on w_tilde, and simultaneous
fixed-step updates of (w, g) under the S-norm (BN) or the Euclidean norm
(WN) reparametrization.
"""
from dataclasses import dataclass, field

import numpy as np

from .losses import DEFAULT_ENGINE, expect_phi_all, phi_all, zeta_analytic
from .model import EmpiricalDataset, SpdModel, compute_stats
from .rayleigh import DegenerateStartError, rho
from .sgeom import SpdMatrix, a_w_apply, sin2_s_angle


class BracketError(RuntimeError):
    def __init__(self, msg, a, b, fa, fb):
        super().__init__(msg)
        self.a, self.b, self.fa, self.fb = a, b, fa, fb


@dataclass(frozen=True, eq=False)
class NormState:
    w: np.ndarray
    g: float

    def __post_init__(self):
        w = np.array(self.w, dtype=float)
        if not np.any(w):
            raise ValueError("direction w must be nonzero")
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "g", float(self.g))

    def w_tilde(self, sigma):
        return self.g * self.w / np.sqrt(self.w @ sigma.entries @ self.w)


@dataclass(frozen=True)
class GdnpConfig:
    """Settings for ``gdnp_run``.

    open_bracket: what to do when d f/d g has the same sign at both ends of
    the bracket.  "expand" doubles the bracket up to ``max_expand`` times
    and then raises; "clip" keeps the bracket and returns the endpoint on
    the descent side (used for losses without a finite optimal scale).
    g_inner_steps > 0 replaces bisection by that many gradient steps on g
    with rate ``g_lr`` (default 1/sup|phi''|).
    """
    t_d: int = 80
    t_s: int = 40
    bracket: tuple = (-10.0, 10.0)
    g_inner_steps: int = 0
    g_lr: float = None
    g0: float = 1.0
    open_bracket: str = "expand"
    max_expand: int = 60
    h_tol: float = 1e-14
    engine: object = DEFAULT_ENGINE
    seed: int = 0

    def __post_init__(self):
        if self.t_d < 0 or self.t_s < 1:
            raise ValueError("need t_d >= 0 and t_s >= 1")
        a0, b0 = self.bracket
        if not a0 < b0:
            raise ValueError(f"bracket {self.bracket} must satisfy a0 < b0")
        if self.open_bracket not in ("expand", "clip"):
            raise ValueError(f"open_bracket must be 'expand' or 'clip', got {self.open_bracket!r}")
        if self.g_inner_steps < 0:
            raise ValueError("g_inner_steps must be >= 0")


@dataclass(frozen=True)
class HalfspaceTraceRecord:
    t: int
    objective: float
    grad_tilde_norm_sinv: float  # squared S^{-1}-norm of the gradient in w_tilde
    dir_grad_norm: float  # S^{-1}-norm of the gradient in w
    partial_g: float
    g: float
    h_value: float
    s_t: float
    rho: float
    sin2: float
    bracket: str = ""
    mode: str = "analytic"
    w: np.ndarray = field(default=None, repr=False, compare=False)


class _Oracle:
    """Objective, gradients and Stein scalars for one data source."""

    def __init__(self, loss, source, engine=DEFAULT_ENGINE, stats=None):
        self.loss = loss
        self.engine = engine
        if isinstance(source, SpdModel):
            self.mode = "analytic"
            self.model = source
            self.z = None
        elif isinstance(source, EmpiricalDataset):
            self.mode = "empirical"
            stats = stats if stats is not None else compute_stats(source)
            self.model = stats.to_model()
            self.z = source.z_rows
        else:
            raise TypeError(f"unsupported source {type(source).__name__}")
        self.sigma = self.model.sigma
        self.u = self.model.u
        self.big_l = self.sigma.big_l

    def moments(self, wt):
        """(E phi, E phi', E phi'') at z^T wt."""
        if self.z is None:
            m = float(self.u @ wt)
            var = float(wt @ self.sigma.entries @ wt) - m * m
            return expect_phi_all(self.loss, m, max(var, 0.0), self.engine)
        d0, d1, d2 = phi_all(self.loss, self.z @ wt)
        return float(d0.mean()), float(d1.mean()), float(d2.mean())

    def objective(self, wt):
        return self.moments(wt)[0]

    def grad_tilde(self, wt):
        if self.z is None:
            _, e1, e2 = self.moments(wt)
            c1 = e1 - e2 * float(self.u @ wt)
            return c1 * self.u + e2 * (self.sigma.entries @ wt)
        d1 = phi_all(self.loss, self.z @ wt)[1]
        return self.z.T @ d1 / self.z.shape[0]

    def c1(self, wt):
        _, e1, e2 = self.moments(wt)
        return e1 - e2 * float(self.u @ wt)

    def partial_g_fn(self, w):
        """g -> d f / d g at fixed direction w."""
        w_hat = w / np.sqrt(w @ self.sigma.entries @ w)
        if self.z is None:
            a = float(self.u @ w_hat)
            var1 = max(1.0 - a * a, 0.0)

            def f(g):
                _, e1, e2 = expect_phi_all(self.loss, g * a, g * g * var1, self.engine)
                return (e1 - e2 * g * a) * a + e2 * g
            return f
        p = self.z @ w_hat

        def f(g):
            return float(np.mean(phi_all(self.loss, g * p)[1] * p))
        return f

    def objective_g_fn(self, w):
        w_hat = w / np.sqrt(w @ self.sigma.entries @ w)
        return lambda g: self.objective(g * w_hat)

    def sinv_sq(self, x):
        return float(max(x @ self.sigma.solve(x), 0.0))


def h_stop(st, loss, source, engine=DEFAULT_ENGINE):
    """Stopping scalar h = c1(w_tilde) u^T w; zero once the direction is critical."""
    orc = source if isinstance(source, _Oracle) else _Oracle(loss, source, engine)
    wt = st.w_tilde(orc.sigma)
    return orc.c1(wt) * float(orc.u @ st.w)


def h_printed(st, loss, source, engine=DEFAULT_ENGINE):
    """E[phi'] u^T w - E[phi''] (u^T w)^2, expectations at z^T w_tilde.

    Equals ``h_stop`` when g = |w|_S (then u^T w_tilde = u^T w).  The solver
    uses ``h_stop``, whose sign and scale make the direction update an exact
    Rayleigh step for every g.
    """
    orc = source if isinstance(source, _Oracle) else _Oracle(loss, source, engine)
    _, e1, e2 = orc.moments(st.w_tilde(orc.sigma))
    uw = float(orc.u @ st.w)
    return e1 * uw - e2 * uw * uw


def grad_w(st, orc):
    """Gradient of f(w, g) in the direction coordinate, g A_w grad_tilde."""
    wt = st.w_tilde(orc.sigma)
    return st.g * a_w_apply(st.w, orc.sigma, orc.grad_tilde(wt))


def partial_g(st, orc):
    return orc.partial_g_fn(st.w)(st.g)


def directional_step(st, loss, source, engine=DEFAULT_ENGINE, h_tol=1e-14):
    """One adaptive step on w; returns (new state, h, s).

    When |h| <= h_tol the direction is already critical and the state is
    returned unchanged with s = 0.
    """
    orc = source if isinstance(source, _Oracle) else _Oracle(loss, source, engine)
    if st.g == 0.0:
        raise ValueError("directional step needs g != 0")
    h = h_stop(st, loss, orc)
    if abs(h) <= h_tol:
        return st, h, 0.0
    nw = np.sqrt(st.w @ orc.sigma.entries @ st.w)
    s = -nw ** 3 / (orc.big_l * st.g * h)
    return NormState(st.w - s * grad_w(st, orc), st.g), h, s


def bisection(partial_g_fn, bracket, t_s, max_expand=60, return_info=False):
    """Bisection on a derivative; returns the left end a after t_s halvings.

    The bracket needs a sign change.  If the supplied one has none it is
    doubled about its midpoint up to ``max_expand`` times before giving up.
    """
    a, b = float(bracket[0]), float(bracket[1])
    if not a < b:
        raise ValueError(f"invalid bracket ({a}, {b})")
    fa, fb = partial_g_fn(a), partial_g_fn(b)
    expansions = 0
    while fa * fb > 0.0:
        if expansions >= max_expand:
            raise BracketError(
                f"no sign change of the derivative on [{a:.6g}, {b:.6g}] after {expansions} expansions",
                a, b, fa, fb)
        c, r = 0.5 * (a + b), b - a
        a, b = c - r, c + r
        fa, fb = partial_g_fn(a), partial_g_fn(b)
        expansions += 1
    info = {"bracket": (a, b), "expansions": expansions, "width": b - a}
    if fa == 0.0 or fb == 0.0:
        g = a if fa == 0.0 else b
        return (g, info) if return_info else g
    for _ in range(int(t_s)):
        c = 0.5 * (a + b)
        fc = partial_g_fn(c)
        if fc * fa > 0.0:
            a, fa = c, fc
        else:
            b = c
    return (a, info) if return_info else a


def _scale_search(orc, w, g, cfg, loss):
    fn = orc.partial_g_fn(w)
    if cfg.g_inner_steps:
        lr = cfg.g_lr if cfg.g_lr is not None else 1.0 / max(loss.phi2_bound, 1e-12)
        for _ in range(cfg.g_inner_steps):
            g = g - lr * fn(g)
        return g, "gsteps", cfg.bracket[1] - cfg.bracket[0]
    expand = cfg.max_expand if cfg.open_bracket == "expand" else 0
    try:
        g_new, info = bisection(fn, cfg.bracket, cfg.t_s, expand, return_info=True)
    except BracketError as err:
        if cfg.open_bracket != "clip":
            raise
        # derivative keeps one sign: f is monotone on the bracket, take the lower end
        g_new = err.b if err.fa < 0.0 else err.a
        return g_new, "clipped", err.b - err.a
    return g_new, ("ok" if info["expansions"] == 0 else f"expanded{info['expansions']}"), info["width"]


def _record(t, st, orc, h, s, status, with_w=True):
    wt = st.w_tilde(orc.sigma)
    gt = orc.grad_tilde(wt)
    gw = st.g * a_w_apply(st.w, orc.sigma, gt)
    pg = float(st.w @ gt) / np.sqrt(st.w @ orc.sigma.entries @ st.w)
    return HalfspaceTraceRecord(
        t=t,
        objective=orc.objective(wt),
        grad_tilde_norm_sinv=orc.sinv_sq(gt),
        dir_grad_norm=np.sqrt(orc.sinv_sq(gw)),
        partial_g=pg,
        g=st.g,
        h_value=h,
        s_t=s,
        rho=rho(st.w, orc.model),
        sin2=sin2_s_angle(st.w, orc.model.sinv_u, orc.sigma) if orc.model.lambda1 > 0 else 1.0,
        bracket=status,
        mode=orc.mode,
        w=st.w.copy() if with_w else None,
    )


def gdnp_run(loss, source, cfg, w0, stats=None):
    """Algorithm: for t = 1..t_d, adaptive step on w (when h != 0), then scale search.

    Returns (w_tilde_final, trace); trace[0] is the initial state with the
    configured g0, trace[t] the state after iteration t.  With t_d = 0 a
    single scale search is still performed.
    """
    orc = _Oracle(loss, source, cfg.engine, stats)
    w0 = np.asarray(w0, dtype=float)
    if rho(w0, orc.model) == 0.0:
        raise DegenerateStartError("rho(w0) = 0 under the source moments")
    st = NormState(w0, cfg.g0)
    trace = [_record(0, st, orc, np.nan, 0.0, "init")]
    if cfg.t_d == 0:
        g, status, _ = _scale_search(orc, st.w, st.g, cfg, loss)
        st = NormState(st.w, g)
        trace.append(_record(0, st, orc, np.nan, 0.0, status))
    for t in range(1, cfg.t_d + 1):
        st, h, s = directional_step(st, loss, orc, h_tol=cfg.h_tol)
        g, status, _ = _scale_search(orc, st.w, st.g, cfg, loss)
        st = NormState(st.w, g)
        trace.append(_record(t, st, orc, h, s, status))
    return st.w_tilde(orc.sigma), trace


def two_term_bound(loss, g, delta_rho0, mu, big_l, t_d, t_s, zeta, bracket_width, with_g=True):
    """Two-term bound on the final squared gradient norm.

    with_g=True multiplies the directional term by g^2, the form that also
    holds when the scale found by the search is large.
    """
    phi = loss.phi_bound
    if not np.isfinite(phi):
        raise ValueError(f"loss {loss.kind!r} has unbounded phi'; the bound does not apply")
    first = (1.0 - mu / big_l) ** (2 * t_d) * phi ** 2 * delta_rho0
    if with_g:
        first *= g * g
    return first + 2.0 ** (-t_s) * zeta * bracket_width / mu ** 2


def bisection_residual_bound(t_s, zeta, bracket_width, mu):
    return 2.0 ** (-t_s) * zeta * bracket_width / mu ** 2


def find_init(m, seed, max_tries=100):
    rng = np.random.default_rng(seed)
    target = m.sinv_u
    if not np.any(target):
        raise DegenerateStartError("u = 0: every direction has rho = 0")
    for _ in range(max_tries):
        w = rng.standard_normal(m.dim)
        if np.sqrt(max(1.0 - sin2_s_angle(w, target, m.sigma), 0.0)) > 1e-6:
            return w
    raise DegenerateStartError(f"no valid start after {max_tries} draws")


def agd_momentum(t):
    return (t - 2.0) / (t + 1.0)


def _baseline_record(t, wt, orc, step, g=np.nan, w=None):
    gt = orc.grad_tilde(wt)
    nonzero = np.any(wt)
    return HalfspaceTraceRecord(
        t=t,
        objective=orc.objective(wt),
        grad_tilde_norm_sinv=orc.sinv_sq(gt),
        dir_grad_norm=np.nan,
        partial_g=np.nan,
        g=g,
        h_value=np.nan,
        s_t=step,
        rho=rho(wt, orc.model) if nonzero else 0.0,
        sin2=sin2_s_angle(wt, orc.model.sinv_u, orc.sigma) if nonzero and orc.model.lambda1 > 0 else 1.0,
        mode=orc.mode,
        w=(wt if w is None else w).copy(),
    )


def gd_run(loss, source, stepsize, T, w0, engine=DEFAULT_ENGINE, stats=None):
    orc = _Oracle(loss, source, engine, stats)
    wt = np.asarray(w0, dtype=float).copy()
    trace = [_baseline_record(0, wt, orc, stepsize)]
    for t in range(1, T + 1):
        wt = wt - stepsize * orc.grad_tilde(wt)
        trace.append(_baseline_record(t, wt, orc, stepsize))
    return wt, trace


def agd_run(loss, source, stepsize, T, w0, beta=None, engine=DEFAULT_ENGINE, stats=None):
    """Nesterov's method; beta=None uses the schedule (t-2)/(t+1) from t = 2."""
    orc = _Oracle(loss, source, engine, stats)
    wt = np.asarray(w0, dtype=float).copy()
    prev = wt.copy()
    trace = [_baseline_record(0, wt, orc, stepsize)]
    for k in range(1, T + 1):
        b = agd_momentum(k + 1) if beta is None else float(beta)
        y = wt + b * (wt - prev)
        prev = wt
        wt = y - stepsize * orc.grad_tilde(y)
        trace.append(_baseline_record(k, wt, orc, stepsize))
    return wt, trace


def _normalized_gd(orc, metric, lr_w, lr_g, T, w0, g0):
    w = np.asarray(w0, dtype=float).copy()
    g = float(g0)

    def recon(w, g):
        return g * w / np.sqrt(w @ metric.entries @ w)

    trace = [_baseline_record(0, recon(w, g), orc, lr_w, g, w)]
    for t in range(1, T + 1):
        gt = orc.grad_tilde(recon(w, g))
        dw = g * a_w_apply(w, metric, gt)
        dg = float(w @ gt) / np.sqrt(w @ metric.entries @ w)
        w, g = w - lr_w * dw, g - lr_g * dg
        trace.append(_baseline_record(t, recon(w, g), orc, lr_w, g, w))
    return recon(w, g), trace


def bn_gd_run(loss, source, lr_w, lr_g, T, w0, g0=None, engine=DEFAULT_ENGINE, stats=None):
    """Fixed-step descent on (w, g) with w_tilde = g w/|w|_S."""
    orc = _Oracle(loss, source, engine, stats)
    w0 = np.asarray(w0, dtype=float)
    if g0 is None:
        g0 = np.sqrt(w0 @ orc.sigma.entries @ w0)
    return _normalized_gd(orc, orc.sigma, lr_w, lr_g, T, w0, g0)


def wn_gd_run(loss, source, lr_w, lr_g, T, w0, g0=None, engine=DEFAULT_ENGINE, stats=None):
    """Same as ``bn_gd_run`` with the Euclidean norm in place of |.|_S."""
    orc = _Oracle(loss, source, engine, stats)
    w0 = np.asarray(w0, dtype=float)
    if g0 is None:
        g0 = np.linalg.norm(w0)
    return _normalized_gd(orc, SpdMatrix.from_array(np.eye(orc.sigma.dim)), lr_w, lr_g, T, w0, g0)


def source_geometry(loss, source, engine=DEFAULT_ENGINE, stats=None):
    """(model, zeta) for a source: exact moments and sup|phi''| L analytically,
    sample moments and the spectral estimate otherwise."""
    orc = _Oracle(loss, source, engine, stats)
    if orc.mode == "analytic":
        return orc.model, zeta_analytic(loss, orc.sigma)
    st = stats if stats is not None else compute_stats(source)
    return orc.model, st.zeta_sup
