"""One hidden layer tanh network trained unit by unit.

F(z) = sum_i theta_i tanh(z^T w_tilde_i) with frozen output weights theta
and f = E[l(F(z))].  For Gaussian z, Stein's identity splits the gradient
of unit i as

    grad_i / theta_i = alpha_i u + beta_i S w_tilde_i + sum_j gamma_ij S w_tilde_j

    beta_i     = E[l'(F) tanh''(z^T w_tilde_i)]
    gamma_ij   = theta_j E[l''(F) tanh'(z^T w_tilde_i) tanh'(z^T w_tilde_j)]
    alpha_i    = E[l'(F) tanh'(z^T w_tilde_i)] - beta_i u^T w_tilde_i
                 - sum_j gamma_ij u^T w_tilde_j

If the units before i sit on the line w_tilde_j = c_j S^{-1} u and the units
after i are zero, the direction gradient of unit i is theta_i g_i xi A_w u
with xi = alpha_i + sum_{j<i} gamma_ij c_j, and the stepsize

    s = -|w|_S^3 / (L theta_i g_i xi u^T w)

turns each direction update into an adaptive Rayleigh step.

Gaussian expectations over the m jointly normal projections are taken on
one fixed seeded sample of z, so every quantity is deterministic.
"""
import warnings
from dataclasses import dataclass, field

import numpy as np

from .gdnp import bisection, BracketError, find_init
from .losses import LossSpec, phi_all, phi_d12
from .model import EmpiricalDataset, SpdModel, sample_gaussian
from .rayleigh import rho
from .sgeom import a_w_apply, sin2_s_angle


@dataclass(frozen=True, eq=False)
class MlpParams:
    dirs: np.ndarray
    scales: np.ndarray
    theta: np.ndarray

    def __post_init__(self):
        dirs = np.array(self.dirs, dtype=float)
        scales = np.array(self.scales, dtype=float).reshape(-1)
        theta = np.array(self.theta, dtype=float).reshape(-1)
        if dirs.ndim != 2 or dirs.shape[0] != scales.size or scales.size != theta.size:
            raise ValueError(f"inconsistent shapes dirs={dirs.shape} scales={scales.shape} theta={theta.shape}")
        for a in (dirs, scales, theta):
            a.setflags(write=False)
        object.__setattr__(self, "dirs", dirs)
        object.__setattr__(self, "scales", scales)
        object.__setattr__(self, "theta", theta)

    @classmethod
    def zeros(cls, m, d, theta=None):
        theta = np.full(m, 1.0 / m) if theta is None else np.asarray(theta, dtype=float)
        return cls(np.zeros((m, d)), np.ones(m), theta)

    @property
    def m(self):
        return self.dirs.shape[0]

    @property
    def d(self):
        return self.dirs.shape[1]

    def active(self):
        return np.any(self.dirs != 0.0, axis=1)

    def w_tilde(self, sigma):
        """Rows g_i w_i/|w_i|_S; rows of inactive units are zero."""
        out = np.zeros_like(self.dirs)
        for i in np.flatnonzero(self.active()):
            w = self.dirs[i]
            out[i] = self.scales[i] * w / np.sqrt(w @ sigma.entries @ w)
        return out

    def with_unit(self, i, w, g):
        dirs = self.dirs.copy()
        scales = self.scales.copy()
        dirs[i] = w
        scales[i] = g
        return MlpParams(dirs, scales, self.theta)


@dataclass(frozen=True)
class UnitGradDecomp:
    alpha: float
    beta: float
    gamma: np.ndarray
    xi: float
    c: np.ndarray = field(default=None)


@dataclass(frozen=True)
class UnitTraceRecord:
    unit: int
    t: int
    objective: float
    grad_tilde_norm_sinv: float
    partial_g: float
    g: float
    xi: float
    s_t: float
    rho: float
    sin2: float
    premise_residual: float
    bracket: str = ""


@dataclass(frozen=True)
class UnitConfig:
    """Per-unit settings.

    The scale search starts from ``bracket``, mirrored to the negative side
    when f decreases for negative g at g = 0 (``orient``).  From the second
    iteration on, a bracket of half width ``warm`` around the previous g is
    tried first.  Without a sign change the descent-side end is taken
    ("clip"); expanding instead tends to run into the saturated region
    where every tanh is flat and the gradient vanishes spuriously.
    Training stops early once the squared gradient norm drops to
    ``grad_tol``.
    """
    t_d: int = 200
    t_s: int = 40
    bracket: tuple = (0.0, 64.0)
    orient: bool = True
    warm: float = 0.0
    open_bracket: str = "clip"
    max_expand: int = 60
    xi_tol: float = 1e-14
    grad_tol: float = 0.0


@dataclass(frozen=True)
class McEngine:
    samples: int = 200000
    seed: int = 0


def forward(p, z, sigma):
    """Network output for one input vector or a batch of rows."""
    z = np.asarray(z, dtype=float)
    if z.shape[-1] != p.d:
        raise ValueError(f"input dim {z.shape[-1]} does not match network dim {p.d}")
    return np.tanh(z @ p.w_tilde(sigma).T) @ p.theta


_SAMPLE_CACHE = {}


def gaussian_sample(model, mc):
    """Seeded draw of z rows from the model, cached per (model, engine)."""
    key = (id(model), mc.samples, mc.seed)
    hit = _SAMPLE_CACHE.get(key)
    if hit is not None and hit[0] is model:
        return hit[1]
    z = sample_gaussian(model, mc.samples, mc.seed).z_rows
    z.setflags(write=False)
    if len(_SAMPLE_CACHE) > 8:
        _SAMPLE_CACHE.clear()
    _SAMPLE_CACHE[key] = (model, z)
    return z


def _rows_sigma(source, mc):
    if isinstance(source, SpdModel):
        return gaussian_sample(source, mc), source.sigma
    if isinstance(source, EmpiricalDataset):
        return source.z_rows, None
    raise TypeError(f"unsupported source {type(source).__name__}")


def nn_objective(p, loss, source, sigma=None, mc=McEngine()):
    """Mean of l(F(z)); Gaussian sources are averaged over the seeded sample."""
    z, sig = _rows_sigma(source, mc)
    sig = sig if sig is not None else sigma
    return float(np.mean(phi_all(loss, forward(p, z, sig))[0]))


def unit_gradient_tilde(p, i, loss, source, sigma=None, mc=McEngine()):
    """Gradient of the objective in w_tilde_i.

    Empirical sources: sample mean of l'(F) theta_i tanh'(z^T w_tilde_i) z.
    Gaussian sources: the Stein form with seeded Monte Carlo scalars.
    """
    if isinstance(source, SpdModel):
        dec = unit_decomp(p, i, loss, source, mc, premise_tol=np.inf)
        wt = p.w_tilde(source.sigma)
        s = source.sigma.entries
        return p.theta[i] * (dec.alpha * source.u + dec.beta * (s @ wt[i]) + s @ (wt.T @ dec.gamma))
    z = source.z_rows
    wt = p.w_tilde(sigma)
    proj = z @ wt.T
    f = np.tanh(proj) @ p.theta
    l1 = phi_all(loss, f)[1]
    t1 = 1.0 - np.tanh(proj[:, i]) ** 2
    return p.theta[i] * (z.T @ (l1 * t1)) / z.shape[0]


def alignment_scalars(wt, model):
    """c_j with w_tilde_j ~ c_j S^{-1}u by a least squares fit."""
    x = model.sinv_u
    return wt @ x / (x @ x)


def _scalars(loss, proj, theta, i):
    """(E[l' t1_i], E[l' t2_i], gamma_i.) on the sample projections."""
    t = np.tanh(proj)
    t1 = 1.0 - t * t
    f = t @ theta
    _, l1, l2 = phi_all(loss, f)
    t1i = t1[:, i]
    e_l1t1 = float(np.mean(l1 * t1i))
    beta = float(np.mean(l1 * (-2.0 * t[:, i] * t1i)))
    gamma = theta * ((l2 * t1i) @ t1) / proj.shape[0]
    return e_l1t1, beta, gamma


class PremiseWarning(UserWarning):
    pass


def premise_residual(wt, i, model):
    """Largest S-sine of an earlier nonzero unit to the solution line; inf if a later unit is nonzero."""
    res = 0.0
    for j in range(i):
        if np.any(wt[j]):
            res = max(res, np.sqrt(sin2_s_angle(wt[j], model.sinv_u, model.sigma)))
    if np.any(wt[i + 1:]):
        res = np.inf
    return res


def unit_decomp(p, i, loss, model, mc=McEngine(), premise_tol=1e-4):
    """alpha, beta, gamma and xi for unit i; warns when the other units do not fit the premise."""
    z = gaussian_sample(model, mc)
    wt = p.w_tilde(model.sigma)
    res = premise_residual(wt, i, model)
    if res > premise_tol:
        warnings.warn(f"unit {i}: other units are neither aligned nor zero (residual {res:.3g}); "
                      "xi does not describe the direction gradient", PremiseWarning, stacklevel=2)
    proj = z @ wt.T
    e_l1t1, beta, gamma = _scalars(loss, proj, p.theta, i)
    uw = wt @ model.u
    alpha = e_l1t1 - beta * uw[i] - float(gamma @ uw)
    c = alignment_scalars(wt, model)
    xi = alpha + float(gamma[:i] @ c[:i])
    return UnitGradDecomp(alpha, beta, gamma, xi, c)


def xi_bound(loss, p, i, c):
    """2 Phi^2 + 2 i sum_{j<i} (theta_j c_j)^2 with i counted from 1."""
    phi = loss.phi_bound
    return 2.0 * phi ** 2 + 2.0 * (i + 1) * float(np.sum((p.theta[:i] * c[:i]) ** 2))


class _UnitProblem:
    """Unit i of the network with the others frozen, on the fixed sample."""

    def __init__(self, p, i, loss, model, mc):
        self.p, self.i, self.loss, self.model = p, i, loss, model
        self.z = gaussian_sample(model, mc)
        self.s = model.sigma.entries
        self.u = model.u
        wt = p.w_tilde(model.sigma)
        self.wt = wt
        others = np.ones(p.m, dtype=bool)
        others[i] = False
        self.proj_rest = self.z @ wt.T
        t_rest = np.tanh(self.proj_rest)
        self.f_rest = t_rest[:, others] @ p.theta[others]
        self.t1_rest = 1.0 - t_rest * t_rest
        self.uw_rest = wt @ self.u
        self.c = alignment_scalars(wt, model)

    def _stats(self, w_hat, proj_hat, g):
        th = self.p.theta
        i = self.i
        ti = np.tanh(g * proj_hat)
        t1i = 1.0 - ti * ti
        l1, l2 = phi_d12(self.loss, self.f_rest + th[i] * ti)
        n = proj_hat.shape[0]
        e_l1t1 = float(l1 @ t1i) / n
        beta = float(l1 @ (-2.0 * ti * t1i)) / n
        v = l2 * t1i
        gamma = th * (v @ self.t1_rest) / n
        gamma[i] = th[i] * float(v @ t1i) / n
        uw = self.uw_rest.copy()
        uw[i] = g * float(self.u @ w_hat)
        alpha = e_l1t1 - beta * uw[i] - float(gamma @ uw)
        xi = alpha + float(gamma[:i] @ self.c[:i])
        return alpha, beta, gamma, xi

    def gradient(self, w, g):
        """(grad wrt w_tilde_i, grad wrt w, d/dg, xi) in Stein form."""
        nw = np.sqrt(w @ self.s @ w)
        w_hat = w / nw
        alpha, beta, gamma, xi = self._stats(w_hat, self.z @ w_hat, g)
        wt = self.wt.copy()
        wt[self.i] = g * w_hat
        th = self.p.theta[self.i]
        gt = th * (alpha * self.u + beta * (self.s @ wt[self.i]) + self.s @ (wt.T @ gamma))
        gw = g * a_w_apply(w, self.model.sigma, gt)
        dg = float(w_hat @ gt)
        return gt, gw, dg, xi

    def partial_g_fn(self, w):
        nw = np.sqrt(w @ self.s @ w)
        w_hat = w / nw
        proj_hat = self.z @ w_hat
        sw_hat = self.s @ w_hat
        th = self.p.theta[self.i]
        uwh = float(self.u @ w_hat)
        # w_hat^T S w_tilde_j for the frozen units
        cross = self.wt @ sw_hat

        def f(g):
            alpha, beta, gamma, _ = self._stats(w_hat, proj_hat, g)
            cr = cross.copy()
            cr[self.i] = g
            return th * (alpha * uwh + beta * g + float(gamma @ cr))
        return f

    def objective(self, w, g):
        w_hat = w / np.sqrt(w @ self.s @ w)
        ti = np.tanh(g * (self.z @ w_hat))
        return float(np.mean(phi_all(self.loss, self.f_rest + self.p.theta[self.i] * ti)[0]))

    def premise_residual(self):
        return premise_residual(self.wt, self.i, self.model)


def train_unit(p, i, loss, model, cfg=UnitConfig(), mc=McEngine(), w0=None, seed=0):
    """Optimize unit i of ``p`` with the others frozen; returns (params, trace)."""
    if p.theta[i] == 0.0:
        return p, []
    if w0 is None:
        w0 = find_init(model, seed)
    prob = _UnitProblem(p, i, loss, model, mc)
    premise = prob.premise_residual()
    w = np.asarray(w0, dtype=float).copy()
    g = float(p.scales[i]) if p.scales[i] != 0.0 else 1.0
    big_l = model.big_l
    trace = []

    def record(t, w, g, s, status):
        grad = prob.gradient(w, g)
        gt, _, dg, xi = grad
        trace.append(UnitTraceRecord(
            unit=i, t=t, objective=prob.objective(w, g),
            grad_tilde_norm_sinv=float(gt @ model.sigma.solve(gt)), partial_g=dg, g=g, xi=xi,
            s_t=s, rho=rho(w, model), sin2=sin2_s_angle(w, model.sinv_u, model.sigma),
            premise_residual=premise, bracket=status))
        return trace[-1], grad

    _, grad = record(0, w, g, 0.0, "init")
    for t in range(1, cfg.t_d + 1):
        _, gw, _, xi = grad
        uw = float(model.u @ w)
        s = 0.0
        if abs(xi) > cfg.xi_tol and uw != 0.0:
            nw = np.sqrt(w @ prob.s @ w)
            s = -nw ** 3 / (big_l * p.theta[i] * g * xi * uw)
            w = w - s * gw
        g, status = _unit_scale_search(prob.partial_g_fn(w), g, cfg, warm=t > 1)
        rec, grad = record(t, w, g, s, status)
        if rec.grad_tilde_norm_sinv <= cfg.grad_tol:
            break
    return p.with_unit(i, w, g), trace


def _unit_scale_search(fn, g_prev, cfg, warm):
    if warm and cfg.warm > 0.0:
        a, b = g_prev - cfg.warm, g_prev + cfg.warm
        if fn(a) < 0.0 < fn(b):
            return bisection(fn, (a, b), cfg.t_s, 0), "warm"
    lo, hi = cfg.bracket
    if cfg.orient and fn(0.0) > 0.0:
        lo, hi = -hi, -lo
    expand = cfg.max_expand if cfg.open_bracket == "expand" else 0
    try:
        return bisection(fn, (lo, hi), cfg.t_s, expand), "ok"
    except BracketError as err:
        if cfg.open_bracket != "clip":
            raise
        return (err.b if err.fa < 0.0 else err.a), "clipped"


def train_mlp_gdnp(init, loss, model, cfgs=None, mc=McEngine(), seed=0):
    """Units optimized in order 1..m; returns (params, list of per-unit traces).

    ``init`` should have zero directions and unit scales; a start w_0 with
    rho(w_0) != 0 is drawn for each unit from ``seed``.
    """
    p = init
    cfgs = cfgs if cfgs is not None else [UnitConfig()] * p.m
    if isinstance(cfgs, UnitConfig):
        cfgs = [cfgs] * p.m
    rng = np.random.default_rng(seed)
    traces = []
    for i in range(p.m):
        p, tr = train_unit(p, i, loss, model, cfgs[i], mc, seed=int(rng.integers(2 ** 63)))
        traces.append(tr)
    return p, traces


def single_unit_loss(outer, theta):
    """The halfspace loss seen by a lone unit: s -> outer(theta tanh s)."""
    return LossSpec("tanh_unit", outer=outer, theta=float(theta))
