"""Experiment configs, trace files and the ``normgrad`` command line.

A run is one (method, seed) cell.  Every cell appends rows of the form

    method, run_id, iter, objective, grad_norm, rho, sin2, g, stepsize, wall_ns

to ``<out>/<experiment>.csv``; ``<experiment>_summary.csv`` holds the 5%,
50% and 95% quantiles over runs for each (method, iter).  The crossdep
experiment also writes ``crossdep_probe.csv`` with the dependency columns.

Exit codes: 0 ok, 1 solver error, 2 config error.
"""
import argparse
import csv
import math
import os
import sys
import time
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np
import tomli
from scipy.stats import ortho_group

from .gdnp import GdnpConfig, agd_run, bn_gd_run, find_init, gd_run, gdnp_run, source_geometry, wn_gd_run
from .losses import KINDS, LossSpec
from .mlp import McEngine, MlpParams, UnitConfig, train_mlp_gdnp
from .model import SpdModel, center_and_fold, load_libsvm, sample_gaussian
from .probe import DeepNetProbe, probe_csv_rows, synthetic_probe_data, train_probe
from .rayleigh import solve_ols_gdnp

EXPERIMENTS = ("ols", "halfspace", "mlp", "crossdep")
METHODS = ("gdnp", "gd", "agd", "bn", "wn")
ALLOWED = {
    "ols": ("gdnp", "gd", "agd"),
    "halfspace": METHODS,
    "mlp": ("gdnp",),
    "crossdep": ("gd", "bn"),
}
COLUMNS = ("method", "run_id", "iter", "objective", "grad_norm", "rho", "sin2", "g", "stepsize", "wall_ns")
OUT_ENV = "NORMGRAD_OUT"


class ConfigError(ValueError):
    pass


class SolverError(RuntimeError):
    pass


@dataclass(frozen=True)
class SourceConfig:
    """gaussian: n = 0 uses the exact model, n > 0 draws that many samples."""
    kind: str = "gaussian"
    d: int = 20
    n: int = 0
    mu: float = 1.0
    big_l: float = 10.0
    seed: int = 0
    path: str = ""
    n_features: int = 0


@dataclass(frozen=True)
class GdnpSection:
    t_s: int = 40
    bracket: tuple = (-10.0, 10.0)
    open_bracket: str = ""  # empty: "clip" for sigmoid, "expand" otherwise
    g0: float = 1.0


@dataclass(frozen=True)
class MlpSection:
    units: int = 4
    samples: int = 50000
    mc_seed: int = 0
    t_s: int = 30
    warm: float = 0.5
    bracket: tuple = (0.0, 64.0)
    grad_tol: float = 0.0


@dataclass(frozen=True)
class ProbeSection:
    n: int = 512
    d: int = 10
    classes: int = 3
    width: int = 20
    hidden: int = 6
    loss: str = "cross_entropy"
    label_noise: float = 0.3
    data_seed: int = 0
    lr: float = 0.1
    lr_g_multiplier: float = 10.0
    dep_every: int = 250


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    source: SourceConfig = field(default_factory=SourceConfig)
    loss: str = "softplus"
    methods: tuple = None  # None: gd and bn for crossdep, gdnp otherwise
    stepsizes: dict = field(default_factory=dict)
    iters: int = 100
    seeds: tuple = tuple(range(10))
    out: str = ""
    timing: bool = True
    gdnp: GdnpSection = field(default_factory=GdnpSection)
    mlp: MlpSection = field(default_factory=MlpSection)
    probe: ProbeSection = field(default_factory=ProbeSection)

    def __post_init__(self):
        if self.methods is None:
            object.__setattr__(self, "methods", ("gd", "bn") if self.experiment == "crossdep" else ("gdnp",))

    def validate(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.experiment!r}; choose from {EXPERIMENTS}")
        if not self.methods:
            raise ConfigError("at least one method is required")
        for m in self.methods:
            if m not in METHODS:
                raise ConfigError(f"unknown method {m!r}; choose from {METHODS}")
            if m not in ALLOWED[self.experiment]:
                raise ConfigError(f"method {m!r} is not available for {self.experiment}")
        if self.loss not in KINDS:
            raise ConfigError(f"unknown loss {self.loss!r}")
        s = self.source
        if s.kind == "gaussian":
            if not 0.0 < s.mu <= s.big_l or s.d < 1 or s.n < 0:
                raise ConfigError(f"invalid gaussian source {s}")
        elif s.kind == "libsvm":
            if not s.path:
                raise ConfigError("libsvm source needs a path")
            if self.experiment in ("ols", "mlp"):
                raise ConfigError(f"{self.experiment} needs a gaussian source")
        else:
            raise ConfigError(f"unknown source kind {s.kind!r}")
        if self.experiment == "mlp" and s.n != 0:
            raise ConfigError("mlp uses the exact gaussian model (source.n = 0)")
        if self.iters < 0 or not self.seeds:
            raise ConfigError("need iters >= 0 and at least one seed")
        return self


def _section(cls, raw, name):
    if raw is None:
        return cls()
    if not isinstance(raw, dict):
        raise ConfigError(f"[{name}] must be a table")
    names = {f.name for f in fields(cls)}
    bad = set(raw) - names
    if bad:
        raise ConfigError(f"unknown keys in [{name}]: {sorted(bad)}")
    kw = {k: tuple(v) if isinstance(v, list) else v for k, v in raw.items()}
    try:
        return cls(**kw)
    except TypeError as exc:
        raise ConfigError(f"[{name}]: {exc}") from exc


def config_from_dict(raw, experiment=None):
    raw = dict(raw)
    exp = raw.pop("experiment", None)
    if experiment is not None and exp is not None and exp != experiment:
        raise ConfigError(f"config is for {exp!r}, command line asked for {experiment!r}")
    exp = experiment or exp
    if exp is None:
        raise ConfigError("no experiment given")
    sections = {
        "source": _section(SourceConfig, raw.pop("source", None), "source"),
        "gdnp": _section(GdnpSection, raw.pop("gdnp", None), "gdnp"),
        "mlp": _section(MlpSection, raw.pop("mlp", None), "mlp"),
        "probe": _section(ProbeSection, raw.pop("probe", None), "probe"),
    }
    top = {f.name for f in fields(ExperimentConfig)} - set(sections) - {"experiment"}
    bad = set(raw) - top
    if bad:
        raise ConfigError(f"unknown top-level keys: {sorted(bad)}")
    kw = {k: tuple(v) if isinstance(v, list) else v for k, v in raw.items()}
    if "stepsizes" in kw and not isinstance(kw["stepsizes"], dict):
        raise ConfigError("stepsizes must be a table")
    return ExperimentConfig(experiment=exp, **sections, **kw).validate()


def load_config(path, experiment=None):
    try:
        with open(path, "rb") as fh:
            raw = tomli.load(fh)
    except (OSError, tomli.TOMLDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return config_from_dict(raw, experiment)


def synth_model(d, mu, L, seed):
    """Sigma = Q diag(linspace(mu, L)) Q^T with Q Haar-random; u halved until Sigma - u u^T is PD."""
    if not 0.0 < mu <= L:
        raise ValueError(f"need 0 < mu <= L, got mu={mu}, L={L}")
    rng = np.random.default_rng(seed)
    spectrum = np.linspace(mu, L, d)
    if mu == L:
        sigma = mu * np.eye(d)
    elif d == 1:
        sigma = np.array([[mu]])
    else:
        q = ortho_group.rvs(d, random_state=rng)
        sigma = (q * spectrum) @ q.T
        sigma = 0.5 * (sigma + sigma.T)
    u = rng.standard_normal(d)
    while np.linalg.eigvalsh(sigma - np.outer(u, u))[0] <= 0.0:
        u = u / 2.0
    return SpdModel.from_arrays(u, sigma)


def build_source(cfg):
    s = cfg.source
    if s.kind == "libsvm":
        try:
            x, y = load_libsvm(s.path, s.n_features or None)
        except OSError as exc:
            raise ConfigError(f"cannot read libsvm file {s.path}: {exc}") from exc
        return center_and_fold(x, y)
    m = synth_model(s.d, s.mu, s.big_l, s.seed)
    if s.n == 0:
        return m
    return sample_gaussian(m, s.n, s.seed)


@dataclass(frozen=True)
class TraceRow:
    method: str
    run_id: int
    iter: int
    objective: float
    grad_norm: float
    rho: float
    sin2: float
    g: float
    stepsize: float
    wall_ns: int


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return str(int(v))
    return str(v)


def write_trace(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(COLUMNS)
        for r in rows:
            w.writerow([_fmt(getattr(r, c)) for c in COLUMNS])


def read_trace(path):
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        header = tuple(next(rd))
        if header != COLUMNS:
            raise ValueError(f"unexpected header {header}")
        return [TraceRow(r[0], int(r[1]), int(r[2]), *(float(x) for x in r[3:9]), int(r[9])) for r in rd]


def summarize(rows, qs=(0.05, 0.5, 0.95)):
    """Quantiles over runs of objective and grad_norm for each (method, iter)."""
    cells = {}
    for r in rows:
        cells.setdefault((r.method, r.iter), []).append((r.objective, r.grad_norm))
    header = ["method", "iter", "n_runs"]
    for col in ("objective", "grad_norm"):
        header += [f"{col}_q{int(round(q * 100)):02d}" for q in qs]
    out = []
    for (method, it), vals in sorted(cells.items()):
        a = np.array(vals, dtype=float)
        row = [method, it, len(vals)]
        for k in range(2):
            row += [repr(float(np.quantile(a[:, k], q))) for q in qs]
        out.append(row)
    return header, out


def _halfspace_rows(method, run_id, trace, wall):
    last = {r.t: r for r in trace}  # with zero iterations the scale search re-records t = 0
    return [TraceRow(method, run_id, r.t, r.objective, math.sqrt(max(r.grad_tilde_norm_sinv, 0.0)),
                     r.rho, r.sin2, r.g, r.s_t, wall) for r in last.values()]


def _default_step(cfg, key, fallback):
    v = cfg.stepsizes.get(key)
    return float(fallback if v is None else v)


def _run_cell(cfg, method, seed, source, geometry):
    model, zeta = geometry
    if cfg.experiment == "ols":
        w0 = find_init(model, seed)
        if method == "gdnp":
            _, g, trace = solve_ols_gdnp(model, w0, cfg.iters)
            return [TraceRow(method, seed, r.t, r.rho, r.grad_norm_sinv, r.rho, r.sin2,
                             float(g) if r.t == cfg.iters else math.nan, r.eta, 0) for r in trace]
        loss = LossSpec("ols")
        step = _default_step(cfg, method, 1.0 / zeta)
        run = gd_run if method == "gd" else agd_run
        _, trace = run(loss, source, step, cfg.iters, w0)
        return _halfspace_rows(method, seed, trace, 0)

    if cfg.experiment == "halfspace":
        loss = LossSpec(cfg.loss)
        w0 = find_init(model, seed)
        if method == "gdnp":
            ob = cfg.gdnp.open_bracket or ("clip" if cfg.loss == "sigmoid" else "expand")
            gc = GdnpConfig(t_d=cfg.iters, t_s=cfg.gdnp.t_s, bracket=tuple(cfg.gdnp.bracket),
                            open_bracket=ob, g0=cfg.gdnp.g0)
            _, trace = gdnp_run(loss, source, gc, w0)
        elif method in ("gd", "agd"):
            step = _default_step(cfg, method, 1.0 / zeta)
            _, trace = (gd_run if method == "gd" else agd_run)(loss, source, step, cfg.iters, w0)
        else:
            lr_w = _default_step(cfg, method, 1.0 / zeta)
            lr_g = _default_step(cfg, method + "_g", lr_w)
            run = bn_gd_run if method == "bn" else wn_gd_run
            _, trace = run(loss, source, lr_w, lr_g, cfg.iters, w0)
        return _halfspace_rows(method, seed, trace, 0)

    if cfg.experiment == "mlp":
        mc = McEngine(cfg.mlp.samples, cfg.mlp.mc_seed)
        uc = UnitConfig(t_d=cfg.iters, t_s=cfg.mlp.t_s, warm=cfg.mlp.warm,
                        bracket=tuple(cfg.mlp.bracket), grad_tol=cfg.mlp.grad_tol)
        p0 = MlpParams.zeros(cfg.mlp.units, model.dim)
        _, traces = train_mlp_gdnp(p0, LossSpec(cfg.loss), model, uc, mc, seed=seed)
        rows = []
        for i, tr in enumerate(traces):
            rows += [TraceRow(f"gdnp:u{i + 1}", seed, r.t, r.objective,
                              math.sqrt(max(r.grad_tilde_norm_sinv, 0.0)), r.rho, r.sin2, r.g, r.s_t, 0)
                     for r in tr]
        return rows
    raise ConfigError(f"no cell runner for {cfg.experiment}")


def _probe_runs(cfg, method, seed):
    pc = cfg.probe
    data = synthetic_probe_data(pc.n, pc.d, pc.classes, pc.data_seed, pc.loss, label_noise=pc.label_noise)
    out = 1 if pc.loss == "softplus" else pc.classes
    net = DeepNetProbe.init([pc.d] + [pc.width] * pc.hidden + [out], seed=seed, loss=pc.loss)
    mode = "bn_gd" if method == "bn" else "gd"
    _, trace = train_probe(net, mode, cfg.iters, pc.lr, pc.lr_g_multiplier, source=data, dep_every=pc.dep_every)
    return trace


def run_experiment(cfg, out_dir=None):
    """Run every (method, seed) cell, write the trace and summary CSVs; returns the rows."""
    cfg.validate()
    out_dir = out_dir or cfg.out or os.environ.get(OUT_ENV) or "normgrad_out"
    os.makedirs(out_dir, exist_ok=True)
    rows = []
    probe_rows = []
    probe_header = None
    if cfg.experiment == "crossdep":
        for method in cfg.methods:
            for seed in cfg.seeds:
                t0 = time.perf_counter_ns()
                try:
                    trace = _probe_runs(cfg, method, seed)
                except (ArithmeticError, RuntimeError, ValueError, np.linalg.LinAlgError) as exc:
                    raise SolverError(f"method {method}, run {seed}: {exc}") from exc
                wall = time.perf_counter_ns() - t0 if cfg.timing else 0
                rows += [TraceRow(method, seed, r.iter, r.loss, r.grad_norm, math.nan, math.nan,
                                  math.nan, cfg.probe.lr, wall) for r in trace]
                header, prow = probe_csv_rows(trace)
                probe_header = ["method", "run_id"] + header
                probe_rows += [[method, seed] + r for r in prow]
    else:
        source = build_source(cfg)
        loss = LossSpec("ols" if cfg.experiment == "ols" else cfg.loss)
        try:
            geometry = source_geometry(loss, source)
        except (ArithmeticError, ValueError, np.linalg.LinAlgError) as exc:
            raise SolverError(f"source moments: {exc}") from exc
        for method in cfg.methods:
            for seed in cfg.seeds:
                t0 = time.perf_counter_ns()
                try:
                    cell = _run_cell(cfg, method, seed, source, geometry)
                except ConfigError:
                    raise
                except (ArithmeticError, RuntimeError, ValueError, np.linalg.LinAlgError) as exc:
                    raise SolverError(f"method {method}, run {seed}: {exc}") from exc
                wall = time.perf_counter_ns() - t0 if cfg.timing else 0
                rows += [replace(r, wall_ns=wall) for r in cell]
    write_trace(os.path.join(out_dir, f"{cfg.experiment}.csv"), rows)
    header, summ = summarize(rows)
    with open(os.path.join(out_dir, f"{cfg.experiment}_summary.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(summ)
    if probe_header is not None:
        with open(os.path.join(out_dir, "crossdep_probe.csv"), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(probe_header)
            w.writerows(probe_rows)
    return rows


def _parser():
    p = argparse.ArgumentParser(
        prog="normgrad",
        description="Run a normalized-coordinates optimization experiment and write CSV traces.",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
        epilog=f"Output directory: --out, else the config's out, else ${OUT_ENV}, else ./normgrad_out. "
               "Exit codes: 0 ok, 1 solver error, 2 config error.",
    )
    p.add_argument("experiment", choices=EXPERIMENTS)
    p.add_argument("--config", help="TOML config; built-in defaults are used when omitted")
    p.add_argument("--method", action="append", choices=METHODS,
                   help="method to run (repeatable); overrides the config list. default: gdnp (gd and bn for crossdep)")
    p.add_argument("--seed", action="append", type=int,
                   help="run seed (repeatable); overrides the config list. default: 0..9")
    p.add_argument("--loss", choices=KINDS, help="loss kind. default: softplus")
    p.add_argument("--iters", type=int, help="iteration count. default: 100")
    p.add_argument("--out", help="output directory")
    p.add_argument("--no-timing", action="store_true", help="write wall_ns = 0 so traces are byte-identical")
    p.add_argument("--show-config", action="store_true", help="print the resolved config and exit")
    return p


def main(argv=None):
    args = _parser().parse_args(argv)
    try:
        if args.config:
            cfg = load_config(args.config, args.experiment)
        else:
            cfg = ExperimentConfig(args.experiment)
        over = {}
        if args.method:
            over["methods"] = tuple(args.method)
        if args.seed:
            over["seeds"] = tuple(args.seed)
        if args.loss:
            over["loss"] = args.loss
        if args.iters is not None:
            over["iters"] = args.iters
        if args.out:
            over["out"] = args.out
        if args.no_timing:
            over["timing"] = False
        cfg = replace(cfg, **over).validate()
        if args.show_config:
            print(asdict(cfg))
            return 0
        rows = run_experiment(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except SolverError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return 1
    print(f"{cfg.experiment}: wrote {len(rows)} rows")
    return 0


if __name__ == "__main__":
    sys.exit(main())
