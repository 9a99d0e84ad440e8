"""Least squares: Rayleigh-quotient steps against GD and AGD on a synthetic model.

Prints the median suboptimality over seeds; the model optimum is -u^T S^{-1} u.
"""
from _common import parse, run, table

from normgrad.harness import build_source

if __name__ == "__main__":
    args = parse(__doc__.splitlines()[0], "ols.toml")
    cfg, rows = run(args, 40)
    m = build_source(cfg)
    f_star = -float(m.u @ m.sinv_u)
    iters = [t for t in (0, 10, 25, 50, 100) if t <= cfg.iters]
    med = {}
    for r in rows:
        if r.iter in iters:
            med.setdefault(r.method, {}).setdefault(r.iter, []).append(r.objective - f_star)
    med = {k: {t: sorted(v)[len(v) // 2] for t, v in d.items()} for k, d in med.items()}
    table("median suboptimality", med, iters)
