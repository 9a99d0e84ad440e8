"""Multi-unit network trained one unit at a time with GDNP.

Prints the gradient norm of each unit and the pairwise alignment of the
trained directions.
"""
from _common import medians, parse, run, table

from normgrad.harness import build_source
from normgrad.sgeom import sin2_s_angle

if __name__ == "__main__":
    args = parse(__doc__.splitlines()[0], "mlp.toml")
    cfg, rows = run(args, 60)
    iters = [t for t in (0, 10, 25, 50, 100, 200) if t <= cfg.iters]
    table("median gradient norm per unit", medians(rows, "grad_norm", iters), iters)
    last = {}
    for r in rows:
        if r.run_id == cfg.seeds[0]:
            last[r.method] = r
    print("final sin^2 to the optimal direction:")
    for k, r in sorted(last.items()):
        print(f"  {k}: {r.sin2:.3e} at t={r.iter}")
