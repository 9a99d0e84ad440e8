"""Halfspace learning: GDNP against GD, AGD and the normalized-coordinate baselines.

Prints the median objective and the median gradient norm over seeds.
Pass --config configs/halfspace_a9a.toml to run on a9a.
"""
from _common import medians, parse, run, table

if __name__ == "__main__":
    args = parse(__doc__.splitlines()[0], "halfspace.toml")
    cfg, rows = run(args, 40)
    iters = [t for t in (0, 10, 25, 50, 100) if t <= cfg.iters]
    table("median objective", medians(rows, "objective", iters), iters)
    table("median gradient norm", medians(rows, "grad_norm", iters), iters)
