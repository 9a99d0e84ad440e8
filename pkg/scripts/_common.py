import argparse
import os
from dataclasses import replace

from normgrad.harness import load_config, run_experiment

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))


def parse(description, config):
    p = argparse.ArgumentParser(description=description)
    p.add_argument("--config", default=os.path.join(ROOT, "configs", config))
    p.add_argument("--out", default=os.path.join(ROOT, "results"))
    p.add_argument("--quick", action="store_true", help="two seeds and fewer iterations")
    return p.parse_args()


def run(args, quick_iters):
    cfg = load_config(args.config)
    if args.quick:
        cfg = replace(cfg, seeds=cfg.seeds[:2], iters=min(cfg.iters, quick_iters))
    rows = run_experiment(cfg, args.out)
    print(f"wrote {len(rows)} rows to {os.path.join(args.out, cfg.experiment + '.csv')}")
    return cfg, rows


def medians(rows, field, iters):
    """Median of ``field`` over runs at the given iterations, per method."""
    out = {}
    for r in rows:
        if r.iter in iters:
            out.setdefault(r.method, {}).setdefault(r.iter, []).append(getattr(r, field))
    return {m: {t: sorted(v)[len(v) // 2] for t, v in d.items()} for m, d in out.items()}


def table(title, med, iters):
    print(title)
    print("  " + "method".ljust(10) + "".join(f"t={t}".rjust(12) for t in iters))
    for m, d in sorted(med.items()):
        print("  " + m.ljust(10) + "".join(f"{d.get(t, float('nan')):12.3e}" for t in iters))
