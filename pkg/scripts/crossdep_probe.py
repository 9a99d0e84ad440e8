"""Layer cross-dependency of a deep tanh network under plain and normalized GD.

Prints the median over seeds of the downstream dependency of the middle
layer at each snapshot; the per-pair values are in crossdep_probe.csv.
"""
import csv
import os

import numpy as np
from _common import parse, run

if __name__ == "__main__":
    args = parse(__doc__.splitlines()[0], "crossdep.toml")
    cfg, _ = run(args, 250)
    center = cfg.probe.hidden // 2
    with open(os.path.join(args.out, "crossdep_probe.csv")) as fh:
        data = list(csv.DictReader(fh))
    cols = [c for c in data[0] if c.startswith(f"dep_{center}_") and int(c.split("_")[2]) > center]
    snaps = {}
    for row in data:
        if row[cols[0]]:
            vals = [float(row[c]) for c in cols]
            snaps.setdefault(row["method"], {}).setdefault(int(row["iter"]), []).append(float(np.median(vals)))
    print(f"median downstream dependency of layer {center} (over seeds)")
    for method, d in sorted(snaps.items()):
        print("  " + method.ljust(4) + "  ".join(f"t={t}: {np.median(v):.3e}" for t, v in sorted(d.items())))
