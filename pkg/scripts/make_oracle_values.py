"""Regenerate tests/oracle_values.py with 30-digit quadrature (needs mpmath).

The integrand is split every 2/sd around the logistic kink at s = 0 so the
adaptive rule resolves it for small variances.
"""
import os

import mpmath as mp

KINDS = ("softplus", "sigmoid")
MEANS = (-10.0, -3.0, 0.0, 0.3, 2.0, 10.0)
VARS = (0.01, 1.0, 4.0, 25.0)
OUT = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "tests", "oracle_values.py")


def derivs(kind, s):
    sg = 1 / (1 + mp.exp(-s))
    if kind == "softplus":
        return mp.log1p(mp.exp(s)), sg, sg * (1 - sg)
    return sg, sg * (1 - sg), sg * (1 - sg) * (1 - 2 * sg)


def expectation(kind, k, m, var):
    sd = mp.sqrt(var)
    g = lambda x: derivs(kind, m + sd * x)[k] * mp.exp(-x * x / 2) / mp.sqrt(2 * mp.pi)
    x0 = -m / sd
    inner = [x0 + j / sd for j in range(-40, 41, 2)]
    pts = [mp.mpf(-40)] + [b for b in inner if -40 < b < 40] + [mp.mpf(40)]
    return mp.quad(g, pts)


def main():
    mp.mp.dps = 30
    lines = ['"""Gaussian expectations of loss derivatives from 30-digit adaptive quadrature (mpmath).', "",
             "Keys are (kind, k, m, var); values E[phi^(k)(s)] for s ~ N(m, var).", '"""', "",
             "GAUSSIAN_EXPECTATIONS = {"]
    for kind in KINDS:
        for m in MEANS:
            for var in VARS:
                for k in range(3):
                    v = float(expectation(kind, k, mp.mpf(m), mp.mpf(var)))
                    lines.append(f"    ({kind!r}, {k}, {m!r}, {var!r}): {v!r},".replace("'", '"'))
    lines.append("}")
    with open(OUT, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    print(f"wrote {OUT}")


if __name__ == "__main__":
    main()
