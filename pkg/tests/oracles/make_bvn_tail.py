"""
Regenerate tests/data/bvn_tail_oracle.json.

Deep-tail values of log P(X1 <= a, X2 <= b) for the standard bivariate
normal, from the one-dimensional representation
``int_{-inf}^{a} phi(x) Phi((b - r x) / sqrt(1 - r^2)) dx`` evaluated in
mpmath at 50 digits. The interval is broken at many points so the adaptive
rule always sees the narrow peak.

    python tests/oracles/make_bvn_tail.py
"""

import json
import pathlib

import mpmath as mp

mp.mp.dps = 50

POINTS = [
    (-2.317, -1.782, -0.904),
    (-3.0, -3.0, -0.5),
    (-4.0, -2.0, -0.3),
    (-5.0, -5.0, 0.2),
    (-6.0, -4.0, 0.5),
    (-3.5, -3.5, 0.8),
    (-8.0, -8.0, 0.9),
    (-2.0, -2.0, -0.95),
    (-1.0, -1.0, -0.99),
    (-7.0, -3.0, -0.7),
    (-10.0, -9.0, 0.4),
    (-4.5, 1.0, -0.6),
    (-6.0, -6.0, 0.99),
    (-12.0, -12.0, 0.0001),
    (0.5, -6.0, 0.3),
]


def log_bvn(a, b, r):
    a, b, r = mp.mpf(a), mp.mpf(b), mp.mpf(r)
    s = mp.sqrt(1 - r * r)

    def f(x):
        return mp.npdf(x) * mp.ncdf((b - r * x) / s)

    lo = a - 40
    pts = [-mp.inf] + list(mp.linspace(lo, a, 400))
    return mp.log(mp.quad(f, pts))


def main():
    rows = [{"x1": a, "x2": b, "rho": r, "logp": float(log_bvn(a, b, r))} for a, b, r in POINTS]
    out = pathlib.Path(__file__).resolve().parent.parent / "data" / "bvn_tail_oracle.json"
    out.write_text(json.dumps({"method": "mpmath quad, 50 digits, 400 breakpoints", "points": rows},
                              indent=1) + "\n")
    print(f"wrote {len(rows)} points to {out}")


if __name__ == "__main__":
    main()
