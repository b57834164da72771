#!/usr/bin/env python3
"""Derive the limiting even-height distribution on the modular ray.

A tuple (a_1, ..., a_k) of digits of degrees d_1, ..., d_k produces the
height profile 0 -> d_1 -> 0 -> d_2 -> ... -> 0.  Its even-time samples are
k + 1 zeros plus, for each part of degree d and each 0 < 2m <= d, two
samples at height 2m (one when 2m = d).  With W(x) the generating function
of tuples by total degree and

    P(x)   = sum_d (q-1) q^d x^d            (one part)
    C_h(x) = sum_d (q-1) q^d c_d(h) x^d     (one part, marked at height h)

the samples at height h > 0 are generated by W(x)^2 C_h(x) and those at
height 0 by W(x)^2 P(x) + W(x).  W = 1/(1 - P) has a simple pole at the
root x0 = 1/q^2 of P(x) = 1, so the partial sums up to total degree N are
dominated by the double pole of W^2 and the height-h share tends to
C_h(x0) / sum_h' C_h'(x0), with C_0 := P.

This script evaluates C_h(x0) exactly with sympy, cross-checks the limit
against exact enumeration counts extrapolated in N, and writes the
unnormalized weights as exact fractions.

Usage: derive_ray_target.py [OUTPUT_CSV]
"""

import sys
from fractions import Fraction

import sympy as sp

PRIMES = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31]
H_MAX = 40

d, x = sp.symbols("d x", integer=True, positive=True)


def weight(q, h):
    """C_h(1/q^2) as an exact rational."""
    x0 = sp.Rational(1, q * q)
    part = (q - 1) * sp.Integer(q) ** d * x0**d
    if h == 0:
        total = sp.summation(part, (d, 1, sp.oo))
    else:
        # two samples for d > h, one for d = h
        total = 2 * sp.summation(part, (d, h + 1, sp.oo)) + part.subs(d, h)
    total = sp.nsimplify(sp.simplify(total))
    assert total.is_Rational, total
    return Fraction(int(total.p), int(total.q))


def enumerate_counts(q, n_parts_sum):
    """Exact sample counts by height over all tuples with total degree <= N."""
    w = [0] + [(q - 1) * q**k for k in range(1, n_parts_sum + 1)]
    tuples = [1] + [0] * n_parts_sum
    for s in range(1, n_parts_sum + 1):
        tuples[s] = sum(w[k] * tuples[s - k] for k in range(1, s + 1))
    samples = [dict() for _ in range(n_parts_sum + 1)]
    samples[0] = {0: 1}
    for s in range(1, n_parts_sum + 1):
        acc = {}
        for k in range(1, s + 1):
            for hh, c in samples[s - k].items():
                acc[hh] = acc.get(hh, 0) + w[k] * c
            acc[0] = acc.get(0, 0) + w[k] * tuples[s - k]
            for hh in range(2, k + 1, 2):
                acc[hh] = acc.get(hh, 0) + w[k] * (2 if hh < k else 1) * tuples[s - k]
        samples[s] = acc
    totals = {}
    for s in range(1, n_parts_sum + 1):
        for hh, c in samples[s].items():
            totals[hh] = totals.get(hh, 0) + c
    return totals


def share(counts, h, window):
    den = sum(c for hh, c in counts.items() if hh <= window)
    return Fraction(counts.get(h, 0), den)


def cross_check(q):
    window = 8
    exact = {h: weight(q, h) for h in range(0, window + 1, 2)}
    norm = sum(exact.values())
    n1, n2 = 200, 400
    c1, c2 = enumerate_counts(q, n1), enumerate_counts(q, n2)
    for h in range(0, window + 1, 2):
        # first-order Richardson step: the share converges like 1/N
        r = 2 * share(c2, h, window) - share(c1, h, window)
        target = exact[h] / norm
        assert abs(float(r - target)) < 1e-4, (q, h, float(r), float(target))


def main():
    out = sys.argv[1] if len(sys.argv) > 1 else "crates/core/data/ray_target.csv"
    for q in (2, 3):
        cross_check(q)
    rows = ["q,h,numerator,denominator"]
    for q in PRIMES:
        for h in range(0, H_MAX + 1, 2):
            w = weight(q, h)
            rows.append(f"{q},{h},{w.numerator},{w.denominator}")
    with open(out, "w") as f:
        f.write("\n".join(rows) + "\n")


if __name__ == "__main__":
    main()
