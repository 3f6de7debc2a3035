"""Brute-force oracle for the u-weighted transition cost.

Independently computes

    inf  integral over (-1/2, 1/2) of (1 + clamp(w(1-w), 0, 1)) * |w'| dy

over piecewise-linear profiles w with w(-1/2) = 0, w(1/2) = 1 and at most
8 nodes. The companion oscillation field is omitted because its quadratic
penalty with a zero-mean constraint is minimized by the zero field.

Because the integrand is 1-homogeneous in w', the cost of a linear segment
depends only on its endpoint values, not on the node positions: a segment
from value a to value b costs |B(b) - B(a)| where B is the antiderivative of
1 + clamp(s(1-s), 0, 1). The brute force therefore enumerates node VALUE
sequences on a lattice:

  * every monotone sequence telescopes to B(1) - B(0) = 7/6 exactly,
  * non-monotone sequences re-cross levels and can only cost more.

Run:  python monotone_profile_oracle.py
"""

from fractions import Fraction
from itertools import combinations_with_replacement, product
import random


def clamp_weight_antiderivative(s: Fraction) -> Fraction:
    # B(s) = integral_0^s (1 + clamp(t(1-t), 0, 1)) dt, exact in rationals.
    # On [0, 1] the weight is 1 + t - t^2 (the upper clamp never binds,
    # max of t(1-t) is 1/4); outside [0, 1] the weight is 1.
    if s < 0:
        return s
    if s <= 1:
        return s + s * s / 2 - s * s * s / 3
    return Fraction(7, 6) + (s - 1)


def profile_cost(values) -> Fraction:
    total = Fraction(0)
    for a, b in zip(values, values[1:]):
        total += abs(clamp_weight_antiderivative(b) - clamp_weight_antiderivative(a))
    return total


def enumerate_monotone(levels, max_nodes=8):
    """All nondecreasing lattice value sequences 0 -> ... -> 1, <= max_nodes nodes."""
    lattice = [Fraction(i, levels) for i in range(levels + 1)]
    for n_nodes in range(2, max_nodes + 1):
        n_interior = n_nodes - 2
        for interior in combinations_with_replacement(lattice, n_interior):
            yield (Fraction(0),) + interior + (Fraction(1),)


def enumerate_nonmonotone_coarse(levels=6, max_interior=3):
    lattice = [Fraction(i, levels) for i in range(-levels // 3, levels + levels // 3 + 1)]
    for n_interior in range(1, max_interior + 1):
        for interior in product(lattice, repeat=n_interior):
            yield (Fraction(0),) + interior + (Fraction(1),)


def main():
    target = Fraction(7, 6)

    mono_costs = [profile_cost(v) for v in enumerate_monotone(levels=8, max_nodes=8)]
    mono_min, mono_max = min(mono_costs), max(mono_costs)
    print(f"monotone profiles checked: {len(mono_costs)}")
    print(f"  min cost = {mono_min} ({float(mono_min):.12f})")
    print(f"  max cost = {mono_max} ({float(mono_max):.12f})")
    assert mono_min == target and mono_max == target, "monotone profiles must all cost 7/6"

    nm_costs = [profile_cost(v) for v in enumerate_nonmonotone_coarse()]
    print(f"coarse non-monotone profiles checked: {len(nm_costs)}")
    print(f"  min cost = {min(nm_costs)} ({float(min(nm_costs)):.12f})")
    assert min(nm_costs) >= target, "non-monotone profiles must not beat 7/6"

    rng = random.Random(20260816)
    best_random = None
    for _ in range(200_000):
        n_interior = rng.randint(1, 6)
        interior = tuple(Fraction(rng.randint(-4, 12), 8) for _ in range(n_interior))
        c = profile_cost((Fraction(0),) + interior + (Fraction(1),))
        if best_random is None or c < best_random:
            best_random = c
    print(f"random profiles checked: 200000, best = {best_random} ({float(best_random):.12f})")
    assert best_random >= target

    print(f"ORACLE VALUE: 7/6 = {float(target):.12f}")


if __name__ == "__main__":
    main()
